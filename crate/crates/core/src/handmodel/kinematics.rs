//! Forward kinematics, the camera transform and their Jacobians.
//!
//! The geometry is written once over a [`Real`] scalar. Evaluating it with
//! [`Dual`] numbers yields exact directional derivatives, which is how the
//! hand-model tape op gets its per-sample Jacobian.

use std::ops::{Add, Div, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use super::skeleton::{joint, SkeletonTemplate, JOINTS_PER_FINGER, NUM_FINGERS, NUM_JOINTS};
use crate::error::{Error, Result};

pub const NUM_THETA: usize = NUM_FINGERS * JOINTS_PER_FINGER;
pub const NUM_BETA: usize = 1 + NUM_FINGERS;
/// θ(20) + β(6) + c_r(3) + c_t(3) + c_s(1).
pub const NUM_PARAMS: usize = NUM_THETA + NUM_BETA + 7;

/// Offsets of each group within the 33-entry parameter vector.
pub const THETA_AT: usize = 0;
pub const BETA_AT: usize = NUM_THETA;
pub const ROT_AT: usize = BETA_AT + NUM_BETA;
pub const TRANS_AT: usize = ROT_AT + 3;
pub const SCALE_AT: usize = TRANS_AT + 3;

/// Per-finger angle slots within θ.
pub const MCP_FLEX: usize = 0;
pub const MCP_ABD: usize = 1;
pub const PIP_FLEX: usize = 2;
pub const DIP_FLEX: usize = 3;

/// Scalar abstraction for the kinematic formulas.
pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn cst(v: f64) -> Self;
    fn val(self) -> f64;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn sqrt(self) -> Self;
    fn tanh(self) -> Self;
    fn exp(self) -> Self;
}

impl Real for f64 {
    fn cst(v: f64) -> Self {
        v
    }
    fn val(self) -> f64 {
        self
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
}

/// Forward-mode dual number `v + d·ε`, `ε² = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub v: f64,
    pub d: f64,
}

impl Dual {
    pub fn seed(v: f64) -> Self {
        Self { v, d: 1.0 }
    }
}

impl Add for Dual {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            v: self.v + o.v,
            d: self.d + o.d,
        }
    }
}

impl Sub for Dual {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self {
            v: self.v - o.v,
            d: self.d - o.d,
        }
    }
}

impl Mul for Dual {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self {
            v: self.v * o.v,
            d: self.d * o.v + self.v * o.d,
        }
    }
}

impl Div for Dual {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        Self {
            v: self.v / o.v,
            d: (self.d * o.v - self.v * o.d) / (o.v * o.v),
        }
    }
}

impl Neg for Dual {
    type Output = Self;
    fn neg(self) -> Self {
        Self {
            v: -self.v,
            d: -self.d,
        }
    }
}

impl Real for Dual {
    fn cst(v: f64) -> Self {
        Self { v, d: 0.0 }
    }
    fn val(self) -> f64 {
        self.v
    }
    fn sin(self) -> Self {
        Self {
            v: self.v.sin(),
            d: self.d * self.v.cos(),
        }
    }
    fn cos(self) -> Self {
        Self {
            v: self.v.cos(),
            d: -self.d * self.v.sin(),
        }
    }
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        Self {
            v: s,
            d: self.d / (2.0 * s),
        }
    }
    fn tanh(self) -> Self {
        let t = self.v.tanh();
        Self {
            v: t,
            d: self.d * (1.0 - t * t),
        }
    }
    fn exp(self) -> Self {
        let e = self.v.exp();
        Self { v: e, d: self.d * e }
    }
}

pub type Vec3<S> = [S; 3];
pub type Mat3<S> = [[S; 3]; 3];

fn mat_mul<S: Real>(a: &Mat3<S>, b: &Mat3<S>) -> Mat3<S> {
    let mut out = [[S::cst(0.0); 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, o) in row.iter_mut().enumerate() {
            *o = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

fn mat_vec<S: Real>(a: &Mat3<S>, v: &Vec3<S>) -> Vec3<S> {
    [0, 1, 2].map(|i| a[i][0] * v[0] + a[i][1] * v[1] + a[i][2] * v[2])
}

fn rot_x<S: Real>(t: S) -> Mat3<S> {
    let (c, s) = (t.cos(), t.sin());
    let (o, l) = (S::cst(0.0), S::cst(1.0));
    [[l, o, o], [o, c, -s], [o, s, c]]
}

fn rot_z<S: Real>(t: S) -> Mat3<S> {
    let (c, s) = (t.cos(), t.sin());
    let (o, l) = (S::cst(0.0), S::cst(1.0));
    [[c, -s, o], [s, c, o], [o, o, l]]
}

/// Axis-angle to rotation matrix, `R = I + a·K + b·K²` with `K = [c]×`.
///
/// Below an angle of 1e-8 the coefficients come from their Taylor series
/// in `|c|²`, which keeps derivatives at the origin well defined.
pub fn rodrigues<S: Real>(c: &Vec3<S>) -> Mat3<S> {
    let t = c[0] * c[0] + c[1] * c[1] + c[2] * c[2];
    let (a, b) = if t.val() < 1e-16 {
        (S::cst(1.0) - t / S::cst(6.0), S::cst(0.5) - t / S::cst(24.0))
    } else {
        let th = t.sqrt();
        (th.sin() / th, (S::cst(1.0) - th.cos()) / t)
    };
    let o = S::cst(0.0);
    let k = [[o, -c[2], c[1]], [c[2], o, -c[0]], [-c[1], c[0], o]];
    let k2 = mat_mul(&k, &k);
    let mut r = [[o; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let id = if i == j { S::cst(1.0) } else { o };
            r[i][j] = id + a * k[i][j] + b * k2[i][j];
        }
    }
    r
}

/// Joint positions for pose angles `theta` and shape scales `beta`, wrist at
/// the origin.
pub fn forward_kinematics<S: Real>(
    theta: &[S],
    beta: &[S],
    template: &SkeletonTemplate,
) -> [Vec3<S>; NUM_JOINTS] {
    assert_eq!(theta.len(), NUM_THETA);
    assert_eq!(beta.len(), NUM_BETA);
    let zero = S::cst(0.0);
    let mut out = [[zero; 3]; NUM_JOINTS];
    for (f, ft) in template.fingers.iter().enumerate() {
        let s = beta[0] * beta[1 + f];
        let a = &theta[f * JOINTS_PER_FINGER..(f + 1) * JOINTS_PER_FINGER];
        let dir = ft.direction().map(S::cst);
        let root = dir.map(|d| d * S::cst(ft.root_distance) * s);
        out[joint(f, 0)] = root;

        // Finger frame: rotate the +y axis onto the fan direction.
        let base = rot_z(S::cst(-ft.fan_angle));
        let mut r = mat_mul(&mat_mul(&base, &rot_z(a[MCP_ABD])), &rot_x(a[MCP_FLEX]));
        let mut p = root;
        for k in 0..3 {
            if k > 0 {
                let flex = if k == 1 { a[PIP_FLEX] } else { a[DIP_FLEX] };
                r = mat_mul(&r, &rot_x(flex));
            }
            let local = [zero, S::cst(ft.phalanges[k]) * s, zero];
            let step = mat_vec(&r, &local);
            p = [p[0] + step[0], p[1] + step[1], p[2] + step[2]];
            out[joint(f, k + 1)] = p;
        }
    }
    out
}

/// `c_s · R(c_r) · p + c_t` for every joint.
pub fn apply_camera_generic<S: Real>(
    pose: &[Vec3<S>; NUM_JOINTS],
    rot: &Vec3<S>,
    trans: &Vec3<S>,
    scale: S,
) -> [Vec3<S>; NUM_JOINTS] {
    let r = rodrigues(rot);
    pose.map(|p| {
        let q = mat_vec(&r, &p);
        [0, 1, 2].map(|i| scale * q[i] + trans[i])
    })
}

/// Decoded hand-model latent: pose angles, shape scales and camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandParams {
    pub theta: [f64; NUM_THETA],
    pub beta: [f64; NUM_BETA],
    pub cam_rot: [f64; 3],
    pub cam_trans: [f64; 3],
    pub cam_scale: f64,
}

impl HandParams {
    /// Rest pose seen through the identity camera.
    pub fn identity() -> Self {
        Self {
            theta: [0.0; NUM_THETA],
            beta: [1.0; NUM_BETA],
            cam_rot: [0.0; 3],
            cam_trans: [0.0; 3],
            cam_scale: 1.0,
        }
    }

    /// The 33 values in decode order.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(NUM_PARAMS);
        v.extend_from_slice(&self.theta);
        v.extend_from_slice(&self.beta);
        v.extend_from_slice(&self.cam_rot);
        v.extend_from_slice(&self.cam_trans);
        v.push(self.cam_scale);
        v
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != NUM_PARAMS {
            return Err(Error::Shape(format!("hand params need {NUM_PARAMS} values, got {}", v.len())));
        }
        let take3 = |at: usize| [v[at], v[at + 1], v[at + 2]];
        Ok(Self {
            theta: v[THETA_AT..BETA_AT].try_into().expect("len"),
            beta: v[BETA_AT..ROT_AT].try_into().expect("len"),
            cam_rot: take3(ROT_AT),
            cam_trans: take3(TRANS_AT),
            cam_scale: v[SCALE_AT],
        })
    }

    /// Camera-space joints, `c_s · R(FK(θ, β), c_r) + c_t`.
    pub fn pose(&self, template: &SkeletonTemplate) -> Result<Pose3D> {
        let canonical = forward_kinematics(&self.theta, &self.beta, template);
        apply_camera(&Pose3D(canonical), self.cam_rot, self.cam_trans, self.cam_scale)
    }
}

/// 21 joints in millimeters, ordered as in [`super::skeleton`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose3D(pub [[f64; 3]; NUM_JOINTS]);

impl Pose3D {
    pub fn flat(&self) -> Vec<f64> {
        self.0.iter().flatten().copied().collect()
    }

    pub fn from_flat(v: &[f64]) -> Result<Self> {
        if v.len() != 3 * NUM_JOINTS {
            return Err(Error::Shape(format!("pose needs {} values, got {}", 3 * NUM_JOINTS, v.len())));
        }
        let mut out = [[0.0; 3]; NUM_JOINTS];
        for (j, p) in out.iter_mut().enumerate() {
            p.copy_from_slice(&v[3 * j..3 * j + 3]);
        }
        Ok(Self(out))
    }

    pub fn translated(&self, t: [f64; 3]) -> Self {
        Self(self.0.map(|p| [p[0] + t[0], p[1] + t[1], p[2] + t[2]]))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }
}

/// Camera transform of a whole pose. Rejects `c_s <= 0`.
pub fn apply_camera(pose: &Pose3D, rot: [f64; 3], trans: [f64; 3], scale: f64) -> Result<Pose3D> {
    if scale <= 0.0 || !scale.is_finite() {
        return Err(Error::Invalid(format!("camera scale must be positive, got {scale}")));
    }
    Ok(Pose3D(apply_camera_generic(&pose.0, &rot, &trans, scale)))
}

/// Maps 33 raw network outputs to hand parameters:
/// `β = 1 + 0.3·tanh(raw)`, `c_s = exp(raw)`, the rest unchanged.
pub fn decode_raw<S: Real>(raw: &[S]) -> [S; NUM_PARAMS] {
    assert_eq!(raw.len(), NUM_PARAMS);
    let mut out = [S::cst(0.0); NUM_PARAMS];
    out.copy_from_slice(raw);
    for b in &mut out[BETA_AT..ROT_AT] {
        *b = S::cst(1.0) + S::cst(0.3) * b.tanh();
    }
    out[SCALE_AT] = out[SCALE_AT].exp();
    out
}

pub fn decode_params(raw: &[f64]) -> Result<HandParams> {
    if raw.len() != NUM_PARAMS {
        return Err(Error::Shape(format!("raw latent needs {NUM_PARAMS} values, got {}", raw.len())));
    }
    HandParams::from_slice(&decode_raw(raw))
}

/// Full hand model on raw outputs: decode, forward kinematics, camera.
pub fn raw_to_pose<S: Real>(raw: &[S], template: &SkeletonTemplate) -> [Vec3<S>; NUM_JOINTS] {
    let p = decode_raw(raw);
    let canonical = forward_kinematics(&p[THETA_AT..BETA_AT], &p[BETA_AT..ROT_AT], template);
    let rot = [p[ROT_AT], p[ROT_AT + 1], p[ROT_AT + 2]];
    let trans = [p[TRANS_AT], p[TRANS_AT + 1], p[TRANS_AT + 2]];
    apply_camera_generic(&canonical, &rot, &trans, p[SCALE_AT])
}

/// Pose (63 values) and its Jacobian w.r.t. the raw outputs, row-major
/// `[63][33]`, by one dual-number sweep per input.
pub fn raw_to_pose_with_jacobian(raw: &[f64], template: &SkeletonTemplate) -> (Vec<f64>, Vec<f64>) {
    let value: Vec<f64> = raw_to_pose(raw, template).iter().flatten().copied().collect();
    let out_dim = value.len();
    let mut jac = vec![0.0; out_dim * NUM_PARAMS];
    let mut dual: Vec<Dual> = raw.iter().map(|&v| Dual::cst(v)).collect();
    for i in 0..NUM_PARAMS {
        dual[i].d = 1.0;
        let pose = raw_to_pose(&dual, template);
        for (o, d) in pose.iter().flatten().enumerate() {
            jac[o * NUM_PARAMS + i] = d.d;
        }
        dual[i].d = 0.0;
    }
    (value, jac)
}
