//! Image encoders and the differentiable hand-model head.

use rand::Rng;

use super::kinematics::{raw_to_pose, raw_to_pose_with_jacobian, NUM_PARAMS};
use super::render::GRID_CELLS;
use super::skeleton::{SkeletonTemplate, NUM_JOINTS};
use crate::autodiff::kernels::map_indexed;
use crate::autodiff::{ParamStore, Session, Tape, Tensor, Var};
use crate::error::Result;
use crate::nn::{Linear, Mlp2};

pub const ENCODER_HIDDEN: usize = 128;
pub const LATENT_DIM: usize = 32;
pub const FEATURE_DIM: usize = 64;

/// Two-layer perceptron over a flattened rendering.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Encoder {
    pub mlp: Mlp2,
}

impl Encoder {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, out_dim: usize, rng: &mut R) -> Self {
        Self {
            mlp: Mlp2::new(store, name, [GRID_CELLS, ENCODER_HIDDEN, out_dim], rng),
        }
    }

    /// `[B, 1024] → [B, out_dim]`.
    pub fn encode(&self, s: &mut Session, images: Var) -> Result<Var> {
        self.mlp.forward(s, images)
    }

    pub fn out_dim(&self) -> usize {
        self.mlp.fc2.out_dim
    }
}

/// Records the hand model (decode, forward kinematics, camera) applied to
/// every row of `raw` (`[B, 33]`), giving `[B, 63]` camera-space joints.
pub fn hand_model_op(tape: &mut Tape, raw: Var, template: &SkeletonTemplate) -> Result<Var> {
    let t = tape.value(raw);
    let rows = t.rows();
    if !tape.requires_grad(raw) {
        let per_row = map_indexed(rows, |r| raw_to_pose(t.row(r), template));
        let value: Vec<f64> = per_row.iter().flatten().flatten().copied().collect();
        return tape.constant(Tensor::new(vec![rows, 3 * NUM_JOINTS], value)?);
    }
    let per_row = map_indexed(rows, |r| raw_to_pose_with_jacobian(t.row(r), template));
    let mut value = Vec::with_capacity(rows * 3 * NUM_JOINTS);
    let mut jac = Vec::with_capacity(rows * 3 * NUM_JOINTS * NUM_PARAMS);
    for (v, j) in per_row {
        value.extend(v);
        jac.extend(j);
    }
    let value = Tensor::new(vec![rows, 3 * NUM_JOINTS], value)?;
    tape.row_jacobian(raw, value, jac)
}

/// Latent encoder, parameter decoder and the kinematic hand.
#[derive(Debug, Clone, PartialEq)]
pub struct HandModelNet {
    pub encoder: Encoder,
    pub decoder: Linear,
    pub template: SkeletonTemplate,
}

impl HandModelNet {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R) -> Self {
        Self {
            encoder: Encoder::new(store, "hand.encoder", LATENT_DIM, rng),
            decoder: Linear::new(store, "hand.decoder", LATENT_DIM, NUM_PARAMS, rng),
            template: SkeletonTemplate::default(),
        }
    }

    /// Raw 33-entry decoder output, `[B, 33]`.
    pub fn raw_params(&self, s: &mut Session, images: Var) -> Result<Var> {
        let z = self.encoder.encode(s, images)?;
        self.decoder.forward(s, z)
    }

    /// Prior pose, `[B, 63]`.
    pub fn prior(&self, s: &mut Session, images: Var) -> Result<Var> {
        let raw = self.raw_params(s, images)?;
        hand_model_op(&mut s.tape, raw, &self.template)
    }
}
