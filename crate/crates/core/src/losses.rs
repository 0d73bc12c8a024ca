//! Training losses and evaluation metrics.
//!
//! Each loss exists twice: a plain function over [`Pose3D`] values used by
//! metrics and tests, and a batched tape form used for training. Batched
//! forms take poses as `[B, 63]` and return the batch mean of the per-sample
//! loss.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::autodiff::{NormGrad, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graphnet::SkeletonGraph;
use crate::handmodel::render::Pose2D;
use crate::handmodel::skeleton::{NUM_BONES, NUM_JOINTS};
use crate::handmodel::Pose3D;

/// Bones shorter than this have no direction.
pub const MIN_BONE_LENGTH: f64 = 1e-9;

/// Trade-off weights of the combined objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub proj: f64,
    pub len: f64,
    pub dir: f64,
    pub wass: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            proj: 0.1,
            len: 0.01,
            dir: 0.1,
            wass: 0.01,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("proj", self.proj), ("len", self.len), ("dir", self.dir), ("wass", self.wass)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Invalid(format!("loss weight {name} must be nonnegative, got {v}")));
            }
        }
        Ok(())
    }
}

fn dist3(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn norm3(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

/// Mean per-joint Euclidean distance, millimeters.
pub fn loss_pose(pred: &Pose3D, gt: &Pose3D) -> f64 {
    pred.0.iter().zip(&gt.0).map(|(p, g)| dist3(*p, *g)).sum::<f64>() / NUM_JOINTS as f64
}

/// Mean per-joint 2D distance.
pub fn loss_proj(pred: &Pose2D, gt: &Pose2D) -> f64 {
    pred.iter()
        .zip(gt)
        .map(|(p, g)| ((p[0] - g[0]).powi(2) + (p[1] - g[1]).powi(2)).sqrt())
        .sum::<f64>()
        / NUM_JOINTS as f64
}

/// Bone vectors `D_inc · P`, one row per bone in incidence order.
pub fn bone_vectors(pose: &Pose3D, graph: &SkeletonGraph) -> [[f64; 3]; NUM_BONES] {
    let mut out = [[0.0; 3]; NUM_BONES];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, p) in pose.0.iter().enumerate() {
            let w = graph.incidence.get2(i, j);
            if w != 0.0 {
                for k in 0..3 {
                    row[k] += w * p[k];
                }
            }
        }
    }
    out
}

/// `Σ | ‖b‖ − ‖b̂‖ |` over bones.
pub fn loss_len(pred: &Pose3D, gt: &Pose3D, graph: &SkeletonGraph) -> f64 {
    let (bp, bg) = (bone_vectors(pred, graph), bone_vectors(gt, graph));
    bp.iter().zip(&bg).map(|(p, g)| (norm3(*g) - norm3(*p)).abs()).sum()
}

/// `Σ ‖ b/‖b‖ − b̂/‖b̂‖ ‖` over bones. Zero-length bones are an error.
pub fn loss_dir(pred: &Pose3D, gt: &Pose3D, graph: &SkeletonGraph) -> Result<f64> {
    let terms = bone_direction_errors(pred, gt, graph)?;
    Ok(terms.iter().sum())
}

/// Per-bone chord length between unit directions, each in `[0, 2]`.
pub fn bone_direction_errors(pred: &Pose3D, gt: &Pose3D, graph: &SkeletonGraph) -> Result<[f64; NUM_BONES]> {
    let (bp, bg) = (bone_vectors(pred, graph), bone_vectors(gt, graph));
    let mut out = [0.0; NUM_BONES];
    for (i, (p, g)) in bp.iter().zip(&bg).enumerate() {
        let (np, ng) = (norm3(*p), norm3(*g));
        if np <= MIN_BONE_LENGTH || ng <= MIN_BONE_LENGTH {
            return Err(Error::Degenerate(format!("bone {i} has zero length")));
        }
        out[i] = dist3(p.map(|v| v / np), g.map(|v| v / ng));
    }
    Ok(out)
}

/// Combined objective for one sample; `fake_score` enters as `-score`.
pub fn total_loss(pred: &Pose3D, gt: &Pose3D, fake_score: f64, w: &LossWeights, graph: &SkeletonGraph) -> Result<f64> {
    w.validate()?;
    let proj = loss_proj(&crate::handmodel::project_2d(pred), &crate::handmodel::project_2d(gt));
    let dir = if w.dir == 0.0 { 0.0 } else { loss_dir(pred, gt, graph)? };
    Ok(loss_pose(pred, gt) + w.proj * proj + w.len * loss_len(pred, gt, graph) + w.dir * dir + w.wass * -fake_score)
}

/// Batched losses recorded on a tape.
pub mod batched {
    use super::*;

    fn rows3(tape: &mut Tape, pose: Var) -> Result<Var> {
        let b = tape.value(pose).rows();
        tape.reshape(pose, &[b * NUM_JOINTS, 3])
    }

    /// Mean joint distance over batch and joints.
    pub fn pose(tape: &mut Tape, pred: Var, gt: Var) -> Result<Var> {
        let d = tape.sub(pred, gt)?;
        let d = rows3(tape, d)?;
        let n = tape.l2norm_rows(d, NormGrad::ZeroBelow(0.0))?;
        tape.mean(n)
    }

    /// Mean 2D joint distance after orthographic projection; `gt2d` is
    /// `[B·21, 2]`.
    pub fn proj(tape: &mut Tape, pred: Var, gt2d: Var) -> Result<Var> {
        let p = rows3(tape, pred)?;
        let p2 = tape.select_cols(p, &[0, 1])?;
        let d = tape.sub(p2, gt2d)?;
        let n = tape.l2norm_rows(d, NormGrad::ZeroBelow(0.0))?;
        tape.mean(n)
    }

    /// `[B, 63]` poses to `[B·20, 3]` bone vectors.
    pub fn bone_vectors(tape: &mut Tape, pose: Var, graph: &SkeletonGraph) -> Result<Var> {
        let p = rows3(tape, pose)?;
        tape.block_map(p, graph.incidence_map())
    }

    /// Per-sample `Σ | ‖b‖ − ‖b̂‖ |`, averaged over the batch.
    /// `gt_lengths` is `[B·20, 1]`.
    pub fn len(tape: &mut Tape, pred: Var, gt_lengths: Var, graph: &SkeletonGraph) -> Result<Var> {
        let b = tape.value(pred).rows();
        let bones = bone_vectors(tape, pred, graph)?;
        let n = tape.l2norm_rows(bones, NormGrad::ZeroBelow(MIN_BONE_LENGTH))?;
        let d = tape.sub(n, gt_lengths)?;
        let a = tape.abs(d)?;
        let s = tape.sum(a)?;
        tape.scale(s, 1.0 / b as f64)
    }

    /// Per-sample `Σ ‖ b/‖b‖ − b̂/‖b̂‖ ‖`, averaged over the batch.
    /// `gt_units` is `[B·20, 3]`.
    pub fn dir(tape: &mut Tape, pred: Var, gt_units: Var, graph: &SkeletonGraph) -> Result<Var> {
        let b = tape.value(pred).rows();
        let bones = bone_vectors(tape, pred, graph)?;
        let u = tape.normalize_rows(bones, MIN_BONE_LENGTH)?;
        let d = tape.sub(u, gt_units)?;
        let n = tape.l2norm_rows(d, NormGrad::ZeroBelow(0.0))?;
        let s = tape.sum(n)?;
        tape.scale(s, 1.0 / b as f64)
    }

    /// Constant ground-truth tensors for a batch of poses.
    pub struct Targets {
        pub pose: Tensor,
        pub pose2d: Tensor,
        pub bone_lengths: Tensor,
        pub bone_units: Tensor,
    }

    impl Targets {
        pub fn new(gt: &[&Pose3D], graph: &SkeletonGraph) -> Result<Self> {
            let b = gt.len();
            if b == 0 {
                return Err(Error::EmptyBatch);
            }
            let mut pose = Vec::with_capacity(b * 3 * NUM_JOINTS);
            let mut pose2d = Vec::with_capacity(b * 2 * NUM_JOINTS);
            let mut lens = Vec::with_capacity(b * NUM_BONES);
            let mut units = Vec::with_capacity(b * 3 * NUM_BONES);
            for g in gt {
                pose.extend(g.flat());
                pose2d.extend(g.0.iter().flat_map(|p| [p[0], p[1]]));
                for v in super::bone_vectors(g, graph) {
                    let n = norm3(v);
                    lens.push(n);
                    if n > MIN_BONE_LENGTH {
                        units.extend(v.map(|x| x / n));
                    } else {
                        units.extend([0.0; 3]);
                    }
                }
            }
            Ok(Self {
                pose: Tensor::new(vec![b, 3 * NUM_JOINTS], pose)?,
                pose2d: Tensor::new(vec![b * NUM_JOINTS, 2], pose2d)?,
                bone_lengths: Tensor::new(vec![b * NUM_BONES, 1], lens)?,
                bone_units: Tensor::new(vec![b * NUM_BONES, 3], units)?,
            })
        }
    }

    /// Supervised part of the objective (everything but the Wasserstein
    /// term). Terms with zero weight are not recorded.
    pub fn supervised(
        tape: &mut Tape,
        pred: Var,
        targets: &Targets,
        w: &LossWeights,
        graph: &SkeletonGraph,
    ) -> Result<Var> {
        let gt = tape.constant(targets.pose.clone())?;
        let mut total = pose(tape, pred, gt)?;
        if w.proj != 0.0 {
            let gt2 = tape.constant(targets.pose2d.clone())?;
            let l = proj(tape, pred, gt2)?;
            let l = tape.scale(l, w.proj)?;
            total = tape.add(total, l)?;
        }
        if w.len != 0.0 {
            let gl = tape.constant(targets.bone_lengths.clone())?;
            let l = len(tape, pred, gl, graph)?;
            let l = tape.scale(l, w.len)?;
            total = tape.add(total, l)?;
        }
        if w.dir != 0.0 {
            let gu = tape.constant(targets.bone_units.clone())?;
            let l = dir(tape, pred, gu, graph)?;
            let l = tape.scale(l, w.dir)?;
            total = tape.add(total, l)?;
        }
        Ok(total)
    }
}

/// Mean over samples of [`loss_pose`].
pub fn metric_mean_error(pred: &[Pose3D], gt: &[Pose3D]) -> Result<f64> {
    if pred.is_empty() || pred.len() != gt.len() {
        return Err(if pred.is_empty() {
            Error::EmptyBatch
        } else {
            Error::Shape(format!("{} predictions for {} targets", pred.len(), gt.len()))
        });
    }
    Ok(pred.iter().zip(gt).map(|(p, g)| loss_pose(p, g)).sum::<f64>() / pred.len() as f64)
}

/// Mean over samples and bones of the unit-direction chord length.
pub fn metric_bone_direction_error(pred: &[Pose3D], gt: &[Pose3D], graph: &SkeletonGraph) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut total = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        total += bone_direction_errors(p, g, graph)?.iter().sum::<f64>();
    }
    Ok(total / (pred.len() * NUM_BONES) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PckCurve {
    pub thresholds: Vec<f64>,
    pub values: Vec<f64>,
    pub auc: f64,
}

impl PckCurve {
    /// `threshold_mm,pck` rows with a header.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("threshold_mm,pck\n");
        for (t, v) in self.thresholds.iter().zip(&self.values) {
            let _ = writeln!(s, "{t},{v}");
        }
        s
    }
}

/// 20 to 50 mm in 16 evenly spaced steps.
pub fn default_thresholds() -> Vec<f64> {
    (0..16).map(|i| 20.0 + 2.0 * i as f64).collect()
}

/// Fraction of `(sample, joint)` pairs with error strictly below each
/// threshold; AUC is the trapezoid area divided by the threshold span.
pub fn metric_pck(pred: &[Pose3D], gt: &[Pose3D], thresholds: &[f64]) -> Result<PckCurve> {
    if pred.is_empty() || thresholds.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!("{} predictions for {} targets", pred.len(), gt.len())));
    }
    if thresholds.windows(2).any(|w| w[1] <= w[0]) || thresholds[0] <= 0.0 {
        return Err(Error::Invalid("thresholds must be positive and ascending".into()));
    }
    let mut errors: Vec<f64> = pred
        .iter()
        .zip(gt)
        .flat_map(|(p, g)| p.0.iter().zip(&g.0).map(|(a, b)| dist3(*a, *b)))
        .collect();
    errors.sort_by(f64::total_cmp);
    let n = errors.len() as f64;
    let values: Vec<f64> = thresholds
        .iter()
        .map(|&t| errors.partition_point(|&e| e < t) as f64 / n)
        .collect();
    let span = thresholds[thresholds.len() - 1] - thresholds[0];
    let auc = if span > 0.0 {
        thresholds
            .windows(2)
            .zip(values.windows(2))
            .map(|(t, v)| (t[1] - t[0]) * (v[0] + v[1]) / 2.0)
            .sum::<f64>()
            / span
    } else {
        values[0]
    };
    Ok(PckCurve {
        thresholds: thresholds.to_vec(),
        values,
        auc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphnet::build_hand_graph;
    use crate::handmodel::skeleton::bones;
    use crate::handmodel::SkeletonTemplate;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rest() -> Pose3D {
        Pose3D(SkeletonTemplate::default().rest_pose())
    }

    fn jitter(p: &Pose3D, rng: &mut ChaCha8Rng, s: f64) -> Pose3D {
        Pose3D(p.0.map(|j| j.map(|v| v + rng.gen_range(-s..s))))
    }

    #[test]
    fn pose_loss_examples() {
        let p = rest();
        assert_eq!(loss_pose(&p, &p), 0.0);
        let q = p.translated([3.0, 4.0, 0.0]);
        assert!((loss_pose(&q, &p) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn pose_loss_matches_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let a = jitter(&rest(), &mut rng, 20.0);
            let b = jitter(&rest(), &mut rng, 20.0);
            let mut acc = 0.0;
            for j in 0..NUM_JOINTS {
                let mut s = 0.0;
                for k in 0..3 {
                    s += (a.0[j][k] - b.0[j][k]) * (a.0[j][k] - b.0[j][k]);
                }
                acc += s.sqrt();
            }
            assert_eq!(loss_pose(&a, &b), acc / NUM_JOINTS as f64);
        }
    }

    #[test]
    fn proj_loss_examples() {
        let p = crate::handmodel::project_2d(&rest());
        assert_eq!(loss_proj(&p, &p), 0.0);
        let q = p.map(|j| [j[0] + 0.6, j[1] + 0.8]);
        assert!((loss_proj(&q, &p) - 1.0).abs() < 1e-12);
        let z = rest().translated([0.0, 0.0, 37.0]);
        assert_eq!(loss_proj(&crate::handmodel::project_2d(&z), &p), 0.0);
    }

    #[test]
    fn bone_vectors_match_loop_and_ignore_translation() {
        let g = build_hand_graph();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = jitter(&rest(), &mut rng, 10.0);
        let b = bone_vectors(&p, &g);
        for (i, (c, par)) in bones().iter().enumerate() {
            for k in 0..3 {
                assert_eq!(b[i][k], p.0[*c][k] - p.0[*par][k]);
            }
        }
        let t = p.translated([100.0, -3.5, 7.25]);
        let bt = bone_vectors(&t, &g);
        for (x, y) in b.iter().zip(&bt) {
            for k in 0..3 {
                assert!((x[k] - y[k]).abs() < 1e-12);
            }
        }
        let mut deg = p;
        deg.0[2] = deg.0[1];
        assert_eq!(bone_vectors(&deg, &g)[1], [0.0; 3]);
    }

    #[test]
    fn len_loss_examples() {
        let g = build_hand_graph();
        let p = rest();
        assert_eq!(loss_len(&p, &p, &g), 0.0);
        // Unit-length bones vs doubled ones.
        let mut unit = Pose3D([[0.0; 3]; NUM_JOINTS]);
        for (c, par) in bones() {
            unit.0[c] = [unit.0[par][0] + 1.0, unit.0[par][1], unit.0[par][2]];
        }
        let doubled = Pose3D(unit.0.map(|j| j.map(|v| 2.0 * v)));
        assert!((loss_len(&doubled, &unit, &g) - 20.0).abs() < 1e-12);
    }

    #[test]
    fn dir_loss_examples() {
        let g = build_hand_graph();
        let p = rest();
        assert_eq!(loss_dir(&p, &p, &g).unwrap(), 0.0);
        // Every bone along +x, then turn the last bone of the little finger to +y.
        let mut gt = Pose3D([[0.0; 3]; NUM_JOINTS]);
        for (c, par) in bones() {
            gt.0[c] = [gt.0[par][0] + 1.0, gt.0[par][1], gt.0[par][2]];
        }
        let mut pred = gt;
        pred.0[20] = [pred.0[19][0], pred.0[19][1] + 1.0, pred.0[19][2]];
        let l = loss_dir(&pred, &gt, &g).unwrap();
        assert!((l - 2f64.sqrt()).abs() <= 1e-12);

        let mut z = gt;
        z.0[5] = z.0[0];
        assert!(loss_dir(&z, &gt, &g).is_err());
    }

    #[test]
    fn default_weights_are_the_published_values() {
        let w = LossWeights::default();
        assert_eq!((w.proj, w.len, w.dir, w.wass), (0.1, 0.01, 0.1, 0.01));
        let g = build_hand_graph();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let gt = jitter(&rest(), &mut rng, 5.0);
        let pred = jitter(&rest(), &mut rng, 5.0);
        let proj = loss_proj(&crate::handmodel::project_2d(&pred), &crate::handmodel::project_2d(&gt));
        let hand = loss_pose(&pred, &gt)
            + 0.1 * proj
            + 0.01 * loss_len(&pred, &gt, &g)
            + 0.1 * loss_dir(&pred, &gt, &g).unwrap()
            + 0.01 * -0.4;
        assert_eq!(total_loss(&pred, &gt, 0.4, &w, &g).unwrap(), hand);
    }

    #[test]
    fn total_loss_reductions() {
        let g = build_hand_graph();
        let p = rest();
        assert_eq!(total_loss(&p, &p, 0.0, &LossWeights::default(), &g).unwrap(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = jitter(&p, &mut rng, 5.0);
        let only_len = LossWeights {
            proj: 0.0,
            len: 1.0,
            dir: 0.0,
            wass: 0.0,
        };
        let t = total_loss(&q, &p, 0.7, &only_len, &g).unwrap();
        assert_eq!(t, loss_pose(&q, &p) + loss_len(&q, &p, &g));
        let neg = LossWeights {
            len: -1.0,
            ..LossWeights::default()
        };
        assert!(total_loss(&q, &p, 0.0, &neg, &g).is_err());
    }

    #[test]
    fn pck_examples() {
        // Joint errors 5, 15, 25 repeated: threshold 20 admits two thirds.
        let gt = Pose3D([[0.0; 3]; NUM_JOINTS]);
        let mut pred = gt;
        for j in 0..NUM_JOINTS {
            pred.0[j][0] = [5.0, 15.0, 25.0][j % 3];
        }
        let c = metric_pck(&[pred], &[gt], &[20.0]).unwrap();
        assert!((c.values[0] - 2.0 / 3.0).abs() < 1e-15);
        let c = metric_pck(&[pred], &[gt], &[10.0, 30.0]).unwrap();
        assert_eq!(c.values[1], 1.0);
        assert!(metric_pck(&[], &[], &[1.0]).is_err());
        assert!(metric_pck(&[pred], &[gt], &[3.0, 2.0]).is_err());
    }

    #[test]
    fn mean_error_examples() {
        let gt = rest();
        assert_eq!(metric_mean_error(&[gt, gt], &[gt, gt]).unwrap(), 0.0);
        let a = gt.translated([4.0, 0.0, 0.0]);
        let b = gt.translated([0.0, 6.0, 0.0]);
        assert!((metric_mean_error(&[a, b], &[gt, gt]).unwrap() - 5.0).abs() < 1e-12);
        assert!(matches!(metric_mean_error(&[], &[]), Err(Error::EmptyBatch)));
    }
}
