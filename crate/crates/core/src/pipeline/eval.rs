use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::handmodel::{Pose3D, Sample};
use crate::losses::{metric_bone_direction_error, metric_mean_error, metric_pck, PckCurve};

use super::checkpoint::{Checkpoint, TrainState};
use super::model::Stage;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mean_error: f64,
    pub bone_direction_error: f64,
    pub pck: PckCurve,
}

impl EvalReport {
    /// Header plus one row: `mean_error_mm,auc,bone_direction_error`.
    pub fn summary_csv(&self) -> String {
        let mut s = String::from("mean_error_mm,auc,bone_direction_error\n");
        let _ = writeln!(s, "{},{},{}", self.mean_error, self.pck.auc, self.bone_direction_error);
        s
    }
}

/// Scores predictions against the samples' ground truth.
pub fn score(pred: &[Pose3D], data: &[Sample], thresholds: &[f64]) -> Result<EvalReport> {
    let gt: Vec<Pose3D> = data.iter().map(|s| s.gt_pose3d).collect();
    let graph = crate::graphnet::build_hand_graph();
    Ok(EvalReport {
        mean_error: metric_mean_error(pred, &gt)?,
        bone_direction_error: metric_bone_direction_error(pred, &gt, &graph)?,
        pck: metric_pck(pred, &gt, thresholds)?,
    })
}

/// Forward-only evaluation of a training state. Stage I states are scored
/// on the prior, later stages on the refined pose.
pub fn evaluate_state(st: &TrainState, data: &[Sample]) -> Result<EvalReport> {
    let pred = st.model.predict(data, st.stage != Stage::I)?;
    score(&pred, data, &st.config.pck_thresholds)
}

pub fn evaluate(ckpt: &Checkpoint, data: &[Sample]) -> Result<EvalReport> {
    evaluate_state(&TrainState::from_checkpoint(ckpt)?, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::handmodel::sample_synthetic;

    #[test]
    fn ground_truth_scores_perfectly() {
        let data = sample_synthetic(5, 6).unwrap();
        let gt: Vec<Pose3D> = data.iter().map(|s| s.gt_pose3d).collect();
        let r = score(&gt, &data, &crate::losses::default_thresholds()).unwrap();
        assert_eq!(r.mean_error, 0.0);
        assert_eq!(r.bone_direction_error, 0.0);
        assert!(r.pck.values.iter().all(|&v| v == 1.0));
        assert_eq!(r.pck.auc, 1.0);
    }
}
