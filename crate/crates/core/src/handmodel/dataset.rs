//! Synthetic samples and their JSON Lines file format.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::kinematics::{HandParams, Pose3D, DIP_FLEX, MCP_ABD, MCP_FLEX, NUM_BETA, NUM_THETA, PIP_FLEX};
use super::render::{project_2d, render, Pose2D, Rendering};
use super::skeleton::{SkeletonTemplate, JOINTS_PER_FINGER, NUM_JOINTS};
use crate::autodiff::kernels::map_indexed;
use crate::error::{Error, Result};
use crate::rng::{indexed, Stream};

pub const FLEX_RANGE: (f64, f64) = (-0.5, 1.8);
pub const ABD_RANGE: (f64, f64) = (-0.35, 0.35);
pub const BETA_RANGE: (f64, f64) = (0.7, 1.3);
pub const CAM_ANGLE_MAX: f64 = std::f64::consts::FRAC_PI_2;
pub const CAM_TRANS_MAX: f64 = 20.0;
pub const CAM_SCALE_RANGE: (f64, f64) = (0.8, 1.2);

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub rendering: Rendering,
    pub gt_pose3d: Pose3D,
    pub gt_pose2d: Pose2D,
    pub gt_params: HandParams,
}

impl Sample {
    pub fn from_params(params: HandParams, template: &SkeletonTemplate) -> Result<Self> {
        let gt_pose3d = params.pose(template)?;
        let gt_pose2d = project_2d(&gt_pose3d);
        Ok(Self {
            rendering: render(&gt_pose2d),
            gt_pose3d,
            gt_pose2d,
            gt_params: params,
        })
    }
}

/// Draws hand parameters uniformly from the sampling ranges.
pub fn sample_params<R: Rng>(rng: &mut R) -> HandParams {
    let mut theta = [0.0; NUM_THETA];
    for finger in theta.chunks_mut(JOINTS_PER_FINGER) {
        for (k, a) in finger.iter_mut().enumerate() {
            let (lo, hi) = match k {
                MCP_ABD => ABD_RANGE,
                MCP_FLEX | PIP_FLEX | DIP_FLEX => FLEX_RANGE,
                _ => unreachable!(),
            };
            *a = rng.gen_range(lo..=hi);
        }
    }
    let mut beta = [0.0; NUM_BETA];
    for b in &mut beta {
        *b = rng.gen_range(BETA_RANGE.0..=BETA_RANGE.1);
    }
    // Uniform axis on the sphere by rejection from the cube.
    let axis = loop {
        let v: [f64; 3] = [0, 1, 2].map(|_| rng.gen_range(-1.0..=1.0));
        let n2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
        if n2 > 1e-6 && n2 <= 1.0 {
            let n = n2.sqrt();
            break v.map(|a| a / n);
        }
    };
    let angle = rng.gen_range(0.0..=CAM_ANGLE_MAX);
    HandParams {
        theta,
        beta,
        cam_rot: axis.map(|a| a * angle),
        cam_trans: [0, 1, 2].map(|_| rng.gen_range(-CAM_TRANS_MAX..=CAM_TRANS_MAX)),
        cam_scale: rng.gen_range(CAM_SCALE_RANGE.0..=CAM_SCALE_RANGE.1),
    }
}

/// `n` samples on the given stream; sample `i` depends only on
/// `(seed, stream, i)`.
pub fn sample_stream(seed: u64, stream: Stream, n: usize) -> Result<Vec<Sample>> {
    if n == 0 {
        return Err(Error::Invalid("sample count must be at least 1".into()));
    }
    let template = SkeletonTemplate::default();
    map_indexed(n, |i| {
        let mut rng = indexed(seed, stream, i as u64);
        Sample::from_params(sample_params(&mut rng), &template)
    })
    .into_iter()
    .collect()
}

/// Training-stream samples for `seed`.
pub fn sample_synthetic(seed: u64, n: usize) -> Result<Vec<Sample>> {
    sample_stream(seed, Stream::TrainData, n)
}

#[derive(Serialize, Deserialize)]
struct Record {
    rendering: Vec<f64>,
    pose3d: Vec<f64>,
    pose2d: Vec<f64>,
    params: Vec<f64>,
}

impl From<&Sample> for Record {
    fn from(s: &Sample) -> Self {
        Record {
            rendering: s.rendering.cells().to_vec(),
            pose3d: s.gt_pose3d.flat(),
            pose2d: s.gt_pose2d.iter().flatten().copied().collect(),
            params: s.gt_params.to_vec(),
        }
    }
}

impl TryFrom<Record> for Sample {
    type Error = Error;

    fn try_from(r: Record) -> Result<Self> {
        if r.pose2d.len() != 2 * NUM_JOINTS {
            return Err(Error::Shape(format!("pose2d needs {} values", 2 * NUM_JOINTS)));
        }
        let mut pose2d = [[0.0; 2]; NUM_JOINTS];
        for (j, p) in pose2d.iter_mut().enumerate() {
            p.copy_from_slice(&r.pose2d[2 * j..2 * j + 2]);
        }
        Ok(Sample {
            rendering: Rendering::new(r.rendering)?,
            gt_pose3d: Pose3D::from_flat(&r.pose3d)?,
            gt_pose2d: pose2d,
            gt_params: HandParams::from_slice(&r.params)?,
        })
    }
}

pub fn write_jsonl<W: Write>(samples: &[Sample], mut w: W) -> Result<()> {
    for s in samples {
        let line = serde_json::to_string(&Record::from(s))?;
        writeln!(w, "{line}").map_err(|e| Error::io("<dataset>", e))?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line.map_err(|e| Error::io("<dataset>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line)?;
        out.push(Sample::try_from(rec)?);
    }
    Ok(out)
}

pub fn save_dataset(samples: &[Sample], path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    write_jsonl(samples, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: &Path) -> Result<Vec<Sample>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_jsonl(BufReader::new(f))
}
