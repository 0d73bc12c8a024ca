//! Multi-source Wasserstein critic.
//!
//! Three branches score a `(rendering, pose)` pair: a perceptron over the
//! image, a two-layer graph network over the joints, and one dense layer
//! over the bone matrix. Their features are concatenated and passed through
//! a small decision head. Every weight matrix is spectrally normalized.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{measure_sigma_max, ParamId, ParamStore, Session, SpectralNormState, Tensor, Var};
use crate::error::{Error, Result};
use crate::graphnet::{GcnLayer, SkeletonGraph};
use crate::handmodel::render::GRID_CELLS;
use crate::handmodel::skeleton::{NUM_BONES, NUM_JOINTS};
use crate::handmodel::Pose3D;
use crate::losses::{bone_vectors, batched};
use crate::nn::Linear;

/// Bone coordinates are divided by this before entering the bone branch.
pub const BONE_INPUT_SCALE: f64 = 100.0;

/// `20×3` bone vectors, incidence row order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoneMatrix(pub [[f64; 3]; NUM_BONES]);

/// KCS layer: `D_inc · P`.
pub fn kcs_bone_matrix(pose: &Pose3D, graph: &SkeletonGraph) -> BoneMatrix {
    BoneMatrix(bone_vectors(pose, graph))
}

/// Which inputs the critic sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CriticSources {
    /// Image, pose and bones.
    Multi,
    /// Pose only.
    Single,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CriticDims {
    pub image_hidden: usize,
    pub image_out: usize,
    pub pose_hidden: usize,
    pub bone_out: usize,
    pub head_hidden: usize,
    /// Feed `B·Bᵀ` instead of the raw bone matrix.
    pub gram: bool,
}

impl Default for CriticDims {
    fn default() -> Self {
        Self {
            image_hidden: 128,
            image_out: 64,
            pose_hidden: 32,
            bone_out: 32,
            head_hidden: 64,
            gram: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiSourceCritic {
    pub sources: CriticSources,
    pub dims: CriticDims,
    pub image: Option<(Linear, Linear)>,
    pub pose: (GcnLayer, GcnLayer),
    pub bone: Option<Linear>,
    pub head: (Linear, Linear),
    /// One power-iteration state per weight matrix.
    pub spectral: Vec<(ParamId, SpectralNormState)>,
}

impl MultiSourceCritic {
    pub fn new<R: Rng>(store: &mut ParamStore, sources: CriticSources, dims: CriticDims, rng: &mut R) -> Self {
        let multi = sources == CriticSources::Multi;
        let image = multi.then(|| {
            (
                Linear::new(store, "critic.image.fc1", GRID_CELLS, dims.image_hidden, rng),
                Linear::new(store, "critic.image.fc2", dims.image_hidden, dims.image_out, rng),
            )
        });
        let pose = (
            GcnLayer::new(store, "critic.pose.g1", 3, dims.pose_hidden, rng),
            GcnLayer::new(store, "critic.pose.g2", dims.pose_hidden, dims.pose_hidden, rng),
        );
        let bone_in = if dims.gram { NUM_BONES * NUM_BONES } else { 3 * NUM_BONES };
        let bone = multi.then(|| Linear::new(store, "critic.bone.fc", bone_in, dims.bone_out, rng));
        let head_in = if multi {
            dims.image_out + dims.pose_hidden + dims.bone_out
        } else {
            dims.pose_hidden
        };
        let head = (
            Linear::new(store, "critic.head.fc1", head_in, dims.head_hidden, rng),
            Linear::new(store, "critic.head.fc2", dims.head_hidden, 1, rng),
        );
        let mut weights: Vec<ParamId> = Vec::new();
        if let Some((a, b)) = &image {
            weights.extend([a.weight, b.weight]);
        }
        weights.extend([pose.0.weight, pose.1.weight]);
        if let Some(l) = &bone {
            weights.push(l.weight);
        }
        weights.extend([head.0.weight, head.1.weight]);
        let spectral = weights
            .into_iter()
            .map(|id| {
                let w = store.get(id);
                (id, SpectralNormState::new(w.rows(), w.cols(), rng))
            })
            .collect();
        Self {
            sources,
            dims,
            image,
            pose,
            bone,
            head,
            spectral,
        }
    }

    /// One power-iteration step for every normalized weight.
    pub fn update_spectral(&mut self, store: &ParamStore) {
        for (id, st) in &mut self.spectral {
            st.update(store.get(*id));
        }
    }

    /// Runs `n` power-iteration steps; used once after initialization so the
    /// estimates start converged.
    pub fn warm_up_spectral(&mut self, store: &ParamStore, n: usize) {
        for _ in 0..n {
            self.update_spectral(store);
        }
    }

    fn inv_sigma(&self, store: &ParamStore, id: ParamId) -> Option<f64> {
        self.spectral
            .iter()
            .find(|(w, _)| *w == id)
            .map(|(_, st)| 1.0 / st.sigma(store.get(id)))
    }

    /// Spectrally normalized copy of every weight.
    pub fn normalized_weights(&self, store: &ParamStore) -> Vec<(String, Tensor)> {
        self.spectral
            .iter()
            .map(|(id, st)| {
                let w = store.get(*id);
                let s = st.sigma(w);
                (store.name(*id).to_string(), w.map(|v| v / s))
            })
            .collect()
    }

    /// Largest singular value of each normalized weight, by an independent
    /// power method.
    pub fn measured_sigmas(&self, store: &ParamStore, iterations: usize) -> Vec<(String, f64)> {
        self.normalized_weights(store)
            .into_iter()
            .map(|(n, w)| (n, measure_sigma_max(&w, iterations)))
            .collect()
    }

    fn linear(&self, s: &mut Session, l: &Linear, x: Var) -> Result<Var> {
        let c = self.inv_sigma(s.store(), l.weight);
        l.forward_scaled(s, x, c)
    }

    fn gcn(&self, s: &mut Session, l: &GcnLayer, x: Var, graph: &SkeletonGraph) -> Result<Var> {
        let c = self.inv_sigma(s.store(), l.weight);
        l.forward_scaled(s, x, graph, c)
    }

    /// Scores `[B,1]` for images `[B,1024]` and poses `[B,63]`. Higher means
    /// more real; the output is unbounded.
    pub fn criticize(&self, s: &mut Session, images: Var, pose: Var, graph: &SkeletonGraph) -> Result<Var> {
        let b = s.tape.value(pose).rows();
        let nodes = s.tape.reshape(pose, &[b * NUM_JOINTS, 3])?;
        let h = self.gcn(s, &self.pose.0, nodes, graph)?;
        let h = s.tape.relu(h)?;
        let h = self.gcn(s, &self.pose.1, h, graph)?;
        let h = s.tape.relu(h)?;
        let pool = std::sync::Arc::new(crate::autodiff::BlockMap::mean_pool(NUM_JOINTS));
        let mut features = s.tape.block_map(h, &pool)?;

        if let (Some((fc1, fc2)), Some(bone_fc)) = (&self.image, &self.bone) {
            let i = self.linear(s, fc1, images)?;
            let i = s.tape.relu(i)?;
            let i = self.linear(s, fc2, i)?;
            let i = s.tape.relu(i)?;

            let bones = batched::bone_vectors(&mut s.tape, pose, graph)?;
            let bones = s.tape.reshape(bones, &[b, 3 * NUM_BONES])?;
            let bones = s.tape.scale(bones, 1.0 / BONE_INPUT_SCALE)?;
            let bones = if self.dims.gram { gram_op(s, bones)? } else { bones };
            let k = self.linear(s, bone_fc, bones)?;
            let k = s.tape.relu(k)?;

            let ip = s.tape.concat_cols(i, features)?;
            features = s.tape.concat_cols(ip, k)?;
        }
        let h = self.linear(s, &self.head.0, features)?;
        let h = s.tape.relu(h)?;
        self.linear(s, &self.head.1, h)
    }
}

/// Row-wise `B·Bᵀ` of flattened `20×3` bone matrices, `[B,60] → [B,400]`.
fn gram_op(s: &mut Session, bones: Var) -> Result<Var> {
    let t = s.tape.value(bones);
    let rows = t.rows();
    let (n, d) = (NUM_BONES, 3);
    let mut value = Vec::with_capacity(rows * n * n);
    let mut jac = vec![0.0; rows * n * n * n * d];
    for r in 0..rows {
        let x = t.row(r);
        for i in 0..n {
            for j in 0..n {
                let o = i * n + j;
                let mut g = 0.0;
                for k in 0..d {
                    g += x[i * d + k] * x[j * d + k];
                    let base = (r * n * n + o) * n * d;
                    jac[base + i * d + k] += x[j * d + k];
                    jac[base + j * d + k] += x[i * d + k];
                }
                value.push(g);
            }
        }
    }
    let value = Tensor::new(vec![rows, n * n], value)?;
    s.tape.row_jacobian(bones, value, jac)
}

/// `mean(fake) − mean(real)`.
pub fn critic_loss(real: &[f64], fake: &[f64]) -> Result<f64> {
    if real.is_empty() || fake.is_empty() {
        return Err(Error::EmptyBatch);
    }
    Ok(mean(fake) - mean(real))
}

/// `−mean(fake)`.
pub fn generator_adversarial_loss(fake: &[f64]) -> Result<f64> {
    if fake.is_empty() {
        return Err(Error::EmptyBatch);
    }
    Ok(-mean(fake))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}
