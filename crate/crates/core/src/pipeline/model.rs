//! Generator and critic assembled from a config.

use std::collections::HashMap;

use crate::autodiff::kernels::map_indexed;
use crate::autodiff::{ParamStore, Session, Tensor, Var};
use crate::discriminator::MultiSourceCritic;
use crate::error::{Error, Result};
use crate::graphnet::{build_hand_graph, FcRefinement, RefinementNet, Refiner, SkeletonGraph};
use crate::handmodel::render::GRID_CELLS;
use crate::handmodel::{Encoder, HandModelNet, Pose3D, Sample};
use crate::rng::{stream, Stream};

use super::config::{RefinementKind, TrainConfig};

/// Samples per evaluation shard.
const EVAL_SHARD: usize = 64;

/// Training stage of a checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub enum Stage {
    I,
    II,
    III,
}

impl Stage {
    pub fn parse(n: u8) -> Result<Self> {
        match n {
            1 => Ok(Stage::I),
            2 => Ok(Stage::II),
            3 => Ok(Stage::III),
            _ => Err(Error::Invalid(format!("stage must be 1, 2 or 3, got {n}"))),
        }
    }

    pub fn number(self) -> u8 {
        match self {
            Stage::I => 1,
            Stage::II => 2,
            Stage::III => 3,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Stage::I => "I",
            Stage::II => "II",
            Stage::III => "III",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// All networks of one training run in a single parameter store.
///
/// Parameter names are prefixed `hand.`, `refine.` and `critic.`. Each
/// group is initialized from its own random stream, so variants that differ
/// in one group share the others' initial values.
#[derive(Debug, Clone)]
pub struct Model {
    pub store: ParamStore,
    pub graph: SkeletonGraph,
    pub hand: HandModelNet,
    pub feature: Option<Encoder>,
    pub refiner: Option<Refiner>,
    pub critic: Option<MultiSourceCritic>,
}

impl Model {
    /// Fresh networks for `config`; the critic exists only when asked for
    /// and the variant has one.
    pub fn new(config: &TrainConfig, with_critic: bool) -> Self {
        let mut store = ParamStore::new();
        let hand = HandModelNet::new(&mut store, &mut stream(config.seed, Stream::Init));

        let (feature, refiner) = match config.variant.refinement {
            RefinementKind::None => (None, None),
            kind => {
                let mut rng = stream(config.seed, Stream::RefineInit);
                let fdim = config.network.feature_dim;
                let feature = Encoder::new(&mut store, "refine.feature", fdim, &mut rng);
                let refiner = if kind == RefinementKind::Gcn {
                    Refiner::Gcn(RefinementNet::new(&mut store, "refine.gcn", config.network.into(), &mut rng))
                } else {
                    let hidden = FcRefinement::hidden_for_budget(fdim, gcn_param_count(config));
                    Refiner::Fc(FcRefinement::new(&mut store, "refine.fc", fdim, hidden, &mut rng))
                };
                (Some(feature), Some(refiner))
            }
        };

        let critic = match config.variant.critic.sources() {
            Some(sources) if with_critic => {
                let mut rng = stream(config.seed, Stream::CriticInit);
                let mut c = MultiSourceCritic::new(&mut store, sources, config.critic, &mut rng);
                c.warm_up_spectral(&store, config.spectral_warmup);
                Some(c)
            }
            _ => None,
        };

        Self {
            store,
            graph: build_hand_graph(),
            hand,
            feature,
            refiner,
            critic,
        }
    }

    /// Copies every parameter whose name starts with `prefix` from `named`.
    pub fn load_group(&mut self, named: &HashMap<String, Tensor>, prefix: &str) -> Result<()> {
        for id in self.store.ids().collect::<Vec<_>>() {
            let name = self.store.name(id);
            if !name.starts_with(prefix) {
                continue;
            }
            let t = named.get(name).ok_or_else(|| Error::MissingArray(format!("param/{name}")))?;
            if t.shape() != self.store.get(id).shape() {
                return Err(Error::Shape(format!(
                    "array `param/{name}` has shape {:?}, expected {:?}",
                    t.shape(),
                    self.store.get(id).shape()
                )));
            }
            *self.store.get_mut(id) = t.clone();
        }
        Ok(())
    }

    /// Refinement parameters of the variant's head alone (feature encoder
    /// excluded).
    pub fn refiner_param_count(&self) -> usize {
        self.refiner.as_ref().map_or(0, Refiner::param_count)
    }

    /// Prior and output pose, both `[B,63]`. Without refinement, or when
    /// `refine` is false, the output is the prior.
    pub fn generate(&self, s: &mut Session, images: Var, refine: bool) -> Result<(Var, Var)> {
        let prior = self.hand.prior(s, images)?;
        match (&self.feature, &self.refiner) {
            (Some(enc), Some(r)) if refine => {
                let f = enc.encode(s, images)?;
                let out = r.refine(s, prior, f, &self.graph)?;
                Ok((prior, out))
            }
            _ => Ok((prior, prior)),
        }
    }

    /// Forward-only predictions for `samples`, in order. Shards run in
    /// parallel; each shard is an independent pure function of the frozen
    /// parameters, so the result does not depend on the thread count.
    pub fn predict(&self, samples: &[Sample], refine: bool) -> Result<Vec<Pose3D>> {
        let shards = samples.len().div_ceil(EVAL_SHARD);
        let parts = map_indexed(shards, |k| {
            let chunk = &samples[k * EVAL_SHARD..((k + 1) * EVAL_SHARD).min(samples.len())];
            let mut s = Session::new(&self.store);
            s.freeze(|_| true);
            let refs: Vec<&Sample> = chunk.iter().collect();
            let images = s.tape.constant(images_tensor(&refs)?)?;
            let (_, out) = self.generate(&mut s, images, refine)?;
            let t = s.tape.value(out);
            (0..t.rows()).map(|r| Pose3D::from_flat(t.row(r))).collect::<Result<Vec<_>>>()
        });
        let mut out = Vec::with_capacity(samples.len());
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }
}

/// Parameter count of the graph refinement head `config` describes.
pub fn gcn_param_count(config: &TrainConfig) -> usize {
    let mut scratch = ParamStore::new();
    let mut rng = stream(config.seed, Stream::RefineInit);
    RefinementNet::new(&mut scratch, "gcn", config.network.into(), &mut rng).param_count()
}

/// Renderings stacked as `[B, 1024]`.
pub fn images_tensor(samples: &[&Sample]) -> Result<Tensor> {
    if samples.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut data = Vec::with_capacity(samples.len() * GRID_CELLS);
    for s in samples {
        data.extend_from_slice(s.rendering.cells());
    }
    Tensor::new(vec![samples.len(), GRID_CELLS], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::config::{AblationVariant, CriticKind};

    fn small() -> TrainConfig {
        let mut c = TrainConfig::default();
        c.network.hidden = 16;
        c.network.blocks = 1;
        c.network.feature_dim = 8;
        c
    }

    #[test]
    fn groups_share_initialization_across_variants() {
        let a = Model::new(&small(), true);
        let v = AblationVariant {
            critic: CriticKind::None,
            ..Default::default()
        };
        let b = Model::new(&small().with_variant(&v), true);
        assert!(b.critic.is_none());
        for (name, t) in b.store.iter() {
            assert_eq!(a.store.get(a.store.id(name).unwrap()), t, "{name}");
        }
    }

    #[test]
    fn fc_budget_is_close_to_gcn() {
        let c = small();
        let v = AblationVariant {
            refinement: RefinementKind::Fc,
            ..Default::default()
        };
        let fc = Model::new(&c.with_variant(&v), false);
        let gcn = gcn_param_count(&c) as f64;
        let got = fc.refiner_param_count() as f64;
        // One hidden unit costs 21·(3+F) + 1 + 63 parameters.
        let unit = (21 * (3 + 8) + 1 + 63) as f64;
        assert!((got - gcn).abs() <= unit / 2.0 + 1.0, "{got} vs {gcn}");
    }

    #[test]
    fn untrained_refinement_returns_prior() {
        let m = Model::new(&small(), false);
        let data = crate::handmodel::sample_synthetic(3, 5).unwrap();
        let a = m.predict(&data, false).unwrap();
        let b = m.predict(&data, true).unwrap();
        assert_eq!(a, b);
    }
}
