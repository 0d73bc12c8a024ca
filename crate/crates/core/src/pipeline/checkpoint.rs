//! Checkpoints: one JSON document holding the config, every parameter,
//! optimizer moments and power-iteration vectors.
//!
//! Array keys:
//!
//! | key                          | content                         |
//! |------------------------------|---------------------------------|
//! | `param/<name>`               | parameter tensor                |
//! | `adam.gen/<name>/m`, `/v`    | generator Adam moments          |
//! | `adam.critic/<name>/m`, `/v` | critic Adam moments             |
//! | `spectral/<name>/u`, `/v`    | singular-vector estimates       |
//!
//! Counters hold Adam step counts (`adam.gen/<name>/step`) and power
//! iterations per update (`spectral/<name>/iterations`). Maps are sorted,
//! and floats are written in shortest round-trip form, so equal states
//! serialize to equal bytes.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, AdamState, ParamStore, SpectralNormState, Tensor};
use crate::error::{Error, Result};

use super::config::TrainConfig;
use super::model::{Model, Stage};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub stage: Stage,
    /// Epochs completed. Stages II and III share one counter.
    pub epoch: usize,
    pub config: TrainConfig,
    pub arrays: BTreeMap<String, Tensor>,
    pub counters: BTreeMap<String, u64>,
}

/// A model with its optimizers, as training sees it.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub config: TrainConfig,
    pub stage: Stage,
    pub epoch: usize,
    pub model: Model,
    pub gen_opt: Adam,
    pub critic_opt: Adam,
}

fn vector(v: &[f64]) -> Tensor {
    Tensor::new(vec![v.len()], v.to_vec()).expect("vector shape")
}

fn put_adam(ck: &mut Checkpoint, tag: &str, opt: &Adam, store: &ParamStore) {
    for id in store.ids() {
        if let Some(st) = &opt.states[id.index()] {
            let name = store.name(id);
            ck.arrays.insert(format!("{tag}/{name}/m"), vector(&st.m));
            ck.arrays.insert(format!("{tag}/{name}/v"), vector(&st.v));
            ck.counters.insert(format!("{tag}/{name}/step"), st.step);
        }
    }
}

impl Checkpoint {
    pub fn array(&self, key: &str) -> Result<&Tensor> {
        self.arrays.get(key).ok_or_else(|| Error::MissingArray(key.to_string()))
    }

    fn counter(&self, key: &str) -> Result<u64> {
        self.counters.get(key).copied().ok_or_else(|| Error::MissingArray(key.to_string()))
    }

    /// Parameter tensors keyed by parameter name.
    pub fn params(&self) -> HashMap<String, Tensor> {
        self.arrays
            .iter()
            .filter_map(|(k, t)| k.strip_prefix("param/").map(|n| (n.to_string(), t.clone())))
            .collect()
    }

    pub fn expect_stage(&self, expected: Stage) -> Result<()> {
        if self.stage != expected {
            return Err(Error::StageMismatch {
                expected: expected.to_string(),
                found: self.stage.to_string(),
            });
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint is serializable")
    }

    /// Parses and validates: the version is checked before the body, and
    /// every array the config implies must be present.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let found = value
            .get("version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::Invalid("checkpoint has no numeric `version`".into()))?;
        if found != u64::from(CHECKPOINT_VERSION) {
            return Err(Error::Version {
                found: u32::try_from(found).unwrap_or(u32::MAX),
                expected: CHECKPOINT_VERSION,
            });
        }
        let ck: Checkpoint = serde_json::from_value(value)?;
        ck.config.validate()?;
        TrainState::from_checkpoint(&ck)?;
        Ok(ck)
    }
}

impl TrainState {
    /// Fresh state for `stage`: networks from the config streams and empty
    /// optimizers.
    pub fn fresh(config: &TrainConfig, stage: Stage) -> Self {
        let model = Model::new(config, stage == Stage::III);
        let lr = match stage {
            Stage::I => config.stage1_lr,
            Stage::II => config.stage2_lr,
            Stage::III => config.stage3_lr,
        };
        Self {
            config: config.clone(),
            stage,
            epoch: 0,
            gen_opt: Adam::new(&model.store, lr),
            critic_opt: Adam::new(&model.store, config.critic_lr),
            model,
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let store = &self.model.store;
        let mut ck = Checkpoint {
            version: CHECKPOINT_VERSION,
            stage: self.stage,
            epoch: self.epoch,
            config: self.config.clone(),
            arrays: BTreeMap::new(),
            counters: BTreeMap::new(),
        };
        for (name, t) in store.iter() {
            ck.arrays.insert(format!("param/{name}"), t.clone());
        }
        put_adam(&mut ck, "adam.gen", &self.gen_opt, store);
        put_adam(&mut ck, "adam.critic", &self.critic_opt, store);
        if let Some(c) = &self.model.critic {
            for (id, st) in &c.spectral {
                let name = store.name(*id);
                ck.arrays.insert(format!("spectral/{name}/u"), vector(&st.u));
                ck.arrays.insert(format!("spectral/{name}/v"), vector(&st.v));
                ck.counters.insert(format!("spectral/{name}/iterations"), st.iterations as u64);
            }
        }
        ck
    }

    /// Rebuilds the exact state a checkpoint was written from.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let mut st = Self::fresh(&ck.config, ck.stage);
        st.epoch = ck.epoch;
        let store = &mut st.model.store;
        for id in store.ids().collect::<Vec<_>>() {
            let key = format!("param/{}", store.name(id));
            let t = ck.array(&key)?;
            if t.shape() != store.get(id).shape() {
                return Err(Error::Shape(format!(
                    "array `{key}` has shape {:?}, expected {:?}",
                    t.shape(),
                    store.get(id).shape()
                )));
            }
            *store.get_mut(id) = t.clone();
        }
        let store = &st.model.store;
        for (tag, opt) in [("adam.gen", &mut st.gen_opt), ("adam.critic", &mut st.critic_opt)] {
            for id in store.ids() {
                let name = store.name(id);
                let step_key = format!("{tag}/{name}/step");
                if !ck.counters.contains_key(&step_key) {
                    continue;
                }
                let n = store.get(id).len();
                let m = ck.array(&format!("{tag}/{name}/m"))?;
                let v = ck.array(&format!("{tag}/{name}/v"))?;
                if m.len() != n || v.len() != n {
                    return Err(Error::Shape(format!("{tag} moments of `{name}` need {n} values")));
                }
                let mut state = AdamState::new(n);
                state.m = m.data().to_vec();
                state.v = v.data().to_vec();
                state.step = ck.counter(&step_key)?;
                opt.states[id.index()] = Some(state);
            }
        }
        if let Some(c) = &mut st.model.critic {
            for (id, state) in &mut c.spectral {
                let name = store.name(*id);
                let u = ck.array(&format!("spectral/{name}/u"))?;
                let v = ck.array(&format!("spectral/{name}/v"))?;
                if u.len() != state.u.len() || v.len() != state.v.len() {
                    return Err(Error::Shape(format!("spectral vectors of `{name}`")));
                }
                *state = SpectralNormState {
                    u: u.data().to_vec(),
                    v: v.data().to_vec(),
                    iterations: ck.counter(&format!("spectral/{name}/iterations"))? as usize,
                };
            }
        }
        Ok(st)
    }
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, ck.to_json()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_json(&text)
}
