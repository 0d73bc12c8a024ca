//! The three training stages.
//!
//! Stage I fits the hand-model module alone. Stage II adds a fresh
//! refinement head and trains the whole generator. Stage III alternates
//! critic and generator updates. Stages II and III share an epoch counter
//! and shuffle sequence, so Stage III with the adversarial path disabled
//! follows the same trajectory as a continued Stage II.

use rand::seq::SliceRandom;

use crate::autodiff::{Session, Tensor, Var};
use crate::error::{Error, Result};
use crate::handmodel::Sample;
use crate::losses::batched::{supervised, Targets};
use crate::losses::LossWeights;
use crate::rng::{indexed, Stream};

use super::checkpoint::{Checkpoint, TrainState};
use super::config::{CriticKind, RefinementKind, TrainConfig};
use super::model::{images_tensor, Stage};

/// Critic losses beyond this magnitude abort training.
pub const CRITIC_DIVERGENCE: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean generator objective over the epoch's batches.
    pub loss: f64,
    /// Mean critic loss, Stage III only.
    pub critic_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct StageOutcome {
    pub state: TrainState,
    pub log: Vec<EpochLog>,
}

impl StageOutcome {
    pub fn checkpoint(&self) -> Checkpoint {
        self.state.to_checkpoint()
    }
}

fn shuffle_family(stage: Stage) -> u64 {
    match stage {
        Stage::I => 0,
        Stage::II | Stage::III => 1,
    }
}

/// Sample order for one epoch; depends only on seed, stage family and
/// epoch number.
pub fn epoch_order(seed: u64, stage: Stage, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = indexed(seed, Stream::Shuffle, (shuffle_family(stage) << 32) | epoch as u64);
    order.shuffle(&mut rng);
    order
}

fn is_frozen(name: &str, config: &TrainConfig) -> bool {
    config.freeze.iter().any(|p| name.starts_with(p.as_str()))
}

fn on_batch<T>(batch: usize, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::NonFinite(_) => Error::NonFiniteLoss { batch },
        e => e,
    })
}

struct Batch {
    images: Tensor,
    targets: Targets,
    gt: Tensor,
}

impl Batch {
    fn new(samples: &[&Sample], st: &TrainState) -> Result<Self> {
        let poses: Vec<_> = samples.iter().map(|s| &s.gt_pose3d).collect();
        let targets = Targets::new(&poses, &st.model.graph)?;
        Ok(Self {
            images: images_tensor(samples)?,
            gt: targets.pose.clone(),
            targets,
        })
    }
}

/// One critic update; returns the critic loss.
fn critic_step(st: &mut TrainState, b: &Batch) -> Result<f64> {
    let Some(critic) = st.model.critic.as_mut() else {
        return Ok(0.0);
    };
    critic.update_spectral(&st.model.store);
    let model = &st.model;
    let critic = model.critic.as_ref().expect("checked above");
    let (value, grads) = {
        let mut s = Session::new(&model.store);
        s.freeze(|n| !n.starts_with("critic.") || is_frozen(n, &st.config));
        let images = s.tape.constant(b.images.clone())?;
        let (_, fake) = model.generate(&mut s, images, true)?;
        let real = s.tape.constant(b.gt.clone())?;
        let sr = critic.criticize(&mut s, images, real, &model.graph)?;
        let sf = critic.criticize(&mut s, images, fake, &model.graph)?;
        let mr = s.tape.mean(sr)?;
        let mf = s.tape.mean(sf)?;
        let loss = s.tape.sub(mf, mr)?;
        let value = s.tape.value(loss).item();
        if value.abs() > CRITIC_DIVERGENCE {
            return Ok(value);
        }
        s.backward(loss)?;
        (value, s.grads())
    };
    st.critic_opt.step(&mut st.model.store, &grads)?;
    Ok(value)
}

/// One generator update; returns the objective value.
fn generator_step(st: &mut TrainState, b: &Batch, weights: &LossWeights) -> Result<f64> {
    let model = &st.model;
    let refine = st.stage != Stage::I;
    let stage1 = st.stage == Stage::I;
    let (value, grads) = {
        let mut s = Session::new(&model.store);
        s.freeze(|n| n.starts_with("critic.") || (stage1 && n.starts_with("refine.")) || is_frozen(n, &st.config));
        let images = s.tape.constant(b.images.clone())?;
        let (_, pred) = model.generate(&mut s, images, refine)?;
        let mut loss = supervised(&mut s.tape, pred, &b.targets, weights, &model.graph)?;
        if let (Some(critic), true) = (&model.critic, weights.wass != 0.0) {
            let score = critic.criticize(&mut s, images, pred, &model.graph)?;
            let adv: Var = s.tape.mean(score)?;
            let adv = s.tape.scale(adv, -weights.wass)?;
            loss = s.tape.add(loss, adv)?;
        }
        let value = s.tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        s.backward(loss)?;
        (value, s.grads())
    };
    st.gen_opt.step(&mut st.model.store, &grads)?;
    Ok(value)
}

/// Runs `epochs` epochs of the state's stage over `data`.
pub fn run_epochs(st: &mut TrainState, data: &[Sample], epochs: usize) -> Result<Vec<EpochLog>> {
    if data.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut weights = st.config.effective_weights();
    if st.stage != Stage::III {
        weights.wass = 0.0;
    }
    let adversarial = st.stage == Stage::III && st.model.critic.is_some();
    let mut log = Vec::with_capacity(epochs);
    let mut batch_index = 0;
    for _ in 0..epochs {
        let order = epoch_order(st.config.seed, st.stage, st.epoch, data.len());
        let (mut gen_sum, mut critic_sum, mut batches) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(st.config.batch_size) {
            let samples: Vec<&Sample> = chunk.iter().map(|&i| &data[i]).collect();
            let b = Batch::new(&samples, st)?;
            if adversarial {
                for _ in 0..st.config.critic_steps {
                    let c = on_batch(batch_index, critic_step(st, &b))?;
                    if !c.is_finite() {
                        return Err(Error::NonFiniteLoss { batch: batch_index });
                    }
                    if c.abs() > CRITIC_DIVERGENCE {
                        return Err(Error::CriticDiverged {
                            batch: batch_index,
                            loss: c,
                        });
                    }
                    critic_sum += c / st.config.critic_steps as f64;
                }
            }
            gen_sum += on_batch(batch_index, generator_step(st, &b, &weights))?;
            batches += 1;
            batch_index += 1;
        }
        log.push(EpochLog {
            epoch: st.epoch,
            loss: gen_sum / batches as f64,
            critic_loss: adversarial.then(|| critic_sum / batches as f64),
        });
        st.epoch += 1;
    }
    Ok(log)
}

/// Stage I: the hand-model module from random initialization, without the
/// adversarial term.
pub fn stage1_pretrain(config: &TrainConfig, data: &[Sample]) -> Result<StageOutcome> {
    config.validate()?;
    let mut state = TrainState::fresh(config, Stage::I);
    let log = run_epochs(&mut state, data, config.stage1_epochs)?;
    Ok(StageOutcome { state, log })
}

/// Stage II: hand model from a Stage I checkpoint, fresh refinement head,
/// whole generator trained without the critic.
pub fn stage2_train_generator(config: &TrainConfig, ckpt: &Checkpoint, data: &[Sample]) -> Result<StageOutcome> {
    config.validate()?;
    ckpt.expect_stage(Stage::I)?;
    if config.variant.refinement == RefinementKind::None {
        return Err(Error::Config("variant has no refinement; stage II does not apply".into()));
    }
    let mut state = TrainState::fresh(config, Stage::II);
    state.model.load_group(&ckpt.params(), "hand.")?;
    let log = run_epochs(&mut state, data, config.stage2_epochs)?;
    Ok(StageOutcome { state, log })
}

/// Stage III: generator and generator optimizer from a Stage II
/// checkpoint, fresh critic, alternating updates.
pub fn stage3_adversarial(config: &TrainConfig, ckpt: &Checkpoint, data: &[Sample]) -> Result<StageOutcome> {
    config.validate()?;
    ckpt.expect_stage(Stage::II)?;
    if config.variant.critic == CriticKind::None || config.variant.refinement == RefinementKind::None {
        return Err(Error::Config("variant has no critic; stage III does not apply".into()));
    }
    let prev = TrainState::from_checkpoint(ckpt)?;
    let mut state = TrainState::fresh(config, Stage::III);
    let params = ckpt.params();
    state.model.load_group(&params, "hand.")?;
    state.model.load_group(&params, "refine.")?;
    for id in prev.model.store.ids() {
        let name = prev.model.store.name(id);
        let to = state.model.store.id(name).ok_or_else(|| Error::MissingArray(format!("param/{name}")))?;
        state.gen_opt.states[to.index()] = prev.gen_opt.states[id.index()].clone();
    }
    state.epoch = ckpt.epoch;
    let log = run_epochs(&mut state, data, config.stage3_epochs)?;
    Ok(StageOutcome { state, log })
}

/// Continues a checkpoint's own stage for `epochs` more epochs.
pub fn resume(ckpt: &Checkpoint, data: &[Sample], epochs: usize) -> Result<StageOutcome> {
    let mut state = TrainState::from_checkpoint(ckpt)?;
    let log = run_epochs(&mut state, data, epochs)?;
    Ok(StageOutcome { state, log })
}
