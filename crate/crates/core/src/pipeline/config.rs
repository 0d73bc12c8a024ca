//! Training configuration, read from a TOML document.
//!
//! Every key is optional; missing keys take the defaults below.
//!
//! ```toml
//! seed = 0
//! train_size = 2000          # synthetic training samples (when no file is given)
//! test_size = 500            # synthetic test samples
//! batch_size = 32
//! stage1_epochs = 100
//! stage2_epochs = 100
//! stage3_epochs = 100
//! stage1_lr = 0.001          # hand-model pretraining
//! stage2_lr = 0.0001         # generator without critic
//! stage3_lr = 0.0001         # generator during adversarial training
//! critic_lr = 0.0001
//! critic_steps = 1           # critic updates per generator update
//! spectral_warmup = 20       # power iterations run once on a fresh critic
//! freeze = []                # parameter-name prefixes held fixed
//! pck_thresholds = [20.0, 22.0, ..., 50.0]
//!
//! [weights]                  # trade-off weights of the combined loss
//! proj = 0.1
//! len = 0.01
//! dir = 0.1
//! wass = 0.01
//!
//! [network]
//! hidden = 128               # refinement width
//! blocks = 4                 # Graph Res-blocks
//! feature_dim = 64           # image feature fed to the refinement
//! block_relu = true          # relu after each residual addition
//!
//! [critic]
//! image_hidden = 128
//! image_out = 64
//! pose_hidden = 32
//! bone_out = 32
//! head_hidden = 64
//! gram = false               # feed B·Bᵀ to the bone branch
//!
//! [variant]
//! refinement = "gcn"         # gcn | fc | none
//! critic = "multi"           # multi | single | none
//! use_len = true
//! use_dir = true
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::discriminator::{CriticDims, CriticSources};
use crate::error::{Error, Result};
use crate::graphnet::RefineDims;
use crate::losses::{default_thresholds, LossWeights};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RefinementKind {
    Gcn,
    Fc,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CriticKind {
    Multi,
    Single,
    None,
}

impl CriticKind {
    pub fn sources(self) -> Option<CriticSources> {
        match self {
            CriticKind::Multi => Some(CriticSources::Multi),
            CriticKind::Single => Some(CriticSources::Single),
            CriticKind::None => None,
        }
    }
}

/// One row of an ablation study.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationVariant {
    pub name: String,
    pub refinement: RefinementKind,
    pub critic: CriticKind,
    pub use_len: bool,
    pub use_dir: bool,
}

impl Default for AblationVariant {
    fn default() -> Self {
        Self {
            name: "full".into(),
            refinement: RefinementKind::Gcn,
            critic: CriticKind::Multi,
            use_len: true,
            use_dir: true,
        }
    }
}

impl AblationVariant {
    /// Stages this variant trains: refinement `none` stops after stage I,
    /// critic `none` after stage II.
    pub fn last_stage(&self) -> u8 {
        match (self.refinement, self.critic) {
            (RefinementKind::None, _) => 1,
            (_, CriticKind::None) => 2,
            _ => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkDims {
    pub hidden: usize,
    pub blocks: usize,
    pub feature_dim: usize,
    pub block_relu: bool,
}

impl Default for NetworkDims {
    fn default() -> Self {
        Self {
            hidden: 128,
            blocks: 4,
            feature_dim: 64,
            block_relu: true,
        }
    }
}

impl From<NetworkDims> for RefineDims {
    fn from(d: NetworkDims) -> Self {
        RefineDims {
            feature_dim: d.feature_dim,
            hidden: d.hidden,
            blocks: d.blocks,
            block_relu: d.block_relu,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub train_size: usize,
    pub test_size: usize,
    pub batch_size: usize,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub stage3_epochs: usize,
    pub stage1_lr: f64,
    pub stage2_lr: f64,
    pub stage3_lr: f64,
    pub critic_lr: f64,
    pub critic_steps: usize,
    pub spectral_warmup: usize,
    pub freeze: Vec<String>,
    pub pck_thresholds: Vec<f64>,
    pub weights: LossWeights,
    pub network: NetworkDims,
    pub critic: CriticDims,
    pub variant: AblationVariant,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            train_size: 2000,
            test_size: 500,
            batch_size: 32,
            stage1_epochs: 100,
            stage2_epochs: 100,
            stage3_epochs: 100,
            stage1_lr: 1e-3,
            stage2_lr: 1e-4,
            stage3_lr: 1e-4,
            critic_lr: 1e-4,
            critic_steps: 1,
            spectral_warmup: 20,
            freeze: Vec::new(),
            pck_thresholds: default_thresholds(),
            weights: LossWeights::default(),
            network: NetworkDims::default(),
            critic: CriticDims::default(),
            variant: AblationVariant::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("train_size", self.train_size),
            ("test_size", self.test_size),
            ("batch_size", self.batch_size),
            ("stage1_epochs", self.stage1_epochs),
            ("stage2_epochs", self.stage2_epochs),
            ("stage3_epochs", self.stage3_epochs),
            ("critic_steps", self.critic_steps),
            ("network.hidden", self.network.hidden),
            ("network.feature_dim", self.network.feature_dim),
        ];
        for (k, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{k} must be positive")));
            }
        }
        for (k, v) in [("stage1_lr", self.stage1_lr), ("stage2_lr", self.stage2_lr), ("stage3_lr", self.stage3_lr)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{k} must be positive")));
            }
        }
        // A zero critic rate is allowed: it freezes the critic.
        if !(self.critic_lr >= 0.0 && self.critic_lr.is_finite()) {
            return Err(Error::Config("critic_lr must be nonnegative".into()));
        }
        self.weights.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.pck_thresholds.is_empty()
            || self.pck_thresholds[0] <= 0.0
            || self.pck_thresholds.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(Error::Config("pck_thresholds must be positive and ascending".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is serializable")
    }

    /// Effective loss weights after the variant's loss switches.
    pub fn effective_weights(&self) -> LossWeights {
        LossWeights {
            len: if self.variant.use_len { self.weights.len } else { 0.0 },
            dir: if self.variant.use_dir { self.weights.dir } else { 0.0 },
            ..self.weights
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config is serializable");
        hex::encode(Sha256::digest(json))
    }

    pub fn with_variant(&self, variant: &AblationVariant) -> Self {
        Self {
            variant: variant.clone(),
            ..self.clone()
        }
    }
}
