//! Dense layers shared by the generator and the critic.

use rand::Rng;

use crate::autodiff::{glorot_uniform, ParamId, ParamStore, Session, Tensor, Var};
use crate::error::Result;

/// `x W + b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let weight = store.add(format!("{name}.weight"), glorot_uniform(in_dim, out_dim, rng));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim]));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn zeroed(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize) -> Self {
        let weight = store.add(format!("{name}.weight"), Tensor::zeros(&[in_dim, out_dim]));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim]));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        self.forward_scaled(s, x, None)
    }

    /// Forward with the weight multiplied by a constant (spectral
    /// normalization passes `1/σ`).
    pub fn forward_scaled(&self, s: &mut Session, x: Var, weight_scale: Option<f64>) -> Result<Var> {
        let mut w = s.param(self.weight)?;
        if let Some(c) = weight_scale {
            w = s.tape.scale(w, c)?;
        }
        let b = s.param(self.bias)?;
        let y = s.tape.matmul(x, w)?;
        s.tape.add_bias(y, b)
    }

    pub fn param_count(&self) -> usize {
        self.in_dim * self.out_dim + self.out_dim
    }
}

/// Two linear layers with a relu between them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mlp2 {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp2 {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, dims: [usize; 3], rng: &mut R) -> Self {
        Self {
            fc1: Linear::new(store, &format!("{name}.fc1"), dims[0], dims[1], rng),
            fc2: Linear::new(store, &format!("{name}.fc2"), dims[1], dims[2], rng),
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let h = self.fc1.forward(s, x)?;
        let h = s.tape.relu(h)?;
        self.fc2.forward(s, h)
    }

    pub fn param_count(&self) -> usize {
        self.fc1.param_count() + self.fc2.param_count()
    }
}
