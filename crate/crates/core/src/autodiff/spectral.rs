//! Spectral weight normalization with a persistent power iteration.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;

/// Floor on the σ estimate, so an all-zero matrix is left as-is.
pub const SIGMA_FLOOR: f64 = 1e-12;

/// Left/right singular-vector estimates for one `m×n` weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralNormState {
    /// Length `m`, unit norm.
    pub u: Vec<f64>,
    /// Length `n`, unit norm.
    pub v: Vec<f64>,
    pub iterations: usize,
}

fn normalize(x: &mut [f64]) -> f64 {
    let n = x.iter().map(|a| a * a).sum::<f64>().sqrt();
    if n > 0.0 {
        x.iter_mut().for_each(|a| *a /= n);
    }
    n
}

fn mat_vec(w: &Tensor, v: &[f64]) -> Vec<f64> {
    (0..w.rows())
        .map(|i| w.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

fn mat_t_vec(w: &Tensor, u: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; w.cols()];
    for (i, &ui) in u.iter().enumerate() {
        for (o, &a) in out.iter_mut().zip(w.row(i)) {
            *o += ui * a;
        }
    }
    out
}

impl SpectralNormState {
    /// Random unit start vectors for an `m×n` weight.
    pub fn new<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let mut u: Vec<f64> = (0..rows).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut v: Vec<f64> = (0..cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if normalize(&mut u) == 0.0 {
            u[0] = 1.0;
        }
        if normalize(&mut v) == 0.0 {
            v[0] = 1.0;
        }
        Self { u, v, iterations: 1 }
    }

    /// Runs `self.iterations` power-iteration updates against `w` and
    /// returns the resulting σ estimate `uᵀ W v`, floored.
    pub fn update(&mut self, w: &Tensor) -> f64 {
        for _ in 0..self.iterations.max(1) {
            let mut v = mat_t_vec(w, &self.u);
            if normalize(&mut v) > 0.0 {
                self.v = v;
            }
            let mut u = mat_vec(w, &self.v);
            if normalize(&mut u) > 0.0 {
                self.u = u;
            }
        }
        self.sigma(w)
    }

    /// σ estimate from the stored vectors without updating them.
    pub fn sigma(&self, w: &Tensor) -> f64 {
        let wv = mat_vec(w, &self.v);
        let s: f64 = self.u.iter().zip(&wv).map(|(a, b)| a * b).sum();
        s.abs().max(SIGMA_FLOOR)
    }
}

/// One training-style update: advances the power iteration on `w` and
/// returns `w / σ`. Inside a tape the same division is recorded as a
/// constant scale, so σ gets no gradient.
pub fn spectral_normalize(w: &Tensor, state: &mut SpectralNormState) -> Tensor {
    let sigma = state.update(w);
    w.map(|a| a / sigma)
}

/// Largest singular value by an independent cold-start power method on
/// `WᵀW`. Used to audit normalized weights.
pub fn measure_sigma_max(w: &Tensor, iterations: usize) -> f64 {
    let n = w.cols();
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + (i as f64 * 0.618_033_988_7).fract()).collect();
    normalize(&mut v);
    let mut sigma = 0.0;
    for _ in 0..iterations {
        let wv = mat_vec(w, &v);
        let mut wtwv = mat_t_vec(w, &wv);
        let n2 = normalize(&mut wtwv);
        if n2 == 0.0 {
            return 0.0;
        }
        sigma = n2.sqrt();
        v = wtwv;
    }
    sigma
}
