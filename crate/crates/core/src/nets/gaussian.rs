use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::Var;

/// `½·log(2π)`
pub const HALF_LOG_2PI: f64 = 0.918_938_533_204_672_8;

/// Diagonal Gaussian over actions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagGaussian {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, log_std: Vec<f64>) -> Self {
        assert_eq!(mean.len(), log_std.len(), "mean/log_std length mismatch");
        DiagGaussian { mean, log_std }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn std(&self) -> Vec<f64> {
        self.log_std.iter().map(|l| l.exp()).collect()
    }

    pub fn log_prob(&self, a: &[f64]) -> f64 {
        assert_eq!(a.len(), self.dim(), "action dimension");
        self.mean
            .iter()
            .zip(&self.log_std)
            .zip(a)
            .map(|((&mu, &ls), &x)| {
                let z = (x - mu) * (-ls).exp();
                -0.5 * z * z - ls - HALF_LOG_2PI
            })
            .sum()
    }

    /// `Σ_i (log σ_i + ½·log(2πe))`
    pub fn entropy(&self) -> f64 {
        let per_dim = 0.5 * (2.0 * PI * std::f64::consts::E).ln();
        self.log_std.iter().map(|ls| ls + per_dim).sum()
    }

    /// `μ + σ ⊙ z`, `z ~ N(0, I)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.log_std)
            .map(|(&mu, &ls)| {
                let z: f64 = rng.sample(StandardNormal);
                mu + ls.exp() * z
            })
            .collect()
    }

    pub fn is_valid(&self) -> bool {
        self.mean.iter().all(|m| m.is_finite()) && self.log_std.iter().all(|l| l.is_finite())
    }
}

/// Per-row log-density `[B,1]` of `actions` under `N(mean, exp(log_std)²)`, where
/// `mean` is `[B,d]` and `log_std` is `[B,d]`.
pub fn log_prob_rows<'g>(mean: Var<'g>, log_std: Var<'g>, actions: Var<'g>) -> Var<'g> {
    let z = actions.sub(mean).mul(log_std.neg().exp());
    z.square()
        .scale(-0.5)
        .sub(log_std)
        .add_scalar(-HALF_LOG_2PI)
        .row_sums()
}

/// Entropy of a state-independent diagonal Gaussian from its `[1,d]` log-std.
pub fn entropy_var<'g>(log_std: Var<'g>) -> Var<'g> {
    let d = log_std.cols() as f64;
    log_std.sum().add_scalar(d * 0.5 * (2.0 * PI * std::f64::consts::E).ln())
}
