//! KL and Jeffreys divergences between diagonal Gaussians.

use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::nets::DiagGaussian;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DivergenceKind {
    KL,
    Jeffreys,
}

impl DivergenceKind {
    pub fn eval(self, p: &DiagGaussian, q: &DiagGaussian) -> Result<f64> {
        match self {
            DivergenceKind::KL => kl_diag_gauss(p, q),
            DivergenceKind::Jeffreys => jeffreys(p, q),
        }
    }
}

fn check(p: &DiagGaussian, q: &DiagGaussian) -> Result<()> {
    Error::check_dim("divergence", p.dim(), q.dim())
}

/// `KL(p ‖ q) = Σ_i [log(σ_q/σ_p) + (σ_p² + (μ_p−μ_q)²)/(2σ_q²) − ½]`
pub fn kl_diag_gauss(p: &DiagGaussian, q: &DiagGaussian) -> Result<f64> {
    check(p, q)?;
    let mut acc = 0.0;
    for i in 0..p.dim() {
        let (lp, lq) = (p.log_std[i], q.log_std[i]);
        let dm = p.mean[i] - q.mean[i];
        let ratio = (2.0 * (lp - lq)).exp();
        acc += lq - lp + 0.5 * (ratio + dm * dm * (-2.0 * lq).exp()) - 0.5;
    }
    Ok(acc.max(0.0))
}

/// `KL(p‖q) + KL(q‖p)`; the log terms cancel, leaving
/// `Σ_i [(σ_p² + Δ²)/(2σ_q²) + (σ_q² + Δ²)/(2σ_p²) − 1]`.
pub fn jeffreys(p: &DiagGaussian, q: &DiagGaussian) -> Result<f64> {
    check(p, q)?;
    let mut acc = 0.0;
    for i in 0..p.dim() {
        let (lp, lq) = (p.log_std[i], q.log_std[i]);
        let d2 = (p.mean[i] - q.mean[i]).powi(2);
        let dl = 2.0 * (lp - lq);
        acc += 0.5 * (dl.exp() + (-dl).exp() + d2 * ((-2.0 * lq).exp() + (-2.0 * lp).exp())) - 1.0;
    }
    Ok(acc.max(0.0))
}

/// Row-wise Jeffreys divergence `[B,1]` between two batches of diagonal
/// Gaussians given as `[B,d]` mean and log-std nodes.
pub fn jeffreys_rows<'g>(
    mean_p: Var<'g>,
    log_std_p: Var<'g>,
    mean_q: Var<'g>,
    log_std_q: Var<'g>,
) -> Var<'g> {
    let d2 = mean_p.sub(mean_q).square();
    let dl = log_std_p.sub(log_std_q).scale(2.0);
    // σ_p²/σ_q² and σ_q²/σ_p² as exp(±2Δlog σ) so equal scales give exactly 1
    let a = dl.exp().add(d2.mul(log_std_q.scale(-2.0).exp()));
    let b = dl.neg().exp().add(d2.mul(log_std_p.scale(-2.0).exp()));
    a.add(b).scale(0.5).add_scalar(-1.0).row_sums()
}
