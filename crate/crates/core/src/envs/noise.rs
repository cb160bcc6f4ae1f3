use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NoiseKind {
    /// i.i.d. `N(0, level²)` per dimension.
    GaussianPerDim,
    /// i.i.d. `U(−level, level)` per dimension.
    UniformLinfBall,
}

/// Additive observation noise. A zero level is the identity and draws nothing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub level: f64,
}

impl NoiseSpec {
    pub fn gaussian(level: f64) -> Self {
        NoiseSpec {
            kind: NoiseKind::GaussianPerDim,
            level,
        }
    }

    pub fn uniform_linf(level: f64) -> Self {
        NoiseSpec {
            kind: NoiseKind::UniformLinfBall,
            level,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.level >= 0.0 && self.level.is_finite() {
            Ok(())
        } else {
            Err(Error::Config(format!("noise level must be finite and >= 0, got {}", self.level)))
        }
    }

    pub fn is_identity(&self) -> bool {
        self.level == 0.0
    }

    pub fn apply<R: Rng + ?Sized>(&self, s: &[f64], rng: &mut R) -> Vec<f64> {
        self.apply_scaled(s, None, rng)
    }

    /// Like [`NoiseSpec::apply`] with dimension `i` scaled by `scale[i]`
    /// (used to express levels in normalised-observation units).
    pub fn apply_scaled<R: Rng + ?Sized>(&self, s: &[f64], scale: Option<&[f64]>, rng: &mut R) -> Vec<f64> {
        if self.is_identity() {
            return s.to_vec();
        }
        s.iter()
            .enumerate()
            .map(|(i, x)| {
                let e = match self.kind {
                    NoiseKind::GaussianPerDim => self.level * rng.sample::<f64, _>(StandardNormal),
                    NoiseKind::UniformLinfBall => rng.gen_range(-self.level..=self.level),
                };
                x + e * scale.map_or(1.0, |sc| sc[i])
            })
            .collect()
    }
}
