use serde::{Deserialize, Serialize};

const CLIP: f64 = 10.0;
const EPS: f64 = 1e-8;

/// Running per-dimension mean and variance of raw observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsNormalizer {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: f64,
    #[serde(default)]
    pub frozen: bool,
}

impl ObsNormalizer {
    pub fn new(dim: usize) -> Self {
        ObsNormalizer {
            mean: vec![0.0; dim],
            var: vec![1.0; dim],
            count: 0.0,
            frozen: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Merges a batch of raw observations (Chan et al. parallel update). No-op when frozen.
    pub fn update(&mut self, batch: &[Vec<f64>]) {
        if self.frozen || batch.is_empty() {
            return;
        }
        let n = batch.len() as f64;
        let d = self.dim();
        let mut bmean = vec![0.0; d];
        for s in batch {
            for i in 0..d {
                bmean[i] += s[i];
            }
        }
        bmean.iter_mut().for_each(|m| *m /= n);
        let mut bvar = vec![0.0; d];
        for s in batch {
            for i in 0..d {
                bvar[i] += (s[i] - bmean[i]).powi(2);
            }
        }
        bvar.iter_mut().for_each(|v| *v /= n);

        if self.count == 0.0 {
            self.mean = bmean;
            self.var = bvar;
            self.count = n;
            return;
        }
        let tot = self.count + n;
        for i in 0..d {
            let delta = bmean[i] - self.mean[i];
            let m2 = self.var[i] * self.count + bvar[i] * n + delta * delta * self.count * n / tot;
            self.mean[i] += delta * n / tot;
            self.var[i] = m2 / tot;
        }
        self.count = tot;
    }

    pub fn std(&self) -> Vec<f64> {
        self.var.iter().map(|v| (v + EPS).sqrt()).collect()
    }

    /// `(s − mean)/sqrt(var + 1e-8)` clamped to `[-10, 10]`.
    pub fn normalize(&self, s: &[f64]) -> Vec<f64> {
        s.iter()
            .zip(self.mean.iter().zip(&self.var))
            .map(|(&x, (&m, &v))| ((x - m) / (v + EPS).sqrt()).clamp(-CLIP, CLIP))
            .collect()
    }

    pub fn normalize_all(&self, states: &[Vec<f64>]) -> Vec<Vec<f64>> {
        states.iter().map(|s| self.normalize(s)).collect()
    }
}
