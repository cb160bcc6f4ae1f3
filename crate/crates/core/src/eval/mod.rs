//! Noise-robustness sweeps and the empirical local Lipschitzness constant.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::divergence::jeffreys;
use crate::envs::{EnvSpec, NoiseKind, NoiseSpec};
use crate::error::{Error, Result};
use crate::gail::Checkpoint;
use crate::nets::{GaussianPolicy, ObsNormalizer};
use crate::perturb::{pga_gen, sample_on_sphere, Norm, PerturbInit, PerturbationSpec};

/// Trajectories rolled for one ELLC estimate; with the 128-step horizon this
/// gives 3840 states.
pub const ELLC_TRAJECTORIES: usize = 30;

/// Gaussian standard deviations in normalised-observation units.
pub const DEFAULT_NOISE_LEVELS: [f64; 6] = [0.0, 0.05, 0.1, 0.2, 0.3, 0.5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRow {
    pub noise_level: f64,
    pub episodes: usize,
    pub mean_return: f64,
    pub std_return: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseEvalMeta {
    pub version_tag: String,
    pub checkpoint_id: String,
    pub config_hash: String,
    pub env: String,
    pub noise_kind: NoiseKind,
    /// Noise levels are multiples of the frozen normaliser's per-dimension std.
    pub units: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseEvalReport {
    pub meta: NoiseEvalMeta,
    pub rows: Vec<NoiseRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllcRow {
    pub radius: f64,
    pub ellc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EllcMeta {
    pub version_tag: String,
    pub checkpoint_id: String,
    pub config_hash: String,
    pub env: String,
    pub trajectories: usize,
    pub horizon: usize,
    pub samples: usize,
    pub delta_rule: String,
    pub units: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EllcReport {
    pub meta: EllcMeta,
    pub rows: Vec<EllcRow>,
}

/// How `δ` is chosen for each state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DeltaRule {
    /// One uniform draw on the sphere `‖δ‖ = r`.
    RandomSphere(Norm),
    /// Worst case found by projected gradient ascent inside the ball.
    Adversarial { norm: Norm, steps: usize },
}

impl DeltaRule {
    pub fn label(&self) -> String {
        match self {
            DeltaRule::RandomSphere(n) => format!("uniform-sphere-{n:?}"),
            DeltaRule::Adversarial { norm, steps } => format!("adversarial-pga-{norm:?}-{steps}"),
        }
    }
}

pub const REPORT_VERSION: &str = "llgail-report-v1";

pub const UNITS: &str = "normalized-observation";

fn checkpoint_id(ck: &Checkpoint) -> String {
    format!("{}@iter{}", ck.config_hash, ck.iter)
}

fn check_env(ck: &Checkpoint, env: &EnvSpec) -> Result<()> {
    if ck.env != *env {
        return Err(Error::Config(format!(
            "checkpoint was trained on {:?} but evaluation asked for {:?}",
            ck.env, env
        )));
    }
    Ok(())
}

fn sorted_levels(levels: &[f64]) -> Result<Vec<f64>> {
    if levels.is_empty() {
        return Err(Error::Config("empty noise-level list".into()));
    }
    if let Some(bad) = levels.iter().find(|l| !l.is_finite() || **l < 0.0) {
        return Err(Error::Config(format!("noise level must be finite and >= 0, got {bad}")));
    }
    let mut v = levels.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Per-level return statistics for `policy` acting on noisy observations with
/// its mean action. Every level replays the same reset states and the same
/// underlying noise draws, so levels and policies are compared on common
/// random numbers.
pub fn noise_sweep<P: GaussianPolicy>(
    policy: &P,
    normalizer: &ObsNormalizer,
    env: &EnvSpec,
    levels: &[f64],
    kind: NoiseKind,
    episodes: usize,
    seed: u64,
) -> Result<Vec<NoiseRow>> {
    if episodes == 0 {
        return Err(Error::Config("episodes per level must be >= 1".into()));
    }
    let scale = normalizer.std();
    sorted_levels(levels)?
        .into_iter()
        .map(|level| {
            let noise = NoiseSpec { kind, level };
            let mut reset_rng = ChaCha8Rng::seed_from_u64(seed);
            let mut noise_rng = ChaCha8Rng::seed_from_u64(seed);
            noise_rng.set_stream(1);
            let mut states: Vec<Vec<f64>> = (0..episodes).map(|_| env.reset(&mut reset_rng)).collect();
            let mut returns = vec![0.0; episodes];
            for _ in 0..env.horizon {
                let obs: Vec<Vec<f64>> = states
                    .iter()
                    .map(|s| normalizer.normalize(&noise.apply_scaled(s, Some(&scale), &mut noise_rng)))
                    .collect();
                let dists = policy.dists(&obs)?;
                for ((s, d), ret) in states.iter_mut().zip(&dists).zip(returns.iter_mut()) {
                    let (next, r) = env.step(s, &env.clip_action(&d.mean))?;
                    *s = next;
                    *ret += r;
                }
            }
            let (mean_return, std_return) = mean_std(&returns);
            Ok(NoiseRow {
                noise_level: level,
                episodes,
                mean_return,
                std_return,
            })
        })
        .collect()
}

pub fn eval_noise(
    ck: &Checkpoint,
    env: &EnvSpec,
    levels: &[f64],
    kind: NoiseKind,
    episodes: usize,
    seed: u64,
) -> Result<NoiseEvalReport> {
    check_env(ck, env)?;
    let rows = noise_sweep(&ck.policy()?, &ck.frozen_normalizer(), env, levels, kind, episodes, seed)?;
    Ok(NoiseEvalReport {
        meta: NoiseEvalMeta {
            version_tag: REPORT_VERSION.into(),
            checkpoint_id: checkpoint_id(ck),
            config_hash: ck.config_hash.clone(),
            env: format!("{:?}", env.name),
            noise_kind: kind,
            units: UNITS.into(),
            seed,
        },
        rows,
    })
}

/// Normalised states visited by `trajectories` noiseless episodes of the
/// stochastic policy.
pub fn on_policy_states<P: GaussianPolicy>(
    policy: &P,
    normalizer: &ObsNormalizer,
    env: &EnvSpec,
    trajectories: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut raw: Vec<Vec<f64>> = (0..trajectories).map(|_| env.reset(&mut rng)).collect();
    let mut out = Vec::with_capacity(trajectories * env.horizon);
    for _ in 0..env.horizon {
        let obs = normalizer.normalize_all(&raw);
        let dists = policy.dists(&obs)?;
        for (s, d) in raw.iter_mut().zip(&dists) {
            let a = d.sample(&mut rng);
            *s = env.step(s, &env.clip_action(&a))?.0;
        }
        out.extend(obs);
    }
    Ok(out)
}

/// `mean_s D_J(π(s) ‖ π(s+δ)) / r` over the given normalised states.
pub fn ellc_on_states<P: GaussianPolicy>(
    policy: &P,
    states: &[Vec<f64>],
    radius: f64,
    rule: DeltaRule,
    seed: u64,
) -> Result<f64> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::Config(format!("ELLC radius must be > 0, got {radius}")));
    }
    if states.is_empty() {
        return Err(Error::Config("ELLC needs at least one state".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let dim = policy.state_dim();
    let deltas: Vec<Vec<f64>> = match rule {
        DeltaRule::RandomSphere(norm) => (0..states.len())
            .map(|_| sample_on_sphere(&mut rng, dim, norm, radius))
            .collect(),
        DeltaRule::Adversarial { norm, steps } => {
            let spec = PerturbationSpec::new(norm, radius, steps).with_init(PerturbInit::RandomInBall);
            pga_gen(policy, states, &spec, &mut rng)?.deltas
        }
    };
    let shifted: Vec<Vec<f64>> = states
        .iter()
        .zip(&deltas)
        .map(|(s, d)| s.iter().zip(d).map(|(a, b)| a + b).collect())
        .collect();
    let clean = policy.dists(states)?;
    let moved = policy.dists(&shifted)?;
    let mut acc = 0.0;
    for (p, q) in clean.iter().zip(&moved) {
        acc += jeffreys(p, q)?;
    }
    Ok(acc / (states.len() as f64 * radius))
}

pub fn ellc(ck: &Checkpoint, env: &EnvSpec, radii: &[f64], rule: DeltaRule, seed: u64) -> Result<EllcReport> {
    check_env(ck, env)?;
    if radii.is_empty() {
        return Err(Error::Config("empty radius list".into()));
    }
    if let Some(bad) = radii.iter().find(|r| !(**r > 0.0 && r.is_finite())) {
        return Err(Error::Config(format!("ELLC radius must be > 0, got {bad}")));
    }
    let policy = ck.policy()?;
    let states = on_policy_states(&policy, &ck.frozen_normalizer(), env, ELLC_TRAJECTORIES, seed)?;
    let rows = radii
        .iter()
        .map(|&radius| {
            Ok(EllcRow {
                radius,
                ellc: ellc_on_states(&policy, &states, radius, rule, seed)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EllcReport {
        meta: EllcMeta {
            version_tag: REPORT_VERSION.into(),
            checkpoint_id: checkpoint_id(ck),
            config_hash: ck.config_hash.clone(),
            env: format!("{:?}", env.name),
            trajectories: ELLC_TRAJECTORIES,
            horizon: env.horizon,
            samples: states.len(),
            delta_rule: rule.label(),
            units: UNITS.into(),
            seed,
        },
        rows,
    })
}

// Reports are CSV files whose first line is `# ` followed by the metadata as JSON.

fn write_report<M: Serialize, R: Serialize>(meta: &M, rows: &[R], path: &Path) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::Config("refusing to write a report with no rows".into()));
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let header = serde_json::to_string(meta).map_err(|e| Error::Json {
        what: "report metadata".into(),
        source: e,
    })?;
    writeln!(file, "# {header}").map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for r in rows {
        w.serialize(r).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_report<M: DeserializeOwned, R: DeserializeOwned>(path: &Path) -> Result<(M, Vec<R>)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut first = String::new();
    reader.read_line(&mut first).map_err(|e| Error::io(path, e))?;
    let json = first
        .strip_prefix("# ")
        .ok_or_else(|| Error::Config(format!("{} lacks a metadata line", path.display())))?;
    let meta = serde_json::from_str(json.trim_end()).map_err(|e| Error::Json {
        what: path.display().to_string(),
        source: e,
    })?;
    let rows = csv::Reader::from_reader(reader)
        .deserialize()
        .map(|r| r.map_err(|e| Error::csv(path, e)))
        .collect::<Result<Vec<R>>>()?;
    Ok((meta, rows))
}

impl NoiseEvalReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_report(&self.meta, &self.rows, path)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let (meta, rows) = read_report(path)?;
        Ok(NoiseEvalReport { meta, rows })
    }
}

impl EllcReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_report(&self.meta, &self.rows, path)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let (meta, rows) = read_report(path)?;
        Ok(EllcReport { meta, rows })
    }
}

#[cfg(test)]
mod tests;
