//! Command-line front end: experiment configs, subcommands and exit codes.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::envs::{gen_demos, load_demos, EnvKind, EnvSpec, NoiseKind};
use crate::error::{Error, Result};
use crate::eval::{self, DeltaRule, DEFAULT_NOISE_LEVELS};
use crate::gail::{self, Checkpoint, RunPaths, TrainConfig};
use crate::perturb::Norm;
use crate::theory::{self, MdpName};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NON_FINITE: i32 = 4;

/// Caps optional parallelism; only 1 (sequential, fully deterministic) is
/// meaningful in this build.
pub const THREADS_VAR: &str = "LIPGAIL_THREADS";

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Dimension { .. } | Error::Json { .. } => EXIT_CONFIG,
        Error::Io { .. } => EXIT_IO,
        Error::NonFinite(_) | Error::NotConverged { .. } => EXIT_NON_FINITE,
    }
}

fn default_levels() -> Vec<f64> {
    DEFAULT_NOISE_LEVELS.to_vec()
}
fn default_episodes() -> usize {
    50
}
fn default_radii() -> Vec<f64> {
    vec![0.1]
}
fn default_noise_kind() -> NoiseKind {
    NoiseKind::GaussianPerDim
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSpec {
    #[serde(default = "default_levels")]
    pub noise_levels: Vec<f64>,
    #[serde(default = "default_noise_kind")]
    pub noise_kind: NoiseKind,
    #[serde(default = "default_episodes")]
    pub episodes: usize,
    #[serde(default = "default_radii")]
    pub ellc_radii: Vec<f64>,
}

impl Default for EvalSpec {
    fn default() -> Self {
        EvalSpec {
            noise_levels: default_levels(),
            noise_kind: default_noise_kind(),
            episodes: default_episodes(),
            ellc_radii: default_radii(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Relative paths are resolved against the config file's directory.
    pub demos: PathBuf,
    pub out_dir: PathBuf,
}

/// Everything one experiment needs. The top-level `seed` overrides `train.seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalSpec,
    pub paths: Paths,
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn from_json(text: &str, what: &str) -> Result<Self> {
        let mut cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::json(what, e))?;
        cfg.train.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text, &path.display().to_string())?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.paths.demos, &mut cfg.paths.out_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.train.validate(self.env.horizon)?;
        if self.eval.episodes == 0 {
            return Err(Error::Config("eval.episodes must be >= 1".into()));
        }
        check_levels(&self.eval.noise_levels)?;
        check_radii(&self.eval.ellc_radii)
    }

    /// SHA-256 of the canonical JSON serialisation.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serialises");
        format!("{:x}", Sha256::digest(json.as_bytes()))
    }
}

fn check_levels(levels: &[f64]) -> Result<()> {
    if levels.is_empty() {
        return Err(Error::Config("noise level list is empty".into()));
    }
    match levels.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
        Some(bad) => Err(Error::Config(format!("noise levels must be >= 0, got {bad}"))),
        None => Ok(()),
    }
}

fn check_radii(radii: &[f64]) -> Result<()> {
    if radii.is_empty() {
        return Err(Error::Config("radius list is empty".into()));
    }
    match radii.iter().find(|r| !(r.is_finite() && **r > 0.0)) {
        Some(bad) => Err(Error::Config(format!("ELLC radii must be > 0, got {bad}"))),
        None => Ok(()),
    }
}

/// Provenance written next to every training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub version_tag: String,
    pub config_hash: String,
    pub seed: u64,
    pub threads: usize,
}

#[derive(Debug, Parser)]
#[command(name = "llgail", version, about = "Locally-Lipschitz GAIL on toy control tasks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum NoiseArg {
    Gaussian,
    Linf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum NormArg {
    L2,
    Linf,
}

impl From<NormArg> for Norm {
    fn from(n: NormArg) -> Norm {
        match n {
            NormArg::L2 => Norm::L2,
            NormArg::Linf => Norm::Linf,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Roll the scripted expert and write demonstrations as JSON lines.
    GenDemos {
        #[arg(long)]
        env: String,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 128)]
        horizon: usize,
    },
    /// Train from an experiment config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mean-action returns under observation noise.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated levels in normalised-observation units.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, default_value = "0,0.05,0.1,0.2,0.3,0.5")]
        noise_levels: Vec<f64>,
        #[arg(long, value_enum, default_value = "gaussian")]
        noise: NoiseArg,
        #[arg(long, default_value_t = 50)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Defaults to `noise_eval.csv` next to the checkpoint.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Empirical local Lipschitzness constant of a trained policy.
    Ellc {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        radii: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "l2")]
        norm: NormArg,
        /// Worst-case δ from projected gradient ascent instead of a random direction.
        #[arg(long)]
        adversarial: bool,
        #[arg(long, default_value_t = 10)]
        pga_steps: usize,
        /// Defaults to `ellc.csv` next to the checkpoint.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the Q-function Lipschitz bound on a synthetic MDP (or `all`).
    VerifyTheory {
        #[arg(long)]
        mdp: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

pub fn threads_from_env() -> Result<usize> {
    match std::env::var(THREADS_VAR) {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(Error::Config(format!("{THREADS_VAR} must be a positive integer, got '{v}'"))),
        },
    }
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json("report", e))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn beside(checkpoint: &Path, name: &str) -> PathBuf {
    checkpoint.parent().unwrap_or(Path::new("")).join(name)
}

pub fn run(cli: Cli) -> Result<()> {
    let threads = threads_from_env()?;
    match cli.command {
        Command::GenDemos {
            env,
            n,
            seed,
            out,
            horizon,
        } => {
            if n == 0 {
                return Err(Error::Config("--n must be >= 1".into()));
            }
            let env = EnvSpec {
                name: env.parse::<EnvKind>()?,
                horizon,
            };
            env.validate()?;
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            let demos = gen_demos(&env, n, seed, &out)?;
            let mean = demos.iter().map(|d| d.env_return).sum::<f64>() / n as f64;
            println!("wrote {n} demonstrations to {} (mean return {mean:.3})", out.display());
        }
        Command::Train { config, seed, out } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
                cfg.train.seed = s;
            }
            if let Some(o) = out {
                cfg.paths.out_dir = o;
            }
            train_experiment(&cfg, threads)?;
        }
        Command::Evaluate {
            checkpoint,
            noise_levels,
            noise,
            episodes,
            seed,
            out,
        } => {
            check_levels(&noise_levels)?;
            if episodes == 0 {
                return Err(Error::Config("--episodes must be >= 1".into()));
            }
            let ck = Checkpoint::load(&checkpoint)?;
            let kind = match noise {
                NoiseArg::Gaussian => NoiseKind::GaussianPerDim,
                NoiseArg::Linf => NoiseKind::UniformLinfBall,
            };
            let report = eval::eval_noise(&ck, &ck.env, &noise_levels, kind, episodes, seed)?;
            let path = out.unwrap_or_else(|| beside(&checkpoint, "noise_eval.csv"));
            report.write_csv(&path)?;
            for r in &report.rows {
                println!("level {:.3}: return {:.3} ± {:.3}", r.noise_level, r.mean_return, r.std_return);
            }
        }
        Command::Ellc {
            checkpoint,
            radii,
            seed,
            norm,
            adversarial,
            pga_steps,
            out,
        } => {
            check_radii(&radii)?;
            let ck = Checkpoint::load(&checkpoint)?;
            let rule = if adversarial {
                DeltaRule::Adversarial {
                    norm: norm.into(),
                    steps: pga_steps,
                }
            } else {
                DeltaRule::RandomSphere(norm.into())
            };
            let report = eval::ellc(&ck, &ck.env, &radii, rule, seed)?;
            let path = out.unwrap_or_else(|| beside(&checkpoint, "ellc.csv"));
            report.write_csv(&path)?;
            for r in &report.rows {
                println!("r_p {:.4}: ELLC {:.6} ({} samples)", r.radius, r.ellc, report.meta.samples);
            }
        }
        Command::VerifyTheory { mdp, out } => {
            let json = if mdp == "all" {
                let reports = theory::shipped()
                    .iter()
                    .map(theory::verify)
                    .collect::<Result<Vec<_>>>()?;
                serde_json::to_value(reports)
            } else {
                serde_json::to_value(theory::verify(&mdp.parse::<MdpName>()?.build())?)
            }
            .map_err(|e| Error::json("theory report", e))?;
            println!("{}", serde_json::to_string_pretty(&json).map_err(|e| Error::json("theory report", e))?);
            if let Some(path) = out {
                write_json(&json, &path)?;
            }
        }
    }
    Ok(())
}

/// Trains, then writes the config snapshot, provenance and a clean
/// evaluation next to the checkpoint.
pub fn train_experiment(cfg: &ExperimentConfig, threads: usize) -> Result<Checkpoint> {
    let hash = cfg.hash();
    let demos = load_demos(&cfg.paths.demos, &cfg.env)?;
    let paths = RunPaths {
        dir: cfg.paths.out_dir.clone(),
    };
    std::fs::create_dir_all(&paths.dir).map_err(|e| Error::io(&paths.dir, e))?;
    write_json(cfg, &paths.dir.join("config.json"))?;
    write_json(
        &RunInfo {
            version_tag: gail::CHECKPOINT_VERSION.into(),
            config_hash: hash.clone(),
            seed: cfg.seed,
            threads,
        },
        &paths.dir.join("run.json"),
    )?;
    let (ck, _) = gail::train(cfg.env, cfg.train.clone(), &demos, &hash, &paths)?;
    let clean = eval::eval_noise(&ck, &cfg.env, &[0.0], cfg.eval.noise_kind, cfg.eval.episodes, cfg.seed)?;
    clean.write_csv(&paths.dir.join("final_eval.csv"))?;
    println!(
        "trained {} iterations; clean mean-action return {:.3}; artifacts in {}",
        ck.iter,
        clean.rows[0].mean_return,
        paths.dir.display()
    );
    Ok(ck)
}

/// Parses `args`, runs the command and maps the outcome to an exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
