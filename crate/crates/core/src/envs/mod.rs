//! Small deterministic continuous-control tasks with scripted experts.
//!
//! All three tasks use semi-implicit Euler integration and a bounded bump
//! reward `1 / (1 + (x/w)²)` on the position-like coordinates, so both the
//! transition map and the reward are globally Lipschitz in the state.

mod noise;

pub use noise::{NoiseKind, NoiseSpec};

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_HORIZON: usize = 128;

/// Width of the reward bump around the goal.
const BUMP_WIDTH: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnvKind {
    /// Point mass in the plane, state `(px, py, vx, vy)`, force action per axis.
    PointReach2D,
    /// Damped unit mass on a line, state `(x, v)`, force action.
    DoubleIntegrator1D,
    /// Damped pendulum, state `(θ, ω)`, torque action; gravity-like restoring term `−k sin θ`.
    SpringPendulum,
}

impl std::str::FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "PointReach2D" => Ok(EnvKind::PointReach2D),
            "DoubleIntegrator1D" => Ok(EnvKind::DoubleIntegrator1D),
            "SpringPendulum" => Ok(EnvKind::SpringPendulum),
            other => Err(Error::Config(format!("unknown env {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSpec {
    pub name: EnvKind,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
}

fn default_horizon() -> usize {
    DEFAULT_HORIZON
}

/// Physical constants of one task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dynamics {
    pub dt: f64,
    pub mass: f64,
    pub damping: f64,
    /// Restoring coefficient (pendulum only).
    pub stiffness: f64,
    pub action_bound: f64,
}

const POINT_MASS: Dynamics = Dynamics {
    dt: 0.1,
    mass: 1.0,
    damping: 0.1,
    stiffness: 0.0,
    action_bound: 1.0,
};

const PENDULUM: Dynamics = Dynamics {
    dt: 0.05,
    mass: 1.0,
    damping: 0.1,
    stiffness: 4.0,
    action_bound: 1.0,
};

/// `1 / (1 + (x/w)²)`
pub fn bump(x: f64) -> f64 {
    let z = x / BUMP_WIDTH;
    1.0 / (1.0 + z * z)
}

/// Largest slope of [`bump`]: `3√3 / (8w)`, attained at `x = ±w/√3`.
pub fn bump_lipschitz() -> f64 {
    3.0 * 3f64.sqrt() / (8.0 * BUMP_WIDTH)
}

/// Largest singular value of `[[a, b], [c, d]]`.
pub fn spectral_norm_2x2(a: f64, b: f64, c: f64, d: f64) -> f64 {
    let s = a * a + b * b + c * c + d * d;
    let det = a * d - b * c;
    ((s + (s * s - 4.0 * det * det).max(0.0).sqrt()) / 2.0).sqrt()
}

impl EnvSpec {
    pub fn new(name: EnvKind) -> Self {
        EnvSpec {
            name,
            horizon: DEFAULT_HORIZON,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("env horizon must be >= 1".into()));
        }
        Ok(())
    }

    pub fn dynamics(&self) -> Dynamics {
        match self.name {
            EnvKind::PointReach2D | EnvKind::DoubleIntegrator1D => POINT_MASS,
            EnvKind::SpringPendulum => PENDULUM,
        }
    }

    pub fn state_dim(&self) -> usize {
        match self.name {
            EnvKind::PointReach2D => 4,
            EnvKind::DoubleIntegrator1D | EnvKind::SpringPendulum => 2,
        }
    }

    pub fn action_dim(&self) -> usize {
        match self.name {
            EnvKind::PointReach2D => 2,
            EnvKind::DoubleIntegrator1D | EnvKind::SpringPendulum => 1,
        }
    }

    /// Symmetric per-dimension action bounds `[-b, b]`.
    pub fn action_bounds(&self) -> Vec<(f64, f64)> {
        let b = self.dynamics().action_bound;
        vec![(-b, b); self.action_dim()]
    }

    /// Per-dimension `(lo, hi)` of the uniform initial-state box.
    pub fn reset_box(&self) -> Vec<(f64, f64)> {
        let (pos, vel) = ((-1.5, 1.5), (-0.5, 0.5));
        match self.name {
            EnvKind::PointReach2D => vec![pos, pos, vel, vel],
            EnvKind::DoubleIntegrator1D | EnvKind::SpringPendulum => vec![pos, vel],
        }
    }

    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.reset_box()
            .into_iter()
            .map(|(lo, hi)| rng.gen_range(lo..hi))
            .collect()
    }

    pub fn clip_action(&self, a: &[f64]) -> Vec<f64> {
        let b = self.dynamics().action_bound;
        a.iter().map(|x| x.clamp(-b, b)).collect()
    }

    /// Deterministic transition. The action is clipped to its bounds first.
    pub fn next_state(&self, s: &[f64], a: &[f64]) -> Vec<f64> {
        let p = self.dynamics();
        let a = self.clip_action(a);
        // semi-implicit Euler: velocity first, then position with the new velocity
        let axis = |x: f64, v: f64, f: f64, restoring: f64| {
            let v2 = v + p.dt * (f / p.mass - p.damping * v - restoring);
            (x + p.dt * v2, v2)
        };
        match self.name {
            EnvKind::DoubleIntegrator1D => {
                let (x, v) = axis(s[0], s[1], a[0], 0.0);
                vec![x, v]
            }
            EnvKind::PointReach2D => {
                let (x, vx) = axis(s[0], s[2], a[0], 0.0);
                let (y, vy) = axis(s[1], s[3], a[1], 0.0);
                vec![x, y, vx, vy]
            }
            EnvKind::SpringPendulum => {
                let (th, w) = axis(s[0], s[1], a[0], p.stiffness * s[0].sin());
                vec![th, w]
            }
        }
    }

    /// Task reward of a state.
    pub fn reward(&self, s: &[f64]) -> f64 {
        match self.name {
            EnvKind::DoubleIntegrator1D | EnvKind::SpringPendulum => bump(s[0]),
            EnvKind::PointReach2D => 0.5 * (bump(s[0]) + bump(s[1])),
        }
    }

    /// `(s', r(s'))`. A non-finite successor is an error.
    pub fn step(&self, s: &[f64], a: &[f64]) -> Result<(Vec<f64>, f64)> {
        Error::check_dim("env state", self.state_dim(), s.len())?;
        Error::check_dim("env action", self.action_dim(), a.len())?;
        let next = self.next_state(s, a);
        if next.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("{:?} state {next:?}", self.name)));
        }
        let r = self.reward(&next);
        Ok((next, r))
    }

    /// Global Lipschitz constant of the transition map in the state (L2 norm),
    /// exact: the spectral norm of its Jacobian, which is constant for the
    /// point masses and extreme at `cos θ = ±1` for the pendulum.
    pub fn dynamics_lipschitz(&self) -> f64 {
        let p = self.dynamics();
        let keep = 1.0 - p.damping * p.dt;
        let jac_norm = |cos: f64| {
            let k = p.stiffness * cos;
            spectral_norm_2x2(1.0 - p.dt * p.dt * k, p.dt * keep, -p.dt * k, keep)
        };
        match self.name {
            EnvKind::PointReach2D | EnvKind::DoubleIntegrator1D => jac_norm(0.0),
            // the norm is convex in the Jacobian, which is affine in cos θ
            EnvKind::SpringPendulum => jac_norm(1.0).max(jac_norm(-1.0)),
        }
    }

    /// Global Lipschitz constant of [`EnvSpec::reward`] in the state (L2 norm).
    pub fn reward_lipschitz(&self) -> f64 {
        match self.name {
            EnvKind::DoubleIntegrator1D | EnvKind::SpringPendulum => bump_lipschitz(),
            EnvKind::PointReach2D => 0.5 * 2f64.sqrt() * bump_lipschitz(),
        }
    }

    /// Saturated PD controller towards the origin.
    pub fn scripted_expert(&self, s: &[f64]) -> Vec<f64> {
        let (kp, kd) = self.expert_gains();
        let a = match self.name {
            EnvKind::DoubleIntegrator1D | EnvKind::SpringPendulum => vec![-kp * s[0] - kd * s[1]],
            EnvKind::PointReach2D => vec![-kp * s[0] - kd * s[2], -kp * s[1] - kd * s[3]],
        };
        self.clip_action(&a)
    }

    /// Proportional and derivative gains of the scripted expert (shared by all tasks).
    pub fn expert_gains(&self) -> (f64, f64) {
        (4.0, 3.0)
    }

    /// Runs one full-horizon episode from `s0` with `act` choosing actions.
    pub fn rollout(&self, s0: Vec<f64>, mut act: impl FnMut(&[f64]) -> Vec<f64>) -> Result<Trajectory> {
        let mut traj = Trajectory::default();
        let mut s = s0;
        for _ in 0..self.horizon {
            let a = self.clip_action(&act(&s));
            let (next, r) = self.step(&s, &a)?;
            traj.states.push(std::mem::replace(&mut s, next));
            traj.actions.push(a);
            traj.env_rewards.push(r);
        }
        Ok(traj)
    }

    pub fn expert_episode<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Trajectory> {
        let s0 = self.reset(rng);
        self.rollout(s0, |s| self.scripted_expert(s))
    }
}

/// One episode. States exclude the terminal state, so all three sequences align.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub env_rewards: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn env_return(&self) -> f64 {
        self.env_rewards.iter().sum()
    }
}

/// One line of a demonstration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemoRecord {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub env_return: f64,
}

impl From<&Trajectory> for DemoRecord {
    fn from(t: &Trajectory) -> Self {
        DemoRecord {
            states: t.states.clone(),
            actions: t.actions.clone(),
            env_return: t.env_return(),
        }
    }
}

/// Expert demonstrations, one trajectory per reset drawn from `seed`.
pub fn expert_demos(env: &EnvSpec, n_traj: usize, seed: u64) -> Result<Vec<DemoRecord>> {
    if n_traj == 0 {
        return Err(Error::Config("need at least one demonstration".into()));
    }
    env.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_traj)
        .map(|_| env.expert_episode(&mut rng).map(|t| DemoRecord::from(&t)))
        .collect()
}

/// Writes [`expert_demos`] as JSON lines.
pub fn gen_demos(env: &EnvSpec, n_traj: usize, seed: u64, path: &Path) -> Result<Vec<DemoRecord>> {
    let demos = expert_demos(env, n_traj, seed)?;
    write_demos(&demos, path)?;
    Ok(demos)
}

pub fn write_demos(demos: &[DemoRecord], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for d in demos {
        let line = serde_json::to_string(d).map_err(|e| Error::json("demo record", e))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a JSON-lines demo file and checks every record against `env`.
pub fn load_demos(path: &Path, env: &EnvSpec) -> Result<Vec<DemoRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut demos = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DemoRecord = serde_json::from_str(&line)
            .map_err(|e| Error::json(format!("{} line {}", path.display(), i + 1), e))?;
        if rec.states.len() != rec.actions.len() || rec.states.is_empty() {
            return Err(Error::Config(format!(
                "{} line {}: {} states vs {} actions",
                path.display(),
                i + 1,
                rec.states.len(),
                rec.actions.len()
            )));
        }
        for (s, a) in rec.states.iter().zip(&rec.actions) {
            Error::check_dim("demo state", env.state_dim(), s.len())?;
            Error::check_dim("demo action", env.action_dim(), a.len())?;
        }
        demos.push(rec);
    }
    if demos.is_empty() {
        return Err(Error::Config(format!("{}: no demonstrations", path.display())));
    }
    Ok(demos)
}
