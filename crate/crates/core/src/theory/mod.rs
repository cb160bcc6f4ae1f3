//! Numerical checks of the Lipschitz bound on the optimal Q-function:
//! value iteration on a grid, finite-difference gradients, and the
//! deterministic-dynamics slope condition.

mod mdps;

pub use mdps::{shipped, MdpName};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed-form MDP with declared Lipschitz constants.
///
/// `l` bounds every partial derivative of the reward and `c` every partial
/// derivative of the dynamics (for the shipped diagonal dynamics this is also
/// the spectral norm of the Jacobian). The reward is collected on the current
/// state, so `Q*(s,a) = r(s) + γ V*(D(s,a))`.
#[derive(Debug, Clone)]
pub struct SyntheticMdp {
    pub name: String,
    pub state_dim: usize,
    pub gamma: f64,
    pub l: f64,
    pub c: f64,
    pub lo: f64,
    pub hi: f64,
    pub actions: Vec<Vec<f64>>,
    pub dynamics: fn(&[f64], &[f64]) -> Vec<f64>,
    pub reward: fn(&[f64]) -> f64,
    /// Half-width of the uniform noise added to every coordinate of `s'`.
    pub noise: f64,
}

impl SyntheticMdp {
    pub fn is_deterministic(&self) -> bool {
        self.noise == 0.0
    }

    /// `Σ_k (γC)^k` scaled by `√N·L`, or `None` when the series diverges.
    pub fn bound(&self) -> Option<f64> {
        let gc = self.gamma * self.c;
        (gc < 1.0).then(|| (self.state_dim as f64).sqrt() * self.l / (1.0 - gc))
    }

    pub fn step<R: Rng + ?Sized>(&self, s: &[f64], a: &[f64], rng: &mut R) -> Vec<f64> {
        let mut next = (self.dynamics)(s, a);
        if self.noise > 0.0 {
            for x in next.iter_mut() {
                *x += rng.gen_range(-self.noise..=self.noise);
            }
        }
        next
    }

    fn in_box(&self, s: &[f64], margin: f64) -> bool {
        s.iter().all(|x| *x >= self.lo + margin && *x <= self.hi - margin)
    }

    /// Largest secant slope per coordinate over `pairs` random pairs differing
    /// in one coordinate: `(reward, dynamics)`.
    pub fn empirical_lipschitz(&self, pairs: usize, seed: u64) -> (f64, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut lr, mut ld) = (0.0f64, 0.0f64);
        for _ in 0..pairs {
            let s: Vec<f64> = (0..self.state_dim).map(|_| rng.gen_range(self.lo..self.hi)).collect();
            let i = rng.gen_range(0..self.state_dim);
            let mut t = s.clone();
            t[i] = rng.gen_range(self.lo..self.hi);
            let gap = (t[i] - s[i]).abs();
            if gap < 1e-9 {
                continue;
            }
            lr = lr.max(((self.reward)(&t) - (self.reward)(&s)).abs() / gap);
            let a = &self.actions[rng.gen_range(0..self.actions.len())];
            let (dt, ds) = ((self.dynamics)(&t, a), (self.dynamics)(&s, a));
            for j in 0..self.state_dim {
                ld = ld.max((dt[j] - ds[j]).abs() / gap);
            }
        }
        (lr, ld)
    }
}

/// Tabulated optimal values on a regular grid with `n` points per dimension.
#[derive(Debug, Clone)]
pub struct QTable {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    pub dim: usize,
    /// Grid spacing.
    pub h: f64,
    /// `V*` at every grid node, first coordinate fastest.
    pub v: Vec<f64>,
    pub residual: f64,
    pub sweeps: usize,
}

impl QTable {
    fn coord(&self, idx: usize, d: usize) -> f64 {
        let i = (idx / self.n.pow(d as u32)) % self.n;
        self.lo + i as f64 * self.h
    }

    fn node(&self, idx: usize) -> Vec<f64> {
        (0..self.dim).map(|d| self.coord(idx, d)).collect()
    }

    /// Multilinear interpolation weights of `s`, clamped to the box.
    fn weights(&self, s: &[f64]) -> Vec<(usize, f64)> {
        let mut out = vec![(0usize, 1.0f64)];
        for (d, &x) in s.iter().enumerate() {
            let t = ((x.clamp(self.lo, self.hi) - self.lo) / self.h).min((self.n - 1) as f64);
            let i = (t.floor() as usize).min(self.n - 2);
            let f = t - i as f64;
            let stride = self.n.pow(d as u32);
            out = out
                .into_iter()
                .flat_map(|(idx, w)| [(idx + i * stride, w * (1.0 - f)), (idx + (i + 1) * stride, w * f)])
                .collect();
        }
        out
    }

    /// Interpolated `V*`.
    pub fn value(&self, s: &[f64]) -> f64 {
        self.weights(s).iter().map(|&(i, w)| w * self.v[i]).sum()
    }

    /// `Q*(s,a) = r(s) + γ V*(D(s,a))` with the deterministic part of the dynamics.
    pub fn q(&self, mdp: &SyntheticMdp, s: &[f64], a: &[f64]) -> f64 {
        (mdp.reward)(s) + mdp.gamma * self.value(&(mdp.dynamics)(s, a))
    }

    /// Index of the action maximising `Q*(s,·)`.
    pub fn greedy(&self, mdp: &SyntheticMdp, s: &[f64]) -> usize {
        let qs: Vec<f64> = mdp.actions.iter().map(|a| self.q(mdp, s, a)).collect();
        (0..qs.len()).fold(0, |best, i| if qs[i] > qs[best] { i } else { best })
    }
}

pub const VI_TOLERANCE: f64 = 1e-8;
const VI_MAX_SWEEPS: usize = 100_000;

/// Default grid resolution: 2001 points in 1-D, 201 per axis otherwise.
pub fn default_grid(dim: usize) -> usize {
    if dim == 1 {
        2001
    } else {
        201
    }
}

/// Bellman fixed point of `V(s) = max_a r(s) + γ V(D(s,a))` on the grid.
/// Stochastic dynamics are replaced by their deterministic part.
pub fn value_iteration(mdp: &SyntheticMdp, n: usize) -> Result<QTable> {
    if n < 2 {
        return Err(Error::Config("value iteration needs at least 2 grid points per axis".into()));
    }
    if !(mdp.gamma >= 0.0 && mdp.gamma < 1.0) {
        return Err(Error::Config(format!("discount must lie in [0,1), got {}", mdp.gamma)));
    }
    let mut table = QTable {
        lo: mdp.lo,
        hi: mdp.hi,
        n,
        dim: mdp.state_dim,
        h: (mdp.hi - mdp.lo) / (n - 1) as f64,
        v: vec![0.0; n.pow(mdp.state_dim as u32)],
        residual: f64::INFINITY,
        sweeps: 0,
    };
    let nodes = table.v.len();
    let rewards: Vec<f64> = (0..nodes).map(|i| (mdp.reward)(&table.node(i))).collect();
    let successors: Vec<Vec<Vec<(usize, f64)>>> = (0..nodes)
        .map(|i| {
            let s = table.node(i);
            mdp.actions.iter().map(|a| table.weights(&(mdp.dynamics)(&s, a))).collect()
        })
        .collect();
    let mut next = vec![0.0; nodes];
    while table.sweeps < VI_MAX_SWEEPS {
        let mut residual = 0.0f64;
        for i in 0..nodes {
            let best = successors[i]
                .iter()
                .map(|ws| ws.iter().map(|&(j, w)| w * table.v[j]).sum::<f64>())
                .fold(f64::NEG_INFINITY, f64::max);
            next[i] = rewards[i] + mdp.gamma * best;
            residual = residual.max((next[i] - table.v[i]).abs());
        }
        std::mem::swap(&mut table.v, &mut next);
        table.sweeps += 1;
        table.residual = residual;
        if residual < VI_TOLERANCE {
            return Ok(table);
        }
    }
    Err(Error::NotConverged {
        iterations: table.sweeps,
        residual: table.residual,
    })
}

/// Central differences of `Q*(·, a)` at `s`, one entry per state dimension.
pub fn grad_q_fd(table: &QTable, mdp: &SyntheticMdp, s: &[f64], a: &[f64], h: f64) -> Result<Vec<f64>> {
    if !mdp.in_box(s, h) {
        return Err(Error::Config(format!("probe {s:?} is closer than {h} to the state box boundary")));
    }
    Ok((0..s.len())
        .map(|i| {
            let (mut up, mut down) = (s.to_vec(), s.to_vec());
            up[i] += h;
            down[i] -= h;
            (table.q(mdp, &up, a) - table.q(mdp, &down, a)) / (2.0 * h)
        })
        .collect())
}

/// Evenly spaced interior probe states: `per_axis` points per dimension
/// (an odd count includes the box centre).
pub fn probe_states(mdp: &SyntheticMdp, per_axis: usize, margin: f64) -> Vec<Vec<f64>> {
    let (a, b) = (mdp.lo + margin, mdp.hi - margin);
    let axis: Vec<f64> = if per_axis == 1 {
        vec![0.5 * (a + b)]
    } else {
        (0..per_axis).map(|i| a + (b - a) * i as f64 / (per_axis - 1) as f64).collect()
    };
    let mut out = vec![Vec::new()];
    for _ in 0..mdp.state_dim {
        out = out
            .into_iter()
            .flat_map(|p: Vec<f64>| {
                axis.iter().map(move |&x| {
                    let mut q = p.clone();
                    q.push(x);
                    q
                })
            })
            .collect();
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundStatus {
    Pass,
    Fail,
    /// `γC ≥ 1`: the geometric series diverges and the bound says nothing.
    NotApplicable,
}

pub const BOUND_TOLERANCE: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub mdp: String,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(rename = "C")]
    pub c: f64,
    #[serde(rename = "gamma")]
    pub gamma: f64,
    pub bound: Option<f64>,
    pub max_grad: Option<f64>,
    pub pass: Option<bool>,
    pub status: BoundStatus,
    pub probes: usize,
}

/// FD step used on the grid: a few cells wide so the piecewise-linear
/// interpolant is differenced over whole cells.
pub fn fd_step(table: &QTable) -> f64 {
    5.0 * table.h
}

/// Largest `‖∇_s Q*(s,a)‖₂` over probes and actions against `√N·L/(1−γC)`.
pub fn check_bound(mdp: &SyntheticMdp, per_axis: usize, grid: usize) -> Result<BoundReport> {
    let mut report = BoundReport {
        mdp: mdp.name.clone(),
        n: mdp.state_dim,
        l: mdp.l,
        c: mdp.c,
        gamma: mdp.gamma,
        bound: mdp.bound(),
        max_grad: None,
        pass: None,
        status: BoundStatus::NotApplicable,
        probes: 0,
    };
    let Some(bound) = report.bound else {
        return Ok(report);
    };
    let table = value_iteration(mdp, grid)?;
    let h = fd_step(&table);
    let probes = probe_states(mdp, per_axis, 2.0 * h);
    let mut max_grad = 0.0f64;
    for s in &probes {
        for a in &mdp.actions {
            let g = grad_q_fd(&table, mdp, s, a, h)?;
            max_grad = max_grad.max(g.iter().map(|x| x * x).sum::<f64>().sqrt());
        }
    }
    let pass = max_grad <= bound * (1.0 + BOUND_TOLERANCE);
    report.max_grad = Some(max_grad);
    report.pass = Some(pass);
    report.status = if pass { BoundStatus::Pass } else { BoundStatus::Fail };
    report.probes = probes.len();
    Ok(report)
}

/// Spectral norm of a small square matrix given row-major, by power iteration on `JᵀJ`.
pub fn spectral_norm(j: &[f64], n: usize) -> f64 {
    let mut v = vec![1.0; n];
    let mut sigma = 0.0;
    for _ in 0..200 {
        let jv: Vec<f64> = (0..n).map(|r| (0..n).map(|c| j[r * n + c] * v[c]).sum()).collect();
        let jtjv: Vec<f64> = (0..n).map(|c| (0..n).map(|r| j[r * n + c] * jv[r]).sum()).collect();
        let norm = jtjv.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        sigma = norm.sqrt();
        v = jtjv.iter().map(|x| x / norm).collect();
    }
    sigma
}

/// Central-difference Jacobian `∂f/∂s`, row-major.
pub fn jacobian_fd(f: impl Fn(&[f64]) -> Vec<f64>, s: &[f64], h: f64) -> Vec<f64> {
    let n = s.len();
    let mut j = vec![0.0; n * n];
    for c in 0..n {
        let (mut up, mut down) = (s.to_vec(), s.to_vec());
        up[c] += h;
        down[c] -= h;
        let (fu, fd) = (f(&up), f(&down));
        for r in 0..n {
            j[r * n + c] = (fu[r] - fd[r]) / (2.0 * h);
        }
    }
    j
}

pub const DET_TOLERANCE: f64 = 1e-6;
const DYN_FD_STEP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetConditionReport {
    pub mdp: String,
    pub max_dyn_grad: f64,
    #[serde(rename = "C")]
    pub c: f64,
    pub pass: bool,
    pub probes: usize,
}

/// `max ‖∂D(s, a*(s))/∂s‖₂` over probes with `a*` the greedy action of the
/// value-iteration solution.
pub fn check_det_condition(mdp: &SyntheticMdp, per_axis: usize, grid: usize) -> Result<DetConditionReport> {
    if !mdp.is_deterministic() {
        return Err(Error::Config(format!("{} has stochastic dynamics", mdp.name)));
    }
    let table = (mdp.actions.len() > 1).then(|| value_iteration(mdp, grid)).transpose()?;
    let probes = probe_states(mdp, per_axis, 0.0);
    let mut max_dyn_grad = 0.0f64;
    for s in &probes {
        let a = &mdp.actions[table.as_ref().map_or(0, |t| t.greedy(mdp, s))];
        let j = jacobian_fd(|x| (mdp.dynamics)(x, a), s, DYN_FD_STEP);
        max_dyn_grad = max_dyn_grad.max(spectral_norm(&j, mdp.state_dim));
    }
    Ok(DetConditionReport {
        mdp: mdp.name.clone(),
        max_dyn_grad,
        c: mdp.c,
        pass: max_dyn_grad <= mdp.c + DET_TOLERANCE,
        probes: probes.len(),
    })
}

/// `|∂/∂s^i r(s_k)|` for `k = 0..=k_max`, with the action sequence fixed to the
/// greedy choices along the unperturbed trajectory (deterministic dynamics).
pub fn per_step_reward_gradients(
    mdp: &SyntheticMdp,
    table: &QTable,
    s: &[f64],
    k_max: usize,
    h: f64,
) -> Vec<Vec<f64>> {
    let mut plan = Vec::with_capacity(k_max);
    let mut x = s.to_vec();
    for _ in 0..k_max {
        let a = mdp.actions[table.greedy(mdp, &x)].clone();
        x = (mdp.dynamics)(&x, &a);
        plan.push(a);
    }
    let roll = |start: Vec<f64>| {
        let mut x = start;
        let mut out = vec![(mdp.reward)(&x)];
        for a in &plan {
            x = (mdp.dynamics)(&x, a);
            out.push((mdp.reward)(&x));
        }
        out
    };
    let mut grads = vec![vec![0.0; s.len()]; k_max + 1];
    for i in 0..s.len() {
        let (mut up, mut down) = (s.to_vec(), s.to_vec());
        up[i] += h;
        down[i] -= h;
        let (ru, rd) = (roll(up), roll(down));
        for k in 0..=k_max {
            grads[k][i] = ((ru[k] - rd[k]) / (2.0 * h)).abs();
        }
    }
    grads
}

/// Monte-Carlo `∇_s Q(s)` for a single-action MDP: returns over a truncated
/// horizon, with the same noise sequence for the `s ± h` starts.
pub fn mc_grad_q(mdp: &SyntheticMdp, s: &[f64], horizon: usize, samples: usize, h: f64, seed: u64) -> Result<Vec<f64>> {
    if mdp.actions.len() != 1 {
        return Err(Error::Config("Monte-Carlo gradients need a single-action MDP".into()));
    }
    let a = &mdp.actions[0];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut grad = vec![0.0; s.len()];
    for _ in 0..samples {
        let noise: Vec<Vec<f64>> = (0..horizon)
            .map(|_| (0..s.len()).map(|_| rng.gen_range(-1.0..=1.0) * mdp.noise).collect())
            .collect();
        let ret = |start: &[f64]| {
            let mut x = start.to_vec();
            let mut total = 0.0;
            let mut disc = 1.0;
            for w in &noise {
                total += disc * (mdp.reward)(&x);
                disc *= mdp.gamma;
                x = (mdp.dynamics)(&x, a).iter().zip(w).map(|(y, e)| y + e).collect();
            }
            total
        };
        for i in 0..s.len() {
            let (mut up, mut down) = (s.to_vec(), s.to_vec());
            up[i] += h;
            down[i] -= h;
            grad[i] += (ret(&up) - ret(&down)) / (2.0 * h);
        }
    }
    Ok(grad.into_iter().map(|g| g / samples as f64).collect())
}

pub const MC_TOLERANCE: f64 = 5e-2;

/// Bound check for stochastic dynamics via [`mc_grad_q`].
pub fn check_bound_stochastic(
    mdp: &SyntheticMdp,
    per_axis: usize,
    samples: usize,
    seed: u64,
) -> Result<BoundReport> {
    let bound = mdp
        .bound()
        .ok_or_else(|| Error::Config(format!("{}: γC ≥ 1, bound not applicable", mdp.name)))?;
    // truncate once γ^k drops below 1e-9
    let horizon = ((1e-9f64).ln() / mdp.gamma.ln()).ceil() as usize;
    let probes = probe_states(mdp, per_axis, 0.0);
    let mut max_grad = 0.0f64;
    for (k, s) in probes.iter().enumerate() {
        let g = mc_grad_q(mdp, s, horizon, samples, 1e-3, seed.wrapping_add(k as u64))?;
        max_grad = max_grad.max(g.iter().map(|x| x * x).sum::<f64>().sqrt());
    }
    let pass = max_grad <= bound * (1.0 + MC_TOLERANCE);
    Ok(BoundReport {
        mdp: mdp.name.clone(),
        n: mdp.state_dim,
        l: mdp.l,
        c: mdp.c,
        gamma: mdp.gamma,
        bound: Some(bound),
        max_grad: Some(max_grad),
        pass: Some(pass),
        status: if pass { BoundStatus::Pass } else { BoundStatus::Fail },
        probes: probes.len(),
    })
}

/// Combined output of `verify-theory` for one MDP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub version_tag: String,
    #[serde(flatten)]
    pub bound: BoundReport,
    pub det_condition: Option<DetConditionReport>,
}

pub const DEFAULT_PROBES_PER_AXIS: usize = 101;

/// Runs every check that applies to `mdp`.
pub fn verify(mdp: &SyntheticMdp) -> Result<TheoryReport> {
    let grid = default_grid(mdp.state_dim);
    let per_axis = if mdp.state_dim == 1 { DEFAULT_PROBES_PER_AXIS } else { 11 };
    if mdp.is_deterministic() {
        Ok(TheoryReport {
            version_tag: crate::eval::REPORT_VERSION.into(),
            bound: check_bound(mdp, per_axis, grid)?,
            det_condition: Some(check_det_condition(mdp, per_axis, grid)?),
        })
    } else {
        Ok(TheoryReport {
            version_tag: crate::eval::REPORT_VERSION.into(),
            bound: check_bound_stochastic(mdp, 21, 200, 0)?,
            det_condition: None,
        })
    }
}

#[cfg(test)]
mod tests;
