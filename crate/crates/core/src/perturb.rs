//! Projected gradient ascent for adversarial observation perturbations and the
//! local-Lipschitzness regularisers built on top of them.
//!
//! All perturbations live in normalised-observation space and touch states
//! only; actions are never perturbed.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::divergence::jeffreys_rows;
use crate::error::{Error, Result};
use crate::nets::{Discriminator, GaussianPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Norm {
    L2,
    Linf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PerturbInit {
    Zero,
    RandomInBall,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationSpec {
    pub norm: Norm,
    pub radius: f64,
    pub steps: usize,
    /// Defaults to `2.5 · radius / steps`.
    #[serde(default)]
    pub step_size: Option<f64>,
    pub init: PerturbInit,
}

impl PerturbationSpec {
    pub fn new(norm: Norm, radius: f64, steps: usize) -> Self {
        PerturbationSpec {
            norm,
            radius,
            steps,
            step_size: None,
            init: PerturbInit::Zero,
        }
    }

    pub fn with_init(mut self, init: PerturbInit) -> Self {
        self.init = init;
        self
    }

    pub fn step_size(&self) -> f64 {
        self.step_size
            .unwrap_or(2.5 * self.radius / self.steps.max(1) as f64)
    }

    /// True when every emitted perturbation is necessarily zero.
    pub fn is_trivial(&self) -> bool {
        self.radius == 0.0 || (self.steps == 0 && self.init == PerturbInit::Zero)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius >= 0.0 && self.radius.is_finite()) {
            return Err(Error::Config(format!(
                "perturbation radius must be finite and >= 0, got {}",
                self.radius
            )));
        }
        if let Some(s) = self.step_size {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Config(format!("PGA step size must be > 0, got {s}")));
            }
        }
        Ok(())
    }
}

pub fn norm_of(delta: &[f64], norm: Norm) -> f64 {
    match norm {
        Norm::L2 => delta.iter().map(|x| x * x).sum::<f64>().sqrt(),
        Norm::Linf => delta.iter().fold(0.0, |m, x| m.max(x.abs())),
    }
}

/// Euclidean projection onto the ball of `spec.radius` in `spec.norm`.
pub fn project(delta: &[f64], spec: &PerturbationSpec) -> Vec<f64> {
    let r = spec.radius;
    match spec.norm {
        Norm::L2 => {
            let n = norm_of(delta, Norm::L2);
            // slack keeps projection idempotent under rounding
            if n <= r * (1.0 + 1e-12) {
                delta.to_vec()
            } else {
                let k = r / n;
                delta.iter().map(|x| x * k).collect()
            }
        }
        Norm::Linf => delta.iter().map(|x| x.clamp(-r, r)).collect(),
    }
}

/// Uniform sample from the ball.
pub fn sample_in_ball<R: Rng + ?Sized>(rng: &mut R, dim: usize, norm: Norm, radius: f64) -> Vec<f64> {
    match norm {
        Norm::L2 => {
            let dir = sample_on_sphere(rng, dim, Norm::L2, 1.0);
            let u: f64 = rng.gen();
            let rho = radius * u.powf(1.0 / dim as f64);
            dir.into_iter().map(|x| x * rho).collect()
        }
        Norm::Linf => (0..dim).map(|_| rng.gen_range(-radius..=radius)).collect(),
    }
}

/// Uniform sample from the sphere `‖δ‖ = radius` (for L∞, the surface of the cube).
pub fn sample_on_sphere<R: Rng + ?Sized>(rng: &mut R, dim: usize, norm: Norm, radius: f64) -> Vec<f64> {
    match norm {
        Norm::L2 => loop {
            let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let n = norm_of(&v, Norm::L2);
            if n > 1e-12 {
                break v.into_iter().map(|x| x * radius / n).collect();
            }
        },
        Norm::Linf => {
            // each face has equal area: pick one, fill the rest uniformly
            let face = rng.gen_range(0..dim);
            let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            (0..dim)
                .map(|i| {
                    if i == face {
                        sign * radius
                    } else {
                        rng.gen_range(-radius..=radius)
                    }
                })
                .collect()
        }
    }
}

/// Output of a batched projected-gradient-ascent run.
#[derive(Debug, Clone, PartialEq)]
pub struct PgaResult {
    /// Best perturbation found per row.
    pub deltas: Vec<Vec<f64>>,
    /// Objective at `deltas`.
    pub objectives: Vec<f64>,
    /// Objective at the starting point.
    pub initial: Vec<f64>,
}

impl PgaResult {
    fn zeros(rows: usize, dim: usize) -> Self {
        PgaResult {
            deltas: vec![vec![0.0; dim]; rows],
            objectives: vec![0.0; rows],
            initial: vec![0.0; rows],
        }
    }

    pub fn mean_objective(&self) -> f64 {
        if self.objectives.is_empty() {
            0.0
        } else {
            self.objectives.iter().sum::<f64>() / self.objectives.len() as f64
        }
    }
}

/// Per-row objective values plus a scalar whose gradient w.r.t. `delta` is the ascent direction.
struct Evaluated<'g> {
    values: Vec<f64>,
    surrogate: Var<'g>,
}

fn run_pga<R, F>(rows: usize, dim: usize, spec: &PerturbationSpec, rng: &mut R, objective: F) -> PgaResult
where
    R: Rng + ?Sized,
    F: for<'g> Fn(&'g Graph, Var<'g>) -> Evaluated<'g>,
{
    if spec.is_trivial() || rows == 0 {
        return PgaResult::zeros(rows, dim);
    }
    let mut delta: Vec<Vec<f64>> = match spec.init {
        PerturbInit::Zero => vec![vec![0.0; dim]; rows],
        PerturbInit::RandomInBall => (0..rows)
            .map(|_| sample_in_ball(rng, dim, spec.norm, spec.radius))
            .collect(),
    };
    let eta = spec.step_size();
    let mut best = PgaResult {
        deltas: delta.clone(),
        objectives: vec![f64::NEG_INFINITY; rows],
        initial: Vec::new(),
    };
    for k in 0..=spec.steps {
        let g = Graph::new();
        let d = g.input(Tensor::from_rows(&delta));
        let ev = objective(&g, d);
        if k == 0 {
            best.initial = ev.values.clone();
        }
        for i in 0..rows {
            if ev.values[i] > best.objectives[i] {
                best.objectives[i] = ev.values[i];
                best.deltas[i].clone_from(&delta[i]);
            }
        }
        if k == spec.steps {
            break;
        }
        let grads = g.backward(ev.surrogate).expect("scalar surrogate");
        let Some(grad) = grads.wrt(d) else { break };
        if grad.iter().any(|x| !x.is_finite()) {
            log::warn!("non-finite PGA gradient at step {k}; returning best iterate so far");
            break;
        }
        let stepped: Vec<Vec<f64>> = delta
            .iter()
            .enumerate()
            .map(|(i, row)| ascent_step(row, &grad[i * dim..(i + 1) * dim], eta, spec, 1.0))
            .collect();
        if k == 0 {
            // both objectives are close to even in δ near the origin, so the
            // antipode of the first step is an equally good start; keep whichever
            // side scores higher per row
            let mirrored: Vec<Vec<f64>> = stepped
                .iter()
                .map(|row| row.iter().map(|x| -x).collect())
                .collect();
            let g = Graph::new();
            let plus = objective(&g, g.constant(Tensor::from_rows(&stepped))).values;
            let g = Graph::new();
            let minus = objective(&g, g.constant(Tensor::from_rows(&mirrored))).values;
            delta = stepped
                .into_iter()
                .zip(mirrored)
                .zip(plus.iter().zip(&minus))
                .map(|((p, m), (fp, fm))| if fm > fp { m } else { p })
                .collect();
        } else {
            delta = stepped;
        }
    }
    for (i, o) in best.objectives.iter_mut().enumerate() {
        if !o.is_finite() {
            *o = 0.0;
            best.deltas[i] = vec![0.0; dim];
        }
    }
    best
}

fn ascent_step(row: &[f64], grad: &[f64], eta: f64, spec: &PerturbationSpec, sign: f64) -> Vec<f64> {
    let mut next = row.to_vec();
    match spec.norm {
        Norm::L2 => {
            let n = norm_of(grad, Norm::L2);
            if n > 0.0 {
                next.iter_mut()
                    .zip(grad)
                    .for_each(|(x, g)| *x += sign * eta * g / n);
            }
        }
        Norm::Linf => next.iter_mut().zip(grad).for_each(|(x, g)| {
            if *g != 0.0 {
                *x += sign * eta * g.signum()
            }
        }),
    }
    project(&next, spec)
}

fn check_batch(states: &[Vec<f64>], dim: usize, what: &str) -> Result<()> {
    if states.is_empty() {
        return Err(Error::Config(format!("{what}: empty batch")));
    }
    for s in states {
        Error::check_dim("perturbation batch", dim, s.len())?;
    }
    Ok(())
}

/// Finds `δ` maximising `|D(s+δ,a) − D(s,a)|` per pair, with the discriminator held fixed.
pub fn pga_disc<D: Discriminator, R: Rng + ?Sized>(
    disc: &D,
    states: &[Vec<f64>],
    actions: &[Vec<f64>],
    spec: &PerturbationSpec,
    rng: &mut R,
) -> Result<PgaResult> {
    check_batch(states, disc.state_dim(), "pga_disc")?;
    Error::check_dim("pga_disc actions", states.len(), actions.len())?;
    let base = disc.probs(states, actions)?;
    let s_t = Tensor::from_rows(states);
    let a_t = Tensor::from_rows(actions);
    Ok(run_pga(states.len(), disc.state_dim(), spec, rng, |g, d| {
        let s = g.constant(s_t.clone());
        let a = g.constant(a_t.clone());
        let p = disc.logits(g, s.add(d), a).sigmoid();
        let diff: Vec<f64> = p.to_vec().iter().zip(&base).map(|(x, b)| x - b).collect();
        // subgradient of |x| taken as +1 at x = 0 so ascent leaves the symmetric start
        let sign: Vec<f64> = diff.iter().map(|x| if *x < 0.0 { -1.0 } else { 1.0 }).collect();
        let surrogate = p
            .mul(g.constant(Tensor::new(vec![sign.len(), 1], sign)))
            .sum();
        Evaluated {
            values: diff.iter().map(|x| x.abs()).collect(),
            surrogate,
        }
    }))
}

/// Finds `δ` maximising `D_J(π(·|s) ‖ π(·|s+δ))` per state, with `π(·|s)` held fixed.
pub fn pga_gen<P: GaussianPolicy, R: Rng + ?Sized>(
    policy: &P,
    states: &[Vec<f64>],
    spec: &PerturbationSpec,
    rng: &mut R,
) -> Result<PgaResult> {
    check_batch(states, policy.state_dim(), "pga_gen")?;
    let s_t = Tensor::from_rows(states);
    let reference = {
        let g = Graph::new();
        let (m, l) = policy.dist_vars(&g, g.constant(s_t.clone()));
        (m.value(), l.value())
    };
    Ok(run_pga(states.len(), policy.state_dim(), spec, rng, |g, d| {
        let s = g.constant(s_t.clone());
        let (m, l) = policy.dist_vars(g, s.add(d));
        let j = jeffreys_rows(
            g.constant(reference.0.clone()),
            g.constant(reference.1.clone()),
            m,
            l,
        );
        Evaluated {
            values: j.to_vec(),
            surrogate: j.sum(),
        }
    }))
}

/// `mean |D(s+δ,a) − D(s,a)|` as a graph node, differentiable in the discriminator
/// parameters with `δ` held constant.
pub fn reg_disc_term<'g, D: Discriminator>(
    g: &'g Graph,
    disc: &D,
    states: &Tensor,
    actions: &Tensor,
    deltas: &[Vec<f64>],
) -> Var<'g> {
    let s = g.constant(states.clone());
    let a = g.constant(actions.clone());
    let d = g.constant(Tensor::from_rows(deltas));
    let clean = disc.logits(g, s, a).sigmoid();
    let shifted = disc.logits(g, s.add(d), a).sigmoid();
    shifted.sub(clean).abs().mean()
}

/// `mean D_J(π(·|s) ‖ π(·|s+δ))` as a graph node; the unperturbed distribution is
/// detached and `δ` is constant.
pub fn reg_gen_term<'g, P: GaussianPolicy>(
    g: &'g Graph,
    policy: &P,
    states: &Tensor,
    deltas: &[Vec<f64>],
) -> Var<'g> {
    let s = g.constant(states.clone());
    let d = g.constant(Tensor::from_rows(deltas));
    let (m0, l0) = policy.dist_vars(g, s);
    let (m1, l1) = policy.dist_vars(g, s.add(d));
    jeffreys_rows(m0.detach(), l0.detach(), m1, l1).mean()
}

/// Runs [`pga_disc`] and evaluates the discriminator regulariser.
pub fn reg_disc<D: Discriminator, R: Rng + ?Sized>(
    disc: &D,
    states: &[Vec<f64>],
    actions: &[Vec<f64>],
    spec: &PerturbationSpec,
    rng: &mut R,
) -> Result<f64> {
    let pga = pga_disc(disc, states, actions, spec, rng)?;
    if spec.is_trivial() {
        return Ok(0.0);
    }
    let g = Graph::new();
    Ok(reg_disc_term(
        &g,
        disc,
        &Tensor::from_rows(states),
        &Tensor::from_rows(actions),
        &pga.deltas,
    )
    .item())
}

/// Runs [`pga_gen`] and evaluates the generator regulariser.
pub fn reg_gen<P: GaussianPolicy, R: Rng + ?Sized>(
    policy: &P,
    states: &[Vec<f64>],
    spec: &PerturbationSpec,
    rng: &mut R,
) -> Result<f64> {
    let pga = pga_gen(policy, states, spec, rng)?;
    if spec.is_trivial() {
        return Ok(0.0);
    }
    let g = Graph::new();
    Ok(reg_gen_term(&g, policy, &Tensor::from_rows(states), &pga.deltas).item())
}
