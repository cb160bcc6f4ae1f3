//! Dense-grid dynamic programming for the best achievable expected return of
//! the 2-D (position, velocity) tasks, written against the closed-form
//! dynamics rather than the library's step function.

/// Physical constants copied from the task descriptions.
#[derive(Clone, Copy)]
pub struct Plant {
    pub dt: f64,
    pub damping: f64,
    pub stiffness: f64,
    pub force_bound: f64,
}

pub const POINT_MASS: Plant = Plant {
    dt: 0.1,
    damping: 0.1,
    stiffness: 0.0,
    force_bound: 1.0,
};

pub const PENDULUM: Plant = Plant {
    dt: 0.05,
    damping: 0.1,
    stiffness: 4.0,
    force_bound: 1.0,
};

pub fn bump(x: f64) -> f64 {
    1.0 / (1.0 + (x / 0.5).powi(2))
}

impl Plant {
    pub fn step(&self, x: f64, v: f64, f: f64) -> (f64, f64) {
        let v2 = v + self.dt * (f - self.damping * v - self.stiffness * x.sin());
        (x + self.dt * v2, v2)
    }
}

pub struct Grid {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
    pub n: usize,
}

impl Grid {
    fn h(&self, d: usize) -> f64 {
        (self.hi[d] - self.lo[d]) / (self.n - 1) as f64
    }

    fn interp(&self, table: &[f64], x: f64, v: f64) -> f64 {
        let n = self.n;
        let locate = |d: usize, y: f64| {
            let t = ((y - self.lo[d]) / self.h(d)).clamp(0.0, (n - 1) as f64);
            let i = (t.floor() as usize).min(n - 2);
            (i, t - i as f64)
        };
        let (i, a) = locate(0, x);
        let (j, b) = locate(1, v);
        let at = |i: usize, j: usize| table[i * n + j];
        (1.0 - a) * ((1.0 - b) * at(i, j) + b * at(i, j + 1))
            + a * ((1.0 - b) * at(i + 1, j) + b * at(i + 1, j + 1))
    }
}

/// Finite-horizon optimal value `V_0` on the grid for reward `bump(x')`
/// collected after each of `horizon` steps, maximising over `n_actions`
/// evenly spaced forces.
pub fn optimal_values(plant: &Plant, grid: &Grid, horizon: usize, n_actions: usize) -> Vec<f64> {
    let n = grid.n;
    let forces: Vec<f64> = (0..n_actions)
        .map(|k| -plant.force_bound + 2.0 * plant.force_bound * k as f64 / (n_actions - 1) as f64)
        .collect();
    let coords = |d: usize| -> Vec<f64> { (0..n).map(|i| grid.lo[d] + i as f64 * grid.h(d)).collect() };
    let (xs, vs) = (coords(0), coords(1));
    // successors and rewards do not depend on the stage
    let mut succ = Vec::with_capacity(n * n * n_actions);
    for &x in &xs {
        for &v in &vs {
            for &f in &forces {
                let (x2, v2) = plant.step(x, v, f);
                succ.push((x2, v2, bump(x2)));
            }
        }
    }
    let mut value = vec![0.0; n * n];
    for _ in 0..horizon {
        let next: Vec<f64> = (0..n * n)
            .map(|c| {
                succ[c * n_actions..(c + 1) * n_actions]
                    .iter()
                    .map(|&(x2, v2, r)| r + grid.interp(&value, x2, v2))
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        value = next;
    }
    value
}

/// Mean of `V_0` over the uniform reset box, by midpoint quadrature.
pub fn expected_optimum(plant: &Plant, grid: &Grid, horizon: usize, reset: [(f64, f64); 2]) -> f64 {
    let value = optimal_values(plant, grid, horizon, 41);
    let m = 60;
    let mut acc = 0.0;
    for i in 0..m {
        for j in 0..m {
            let x = reset[0].0 + (i as f64 + 0.5) / m as f64 * (reset[0].1 - reset[0].0);
            let v = reset[1].0 + (j as f64 + 0.5) / m as f64 * (reset[1].1 - reset[1].0);
            acc += grid.interp(&value, x, v);
        }
    }
    acc / (m * m) as f64
}
