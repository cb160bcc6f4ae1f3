//! Oracles shared by the integration tests. Nothing here calls into the
//! solver paths it is used to check.
#![allow(dead_code)]

pub mod control;

use std::io::Write;

/// Central differences, written out here so the library's own helper is not
/// its own oracle.
pub fn central_diff(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `max_i |a_i − b_i| / max(|a_i|, |b_i|, floor)`.
pub fn rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Largest singular value of a row-major `n×n` matrix by power iteration on `JᵀJ`.
pub fn op_norm(j: &[f64], n: usize) -> f64 {
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * i as f64).collect();
    let mut s = 0.0;
    for _ in 0..500 {
        let jv: Vec<f64> = (0..n).map(|r| (0..n).map(|c| j[r * n + c] * v[c]).sum()).collect();
        let w: Vec<f64> = (0..n).map(|c| (0..n).map(|r| j[r * n + c] * jv[r]).sum()).collect();
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        s = norm.sqrt();
        v = w.into_iter().map(|x| x / norm).collect();
    }
    s
}

/// Writes one verdict line straight to stderr so it shows even for passing tests.
pub fn verdict(name: &str, pass: bool, detail: &str) -> bool {
    let tag = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "[acceptance] {tag} {name}: {detail}");
    pass
}

pub fn note(line: &str) {
    let _ = writeln!(std::io::stderr(), "[acceptance]   {line}");
}
