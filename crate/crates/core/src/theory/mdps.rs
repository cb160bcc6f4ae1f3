use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::SyntheticMdp;
use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MdpName {
    /// `s' = 0.9 s`, `r = s`: the bound is attained.
    Linear1d,
    /// `s' = 0.5 s + a`, `r = sin s`.
    Contraction1d,
    /// Two independent copies of the linear case, `r = s¹ + s²`.
    Isotropic2d,
    /// `s' = tanh s`, `r = s`.
    Tanh1d,
    /// Slope 1.5 on `|s| ≤ 1`, 0.1 outside; `γC > 1`.
    Piecewise1d,
    /// Linear case plus uniform noise of half-width 0.01.
    Stochastic1dSmall,
    /// Linear case plus uniform noise of half-width 0.05.
    Stochastic1dLarge,
}

impl MdpName {
    pub const ALL: [MdpName; 7] = [
        MdpName::Linear1d,
        MdpName::Contraction1d,
        MdpName::Isotropic2d,
        MdpName::Tanh1d,
        MdpName::Piecewise1d,
        MdpName::Stochastic1dSmall,
        MdpName::Stochastic1dLarge,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MdpName::Linear1d => "linear-1d",
            MdpName::Contraction1d => "contraction-1d",
            MdpName::Isotropic2d => "isotropic-2d",
            MdpName::Tanh1d => "tanh-1d",
            MdpName::Piecewise1d => "piecewise-1d",
            MdpName::Stochastic1dSmall => "stochastic-1d-0.01",
            MdpName::Stochastic1dLarge => "stochastic-1d-0.05",
        }
    }

    pub fn build(self) -> SyntheticMdp {
        let base = |name: &str| SyntheticMdp {
            name: name.to_string(),
            state_dim: 1,
            gamma: 0.9,
            l: 1.0,
            c: 0.9,
            lo: -1.0,
            hi: 1.0,
            actions: vec![vec![0.0]],
            dynamics: linear,
            reward: sum,
            noise: 0.0,
        };
        let name = self.as_str();
        match self {
            MdpName::Linear1d => base(name),
            MdpName::Contraction1d => SyntheticMdp {
                c: 0.5,
                lo: -2.0,
                hi: 2.0,
                actions: vec![vec![-0.3], vec![0.0], vec![0.3]],
                dynamics: contraction,
                reward: sine,
                ..base(name)
            },
            MdpName::Isotropic2d => SyntheticMdp {
                state_dim: 2,
                ..base(name)
            },
            MdpName::Tanh1d => SyntheticMdp {
                c: 1.0,
                lo: -3.0,
                hi: 3.0,
                dynamics: tanh,
                ..base(name)
            },
            MdpName::Piecewise1d => SyntheticMdp {
                c: 1.5,
                lo: -3.0,
                hi: 3.0,
                dynamics: piecewise,
                ..base(name)
            },
            MdpName::Stochastic1dSmall => SyntheticMdp {
                noise: 0.01,
                ..base(name)
            },
            MdpName::Stochastic1dLarge => SyntheticMdp {
                noise: 0.05,
                ..base(name)
            },
        }
    }
}

impl FromStr for MdpName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        MdpName::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                let known: Vec<&str> = MdpName::ALL.iter().map(|m| m.as_str()).collect();
                Error::Config(format!("unknown MDP '{s}', expected one of {}", known.join(", ")))
            })
    }
}

/// Every shipped MDP.
pub fn shipped() -> Vec<SyntheticMdp> {
    MdpName::ALL.iter().map(|m| m.build()).collect()
}

fn linear(s: &[f64], _: &[f64]) -> Vec<f64> {
    s.iter().map(|x| 0.9 * x).collect()
}

fn contraction(s: &[f64], a: &[f64]) -> Vec<f64> {
    s.iter().zip(a).map(|(x, u)| 0.5 * x + u).collect()
}

fn tanh(s: &[f64], _: &[f64]) -> Vec<f64> {
    s.iter().map(|x| x.tanh()).collect()
}

fn piecewise(s: &[f64], _: &[f64]) -> Vec<f64> {
    s.iter()
        .map(|&x| if x.abs() <= 1.0 { 1.5 * x } else { x.signum() * (1.5 + 0.1 * (x.abs() - 1.0)) })
        .collect()
}

fn sum(s: &[f64]) -> f64 {
    s.iter().sum()
}

fn sine(s: &[f64]) -> f64 {
    s[0].sin()
}
