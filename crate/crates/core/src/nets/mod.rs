//! Policy, value and discriminator networks plus observation normalisation.

mod gaussian;
mod mlp;
mod normalizer;

pub use gaussian::{entropy_var, log_prob_rows, DiagGaussian, HALF_LOG_2PI};
pub use mlp::{init_linear, linear, orthogonal, HeadInit, MlpSpec};
pub use normalizer::ObsNormalizer;

use rand::Rng;

use crate::autodiff::{sigmoid, Graph, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// Anything that maps a batch of normalised states to diagonal Gaussians.
pub trait GaussianPolicy {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;

    /// `(mean [B,d], log_std [B,d])` as graph nodes for states `x` (`[B, state_dim]`).
    fn dist_vars<'g>(&self, g: &'g Graph, x: Var<'g>) -> (Var<'g>, Var<'g>);

    fn dist(&self, s_norm: &[f64]) -> Result<DiagGaussian> {
        Error::check_dim("policy input", self.state_dim(), s_norm.len())?;
        let g = Graph::new();
        let x = g.constant(Tensor::row_vector(s_norm));
        let (m, l) = self.dist_vars(&g, x);
        Ok(DiagGaussian::new(m.to_vec(), l.to_vec()))
    }

    fn dists(&self, states: &[Vec<f64>]) -> Result<Vec<DiagGaussian>> {
        if states.is_empty() {
            return Ok(Vec::new());
        }
        for s in states {
            Error::check_dim("policy input", self.state_dim(), s.len())?;
        }
        let g = Graph::new();
        let x = g.constant(Tensor::from_rows(states));
        let (m, l) = self.dist_vars(&g, x);
        let (m, l) = (m.value(), l.value());
        Ok((0..states.len())
            .map(|i| DiagGaussian::new(m.row(i).to_vec(), l.row(i).to_vec()))
            .collect())
    }
}

/// Tanh MLP trunk with a linear mean head and a state-independent log-std.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    pub params: ParamStore,
    mlp: MlpSpec,
    action_dim: usize,
}

impl PolicyNet {
    pub const HIDDEN: [usize; 3] = [64, 64, 64];

    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        head: HeadInit,
        init_log_std: f64,
        rng: &mut R,
    ) -> Self {
        let mlp = Self::spec(state_dim, action_dim);
        let mut params = ParamStore::new("policy-v1");
        mlp.init(&mut params, head, rng);
        params.insert(
            "policy.log_std",
            Tensor::full(&[1, action_dim], init_log_std),
        );
        PolicyNet {
            params,
            mlp,
            action_dim,
        }
    }

    fn spec(state_dim: usize, action_dim: usize) -> MlpSpec {
        MlpSpec {
            prefix: "policy".into(),
            inputs: state_dim,
            hidden: Self::HIDDEN.to_vec(),
            outputs: action_dim,
        }
    }

    pub fn from_params(state_dim: usize, action_dim: usize, params: ParamStore) -> Result<Self> {
        let net = PolicyNet {
            mlp: Self::spec(state_dim, action_dim),
            params,
            action_dim,
        };
        check_shapes(&net.params, &net.mlp)?;
        match net.params.get("policy.log_std") {
            Some(t) if t.len() == action_dim => Ok(net),
            _ => Err(Error::Config("policy checkpoint lacks policy.log_std".into())),
        }
    }

    /// Mean head evaluated with graph-tracked parameters.
    pub fn mean_var<'g>(&self, g: &'g Graph, x: Var<'g>) -> Var<'g> {
        self.mlp.forward(g, &self.params, x)
    }

    /// Clamped `[1, action_dim]` log-std node.
    pub fn log_std_var<'g>(&self, g: &'g Graph) -> Var<'g> {
        g.param(&self.params, "policy.log_std")
            .clamp(LOG_STD_MIN, LOG_STD_MAX)
    }
}

impl GaussianPolicy for PolicyNet {
    fn state_dim(&self) -> usize {
        self.mlp.inputs
    }

    fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn dist_vars<'g>(&self, g: &'g Graph, x: Var<'g>) -> (Var<'g>, Var<'g>) {
        let mean = self.mean_var(g, x);
        let ls = self.log_std_var(g).broadcast_rows(x.rows());
        (mean, ls)
    }
}

fn check_shapes(params: &ParamStore, mlp: &MlpSpec) -> Result<()> {
    let mut fan_in = mlp.inputs;
    let layers = mlp
        .hidden
        .iter()
        .enumerate()
        .map(|(i, &h)| (format!("{}.h{i}", mlp.prefix), h))
        .chain(std::iter::once((format!("{}.out", mlp.prefix), mlp.outputs)));
    for (name, out) in layers {
        let w = params
            .get(&format!("{name}.w"))
            .ok_or_else(|| Error::Config(format!("missing parameter {name}.w")))?;
        let b = params
            .get(&format!("{name}.b"))
            .ok_or_else(|| Error::Config(format!("missing parameter {name}.b")))?;
        if w.shape != [fan_in, out] || b.len() != out {
            return Err(Error::Config(format!(
                "parameter {name} has shape {:?}, expected [{fan_in}, {out}]",
                w.shape
            )));
        }
        fan_in = out;
    }
    Ok(())
}

/// State-value network with the policy's trunk shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueNet {
    pub params: ParamStore,
    mlp: MlpSpec,
}

impl ValueNet {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, rng: &mut R) -> Self {
        let mlp = Self::spec(state_dim);
        let mut params = ParamStore::new("value-v1");
        mlp.init(&mut params, HeadInit::Orthogonal(1.0), rng);
        ValueNet { params, mlp }
    }

    fn spec(state_dim: usize) -> MlpSpec {
        MlpSpec {
            prefix: "value".into(),
            inputs: state_dim,
            hidden: PolicyNet::HIDDEN.to_vec(),
            outputs: 1,
        }
    }

    pub fn from_params(state_dim: usize, params: ParamStore) -> Result<Self> {
        let net = ValueNet {
            mlp: Self::spec(state_dim),
            params,
        };
        check_shapes(&net.params, &net.mlp)?;
        Ok(net)
    }

    /// `[B,1]` values.
    pub fn forward<'g>(&self, g: &'g Graph, x: Var<'g>) -> Var<'g> {
        self.mlp.forward(g, &self.params, x)
    }

    pub fn values(&self, states: &[Vec<f64>]) -> Vec<f64> {
        if states.is_empty() {
            return Vec::new();
        }
        let g = Graph::new();
        let x = g.constant(Tensor::from_rows(states));
        self.forward(&g, x).to_vec()
    }
}

/// Classifier over `(state, action)`: probability that the pair came from the policy.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorNet {
    pub params: ParamStore,
    mlp: MlpSpec,
    state_dim: usize,
    action_dim: usize,
}

impl DiscriminatorNet {
    pub const HIDDEN: [usize; 2] = [100, 100];

    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        head: HeadInit,
        rng: &mut R,
    ) -> Self {
        let mlp = Self::spec(state_dim, action_dim);
        let mut params = ParamStore::new("disc-v1");
        mlp.init(&mut params, head, rng);
        DiscriminatorNet {
            params,
            mlp,
            state_dim,
            action_dim,
        }
    }

    fn spec(state_dim: usize, action_dim: usize) -> MlpSpec {
        MlpSpec {
            prefix: "disc".into(),
            inputs: state_dim + action_dim,
            hidden: Self::HIDDEN.to_vec(),
            outputs: 1,
        }
    }

    pub fn from_params(state_dim: usize, action_dim: usize, params: ParamStore) -> Result<Self> {
        let net = DiscriminatorNet {
            mlp: Self::spec(state_dim, action_dim),
            params,
            state_dim,
            action_dim,
        };
        check_shapes(&net.params, &net.mlp)?;
        Ok(net)
    }

}

/// Scores `(state, action)` pairs through a sigmoid of a logit.
pub trait Discriminator {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;

    /// `[B,1]` logits for states `[B,state_dim]` and actions `[B,action_dim]`.
    fn logits<'g>(&self, g: &'g Graph, s: Var<'g>, a: Var<'g>) -> Var<'g>;

    /// `D(s, a)` for a batch of pairs.
    fn probs(&self, states: &[Vec<f64>], actions: &[Vec<f64>]) -> Result<Vec<f64>> {
        Error::check_dim("discriminator batch", states.len(), actions.len())?;
        if states.is_empty() {
            return Ok(Vec::new());
        }
        for (s, a) in states.iter().zip(actions) {
            Error::check_dim("discriminator state", self.state_dim(), s.len())?;
            Error::check_dim("discriminator action", self.action_dim(), a.len())?;
        }
        let g = Graph::new();
        let s = g.constant(Tensor::from_rows(states));
        let a = g.constant(Tensor::from_rows(actions));
        Ok(self.logits(&g, s, a).to_vec().into_iter().map(sigmoid).collect())
    }

    fn prob(&self, s_norm: &[f64], a: &[f64]) -> Result<f64> {
        Ok(self.probs(&[s_norm.to_vec()], &[a.to_vec()])?[0])
    }
}

impl Discriminator for DiscriminatorNet {
    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn logits<'g>(&self, g: &'g Graph, s: Var<'g>, a: Var<'g>) -> Var<'g> {
        self.mlp.forward(g, &self.params, s.concat_cols(a))
    }
}
