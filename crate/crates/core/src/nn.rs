//! Small neural-network building blocks on top of [`crate::diffgraph`]:
//! dense ReLU networks, an Adam optimizer, and seeded RNG helpers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffgraph::{self, Tape, Tensor, Var};

pub type SeededRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub(crate) fn normal_vec(rng: &mut impl Rng, n: usize, std: f64) -> Vec<f64> {
    (0..n)
        .map(|_| std * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Anything holding trainable tensors in a fixed order.
pub trait Parameters {
    fn params(&self) -> Vec<&Tensor>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;

    /// Records every parameter as a tape leaf, in `params()` order.
    fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.params()
            .into_iter()
            .map(|t| tape.leaf(t.clone()))
            .collect()
    }
}

/// Fully connected network with ReLU between layers and a linear output.
///
/// Layer `i` holds a weight `[in, out]` and a bias `[out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<Tensor>,
}

impl Mlp {
    /// `sizes` lists the input width, each hidden width, then the output
    /// width. Hidden weights use He-normal init, the output layer
    /// `N(0, 1/fan_in)`; biases start at zero.
    pub fn new(sizes: &[usize], rng: &mut impl Rng) -> Self {
        assert!(sizes.len() >= 2 && sizes.iter().all(|&s| s > 0));
        let mut params = Vec::new();
        let n_layers = sizes.len() - 1;
        for (i, w) in sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let gain = if i + 1 < n_layers { 2.0 } else { 1.0 };
            let std = (gain / fan_in as f64).sqrt();
            params.push(
                Tensor::matrix(fan_in, fan_out, normal_vec(rng, fan_in * fan_out, std))
                    .expect("finite init"),
            );
            params.push(Tensor::zeros(&[fan_out]));
        }
        Self {
            sizes: sizes.to_vec(),
            params,
        }
    }

    pub fn from_params(sizes: Vec<usize>, params: Vec<Tensor>) -> diffgraph::Result<Self> {
        if sizes.len() < 2 || params.len() != 2 * (sizes.len() - 1) {
            return Err(diffgraph::GraphError::Invalid {
                op: "mlp",
                msg: format!("{} tensors for layer sizes {:?}", params.len(), sizes),
            });
        }
        for (i, w) in sizes.windows(2).enumerate() {
            let (ws, bs) = (params[2 * i].shape(), params[2 * i + 1].shape());
            if ws != [w[0], w[1]] || bs != [w[1]] {
                return Err(diffgraph::GraphError::ShapeMismatch {
                    op: "mlp",
                    lhs: ws.to_vec(),
                    rhs: vec![w[0], w[1]],
                });
            }
        }
        Ok(Self { sizes, params })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    /// Applies the network row-wise to an `[n, input_dim]` node.
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> diffgraph::Result<Var> {
        let n = tape.shape(x)[0];
        let n_layers = self.sizes.len() - 1;
        let mut h = x;
        for i in 0..n_layers {
            let z = tape.matmul(h, vars[2 * i])?;
            let b = tape.broadcast(vars[2 * i + 1], vec![n, self.sizes[i + 1]])?;
            h = tape.add(z, b)?;
            if i + 1 < n_layers {
                h = tape.relu(h)?;
            }
        }
        Ok(h)
    }
}

impl Parameters for Mlp {
    fn params(&self) -> Vec<&Tensor> {
        self.params.iter().collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.params.iter_mut().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment buffers are created lazily on the
/// first step and keyed by parameter position.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Self {
            cfg,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Descent step `θ ← θ − lr · m̂ / (√v̂ + ε)`.
    pub fn step(&mut self, params: Vec<&mut Tensor>, grads: &[Tensor]) {
        assert_eq!(params.len(), grads.len());
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (((x, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let update = lr * (*mi / c1) / ((*vi / c2).sqrt() + eps);
                *x -= update;
            }
        }
    }
}
