//! Bias-free deep ReLU network `s(x) = W_L phi(W_{L-1} ... phi(W_1 x))`.
//!
//! The network is piecewise linear: on the region containing `x` its input
//! Jacobian is `W_L D_{L-1} W_{L-1} ... D_1 W_1` where `D_l` is the 0/1
//! activation pattern of layer `l` (`1` when the pre-activation is `>= 0`).

use std::path::Path;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{axpy, Matrix};
use crate::rng::Rng;

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub d_in: usize,
    pub d_out: usize,
    /// hidden width `m`
    pub width: usize,
    /// number of weight matrices `L`
    pub depth: usize,
}

impl Dims {
    /// Square network (`d_out == d_in`), the score-network shape.
    pub fn square(d: usize, width: usize, depth: usize) -> Self {
        Self {
            d_in: d,
            d_out: d,
            width,
            depth,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.depth < 2 {
            return Err(Error::invalid(format!("depth must be >= 2, got {}", self.depth)));
        }
        if self.width == 0 || self.d_in == 0 || self.d_out == 0 {
            return Err(Error::invalid(format!("dimensions must be positive: {self:?}")));
        }
        Ok(())
    }

    fn layer_shape(&self, l: usize) -> (usize, usize) {
        let rows = if l + 1 == self.depth { self.d_out } else { self.width };
        let cols = if l == 0 { self.d_in } else { self.width };
        (rows, cols)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    dims: Dims,
    layers: Vec<Matrix>,
}

/// Per-layer quantities of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `s_0 .. s_{L-1}`; `s_0` is the input.
    pub inputs: Vec<Vec<f64>>,
    /// `W_l s_{l-1}` for the hidden layers `1 .. L-1`.
    pub preacts: Vec<Vec<f64>>,
    /// Diagonal of `D_l`.
    pub masks: Vec<Vec<bool>>,
}

/// Gradients w.r.t. each weight matrix, same shapes as the layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub layers: Vec<Matrix>,
    /// gradient w.r.t. the input `x`
    pub input: Vec<f64>,
}

impl MlpParams {
    /// Gaussian initialisation: hidden layers `N(0, 2/m)`, output layer
    /// `N(0, 1/d_in)`.
    pub fn init(dims: Dims, rng: &mut Rng) -> Result<Self> {
        dims.validate()?;
        let hidden = Normal::new(0.0, (2.0 / dims.width as f64).sqrt()).expect("finite std");
        let output = Normal::new(0.0, (1.0 / dims.d_in as f64).sqrt()).expect("finite std");
        let layers = (0..dims.depth)
            .map(|l| {
                let (r, c) = dims.layer_shape(l);
                let dist = if l + 1 == dims.depth { &output } else { &hidden };
                Matrix::from_fn(r, c, |_, _| dist.sample(rng))
            })
            .collect();
        Ok(Self { dims, layers })
    }

    pub fn from_layers(dims: Dims, layers: Vec<Matrix>) -> Result<Self> {
        dims.validate()?;
        if layers.len() != dims.depth {
            return Err(Error::invalid(format!(
                "expected {} layers, got {}",
                dims.depth,
                layers.len()
            )));
        }
        for (l, w) in layers.iter().enumerate() {
            if w.shape() != dims.layer_shape(l) {
                return Err(Error::invalid(format!(
                    "layer {} has shape {:?}, expected {:?}",
                    l + 1,
                    w.shape(),
                    dims.layer_shape(l)
                )));
            }
            if !w.is_finite() {
                return Err(Error::invalid(format!("layer {} has non-finite weights", l + 1)));
            }
        }
        Ok(Self { dims, layers })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn layers(&self) -> &[Matrix] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Matrix] {
        &mut self.layers
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(Matrix::is_finite)
    }

    pub fn forward(&self, x: &[f64]) -> (Vec<f64>, ForwardCache) {
        assert_eq!(x.len(), self.dims.d_in, "input dimension mismatch");
        let hidden = self.dims.depth - 1;
        let mut inputs = Vec::with_capacity(hidden + 1);
        let mut preacts = Vec::with_capacity(hidden);
        let mut masks = Vec::with_capacity(hidden);
        inputs.push(x.to_vec());
        for w in &self.layers[..hidden] {
            let z = w.matvec(inputs.last().expect("non-empty"));
            let mask: Vec<bool> = z.iter().map(|&v| v >= 0.0).collect();
            let s = z.iter().map(|&v| v.max(0.0)).collect();
            preacts.push(z);
            masks.push(mask);
            inputs.push(s);
        }
        let y = self.layers[hidden].matvec(inputs.last().expect("non-empty"));
        (
            y,
            ForwardCache {
                inputs,
                preacts,
                masks,
            },
        )
    }

    /// Output only.
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        let hidden = self.dims.depth - 1;
        for w in &self.layers[..hidden] {
            cur = w.matvec(&cur);
            cur.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        self.layers[hidden].matvec(&cur)
    }

    /// Vector-Jacobian product through the cached activation pattern:
    /// returns `J^T v` (the input gradient of `<v, s(x)>`).
    pub fn vjp_input(&self, cache: &ForwardCache, v: &[f64]) -> Vec<f64> {
        let hidden = self.dims.depth - 1;
        let mut delta = self.layers[hidden].matvec_t(v);
        for l in (0..hidden).rev() {
            for (dv, &on) in delta.iter_mut().zip(&cache.masks[l]) {
                if !on {
                    *dv = 0.0;
                }
            }
            delta = self.layers[l].matvec_t(&delta);
        }
        delta
    }

    /// Gradients of `<grad_y, s(x)>` w.r.t. every weight matrix and the input.
    pub fn backward(&self, cache: &ForwardCache, grad_y: &[f64]) -> Grads {
        assert_eq!(grad_y.len(), self.dims.d_out);
        let hidden = self.dims.depth - 1;
        let mut layers: Vec<Matrix> = self
            .layers
            .iter()
            .map(|w| Matrix::zeros(w.rows(), w.cols()))
            .collect();
        layers[hidden].add_outer(1.0, grad_y, &cache.inputs[hidden]);
        let mut delta = self.layers[hidden].matvec_t(grad_y);
        for l in (0..hidden).rev() {
            for (dv, &on) in delta.iter_mut().zip(&cache.masks[l]) {
                if !on {
                    *dv = 0.0;
                }
            }
            layers[l].add_outer(1.0, &delta, &cache.inputs[l]);
            delta = self.layers[l].matvec_t(&delta);
        }
        Grads {
            layers,
            input: delta,
        }
    }

    /// One in-place step `W <- W - eta * d<grad_y, s(x)>/dW`, fused with the
    /// backward pass.
    pub fn sgd_step(&mut self, cache: &ForwardCache, grad_y: &[f64], eta: f64) {
        let hidden = self.dims.depth - 1;
        let mut delta = self.layers[hidden].matvec_t(grad_y);
        self.layers[hidden].add_outer(-eta, grad_y, &cache.inputs[hidden]);
        for l in (0..hidden).rev() {
            for (dv, &on) in delta.iter_mut().zip(&cache.masks[l]) {
                if !on {
                    *dv = 0.0;
                }
            }
            let next = if l > 0 {
                Some(self.layers[l].matvec_t(&delta))
            } else {
                None
            };
            self.layers[l].add_outer(-eta, &delta, &cache.inputs[l]);
            match next {
                Some(n) => delta = n,
                None => break,
            }
        }
    }

    /// Applies `W <- W - eta * g` for accumulated gradients.
    pub fn apply(&mut self, grads: &[Matrix], eta: f64) {
        for (w, g) in self.layers.iter_mut().zip(grads) {
            w.add_scaled(-eta, g);
        }
    }

    /// Exact Jacobian `W_L D_{L-1} W_{L-1} ... D_1 W_1` of the linear region
    /// recorded in `cache`, shape `d_out x d_in`.
    pub fn input_jacobian(&self, cache: &ForwardCache) -> Matrix {
        let hidden = self.dims.depth - 1;
        let mut acc = self.layers[0].clone();
        for l in 0..hidden {
            for (r, &on) in cache.masks[l].iter().enumerate() {
                if !on {
                    acc.row_mut(r).iter_mut().for_each(|v| *v = 0.0);
                }
            }
            acc = self.layers[l + 1].matmul(&acc);
        }
        acc
    }

    /// Row `j` of the input Jacobian, `d s_j / d x`, by one reverse pass.
    pub fn jacobian_row(&self, cache: &ForwardCache, j: usize) -> Vec<f64> {
        let mut e = vec![0.0; self.dims.d_out];
        e[j] = 1.0;
        self.vjp_input(cache, &e)
    }

    /// `d s_j / d x_j` for every `j`, via one reverse pass per output without
    /// forming the full Jacobian.
    pub fn jacobian_diag(&self, cache: &ForwardCache) -> Vec<f64> {
        let n = self.dims.d_in.min(self.dims.d_out);
        (0..n).map(|j| self.jacobian_row(cache, j)[j]).collect()
    }

    /// Sets every weight to zero in the output layer (handy as a reference
    /// "zero network").
    pub fn zero_output(&mut self) {
        let last = self.layers.len() - 1;
        self.layers[last].scale(0.0);
    }
}

impl Grads {
    pub fn dot(&self, other: &[Matrix]) -> f64 {
        self.layers
            .iter()
            .zip(other)
            .map(|(a, b)| a.frobenius_dot(b))
            .sum()
    }

    pub fn accumulate(&mut self, other: &Grads, alpha: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.add_scaled(alpha, b);
        }
        axpy(alpha, &other.input, &mut self.input);
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    dims: Dims,
    weights: Vec<Vec<f64>>,
}

impl MlpParams {
    pub fn to_json(&self) -> Result<String> {
        let ck = Checkpoint {
            version: CHECKPOINT_VERSION,
            dims: self.dims,
            weights: self.layers.iter().map(|w| w.as_slice().to_vec()).collect(),
        };
        Ok(serde_json::to_string(&ck)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::format(
                "checkpoint",
                format!("unsupported version {}", ck.version),
            ));
        }
        ck.dims.validate()?;
        if ck.weights.len() != ck.dims.depth {
            return Err(Error::format(
                "checkpoint",
                format!("{} weight arrays for depth {}", ck.weights.len(), ck.dims.depth),
            ));
        }
        let layers = ck
            .weights
            .into_iter()
            .enumerate()
            .map(|(l, data)| {
                let (r, c) = ck.dims.layer_shape(l);
                if data.len() != r * c {
                    return Err(Error::format(
                        "checkpoint",
                        format!("layer {} has {} entries, expected {r}x{c}", l + 1, data.len()),
                    ));
                }
                Ok(Matrix::from_vec(r, c, data))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_layers(ck.dims, layers)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
