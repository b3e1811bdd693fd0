//! Model state and its binding into a computation graph.

use std::collections::HashMap;

use fewlabel_autodiff::{BatchStats, Float, Graph, Tensor, Var};

use crate::error::{Error, Result};
use crate::models::params::{Init, Layout, ParamId, ParamStore};
use crate::models::spectral::{power_iteration, SpectralNormState};
use crate::rng::{fnv1a, mix64};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.999;

/// Exponential moving averages of batch statistics for one normalization layer.
///
/// The averages start at zero; `weight` tracks the total mass accumulated
/// so far (`1 - momentum^steps`) and reads are divided by it, so early
/// estimates are not pulled toward zero.
#[derive(Clone, Debug, PartialEq)]
pub struct MovingStats<F> {
    pub mean: Vec<F>,
    pub var: Vec<F>,
    pub weight: f64,
}

impl<F: Float> MovingStats<F> {
    pub fn new(channels: usize) -> Self {
        MovingStats { mean: vec![F::zero(); channels], var: vec![F::zero(); channels], weight: 0.0 }
    }

    pub fn update(&mut self, mean: &[F], var: &[F], momentum: f64) {
        let m = F::of(momentum);
        let w = F::of(1.0 - momentum);
        for (acc, &x) in self.mean.iter_mut().zip(mean) {
            *acc = m * *acc + w * x;
        }
        for (acc, &x) in self.var.iter_mut().zip(var) {
            *acc = m * *acc + w * x;
        }
        self.weight = momentum * self.weight + (1.0 - momentum);
    }

    /// Overwrites the estimate with exact statistics.
    pub fn assign(&mut self, mean: Vec<F>, var: Vec<F>) {
        self.mean = mean;
        self.var = var;
        self.weight = 1.0;
    }

    /// Debiased `(mean, var)`; zero mean and unit variance before any update.
    pub fn estimate(&self) -> (Vec<F>, Vec<F>) {
        if self.weight <= 0.0 {
            return (vec![F::zero(); self.mean.len()], vec![F::one(); self.var.len()]);
        }
        let corr = F::of(self.weight);
        (self.mean.iter().map(|&x| x / corr).collect(), self.var.iter().map(|&x| x / corr).collect())
    }
}

/// Describes one parameter tensor of a model.
#[derive(Clone, Debug)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub layout: Layout,
    pub init: Init,
    pub spectral: bool,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, shape: &[usize], layout: Layout, init: Init, spectral: bool) -> Self {
        ParamSpec { name: name.into(), shape: shape.to_vec(), layout, init, spectral }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Trainable parameters plus non-trainable buffers of one model.
#[derive(Clone, Debug)]
pub struct ModelState<F> {
    pub params: ParamStore<F>,
    /// Indexed by parameter id; present for spectrally normalized weights.
    pub spectral: Vec<Option<SpectralNormState<F>>>,
    pub norms: Vec<(String, MovingStats<F>)>,
    norm_index: HashMap<String, usize>,
    pub bn_momentum: f64,
}

impl<F: Float> ModelState<F> {
    pub fn build(specs: &[ParamSpec], norm_layers: &[(String, usize)], seed: u64) -> Self {
        let mut params = ParamStore::new();
        let mut spectral = Vec::with_capacity(specs.len());
        for p in specs {
            params.init(&p.name, &p.shape, p.layout, p.init, seed);
            spectral.push(
                p.spectral.then(|| SpectralNormState::new(p.shape[0], mix64(seed ^ fnv1a(p.name.as_bytes()) ^ 0x5a5a))),
            );
        }
        let norms: Vec<(String, MovingStats<F>)> =
            norm_layers.iter().map(|(n, c)| (n.clone(), MovingStats::new(*c))).collect();
        let norm_index = norms.iter().enumerate().map(|(i, (n, _))| (n.clone(), i)).collect();
        ModelState { params, spectral, norms, norm_index, bn_momentum: BN_MOMENTUM }
    }

    pub fn num_params(&self) -> usize {
        self.params.num_elements()
    }

    pub fn norm_stats(&self, name: &str) -> Option<&MovingStats<F>> {
        self.norm_index.get(name).map(|&i| &self.norms[i].1)
    }

    pub fn set_power_iterations(&mut self, iterations: usize) {
        for s in self.spectral.iter_mut().flatten() {
            s.iterations = iterations;
        }
    }
}

/// How a model participates in one graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Mode {
    /// Parameters are graph leaves that receive gradient.
    pub trainable: bool,
    /// Normalization layers use batch statistics.
    pub training: bool,
    /// Persist power-iteration vectors and moving statistics.
    pub update_state: bool,
}

impl Mode {
    /// Being optimized in this graph.
    pub const TRAIN: Mode = Mode { trainable: true, training: true, update_state: true };
    /// Used in training mode as a fixed function (e.g. the opponent's network).
    pub const FROZEN_TRAINING: Mode = Mode { trainable: false, training: true, update_state: false };
    /// Inference with accumulated statistics.
    pub const EVAL: Mode = Mode { trainable: false, training: false, update_state: false };
}

/// A model's state bound into one graph. Leaves and normalized weights are
/// created on first use and reused afterwards.
pub struct Session<'a, F: Float> {
    pub state: &'a mut ModelState<F>,
    pub mode: Mode,
    leaves: Vec<Option<Var>>,
    weights: Vec<Option<Var>>,
    /// When set, training-mode batch statistics are appended here as
    /// `(layer, stats, elements per channel)`.
    pub record: Option<Vec<(String, BatchStats<F>, usize)>>,
}

impl<'a, F: Float> Session<'a, F> {
    pub fn new(state: &'a mut ModelState<F>, mode: Mode) -> Self {
        let n = state.params.len();
        Session { state, mode, leaves: vec![None; n], weights: vec![None; n], record: None }
    }

    pub fn id(&self, name: &str) -> ParamId {
        self.state.params.id(name).unwrap_or_else(|| panic!("model has no parameter {name}"))
    }

    pub fn has(&self, name: &str) -> bool {
        self.state.params.id(name).is_some()
    }

    /// The raw parameter as a graph leaf.
    pub fn param(&mut self, g: &mut Graph<F>, name: &str) -> Var {
        let id = self.id(name);
        self.param_by_id(g, id)
    }

    pub fn param_by_id(&mut self, g: &mut Graph<F>, id: ParamId) -> Var {
        if let Some(v) = self.leaves[id.0] {
            return v;
        }
        let v = g.leaf(self.state.params.get(id).clone(), self.mode.trainable);
        self.leaves[id.0] = Some(v);
        v
    }

    /// The parameter as used by layers: spectrally normalized when the model
    /// declares it so.
    pub fn weight(&mut self, g: &mut Graph<F>, name: &str) -> Var {
        let id = self.id(name);
        if let Some(v) = self.weights[id.0] {
            return v;
        }
        let raw = self.param_by_id(g, id);
        let v = match &mut self.state.spectral[id.0] {
            None => raw,
            Some(st) => {
                let w = self.state.params.get(id);
                match power_iteration(w.data(), w.shape()[0], &st.u, st.iterations) {
                    Some(p) => {
                        let out = g.spectral_normalize(raw, &p.u, &p.v);
                        if self.mode.update_state {
                            st.u = p.u;
                        }
                        out
                    }
                    None => {
                        log::warn!("spectral norm undefined for zero weight {name}; using it unnormalized");
                        raw
                    }
                }
            }
        };
        self.weights[id.0] = Some(v);
        v
    }

    /// Gradients of the last backward pass, indexed like the parameter store.
    pub fn grads(&self, g: &Graph<F>) -> Vec<Option<Tensor<F>>> {
        self.leaves.iter().map(|v| v.and_then(|v| g.grad(v).cloned())).collect()
    }

    /// Standardizes `x` with batch statistics (training) or moving
    /// statistics (inference) for the named layer.
    pub fn standardize(&mut self, g: &mut Graph<F>, x: Var, layer: &str) -> Result<Var> {
        let idx = *self.state.norm_index.get(layer).unwrap_or_else(|| panic!("model has no norm layer {layer}"));
        if self.mode.training {
            if g.shape(x)[0] < 2 {
                return Err(Error::State(format!("{layer}: batch normalization in training mode needs a batch of at least 2")));
            }
            let count = g.value(x).numel() / g.shape(x)[1];
            let (out, stats) = g.batch_norm(x, F::of(BN_EPS));
            if self.mode.update_state {
                let m = self.state.bn_momentum;
                self.state.norms[idx].1.update(&stats.mean, &stats.var, m);
            }
            if let Some(rec) = &mut self.record {
                rec.push((layer.to_string(), stats, count));
            }
            Ok(out)
        } else {
            let (mean, var) = self.state.norms[idx].1.estimate();
            let inv: Vec<F> = var.iter().map(|&v| F::one() / (v + F::of(BN_EPS)).sqrt()).collect();
            let shift: Vec<F> = mean.iter().zip(&inv).map(|(&m, &i)| -m * i).collect();
            let c = inv.len();
            let sc = g.constant(Tensor::new(&[c], inv));
            let sh = g.constant(Tensor::new(&[c], shift));
            Ok(g.scale_shift(x, Some(sc), Some(sh)))
        }
    }

    /// Convolution with optional bias, `[N, C, H, W] -> [N, O, H, W]`.
    pub fn conv(&mut self, g: &mut Graph<F>, x: Var, prefix: &str) -> Var {
        let w = self.weight(g, &format!("{prefix}/kernel"));
        let y = g.conv2d(x, w);
        self.maybe_bias(g, y, prefix)
    }

    /// Dense layer `[N, in] -> [N, out]` with optional bias.
    pub fn linear(&mut self, g: &mut Graph<F>, x: Var, prefix: &str) -> Var {
        let w = self.weight(g, &format!("{prefix}/kernel"));
        let y = g.matmul(x, w);
        self.maybe_bias(g, y, prefix)
    }

    fn maybe_bias(&mut self, g: &mut Graph<F>, y: Var, prefix: &str) -> Var {
        let bname = format!("{prefix}/bias");
        if self.has(&bname) {
            let b = self.param(g, &bname);
            g.channel_bias(y, b)
        } else {
            y
        }
    }
}

/// `[N, K]` one-hot rows.
pub fn one_hot<F: Float>(labels: &[usize], k: usize) -> Tensor<F> {
    let mut t = Tensor::zeros(&[labels.len(), k]);
    for (i, &l) in labels.iter().enumerate() {
        assert!(l < k, "label {l} outside 0..{k}");
        t.data_mut()[i * k + l] = F::one();
    }
    t
}

/// Checks that every row of an `[N, K]` label tensor is a distribution.
pub fn check_label_rows<F: Float>(y: &Tensor<F>) -> Result<()> {
    let (n, k) = y.dims2();
    for i in 0..n {
        let row = &y.data()[i * k..(i + 1) * k];
        if row.iter().any(|&p| p.as_f64() < 0.0 || !p.is_finite()) {
            return Err(Error::Argument(format!("label row {i} has negative or non-finite entries")));
        }
        let s: f64 = row.iter().map(|p| p.as_f64()).sum();
        if (s - 1.0).abs() > 1e-5 {
            return Err(Error::Argument(format!("label row {i} sums to {s}, expected 1")));
        }
    }
    Ok(())
}
