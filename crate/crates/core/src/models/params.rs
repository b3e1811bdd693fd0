//! Named parameter and buffer storage.

use std::collections::HashMap;

use fewlabel_autodiff::{Float, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::rng::{fnv1a, mix64};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// How a tensor is laid out internally, for reporting reference shapes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layout {
    /// `[out, in, kh, kw]`, reported as `(kh, kw, in, out)`.
    Conv,
    /// Stored as reported.
    Plain,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// Glorot uniform over `fan_in + fan_out`.
    Glorot,
    Normal(f64),
}

#[derive(Clone, Debug)]
pub struct ParamStore<F> {
    names: Vec<String>,
    values: Vec<Tensor<F>>,
    layouts: Vec<Layout>,
    index: HashMap<String, usize>,
}

impl<F: Float> Default for ParamStore<F> {
    fn default() -> Self {
        ParamStore { names: Vec::new(), values: Vec::new(), layouts: Vec::new(), index: HashMap::new() }
    }
}

impl<F: Float> ParamStore<F> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<F>, layout: Layout) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.values.push(value);
        self.layouts.push(layout);
        ParamId(self.names.len() - 1)
    }

    /// Adds a tensor initialized from a generator seeded by `(seed, name)`.
    pub fn init(&mut self, name: &str, shape: &[usize], layout: Layout, init: Init, seed: u64) -> ParamId {
        let value = init_tensor(shape, layout, init, mix64(seed ^ fnv1a(name.as_bytes())));
        self.insert(name, value, layout)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.values[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<F>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn values(&self) -> &[Tensor<F>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor<F>] {
        &mut self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn num_elements(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// `(name, shape)` in reference layout, e.g. conv kernels as `(kh, kw, in, out)`.
    pub fn reference_shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.names
            .iter()
            .zip(&self.values)
            .zip(&self.layouts)
            .map(|((n, v), l)| (n.clone(), reference_shape(v.shape(), *l)))
            .collect()
    }

    /// Replaces every value by the same-named tensor from `other`.
    pub fn load_from(&mut self, mut lookup: impl FnMut(&str) -> Option<Tensor<F>>) -> Result<(), String> {
        for (name, value) in self.names.iter().zip(self.values.iter_mut()) {
            let t = lookup(name).ok_or_else(|| format!("missing tensor {name}"))?;
            if t.shape() != value.shape() {
                return Err(format!("tensor {name} has shape {:?}, expected {:?}", t.shape(), value.shape()));
            }
            *value = t;
        }
        Ok(())
    }
}

pub fn reference_shape(shape: &[usize], layout: Layout) -> Vec<usize> {
    match (layout, shape) {
        (Layout::Conv, [o, i, kh, kw]) => vec![*kh, *kw, *i, *o],
        _ => shape.to_vec(),
    }
}

fn fans(shape: &[usize], layout: Layout) -> (usize, usize) {
    match (layout, shape) {
        (Layout::Conv, [o, i, kh, kw]) => (i * kh * kw, o * kh * kw),
        (_, [a, b]) => (*a, *b),
        (_, [a]) => (*a, *a),
        _ => (1, 1),
    }
}

fn init_tensor<F: Float>(shape: &[usize], layout: Layout, init: Init, seed: u64) -> Tensor<F> {
    let n: usize = shape.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<F> = match init {
        Init::Zeros => vec![F::zero(); n],
        Init::Ones => vec![F::one(); n],
        Init::Glorot => {
            let (fi, fo) = fans(shape, layout);
            let limit = (6.0 / (fi + fo) as f64).sqrt();
            let d = Uniform::new_inclusive(-limit, limit);
            (0..n).map(|_| F::of(d.sample(&mut rng))).collect()
        }
        Init::Normal(std) => {
            let d = Normal::new(0.0, std).expect("finite std");
            (0..n).map(|_| F::of(d.sample(&mut rng))).collect()
        }
    };
    Tensor::new(shape, data)
}
