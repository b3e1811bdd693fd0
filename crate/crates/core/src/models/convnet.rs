//! Small batch-normalized CNN used as feature extractor and as the
//! evaluation embedder.

use fewlabel_autodiff::{Float, Graph, Tensor, Var};

use crate::error::{Error, Result};
use crate::models::blocks::{batchnorm, batchnorm_specs, conv_specs, linear_specs};
use crate::models::session::{Mode, ModelState, ParamSpec, Session};

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ConvNetSpec {
    /// Parameter-name prefix, e.g. `extractor`.
    pub name: String,
    pub image_size: usize,
    pub in_channels: usize,
    /// Output channels of each conv/BN/ReLU/avg-pool block.
    pub widths: Vec<usize>,
    /// Linear heads on the pooled representation: `(name, outputs)`.
    pub heads: Vec<(String, usize)>,
}

impl ConvNetSpec {
    pub fn new(name: &str, image_size: usize, widths: &[usize], heads: &[(&str, usize)]) -> Self {
        ConvNetSpec {
            name: name.into(),
            image_size,
            in_channels: 3,
            widths: widths.to_vec(),
            heads: heads.iter().map(|(n, k)| (n.to_string(), *k)).collect(),
        }
    }

    pub fn representation_dim(&self) -> usize {
        *self.widths.last().expect("at least one block")
    }

    pub fn validate(&self) -> Result<()> {
        let nb = self.widths.len();
        if nb == 0 || self.image_size >> nb == 0 || (self.image_size >> nb) << nb != self.image_size {
            return Err(Error::Config(format!("{} blocks cannot pool a {}px image", nb, self.image_size)));
        }
        Ok(())
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut p = Vec::new();
        let mut cin = self.in_channels;
        for (i, &w) in self.widths.iter().enumerate() {
            let pre = format!("{}/B{}", self.name, i + 1);
            conv_specs(&mut p, &format!("{pre}/conv"), cin, w, 3, false, false);
            batchnorm_specs(&mut p, &format!("{pre}/bn"), w);
            cin = w;
        }
        for (head, k) in &self.heads {
            linear_specs(&mut p, &format!("{}/{head}", self.name), cin, *k, true, false);
        }
        p
    }

    pub fn norm_layers(&self) -> Vec<(String, usize)> {
        self.widths.iter().enumerate().map(|(i, &w)| (format!("{}/B{}/bn", self.name, i + 1), w)).collect()
    }
}

#[derive(Clone, Debug)]
pub struct ConvNet<F> {
    pub spec: ConvNetSpec,
    pub state: ModelState<F>,
}

/// Pooled features and the requested head outputs.
#[derive(Clone, Debug)]
pub struct ConvNetOutput {
    pub representation: Var,
    pub heads: Vec<Var>,
}

impl<F: Float> ConvNet<F> {
    pub fn new(spec: ConvNetSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let state = ModelState::build(&spec.param_specs(), &spec.norm_layers(), seed);
        Ok(ConvNet { spec, state })
    }

    pub fn head_index(&self, head: &str) -> Option<usize> {
        self.spec.heads.iter().position(|(n, _)| n == head)
    }

    /// Inference-mode pass over `x [N, C, H, W]` in chunks; returns the
    /// representation and every head's outputs.
    pub fn infer(&mut self, x: &Tensor<F>, chunk: usize) -> Result<(Tensor<F>, Vec<Tensor<F>>)> {
        let n = x.dim(0);
        let mut reprs = Vec::new();
        let mut heads: Vec<Vec<Tensor<F>>> = vec![Vec::new(); self.spec.heads.len()];
        let mut start = 0;
        while start < n {
            let len = chunk.max(1).min(n - start);
            let mut g = Graph::new();
            let xv = g.constant(x.slice_rows(start, len));
            let mut s = Session::new(&mut self.state, Mode::EVAL);
            let all: Vec<usize> = (0..self.spec.heads.len()).collect();
            let out = convnet_forward(&self.spec, &mut s, &mut g, xv, &all)?;
            reprs.push(g.value(out.representation).clone());
            for (acc, v) in heads.iter_mut().zip(&out.heads) {
                acc.push(g.value(*v).clone());
            }
            start += len;
        }
        let cat = |parts: &[Tensor<F>]| Tensor::cat_rows(&parts.iter().collect::<Vec<_>>());
        Ok((cat(&reprs), heads.iter().map(|h| cat(h)).collect()))
    }
}

pub fn convnet_forward<F: Float>(
    spec: &ConvNetSpec,
    s: &mut Session<F>,
    g: &mut Graph<F>,
    x: Var,
    heads: &[usize],
) -> Result<ConvNetOutput> {
    let shape = g.shape(x).to_vec();
    if shape[1..] != [spec.in_channels, spec.image_size, spec.image_size] {
        return Err(Error::Argument(format!("input shape {shape:?} does not match {}", spec.name)));
    }
    let mut h = x;
    for i in 0..spec.widths.len() {
        let pre = format!("{}/B{}", spec.name, i + 1);
        h = s.conv(g, h, &format!("{pre}/conv"));
        h = batchnorm(s, g, h, &format!("{pre}/bn"))?;
        h = g.relu(h);
        h = g.avg_pool2x(h);
    }
    let side = spec.image_size >> spec.widths.len();
    let pooled = g.sum_spatial(h);
    let repr = g.scale(pooled, F::of(1.0 / (side * side) as f64));
    let outs = heads
        .iter()
        .map(|&i| {
            let name = format!("{}/{}", spec.name, spec.heads[i].0);
            s.linear(g, repr, &name)
        })
        .collect();
    Ok(ConvNetOutput { representation: repr, heads: outs })
}
