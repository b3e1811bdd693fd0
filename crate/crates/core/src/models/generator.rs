//! Residual generator with conditional batch normalization and latent chunking.

use fewlabel_autodiff::{Float, Graph, Tensor, Var};

use crate::error::{Error, Result};
use crate::models::blocks::{
    batchnorm, batchnorm_specs, conditional_batchnorm, conditional_batchnorm_specs, conv_specs, linear_specs,
    non_local, non_local_specs,
};
use crate::models::params::{Init, Layout};
use crate::models::session::{check_label_rows, Mode, ModelState, ParamSpec, Session};

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GeneratorSpec {
    pub image_size: usize,
    /// Channel width multiplier.
    pub ch: usize,
    pub latent_dim: usize,
    pub num_classes: usize,
    pub embedding_dim: usize,
    /// Widths in units of `ch`: the dense output first, then one per block.
    pub channel_multipliers: Vec<usize>,
    /// Resolution after which self-attention is applied.
    pub nonlocal_at: Option<usize>,
    pub out_channels: usize,
}

impl GeneratorSpec {
    /// 128×128, `ch = 96`, 1000 classes, latent 120 in 6 chunks.
    pub fn full_scale() -> Self {
        GeneratorSpec {
            image_size: 128,
            ch: 96,
            latent_dim: 120,
            num_classes: 1000,
            embedding_dim: 128,
            channel_multipliers: vec![16, 16, 8, 4, 2, 1],
            nonlocal_at: Some(64),
            out_channels: 3,
        }
    }

    /// 32×32 with three up-sampling blocks and attention at 16×16.
    pub fn desk(num_classes: usize) -> Self {
        GeneratorSpec {
            image_size: 32,
            ch: 16,
            latent_dim: 16,
            num_classes,
            embedding_dim: 32,
            channel_multipliers: vec![4, 4, 2, 1],
            nonlocal_at: Some(16),
            out_channels: 3,
        }
    }

    pub fn num_blocks(&self) -> usize {
        self.channel_multipliers.len() - 1
    }

    pub fn chunk_dim(&self) -> usize {
        self.latent_dim / (self.num_blocks() + 1)
    }

    pub fn condition_dim(&self) -> usize {
        self.embedding_dim + self.chunk_dim()
    }

    pub fn base_resolution(&self) -> usize {
        self.image_size >> self.num_blocks()
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.channel_multipliers.len() < 2 {
            return cfg("generator needs at least one block".into());
        }
        let nb = self.num_blocks();
        if self.latent_dim == 0 || self.latent_dim % (nb + 1) != 0 {
            return cfg(format!("latent_dim {} is not divisible into {} chunks", self.latent_dim, nb + 1));
        }
        if self.base_resolution() == 0 || self.base_resolution() << nb != self.image_size {
            return cfg(format!("image_size {} is not a base resolution times 2^{nb}", self.image_size));
        }
        if let Some(r) = self.nonlocal_at {
            let ok = (1..=nb).any(|b| self.base_resolution() << b == r);
            if !ok || (self.ch * self.channel_multipliers[self.block_at(r)]) % 8 != 0 || r < 2 {
                return cfg(format!("self-attention resolution {r} does not match a block output with channels divisible by 8"));
            }
        }
        if self.num_classes == 0 || self.ch == 0 || self.out_channels == 0 {
            return cfg("num_classes, ch and out_channels must be positive".into());
        }
        Ok(())
    }

    /// Index into `channel_multipliers` of the block producing resolution `r`.
    fn block_at(&self, r: usize) -> usize {
        (1..=self.num_blocks()).find(|&b| self.base_resolution() << b == r).unwrap_or(0)
    }

    fn channels(&self, i: usize) -> usize {
        self.ch * self.channel_multipliers[i]
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut p = Vec::new();
        let base = self.base_resolution();
        p.push(ParamSpec::new("generator/embed_y/kernel", &[self.num_classes, self.embedding_dim], Layout::Plain, Init::Glorot, false));
        linear_specs(&mut p, "generator/fc_noise", self.chunk_dim(), base * base * self.channels(0), true, false);
        for b in 1..=self.num_blocks() {
            let (cin, cout) = (self.channels(b - 1), self.channels(b));
            let pre = format!("generator/B{b}");
            conditional_batchnorm_specs(&mut p, &format!("{pre}/bn1"), self.condition_dim(), cin);
            conv_specs(&mut p, &format!("{pre}/up_conv1"), cin, cout, 3, true, true);
            conditional_batchnorm_specs(&mut p, &format!("{pre}/bn2"), self.condition_dim(), cout);
            conv_specs(&mut p, &format!("{pre}/same_conv2"), cout, cout, 3, true, true);
            conv_specs(&mut p, &format!("{pre}/up_conv_shortcut"), cin, cout, 1, true, true);
            if self.nonlocal_at == Some(base << b) {
                non_local_specs(&mut p, "generator/non_local_block", cout, false);
            }
        }
        let last = self.channels(self.num_blocks());
        batchnorm_specs(&mut p, "generator/final_norm", last);
        conv_specs(&mut p, "generator/final_conv", last, self.out_channels, 3, true, false);
        p
    }

    pub fn norm_layers(&self) -> Vec<(String, usize)> {
        let mut out = Vec::new();
        for b in 1..=self.num_blocks() {
            out.push((format!("generator/B{b}/bn1"), self.channels(b - 1)));
            out.push((format!("generator/B{b}/bn2"), self.channels(b)));
        }
        out.push(("generator/final_norm".into(), self.channels(self.num_blocks())));
        out
    }

    pub fn num_params(&self) -> usize {
        self.param_specs().iter().map(ParamSpec::numel).sum()
    }
}

#[derive(Clone, Debug)]
pub struct Generator<F> {
    pub spec: GeneratorSpec,
    pub state: ModelState<F>,
}

impl<F: Float> Generator<F> {
    pub fn new(spec: GeneratorSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let state = ModelState::build(&spec.param_specs(), &spec.norm_layers(), seed);
        Ok(Generator { spec, state })
    }

    pub fn num_params(&self) -> usize {
        self.state.num_params()
    }

    /// Runs a standalone forward pass and returns the images `[N, C, H, W]`.
    pub fn generate(&mut self, z: &Tensor<F>, y: &Tensor<F>, mode: Mode) -> Result<Tensor<F>> {
        let mut g = Graph::new();
        let zv = g.constant(z.clone());
        let yv = g.constant(y.clone());
        let mut s = Session::new(&mut self.state, mode);
        let out = generator_forward(&self.spec, &mut s, &mut g, zv, yv)?;
        Ok(g.value(out).clone())
    }
}

/// `z [N, latent_dim]`, `y [N, K]` (one-hot or a distribution) → images in `[-1, 1]`.
///
/// The first latent chunk feeds the dense layer; block `b` is conditioned on
/// `concat(y·E, chunk_b)` where `E` is the shared class embedding.
pub fn generator_forward<F: Float>(
    spec: &GeneratorSpec,
    s: &mut Session<F>,
    g: &mut Graph<F>,
    z: Var,
    y: Var,
) -> Result<Var> {
    let n = g.shape(z)[0];
    if g.shape(z) != [n, spec.latent_dim] {
        return Err(Error::Argument(format!("latent shape {:?}, expected [{n}, {}]", g.shape(z), spec.latent_dim)));
    }
    if g.shape(y) != [n, spec.num_classes] {
        return Err(Error::Argument(format!("label shape {:?}, expected [{n}, {}]", g.shape(y), spec.num_classes)));
    }
    check_label_rows(g.value(y))?;
    if !g.value(z).is_finite() {
        return Err(Error::Argument("latent contains non-finite values".into()));
    }
    let cd = spec.chunk_dim();
    let embed = s.weight(g, "generator/embed_y/kernel");
    let emb = g.matmul(y, embed);
    let z0 = g.slice_cols(z, 0, cd);
    let h = s.linear(g, z0, "generator/fc_noise");
    let base = spec.base_resolution();
    let mut h = g.reshape(h, &[n, spec.channels(0), base, base]);
    for b in 1..=spec.num_blocks() {
        let zb = g.slice_cols(z, b * cd, cd);
        let cond = g.concat_cols(&[emb, zb]);
        let pre = format!("generator/B{b}");
        // 1x1 convolution commutes with nearest-neighbour upsampling.
        let short = s.conv(g, h, &format!("{pre}/up_conv_shortcut"));
        let short = g.upsample2x(short);
        let t = conditional_batchnorm(s, g, h, cond, &format!("{pre}/bn1"))?;
        let t = g.relu(t);
        let t = g.upsample2x(t);
        let t = s.conv(g, t, &format!("{pre}/up_conv1"));
        let t = conditional_batchnorm(s, g, t, cond, &format!("{pre}/bn2"))?;
        let t = g.relu(t);
        let t = s.conv(g, t, &format!("{pre}/same_conv2"));
        h = g.add(t, short);
        if spec.nonlocal_at == Some(base << b) {
            h = non_local(s, g, h, "generator/non_local_block");
        }
    }
    let h = batchnorm(s, g, h, "generator/final_norm")?;
    let h = g.relu(h);
    let h = s.conv(g, h, "generator/final_conv");
    Ok(g.tanh(h))
}
