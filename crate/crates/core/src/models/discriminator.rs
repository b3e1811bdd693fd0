//! Residual projection discriminator with optional rotation and class heads.

use fewlabel_autodiff::{Float, Graph, Var};

use crate::error::{Error, Result};
use crate::models::blocks::{conv_specs, linear_specs, non_local, non_local_specs, projection_term};
use crate::models::params::{Init, Layout};
use crate::models::session::{check_label_rows, ModelState, ParamSpec, Session};

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DiscriminatorSpec {
    pub image_size: usize,
    pub ch: usize,
    /// Widths of the down-sampling blocks in units of `ch`.
    pub channel_multipliers: Vec<usize>,
    /// Append a non-downsampling block without shortcut convolution.
    pub extra_block: bool,
    /// Resolution after which self-attention is applied.
    pub nonlocal_at: Option<usize>,
    pub num_classes: usize,
    /// Class-conditional projection term; off for single-label training.
    pub projection: bool,
    pub rotation_head: bool,
    pub cotrain_head: bool,
    pub in_channels: usize,
}

impl DiscriminatorSpec {
    pub fn full_scale() -> Self {
        DiscriminatorSpec {
            image_size: 128,
            ch: 96,
            channel_multipliers: vec![1, 2, 4, 8, 16],
            extra_block: true,
            nonlocal_at: Some(64),
            num_classes: 1000,
            projection: true,
            rotation_head: false,
            cotrain_head: false,
            in_channels: 3,
        }
    }

    pub fn desk(num_classes: usize) -> Self {
        DiscriminatorSpec {
            image_size: 32,
            ch: 16,
            channel_multipliers: vec![1, 2, 4],
            extra_block: true,
            nonlocal_at: Some(16),
            num_classes,
            projection: true,
            rotation_head: false,
            cotrain_head: false,
            in_channels: 3,
        }
    }

    pub fn num_down_blocks(&self) -> usize {
        self.channel_multipliers.len()
    }

    pub fn representation_dim(&self) -> usize {
        self.ch * self.channel_multipliers.last().copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        let nb = self.num_down_blocks();
        if nb == 0 || self.ch == 0 || self.num_classes == 0 || self.in_channels == 0 {
            return Err(Error::Config("discriminator needs blocks, channels and classes".into()));
        }
        if self.image_size >> nb == 0 || (self.image_size >> nb) << nb != self.image_size {
            return Err(Error::Config(format!("image_size {} does not halve cleanly {nb} times", self.image_size)));
        }
        if let Some(r) = self.nonlocal_at {
            let b = (1..=nb).find(|&b| self.image_size >> b == r);
            let ok = b.is_some_and(|b| (self.ch * self.channel_multipliers[b - 1]) % 8 == 0) && r >= 2;
            if !ok {
                return Err(Error::Config(format!("self-attention resolution {r} does not match a block output")));
            }
        }
        Ok(())
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut p = Vec::new();
        let mut cin = self.in_channels;
        for (i, &m) in self.channel_multipliers.iter().enumerate() {
            let b = i + 1;
            let cout = self.ch * m;
            let pre = format!("discriminator/B{b}");
            conv_specs(&mut p, &format!("{pre}/same_conv1"), cin, cout, 3, true, true);
            conv_specs(&mut p, &format!("{pre}/down_conv2"), cout, cout, 3, true, true);
            conv_specs(&mut p, &format!("{pre}/down_conv_shortcut"), cin, cout, 1, true, true);
            if self.nonlocal_at == Some(self.image_size >> b) {
                non_local_specs(&mut p, "discriminator/non_local_block", cout, true);
            }
            cin = cout;
        }
        if self.extra_block {
            let pre = format!("discriminator/B{}", self.num_down_blocks() + 1);
            conv_specs(&mut p, &format!("{pre}/same_conv1"), cin, cin, 3, true, true);
            conv_specs(&mut p, &format!("{pre}/same_conv2"), cin, cin, 3, true, true);
        }
        let d = self.representation_dim();
        linear_specs(&mut p, "discriminator/final_fc", d, 1, true, true);
        if self.projection {
            p.push(ParamSpec::new("discriminator_projection/kernel", &[self.num_classes, d], Layout::Plain, Init::Glorot, true));
        }
        if self.rotation_head {
            linear_specs(&mut p, "discriminator/rotation_head", d, 4, true, true);
        }
        if self.cotrain_head {
            linear_specs(&mut p, "discriminator/cotrain_head", d, self.num_classes, true, true);
        }
        p
    }

    pub fn num_params(&self) -> usize {
        self.param_specs().iter().map(ParamSpec::numel).sum()
    }
}

#[derive(Clone, Debug)]
pub struct Discriminator<F> {
    pub spec: DiscriminatorSpec,
    pub state: ModelState<F>,
}

impl<F: Float> Discriminator<F> {
    pub fn new(spec: DiscriminatorSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let state = ModelState::build(&spec.param_specs(), &[], seed);
        Ok(Discriminator { spec, state })
    }

    pub fn num_params(&self) -> usize {
        self.state.num_params()
    }
}

/// Which auxiliary heads to evaluate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Heads {
    pub rotation: bool,
    pub cotrain: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct DiscriminatorOutput {
    /// `unconditional + projection` (or just `unconditional`), shape `[N]`.
    pub score: Var,
    pub unconditional: Var,
    pub projection: Option<Var>,
    /// Globally sum-pooled features `[N, d]`.
    pub representation: Var,
    pub rotation_logits: Option<Var>,
    pub cotrain_logits: Option<Var>,
}

/// Scores images `x [N, C, H, W]`, optionally conditioned on labels `y [N, K]`.
pub fn discriminator_forward<F: Float>(
    spec: &DiscriminatorSpec,
    s: &mut Session<F>,
    g: &mut Graph<F>,
    x: Var,
    y: Option<Var>,
    heads: Heads,
) -> Result<DiscriminatorOutput> {
    let shape = g.shape(x).to_vec();
    let n = shape[0];
    if shape[1..] != [spec.in_channels, spec.image_size, spec.image_size] {
        return Err(Error::Argument(format!("input shape {shape:?} does not match the discriminator")));
    }
    if heads.rotation && !spec.rotation_head || heads.cotrain && !spec.cotrain_head {
        return Err(Error::Argument("requested a head the discriminator was built without".into()));
    }
    let mut h = x;
    for b in 1..=spec.num_down_blocks() {
        let pre = format!("discriminator/B{b}");
        let (t, short) = if b == 1 {
            let short = g.avg_pool2x(h);
            let short = s.conv(g, short, &format!("{pre}/down_conv_shortcut"));
            (s.conv(g, h, &format!("{pre}/same_conv1")), short)
        } else {
            let short = s.conv(g, h, &format!("{pre}/down_conv_shortcut"));
            let short = g.avg_pool2x(short);
            let t = g.relu(h);
            (s.conv(g, t, &format!("{pre}/same_conv1")), short)
        };
        let t = g.relu(t);
        let t = s.conv(g, t, &format!("{pre}/down_conv2"));
        let t = g.avg_pool2x(t);
        h = g.add(t, short);
        if spec.nonlocal_at == Some(spec.image_size >> b) {
            h = non_local(s, g, h, "discriminator/non_local_block");
        }
    }
    if spec.extra_block {
        let pre = format!("discriminator/B{}", spec.num_down_blocks() + 1);
        let t = g.relu(h);
        let t = s.conv(g, t, &format!("{pre}/same_conv1"));
        let t = g.relu(t);
        let t = s.conv(g, t, &format!("{pre}/same_conv2"));
        h = g.add(h, t);
    }
    let h = g.relu(h);
    let repr = g.sum_spatial(h);
    let logit = s.linear(g, repr, "discriminator/final_fc");
    let unconditional = g.reshape(logit, &[n]);
    let projection = match (spec.projection, y) {
        (true, Some(y)) => {
            if g.shape(y) != [n, spec.num_classes] {
                return Err(Error::Argument(format!("label shape {:?}, expected [{n}, {}]", g.shape(y), spec.num_classes)));
            }
            check_label_rows(g.value(y))?;
            let w = s.weight(g, "discriminator_projection/kernel");
            Some(projection_term(g, repr, w, y))
        }
        _ => None,
    };
    let score = match projection {
        Some(p) => g.add(unconditional, p),
        None => unconditional,
    };
    let rotation_logits = heads.rotation.then(|| s.linear(g, repr, "discriminator/rotation_head"));
    let cotrain_logits = heads.cotrain.then(|| s.linear(g, repr, "discriminator/cotrain_head"));
    Ok(DiscriminatorOutput { score, unconditional, projection, representation: repr, rotation_logits, cotrain_logits })
}
