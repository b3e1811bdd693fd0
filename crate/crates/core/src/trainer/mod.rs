//! Alternating discriminator/generator optimization, checkpointing and
//! multi-seed experiments.

mod build;
mod config;
mod run;

use fewlabel_autodiff::optim::Adam;
use fewlabel_autodiff::{Graph, Tensor, Var};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::checkpoint::TensorFile;
use crate::error::{Error, Result};
use crate::labels::softmax_row;
use crate::losses::{cotrain_d_loss, d_selfsup_term, g_selfsup_term, hinge_d_loss, hinge_g_loss, CotrainTerms};
use crate::metrics::{evaluate_model, Embedder, Evaluation, GaussianStats};
use crate::models::{
    discriminator_forward, generator_forward, one_hot, projection_term, Discriminator, Generator, Heads, Mode, Session,
};
use crate::rng::{derive_seed, mix64, stream_rng, Stream};
use crate::data::{rotation_targets, sample_indices};

pub use build::{build_method, Assembled};
pub use config::{Arch, Method, MethodConfig, OptimizerParams};
pub use run::{
    mean, median, population_std, run_dir, run_experiment, run_seed, ExperimentReport, RunContext, RunResult, Summary,
    CHECKPOINT_FILE, CONFIG_FILE, MAX_RESTARTS, METRICS_FILE, PREVIEW_FILE,
};

/// Which update produced a non-finite value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Phase {
    Discriminator,
    Generator,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DivergenceEvent {
    /// Generator step during which the divergence happened.
    pub step: u64,
    pub phase: Phase,
}

#[derive(Clone, Debug, PartialEq)]
pub enum StepOutcome {
    Completed { d_losses: Vec<f64>, g_loss: f64 },
    /// Parameters were restored to their pre-step values.
    Diverged(DivergenceEvent),
}

/// Both networks, their optimizers and the update counters.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub seed: u64,
    pub gen: Generator<f32>,
    pub disc: Discriminator<f32>,
    pub g_opt: Adam<f32>,
    pub d_opt: Adam<f32>,
    /// Completed generator steps.
    pub step: u64,
    pub d_updates: u64,
    pub g_updates: u64,
    /// Number of rollbacks so far; mixed into the data streams so a
    /// replayed interval sees different batches.
    pub restarts: u64,
    pub divergences: Vec<DivergenceEvent>,
}

struct NonFinite;

impl Trainer {
    pub fn new(a: &Assembled, seed: u64) -> Result<Self> {
        let o = &a.config.optimizer;
        let adam = |lr: f64| Adam::new(lr as f32, o.beta1 as f32, o.beta2 as f32, o.eps as f32);
        Ok(Trainer {
            seed,
            gen: Generator::new(a.gen_spec.clone(), derive_seed(seed, Stream::Init, 0))?,
            disc: Discriminator::new(a.disc_spec.clone(), derive_seed(seed, Stream::Init, 1))?,
            g_opt: adam(o.g_lr),
            d_opt: adam(o.d_lr),
            step: 0,
            d_updates: 0,
            g_updates: 0,
            restarts: 0,
            divergences: Vec::new(),
        })
    }

    fn stream_seed(&self) -> u64 {
        if self.restarts == 0 {
            self.seed
        } else {
            mix64(self.seed ^ mix64(self.restarts))
        }
    }

    /// `d_steps_per_g` discriminator updates on fresh batches, then one
    /// generator update. A non-finite loss or gradient restores the
    /// pre-step state and is reported as a divergence.
    pub fn train_step(&mut self, a: &mut Assembled) -> Result<StepOutcome> {
        let before = (self.gen.state.clone(), self.disc.state.clone(), self.g_opt.clone(), self.d_opt.clone());
        let (d_before, g_before) = (self.d_updates, self.g_updates);
        let mut d_losses = Vec::with_capacity(a.config.d_steps_per_g);
        let mut failed = None;
        for _ in 0..a.config.d_steps_per_g {
            match self.d_step(a)? {
                Ok(l) => d_losses.push(l),
                Err(NonFinite) => {
                    failed = Some(Phase::Discriminator);
                    break;
                }
            }
        }
        let g_loss = match failed {
            None => match self.g_step(a)? {
                Ok(l) => Some(l),
                Err(NonFinite) => {
                    failed = Some(Phase::Generator);
                    None
                }
            },
            Some(_) => None,
        };
        if let Some(phase) = failed {
            (self.gen.state, self.disc.state, self.g_opt, self.d_opt) = before;
            self.d_updates = d_before;
            self.g_updates = g_before;
            let ev = DivergenceEvent { step: self.step, phase };
            log::warn!("non-finite {phase:?} update at step {}; restored pre-step parameters", self.step);
            self.divergences.push(ev.clone());
            return Ok(StepOutcome::Diverged(ev));
        }
        self.step += 1;
        Ok(StepOutcome::Completed { d_losses, g_loss: g_loss.expect("set when no phase failed") })
    }

    /// A single discriminator update outside [`Trainer::train_step`];
    /// `None` when it produced a non-finite value and was skipped.
    pub fn discriminator_update(&mut self, a: &mut Assembled) -> Result<Option<f64>> {
        Ok(self.d_step(a)?.ok())
    }

    /// A single generator update; `None` when skipped as non-finite.
    pub fn generator_update(&mut self, a: &mut Assembled) -> Result<Option<f64>> {
        Ok(self.g_step(a)?.ok())
    }

    fn latent(&self, n: usize, stream_step: u64) -> Tensor<f32> {
        let mut rng = stream_rng(self.stream_seed(), Stream::Latent, stream_step);
        let d = self.gen.spec.latent_dim;
        Tensor::new(&[n, d], (0..n * d).map(|_| rng.sample::<f32, _>(StandardNormal)).collect())
    }

    fn fake_labels(&self, a: &Assembled, n: usize, stream_step: u64) -> Vec<usize> {
        a.provider.sample_fake_labels(n, &mut stream_rng(self.stream_seed(), Stream::FakeLabels, stream_step))
    }

    /// Four rotations of the first `r` rows of `x`, in rotation-batch layout.
    fn rotated(g: &mut Graph<f32>, x: Var, r: usize) -> Var {
        let sub = g.slice_rows(x, 0, r);
        let parts: Vec<Var> = (0..4).map(|k| g.rotate90(sub, k)).collect();
        g.concat_rows(&parts)
    }

    fn d_step(&mut self, a: &mut Assembled) -> Result<std::result::Result<f64, NonFinite>> {
        let cfg = &a.config;
        let b = cfg.optimizer.batch_size;
        let k = a.provider.num_classes;
        let idx = self.d_updates;
        let stream = self.stream_seed();
        let mut rng = stream_rng(stream, Stream::RealBatch, idx);
        // Real batch: labeled part first for co-training.
        let (real_idx, n_labeled) = if cfg.method.is_cotrain() {
            let labeled_pool = a.dataset.labeled_indices();
            let unlabeled_pool: Vec<usize> = (0..a.dataset.len()).filter(|&i| a.dataset.label(i).is_none()).collect();
            if labeled_pool.is_empty() {
                return Err(Error::State("co-training needs labeled examples".into()));
            }
            let n_l = if unlabeled_pool.is_empty() { b } else { cfg.labeled_per_batch };
            let mut v: Vec<usize> = sample_indices(labeled_pool.len(), n_l, &mut rng).into_iter().map(|i| labeled_pool[i]).collect();
            v.extend(sample_indices(unlabeled_pool.len(), b - n_l, &mut rng).into_iter().map(|i| unlabeled_pool[i]));
            (v, n_l)
        } else {
            (sample_indices(a.dataset.len(), b, &mut rng), b)
        };
        let real = a.dataset.batch_tensor(&real_idx);
        let z = self.latent(b, idx << 1);
        let fake_y = self.fake_labels(a, b, idx << 1);
        let fake_rows = one_hot::<f32>(&fake_y, k);

        let mut g = Graph::new();
        let fake = {
            let zv = g.constant(z);
            let yv = g.constant(fake_rows.clone());
            let mut gs = Session::new(&mut self.gen.state, Mode::FROZEN_TRAINING);
            let out = generator_forward(&self.gen.spec, &mut gs, &mut g, zv, yv)?;
            g.detach(out)
        };
        let real_v = g.constant(real);
        let x = g.concat_rows(&[real_v, fake]);
        let spec = &self.disc.spec;
        let mut s = Session::new(&mut self.disc.state, Mode::TRAIN);
        let heads = Heads { rotation: false, cotrain: cfg.method.is_cotrain() };
        let out = discriminator_forward(spec, &mut s, &mut g, x, None, heads)?;
        let score = if spec.projection {
            let real_rows = if let Some(cl) = out.cotrain_logits {
                // Labeled reals use their labels, unlabeled reals the
                // classifier's soft prediction (as a constant).
                let logits = g.value(cl).clone();
                let mut rows = one_hot::<f32>(&real_idx[..n_labeled].iter().map(|&i| a.dataset.label(i).expect("labeled")).collect::<Vec<_>>(), k).into_data();
                for r in n_labeled..b {
                    rows.extend(softmax_row(&logits.data()[r * k..(r + 1) * k]));
                }
                Tensor::new(&[b, k], rows)
            } else {
                a.provider.labels_for(&a.dataset, &real_idx, idx)?.to_rows(k)?
            };
            let y = g.constant(Tensor::cat_rows(&[&real_rows, &fake_rows]));
            let w = s.weight(&mut g, "discriminator_projection/kernel");
            let p = projection_term(&mut g, out.representation, w, y);
            g.add(out.unconditional, p)
        } else {
            out.unconditional
        };
        let real_scores = g.slice_rows(score, 0, b);
        let fake_scores = g.slice_rows(score, b, b);
        let mut loss = if let Some(cl) = out.cotrain_logits {
            let labels: Vec<usize> = real_idx[..n_labeled].iter().map(|&i| a.dataset.label(i).expect("labeled")).collect();
            let labeled_scores = g.slice_rows(real_scores, 0, n_labeled);
            let cotrain_logits = g.slice_rows(cl, 0, n_labeled);
            let unlabeled_scores = (n_labeled < b).then(|| g.slice_rows(real_scores, n_labeled, b - n_labeled));
            let terms = CotrainTerms { labeled_scores, cotrain_logits, labels: &labels, unlabeled_scores, fake_scores };
            cotrain_d_loss(&mut g, terms, cfg.weights.lambda)
        } else {
            hinge_d_loss(&mut g, real_scores, fake_scores)
        };
        if cfg.uses_self_supervision() {
            let r = cfg.rotated_per_batch;
            let xr = Self::rotated(&mut g, real_v, r);
            let rout = discriminator_forward(spec, &mut s, &mut g, xr, None, Heads { rotation: true, cotrain: false })?;
            let term = d_selfsup_term(&mut g, rout.rotation_logits.expect("requested"), &rotation_targets(r), cfg.weights.beta);
            loss = g.add(loss, term);
        }
        let value = g.value(loss).item() as f64;
        if !value.is_finite() {
            return Ok(Err(NonFinite));
        }
        g.backward(loss);
        let grads = s.grads(&g);
        drop(s);
        if grads.iter().flatten().any(|t| !t.is_finite()) {
            return Ok(Err(NonFinite));
        }
        self.d_opt.step(self.disc.state.params.values_mut(), &grads);
        self.d_updates += 1;
        Ok(Ok(value))
    }

    fn g_step(&mut self, a: &mut Assembled) -> Result<std::result::Result<f64, NonFinite>> {
        let cfg = &a.config;
        let b = cfg.optimizer.batch_size;
        let k = a.provider.num_classes;
        let idx = self.g_updates;
        let z = self.latent(b, (idx << 1) | 1);
        let fake_y = self.fake_labels(a, b, (idx << 1) | 1);
        let rows = one_hot::<f32>(&fake_y, k);
        let mut g = Graph::new();
        let zv = g.constant(z);
        let yv = g.constant(rows);
        let mut gs = Session::new(&mut self.gen.state, Mode::TRAIN);
        let fake = generator_forward(&self.gen.spec, &mut gs, &mut g, zv, yv)?;
        let spec = &self.disc.spec;
        let mut ds = Session::new(&mut self.disc.state, Mode::FROZEN_TRAINING);
        let y = spec.projection.then_some(yv);
        let out = discriminator_forward(spec, &mut ds, &mut g, fake, y, Heads::default())?;
        let mut loss = hinge_g_loss(&mut g, out.score);
        if cfg.uses_self_supervision() {
            let r = cfg.rotated_per_batch;
            let xr = Self::rotated(&mut g, fake, r);
            let rout = discriminator_forward(spec, &mut ds, &mut g, xr, None, Heads { rotation: true, cotrain: false })?;
            let term = g_selfsup_term(&mut g, rout.rotation_logits.expect("requested"), &rotation_targets(r), cfg.weights.alpha);
            loss = g.add(loss, term);
        }
        let value = g.value(loss).item() as f64;
        if !value.is_finite() {
            return Ok(Err(NonFinite));
        }
        drop(ds);
        g.backward(loss);
        let grads = gs.grads(&g);
        drop(gs);
        if grads.iter().flatten().any(|t| !t.is_finite()) {
            return Ok(Err(NonFinite));
        }
        self.g_opt.step(self.gen.state.params.values_mut(), &grads);
        self.g_updates += 1;
        Ok(Ok(value))
    }

    /// Inference-mode samples for latents `z` and label rows `y`.
    pub fn sample(&mut self, z: &Tensor<f32>, y: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.gen.generate(z, y, Mode::EVAL)
    }

    /// Averages FID and IS over `n_sets` fake sets. Latents and labels
    /// depend only on the run seed and the set, not on the step.
    pub fn evaluate(&mut self, a: &Assembled, real: &GaussianStats, embedder: &mut dyn Embedder) -> Result<Evaluation> {
        let cfg = &a.config;
        let k = a.provider.num_classes;
        let d = self.gen.spec.latent_dim;
        let seed = self.seed;
        let gen = &mut self.gen;
        let provider = &a.provider;
        let sampler = |set: usize, offset: usize, len: usize| -> Result<Tensor<f32>> {
            let mut rng = stream_rng(seed, Stream::Evaluation, ((set as u64) << 32) | offset as u64);
            let z = Tensor::new(&[len, d], (0..len * d).map(|_| rng.sample::<f32, _>(StandardNormal)).collect());
            let y = one_hot::<f32>(&provider.sample_fake_labels(len, &mut rng), k);
            gen.generate(&z, &y, Mode::EVAL)
        };
        evaluate_model(sampler, real, embedder, cfg.n_fake, cfg.n_sets, 250)
    }

    /// 64 samples with fixed latents, classes cycling through the labels
    /// the provider can emit.
    pub fn preview(&mut self, a: &Assembled) -> Result<Tensor<f32>> {
        let k = a.provider.num_classes;
        let d = self.gen.spec.latent_dim;
        let mut rng = stream_rng(self.seed, Stream::Evaluation, u64::MAX);
        let z = Tensor::new(&[64, d], (0..64 * d).map(|_| rng.sample::<f32, _>(StandardNormal)).collect());
        let labels: Vec<usize> = (0..64).map(|i| (i / 8) % k).collect();
        self.sample(&z, &one_hot(&labels, k))
    }

    /// Serializes networks, optimizer moments and counters.
    pub fn to_checkpoint(&self, config: &MethodConfig) -> TensorFile {
        let mut f = TensorFile::new();
        f.put_model(&self.gen.state);
        f.put_model(&self.disc.state);
        for (tag, opt, state) in [("generator", &self.g_opt, &self.gen.state), ("discriminator", &self.d_opt, &self.disc.state)] {
            for (i, (name, _)) in state.params.iter().enumerate() {
                if let (Some(m), Some(v)) = (opt.m.get(i), opt.v.get(i)) {
                    f.tensors.insert(format!("optimizer/{tag}/m/{name}"), m.clone());
                    f.tensors.insert(format!("optimizer/{tag}/v/{name}"), v.clone());
                }
            }
        }
        let meta = f.meta_mut();
        meta.insert(
            "trainer".into(),
            serde_json::json!({
                "seed": self.seed,
                "step": self.step,
                "d_updates": self.d_updates,
                "g_updates": self.g_updates,
                "restarts": self.restarts,
                "g_adam_t": self.g_opt.t,
                "d_adam_t": self.d_opt.t,
                "divergences": self.divergences,
                "config": config.render(),
            }),
        );
        f
    }

    /// Rebuilds a trainer from [`Trainer::to_checkpoint`] output.
    pub fn from_checkpoint(a: &Assembled, mut f: TensorFile) -> Result<Self> {
        let info = f.metadata.get("trainer").cloned().ok_or_else(|| Error::Checkpoint("no trainer metadata".into()))?;
        let num = |k: &str| info.get(k).and_then(serde_json::Value::as_u64).ok_or_else(|| Error::Checkpoint(format!("trainer metadata lacks {k}")));
        let saved = info.get("config").and_then(serde_json::Value::as_str).unwrap_or_default();
        if MethodConfig::parse(saved)? != a.config {
            return Err(Error::Checkpoint("checkpoint was written with a different configuration".into()));
        }
        let mut t = Trainer::new(a, num("seed")?)?;
        f.get_model(&mut t.gen.state)?;
        f.get_model(&mut t.disc.state)?;
        for (tag, opt, state) in [("generator", &mut t.g_opt, &t.gen.state), ("discriminator", &mut t.d_opt, &t.disc.state)] {
            let names: Vec<String> = state.params.iter().map(|(n, _)| n.to_string()).collect();
            if f.tensors.contains_key(&format!("optimizer/{tag}/m/{}", names[0])) {
                opt.m = names.iter().map(|n| f.take(&format!("optimizer/{tag}/m/{n}"))).collect::<Result<_>>()?;
                opt.v = names.iter().map(|n| f.take(&format!("optimizer/{tag}/v/{n}"))).collect::<Result<_>>()?;
            }
        }
        t.step = num("step")?;
        t.d_updates = num("d_updates")?;
        t.g_updates = num("g_updates")?;
        t.restarts = num("restarts")?;
        t.g_opt.t = num("g_adam_t")?;
        t.d_opt.t = num("d_adam_t")?;
        t.divergences = serde_json::from_value(info.get("divergences").cloned().unwrap_or_default())?;
        Ok(t)
    }
}
