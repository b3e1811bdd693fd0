//! Method registry and training configuration.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kv;
use crate::labels::LabelMode;
use crate::losses::LossWeights;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    /// Fully supervised conditional GAN.
    Biggan,
    /// Fully supervised on the labeled subset only.
    BigganK,
    /// Every image shares one label; no projection.
    SingleLabel,
    /// Uniformly random labels for real images.
    RandomLabel,
    /// Labels from k-means on self-supervised features.
    Clustering,
    /// Labels from a semi-supervised classifier on self-supervised features.
    S2gan,
    /// Discriminator-side classifier trained on the labeled subset.
    S2ganCo,
    S3gan,
    S3ganCo,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::Biggan,
        Method::BigganK,
        Method::SingleLabel,
        Method::RandomLabel,
        Method::Clustering,
        Method::S2gan,
        Method::S2ganCo,
        Method::S3gan,
        Method::S3ganCo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Biggan => "BIGGAN",
            Method::BigganK => "BIGGAN_K",
            Method::SingleLabel => "SINGLE_LABEL",
            Method::RandomLabel => "RANDOM_LABEL",
            Method::Clustering => "CLUSTERING",
            Method::S2gan => "S2GAN",
            Method::S2ganCo => "S2GAN_CO",
            Method::S3gan => "S3GAN",
            Method::S3ganCo => "S3GAN_CO",
        }
    }

    pub fn is_cotrain(self) -> bool {
        matches!(self, Method::S2ganCo | Method::S3ganCo)
    }

    /// Methods that always use in-GAN rotation self-supervision.
    pub fn implies_self_supervision(self) -> bool {
        matches!(self, Method::S3gan | Method::S3ganCo)
    }

    /// Methods that may opt into self-supervision.
    pub fn allows_self_supervision_flag(self) -> bool {
        matches!(self, Method::SingleLabel | Method::Clustering) || self.implies_self_supervision()
    }

    /// Methods whose labels come from the semi-supervised pretrained classifier.
    pub fn uses_s2l_provider(self) -> bool {
        matches!(self, Method::S2gan | Method::S3gan)
    }

    /// Methods that need the percentage of retained labels.
    pub fn uses_k_percent(self) -> bool {
        matches!(self, Method::BigganK | Method::S2gan | Method::S2ganCo | Method::S3gan | Method::S3ganCo)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        Method::ALL
            .into_iter()
            .find(|m| m.name() == norm)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Arch {
    Desk,
    FullScale,
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Arch::Desk),
            "full_scale" => Ok(Arch::FullScale),
            _ => Err(Error::Config(format!("unknown arch {s:?}"))),
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arch::Desk => "desk",
            Arch::FullScale => "full_scale",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimizerParams {
    pub g_lr: f64,
    pub d_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub latent_dim: usize,
}

impl OptimizerParams {
    pub fn desk() -> Self {
        OptimizerParams { g_lr: 5e-5, d_lr: 2e-4, beta1: 0.0, beta2: 0.999, eps: 1e-8, batch_size: 64, latent_dim: 16 }
    }

    pub fn full_scale() -> Self {
        OptimizerParams { batch_size: 2048, latent_dim: 120, ..Self::desk() }
    }

    pub fn validate(&self) -> Result<()> {
        let rates_ok = [self.g_lr, self.d_lr, self.eps].iter().all(|v| v.is_finite() && *v >= 0.0);
        let betas_ok = [self.beta1, self.beta2].iter().all(|b| (0.0..1.0).contains(b));
        if !rates_ok || !betas_ok || self.eps == 0.0 {
            return Err(Error::Config("learning rates must be nonnegative, eps positive, betas in [0, 1)".into()));
        }
        if self.batch_size < 2 || self.latent_dim == 0 {
            return Err(Error::Config("batch size must be at least 2 and latent_dim positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MethodConfig {
    pub method: Method,
    /// In-GAN rotation self-supervision for methods that allow it.
    pub self_supervised: bool,
    pub k_percent: Option<f64>,
    pub n_clusters: Option<usize>,
    pub label_mode: LabelMode,
    pub weights: LossWeights,
    pub optimizer: OptimizerParams,
    pub total_g_steps: u64,
    pub d_steps_per_g: usize,
    pub eval_every: u64,
    pub n_fake: usize,
    pub n_sets: usize,
    /// Seed of the label subsample, shared with pretraining.
    pub label_seed: u64,
    /// Images per batch that receive all four rotations for the
    /// self-supervision terms.
    pub rotated_per_batch: usize,
    /// Labeled real images per batch in co-training.
    pub labeled_per_batch: usize,
    pub arch: Arch,
}

impl MethodConfig {
    /// Desk-scale defaults for `method`.
    pub fn new(method: Method) -> Self {
        let optimizer = OptimizerParams::desk();
        let b = optimizer.batch_size;
        let weights = LossWeights { beta: if method == Method::S3ganCo { 1.0 } else { 0.5 }, ..LossWeights::default() };
        MethodConfig {
            method,
            self_supervised: method.implies_self_supervision(),
            k_percent: method.uses_k_percent().then_some(10.0),
            n_clusters: (method == Method::Clustering).then_some(50),
            label_mode: LabelMode::Hard,
            weights,
            optimizer,
            total_g_steps: 2000,
            d_steps_per_g: 2,
            eval_every: 500,
            n_fake: 2000,
            n_sets: 5,
            label_seed: 0,
            rotated_per_batch: b / 4,
            labeled_per_batch: b / 4,
            arch: Arch::Desk,
        }
    }

    /// Full-scale constants: batch 2048, latent 120, 250k generator steps.
    pub fn full_scale(method: Method) -> Self {
        let optimizer = OptimizerParams::full_scale();
        MethodConfig {
            optimizer,
            total_g_steps: 250_000,
            eval_every: 10_000,
            n_fake: 50_000,
            rotated_per_batch: optimizer.batch_size / 4,
            labeled_per_batch: optimizer.batch_size / 4,
            arch: Arch::FullScale,
            ..Self::new(method)
        }
    }

    pub fn uses_self_supervision(&self) -> bool {
        self.self_supervised || self.method.implies_self_supervision()
    }

    /// Short identifier, e.g. `S3GAN-k10` or `CLUSTERING_SS-c50`.
    pub fn run_name(&self) -> String {
        let mut s = self.method.name().to_string();
        if self.self_supervised && !self.method.implies_self_supervision() {
            s.push_str("_SS");
        }
        if let Some(k) = self.k_percent {
            s.push_str(&format!("-k{k}"));
        }
        if let Some(c) = self.n_clusters {
            s.push_str(&format!("-c{c}"));
        }
        if self.method.uses_s2l_provider() && self.label_mode == LabelMode::Soft {
            s.push_str("-soft");
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.method;
        self.optimizer.validate()?;
        self.weights.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.self_supervised && !m.allows_self_supervision_flag() {
            return Err(Error::Config(format!("{m} does not take the self_supervised flag")));
        }
        if m.implies_self_supervision() && !self.self_supervised {
            return Err(Error::Config(format!("{m} always uses self-supervision")));
        }
        match (m.uses_k_percent(), self.k_percent) {
            (true, Some(k)) if k > 0.0 && k <= 100.0 => {}
            (true, _) => return Err(Error::Config(format!("{m} needs k_percent in (0, 100]"))),
            (false, Some(_)) => return Err(Error::Config(format!("{m} does not use k_percent"))),
            (false, None) => {}
        }
        match (m == Method::Clustering, self.n_clusters) {
            (true, Some(c)) if c >= 1 => {}
            (true, _) => return Err(Error::Config("CLUSTERING needs n_clusters >= 1".into())),
            (false, Some(_)) => return Err(Error::Config(format!("{m} does not use n_clusters"))),
            (false, None) => {}
        }
        if self.label_mode == LabelMode::Soft && !m.uses_s2l_provider() {
            return Err(Error::Config(format!("{m} does not take a label mode")));
        }
        let b = self.optimizer.batch_size;
        if self.uses_self_supervision() && !(1..=b).contains(&self.rotated_per_batch) {
            return Err(Error::Config(format!("rotated_per_batch must be in 1..={b}")));
        }
        if m.is_cotrain() && !(1..b).contains(&self.labeled_per_batch) {
            return Err(Error::Config(format!("labeled_per_batch must be in 1..{b}")));
        }
        if self.total_g_steps == 0 || self.d_steps_per_g == 0 || self.eval_every == 0 {
            return Err(Error::Config("total_g_steps, d_steps_per_g and eval_every must be positive".into()));
        }
        if self.n_sets == 0 || self.n_fake < 2 {
            return Err(Error::Config("evaluation needs n_sets >= 1 and n_fake >= 2".into()));
        }
        Ok(())
    }

    /// Flat `key = value` form listing every key that applies to the method.
    pub fn render(&self) -> String {
        let m = self.method;
        let mut lines = vec![format!("method = {m}")];
        let mut put = |k: &str, v: String| lines.push(format!("{k} = {v}"));
        if m.allows_self_supervision_flag() && !m.implies_self_supervision() {
            put("self_supervised", self.self_supervised.to_string());
        }
        if let Some(k) = self.k_percent {
            put("k_percent", k.to_string());
        }
        if let Some(c) = self.n_clusters {
            put("n_clusters", c.to_string());
        }
        if m.uses_s2l_provider() {
            put("label_mode", self.label_mode.to_string());
        }
        if m.is_cotrain() {
            put("lambda", self.weights.lambda.to_string());
            put("labeled_per_batch", self.labeled_per_batch.to_string());
        }
        if self.uses_self_supervision() {
            put("alpha", self.weights.alpha.to_string());
            put("beta", self.weights.beta.to_string());
            put("rotated_per_batch", self.rotated_per_batch.to_string());
        }
        let o = &self.optimizer;
        put("g_lr", o.g_lr.to_string());
        put("d_lr", o.d_lr.to_string());
        put("beta1", o.beta1.to_string());
        put("beta2", o.beta2.to_string());
        put("adam_eps", o.eps.to_string());
        put("batch_size", o.batch_size.to_string());
        put("latent_dim", o.latent_dim.to_string());
        put("total_g_steps", self.total_g_steps.to_string());
        put("d_steps_per_g", self.d_steps_per_g.to_string());
        put("eval_every", self.eval_every.to_string());
        put("n_fake", self.n_fake.to_string());
        put("n_sets", self.n_sets.to_string());
        put("label_seed", self.label_seed.to_string());
        put("arch", self.arch.to_string());
        lines.join("\n") + "\n"
    }

    /// Parses the `key = value` form. Keys that do not apply to the method
    /// are rejected; omitted keys take the method's defaults.
    pub fn parse(text: &str) -> Result<Self> {
        Self::from_entries(&kv::parse(text)?)
    }

    pub fn from_entries(entries: &[kv::Entry]) -> Result<Self> {
        let method_entry = entries
            .iter()
            .find(|e| e.key == "method")
            .ok_or_else(|| Error::Config("configuration has no method".into()))?;
        let method: Method = method_entry.value.parse()?;
        let arch = match entries.iter().find(|e| e.key == "arch") {
            Some(e) => e.value.parse()?,
            None => Arch::Desk,
        };
        let mut c = match arch {
            Arch::Desk => Self::new(method),
            Arch::FullScale => Self::full_scale(method),
        };
        let mut batch_set = false;
        for e in entries {
            let reject = |why: &str| Err(Error::Parse { line: e.line, msg: format!("{} {why} for {method}", e.key) });
            match e.key.as_str() {
                "method" | "arch" => {}
                "self_supervised" => {
                    if !method.allows_self_supervision_flag() {
                        return reject("does not apply");
                    }
                    c.self_supervised = e.bool()?;
                }
                "k_percent" => {
                    if !method.uses_k_percent() {
                        return reject("does not apply");
                    }
                    c.k_percent = Some(e.parse()?);
                }
                "n_clusters" => {
                    if method != Method::Clustering {
                        return reject("does not apply");
                    }
                    c.n_clusters = Some(e.parse()?);
                }
                "label_mode" => {
                    if !method.uses_s2l_provider() {
                        return reject("does not apply");
                    }
                    c.label_mode = e.value.parse()?;
                }
                "lambda" | "labeled_per_batch" if !method.is_cotrain() => return reject("applies only to co-training"),
                "lambda" => c.weights.lambda = e.parse()?,
                "labeled_per_batch" => c.labeled_per_batch = e.parse()?,
                "gamma" => c.weights.gamma = e.parse()?,
                "alpha" => c.weights.alpha = e.parse()?,
                "beta" => c.weights.beta = e.parse()?,
                "rotated_per_batch" => c.rotated_per_batch = e.parse()?,
                "g_lr" => c.optimizer.g_lr = e.parse()?,
                "d_lr" => c.optimizer.d_lr = e.parse()?,
                "beta1" => c.optimizer.beta1 = e.parse()?,
                "beta2" => c.optimizer.beta2 = e.parse()?,
                "adam_eps" => c.optimizer.eps = e.parse()?,
                "batch_size" => {
                    c.optimizer.batch_size = e.parse()?;
                    batch_set = true;
                }
                "latent_dim" => c.optimizer.latent_dim = e.parse()?,
                "total_g_steps" => c.total_g_steps = e.parse()?,
                "d_steps_per_g" => c.d_steps_per_g = e.parse()?,
                "eval_every" => c.eval_every = e.parse()?,
                "n_fake" => c.n_fake = e.parse()?,
                "n_sets" => c.n_sets = e.parse()?,
                "label_seed" => c.label_seed = e.parse()?,
                _ => return Err(Error::Parse { line: e.line, msg: format!("unknown key {:?}", e.key) }),
            }
        }
        // Self-supervision weights only mean something with the flag set.
        if !c.uses_self_supervision() {
            if let Some(e) = entries.iter().find(|e| matches!(e.key.as_str(), "alpha" | "beta" | "rotated_per_batch")) {
                return Err(Error::Parse { line: e.line, msg: format!("{} needs self-supervision", e.key) });
            }
        }
        if batch_set {
            let b = c.optimizer.batch_size;
            if !entries.iter().any(|e| e.key == "rotated_per_batch") {
                c.rotated_per_batch = (b / 4).max(1);
            }
            if !entries.iter().any(|e| e.key == "labeled_per_batch") {
                c.labeled_per_batch = (b / 4).max(1);
            }
        }
        c.validate()?;
        Ok(c)
    }
}
