//! Experiment manifests and the pretrain / train / report stages they drive.
//!
//! A manifest is the flat key-value format with sections:
//!
//! ```text
//! dataset = synthetic          # or a label manifest path
//! artifacts = artifacts
//! logs = logs
//! seeds = 1,2,3
//! reports = median_grid, mean_std_grid, fid_chart
//!
//! [embedder]
//! epochs = 5
//!
//! [pretrain clusters50]
//! kind = cluster
//! n_clusters = 50
//!
//! [run s3gan10]
//! provider = s2l10
//! method = S3GAN
//! k_percent = 10
//! ```
//!
//! Relative paths resolve against the manifest's directory, except the
//! dataset, which resolves against the data root.

use std::path::{Path, PathBuf};

use crate::data::{load_manifest_dataset, subsample_labels, LabeledDataset, SyntheticConfig, SyntheticShapes};
use crate::error::{Error, Result};
use crate::kv::{self, Entry};
use crate::labels::{
    classification_accuracy, extract_features, fit_clusters, iterations_for_epochs, load_network, load_provider,
    save_network, save_provider, train_feature_extractor, LabelMode, LabelProvider, PretrainConfig, ProviderMeta,
    CLASS_HEAD,
};
use crate::report::ReportTarget;
use crate::metrics::{dataset_stats, train_embedder, ConvNetEmbedder, Embedder, GaussianStats};
use crate::trainer::{run_experiment, ExperimentReport, MethodConfig, RunContext};

/// Training data: the procedural glyph set or a label manifest on disk.
#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSource {
    Synthetic(SyntheticConfig),
    Manifest { path: PathBuf, num_classes: Option<usize> },
}

#[derive(Clone, Debug, PartialEq)]
pub enum PretrainKind {
    Cluster { n_clusters: usize, kmeans_epochs: usize, kmeans_batch: usize },
    S2l { k_percent: f64, mode: LabelMode, label_seed: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainStage {
    pub name: String,
    pub kind: PretrainKind,
    pub config: PretrainConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunStage {
    pub name: String,
    /// Name of the pretrain stage whose provider the run uses.
    pub provider: Option<String>,
    pub config: MethodConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentManifest {
    pub dataset: DatasetSource,
    pub artifacts: PathBuf,
    pub logs: PathBuf,
    pub seeds: Vec<u64>,
    pub reports: Vec<ReportTarget>,
    pub embedder: PretrainConfig,
    /// Size of the real evaluation set drawn from the synthetic generator.
    pub eval_per_class: usize,
    pub pretrain: Vec<PretrainStage>,
    pub runs: Vec<RunStage>,
}

fn parse_err(e: &Entry, msg: impl std::fmt::Display) -> Error {
    Error::Parse { line: e.line, msg: format!("{}: {msg}", e.key) }
}

fn pretrain_config(entries: &[&Entry], mut cfg: PretrainConfig) -> Result<(PretrainConfig, Vec<usize>)> {
    let mut used = Vec::new();
    let mut epochs = None;
    for (i, e) in entries.iter().enumerate() {
        let hit = match e.key.as_str() {
            "epochs" => {
                epochs = Some(e.parse()?);
                true
            }
            "batch_size" => {
                cfg.batch_size = e.parse()?;
                true
            }
            "num_unlabeled" => {
                cfg.num_unlabeled = e.parse()?;
                true
            }
            "gamma" => {
                cfg.gamma = e.parse()?;
                true
            }
            "lr_per_256" => {
                cfg.lr_per_256 = e.parse()?;
                true
            }
            "momentum" => {
                cfg.momentum = e.parse()?;
                true
            }
            "seed" => {
                cfg.seed = e.parse()?;
                true
            }
            "widths" => {
                cfg.widths = e.list()?;
                true
            }
            _ => false,
        };
        if hit {
            used.push(i);
        }
    }
    if let Some(ep) = epochs {
        cfg = cfg.scaled(ep);
    }
    cfg.validate()?;
    Ok((cfg, used))
}

impl ExperimentManifest {
    pub fn parse(text: &str) -> Result<Self> {
        let entries = kv::parse(text)?;
        let mut m = ExperimentManifest {
            dataset: DatasetSource::Synthetic(SyntheticConfig::default()),
            artifacts: PathBuf::from("artifacts"),
            logs: PathBuf::from("logs"),
            seeds: vec![1, 2, 3],
            reports: ReportTarget::ALL.to_vec(),
            embedder: PretrainConfig::desk().scaled(5),
            eval_per_class: 500,
            pretrain: Vec::new(),
            runs: Vec::new(),
        };
        let mut sections: Vec<(String, Vec<&Entry>)> = Vec::new();
        let mut synthetic = SyntheticConfig::default();
        let mut manifest_path = None;
        let mut num_classes = None;
        for e in &entries {
            match &e.section {
                Some(s) => match sections.last_mut() {
                    Some((name, list)) if name == s => list.push(e),
                    _ => sections.push((s.clone(), vec![e])),
                },
                None => match e.key.as_str() {
                    "dataset" => {
                        if e.value != "synthetic" {
                            manifest_path = Some(PathBuf::from(&e.value));
                        }
                    }
                    "num_classes" => num_classes = Some(e.parse()?),
                    "synthetic_per_class" => synthetic.per_class = e.parse()?,
                    "synthetic_seed" => synthetic.seed = e.parse()?,
                    "eval_per_class" => m.eval_per_class = e.parse()?,
                    "artifacts" => m.artifacts = PathBuf::from(&e.value),
                    "logs" => m.logs = PathBuf::from(&e.value),
                    "seeds" => m.seeds = e.list()?,
                    "reports" => m.reports = e.list().map_err(|err| parse_err(e, err))?,
                    _ => return Err(parse_err(e, "unknown key")),
                },
            }
        }
        m.dataset = match manifest_path {
            Some(path) => DatasetSource::Manifest { path, num_classes },
            None => DatasetSource::Synthetic(synthetic),
        };
        if m.seeds.is_empty() {
            return Err(Error::Config("manifest lists no seeds".into()));
        }
        for (section, list) in &sections {
            let (kind, name) = section.split_once(char::is_whitespace).map_or((section.as_str(), ""), |(k, n)| (k, n.trim()));
            match kind {
                "embedder" => {
                    let (cfg, used) = pretrain_config(list, PretrainConfig::desk().scaled(5))?;
                    if let Some(e) = list.iter().enumerate().find(|(i, _)| !used.contains(i)).map(|(_, e)| e) {
                        return Err(parse_err(e, "unknown embedder key"));
                    }
                    m.embedder = cfg;
                }
                "pretrain" => m.pretrain.push(parse_pretrain(name, list)?),
                "run" => {
                    let provider = list.iter().find(|e| e.key == "provider").map(|e| e.value.clone());
                    let rest: Vec<Entry> = list.iter().filter(|e| e.key != "provider").map(|e| (*e).clone()).collect();
                    let config = MethodConfig::from_entries(&rest)?;
                    m.runs.push(RunStage { name: name.to_string(), provider, config });
                }
                _ => {
                    return Err(Error::Parse { line: list[0].line, msg: format!("unknown section kind {kind:?}") });
                }
            }
        }
        m.validate()?;
        Ok(m)
    }

    /// Every run's provider must name an earlier pretrain stage; names are unique.
    pub fn validate(&self) -> Result<()> {
        let mut names = std::collections::BTreeSet::new();
        for n in self.pretrain.iter().map(|p| &p.name).chain(self.runs.iter().map(|r| &r.name)) {
            if n.is_empty() || !names.insert(n.clone()) {
                return Err(Error::Config(format!("stage names must be nonempty and unique, got {n:?}")));
            }
        }
        for r in &self.runs {
            let m = r.config.method;
            let needs = m == crate::trainer::Method::Clustering || m.uses_s2l_provider();
            match (&r.provider, needs) {
                (Some(p), true) => {
                    let stage = self
                        .pretrain
                        .iter()
                        .find(|s| &s.name == p)
                        .ok_or_else(|| Error::Config(format!("run {} uses provider {p:?}, which no pretrain stage produces", r.name)))?;
                    let ok = match (&stage.kind, m) {
                        (PretrainKind::Cluster { n_clusters, .. }, crate::trainer::Method::Clustering) => {
                            Some(*n_clusters) == r.config.n_clusters
                        }
                        (PretrainKind::S2l { k_percent, label_seed, .. }, _) if m.uses_s2l_provider() => {
                            Some(*k_percent) == r.config.k_percent && *label_seed == r.config.label_seed
                        }
                        _ => false,
                    };
                    if !ok {
                        return Err(Error::Config(format!("run {} does not match pretrain stage {p}", r.name)));
                    }
                }
                (None, true) => return Err(Error::Config(format!("run {} ({m}) needs a provider", r.name))),
                (Some(_), false) => return Err(Error::Config(format!("run {} ({m}) takes no provider", r.name))),
                (None, false) => {}
            }
        }
        Ok(())
    }

    pub fn provider_dir(&self, stage: &str) -> PathBuf {
        self.artifacts.join("providers").join(stage)
    }

    pub fn embedder_path(&self) -> PathBuf {
        self.artifacts.join("embedder").join("network.safetensors")
    }

    /// Resolves relative artifact and log paths against `base`.
    pub fn rebase(&mut self, base: &Path) {
        for p in [&mut self.artifacts, &mut self.logs] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    /// Training and evaluation sets. Synthetic data uses split 0 for
    /// training and split 1 for evaluation; a manifest dataset serves both.
    pub fn load_datasets(&self, data_root: &Path) -> Result<(LabeledDataset, LabeledDataset)> {
        match &self.dataset {
            DatasetSource::Synthetic(cfg) => {
                let eval = SyntheticConfig { per_class: self.eval_per_class, ..cfg.clone() };
                Ok((SyntheticShapes::generate(cfg, 0)?, SyntheticShapes::generate(&eval, 1)?))
            }
            DatasetSource::Manifest { path, num_classes } => {
                let path = if path.is_relative() { data_root.join(path) } else { path.clone() };
                if !path.is_file() {
                    return Err(Error::MissingArtifact { path, reason: "dataset manifest not found".into() });
                }
                let root = path.parent().unwrap_or(Path::new("."));
                let ds = load_manifest_dataset(root, &path, *num_classes)?;
                Ok((ds.clone(), ds))
            }
        }
    }
}

fn parse_pretrain(name: &str, list: &[&Entry]) -> Result<PretrainStage> {
    let kind_entry = list.iter().find(|e| e.key == "kind").ok_or_else(|| Error::Config(format!("pretrain {name} has no kind")))?;
    let (config, mut used) = pretrain_config(list, PretrainConfig::desk())?;
    let get = |key: &str| list.iter().position(|e| e.key == key);
    let kind = match kind_entry.value.as_str() {
        "cluster" => {
            let n = get("n_clusters").ok_or_else(|| Error::Config(format!("pretrain {name} needs n_clusters")))?;
            used.push(n);
            let mut kmeans_epochs = 10;
            let mut kmeans_batch = 256;
            if let Some(i) = get("kmeans_epochs") {
                kmeans_epochs = list[i].parse()?;
                used.push(i);
            }
            if let Some(i) = get("kmeans_batch") {
                kmeans_batch = list[i].parse()?;
                used.push(i);
            }
            PretrainKind::Cluster { n_clusters: list[n].parse()?, kmeans_epochs, kmeans_batch }
        }
        "s2l" => {
            let k = get("k_percent").ok_or_else(|| Error::Config(format!("pretrain {name} needs k_percent")))?;
            used.push(k);
            let mut mode = LabelMode::Hard;
            let mut label_seed = 0;
            if let Some(i) = get("label_mode") {
                mode = list[i].value.parse()?;
                used.push(i);
            }
            if let Some(i) = get("label_seed") {
                label_seed = list[i].parse()?;
                used.push(i);
            }
            let k_percent: f64 = list[k].parse()?;
            if !(k_percent > 0.0 && k_percent <= 100.0) {
                return Err(parse_err(list[k], "must be in (0, 100]"));
            }
            PretrainKind::S2l { k_percent, mode, label_seed }
        }
        other => return Err(parse_err(kind_entry, format!("unknown pretrain kind {other:?}"))),
    };
    used.push(get("kind").expect("found above"));
    if let Some(e) = list.iter().enumerate().find(|(i, _)| !used.contains(i)).map(|(_, e)| e) {
        return Err(parse_err(e, "unknown pretrain key"));
    }
    Ok(PretrainStage { name: name.to_string(), kind, config })
}

/// Result of a pretrain stage.
#[derive(Clone, Debug, PartialEq)]
pub enum StageOutcome {
    Built(ProviderMeta),
    /// Artifacts were already present.
    Skipped(ProviderMeta),
}

/// Runs one pretrain stage unless its artifacts already exist.
pub fn run_pretrain_stage(stage: &PretrainStage, train: &LabeledDataset, dir: &Path) -> Result<StageOutcome> {
    if dir.join(crate::labels::artifacts::PROVIDER_FILE).exists() {
        let (_, meta) = load_provider(dir)?;
        return Ok(StageOutcome::Skipped(meta));
    }
    let cfg = &stage.config;
    let (provider, meta) = match &stage.kind {
        PretrainKind::Cluster { n_clusters, kmeans_epochs, kmeans_batch } => {
            let mut net = train_feature_extractor(train, cfg, false)?;
            let feats: Vec<f64> = extract_features(&mut net, train)?.data().iter().map(|&v| v as f64).collect();
            let dim = net.spec.representation_dim();
            let iters = iterations_for_epochs(train.len(), *kmeans_batch, *kmeans_epochs);
            let model = fit_clusters(&feats, dim, *n_clusters, *kmeans_batch, iters, cfg.seed)?;
            let p = LabelProvider::cluster(net, model, train)?;
            let meta = ProviderMeta::for_provider(&p, &train.id, cfg.seed);
            (p, meta)
        }
        PretrainKind::S2l { k_percent, mode, label_seed } => {
            let (partial, warnings) = subsample_labels(train, *k_percent, *label_seed)?;
            for w in warnings {
                log::warn!("{}", w.message);
            }
            let mut net = train_feature_extractor(&partial, cfg, true)?;
            // Accuracy on the examples whose labels were withheld.
            let held_out: Vec<Option<usize>> = (0..train.len())
                .map(|i| if partial.label(i).is_none() { train.label(i) } else { None })
                .collect();
            let held = train.with_labels(held_out, train.num_classes())?;
            let acc = if held.labeled_count() > 0 { Some(classification_accuracy(&mut net, CLASS_HEAD, &held)?) } else { None };
            let p = LabelProvider::s2l(net, *mode)?;
            let mut meta = ProviderMeta::for_provider(&p, &train.id, cfg.seed);
            meta.k_percent = Some(*k_percent);
            meta.held_out_accuracy = acc;
            (p, meta)
        }
    };
    save_provider(dir, &provider, &meta)?;
    Ok(StageOutcome::Built(meta))
}

/// Loads the evaluation embedder, training and saving it first if absent.
pub fn ensure_embedder(path: &Path, train: &LabeledDataset, cfg: &PretrainConfig) -> Result<(ConvNetEmbedder, bool)> {
    if path.exists() {
        let (net, meta) = load_network(path)?;
        let e = ConvNetEmbedder::new(net)?;
        if let Some(id) = meta.get("embedder_id").and_then(|v| v.as_str()) {
            if id != e.id() {
                return Err(Error::Checkpoint(format!("{} does not reproduce its recorded id {id}", path.display())));
            }
        }
        return Ok((e, false));
    }
    let e = train_embedder(train, cfg)?;
    let mut extra = serde_json::Map::new();
    extra.insert("embedder_id".into(), e.id().into());
    save_network(path, &e.net, extra)?;
    Ok((e, true))
}

/// Trains every seed of `run` and returns the experiment summary.
pub fn run_stage(
    manifest: &ExperimentManifest,
    run: &RunStage,
    train: &LabeledDataset,
    real_stats: &GaussianStats,
    embedder: &mut dyn Embedder,
    seeds: &[u64],
) -> Result<ExperimentReport> {
    let provider_dir = run.provider.as_ref().map(|p| manifest.provider_dir(p));
    let mut ctx = RunContext {
        dataset: train,
        real_stats,
        embedder,
        provider_dir: provider_dir.as_deref(),
        out_dir: Some(&manifest.logs),
    };
    run_experiment(&run.config, seeds, run.config.eval_every, &mut ctx)
}

/// Embedded statistics of the evaluation set.
pub fn real_statistics(embedder: &mut dyn Embedder, eval: &LabeledDataset) -> Result<GaussianStats> {
    dataset_stats(embedder, eval, 500)
}
