use std::path::Path;

use super::config::{Arch, Method, MethodConfig};
use crate::data::{subsample_labels, LabeledDataset};
use crate::error::{Error, Result};
use crate::labels::{load_provider, LabelProvider, ProviderKind};
use crate::models::{DiscriminatorSpec, GeneratorSpec};

/// Everything a method needs to train: its training set, label provider
/// and network specs.
#[derive(Debug)]
pub struct Assembled {
    pub config: MethodConfig,
    pub dataset: LabeledDataset,
    pub provider: LabelProvider,
    pub gen_spec: GeneratorSpec,
    pub disc_spec: DiscriminatorSpec,
}

/// Wires `config` to a fully labeled `dataset`.
///
/// CLUSTERING, S2GAN and S3GAN load their pretrained provider from
/// `provider_dir`. `seed` drives the RANDOM_LABEL draws.
pub fn build_method(config: &MethodConfig, dataset: &LabeledDataset, provider_dir: Option<&Path>, seed: u64) -> Result<Assembled> {
    config.validate()?;
    let k = dataset.num_classes();
    let m = config.method;
    if dataset.labeled_count() != dataset.len() {
        return Err(Error::State(format!("{} must be fully labeled; methods withhold labels themselves", dataset.id)));
    }
    let subsample = |ds: &LabeledDataset| -> Result<LabeledDataset> {
        let kp = config.k_percent.expect("validated");
        let (out, warnings) = subsample_labels(ds, kp, config.label_seed)?;
        for w in warnings {
            log::warn!("{}", w.message);
        }
        Ok(out)
    };
    let (train, provider) = match m {
        Method::Biggan => (dataset.clone(), LabelProvider::ground_truth(k)),
        Method::BigganK => {
            let pruned = subsample(dataset)?.labeled_only();
            log::info!("{m}: training on the {} labeled of {} examples", pruned.len(), dataset.len());
            (pruned, LabelProvider::ground_truth(k))
        }
        Method::SingleLabel => (dataset.clone(), LabelProvider::single()),
        Method::RandomLabel => (dataset.clone(), LabelProvider::random(k, seed)),
        Method::Clustering | Method::S2gan | Method::S3gan => {
            let dir = provider_dir.ok_or_else(|| Error::Config(format!("{m} needs a pretrained provider directory")))?;
            let (mut p, meta) = load_provider(dir).map_err(|e| match e {
                Error::MissingArtifact { path, reason } => {
                    Error::Config(format!("missing pretrained artifact {}: {reason}", path.display()))
                }
                other => other,
            })?;
            let want = if m == Method::Clustering { ProviderKind::Cluster } else { ProviderKind::S2l };
            if p.kind != want {
                return Err(Error::Config(format!("{} holds a {:?} provider, {m} needs {want:?}", dir.display(), p.kind)));
            }
            if m == Method::Clustering && Some(p.num_classes) != config.n_clusters {
                return Err(Error::Config(format!(
                    "{} has {} clusters, configuration asks for {:?}",
                    dir.display(),
                    p.num_classes,
                    config.n_clusters
                )));
            }
            if m != Method::Clustering && meta.k_percent != config.k_percent {
                return Err(Error::Config(format!(
                    "{} was pretrained with k_percent {:?}, configuration asks for {:?}",
                    dir.display(),
                    meta.k_percent,
                    config.k_percent
                )));
            }
            if !dataset.id.starts_with(&meta.dataset_id) && !meta.dataset_id.starts_with(&dataset.id) {
                log::warn!("provider {} was pretrained on {}, training on {}", dir.display(), meta.dataset_id, dataset.id);
            }
            p.mode = config.label_mode;
            (dataset.clone(), p)
        }
        Method::S2ganCo | Method::S3ganCo => (subsample(dataset)?, LabelProvider::cotrain(k)),
    };
    let keff = provider.num_classes;
    let (mut gen_spec, mut disc_spec) = match config.arch {
        Arch::Desk => (GeneratorSpec::desk(keff), DiscriminatorSpec::desk(keff)),
        Arch::FullScale => {
            let mut g = GeneratorSpec::full_scale();
            let mut d = DiscriminatorSpec::full_scale();
            g.num_classes = keff;
            d.num_classes = keff;
            (g, d)
        }
    };
    gen_spec.latent_dim = config.optimizer.latent_dim;
    disc_spec.projection = m != Method::SingleLabel;
    disc_spec.rotation_head = config.uses_self_supervision();
    disc_spec.cotrain_head = m.is_cotrain();
    if gen_spec.image_size != train.image_size() || disc_spec.in_channels != train.channels() {
        return Err(Error::Config(format!(
            "{} architecture expects {}px images with {} channels, dataset has {}px with {}",
            config.arch,
            gen_spec.image_size,
            disc_spec.in_channels,
            train.image_size(),
            train.channels()
        )));
    }
    gen_spec.validate().map_err(|e| Error::Config(e.to_string()))?;
    disc_spec.validate().map_err(|e| Error::Config(e.to_string()))?;
    Ok(Assembled { config: config.clone(), dataset: train, provider, gen_spec, disc_spec })
}
