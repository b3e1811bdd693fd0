use std::path::{Path, PathBuf};

use super::{build_method, MethodConfig, StepOutcome, Trainer};
use crate::checkpoint::TensorFile;
use crate::data::LabeledDataset;
use crate::error::{io_err, Error, Result};
use crate::metrics::{parse_metrics_jsonl, Embedder, GaussianStats, MetricsRecord};

/// Rollbacks tolerated before a run is declared collapsed.
pub const MAX_RESTARTS: u64 = 3;

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.safetensors";
pub const PREVIEW_FILE: &str = "preview.png";
pub const CONFIG_FILE: &str = "config.txt";

/// Shared inputs of the runs of one experiment.
pub struct RunContext<'a> {
    /// Fully labeled training set.
    pub dataset: &'a LabeledDataset,
    /// Embedded statistics of the real evaluation images, computed once.
    pub real_stats: &'a GaussianStats,
    pub embedder: &'a mut dyn Embedder,
    pub provider_dir: Option<&'a Path>,
    /// Where per-run logs, checkpoints and previews go. Runs with an
    /// existing checkpoint resume from it.
    pub out_dir: Option<&'a Path>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub seed: u64,
    pub records: Vec<MetricsRecord>,
    /// Last record; carries `collapsed` when the run diverged.
    pub final_record: MetricsRecord,
    pub collapsed: bool,
    pub divergences: usize,
    pub d_updates: u64,
    pub g_updates: u64,
    pub train_size: usize,
    pub resumed_from: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub median: f64,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub n: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        Some(Summary { median: median(values)?, mean: mean(values)?, std: population_std(values)?, n: values.len() })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentReport {
    pub run_name: String,
    pub runs: Vec<RunResult>,
    pub fid: Summary,
    pub inception_score: Summary,
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

pub fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| crate::metrics::compensated_sum(values.iter().copied()) / values.len() as f64)
}

pub fn population_std(values: &[f64]) -> Option<f64> {
    let m = mean(values)?;
    let var = crate::metrics::compensated_sum(values.iter().map(|v| (v - m) * (v - m))) / values.len() as f64;
    Some(var.sqrt())
}

/// Directory of one seed's run below `out`.
pub fn run_dir(out: &Path, config: &MethodConfig, seed: u64) -> PathBuf {
    out.join(config.run_name()).join(format!("seed-{seed}"))
}

/// One training run: evaluates at step 0, every `eval_every` steps and at
/// the end. Non-finite updates roll back to the last evaluated state; a
/// run that needs more than [`MAX_RESTARTS`] rollbacks stops and is
/// reported as collapsed with its last valid metrics.
pub fn run_seed(config: &MethodConfig, seed: u64, ctx: &mut RunContext<'_>) -> Result<RunResult> {
    let mut a = build_method(config, ctx.dataset, ctx.provider_dir, seed)?;
    log::info!("{} seed {seed}: training on {} of {} images", config.run_name(), a.dataset.len(), ctx.dataset.len());
    let dir = ctx.out_dir.map(|o| run_dir(o, config, seed));
    let mut records = Vec::new();
    let mut resumed_from = None;
    let mut trainer = match dir.as_ref().map(|d| d.join(CHECKPOINT_FILE)).filter(|p| p.exists()) {
        Some(path) => {
            let t = Trainer::from_checkpoint(&a, TensorFile::load(&path)?)?;
            let log = dir.as_ref().expect("dir").join(METRICS_FILE);
            let text = std::fs::read_to_string(&log).unwrap_or_default();
            records = parse_metrics_jsonl(&text)?.into_iter().filter(|r| r.step <= t.step).collect();
            log::info!("resuming {} seed {seed} from step {}", config.run_name(), t.step);
            resumed_from = Some(t.step);
            t
        }
        None => Trainer::new(&a, seed)?,
    };
    if let Some(d) = &dir {
        std::fs::create_dir_all(d).map_err(io_err(d))?;
        std::fs::write(d.join(CONFIG_FILE), config.render()).map_err(io_err(d.join(CONFIG_FILE)))?;
        rewrite_log(&d.join(METRICS_FILE), &records)?;
    }
    let embedder_id = ctx.embedder.id().to_string();
    let evaluate = |t: &mut Trainer, a: &super::Assembled, ctx: &mut RunContext<'_>| -> Result<MetricsRecord> {
        let e = t.evaluate(a, ctx.real_stats, ctx.embedder)?;
        Ok(MetricsRecord {
            step: t.step,
            seed,
            method: config.run_name(),
            fid_mean: e.fid_mean,
            is_mean: e.is_mean,
            embedder_id: embedder_id.clone(),
            n_fake: e.n_fake,
            n_sets: e.sets_evaluated,
            k_percent: config.k_percent,
            collapsed: false,
        })
    };
    let finished = |records: &[MetricsRecord]| records.last().is_some_and(|r| r.step >= config.total_g_steps || r.collapsed);
    if records.is_empty() {
        let r = evaluate(&mut trainer, &a, ctx)?;
        persist(&dir, &mut trainer, config, &r, &mut records, &a)?;
    }
    let mut last_good = trainer.clone();
    let mut collapsed = finished(&records) && records.last().is_some_and(|r| r.collapsed);
    while trainer.step < config.total_g_steps && !finished(&records) {
        match trainer.train_step(&mut a)? {
            StepOutcome::Completed { .. } => {}
            StepOutcome::Diverged(ev) => {
                let events = trainer.divergences.clone();
                let restarts = trainer.restarts + 1;
                trainer = last_good.clone();
                trainer.divergences = events;
                trainer.restarts = restarts;
                log::warn!("{} seed {seed}: divergence at step {}, rolled back to step {}", config.run_name(), ev.step, trainer.step);
                if restarts > MAX_RESTARTS {
                    let mut last = records.last().cloned().expect("step-0 record");
                    last.collapsed = true;
                    last.step = ev.step;
                    append(&dir, &last)?;
                    records.push(last);
                    collapsed = true;
                    break;
                }
                continue;
            }
        }
        if trainer.step % config.eval_every == 0 || trainer.step == config.total_g_steps {
            let r = evaluate(&mut trainer, &a, ctx)?;
            if !r.fid_mean.is_finite() || !r.is_mean.is_finite() {
                return Err(Error::State(format!("non-finite metrics at step {}", trainer.step)));
            }
            persist(&dir, &mut trainer, config, &r, &mut records, &a)?;
            last_good = trainer.clone();
        }
    }
    let final_record = records.last().cloned().expect("at least the step-0 record");
    Ok(RunResult {
        seed,
        collapsed,
        divergences: trainer.divergences.len(),
        d_updates: trainer.d_updates,
        g_updates: trainer.g_updates,
        train_size: a.dataset.len(),
        resumed_from,
        records,
        final_record,
    })
}

fn persist(
    dir: &Option<PathBuf>,
    t: &mut Trainer,
    config: &MethodConfig,
    r: &MetricsRecord,
    records: &mut Vec<MetricsRecord>,
    a: &super::Assembled,
) -> Result<()> {
    records.push(r.clone());
    if let Some(d) = dir {
        append(dir, r)?;
        t.to_checkpoint(config).save(&d.join(CHECKPOINT_FILE))?;
        let preview = t.preview(a)?;
        crate::report::write_preview(&d.join(PREVIEW_FILE), &preview)?;
    }
    Ok(())
}

fn append(dir: &Option<PathBuf>, r: &MetricsRecord) -> Result<()> {
    use std::io::Write;
    if let Some(d) = dir {
        let path = d.join(METRICS_FILE);
        let mut f = std::fs::OpenOptions::new().create(true).append(true).open(&path).map_err(io_err(&path))?;
        writeln!(f, "{}", r.to_line()).map_err(io_err(&path))?;
    }
    Ok(())
}

fn rewrite_log(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    let text: String = records.iter().map(|r| r.to_line() + "\n").collect();
    std::fs::write(path, text).map_err(io_err(path))
}

/// Runs every seed and summarizes the final metrics across seeds
/// (collapsed runs included).
pub fn run_experiment(config: &MethodConfig, seeds: &[u64], eval_every: u64, ctx: &mut RunContext<'_>) -> Result<ExperimentReport> {
    if seeds.is_empty() {
        return Err(Error::Argument("run_experiment needs at least one seed".into()));
    }
    let mut config = config.clone();
    config.eval_every = eval_every;
    config.validate()?;
    let runs = seeds.iter().map(|&s| run_seed(&config, s, ctx)).collect::<Result<Vec<_>>>()?;
    let fids: Vec<f64> = runs.iter().map(|r| r.final_record.fid_mean).collect();
    let iss: Vec<f64> = runs.iter().map(|r| r.final_record.is_mean).collect();
    Ok(ExperimentReport {
        run_name: config.run_name(),
        fid: Summary::of(&fids).expect("nonempty"),
        inception_score: Summary::of(&iss).expect("nonempty"),
        runs,
    })
}
