//! `fewlabel`: pretrain label providers, train GANs and emit reports.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fewlabel::experiment::{
    ensure_embedder, real_statistics, run_pretrain_stage, run_stage, ExperimentManifest, RunStage, StageOutcome,
};
use fewlabel::report::write_report_targets;
use fewlabel::trainer::{Method, MethodConfig};
use fewlabel::Error;

#[derive(Parser, Debug)]
#[command(name = "fewlabel", version, about = "Label-efficient conditional GAN experiments")]
struct Cli {
    /// Root that relative dataset manifest paths resolve against.
    #[arg(long, env = "FEWLABEL_DATA_DIR", default_value = ".", global = true)]
    data_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train feature extractors and write label-provider artifacts.
    Pretrain {
        #[arg(long)]
        manifest: PathBuf,
        /// Artifact directory, overriding the manifest.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train every selected run for every seed. Interrupted runs resume.
    Train(TrainArgs),
    /// Tables, provenance and charts from metric logs.
    Report {
        /// Log directory; defaults to the manifest's.
        logs: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, default_value = "reports")]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Without a manifest, `--method` describes a single synthetic-data run.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Only runs of this method.
    #[arg(long)]
    method: Option<Method>,
    /// Only runs with this label percentage.
    #[arg(long)]
    k_percent: Option<f64>,
    /// Print the resolved configurations and exit.
    #[arg(long)]
    dry_run: bool,
    /// Log directory, overriding the manifest.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load_manifest(path: &Path) -> Result<ExperimentManifest, Error> {
    let text = std::fs::read_to_string(path).map_err(|_| Error::MissingArtifact {
        path: path.to_path_buf(),
        reason: "manifest not found".into(),
    })?;
    let mut m = ExperimentManifest::parse(&text)?;
    m.rebase(path.parent().unwrap_or(Path::new(".")));
    Ok(m)
}

fn pretrain(data_dir: &Path, manifest: &Path, out: Option<PathBuf>) -> Result<(), Error> {
    let mut m = load_manifest(manifest)?;
    if let Some(out) = out {
        m.artifacts = out;
    }
    let (train, _) = m.load_datasets(data_dir)?;
    for stage in &m.pretrain {
        let dir = m.provider_dir(&stage.name);
        match run_pretrain_stage(stage, &train, &dir)? {
            StageOutcome::Skipped(_) => println!("{}: skipped, artifacts exist in {}", stage.name, dir.display()),
            StageOutcome::Built(meta) => {
                let acc = meta.held_out_accuracy.map(|a| format!(", held-out accuracy {:.3}", a)).unwrap_or_default();
                println!("{}: wrote {}{acc}", stage.name, dir.display());
            }
        }
    }
    Ok(())
}

fn select_runs(m: &ExperimentManifest, args: &TrainArgs) -> Result<Vec<RunStage>, Error> {
    let runs: Vec<RunStage> = m
        .runs
        .iter()
        .filter(|r| args.method.map_or(true, |x| r.config.method == x))
        .filter(|r| args.k_percent.map_or(true, |k| r.config.k_percent == Some(k)))
        .cloned()
        .collect();
    if runs.is_empty() {
        return Err(Error::Config("no run in the manifest matches --method/--k-percent".into()));
    }
    Ok(runs)
}

fn standalone_run(args: &TrainArgs) -> Result<RunStage, Error> {
    let method = args.method.ok_or_else(|| Error::Config("train needs --manifest or --method".into()))?;
    if method == Method::Clustering || method.uses_s2l_provider() {
        return Err(Error::Config(format!("{method} needs a label provider; use a manifest with a pretrain stage")));
    }
    let mut config = MethodConfig::new(method);
    config.k_percent = args.k_percent.or(config.k_percent);
    config.validate()?;
    Ok(RunStage { name: config.run_name(), provider: None, config })
}

fn train(data_dir: &Path, args: &TrainArgs) -> Result<(), Error> {
    let (mut m, runs) = match &args.manifest {
        Some(p) => {
            let m = load_manifest(p)?;
            let runs = select_runs(&m, args)?;
            (m, runs)
        }
        None => {
            let m = ExperimentManifest::parse("")?;
            let run = standalone_run(args)?;
            (m, vec![run])
        }
    };
    if let Some(seeds) = &args.seeds {
        m.seeds = seeds.clone();
    }
    if let Some(out) = &args.out {
        m.logs = out.clone();
    }
    if args.dry_run {
        for r in &runs {
            println!("# {} seeds {:?}", r.name, m.seeds);
            print!("{}", r.config.render());
        }
        return Ok(());
    }
    for r in &runs {
        if let Some(p) = &r.provider {
            let dir = m.provider_dir(p);
            if !dir.join(fewlabel::labels::artifacts::PROVIDER_FILE).exists() {
                return Err(Error::Config(format!(
                    "run {} needs provider {p} in {}; run `fewlabel pretrain` first",
                    r.name,
                    dir.display()
                )));
            }
        }
    }
    let (train, eval) = m.load_datasets(data_dir)?;
    let (mut embedder, fresh) = ensure_embedder(&m.embedder_path(), &train, &m.embedder)?;
    if fresh {
        println!("trained evaluation embedder {}", m.embedder_path().display());
    }
    let real = real_statistics(&mut embedder, &eval)?;
    for r in &runs {
        let report = run_stage(&m, r, &train, &real, &mut embedder, &m.seeds)?;
        for run in &report.runs {
            let resumed = run.resumed_from.map(|s| format!(", resumed at step {s}")).unwrap_or_default();
            println!(
                "{} seed {}: {} training images, FID {:.2}, IS {:.3}{}{resumed}",
                report.run_name,
                run.seed,
                run.train_size,
                run.final_record.fid_mean,
                run.final_record.is_mean,
                if run.collapsed { ", collapsed" } else { "" },
            );
        }
        println!(
            "{}: median FID {:.2}, median IS {:.3} over {} seeds",
            report.run_name, report.fid.median, report.inception_score.median, report.fid.n
        );
    }
    Ok(())
}

fn report(logs: Option<PathBuf>, manifest: Option<PathBuf>, out: &Path) -> Result<(), Error> {
    let (logs, targets) = match manifest {
        Some(p) => {
            let m = load_manifest(&p)?;
            (logs.unwrap_or(m.logs), m.reports)
        }
        None => {
            let logs = logs.ok_or_else(|| Error::Config("report needs a log directory or --manifest".into()))?;
            (logs, fewlabel::report::ReportTarget::ALL.to_vec())
        }
    };
    let files = write_report_targets(&logs, out, &targets)?;
    println!("wrote {}", files.tables.display());
    println!("wrote {}", files.provenance.display());
    for c in &files.charts {
        println!("wrote {}", c.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Pretrain { manifest, out } => pretrain(&cli.data_dir, manifest, out.clone()),
        Command::Train(args) => train(&cli.data_dir, args),
        Command::Report { logs, manifest, out } => report(logs.clone(), manifest.clone(), out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::MissingArtifact { .. } => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
