use std::path::Path;
use std::process::{Command, Output};

fn fewlabel(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fewlabel"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .env_remove("FEWLABEL_DATA_DIR")
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const TINY: &str = "\
synthetic_per_class = 8
eval_per_class = 8
seeds = 1,2
[embedder]
epochs = 1
batch_size = 16
num_unlabeled = 0
[run biggan]
method = BIGGAN
batch_size = 8
total_g_steps = 2
eval_every = 1
n_fake = 16
n_sets = 1
[run single]
method = SINGLE_LABEL
batch_size = 8
total_g_steps = 1
n_fake = 16
n_sets = 1
";

#[test]
fn dry_run_prints_the_resolved_configuration() {
    let tmp = tempfile::tempdir().unwrap();
    let o = fewlabel(tmp.path(), &["train", "--method", "BIGGAN_K", "--k-percent", "20", "--seeds", "4,5", "--dry-run"]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.starts_with("# BIGGAN_K-k20 seeds [4, 5]\n"), "{out}");
    assert!(out.contains("k_percent = 20"));
    assert!(std::fs::read_dir(tmp.path()).unwrap().next().is_none(), "dry run wrote files");
}

#[test]
fn provider_methods_need_a_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let o = fewlabel(tmp.path(), &["train", "--method", "S3GAN", "--dry-run"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("provider"));
}

#[test]
fn missing_inputs_exit_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("m.txt"), "dataset = absent.txt\nnum_classes = 3\n[run b]\nmethod = BIGGAN\n").unwrap();
    assert_eq!(fewlabel(tmp.path(), &["train", "--manifest", "m.txt"]).status.code(), Some(2));
    assert_eq!(fewlabel(tmp.path(), &["train", "--manifest", "nope.txt"]).status.code(), Some(2));
    std::fs::create_dir(tmp.path().join("empty")).unwrap();
    assert_eq!(fewlabel(tmp.path(), &["report", "empty"]).status.code(), Some(2));
}

#[test]
fn train_resume_and_report_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("m.txt"), TINY).unwrap();
    let o = fewlabel(tmp.path(), &["train", "--manifest", "m.txt", "--method", "BIGGAN"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert!(out.contains("BIGGAN seed 1: 32 training images"), "{out}");
    assert!(out.contains("BIGGAN: median FID"), "{out}");
    let log = tmp.path().join("logs/BIGGAN/seed-2/metrics.jsonl");
    assert_eq!(std::fs::read_to_string(&log).unwrap().lines().count(), 3);
    assert!(tmp.path().join("artifacts/embedder/network.safetensors").exists());

    let again = stdout(&fewlabel(tmp.path(), &["train", "--manifest", "m.txt", "--method", "BIGGAN"]));
    assert!(again.contains("resumed at step 2"), "{again}");
    assert!(!again.contains("trained evaluation embedder"));

    let o = fewlabel(tmp.path(), &["report", "--manifest", "m.txt", "--out", "r"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let tables = std::fs::read_to_string(tmp.path().join("r/tables.md")).unwrap();
    assert!(tables.contains("| BIGGAN |"));
    assert!(!tables.contains("SINGLE_LABEL"));
}
