//! Acceptance suite. Prints one `PASS`/`FAIL` line per criterion and exits
//! nonzero if any criterion fails.
//!
//! Pass criterion numbers as arguments to run a subset:
//! `cargo test -p fewlabel --test acceptance -- 2 3`.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::Instant;

use fewlabel::data::{LabeledDataset, SyntheticConfig, SyntheticShapes};
use fewlabel::experiment::{run_pretrain_stage, PretrainKind, PretrainStage};
use fewlabel::labels::{assign_cluster, classification_accuracy, load_provider, ClusterModel, LabelMode, PretrainConfig, CLASS_HEAD};
use fewlabel::losses::*;
use fewlabel::metrics::{
    dataset_stats, evaluate_model, fid, inception_score, train_embedder, ConvNetEmbedder, EmbedResult, Embedder,
    GaussianStats,
};
use fewlabel::models::{spectral_normalize, Discriminator, DiscriminatorSpec, Generator, GeneratorSpec, SpectralNormState};
use fewlabel::report::{build_grid, collect_logs, final_records, median_cell, write_report, CellKey, Metric};
use fewlabel::trainer::{build_method, run_experiment, run_seed, Method, MethodConfig, RunContext, StepOutcome, Trainer};
use fewlabel_autodiff::testing::{numeric_grad, relative_error};
use fewlabel_autodiff::{Graph, Tensor, Var};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn close(a: f64, b: f64, tol: f64, what: &str) -> Result<(), String> {
    ensure((a - b).abs() <= tol, || format!("{what}: got {a}, want {b} (tol {tol})"))
}

// ---------------------------------------------------------------- 1

fn param_counts() -> Outcome {
    const G: usize = 70_433_988;
    const D: usize = 87_982_370;
    let t = Instant::now();
    let gs = GeneratorSpec::full_scale();
    let ds = DiscriminatorSpec::full_scale();
    ensure(gs.num_params() == G, || format!("generator spec counts {} parameters", gs.num_params()))?;
    ensure(ds.num_params() == D, || format!("discriminator spec counts {} parameters", ds.num_params()))?;
    let g = Generator::<f32>::new(gs, 0).map_err(|e| e.to_string())?;
    ensure(g.num_params() == G, || format!("constructed generator has {} parameters", g.num_params()))?;
    drop(g);
    let d = Discriminator::<f32>::new(ds, 0).map_err(|e| e.to_string())?;
    ensure(d.num_params() == D, || format!("constructed discriminator has {} parameters", d.num_params()))?;
    let secs = t.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("construction took {secs:.1}s"))?;
    Ok(format!("G {G}, D {D} in {secs:.1}s"))
}

// ---------------------------------------------------------------- 2

fn random_spd(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(d, d) * 0.1
}

fn random_mu(rng: &mut ChaCha8Rng, d: usize) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.gen_range(-2.0..2.0))
}

fn stats(mu: DVector<f64>, sigma: DMatrix<f64>) -> GaussianStats {
    GaussianStats { mu, sigma, n: 1000 }
}

fn fid_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let f = |a: &GaussianStats, b: &GaussianStats| fid(a, b).map_err(|e| e.to_string());
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let d = 2 + i % 7;
        let (m1, m2) = (random_mu(&mut rng, d), random_mu(&mut rng, d));
        let mean_term = (&m1 - &m2).norm_squared();

        let v1: Vec<f64> = (0..d).map(|_| rng.gen_range(0.05..3.0)).collect();
        let v2: Vec<f64> = (0..d).map(|_| rng.gen_range(0.05..3.0)).collect();
        let diag = mean_term + v1.iter().zip(&v2).map(|(a, b)| a + b - 2.0 * (a * b).sqrt()).sum::<f64>();
        let a = stats(m1.clone(), DMatrix::from_diagonal(&DVector::from_vec(v1)));
        let b = stats(m2.clone(), DMatrix::from_diagonal(&DVector::from_vec(v2)));
        let got = f(&a, &b)?;
        worst = worst.max((got - diag).abs());
        close(got, diag, 1e-6, &format!("diagonal instance {i}"))?;

        let s = random_spd(&mut rng, d);
        let a = stats(m1, s.clone());
        let b = stats(m2, s.clone());
        let got = f(&a, &b)?;
        worst = worst.max((got - mean_term).abs());
        close(got, mean_term, 1e-6, &format!("equal-covariance instance {i}"))?;

        let c = stats(random_mu(&mut rng, d), random_spd(&mut rng, d));
        close(f(&c, &c)?, 0.0, 1e-6, &format!("fid(a, a) instance {i}"))?;
        let (ab, ba) = (f(&a, &c)?, f(&c, &a)?);
        close(ab, ba, 1e-6, &format!("symmetry instance {i}"))?;
    }
    Ok(format!("20 instances, worst closed-form error {worst:.2e}"))
}

// ---------------------------------------------------------------- 3

fn is_oracles() -> Outcome {
    let k = 6;
    let same: Vec<f64> = (0..10).flat_map(|_| [0.1, 0.2, 0.3, 0.15, 0.05, 0.2]).collect();
    close(inception_score(&same, k).map_err(|e| e.to_string())?, 1.0, 1e-9, "identical rows")?;
    let mut onehot = vec![0.0; k * k];
    for c in 0..k {
        onehot[c * k + c] = 1.0;
    }
    close(inception_score(&onehot, k).map_err(|e| e.to_string())?, k as f64, 1e-9, "one-hot per class")?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let (n, k) = (3 + i % 9, 2 + i % 5);
        let mut p = Vec::with_capacity(n * k);
        for _ in 0..n {
            let row: Vec<f64> = (0..k).map(|_| rng.gen_range(0.01..1.0f64).powi(3)).collect();
            let s: f64 = row.iter().sum();
            p.extend(row.iter().map(|x| x / s));
        }
        let marginal: Vec<f64> = (0..k).map(|j| (0..n).map(|r| p[r * k + j]).sum::<f64>() / n as f64).collect();
        let kl: f64 = (0..n)
            .map(|r| (0..k).map(|j| p[r * k + j] * (p[r * k + j].ln() - marginal[j].ln())).sum::<f64>())
            .sum::<f64>()
            / n as f64;
        let got = inception_score(&p, k).map_err(|e| e.to_string())?;
        worst = worst.max((got - kl.exp()).abs());
        close(got, kl.exp(), 1e-9, &format!("random matrix {i}"))?;
    }
    Ok(format!("uniform 1, one-hot {k}, 20 random matrices within {worst:.1e}"))
}

// ---------------------------------------------------------------- 4

fn vec_var(g: &mut Graph<f64>, xs: &[f64]) -> Var {
    g.constant(Tensor::new(&[xs.len()], xs.to_vec()))
}

fn mat_var(g: &mut Graph<f64>, rows: usize, xs: &[f64]) -> Var {
    g.constant(Tensor::new(&[rows, xs.len() / rows], xs.to_vec()))
}

fn perfect(rows: usize, k: usize, targets: &[usize]) -> Vec<f64> {
    let mut v = vec![0.0; rows * k];
    for (r, &t) in targets.iter().enumerate() {
        v[r * k + t] = 1e6;
    }
    v
}

fn loss_examples() -> Result<usize, String> {
    let ln4 = 4f64.ln();
    let n = std::cell::Cell::new(0);
    let check = |got: f64, want: f64, what: &str| {
        n.set(n.get() + 1);
        close(got, want, 1e-9, what)
    };
    let mut g = Graph::<f64>::new();
    for (r, f, want) in [(&[2.0, 3.0][..], &[-2.0, -5.0][..], 0.0), (&[0.0], &[0.0], 2.0), (&[0.5, -1.0], &[0.3], 2.55)] {
        let (rv, fv) = (vec_var(&mut g, r), vec_var(&mut g, f));
        let l = hinge_d_loss(&mut g, rv, fv);
        check(g.value(l).item(), want, &format!("hinge_d_loss {r:?} {f:?}"))?;
    }
    for (f, want) in [(&[0.0, 0.0][..], 0.0), (&[3.0], -3.0), (&[1.0, -2.0, 4.0], -1.0)] {
        let fv = vec_var(&mut g, f);
        let l = hinge_g_loss(&mut g, fv);
        check(g.value(l).item(), want, &format!("hinge_g_loss {f:?}"))?;
    }
    let targets = [0, 1, 2, 3];
    let zeros = mat_var(&mut g, 4, &[0.0; 16]);
    let l = rotation_loss(&mut g, zeros, &targets);
    check(g.value(l).item(), ln4, "rotation_loss uniform")?;
    let sharp = mat_var(&mut g, 4, &perfect(4, 4, &targets));
    let l = rotation_loss(&mut g, sharp, &targets);
    check(g.value(l).item(), 0.0, "rotation_loss perfect")?;
    let one = mat_var(&mut g, 1, &[1.0, 0.0, 0.0, 0.0]);
    let l = rotation_loss(&mut g, one, &[0]);
    let e = 1f64.exp();
    check(g.value(l).item(), -(e / (e + 3.0)).ln(), "rotation_loss single row")?;

    let rot = mat_var(&mut g, 4, &[0.3, -0.2, 0.9, 0.1, 0.0, 1.0, -1.0, 0.5, 0.2, 0.2, 0.2, 0.2, -0.7, 0.4, 0.0, 1.1]);
    let cls = mat_var(&mut g, 2, &[0.5, -0.5, 0.1, 0.0, 0.2, 0.3]);
    let s0 = s2l_loss(&mut g, rot, &targets, Some((cls, &[1, 2])), 0.0).map_err(|e| e.to_string())?;
    let r0 = rotation_loss(&mut g, rot, &targets);
    n.set(n.get() + 1);
    ensure(g.value(s0).item() == g.value(r0).item(), || "s2l_loss with gamma 0 differs from rotation_loss".into())?;
    let cls_perfect = mat_var(&mut g, 4, &perfect(4, 3, &[2, 2, 2, 2]));
    let l = s2l_loss(&mut g, sharp, &targets, Some((cls_perfect, &[2, 2, 2, 2])), 0.5).map_err(|e| e.to_string())?;
    check(g.value(l).item(), 0.0, "s2l_loss perfect")?;
    let rot1 = mat_var(&mut g, 1, &[0.0; 4]);
    let cls1 = mat_var(&mut g, 1, &[0.0; 10]);
    let l = s2l_loss(&mut g, rot1, &[0], Some((cls1, &[7])), 1.0).map_err(|e| e.to_string())?;
    check(g.value(l).item(), ln4 + 10f64.ln(), "s2l_loss uniform heads")?;
    n.set(n.get() + 1);
    ensure(s2l_loss(&mut g, rot1, &[0], None, 0.5).is_err(), || "s2l_loss without labels and gamma > 0 accepted".into())?;

    let real = vec_var(&mut g, &[0.4, -0.3]);
    let fake = vec_var(&mut g, &[0.2, -1.7, 0.6]);
    let logits = mat_var(&mut g, 2, &[0.1, 0.7, -0.2, 0.0, 0.3, 0.3, 0.3, 0.3]);
    let terms = CotrainTerms { labeled_scores: real, cotrain_logits: logits, labels: &[1, 3], unlabeled_scores: None, fake_scores: fake };
    let c = cotrain_d_loss(&mut g, terms, 0.0);
    let h = hinge_d_loss(&mut g, real, fake);
    check(g.value(c).item(), g.value(h).item(), "cotrain_d_loss with lambda 0 versus hinge_d_loss")?;
    let (r2, f2, u2) = (vec_var(&mut g, &[1.5, 2.0]), vec_var(&mut g, &[-1.0, -3.0]), vec_var(&mut g, &[1.0, 4.0]));
    let lp = mat_var(&mut g, 2, &perfect(2, 4, &[0, 3]));
    let terms = CotrainTerms { labeled_scores: r2, cotrain_logits: lp, labels: &[0, 3], unlabeled_scores: Some(u2), fake_scores: f2 };
    let l = cotrain_d_loss(&mut g, terms, 0.2);
    check(g.value(l).item(), 0.0, "cotrain_d_loss satisfied margins")?;
    let (r3, f3, l3) = (vec_var(&mut g, &[0.0]), vec_var(&mut g, &[0.0]), mat_var(&mut g, 1, &[0.0; 4]));
    let terms = CotrainTerms { labeled_scores: r3, cotrain_logits: l3, labels: &[2], unlabeled_scores: None, fake_scores: f3 };
    let l = cotrain_d_loss(&mut g, terms, 1.0);
    check(g.value(l).item(), 2.0 + ln4, "cotrain_d_loss term-by-term")?;

    for (beta, logits, want) in [(0.5, zeros, 0.5 * ln4), (0.0, zeros, 0.0), (1.0, sharp, 0.0)] {
        let l = d_selfsup_term(&mut g, logits, &targets, beta);
        check(g.value(l).item(), want, &format!("d_selfsup_term beta {beta}"))?;
    }
    for (alpha, want) in [(0.2, 0.2 * ln4), (0.0, 0.0)] {
        let l = g_selfsup_term(&mut g, zeros, &targets, alpha);
        check(g.value(l).item(), want, &format!("g_selfsup_term alpha {alpha}"))?;
    }
    let l = g_selfsup_term(&mut g, rot1, &[0], 0.2);
    check(g.value(l).item(), 0.2 * ln4, "g_selfsup_term single fake")?;
    Ok(n.get())
}

/// Compares the analytic gradient of `loss(inputs)` with respect to input
/// `which` against central differences.
fn grad_check(
    name: &str,
    inputs: &[Tensor<f64>],
    which: usize,
    loss: &dyn Fn(&mut Graph<f64>, &[Var]) -> Var,
) -> Result<f64, String> {
    let eval = |x: &Tensor<f64>| {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs
            .iter()
            .enumerate()
            .map(|(i, t)| g.constant(if i == which { x.clone() } else { t.clone() }))
            .collect();
        let l = loss(&mut g, &vars);
        g.value(l).item()
    };
    let mut g = Graph::new();
    let vars: Vec<Var> =
        inputs.iter().enumerate().map(|(i, t)| if i == which { g.param(t.clone()) } else { g.constant(t.clone()) }).collect();
    let l = loss(&mut g, &vars);
    g.backward(l);
    let analytic = g.grad(vars[which]).cloned().unwrap_or_else(|| Tensor::zeros(inputs[which].shape()));
    let numeric = numeric_grad(eval, &inputs[which], 1e-6);
    let err = relative_error(&analytic, &numeric);
    ensure(err <= 1e-3, || format!("{name} input {which}: relative gradient error {err:.2e}"))?;
    Ok(err)
}

/// Random values kept away from the hinge kinks at ±1.
fn scores(rng: &mut ChaCha8Rng, n: usize) -> Tensor<f64> {
    let v = (0..n)
        .map(|_| loop {
            let x: f64 = rng.gen_range(-2.5..2.5);
            if (x.abs() - 1.0).abs() > 0.05 {
                break x;
            }
        })
        .collect();
    Tensor::new(&[n], v)
}

fn logits(rng: &mut ChaCha8Rng, rows: usize, k: usize) -> Tensor<f64> {
    Tensor::new(&[rows, k], (0..rows * k).map(|_| rng.gen_range(-2.0..2.0)).collect())
}

fn loss_gradients() -> Result<(usize, f64), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    let mut n = 0;
    let targets = [0, 1, 2, 3, 0, 1, 2, 3];
    for _ in 0..3 {
        let mut run = |name: &str, inputs: &[Tensor<f64>], loss: &dyn Fn(&mut Graph<f64>, &[Var]) -> Var| {
            for which in 0..inputs.len() {
                worst = worst.max(grad_check(name, inputs, which, loss)?);
                n += 1;
            }
            Ok::<(), String>(())
        };
        run("hinge_d_loss", &[scores(&mut rng, 3), scores(&mut rng, 4)], &|g, v| hinge_d_loss(g, v[0], v[1]))?;
        run("hinge_g_loss", &[scores(&mut rng, 5)], &|g, v| hinge_g_loss(g, v[0]))?;
        run("rotation_loss", &[logits(&mut rng, 8, 4)], &|g, v| rotation_loss(g, v[0], &targets))?;
        run("s2l_loss", &[logits(&mut rng, 8, 4), logits(&mut rng, 4, 3)], &|g, v| {
            s2l_loss(g, v[0], &targets, Some((v[1], &[2, 0, 1, 2])), 0.5).expect("valid s2l inputs")
        })?;
        run(
            "cotrain_d_loss",
            &[scores(&mut rng, 2), logits(&mut rng, 2, 3), scores(&mut rng, 3), scores(&mut rng, 4)],
            &|g, v| {
                let t = CotrainTerms { labeled_scores: v[0], cotrain_logits: v[1], labels: &[2, 1], unlabeled_scores: Some(v[2]), fake_scores: v[3] };
                cotrain_d_loss(g, t, 0.2)
            },
        )?;
        run("d_selfsup_term", &[logits(&mut rng, 8, 4)], &|g, v| d_selfsup_term(g, v[0], &targets, 0.5))?;
        run("g_selfsup_term", &[logits(&mut rng, 8, 4)], &|g, v| g_selfsup_term(g, v[0], &targets, 0.2))?;
    }
    Ok((n, worst))
}

fn losses() -> Outcome {
    let examples = loss_examples()?;
    let (checks, worst) = loss_gradients()?;
    Ok(format!("{examples} examples exact, {checks} gradient checks, worst relative error {worst:.1e}"))
}

// ---------------------------------------------------------------- 5

fn spectral() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut lo: f64 = f64::INFINITY;
    let mut hi: f64 = 0.0;
    let mut misses = Vec::new();
    for i in 0..20 {
        let (rows, cols) = (2 + rng.gen_range(0..30), 2 + rng.gen_range(0..60));
        let scale = 10f64.powf(rng.gen_range(-2.0..2.0));
        let w = Tensor::<f64>::new(&[rows, cols], (0..rows * cols).map(|_| scale * rng.gen_range(-1.0..1.0)).collect());
        let mut state = SpectralNormState::new(rows, i);
        let mut normalized = w.clone();
        for _ in 0..50 {
            normalized = spectral_normalize(&w, &mut state);
        }
        let sv = DMatrix::from_row_slice(rows, cols, normalized.data()).singular_values();
        let mut sv: Vec<f64> = sv.iter().copied().collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        let top = sv[0];
        lo = lo.min(top);
        hi = hi.max(top);
        if !(0.99..=1.01).contains(&top) {
            misses.push(format!("matrix {i} ({rows}x{cols}): top singular value {top:.4}, s2/s1 = {:.4}", sv[1] / sv[0]));
        }
    }
    ensure(misses.is_empty(), || format!("{} of 20 outside [0.99, 1.01]: {}", misses.len(), misses.join("; ")))?;
    Ok(format!("top singular values in [{lo:.6}, {hi:.6}]"))
}

// ---------------------------------------------------------------- 6

fn brute_force(model: &ClusterModel, x: &[f64]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for c in 0..model.n_clusters() {
        let d: f64 = model.centroid(c).iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best.0 {
            best = (d, c);
        }
    }
    best.1
}

fn clustering() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (dim, k) = (3, 24);
    // Small integer grids make exact distance ties common.
    let centroids: Vec<f64> = (0..k * dim).map(|_| rng.gen_range(-2..=2) as f64).collect();
    let model = ClusterModel { dim, centroids, counts: vec![1; k] };
    let mut ties = 0;
    for i in 0..10_000 {
        let x: Vec<f64> = if i % 2 == 0 {
            (0..dim).map(|_| rng.gen_range(-3..=3) as f64).collect()
        } else {
            (0..dim).map(|_| rng.gen_range(-3.0..3.0)).collect()
        };
        let dists: Vec<f64> = (0..k).map(|c| model.centroid(c).iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum()).collect();
        let min = dists.iter().cloned().fold(f64::INFINITY, f64::min);
        if dists.iter().filter(|&&d| d == min).count() > 1 {
            ties += 1;
        }
        let (got, want) = (assign_cluster(&model, &x), brute_force(&model, &x));
        ensure(got == want, || format!("point {x:?}: assigned {got}, nearest {want}"))?;
    }
    Ok(format!("10000 points agree, {ties} with tied distances"))
}

// ---------------------------------------------------------------- shared fixture

/// Batch size of the acceptance GAN runs.
const BATCH: usize = 16;

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    train: LabeledDataset,
    eval: LabeledDataset,
    embedder: ConvNetEmbedder,
    real: GaussianStats,
}

impl Fixture {
    fn new() -> Result<Self, String> {
        let s = |e: fewlabel::Error| e.to_string();
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let root = dir.path().to_path_buf();
        let train = SyntheticShapes::generate(&SyntheticConfig::default(), 0).map_err(s)?;
        let eval = SyntheticShapes::generate(&SyntheticConfig::default(), 1).map_err(s)?;
        let mut embedder = train_embedder(&train, &PretrainConfig::desk().scaled(5)).map_err(s)?;
        let real = dataset_stats(&mut embedder, &eval, 500).map_err(s)?;
        Ok(Fixture { _dir: dir, root, train, eval, embedder, real })
    }

    fn provider_dir(&self, name: &str) -> PathBuf {
        self.root.join("providers").join(name)
    }

    fn pretrain(&self, name: &str, kind: PretrainKind) -> Result<PathBuf, String> {
        let dir = self.provider_dir(name);
        let stage = PretrainStage { name: name.into(), kind, config: PretrainConfig::desk() };
        run_pretrain_stage(&stage, &self.train, &dir).map_err(|e| e.to_string())?;
        Ok(dir)
    }

    fn s2l10(&self) -> Result<PathBuf, String> {
        self.pretrain("s2l10", PretrainKind::S2l { k_percent: 10.0, mode: LabelMode::Hard, label_seed: 0 })
    }

    fn clusters(&self) -> Result<PathBuf, String> {
        self.pretrain("c50", PretrainKind::Cluster { n_clusters: 50, kmeans_epochs: 10, kmeans_batch: 256 })
    }
}

fn acceptance_config(method: Method) -> MethodConfig {
    let mut c = MethodConfig::new(method);
    c.optimizer.batch_size = BATCH;
    c.rotated_per_batch = BATCH / 4;
    c.labeled_per_batch = BATCH / 4;
    c
}

// ---------------------------------------------------------------- 7

fn determinism(fx: &mut Fixture) -> Outcome {
    let s = |e: fewlabel::Error| e.to_string();
    let provider = fx.s2l10()?;
    let cfg = acceptance_config(Method::S3gan);
    let run = || -> Result<Vec<u8>, String> {
        let mut a = build_method(&cfg, &fx.train, Some(&provider), 7).map_err(s)?;
        let mut t = Trainer::new(&a, 7).map_err(s)?;
        for _ in 0..100 {
            if let StepOutcome::Diverged(_) = t.train_step(&mut a).map_err(s)? {
                return Err(format!("diverged at step {}", t.step));
            }
        }
        t.to_checkpoint(&cfg).encode().map_err(s)
    };
    let (a, b) = (run()?, run()?);
    ensure(a == b, || "checkpoints at step 100 differ".into())?;
    Ok(format!("S3GAN batch {BATCH}: identical {}-byte checkpoints at step 100", a.len()))
}

// ---------------------------------------------------------------- 8

fn end_to_end(fx: &mut Fixture) -> Outcome {
    let s2l = fx.s2l10()?;
    let clusters = fx.clusters()?;
    let mut lines = Vec::new();
    let mut failures = Vec::new();
    for method in [Method::SingleLabel, Method::Clustering, Method::S2gan, Method::S2ganCo, Method::S3gan] {
        let mut cfg = acceptance_config(method);
        cfg.total_g_steps = 2000;
        cfg.eval_every = 2000;
        let provider = match method {
            Method::Clustering => Some(clusters.as_path()),
            m if m.uses_s2l_provider() => Some(s2l.as_path()),
            _ => None,
        };
        let t = Instant::now();
        let mut ctx = RunContext { dataset: &fx.train, real_stats: &fx.real, embedder: &mut fx.embedder, provider_dir: provider, out_dir: None };
        let r = run_seed(&cfg, 1, &mut ctx).map_err(|e| format!("{method}: {e}"))?;
        let (first, last) = (r.records.first().expect("step-0 record"), &r.final_record);
        let ratio = last.fid_mean / first.fid_mean;
        let mins = t.elapsed().as_secs_f64() / 60.0;
        let line = format!(
            "{method}: FID {:.2} -> {:.2} ({:.0}% lower) at step {}, {} divergences, {mins:.1} min",
            first.fid_mean,
            last.fid_mean,
            100.0 * (1.0 - ratio),
            last.step,
            r.divergences
        );
        println!("    {line}");
        if r.divergences > 0 || r.collapsed || last.step != 2000 || !(ratio <= 0.5) || mins > 30.0 {
            failures.push(line.clone());
        }
        lines.push(format!("{method} {:.0}%", 100.0 * (1.0 - ratio)));
    }
    ensure(failures.is_empty(), || failures.join("; "))?;
    Ok(format!("FID reductions: {}", lines.join(", ")))
}

// ---------------------------------------------------------------- 9

fn classifier(fx: &mut Fixture) -> Outcome {
    let dir = fx.s2l10()?;
    let (provider, meta) = load_provider(&dir).map_err(|e| e.to_string())?;
    let mut net = provider.network().ok_or("provider has no network")?.clone();
    let test = classification_accuracy(&mut net, CLASS_HEAD, &fx.eval).map_err(|e| e.to_string())?;
    let withheld = meta.held_out_accuracy.ok_or("no held-out accuracy recorded")?;
    ensure(test > 0.9 && withheld > 0.9, || format!("accuracy {test:.3} on the test split, {withheld:.3} on withheld labels"))?;
    Ok(format!("10% labels: accuracy {test:.3} on the test split, {withheld:.3} on withheld training labels"))
}

// ---------------------------------------------------------------- 10

/// Forwards to an embedder and counts images.
struct Counting<'a> {
    inner: &'a mut dyn Embedder,
    images: usize,
}

impl Embedder for Counting<'_> {
    fn id(&self) -> &str {
        self.inner.id()
    }
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }
    fn embed(&mut self, images: &Tensor<f32>) -> fewlabel::Result<EmbedResult> {
        self.images += images.dim(0);
        self.inner.embed(images)
    }
}

fn protocol(fx: &mut Fixture) -> Outcome {
    let s = |e: fewlabel::Error| e.to_string();
    let logs = fx.root.join("logs");
    let mut cfg = acceptance_config(Method::Biggan);
    cfg.optimizer.batch_size = 8;
    cfg.total_g_steps = 6;
    cfg.eval_every = 3;
    cfg.n_fake = 100;
    cfg.n_sets = 5;
    let seeds = [1, 2, 3];
    let report = {
        let mut ctx = RunContext { dataset: &fx.train, real_stats: &fx.real, embedder: &mut fx.embedder, provider_dir: None, out_dir: Some(&logs) };
        run_experiment(&cfg, &seeds, cfg.eval_every, &mut ctx).map_err(s)?
    };

    // Hand computation from the raw per-seed logs.
    let mut finals = Vec::new();
    for seed in seeds {
        let path = logs.join(cfg.run_name()).join(format!("seed-{seed}")).join("metrics.jsonl");
        let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        let last: serde_json::Value = serde_json::from_str(text.lines().last().ok_or("empty log")?).map_err(|e| e.to_string())?;
        finals.push(last["fid_mean"].as_f64().ok_or("fid_mean missing")?);
    }
    let mut sorted = finals.clone();
    sorted.sort_by(f64::total_cmp);
    let hand = sorted[1];
    ensure(report.fid.median == hand, || format!("experiment median {} differs from hand median {hand}", report.fid.median))?;
    let records = collect_logs(&logs).map_err(s)?;
    let grid = build_grid("Median FID", &final_records(&records), Metric::Fid, median_cell);
    let key = CellKey { row: "BIGGAN".into(), col: "-".into() };
    let cell = grid.cells.get(&key).ok_or("no BIGGAN cell in the median grid")?;
    ensure(*cell == format!("{hand:.1}"), || format!("grid cell {cell} differs from hand median {hand:.1}"))?;
    let out = fx.root.join("report");
    let files = write_report(&logs, &out).map_err(s)?;
    let md = std::fs::read_to_string(&files.tables).map_err(|e| e.to_string())?;
    ensure(md.contains(&format!("| {cell} |")), || format!("tables.md does not show cell {cell}"))?;

    // Counter audit of one evaluation.
    let mut a = build_method(&cfg, &fx.train, None, 1).map_err(s)?;
    let mut t = Trainer::new(&a, 1).map_err(s)?;
    t.train_step(&mut a).map_err(s)?;
    let mut counting = Counting { inner: &mut fx.embedder, images: 0 };
    let e = t.evaluate(&a, &fx.real, &mut counting).map_err(s)?;
    ensure(e.sets_evaluated == 5 && e.fids.len() == 5 && e.inception_scores.len() == 5, || {
        format!("{} sets evaluated, {} FIDs, {} IS values", e.sets_evaluated, e.fids.len(), e.inception_scores.len())
    })?;
    ensure(counting.images == 5 * cfg.n_fake && e.images_embedded == counting.images, || {
        format!("{} images embedded, expected {}", counting.images, 5 * cfg.n_fake)
    })?;
    let mean = e.fids.iter().sum::<f64>() / 5.0;
    close(e.fid_mean, mean, 1e-9, "fid_mean versus the mean of the set FIDs")?;
    let mut sets = BTreeSet::new();
    let eval = evaluate_model(
        |set, _, len| {
            sets.insert(set);
            let mut rng = ChaCha8Rng::seed_from_u64(set as u64);
            Ok(Tensor::new(&[len, 3, 32, 32], (0..len * 3 * 1024).map(|_| rng.gen_range(-1.0..1.0)).collect()))
        },
        &fx.real,
        &mut counting,
        50,
        5,
        20,
    )
    .map_err(s)?;
    ensure(sets == (0..5).collect::<BTreeSet<_>>() && eval.sets_evaluated == 5, || format!("sampled sets {sets:?}"))?;
    Ok(format!("median {cell} over seeds {seeds:?} matches the logs; 5 sets of {} images per evaluation", cfg.n_fake))
}

// ---------------------------------------------------------------- driver

fn main() {
    let selected: BTreeSet<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |n: usize| selected.is_empty() || selected.contains(&n);
    let cheap: [(usize, &str, fn() -> Outcome); 6] = [
        (1, "parameter counts", param_counts),
        (2, "FID oracles", fid_oracles),
        (3, "IS oracles", is_oracles),
        (4, "losses", losses),
        (5, "spectral norm", spectral),
        (6, "clustering equivalence", clustering),
    ];
    let heavy: [(usize, &str, fn(&mut Fixture) -> Outcome); 4] = [
        (9, "semi-supervised classifier", classifier),
        (7, "determinism", determinism),
        (10, "protocol fidelity", protocol),
        (8, "end-to-end smoke", end_to_end),
    ];
    let mut results: Vec<(usize, &str, Outcome, f64)> = Vec::new();
    let mut record = |n: usize, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let out = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = t.elapsed().as_secs_f64();
        match &out {
            Ok(d) => println!("PASS criterion {n} ({name}): {d} [{secs:.1}s]"),
            Err(e) => println!("FAIL criterion {n} ({name}): {e} [{secs:.1}s]"),
        }
        results.push((n, name, out, secs));
    };
    for (n, name, f) in cheap {
        if wanted(n) {
            record(n, name, &mut || f());
        }
    }
    if heavy.iter().any(|(n, ..)| wanted(*n)) {
        match Fixture::new() {
            Ok(mut fx) => {
                for (n, name, f) in heavy {
                    if wanted(n) {
                        record(n, name, &mut || f(&mut fx));
                    }
                }
            }
            Err(e) => {
                for (n, name, _) in heavy {
                    if wanted(n) {
                        record(n, name, &mut || Err(format!("fixture: {e}")));
                    }
                }
            }
        }
    }
    results.sort_by_key(|r| r.0);
    println!("\nsummary:");
    for (n, name, out, _) in &results {
        println!("  {} {n:>2} {name}", if out.is_ok() { "PASS" } else { "FAIL" });
    }
    if results.iter().any(|r| r.2.is_err()) {
        std::process::exit(1);
    }
}
