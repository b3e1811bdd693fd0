use std::collections::BTreeMap;

use fewlabel::models::{
    discriminator_forward, generator_forward, one_hot, projection_term, reference_shape, Discriminator,
    DiscriminatorSpec, Generator, GeneratorSpec, Heads, Mode, Session,
};
use fewlabel_autodiff::{Graph, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `name -> (reference shape, size)` from the tensor-level architecture tables.
fn reference_table() -> BTreeMap<String, (Vec<usize>, usize)> {
    let text = include_str!("fixtures/full_scale_shapes.txt");
    text.lines()
        .map(|l| {
            let f: Vec<&str> = l.split_whitespace().collect();
            let shape = if f[1] == "-" { vec![] } else { f[1..f.len() - 1].iter().map(|s| s.parse().unwrap()).collect() };
            (f[0].to_string(), (shape, f[f.len() - 1].parse().unwrap()))
        })
        .collect()
}

#[test]
fn full_scale_shapes_match_the_reference_tables() {
    let table = reference_table();
    let mut ours = BTreeMap::new();
    for spec in GeneratorSpec::full_scale().param_specs().into_iter().chain(DiscriminatorSpec::full_scale().param_specs()) {
        let shape = reference_shape(&spec.shape, spec.layout);
        assert!(ours.insert(spec.name.clone(), (shape, spec.numel())).is_none(), "duplicate {}", spec.name);
    }
    for (name, want) in &table {
        let got = ours.get(name).unwrap_or_else(|| panic!("missing {name}"));
        // Scalars are listed with shape `()`.
        let got_shape: Vec<usize> = got.0.iter().copied().filter(|_| !want.0.is_empty()).collect();
        assert_eq!((&got_shape, got.1), (&want.0, want.1), "{name}");
    }
    let extra: Vec<_> = ours.keys().filter(|k| !table.contains_key(*k)).collect();
    assert!(extra.is_empty(), "parameters not in the tables: {extra:?}");
    let g: usize = table.iter().filter(|(k, _)| k.starts_with("generator/")).map(|(_, v)| v.1).sum();
    assert_eq!(g, 70_433_988);
    assert_eq!(table.values().map(|v| v.1).sum::<usize>() - g, 87_982_370);
}

#[test]
fn desk_models_produce_expected_shapes() {
    let k = 4;
    let mut gen = Generator::<f32>::new(GeneratorSpec::desk(k), 1).unwrap();
    let z = Tensor::new(&[3, gen.spec.latent_dim], vec![0.5; 3 * gen.spec.latent_dim]);
    let y = one_hot::<f32>(&[0, 1, 3], k);
    let x = gen.generate(&z, &y, Mode::EVAL).unwrap();
    assert_eq!(x.shape(), &[3, 3, 32, 32]);
    assert!(x.data().iter().all(|v| v.abs() <= 1.0));

    let mut spec = DiscriminatorSpec::desk(k);
    spec.rotation_head = true;
    let mut d = Discriminator::<f32>::new(spec.clone(), 2).unwrap();
    let mut g = Graph::new();
    let mut s = Session::new(&mut d.state, Mode::EVAL);
    let xv = g.constant(x);
    let yv = g.constant(y);
    let out = discriminator_forward(&spec, &mut s, &mut g, xv, Some(yv), Heads { rotation: true, cotrain: false }).unwrap();
    assert_eq!(g.shape(out.score), &[3]);
    assert_eq!(g.shape(out.rotation_logits.unwrap()), &[3, 4]);
    assert!(discriminator_forward(&spec, &mut s, &mut g, xv, None, Heads { rotation: false, cotrain: true }).is_err());
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::new(shape, (0..shape.iter().product()).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

/// Directional derivative of the summed scores with respect to the input
/// images versus central differences along random directions.
#[test]
fn discriminator_input_gradient_matches_finite_differences() {
    let k = 3;
    let spec = DiscriminatorSpec::desk(k);
    let mut d = Discriminator::<f64>::new(spec.clone(), 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random(&mut rng, &[2, 3, 32, 32]);
    let y = one_hot::<f64>(&[0, 2], k);
    let mut f = |x: &Tensor<f64>, grad: bool| {
        let mut g = Graph::new();
        let mut s = Session::new(&mut d.state, Mode::EVAL);
        let xv = if grad { g.param(x.clone()) } else { g.constant(x.clone()) };
        let yv = g.constant(y.clone());
        let out = discriminator_forward(&spec, &mut s, &mut g, xv, Some(yv), Heads::default()).unwrap();
        let total = g.sum_all(out.score);
        let value = g.value(total).item();
        if grad {
            g.backward(total);
            (value, g.grad(xv).cloned())
        } else {
            (value, None)
        }
    };
    let (_, grad) = f(&x, true);
    let grad = grad.unwrap();
    for _ in 0..4 {
        let dir = random(&mut rng, x.shape());
        let analytic: f64 = grad.data().iter().zip(dir.data()).map(|(a, b)| a * b).sum();
        let h = 1e-6;
        let shifted = |sign: f64| Tensor::new(x.shape(), x.data().iter().zip(dir.data()).map(|(a, b)| a + sign * h * b).collect());
        let numeric = (f(&shifted(1.0), false).0 - f(&shifted(-1.0), false).0) / (2.0 * h);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12);
        assert!(rel < 1e-6, "analytic {analytic}, numeric {numeric}");
    }
}

#[test]
fn generator_latent_gradient_matches_finite_differences() {
    let k = 3;
    let spec = GeneratorSpec::desk(k);
    let mut gen = Generator::<f64>::new(spec.clone(), 6).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let z = random(&mut rng, &[2, spec.latent_dim]);
    let y = one_hot::<f64>(&[1, 2], k);
    let w = random(&mut rng, &[2, 3, 32, 32]);
    let mut f = |z: &Tensor<f64>| {
        let mut g = Graph::new();
        let mut s = Session::new(&mut gen.state, Mode::EVAL);
        let zv = g.param(z.clone());
        let yv = g.constant(y.clone());
        let x = generator_forward(&spec, &mut s, &mut g, zv, yv).unwrap();
        let wv = g.constant(w.clone());
        let p = g.mul(x, wv);
        let total = g.sum_all(p);
        let value = g.value(total).item();
        g.backward(total);
        (value, g.grad(zv).cloned().unwrap())
    };
    let (_, grad) = f(&z);
    let numeric = fewlabel_autodiff::testing::numeric_grad(|z| f(z).0, &z, 1e-6);
    let err = fewlabel_autodiff::testing::relative_error(&grad, &numeric);
    assert!(err < 1e-6, "relative error {err}");
}

proptest! {
    #[test]
    fn projection_is_linear_in_the_label_rows(
        seed in any::<u64>(),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, d, k) = (3, 5, 4);
        let repr = random(&mut rng, &[n, d]);
        let w = random(&mut rng, &[k, d]);
        let (y1, y2) = (random(&mut rng, &[n, k]), random(&mut rng, &[n, k]));
        let mut g = Graph::new();
        let (rv, wv) = (g.constant(repr), g.constant(w));
        let mix = Tensor::new(&[n, k], y1.data().iter().zip(y2.data()).map(|(p, q)| a * p + b * q).collect());
        let terms: Vec<Tensor<f64>> = [y1, y2, mix]
            .into_iter()
            .map(|y| {
                let yv = g.constant(y);
                let p = projection_term(&mut g, rv, wv, yv);
                g.value(p).clone()
            })
            .collect();
        for i in 0..n {
            let want = a * terms[0].data()[i] + b * terms[1].data()[i];
            prop_assert!((terms[2].data()[i] - want).abs() < 1e-9);
        }
    }
}
