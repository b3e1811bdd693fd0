//! Adversarial and auxiliary losses as differentiable graph functions.
//!
//! Every function takes graph variables and returns a scalar variable, so
//! the same code computes values and gradients.

use fewlabel_autodiff::{Float, Graph, Target, Var};

use crate::error::{bail_arg, Result};

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    /// Class term weight of the semi-supervised pretraining loss.
    pub gamma: f64,
    /// Classifier cross-entropy weight in co-training.
    pub lambda: f64,
    /// Generator rotation term weight.
    pub alpha: f64,
    /// Discriminator rotation term weight.
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { gamma: 0.5, lambda: 0.2, alpha: 0.2, beta: 0.5 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("gamma", self.gamma), ("lambda", self.lambda), ("alpha", self.alpha), ("beta", self.beta)] {
            if !v.is_finite() || v < 0.0 {
                bail_arg!("loss weight {name} must be finite and nonnegative, got {v}");
            }
        }
        Ok(())
    }
}

/// `mean(max(0, 1 - s))`.
pub fn hinge_real<F: Float>(g: &mut Graph<F>, scores: Var) -> Var {
    let m = g.neg(scores);
    let m = g.add_scalar(m, F::one());
    let m = g.relu(m);
    g.mean_all(m)
}

/// `mean(max(0, 1 + s))`.
pub fn hinge_fake<F: Float>(g: &mut Graph<F>, scores: Var) -> Var {
    let m = g.add_scalar(scores, F::one());
    let m = g.relu(m);
    g.mean_all(m)
}

pub fn hinge_d_loss<F: Float>(g: &mut Graph<F>, real_scores: Var, fake_scores: Var) -> Var {
    let r = hinge_real(g, real_scores);
    let f = hinge_fake(g, fake_scores);
    g.add(r, f)
}

/// `-mean(fake_scores)`.
pub fn hinge_g_loss<F: Float>(g: &mut Graph<F>, fake_scores: Var) -> Var {
    let m = g.mean_all(fake_scores);
    g.neg(m)
}

/// Mean cross-entropy of 4-way rotation logits `[4B, 4]` against their targets.
pub fn rotation_loss<F: Float>(g: &mut Graph<F>, logits: Var, targets: &[usize]) -> Var {
    g.cross_entropy(logits, Target::Hard(targets.to_vec()))
}

/// Rotation loss over all rotated images plus `gamma` times the class
/// cross-entropy over the rotated copies of the labeled images.
///
/// `class` holds the class logits of the labeled rotated copies and their
/// labels; it may be `None` (or empty) only when `gamma` is zero.
pub fn s2l_loss<F: Float>(
    g: &mut Graph<F>,
    rotation_logits: Var,
    rotation_targets: &[usize],
    class: Option<(Var, &[usize])>,
    gamma: f64,
) -> Result<Var> {
    if !gamma.is_finite() || gamma < 0.0 {
        bail_arg!("gamma must be finite and nonnegative, got {gamma}");
    }
    let rot = rotation_loss(g, rotation_logits, rotation_targets);
    match class {
        Some((logits, labels)) if !labels.is_empty() => {
            let ce = g.cross_entropy(logits, Target::Hard(labels.to_vec()));
            let ce = g.scale(ce, F::of(gamma));
            Ok(g.add(rot, ce))
        }
        _ if gamma > 0.0 => bail_arg!("semi-supervised loss with gamma > 0 needs labeled examples"),
        _ => Ok(rot),
    }
}

/// Inputs of the co-training discriminator loss.
#[derive(Clone, Copy, Debug)]
pub struct CotrainTerms<'a> {
    /// Scores of labeled reals conditioned on their true labels.
    pub labeled_scores: Var,
    /// Classifier logits on the labeled reals.
    pub cotrain_logits: Var,
    pub labels: &'a [usize],
    /// Scores of unlabeled reals conditioned on the classifier's
    /// (detached) predictions.
    pub unlabeled_scores: Option<Var>,
    pub fake_scores: Var,
}

/// Hinge on labeled reals + `lambda`·cross-entropy of the classifier +
/// hinge on unlabeled reals (when present) + hinge on fakes.
pub fn cotrain_d_loss<F: Float>(g: &mut Graph<F>, t: CotrainTerms<'_>, lambda: f64) -> Var {
    let mut total = hinge_real(g, t.labeled_scores);
    let ce = g.cross_entropy(t.cotrain_logits, Target::Hard(t.labels.to_vec()));
    let ce = g.scale(ce, F::of(lambda));
    total = g.add(total, ce);
    if let Some(u) = t.unlabeled_scores {
        let h = hinge_real(g, u);
        total = g.add(total, h);
    }
    let f = hinge_fake(g, t.fake_scores);
    g.add(total, f)
}

/// `beta` times the rotation loss on rotated real images.
pub fn d_selfsup_term<F: Float>(g: &mut Graph<F>, logits: Var, targets: &[usize], beta: f64) -> Var {
    let l = rotation_loss(g, logits, targets);
    g.scale(l, F::of(beta))
}

/// `alpha` times the rotation loss on rotated generated images. The caller
/// evaluates the discriminator as a frozen function so only the generator
/// receives gradient.
pub fn g_selfsup_term<F: Float>(g: &mut Graph<F>, logits: Var, targets: &[usize], alpha: f64) -> Var {
    let l = rotation_loss(g, logits, targets);
    g.scale(l, F::of(alpha))
}

#[cfg(test)]
mod tests {
    use super::*;
    use fewlabel_autodiff::Tensor;

    fn v(g: &mut Graph<f64>, xs: &[f64]) -> Var {
        g.constant(Tensor::new(&[xs.len()], xs.to_vec()))
    }

    fn m(g: &mut Graph<f64>, rows: usize, xs: &[f64]) -> Var {
        g.constant(Tensor::new(&[rows, xs.len() / rows], xs.to_vec()))
    }

    #[test]
    fn hinge_examples() {
        let mut g = Graph::new();
        let cases = [(&[2.0, 3.0][..], &[-2.0, -5.0][..], 0.0), (&[0.0], &[0.0], 2.0), (&[0.5, -1.0], &[0.3], 2.55)];
        for (r, f, want) in cases {
            let (rv, fv) = (v(&mut g, r), v(&mut g, f));
            let l = hinge_d_loss(&mut g, rv, fv);
            assert!((g.value(l).item() - want).abs() < 1e-12);
        }
        for (f, want) in [(&[0.0, 0.0][..], 0.0), (&[3.0], -3.0), (&[1.0, -2.0, 4.0], -1.0)] {
            let fv = v(&mut g, f);
            let l = hinge_g_loss(&mut g, fv);
            assert!((g.value(l).item() - want).abs() < 1e-12);
        }
    }

    #[test]
    fn rotation_and_semi_supervised_examples() {
        let mut g = Graph::new();
        let z = m(&mut g, 4, &[0.0; 16]);
        let l = rotation_loss(&mut g, z, &[0, 1, 2, 3]);
        assert!((g.value(l).item() - 4f64.ln()).abs() < 1e-12);
        let one = m(&mut g, 1, &[1.0, 0.0, 0.0, 0.0]);
        let l = rotation_loss(&mut g, one, &[0]);
        let want = -(1f64.exp() / (1f64.exp() + 3.0)).ln();
        assert!((g.value(l).item() - want).abs() < 1e-12);

        let rot = m(&mut g, 1, &[0.0; 4]);
        let cls = m(&mut g, 1, &[0.0; 10]);
        let l = s2l_loss(&mut g, rot, &[0], Some((cls, &[3])), 1.0).unwrap();
        assert!((g.value(l).item() - (4f64.ln() + 10f64.ln())).abs() < 1e-12);
        assert!(s2l_loss(&mut g, rot, &[0], None, 0.5).is_err());
        let l0 = s2l_loss(&mut g, rot, &[0], None, 0.0).unwrap();
        assert_eq!(g.value(l0).item(), 4f64.ln());
    }

    #[test]
    fn cotrain_example() {
        let mut g = Graph::new();
        let real = v(&mut g, &[0.0]);
        let logits = m(&mut g, 1, &[0.0; 4]);
        let fake = v(&mut g, &[0.0]);
        let t = CotrainTerms { labeled_scores: real, cotrain_logits: logits, labels: &[2], unlabeled_scores: None, fake_scores: fake };
        let l = cotrain_d_loss(&mut g, t, 1.0);
        assert!((g.value(l).item() - (2.0 + 4f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn weights_must_be_nonnegative() {
        assert!(LossWeights::default().validate().is_ok());
        assert!(LossWeights { alpha: -0.1, ..Default::default() }.validate().is_err());
        assert!(LossWeights { beta: f64::NAN, ..Default::default() }.validate().is_err());
    }
}
