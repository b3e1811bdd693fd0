use crate::graph::{GradSink, Op};
use crate::{Float, Graph, Tensor, Var};

fn zip_map<F: Float>(a: &Tensor<F>, b: &Tensor<F>, f: impl Fn(F, F) -> F) -> Tensor<F> {
    assert_eq!(a.shape(), b.shape(), "elementwise shape mismatch");
    Tensor::new(a.shape(), a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect())
}

impl<F: Float> Graph<F> {
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = zip_map(self.value(a), self.value(b), |x, y| x + y);
        self.push(out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = zip_map(self.value(a), self.value(b), |x, y| x - y);
        self.push(out, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = zip_map(self.value(a), self.value(b), |x, y| x * y);
        self.push(out, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: F) -> Var {
        let out = self.value(a).map(|x| x * c);
        self.push(out, Op::Scale(a, c), &[a])
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -F::one())
    }

    pub fn add_scalar(&mut self, a: Var, c: F) -> Var {
        let out = self.value(a).map(|x| x + c);
        self.push(out, Op::AddScalar(a), &[a])
    }

    /// `a * s` where `s` is a one-element tensor.
    pub fn mul_scalar_var(&mut self, a: Var, s: Var) -> Var {
        let c = self.value(s).item();
        let out = self.value(a).map(|x| x * c);
        self.push(out, Op::MulScalarVar(a, s), &[a, s])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x > F::zero() { x } else { F::zero() });
        self.push(out, Op::Relu(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.tanh());
        self.push(out, Op::Tanh(a), &[a])
    }
}

pub(super) fn backward<'n, F: Float>(
    op: &Op<F>,
    out: &Tensor<F>,
    gout: &Tensor<F>,
    val: &impl Fn(Var) -> &'n Tensor<F>,
    sink: &mut GradSink<'_, F>,
) {
    match *op {
        Op::Add(a, b) => {
            sink.add(a, gout.clone());
            sink.add(b, gout.clone());
        }
        Op::Sub(a, b) => {
            sink.add(a, gout.clone());
            if sink.wants(b) {
                sink.add(b, gout.map(|g| -g));
            }
        }
        Op::Mul(a, b) => {
            if sink.wants(a) {
                sink.add(a, zip_map(gout, val(b), |g, y| g * y));
            }
            if sink.wants(b) {
                sink.add(b, zip_map(gout, val(a), |g, x| g * x));
            }
        }
        Op::Scale(a, c) => sink.add(a, gout.map(|g| g * c)),
        Op::AddScalar(a) => sink.add(a, gout.clone()),
        Op::MulScalarVar(a, s) => {
            let c = val(s).item();
            if sink.wants(a) {
                sink.add(a, gout.map(|g| g * c));
            }
            if sink.wants(s) {
                let d: F = gout.data().iter().zip(val(a).data()).map(|(&g, &x)| g * x).sum();
                sink.add(s, Tensor::new(val(s).shape(), vec![d]));
            }
        }
        Op::Relu(a) => sink.add(a, zip_map(gout, out, |g, y| if y > F::zero() { g } else { F::zero() })),
        Op::Tanh(a) => sink.add(a, zip_map(gout, out, |g, y| g * (F::one() - y * y))),
        _ => unreachable!("not an elementwise op"),
    }
}
