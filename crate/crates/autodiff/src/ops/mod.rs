//! Operation forward passes (as `Graph` methods) and their adjoints.

mod conv;
mod elementwise;
mod linalg;
mod loss;
mod norm;
mod shape;
mod spectral;

pub use conv::rotate90_nchw;
pub use norm::BatchStats;
pub use spectral::spectral_sigma;

use crate::graph::{GradSink, Node, Op};
use crate::{Float, Tensor};

pub(crate) fn backward<F: Float>(nodes: &[Node<F>], i: usize, gout: &Tensor<F>, sink: &mut GradSink<'_, F>) {
    let node = &nodes[i];
    let val = |v: crate::Var| &nodes[v.0].value;
    match &node.op {
        Op::Leaf => {}
        Op::Add(..) | Op::Sub(..) | Op::Mul(..) | Op::Scale(..) | Op::AddScalar(..) | Op::MulScalarVar(..) => {
            elementwise::backward(&node.op, &node.value, gout, &val, sink)
        }
        Op::Relu(..) | Op::Tanh(..) => elementwise::backward(&node.op, &node.value, gout, &val, sink),
        Op::ChannelBias(..) | Op::ScaleShift { .. } | Op::BatchNorm { .. } => {
            norm::backward(&node.op, &node.value, gout, &val, sink)
        }
        Op::MatMul { .. } | Op::SumCols(..) | Op::SumAll(..) | Op::MeanAll(..) => {
            linalg::backward(&node.op, gout, &val, sink)
        }
        Op::Conv2d { .. }
        | Op::Upsample2x(..)
        | Op::AvgPool2x(..)
        | Op::MaxPool2x(..)
        | Op::SumSpatial(..)
        | Op::Rotate90 { .. } => conv::backward(&node.op, gout, &val, sink),
        Op::Softmax(..) | Op::CrossEntropy { .. } => loss::backward(&node.op, &node.value, gout, &val, sink),
        Op::Reshape(..)
        | Op::ConcatCols(..)
        | Op::SliceCols { .. }
        | Op::ConcatRows(..)
        | Op::SliceRows { .. }
        | Op::SelectRows { .. } => shape::backward(&node.op, gout, &val, sink),
        Op::SpectralNorm { .. } => spectral::backward(&node.op, &node.value, gout, &val, sink),
    }
}
