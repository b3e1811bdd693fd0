//! Networks, their parameter bookkeeping and spectral normalization.

mod blocks;
mod convnet;
mod discriminator;
mod generator;
mod params;
mod session;
mod spectral;

pub use blocks::{conditional_batchnorm, non_local, projection_term};
pub use convnet::{convnet_forward, ConvNet, ConvNetOutput, ConvNetSpec};
pub use discriminator::{discriminator_forward, Discriminator, DiscriminatorOutput, DiscriminatorSpec, Heads};
pub use generator::{generator_forward, Generator, GeneratorSpec};
pub use params::{reference_shape, Init, Layout, ParamId, ParamStore};
pub use session::{check_label_rows, one_hot, Mode, ModelState, MovingStats, ParamSpec, Session, BN_EPS, BN_MOMENTUM};
pub use spectral::{power_iteration, spectral_normalize, PowerIteration, SpectralNormState};
