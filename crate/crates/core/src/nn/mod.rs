//! Decoder networks, losses and optimization.

pub mod adam;
pub mod encoding;
pub mod field;
pub mod loss;
pub mod mlp;

pub use adam::Adam;
pub use encoding::PositionalEncoding;
pub use field::{random_offset, BatchItem, DropoutSpec, FeatureStack, Field, FieldGrads, LossStats, LossWeights};
pub use loss::{loss_bce, loss_eikonal, loss_smooth, squash};
pub use mlp::{DecoderMeta, Dropout, DropoutMasks, Mlp, MlpArch, Tape};
