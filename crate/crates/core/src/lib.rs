//! Building blocks for reconstructing crack-propagation fields: the shared
//! field types, a procedural crack generator, Horn-Schunck optical flow and
//! the flow-direction loss, positive-direction post-processing, and the
//! RMSE / SSIM / WFE metrics.

pub mod container;
pub mod datagen;
pub mod error;
pub mod field;
pub mod flow;
pub mod metrics;
pub mod postproc;

pub use error::{CoreError, Result};
pub use field::{ChannelKind, FieldFrame, FlowField, MaskKind, NormStats, RegionMask, SampleSequence};
