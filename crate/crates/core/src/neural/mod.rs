//! The neural closure: stencil features, the gated network and the assembly
//! of its outputs into a face forcing.

pub mod closure;
pub mod features;
pub mod net;

pub use closure::{NeuralClosure, OutputMode};
pub use features::{extract_features, DerivativeSet, FeatureConfig};
pub use net::{param_count, NetDims, NetParams, Tape};
