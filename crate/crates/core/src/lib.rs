//! Tensor kernels, a reverse-mode tape, attention modules (GAM, SE, BAM,
//! CBAM), backbone builders and parameter/FLOP accounting, all in `f64`.

pub mod analysis;
pub mod attention;
pub mod autodiff;
pub mod backbones;
pub mod error;
pub mod params;
pub mod schema;
pub mod tensor;

pub use attention::{AttentionConfig, Mechanism};
pub use autodiff::{grad_check, Differentiable, Eager, GradCheckConfig, GradCheckReport, Ops, Tape};
pub use backbones::{build_preset, InsertionPolicy, Network, NetworkSpec, Preset, SiteSelector};
pub use error::{Error, Result};
pub use params::{InitScheme, WeightStore};
pub use tensor::{Conv2dParams, Pool2d, Tensor};
