//! Neuro-fuzzy modelling of household economic series.
//!
//! The pipeline is `series` → `wavelet` (multi-level DWT plus time-aligned
//! band concatenation) → `attention` (single-head temporal QKV encoder with
//! mean pooling) → `fuzzy` (Takagi–Sugeno rule base with Gaussian
//! memberships). `training` fits the whole stack with a hybrid
//! least-squares / adaptive-moment scheme, `datagen` produces seeded
//! synthetic household panels with fraud shocks and `metrics` scores the
//! result.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the CLI and
//! wall-clock timing live in the `wavefis` crate.
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod attention;
pub mod datagen;
pub mod fuzzy;
pub mod linalg;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod series;
pub mod training;
pub mod wavelet;

pub use attention::{AttendedRepresentation, AttentionParams};
pub use datagen::{GenConfig, HouseholdPanel};
pub use fuzzy::{FuzzyRuleBase, InferenceTrace};
pub use matrix::Matrix;
pub use model::{ModelConfig, ModelState};
pub use series::{EconomicSeries, SupervisedWindow, Task, WindowGroup};
pub use training::{TrainConfig, TrainReport};
pub use wavelet::{MultiScaleTensor, WaveletBasis, WaveletKind};
