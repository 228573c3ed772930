//! Differentially private selection mechanisms that also release the
//! noisy gaps between selected answers at no extra privacy cost.
//!
//! Every mechanism draws its randomness from a [`noise::RandomSource`], so a
//! run can be replayed exactly from a seed or a recorded list of uniforms.

pub mod audit;
pub mod error;
pub mod expmech;
pub mod harness;
pub mod hybrid;
pub mod noise;
pub mod postprocess;
pub mod queries;
pub mod stats;
pub mod svt;
pub mod topk;

pub use error::{Error, Result};
pub use noise::{NoiseKind, RandomSource, ReplaySource, SeededSource};
pub use queries::{QuerySet, TransactionDB};
