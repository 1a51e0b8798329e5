//! Replaced-token-detection (RTD) data generation toolkit.
//!
//! The crate turns a pre-tokenized corpus into corrupted training sequences
//! for an ELECTRA-style discriminator. Replacement tokens are drawn from a
//! [`dist::DistProvider`] (model-free distributions or stored auxiliary-model
//! log-probabilities), smoothed by a curriculum [`curriculum::Schedule`] that
//! anneals temperature or an interpolation coefficient over training
//! progress. Whole epochs can be generated ahead of time and written to a
//! bit-exact dump ([`datapack`]), so the auxiliary model costs nothing at
//! training time. [`costmodel`] reproduces the FLOPs and memory accounting for
//! jointly trained, inference-only, and offline auxiliary models.
//!
//! Numeric code is generic over [`Real`] (`f32` or `f64`). The aliases below
//! fix the scalar for the common cases; the on-disk pipeline uses `f64`.

mod codec;
pub mod config;
pub mod corpus;
pub mod costmodel;
pub mod curriculum;
pub mod datapack;
pub mod dist;
mod error;
pub mod pipeline;
pub mod rtd;
mod scalar;

pub use error::{Error, ErrorClass, Result};
pub use scalar::Real;

/// A token id.
pub type TokenId = u32;

/// A sequence of token ids.
pub type TokenSeq = Vec<TokenId>;

pub type Dist64 = dist::Dist<f64>;
pub type Dist32 = dist::Dist<f32>;
pub type DistProvider64 = dist::DistProvider<f64>;
pub type DistProvider32 = dist::DistProvider<f32>;
pub type Schedule64 = curriculum::Schedule<f64>;
pub type Schedule32 = curriculum::Schedule<f32>;
pub type CorruptedExample64 = rtd::CorruptedExample<f64>;
