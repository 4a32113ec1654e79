//! Fusion of two heterogeneous speech-embedding families in the Poincaré
//! ball: both branches are conv-encoded, lifted with the exponential map,
//! combined with Möbius addition and brought back with the logarithmic map
//! before a small classifier head.
//!
//! The crate bundles the geometry, a small reverse-mode autodiff engine, the
//! four model families (FCN, CNN, concatenation baseline and hyperbolic
//! fusion), the embedding file format, and the cross-validation harness.

pub mod autodiff;
pub mod hypergeom;
pub mod models;
pub mod rng;

mod binio;
pub mod data;
pub mod train;
