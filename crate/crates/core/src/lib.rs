//! Numerical laboratory for a continuous-time Hopfield network that learns by
//! a Hebbian rule.
//!
//! The crate simulates learning, then analyses the frozen-weight retrieval
//! dynamics along the learning path: fixed points and their stability, the
//! bifurcations that create and destroy attractors, memory labels,
//! basin cross-sections and bifurcation-manifold sections in weight space.
//!
//! All numerics are generic over [`Scalar`] (`f32` or `f64`); the `*64`
//! aliases below fix the scalar to `f64`, which the analysis defaults assume.

pub mod basins;
pub mod error;
pub mod fixedpoints;
pub mod integrate;
pub mod io;
pub mod linalg;
pub mod manifolds;
pub mod memory;
pub mod model;
pub mod rng;
pub mod scalar;
pub mod simulate;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type NetworkConfig64 = model::NetworkConfig<f64>;
pub type WeightMatrix64 = model::WeightMatrix<f64>;
pub type StimulusSchedule64 = model::StimulusSchedule<f64>;
pub type RetrievalField64 = model::RetrievalField<f64>;
pub type WeightTrajectory64 = simulate::WeightTrajectory<f64>;
pub type FixedPoint64 = fixedpoints::FixedPoint<f64>;
pub type BifurcationEvent64 = fixedpoints::BifurcationEvent<f64>;
pub type Tracking64 = fixedpoints::Tracking<f64>;
pub type BasinRaster64 = basins::BasinRaster<f64>;
pub type PlaneSpec64 = basins::PlaneSpec<f64>;
pub type ManifoldSection64 = manifolds::ManifoldSection<f64>;
pub type MemoryLabel64 = memory::MemoryLabel<f64>;
