//! Temporal steering of qubit channels: fidelity tables and the steering
//! parameter `S_N`, QBER bounds for BB84 and the six-state protocol, the
//! temporal steerable weight via an in-crate SDP solver, and seeded QKD
//! session simulation.
//!
//! The state, channel and metric code is generic over [`scalar::Real`];
//! the aliases below fix the scalar to `f64` or `f32`. Assemblages, the SDP
//! and the simulator work in `f64`.

pub mod assemblage;
pub mod channels;
pub mod error;
pub mod metrics;
pub mod qkd;
pub mod qubit;
pub mod scalar;
pub mod sdp;
pub mod selftest;

pub use error::{Error, Result};

pub type Matrix2 = qubit::ComplexMatrix2<f64>;
pub type Matrix2F32 = qubit::ComplexMatrix2<f32>;
pub type Density = qubit::DensityMatrix<f64>;
pub type DensityF32 = qubit::DensityMatrix<f32>;
pub type Bloch = qubit::BlochVector<f64>;
pub type BlochF32 = qubit::BlochVector<f32>;
pub type QubitChannel = channels::Channel<f64>;
pub type QubitChannelF32 = channels::Channel<f32>;
pub type Fidelities = metrics::FidelityTable<f64>;
pub type FidelitiesF32 = metrics::FidelityTable<f32>;
pub type Summary = metrics::SteeringSummary<f64>;
pub type SummaryF32 = metrics::SteeringSummary<f32>;
pub type AssemblageF64 = assemblage::Assemblage<f64>;
