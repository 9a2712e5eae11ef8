//! Reservoir computing on chaotic dynamical systems, with both classical
//! echo state networks and emulated gate-based quantum reservoirs.
//!
//! The crate is split along the processing pipeline:
//!
//! - [`dynamics`]: the Lorenz-63, Lorenz-96 and nine-mode shear-flow (MFE)
//!   systems, RK4 integration, range scaling and dataset splitting.
//! - [`quantum`]: a noise-free statevector emulator (RY/CNOT), the four
//!   feature maps and the C1-C5 ansatz step circuits.
//! - [`reservoir`]: classical and quantum reservoir state evolution,
//!   washout/harvesting, ridge-regression readouts, open/closed-loop runs.
//! - [`metrics`]: NRMSE/VPT, predictability horizon, extreme-event scores,
//!   linear memory capacity and density histograms.
//!
//! All numerics are generic over the scalar type via [`Scalar`]; the
//! `*64` aliases below pin the double-precision instantiations used by the
//! experiment harness.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssign};
use serde::{de::DeserializeOwned, Serialize};

pub mod dynamics;
pub mod metrics;
pub mod quantum;
pub mod reservoir;

/// Floating-point scalar the numeric kernels are generic over: f32 or f64.
pub trait Scalar:
    Float
    + FromPrimitive
    + NumAssign
    + LinalgScalar
    + ScalarOperand
    + Sum
    + Debug
    + Display
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Shorthand for pulling f64 literals into the generic scalar type.
pub(crate) fn num<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("f64 literal representable in scalar type")
}

/// Child seed derived from a master seed, a role tag and an index
/// (FNV-1a over the tag, splitmix64 finalizer). Lets independent work
/// items draw from independent streams without seed bookkeeping.
pub fn derive_seed(master: u64, tag: &str, index: u64) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in tag.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = master
        ^ h.rotate_left(32)
        ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub type Trajectory64 = dynamics::Trajectory<f64>;
pub type SystemId64 = dynamics::SystemId<f64>;
pub type MfeEnsemble64 = dynamics::MfeEnsemble<f64>;
pub type Statevector64 = quantum::Statevector<f64>;
pub type Circuit64 = quantum::Circuit<f64>;
pub type AnsatzConfig64 = quantum::AnsatzConfig<f64>;
pub type ClassicalReservoir64 = reservoir::ClassicalReservoir<f64>;
pub type QuantumReservoir64 = reservoir::QuantumReservoir<f64>;
pub type TrainedReadout64 = reservoir::TrainedReadout<f64>;

pub type Trajectory32 = dynamics::Trajectory<f32>;
pub type ClassicalReservoir32 = reservoir::ClassicalReservoir<f32>;
