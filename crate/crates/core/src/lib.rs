//! Hardware-free toolkit for calibrating pulse-level cross-resonance CR(θ)
//! gates against a virtual two-qubit device.
//!
//! The crate covers the full closed loop:
//!
//! - [`pulse`]: flat-top Gaussian pulse descriptors and the echoed
//!   cross-resonance schedule with virtual phase shifts.
//! - [`device`]: a virtual two-qubit device with hidden couplings that maps
//!   schedules to effective interaction Hamiltonians, evolves the target
//!   Bloch vector, and produces shot-sampled, readout-corrupted counts.
//! - [`tomography`]: width sweeps, Bloch-trajectory fitting, and extraction
//!   of the six Pauli coefficients of the interaction Hamiltonian.
//! - [`calibration`]: the four-experiment calibration pipeline producing a
//!   [`calibration::CalibratedGate`] for arbitrary θ, plus verification.
//! - [`synthesis`]: 4×4 unitaries for AB(θ) gates, single-qubit conjugation
//!   identities, and the virtual-phase axis generalization.
//! - [`clifford`]: exact two-qubit Clifford group enumeration (11 520
//!   tableaux) with composition, inversion, and uniform sampling.
//! - [`rb`]: interleaved randomized benchmarking sequences, noisy
//!   simulation, decay fitting, and F extraction.
//!
//! All randomness enters through explicit per-call seeds; concurrent
//! execution (enabled by the default `parallel` feature) produces results
//! bit-identical to sequential execution because every work cell derives its
//! own seed from the master seed and its cell index.

pub mod calibration;
pub mod clifford;
pub mod device;
pub mod error;
pub mod exec;
pub mod fit;
pub mod pulse;
pub mod rb;
pub mod synthesis;
pub mod tomography;

pub use error::Error;

/// Crate-wide result type.
pub type Result<T> = std::result::Result<T, Error>;
