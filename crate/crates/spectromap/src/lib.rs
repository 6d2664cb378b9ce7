//! Toolkit for retrieving completely positive trace-preserving (CPTP) maps from
//! Pauli-string tomography data of noisy quantum circuits, and for analyzing the
//! spectra of the retrieved maps against random-map ensembles.
//!
//! The crate is organized in layers:
//!
//! - [`numerics`]: dense complex linear algebra, seeded randomness, QR with a
//!   positive-diagonal convention, eigensolvers, Kronecker/partial-trace/reshuffle
//!   primitives, and a matrix exponential.
//! - [`channels`]: Kraus-form CPTP maps, their surjective real parameterization,
//!   superoperator/Choi conversions and spectra.
//! - [`spam`]: state-preparation-and-measurement (SPAM) error models — corrupted
//!   initial states, classical readout corruption matrices, and full POVMs.
//! - [`circuits`]: hardware-efficient parameterized circuits and an
//!   expressibility measure based on fidelity histograms.
//! - [`tomography`]: Pauli preparation/measurement modes, forward probability
//!   models, synthetic finite-shot datasets, and a dataset file format.
//! - [`retrieval`]: quadratic-loss fitting of SPAM models and Kraus maps to
//!   tomography data with analytic gradients and Adam.
//! - [`ensembles`]: random Lindbladian generators and diluted-unitary random maps.
//! - [`spectral`]: kernel-density spectral distance, diluted-unitary fits of
//!   spectra, and support classification (annulus vs. disc).

pub mod channels;
pub mod circuits;
pub mod ensembles;
pub mod numerics;
pub mod retrieval;
pub mod spam;
pub mod spectral;
pub mod tomography;
