//! Numerical laboratory for a quantum kicked rotator whose kick amplitudes
//! are perturbed at instants chosen by a power-law renewal process.
//!
//! The crate couples two independent routes to the same observables:
//!
//! * simulation: exact split-step Floquet propagation of momentum-basis
//!   states ([`quantum`]) and the classical standard map ([`classical`]),
//!   driven by sampled noise timelines ([`renewal`]);
//! * prediction: closed-form and recursive evaluation of the decoherence
//!   factor, momentum variance, IPR, purity and log-fidelity ([`theory`]),
//!   built on exact integer-time renewal statistics and special functions
//!   ([`specfun`]).
//!
//! [`harness`] ties both together: configuration, fitting, CSV output and
//! the experiment driver used by the command-line tool.

pub mod classical;
pub mod harness;
pub mod quantum;
pub mod renewal;
pub mod specfun;
pub mod theory;

pub use classical::ClassicalEnsemble;
pub use harness::{ExperimentConfig, FitResult};
pub use quantum::{NoiseParams, NoiseRealization, ObservableSeries, Preset, QuantumState, RotatorConfig};
pub use renewal::{NoiseTimeline, RenewalSeries, SeedTag, WaitingTimeDist, WaitingTimeSampler};
pub use specfun::MlfEvalPolicy;
pub use theory::{TheoryParams, TheorySeries};
