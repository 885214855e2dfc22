//! Simulation and analysis of ultra-low-frequency Mollow triplets in ³He.
//!
//! The ground state 1¹S₀ is driven by a few-hertz oscillating field and
//! coupled to the metastable 2³S₁ hyperfine levels by metastability-exchange
//! collisions. The crate integrates the coupled angular-momentum equations
//! (or the reduced ground-state equation), extracts triplet spectra, Rabi
//! envelopes and coherence times, and runs the amplitude, detuning and
//! pump-gating experiment families.
//!
//! Numerical code is generic over [`Real`] (`f32`/`f64`); the `*64` aliases
//! below are the concrete types the experiment layer uses.

pub mod integrator;
pub mod linalg;
pub mod model;
mod scalar;
pub mod sequencer;
pub mod spectral;
pub mod sweep;

pub use scalar::Real;

pub type Vec3_64 = model::Vec3<f64>;
pub type SpinState64 = model::SpinState<f64>;
pub type Params64 = model::PhysicalParams<f64>;
pub type Drive64 = model::FieldDrive<f64>;
pub type Prediction64 = model::DressedPrediction<f64>;
pub type Sequence64 = sequencer::PulseSequence<f64>;
pub type IntegrationConfig64 = integrator::IntegrationConfig<f64>;
pub type Trajectory64 = integrator::Trajectory<f64>;
pub type Series64 = spectral::ObservableSeries<f64>;
pub type Spectrum64 = spectral::Spectrum<f64>;
pub type Features64 = spectral::TripletFeatures<f64>;

pub type SpinState32 = model::SpinState<f32>;
pub type Params32 = model::PhysicalParams<f32>;
pub type Trajectory32 = integrator::Trajectory<f32>;
