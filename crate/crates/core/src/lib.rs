//! EKF-based vehicle tracking over mmWave V2I uplink channel sounding.
//!
//! Three road-side units (RSUs) with uniform linear arrays sound a vehicle's
//! uplink channel; an extended Kalman filter tracks the state [position,
//! velocity] from the combined samples. The crate provides:
//!
//! - [`geometry`]: RSU placement, per-RSU spatial frequencies ψᵘ and their
//!   derivatives with respect to the vehicle state.
//! - [`channel`]: array responses, Rician fading draws, average SNR, the
//!   real-domain lifting of complex combiners/channels, and channel sounding.
//! - [`ekf`]: the single-RSU tracking filter (motion model, predict, combiner
//!   design, Jacobian, gain, update).
//! - [`selection`]: SNR and SANR selection metrics, threshold-based RSU-set
//!   selection, and service-area map generation.
//! - [`joint`]: stacked multi-RSU sounding and the joint Kalman update.
//! - [`sim`]: scenario presets, seeded Monte Carlo trials, and MSE aggregation.
//!
//! Monte Carlo trials and map cells are data-parallel via rayon when the
//! `parallel` feature (default) is enabled; `*_seq` variants always exist and
//! produce identical results, which the bench suite compares.

pub mod channel;
pub mod ekf;
pub mod exec;
pub mod geometry;
pub mod joint;
pub mod rng;
pub mod selection;
pub mod sim;

pub use channel::{ChannelRealization, Combiner, RadioParams, SoundingSample};
pub use ekf::{CombinerStrategy, MotionModel, StateEstimate, UpdateOutcome, VehicleState};
pub use geometry::{NetworkGeometry, RsuId};
pub use joint::JointObservation;
pub use selection::{GridSpec, MetricKind, RsuSet, SelectionPolicy, ServiceAreaMap};
pub use sim::{MseSeries, Scenario, TrackerKind, TrialRecord};

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("invalid radio parameters: {0}")]
    InvalidRadio(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("unknown preset '{0}'")]
    UnknownPreset(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
