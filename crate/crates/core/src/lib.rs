//! Weighted sum-rate optimization for full-duplex multi-user MIMO links
//! assisted by a dual-side intelligent omni-surface.
//!
//! The pipeline is: [`geometry`] builds array layouts and samples channels,
//! [`system`] composes effective channels and evaluates rates, [`wmmse`],
//! [`beamformer`] and [`phase`] implement the three block updates, and
//! [`orchestrator`] alternates them. [`campaign`] runs Monte-Carlo sweeps.

pub mod beamformer;
pub mod campaign;
pub mod error;
pub mod geometry;
pub mod linalg;
pub mod orchestrator;
pub mod phase;
pub mod system;
pub mod wmmse;

pub use beamformer::{ActiveBlocks, BisectionSettings, Budgets, DualState};
pub use campaign::{run_campaign, AggregateRow, CampaignConfig, Figure, ResultRow, RunRecord, SweepAxis};
pub use error::{Error, Result};
pub use geometry::{ArrayConfig, ChannelSet, FadingParams, SpatialLayout};
pub use orchestrator::{
    run_algorithm2, ConvergenceTrace, RunConfig, RunOutcome, SchemeKind, SchemeSpec, SolverSettings, Termination,
};
pub use phase::{PgdSettings, QpData, QuadraticFormSet};
pub use system::{BeamformerSet, EffectiveChannels, IosState, Noise, RateReport, Weights};
pub use wmmse::WmmseState;
