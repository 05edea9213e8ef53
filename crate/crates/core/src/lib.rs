//! Simulation and estimation toolkit for parallel A/B experiments run by
//! competing advertisers on an auction-driven ad platform.
//!
//! The pipeline is: draw hash-split assignments ([`randomize`]), group
//! audiences into partitions ([`design`]), simulate ranked-queue serving
//! ([`marketplace`]), realize outcomes and ground-truth effects ([`oracle`]),
//! estimate degenerate ATEs per assignment cell or with a categorical kernel
//! ([`estimators`]), and combine them into prospective ATEs ([`calculus`]).

pub mod bits;
pub mod calculus;
pub mod config;
pub mod design;
pub mod diagnostics;
pub mod error;
pub mod estimators;
pub mod io;
pub mod linalg;
pub mod marketplace;
pub mod oracle;
pub mod pipeline;
pub mod randomize;
pub mod scalar;
pub mod scenarios;

pub use bits::Bits;
pub use design::{
    build_partitions, check_assumptions, enumerate_states, Audience, Campaign, CampaignId, Partition,
    PartitionCheck, PartitionIndex, Population, Roster, StateOfWorld, TreatmentAssignment,
};
pub use error::{Error, Result};
pub use randomize::{assign, Arm, SplitSeed};
pub use scalar::Scalar;

/// `f64` instances of the scalar-generic estimation and calculus types.
pub type AteTable = estimators::AteTable<f64>;
pub type AteRow = estimators::AteRow<f64>;
pub type Bandwidths = estimators::Bandwidths<f64>;
pub type EstimationData = estimators::EstimationData<f64>;
pub type CompetitorBelief = calculus::CompetitorBelief<f64>;
pub type DegenerateTable = calculus::DegenerateTable<f64>;
