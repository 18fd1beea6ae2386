//! Digital twin of a mmWave experimentation chamber.
//!
//! The crate models the chamber geometry ([`scene`]), reconfigurable
//! intelligent surfaces ([`ris`]), the radio link budget ([`channel`]),
//! synthetic cameras ([`vision`]), a tick-driven beam-management simulator
//! ([`netsim`]) and the vision-aided switching xApp ([`xapp`]).

// Validation uses `!(x > 0.0)` on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod geometry;
pub mod netsim;
pub mod ris;
pub mod scenario;
pub mod scene;
pub mod trace;
pub mod vision;
pub mod xapp;

pub use netsim::{run_scenario, Policy, Simulation, Summary};
pub use scenario::Scenario;
pub use trace::TraceRecord;
