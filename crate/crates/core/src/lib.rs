//! Massive MIMO channel-state toolkit: synthetic channels for three antenna
//! topologies, a binary CSI dataset format, MRT/ZF precoding, user
//! scheduling, fingerprint localization and a simulator of an automated
//! measurement campaign.

pub mod campaign;
pub mod channel;
pub mod config;
pub mod dataset;
pub mod error;
pub mod grid;
pub mod linalg;
pub mod localization;
pub mod model;
pub mod powermap;
pub mod precoding;
pub mod scheduling;
pub mod topology;

pub use error::{Error, Result};
pub use grid::{SampleGrid, Traversal};
pub use model::{CsiSample, Position3, RadioConfig, SampleId};
pub use precoding::{LinkBudget, PrecodingScheme};
pub use topology::{ArrayGeometry, TopologyKind};
