//! Cochlear-implant sound coding toolkit: the ACE strategy, neural
//! envelope-detection/channel-selection replacements, tone-vocoder
//! resynthesis, and objective intelligibility evaluation.

pub mod ace;
pub mod config;
pub mod corpus;
pub mod dsp;
pub mod enet;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod vocoder;
pub mod wav;

pub use config::{ChannelAllocation, StrategyConfig};
pub use error::{Error, Result};
