//! Distance estimation for branched, flow-driven molecular communication
//! channels.
//!
//! - [`topology`]: tube network geometry and flow rates
//! - [`channel`]: closed-form expected receiver counts
//! - [`sim`]: Monte Carlo particle transport producing count traces
//! - [`mle`]: maximum-likelihood distance fitting against the closed form
//! - [`nn`]: sliding-window bidirectional LSTM regressor
//! - [`pipeline`]: datasets, splits, metrics and reports

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod error;
pub mod mle;
pub mod nn;
pub mod pipeline;
pub mod sim;
pub mod topology;
pub mod trace;

pub use channel::{ChannelParams, SymbolSequence, VelocityMode};
pub use error::{Error, Result};
pub use topology::{BranchSpec, BranchTopology};
pub use trace::{CountTrace, TimeGrid, TraceMeta};
