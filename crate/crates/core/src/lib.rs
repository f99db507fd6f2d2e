//! Decoupled greedy training of layered networks.
//!
//! A network is cut into stages. Each stage owns a primary sub-network, a
//! small local classifier on top of it, and its own optimizer state. Stages
//! never exchange gradients: stage `j` trains on whatever stage `j - 1`
//! emitted, either batch by batch ([`sched::train_sync`]), through bounded
//! replay buffers under a random worker schedule ([`sched::train_async`]),
//! one stage after another ([`sched::train_sequential`]), or jointly as an
//! ordinary backprop baseline ([`sched::train_e2e`]).

pub mod error;
pub mod harness;
pub mod net;
pub mod nn;
pub mod probe;
pub mod replay;
pub mod sched;
pub mod tensor;

pub use error::{Error, Result};
pub use net::{AuxKind, GreedyStage, StageSpec};
pub use replay::{BufferRecord, BufferStats, ReplayBuffer};
pub use tensor::Tensor;
