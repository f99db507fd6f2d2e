//! Optimizer, worker model and the four training procedures.

mod asynchronous;
pub mod delay;
pub mod optim;
pub mod report;
pub mod stream;
mod train;

pub use asynchronous::{train_async, train_async_threaded, train_async_with, AsyncConfig, AsyncEvent};
pub use delay::{make_slowdown_pmf, DelayModel, PmfSampler, ScriptedSampler, WorkerSampler};
pub use optim::{sgd_step, OptimizerConfig, Schedule, SgdConfig};
pub use report::{metric, MetricRecord, TrainReport};
pub use stream::{Batch, BatchStream};
pub use train::{
    evaluate, stage_eval, stage_forward, train_e2e, train_sequential, train_sync, train_sync_with, EvalSet, ExecMode,
    TrainConfig, EVAL_CHUNK,
};
