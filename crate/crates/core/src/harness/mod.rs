//! Datasets, configuration, metrics output and the experiment runners the
//! command line drives.

pub mod config;
pub mod data;
pub mod experiment;
pub mod idx;
pub mod metrics;
pub mod oracle;

pub use config::{
    resolve_stages, Architecture, AsyncSpec, DataSource, ExperimentConfig, StageLine, SweepKind, SweepSpec,
    TrainerSpec,
};
pub use data::{gen_synthetic, generate, Dataset, SyntheticKind, SyntheticSpec};
pub use experiment::{config_stages, flops_table, format_sweep, load_dataset, Experiment, RunSeeds, SweepRow, SWEEP_HEADER};
pub use idx::{load_idx, IdxError};
pub use metrics::{fmt_g9, format_records, parse_metrics, read_metrics, write_metrics, write_records, HEADER};
pub use oracle::{run_oracle_suite, suite_names, OracleResult, OracleSummary, ORACLE_CASES, ORACLE_EPS, ORACLE_TOL};
