//! Pipeline driver: configuration, artifact manifests, evaluation
//! campaigns and reports.

mod config;
mod manifest;
mod pipeline;
mod report;
mod selftest;

pub use config::{EvalMode, RunConfig};
pub use manifest::{file_sha256, sha256_hex, Manifest};
pub use pipeline::*;
pub use report::{
    average_ranks, mcnemar_exact_p, read_outcomes, spearman, standard_error_pct, write_mcnemar_csv, write_outcomes,
    Bin, BinningReport, EpisodeOutcome, McNemar, ResultsRow, ResultsTable, StageCell,
};
pub use selftest::{selftest, SelftestCheck};
