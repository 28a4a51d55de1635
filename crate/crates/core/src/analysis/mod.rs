//! Metrics, payload accounting and convergence diagnostics.

mod comm;
mod convergence;
mod metrics;

pub use comm::{comm_cost, CommCost, BYTES_PER_SCALAR};
pub use convergence::{convergence_diag, ConvergenceDiag, DiagSettings, RoundDiag};
pub use metrics::{
    evaluate, read_reports_jsonl, write_metrics_csv, ClientRoundRecord, RoundReport, METRICS_HEADER,
};
