//! Ranking metrics and evaluation protocols.

mod metrics;
mod protocol;
mod report;

pub use metrics::{auprc, auroc};
pub use protocol::{
    imbalance_sweep, run_protocol, run_protocol_with, AverageRow, CellError, EvalDataset, EvalMethod, EvalRow,
    GroupKey, ProtocolResult, ProtocolSpec, SweepRow, TranslatorSource, SWEEP_RATIOS,
};
pub use report::EvalReport;
