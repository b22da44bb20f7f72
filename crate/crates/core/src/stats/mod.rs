//! Statistical tests and BCI performance metrics.

mod aggregate;
mod bitrate;
mod wilcoxon;

pub use aggregate::{aggregate, summary_file_name, write_summary_csv, ResultTable, StdKind, SummaryTable, TABLE_COLUMNS};
pub use bitrate::{bitrate, bitrate_curve, BitrateCurve};
pub use wilcoxon::{
    wilcoxon_signed_rank, wilcoxon_signed_rank_with, Alternative, PValueMethod, PairedSamples,
    WilcoxonConfig, WilcoxonResult,
};
