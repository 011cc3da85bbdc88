//! AUROC, benchmark runs, report files and the synthetic bundle.

pub mod auroc;
pub mod benchmark;
pub mod report;
pub mod synth;

pub use auroc::auroc;
pub use benchmark::run_benchmark;
pub use report::{emit_report, write_report_dir, EvalReport, EvalRow, ReportFormat};
