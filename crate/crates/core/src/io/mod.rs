//! On-disk formats: per-run curve CSVs, mask snapshot CSVs, the suite report
//! and the binary matrix container.

pub mod container;
mod curve_csv;
mod report_csv;

pub use container::{read_container, write_container, Matrix};
pub use curve_csv::{
    read_curve, run_stem, CurveFile, CurveHeader, CurveWriter, MaskSnapshotWriter, CURVE_COLUMNS,
};
pub use report_csv::{write_report, ReportContext};
