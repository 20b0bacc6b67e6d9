//! File formats: NPY matrices, factorization bundles and CSV reports.

mod bundle;
mod npy;
mod report;

pub use bundle::{load_bundle, save_bundle, BundleMeta, BUNDLE_FORMAT_VERSION};
pub use npy::{
    encode_npy, load_ids, load_matrix, parse_npy, read_npy, save_ids, save_matrix, write_npy, NpyArray,
    NpyData,
};
pub use report::{format_real, read_report, render_report, write_report, ReportRow, REPORT_HEADER, SKIPPED};
