//! Serialization helpers for reports and CSV output.

use serde::Serializer;

use crate::matrix_core::Mat;
use crate::stochastic_model::serde_mat::to_rows;

pub fn ser_mat<S: Serializer>(m: &Mat, s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(to_rows(m))
}

pub fn ser_opt_mat<S: Serializer>(m: &Option<Mat>, s: S) -> Result<S::Ok, S::Error> {
    match m {
        Some(m) => s.serialize_some(&to_rows(m)),
        None => s.serialize_none(),
    }
}

/// Full-precision float for CSV (17 significant digits).
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// Comma-joined row of floats.
pub fn csv_row(xs: &[f64]) -> String {
    xs.iter().map(|&x| fmt_f64(x)).collect::<Vec<_>>().join(",")
}
