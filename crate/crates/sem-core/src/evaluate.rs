//! Mean-squared-error evaluation of predicted versus empirical conditional
//! mortality and comparison-table rendering.

use crate::params::KeyKind;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("length mismatch: prediction covers {pred} ages, data covers {data}, range needs {needed}")]
    LengthMismatch { pred: usize, data: usize, needed: usize },
    #[error("empty age range: c_tilde = {c_tilde} > w = {w}")]
    EmptyRange { c_tilde: u32, w: u32 },
    #[error("no reports to render")]
    NoReports,
}

/// `(w - c̃ + 1)^{-1} Σ_{t=c̃}^{w} (pred(t) - data(t))²` over vectors that
/// both cover ages `c̃..=w`.
pub fn mse(pred: &[f64], data: &[f64], c_tilde: u32, w: u32) -> Result<f64, EvalError> {
    if c_tilde > w {
        return Err(EvalError::EmptyRange { c_tilde, w });
    }
    let needed = (w - c_tilde + 1) as usize;
    if pred.len() != needed || data.len() != needed {
        return Err(EvalError::LengthMismatch { pred: pred.len(), data: data.len(), needed });
    }
    let sum: f64 = pred.iter().zip(data).map(|(p, d)| (p - d) * (p - d)).sum();
    Ok(sum / needed as f64)
}

/// Which prediction variant a report row refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Variant {
    Unmodified,
    Modified,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Variant::Unmodified => f.write_str("unmodified"),
            Variant::Modified => f.write_str("modified"),
        }
    }
}

/// One evaluated (kind, cohort, variant) cell.
#[derive(Debug, Clone)]
pub struct MseReport {
    pub kind: KeyKind,
    pub cohort: i32,
    pub variant: Variant,
    pub mse: f64,
    pub age_lo: u32,
    pub age_hi: u32,
    pub n_ages: usize,
}

/// Renders an aligned text table, one row per cohort, one column per
/// (kind, variant) pair, diffusion before inverse-Gaussian. Pairs with no
/// reports are omitted and noted in the footer.
pub fn render_table(reports: &[MseReport]) -> Result<String, EvalError> {
    if reports.is_empty() {
        return Err(EvalError::NoReports);
    }
    let all_pairs = [
        (KeyKind::Diffusion, Variant::Unmodified),
        (KeyKind::Diffusion, Variant::Modified),
        (KeyKind::InverseGaussian, Variant::Unmodified),
        (KeyKind::InverseGaussian, Variant::Modified),
    ];
    let pairs: Vec<(KeyKind, Variant)> = all_pairs
        .into_iter()
        .filter(|&(k, v)| reports.iter().any(|r| r.kind == k && r.variant == v))
        .collect();
    let omitted: Vec<String> = all_pairs
        .into_iter()
        .filter(|p| !pairs.contains(p))
        .map(|(k, v)| format!("{k} {v}"))
        .collect();
    let mut cohorts: Vec<i32> = reports.iter().map(|r| r.cohort).collect();
    cohorts.sort_unstable();
    cohorts.dedup();

    let headers: Vec<String> =
        std::iter::once("Cohort".to_string()).chain(pairs.iter().map(|(k, v)| format!("{k} {v}"))).collect();
    let mut rows: Vec<Vec<String>> = Vec::with_capacity(cohorts.len());
    for &cohort in &cohorts {
        let mut row = vec![cohort.to_string()];
        for &(k, v) in &pairs {
            let cell = reports
                .iter()
                .find(|r| r.cohort == cohort && r.kind == k && r.variant == v)
                .map(|r| format!("{:.4E}", r.mse))
                .unwrap_or_else(|| "-".to_string());
            row.push(cell);
        }
        rows.push(row);
    }

    let widths: Vec<usize> = headers
        .iter()
        .enumerate()
        .map(|(i, h)| rows.iter().map(|r| r[i].len()).chain(std::iter::once(h.len())).max().unwrap())
        .collect();
    let mut out = String::new();
    let fmt_row = |cells: &[String], widths: &[usize]| -> String {
        cells
            .iter()
            .zip(widths)
            .map(|(c, &w)| format!("{c:>w$}"))
            .collect::<Vec<_>>()
            .join("  ")
    };
    writeln!(out, "{}", fmt_row(&headers, &widths)).unwrap();
    writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1))).unwrap();
    for row in &rows {
        writeln!(out, "{}", fmt_row(row, &widths)).unwrap();
    }
    if !omitted.is_empty() {
        writeln!(out, "omitted (no reports): {}", omitted.join(", ")).unwrap();
    }
    Ok(out)
}

/// Delimited version of the comparison table.
pub fn reports_to_tsv(reports: &[MseReport]) -> String {
    let mut out = String::from("kind\tcohort\tvariant\tmse\tage_lo\tage_hi\tn_ages\n");
    for r in reports {
        writeln!(out, "{}\t{}\t{}\t{}\t{}\t{}\t{}", r.kind, r.cohort, r.variant, r.mse, r.age_lo, r.age_hi, r.n_ages)
            .unwrap();
    }
    out
}
