//! Cohort life-table ingestion.
//!
//! Reads Human Mortality Database cohort life-table text files (fixed column
//! layout `Year Age mx qx ax lx dx Lx Tx ex`, `.` for missing values, `110+`
//! for the open age group) and turns them into empirical cumulative death
//! probabilities per cohort.

use crate::params::SemParams;
use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HmdError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: malformed life-table row: {msg}")]
    MalformedRow { line: usize, msg: String },
    #[error("no data rows found in life-table input")]
    EmptyFile,
    #[error("cohort {cohort}: duplicate age {age}")]
    DuplicateAge { cohort: i32, age: u32 },
    #[error("cohort {cohort}: gaps in the age range, missing ages {missing:?}")]
    GapsInAges { cohort: i32, missing: Vec<u32> },
    #[error("cohort {cohort}: initial survivorship l(0) is zero")]
    DegenerateCohort { cohort: i32 },
    #[error("cohort {cohort}: no usable ages starting from 0")]
    NoData { cohort: i32 },
    #[error("cohort {cohort}: mortality decreases at age {age}")]
    NonMonotone { cohort: i32, age: u32 },
    #[error("cohort {cohort}: q({age}) out of [0,1]: {q}")]
    OutOfRange { cohort: i32, age: u32, q: f64 },
    #[error("conditioning age {s} beyond last available age {w_avail}")]
    CondAgeBeyondData { s: u32, w_avail: u32 },
    #[error("cohort {cohort}: deaths certain by conditioning age (q(S) = 1)")]
    DegenerateConditioning { cohort: i32 },
    #[error("normalized mortality file: expected header 'cohort\\tage\\tq', got {0:?}")]
    BadNormalizedHeader(String),
    #[error("normalized mortality file, line {line}: {msg}")]
    BadNormalizedRow { line: usize, msg: String },
    #[error("panel cohorts must be strictly increasing, got {0} after {1}")]
    UnorderedCohorts(i32, i32),
}

/// One parsed life-table row; only the columns the pipeline uses are kept.
#[derive(Debug, Clone, PartialEq)]
pub struct LifetableRow {
    pub cohort: i32,
    pub age: u32,
    pub qx: Option<f64>,
    pub lx: Option<f64>,
}

/// Parses an HMD cohort life-table stream.
///
/// The first two lines are headers. A repeated column-name line (first token
/// `Year`) and blank lines are tolerated anywhere.
pub fn parse_cohort_lifetable<R: BufRead>(reader: R) -> Result<Vec<LifetableRow>, HmdError> {
    let mut rows = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if idx < 2 {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.is_empty() || tokens[0] == "Year" {
            continue;
        }
        let lineno = idx + 1;
        if tokens.len() < 6 {
            return Err(HmdError::MalformedRow {
                line: lineno,
                msg: format!("expected at least 6 columns, got {}", tokens.len()),
            });
        }
        let cohort: i32 = tokens[0].parse().map_err(|_| HmdError::MalformedRow {
            line: lineno,
            msg: format!("bad year {:?}", tokens[0]),
        })?;
        let age = parse_age(tokens[1]).ok_or_else(|| HmdError::MalformedRow {
            line: lineno,
            msg: format!("bad age {:?}", tokens[1]),
        })?;
        let qx = parse_value(tokens[3]).map_err(|v| HmdError::MalformedRow {
            line: lineno,
            msg: format!("bad qx {v:?}"),
        })?;
        let lx = parse_value(tokens[5]).map_err(|v| HmdError::MalformedRow {
            line: lineno,
            msg: format!("bad lx {v:?}"),
        })?;
        rows.push(LifetableRow { cohort, age, qx, lx });
    }
    if rows.is_empty() {
        return Err(HmdError::EmptyFile);
    }
    Ok(rows)
}

fn parse_age(s: &str) -> Option<u32> {
    if let Some(stripped) = s.strip_suffix('+') {
        stripped.parse().ok()
    } else {
        s.parse().ok()
    }
}

fn parse_value(s: &str) -> Result<Option<f64>, String> {
    if s == "." {
        return Ok(None);
    }
    s.parse().map(Some).map_err(|_| s.to_string())
}

/// Empirical cumulative death probabilities of one cohort over ages
/// `0..=w_avail`.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortMortality {
    cohort: i32,
    q: Vec<f64>,
}

impl CohortMortality {
    /// Wraps a validated curve; `q[t]` is the probability of death by age
    /// `t`, which must be nondecreasing and within `[0, 1]`.
    pub fn new(cohort: i32, q: Vec<f64>) -> Result<Self, HmdError> {
        if q.is_empty() {
            return Err(HmdError::NoData { cohort });
        }
        let mut prev = 0.0;
        for (age, &v) in q.iter().enumerate() {
            if !(0.0..=1.0).contains(&v) || !v.is_finite() {
                return Err(HmdError::OutOfRange { cohort, age: age as u32, q: v });
            }
            if v < prev {
                return Err(HmdError::NonMonotone { cohort, age: age as u32 });
            }
            prev = v;
        }
        Ok(Self { cohort, q })
    }

    pub fn cohort(&self) -> i32 {
        self.cohort
    }

    /// Last age with data.
    pub fn w_avail(&self) -> u32 {
        (self.q.len() - 1) as u32
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn q_at(&self, age: u32) -> Option<f64> {
        self.q.get(age as usize).copied()
    }

    /// Copy of the curve truncated to ages `0..=w_new` (used to simulate a
    /// data horizon for prediction cohorts).
    pub fn truncated(&self, w_new: u32) -> Self {
        let len = ((w_new + 1) as usize).min(self.q.len());
        Self { cohort: self.cohort, q: self.q[..len].to_vec() }
    }
}

/// Builds a cohort's mortality curve from parsed rows.
///
/// Survivorship (`lx`) is the primary construction; the `qx` product is the
/// fallback when `lx` is absent at age 0. The last age is the one before the
/// first missing value, capped at the terminal age; values reappearing after
/// a hole are a gap error rather than silent truncation.
pub fn build_mortality(rows: &[LifetableRow], cohort: i32, p: &SemParams) -> Result<CohortMortality, HmdError> {
    let mut by_age: BTreeMap<u32, (Option<f64>, Option<f64>)> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.cohort == cohort) {
        if by_age.insert(r.age, (r.qx, r.lx)).is_some() {
            return Err(HmdError::DuplicateAge { cohort, age: r.age });
        }
    }
    let use_lx = matches!(by_age.get(&0), Some(&(_, Some(_))));
    let value = |age: u32| -> Option<f64> {
        by_age.get(&age).and_then(|&(qx, lx)| if use_lx { lx } else { qx })
    };

    if value(0).is_none() {
        return Err(HmdError::NoData { cohort });
    }
    let mut w_avail = 0u32;
    while value(w_avail + 1).is_some() {
        w_avail += 1;
    }
    let last_present = by_age
        .iter()
        .filter(|(_, &(qx, lx))| if use_lx { lx.is_some() } else { qx.is_some() })
        .map(|(&a, _)| a)
        .max()
        .unwrap_or(0);
    if last_present > w_avail && w_avail < p.terminal_age() {
        let missing: Vec<u32> = (w_avail + 1..last_present).filter(|&a| value(a).is_none()).collect();
        return Err(HmdError::GapsInAges { cohort, missing });
    }
    w_avail = w_avail.min(p.terminal_age());

    let q = if use_lx {
        let l0 = value(0).unwrap();
        if l0 <= 0.0 {
            return Err(HmdError::DegenerateCohort { cohort });
        }
        (0..=w_avail).map(|t| 1.0 - value(t).unwrap() / l0).collect()
    } else {
        let mut surv = 1.0;
        let mut q = Vec::with_capacity(w_avail as usize + 1);
        for t in 0..=w_avail {
            q.push(1.0 - surv);
            surv *= 1.0 - value(t).unwrap();
        }
        q
    };
    CohortMortality::new(cohort, q)
}

/// Empirical conditional mortality `q(t | S)` for `t = S..=w_avail`.
pub fn conditional_data(cm: &CohortMortality, s: u32) -> Result<Vec<f64>, HmdError> {
    let w_avail = cm.w_avail();
    if s > w_avail {
        return Err(HmdError::CondAgeBeyondData { s, w_avail });
    }
    let q_s = cm.q()[s as usize];
    if q_s >= 1.0 {
        return Err(HmdError::DegenerateConditioning { cohort: cm.cohort() });
    }
    Ok(cm.q()[s as usize..]
        .iter()
        .map(|&q_t| ((q_t - q_s) / (1.0 - q_s)).clamp(0.0, 1.0))
        .collect())
}

/// A set of cohort curves sharing one parameter block, ordered by birth year.
#[derive(Debug, Clone)]
pub struct CohortPanel {
    params: SemParams,
    curves: Vec<CohortMortality>,
}

impl CohortPanel {
    pub fn new(params: SemParams, curves: Vec<CohortMortality>) -> Result<Self, HmdError> {
        for pair in curves.windows(2) {
            if pair[1].cohort() <= pair[0].cohort() {
                return Err(HmdError::UnorderedCohorts(pair[1].cohort(), pair[0].cohort()));
            }
        }
        Ok(Self { params, curves })
    }

    pub fn params(&self) -> &SemParams {
        &self.params
    }

    pub fn curves(&self) -> &[CohortMortality] {
        &self.curves
    }

    pub fn cohorts(&self) -> Vec<i32> {
        self.curves.iter().map(|c| c.cohort()).collect()
    }

    pub fn get(&self, cohort: i32) -> Option<&CohortMortality> {
        self.curves.iter().find(|c| c.cohort() == cohort)
    }

    /// Cohorts observed through the terminal age (usable for model fitting).
    pub fn training_curves(&self) -> Vec<&CohortMortality> {
        self.curves.iter().filter(|c| c.w_avail() == self.params.terminal_age()).collect()
    }

    /// Writes the normalized tab-separated format (`cohort\tage\tq`).
    pub fn write_normalized<W: Write>(&self, mut out: W) -> Result<(), HmdError> {
        writeln!(out, "cohort\tage\tq")?;
        for curve in &self.curves {
            for (age, &q) in curve.q().iter().enumerate() {
                writeln!(out, "{}\t{}\t{}", curve.cohort(), age, q)?;
            }
        }
        Ok(())
    }

    /// Reads the normalized format back; the round trip is bit-exact.
    pub fn read_normalized<R: BufRead>(reader: R, params: SemParams) -> Result<Self, HmdError> {
        let mut lines = reader.lines().enumerate();
        let header = match lines.next() {
            Some((_, line)) => line?,
            None => return Err(HmdError::BadNormalizedHeader(String::new())),
        };
        if header != "cohort\tage\tq" {
            return Err(HmdError::BadNormalizedHeader(header));
        }
        let mut per_cohort: BTreeMap<i32, Vec<(u32, f64)>> = BTreeMap::new();
        for (idx, line) in lines {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let lineno = idx + 1;
            let mut parts = line.split('\t');
            let bad = |msg: &str| HmdError::BadNormalizedRow { line: lineno, msg: msg.to_string() };
            let cohort: i32 =
                parts.next().ok_or_else(|| bad("missing cohort"))?.parse().map_err(|_| bad("bad cohort"))?;
            let age: u32 = parts.next().ok_or_else(|| bad("missing age"))?.parse().map_err(|_| bad("bad age"))?;
            let q: f64 = parts.next().ok_or_else(|| bad("missing q"))?.parse().map_err(|_| bad("bad q"))?;
            per_cohort.entry(cohort).or_default().push((age, q));
        }
        let mut curves = Vec::with_capacity(per_cohort.len());
        for (cohort, mut entries) in per_cohort {
            entries.sort_by_key(|&(age, _)| age);
            for (i, &(age, _)) in entries.iter().enumerate() {
                if age != i as u32 {
                    return Err(HmdError::GapsInAges { cohort, missing: vec![i as u32] });
                }
            }
            curves.push(CohortMortality::new(cohort, entries.into_iter().map(|(_, q)| q).collect())?);
        }
        Self::new(params, curves)
    }
}
