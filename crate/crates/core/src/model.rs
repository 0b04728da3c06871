//! Domain types shared by every stage of the pipeline.
//!
//! Hypotheses are laid out group-major, metric-minor: flat index `i` refers
//! to treatment group `i / m + 1` and metric `i % m`. Group 0 is always the
//! control group.

use std::fmt;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

/// Relative tolerance for `control_cov[q][q] == variance / n` of the control cell.
pub const DIAGONAL_REL_TOL: f64 = 1e-9;
/// Smallest eigenvalue allowed, relative to the largest one.
pub const PSD_REL_TOL: f64 = 1e-8;

/// Sufficient statistics of one metric within one group.
///
/// `variance` is the sample variance of unit-level outcomes, not the
/// variance of the mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricCell {
    pub mean: f64,
    pub variance: f64,
    pub n: u64,
}

impl MetricCell {
    pub fn new(mean: f64, variance: f64, n: u64) -> Self {
        Self { mean, variance, n }
    }

    /// Squared standard error of the cell mean.
    pub fn mean_variance(&self) -> f64 {
        self.variance / self.n as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sidedness {
    #[serde(rename = "two")]
    TwoSided,
    #[serde(rename = "right")]
    RightSided,
    #[serde(rename = "left")]
    LeftSided,
}

impl Sidedness {
    pub fn is_two_sided(self) -> bool {
        matches!(self, Sidedness::TwoSided)
    }

    /// Default dBH tuning parameter: 1 for one-sided tests, 0.95 for two-sided.
    pub fn default_gamma(self) -> f64 {
        match self {
            Sidedness::TwoSided => 0.95,
            Sidedness::RightSided | Sidedness::LeftSided => 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Sidedness::TwoSided => "two",
            Sidedness::RightSided => "right",
            Sidedness::LeftSided => "left",
        }
    }
}

impl fmt::Display for Sidedness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Sidedness {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "two" | "two-sided" | "both" => Ok(Sidedness::TwoSided),
            "right" | "right-sided" | "greater" => Ok(Sidedness::RightSided),
            "left" | "left-sided" | "less" => Ok(Sidedness::LeftSided),
            other => Err(format!(
                "unknown sidedness `{other}` (expected two, left or right)"
            )),
        }
    }
}

/// Maps flat hypothesis indices to `(treatment group, metric)` pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HypothesisIndex {
    metrics: usize,
    groups: usize,
}

impl HypothesisIndex {
    pub fn new(metrics: usize, groups: usize) -> Self {
        Self { metrics, groups }
    }

    pub fn len(&self) -> usize {
        self.metrics * self.groups
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `group` is a treatment group in `1..=G`.
    pub fn flatten(&self, group: usize, metric: usize) -> usize {
        debug_assert!((1..=self.groups).contains(&group) && metric < self.metrics);
        (group - 1) * self.metrics + metric
    }

    pub fn unflatten(&self, i: usize) -> (usize, usize) {
        debug_assert!(i < self.len());
        (i / self.metrics + 1, i % self.metrics)
    }
}

/// Per-group, per-metric sufficient statistics of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSummary {
    pub metric_names: Vec<String>,
    /// `cells[g][q]`, `g = 0` is control.
    pub cells: Vec<Vec<MetricCell>>,
    /// Covariance of the control-group metric means.
    pub control_cov: DMatrix<f64>,
}

impl ExperimentSummary {
    pub fn new(cells: Vec<Vec<MetricCell>>, control_cov: DMatrix<f64>) -> Self {
        let m = cells.first().map_or(0, Vec::len);
        Self {
            metric_names: (0..m).map(|q| format!("metric_{q}")).collect(),
            cells,
            control_cov,
        }
    }

    pub fn with_metric_names(mut self, names: Vec<String>) -> Self {
        self.metric_names = names;
        self
    }

    pub fn num_metrics(&self) -> usize {
        self.cells.first().map_or(0, Vec::len)
    }

    /// Number of treatment groups, excluding control.
    pub fn num_treatment_groups(&self) -> usize {
        self.cells.len().saturating_sub(1)
    }

    pub fn index(&self) -> HypothesisIndex {
        HypothesisIndex::new(self.num_metrics(), self.num_treatment_groups())
    }

    pub fn cell(&self, group: usize, metric: usize) -> &MetricCell {
        &self.cells[group][metric]
    }

    pub fn control(&self, metric: usize) -> &MetricCell {
        &self.cells[0][metric]
    }

    pub fn validate(&self) -> crate::Result<()> {
        let violations = validate_summary(self);
        if violations.is_empty() {
            Ok(())
        } else {
            Err(crate::Error::InvalidSummary(violations))
        }
    }
}

/// One broken invariant of an [`ExperimentSummary`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub rule: String,
}

impl Violation {
    fn new(field: impl Into<String>, rule: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            rule: rule.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

/// Checks every invariant of the summary and lists the ones that fail.
pub fn validate_summary(summary: &ExperimentSummary) -> Vec<Violation> {
    let mut out = Vec::new();
    let m = summary.num_metrics();

    if summary.cells.len() < 2 {
        out.push(Violation::new(
            "cells",
            "need a control group and at least one treatment group",
        ));
    }
    if m == 0 {
        out.push(Violation::new("cells", "need at least one metric"));
    }
    if summary.metric_names.len() != m {
        out.push(Violation::new(
            "metric_names",
            format!("expected {m} names, got {}", summary.metric_names.len()),
        ));
    }

    for (g, row) in summary.cells.iter().enumerate() {
        if row.len() != m {
            out.push(Violation::new(
                format!("cells[{g}]"),
                format!("expected {m} metrics, got {}", row.len()),
            ));
            continue;
        }
        for (q, cell) in row.iter().enumerate() {
            let field = |name: &str| format!("cells[{g}][{q}].{name}");
            if !cell.mean.is_finite() {
                out.push(Violation::new(field("mean"), "must be finite"));
            }
            if !cell.variance.is_finite() {
                out.push(Violation::new(field("variance"), "must be finite"));
            } else if cell.variance < 0.0 {
                out.push(Violation::new(field("variance"), "must be nonnegative"));
            }
            if cell.n < 2 {
                out.push(Violation::new(
                    field("n"),
                    format!("sample size must be at least 2, got {}", cell.n),
                ));
            }
        }
    }

    let cov = &summary.control_cov;
    if cov.nrows() != m || cov.ncols() != m {
        out.push(Violation::new(
            "control_cov",
            format!("expected {m}x{m}, got {}x{}", cov.nrows(), cov.ncols()),
        ));
        return out;
    }
    if cov.iter().any(|x| !x.is_finite()) {
        out.push(Violation::new("control_cov", "entries must be finite"));
        return out;
    }

    let scale = cov.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()));
    for q in 0..m {
        for r in (q + 1)..m {
            let (a, b) = (cov[(q, r)], cov[(r, q)]);
            if (a - b).abs() > 1e-12 * scale {
                out.push(Violation::new(
                    format!("control_cov[{q}][{r}]"),
                    format!("not symmetric: {a} vs {b}"),
                ));
            }
        }
    }

    if let Some(control) = summary.cells.first().filter(|row| row.len() == m) {
        for (q, cell) in control.iter().enumerate() {
            if cell.n == 0 || !cell.variance.is_finite() {
                continue;
            }
            let expected = cell.mean_variance();
            let got = cov[(q, q)];
            if (got - expected).abs() > DIAGONAL_REL_TOL * expected.abs().max(got.abs()) {
                out.push(Violation::new(
                    format!("control_cov[{q}][{q}]"),
                    format!("expected control variance / n0 = {expected}, got {got}"),
                ));
            }
        }
    }

    if m > 0 {
        let sym = (cov + cov.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym).eigenvalues;
        let max = eig.max();
        let min = eig.min();
        if min < -PSD_REL_TOL * max.max(0.0) {
            out.push(Violation::new(
                "control_cov",
                format!("not positive semidefinite: smallest eigenvalue {min}"),
            ));
        }
    }

    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn summary(n: u64) -> ExperimentSummary {
        let cells = vec![vec![MetricCell::new(1.0, 1.0, n); 2]; 3];
        let cov = DMatrix::from_diagonal_element(2, 2, 1.0 / n as f64);
        ExperimentSummary::new(cells, cov)
    }

    #[test]
    fn consistent_summary_is_valid() {
        assert!(validate_summary(&summary(100)).is_empty());
    }

    #[test]
    fn asymmetric_covariance_reported_once() {
        let mut s = summary(100);
        s.control_cov[(0, 1)] = 0.001;
        let v = validate_summary(&s);
        assert_eq!(v.len(), 1, "{v:?}");
        assert!(v[0].rule.contains("symmetric"));
    }

    #[test]
    fn small_sample_reported() {
        let mut s = summary(100);
        s.cells[2][1].n = 1;
        let v = validate_summary(&s);
        assert_eq!(v.len(), 1, "{v:?}");
        assert_eq!(v[0].field, "cells[2][1].n");
    }

    #[test]
    fn bad_diagonal_and_nan() {
        let mut s = summary(100);
        s.control_cov[(1, 1)] = 0.02;
        s.cells[1][0].mean = f64::NAN;
        let fields: Vec<_> = validate_summary(&s).into_iter().map(|v| v.field).collect();
        assert!(fields.contains(&"control_cov[1][1]".to_string()));
        assert!(fields.contains(&"cells[1][0].mean".to_string()));
    }

    #[test]
    fn indefinite_covariance() {
        let mut s = summary(100);
        s.control_cov[(0, 1)] = 0.05;
        s.control_cov[(1, 0)] = 0.05;
        let v = validate_summary(&s);
        assert!(v.iter().any(|v| v.rule.contains("semidefinite")), "{v:?}");
    }

    #[test]
    fn validation_is_pure() {
        let mut s = summary(3);
        s.cells[0][0].variance = -1.0;
        assert_eq!(validate_summary(&s), validate_summary(&s));
    }

    proptest! {
        #[test]
        fn flat_index_round_trips(m in 1usize..40, g in 1usize..10, seed in 0usize..10_000) {
            let idx = HypothesisIndex::new(m, g);
            let i = seed % idx.len();
            let (group, metric) = idx.unflatten(i);
            prop_assert!((1..=g).contains(&group));
            prop_assert!(metric < m);
            prop_assert_eq!(idx.flatten(group, metric), i);
        }
    }
}
