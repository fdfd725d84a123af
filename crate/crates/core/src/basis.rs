//! Basis functions for the per-pattern odds models.
//!
//! Each pattern's basis is an intercept, a clamped B-spline family for every
//! observed continuous column, and one indicator per non-reference level for
//! every observed discrete column.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ColumnKind, Dataset};
use crate::linalg::Matrix;
use crate::pattern_graph::Pattern;

#[derive(Debug, Error, PartialEq)]
pub enum BasisError {
    #[error(
        "column {column:?} has fewer than 2 distinct complete-case values; \
         mark it discrete in the column-kind overrides"
    )]
    Degenerate { column: String },
    #[error("spline degree must be 1..=4, got {0}")]
    BadDegree(usize),
    #[error("a degree-{degree} family needs at least {} functions, got {n_splines}", degree + 1)]
    TooFewSplines { n_splines: usize, degree: usize },
    #[error("no complete cases to place knots on")]
    NoCompleteCases,
    #[error("row {row} does not observe column {column} used by the basis")]
    MissingColumn { row: usize, column: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum KnotRule {
    #[default]
    Quantile,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyRule {
    #[default]
    Sd,
    Ones,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BasisConfig {
    pub n_splines: usize,
    pub degree: usize,
    pub knots: KnotRule,
    pub penalty: PenaltyRule,
}

impl Default for BasisConfig {
    fn default() -> Self {
        BasisConfig { n_splines: 6, degree: 3, knots: KnotRule::Quantile, penalty: PenaltyRule::Sd }
    }
}

/// A clamped B-spline family on one column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineFamily {
    pub column: usize,
    pub degree: usize,
    /// Clamped knot vector of length `n_basis + degree + 1`.
    pub knots: Vec<f64>,
}

impl SplineFamily {
    pub fn n_basis(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    pub fn lower(&self) -> f64 {
        self.knots[self.degree]
    }

    pub fn upper(&self) -> f64 {
        self.knots[self.n_basis()]
    }

    /// Knot span index `i` with `knots[i] <= x < knots[i+1]`, `x` already clamped.
    fn span(&self, x: f64) -> usize {
        let n = self.n_basis();
        let p = self.degree;
        if x >= self.knots[n] {
            // right boundary belongs to the last nonempty span
            let mut i = n - 1;
            while i > p && self.knots[i] == self.knots[n] {
                i -= 1;
            }
            return i;
        }
        // last i in [p, n-1] with knots[i] <= x
        let (mut lo, mut hi) = (p, n);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.knots[mid] <= x {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    /// All basis values at `x` (clamped into the knot range) written into `out`.
    pub fn eval_into(&self, x: f64, out: &mut [f64]) {
        let p = self.degree;
        debug_assert_eq!(out.len(), self.n_basis());
        out.iter_mut().for_each(|v| *v = 0.0);
        let x = x.clamp(self.lower(), self.upper());
        let i = self.span(x);
        let u = &self.knots;
        // Cox-de Boor, triangular form over the p+1 nonzero functions
        let mut nz = [0.0f64; 5];
        let mut left = [0.0f64; 5];
        let mut right = [0.0f64; 5];
        nz[0] = 1.0;
        for j in 1..=p {
            left[j] = x - u[i + 1 - j];
            right[j] = u[i + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom == 0.0 { 0.0 } else { nz[r] / denom };
                nz[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            nz[j] = saved;
        }
        for (r, v) in nz.iter().take(p + 1).enumerate() {
            out[i - p + r] = *v;
        }
    }

    pub fn eval(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.n_basis()];
        self.eval_into(x, &mut out);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BasisTerm {
    Intercept,
    Spline { column: usize, family: usize, index: usize },
    Indicator { column: usize, level: f64 },
}

impl BasisTerm {
    pub fn label(&self, names: &[String]) -> String {
        match self {
            BasisTerm::Intercept => "(intercept)".into(),
            BasisTerm::Spline { column, index, .. } => format!("bs({})[{}]", names[*column], index + 1),
            BasisTerm::Indicator { column, level } => format!("1[{}=={}]", names[*column], level),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub pattern: Pattern,
    pub terms: Vec<BasisTerm>,
    pub families: Vec<SplineFamily>,
    /// Penalty weight per term; 0 for the intercept.
    pub t: Vec<f64>,
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub const T_FLOOR: f64 = 1e-8;

/// Builds the basis for pattern `r`, knots placed on complete-case rows.
pub fn build_basis(ds: &Dataset, r: &Pattern, cfg: &BasisConfig) -> Result<BasisSpec, BasisError> {
    if !(1..=4).contains(&cfg.degree) {
        return Err(BasisError::BadDegree(cfg.degree));
    }
    if cfg.n_splines < cfg.degree + 1 {
        return Err(BasisError::TooFewSplines { n_splines: cfg.n_splines, degree: cfg.degree });
    }
    let cc = ds.complete_rows();
    if cc.is_empty() {
        return Err(BasisError::NoCompleteCases);
    }
    let mut terms = vec![BasisTerm::Intercept];
    let mut families = Vec::new();
    for j in r.observed_columns() {
        match ds.column_kinds()[j] {
            ColumnKind::Continuous => {
                let mut vals: Vec<f64> = cc.iter().map(|&i| ds.complete_row(i)[j]).collect();
                vals.sort_by(|a, b| a.total_cmp(b));
                let (lo, hi) = (vals[0], *vals.last().unwrap());
                if lo == hi {
                    return Err(BasisError::Degenerate { column: ds.column_names()[j].clone() });
                }
                let p = cfg.degree;
                let m = cfg.n_splines - p - 1;
                let mut knots = vec![lo; p + 1];
                for k in 1..=m {
                    let q = k as f64 / (m + 1) as f64;
                    knots.push(match cfg.knots {
                        KnotRule::Quantile => quantile_sorted(&vals, q),
                        KnotRule::Uniform => lo + q * (hi - lo),
                    });
                }
                knots.extend(std::iter::repeat_n(hi, p + 1));
                let fam = families.len();
                for index in 0..cfg.n_splines {
                    terms.push(BasisTerm::Spline { column: j, family: fam, index });
                }
                families.push(SplineFamily { column: j, degree: p, knots });
            }
            ColumnKind::Discrete => {
                let mut levels: Vec<f64> =
                    (0..ds.n_rows()).filter_map(|i| ds.get(i, j)).collect();
                levels.sort_by(|a, b| a.total_cmp(b));
                levels.dedup();
                if levels.len() < 2 {
                    return Err(BasisError::Degenerate { column: ds.column_names()[j].clone() });
                }
                for &level in &levels[1..] {
                    terms.push(BasisTerm::Indicator { column: j, level });
                }
            }
        }
    }
    let mut spec = BasisSpec { pattern: *r, terms, families, t: Vec::new() };
    spec.t = penalty_weights(&spec, ds, cfg.penalty);
    Ok(spec)
}

/// Penalty weights: 0 for the intercept, otherwise the (population) standard
/// deviation of the term over complete cases floored at [`T_FLOOR`], or 1
/// under [`PenaltyRule::Ones`].
pub fn penalty_weights(spec: &BasisSpec, ds: &Dataset, rule: PenaltyRule) -> Vec<f64> {
    let k = spec.n_terms();
    match rule {
        PenaltyRule::Ones => (0..k).map(|i| if i == 0 { 0.0 } else { 1.0 }).collect(),
        PenaltyRule::Sd => {
            let cc = ds.complete_rows();
            let n = cc.len() as f64;
            let mut sum = vec![0.0; k];
            let mut buf = vec![0.0; k];
            for &i in cc {
                spec.evaluate_into(ds.complete_row(i), &mut buf);
                sum.iter_mut().zip(&buf).for_each(|(s, v)| *s += v);
            }
            let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
            let mut ss = vec![0.0; k];
            for &i in cc {
                spec.evaluate_into(ds.complete_row(i), &mut buf);
                for t in 0..k {
                    let d = buf[t] - mean[t];
                    ss[t] += d * d;
                }
            }
            ss.iter()
                .enumerate()
                .map(|(t, s)| {
                    if matches!(spec.terms[t], BasisTerm::Intercept) {
                        0.0
                    } else {
                        (s / n).sqrt().max(T_FLOOR)
                    }
                })
                .collect()
        }
    }
}

impl BasisSpec {
    /// `K_r`.
    pub fn n_terms(&self) -> usize {
        self.terms.len()
    }

    /// Columns the basis reads.
    pub fn columns(&self) -> Vec<usize> {
        let mut c: Vec<usize> = self
            .terms
            .iter()
            .filter_map(|t| match t {
                BasisTerm::Intercept => None,
                BasisTerm::Spline { column, .. } | BasisTerm::Indicator { column, .. } => Some(*column),
            })
            .collect();
        c.dedup();
        c
    }

    /// Evaluates every term on a full-width row. Only the columns the basis
    /// references are read.
    pub fn evaluate_into(&self, row: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.n_terms());
        let mut k = 0;
        let mut fam_done = usize::MAX;
        while k < self.terms.len() {
            match &self.terms[k] {
                BasisTerm::Intercept => {
                    out[k] = 1.0;
                    k += 1;
                }
                BasisTerm::Spline { family, .. } => {
                    let f = &self.families[*family];
                    debug_assert_ne!(fam_done, *family);
                    let nb = f.n_basis();
                    f.eval_into(row[f.column], &mut out[k..k + nb]);
                    fam_done = *family;
                    k += nb;
                }
                BasisTerm::Indicator { column, level } => {
                    out[k] = if row[*column] == *level { 1.0 } else { 0.0 };
                    k += 1;
                }
            }
        }
    }

    pub fn evaluate(&self, row: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_terms()];
        self.evaluate_into(row, &mut out);
        out
    }

    /// Evaluates on dataset row `i`, failing if a referenced column is masked.
    pub fn evaluate_row(&self, ds: &Dataset, i: usize) -> Result<Vec<f64>, BasisError> {
        for c in self.columns() {
            if !ds.is_observed(i, c) {
                return Err(BasisError::MissingColumn { row: i, column: c });
            }
        }
        Ok(self.evaluate(ds.raw_row(i)))
    }

    /// Design matrix over `rows`, one row per entry.
    pub fn design(&self, ds: &Dataset, rows: &[usize]) -> Result<Matrix, BasisError> {
        let cols = self.columns();
        let k = self.n_terms();
        let mut m = Matrix::zeros(rows.len(), k);
        for (a, &i) in rows.iter().enumerate() {
            for &c in &cols {
                if !ds.is_observed(i, c) {
                    return Err(BasisError::MissingColumn { row: i, column: c });
                }
            }
            self.evaluate_into(ds.raw_row(i), m.row_mut(a));
        }
        Ok(m)
    }

    pub fn labels(&self, names: &[String]) -> Vec<String> {
        self.terms.iter().map(|t| t.label(names)).collect()
    }
}
