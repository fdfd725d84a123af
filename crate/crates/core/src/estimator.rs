//! Weighted logistic estimating equations on complete cases and their
//! sandwich and bootstrap covariances.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use libm::erfc;
use thiserror::Error;

use crate::basis::BasisSpec;
use crate::dataset::{DataError, Dataset};
use crate::linalg::{dot, solve_general, solve_spd, Matrix};
use crate::par::{self, Exec};
use crate::pattern_graph::{Pattern, PatternGraph};
use crate::weights::{self, fit_weights, lambdas_of, FitOptions, ModelMap, WeightError, WeightMethod, WeightSet};

pub const NEWTON_TOL: f64 = 1e-10;
pub const NEWTON_MAX_ITER: usize = 100;
pub const U_RIDGE: f64 = 1e-8;
/// Bootstrap runs with fewer replicates are flagged low precision.
pub const MIN_BOOTSTRAP: usize = 50;

#[derive(Debug, Error)]
pub enum EstimateError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Weights(#[from] WeightError),
    #[error("outcome column {column:?} must be 0/1, found {value} in row {row}")]
    NonBinaryOutcome { column: String, row: usize, value: f64 },
    #[error("column {column:?} is missing in complete-case row {row}")]
    Unobserved { column: String, row: usize },
    #[error("weighted information matrix is singular; check the predictors for collinearity")]
    Singular,
    #[error("Newton iterations did not converge (max |score| = {score:.3e} after {iterations} iterations)")]
    NoConvergence { score: f64, iterations: usize },
    #[error("no complete cases")]
    NoCompleteCases,
    #[error("regression of the estimating function on the basis of {0} is rank deficient")]
    RankDeficient(Pattern),
    #[error("derivative matrix D is singular")]
    SingularD,
    #[error("bootstrap needs at least 2 replicates, got {0}")]
    TooFewReplicates(usize),
    #[error("{failed} of {total} bootstrap replicates failed")]
    BootstrapFailed { failed: usize, total: usize },
    #[error("the sandwich form needs type1 coefficients; use the bootstrap")]
    SandwichUnsupported,
}

/// Logistic regression of one binary column on others, with intercept.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EstimatingFunctionSpec {
    pub outcome: usize,
    pub predictors: Vec<usize>,
    pub names: Vec<String>,
}

impl EstimatingFunctionSpec {
    pub fn new(ds: &Dataset, outcome: &str, predictors: &[String]) -> Result<Self, EstimateError> {
        let outcome = ds.column_index(outcome)?;
        let predictors = predictors.iter().map(|p| ds.column_index(p)).collect::<Result<Vec<_>, _>>()?;
        let mut names = vec!["(intercept)".to_string()];
        names.extend(predictors.iter().map(|&j| ds.column_names()[j].clone()));
        Ok(EstimatingFunctionSpec { outcome, predictors, names })
    }

    /// First column is the outcome, all others predictors.
    pub fn first_on_rest(ds: &Dataset) -> Self {
        let rest: Vec<String> = ds.column_names()[1..].to_vec();
        Self::new(ds, &ds.column_names()[0].clone(), &rest).expect("columns exist")
    }

    /// `q`.
    pub fn dim(&self) -> usize {
        self.predictors.len() + 1
    }

    /// `(y, (1, x))` from a full-width row.
    pub fn split(&self, row: &[f64]) -> (f64, Vec<f64>) {
        let mut x = Vec::with_capacity(self.dim());
        x.push(1.0);
        x.extend(self.predictors.iter().map(|&j| row[j]));
        (row[self.outcome], x)
    }

    fn check_rows(&self, ds: &Dataset, rows: &[usize]) -> Result<(), EstimateError> {
        for &i in rows {
            for &j in std::iter::once(&self.outcome).chain(&self.predictors) {
                if !ds.is_observed(i, j) {
                    return Err(EstimateError::Unobserved { column: ds.column_names()[j].clone(), row: i });
                }
            }
            let y = ds.get(i, self.outcome).unwrap();
            if y != 0.0 && y != 1.0 {
                return Err(EstimateError::NonBinaryOutcome {
                    column: ds.column_names()[self.outcome].clone(),
                    row: i,
                    value: y,
                });
            }
        }
        Ok(())
    }
}

#[inline]
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `(y - expit(x'theta)) x`.
pub fn psi(theta: &[f64], y: f64, x: &[f64]) -> Vec<f64> {
    let r = y - expit(dot(x, theta));
    x.iter().map(|v| r * v).collect()
}

/// `-p (1 - p) x x'`, row-major `q x q`.
pub fn psi_dot(theta: &[f64], x: &[f64]) -> Vec<f64> {
    let p = expit(dot(x, theta));
    let c = -p * (1.0 - p);
    let q = x.len();
    let mut out = vec![0.0; q * q];
    for a in 0..q {
        for b in 0..q {
            out[a * q + b] = c * x[a] * x[b];
        }
    }
    out
}

/// Rows and their weights for the estimating equation; the normalizer is `n`.
struct Weighted<'a> {
    ys: Vec<f64>,
    xs: Vec<Vec<f64>>,
    w: &'a [f64],
    n: f64,
}

impl Weighted<'_> {
    fn score(&self, theta: &[f64]) -> Vec<f64> {
        let q = theta.len();
        let mut s = vec![0.0; q];
        for ((y, x), w) in self.ys.iter().zip(&self.xs).zip(self.w) {
            let r = w * (y - expit(dot(x, theta)));
            s.iter_mut().zip(x).for_each(|(a, b)| *a += r * b);
        }
        s.iter_mut().for_each(|v| *v /= self.n);
        s
    }

    /// `(1/n) sum w p(1-p) x x'`, the negated derivative of the score.
    fn information(&self, theta: &[f64]) -> DMatrix<f64> {
        let q = theta.len();
        let mut m = DMatrix::zeros(q, q);
        for (x, w) in self.xs.iter().zip(self.w) {
            let p = expit(dot(x, theta));
            let c = w * p * (1.0 - p) / self.n;
            for a in 0..q {
                for b in 0..=a {
                    m[(a, b)] += c * x[a] * x[b];
                }
            }
        }
        for a in 0..q {
            for b in 0..a {
                m[(b, a)] = m[(a, b)];
            }
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NewtonResult {
    pub theta: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub max_score: f64,
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn newton(eq: &Weighted<'_>, q: usize) -> Result<NewtonResult, EstimateError> {
    let mut theta = vec![0.0; q];
    let mut s = eq.score(&theta);
    let mut done = 0;
    for it in 0..=NEWTON_MAX_ITER {
        done = it;
        if max_abs(&s) <= NEWTON_TOL {
            return Ok(NewtonResult { theta, iterations: it, converged: true, max_score: max_abs(&s) });
        }
        if it == NEWTON_MAX_ITER {
            break;
        }
        let info = eq.information(&theta);
        let step = solve_spd(&info, &DVector::from_column_slice(&s))
            .or_else(|| solve_general(&info, &DVector::from_column_slice(&s)))
            .ok_or(EstimateError::Singular)?;
        let base = norm2(&s);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand: Vec<f64> = theta.iter().zip(step.iter()).map(|(a, d)| a + t * d).collect();
            let sc = eq.score(&cand);
            if sc.iter().all(|v| v.is_finite()) && norm2(&sc) < base {
                theta = cand;
                s = sc;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Err(EstimateError::NoConvergence { score: max_abs(&s), iterations: done })
}

/// Solves `(1/N) sum_{cc} w_i psi_theta(L_i) = 0` by damped Newton from zero.
pub fn solve_weighted_ee(ds: &Dataset, ws: &WeightSet, spec: &EstimatingFunctionSpec) -> Result<NewtonResult, EstimateError> {
    if ws.complete_rows.is_empty() {
        return Err(EstimateError::NoCompleteCases);
    }
    spec.check_rows(ds, &ws.complete_rows)?;
    let w = ws.w();
    let eq = weighted(ds, &ws.complete_rows, &w, spec);
    newton(&eq, spec.dim())
}

/// Ordinary (unweighted) logistic MLE on the given fully observed rows.
pub fn logistic_mle(ds: &Dataset, rows: &[usize], spec: &EstimatingFunctionSpec) -> Result<NewtonResult, EstimateError> {
    spec.check_rows(ds, rows)?;
    let w = vec![1.0; rows.len()];
    let eq = weighted(ds, rows, &w, spec);
    newton(&eq, spec.dim())
}

fn weighted<'a>(ds: &Dataset, rows: &[usize], w: &'a [f64], spec: &EstimatingFunctionSpec) -> Weighted<'a> {
    let mut ys = Vec::with_capacity(rows.len());
    let mut xs = Vec::with_capacity(rows.len());
    for &i in rows {
        let (y, x) = spec.split(ds.raw_row(i));
        ys.push(y);
        xs.push(x);
    }
    Weighted { ys, xs, w, n: ds.n_rows() as f64 }
}

/// Coefficients of `E{psi | L^[r], R = r}` on the basis of `r`, fitted by
/// `Q^r`-weighted least squares over complete cases. Returned `K_r x q`.
pub fn estimate_u(
    ds: &Dataset,
    ws: &WeightSet,
    theta: &[f64],
    r: &Pattern,
    basis: &BasisSpec,
    spec: &EstimatingFunctionSpec,
) -> Result<Matrix, EstimateError> {
    let qr = ws.q.get(r).ok_or(EstimateError::RankDeficient(*r))?;
    let k = basis.n_terms();
    let q = spec.dim();
    let mut gram = DMatrix::<f64>::zeros(k, k);
    let mut rhs = DMatrix::<f64>::zeros(k, q);
    let mut phi = vec![0.0; k];
    for (a, &i) in ws.complete_rows.iter().enumerate() {
        let row = ds.complete_row(i);
        basis.evaluate_into(row, &mut phi);
        let (y, x) = spec.split(row);
        let ps = psi(theta, y, &x);
        let w = qr[a];
        for u in 0..k {
            let wu = w * phi[u];
            for v in 0..=u {
                gram[(u, v)] += wu * phi[v];
            }
            for j in 0..q {
                rhs[(u, j)] += wu * ps[j];
            }
        }
    }
    for u in 0..k {
        for v in 0..u {
            gram[(v, u)] = gram[(u, v)];
        }
        gram[(u, u)] += U_RIDGE;
    }
    let chol = gram.cholesky().ok_or(EstimateError::RankDeficient(*r))?;
    let beta = chol.solve(&rhs);
    if beta.iter().any(|v| !v.is_finite()) {
        return Err(EstimateError::RankDeficient(*r));
    }
    let mut out = Matrix::zeros(k, q);
    for u in 0..k {
        for j in 0..q {
            out.row_mut(u)[j] = beta[(u, j)];
        }
    }
    Ok(out)
}

fn u_at(beta: &Matrix, phi: &[f64]) -> Vec<f64> {
    let q = beta.n_cols();
    let mut out = vec![0.0; q];
    for (u, p) in phi.iter().enumerate() {
        out.iter_mut().zip(beta.row(u)).for_each(|(a, b)| *a += p * b);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct InfluencePieces {
    pub u: BTreeMap<Pattern, Matrix>,
    /// Centered influence values, one per data row (`N x q`).
    pub f: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sandwich {
    pub cov: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub influence: InfluencePieces,
}

/// Plug-in sandwich `D^-1 V D^-T / N`.
///
/// Complete rows contribute `psi + sum_{r != 1_d} Q^r (psi - u^r)` to the
/// influence function; a row of pattern `r` contributes `u^r(L^[r])`. The
/// `1_d` term of the full per-pattern form cancels exactly and is omitted.
/// Patterns absent from `ws.q` contribute nothing, so unit weights give the
/// complete-case sandwich.
pub fn sandwich_covariance(
    ds: &Dataset,
    ws: &WeightSet,
    theta: &[f64],
    spec: &EstimatingFunctionSpec,
    bases: &BTreeMap<Pattern, BasisSpec>,
) -> Result<Sandwich, EstimateError> {
    let n = ds.n_rows();
    let q = spec.dim();
    let full = ds.complete_pattern();
    let mut u = BTreeMap::new();
    for r in ws.q.keys().filter(|r| **r != full) {
        let basis = bases.get(r).ok_or(EstimateError::RankDeficient(*r))?;
        u.insert(*r, estimate_u(ds, ws, theta, r, basis, spec)?);
    }
    let w = ws.w();
    let mut d = DMatrix::<f64>::zeros(q, q);
    let mut f = Matrix::zeros(n, q);
    for (a, &i) in ws.complete_rows.iter().enumerate() {
        let row = ds.complete_row(i);
        let (y, x) = spec.split(row);
        let ps = psi(theta, y, &x);
        let pd = psi_dot(theta, &x);
        for j in 0..q * q {
            d[(j / q, j % q)] += w[a] * pd[j];
        }
        let fi = f.row_mut(i);
        fi.copy_from_slice(&ps);
        for (r, beta) in &u {
            let ur = u_at(beta, &bases[r].evaluate(row));
            let qr = ws.q[r][a];
            for j in 0..q {
                fi[j] += qr * (ps[j] - ur[j]);
            }
        }
    }
    d /= n as f64;
    for (r, beta) in &u {
        for &i in ds.rows_of(r) {
            let phi = bases[r].evaluate_row(ds, i).expect("pattern rows observe their basis columns");
            f.row_mut(i).copy_from_slice(&u_at(beta, &phi));
        }
    }
    let mut mean = vec![0.0; q];
    for i in 0..n {
        mean.iter_mut().zip(f.row(i)).for_each(|(m, v)| *m += v / n as f64);
    }
    let mut v = DMatrix::<f64>::zeros(q, q);
    for i in 0..n {
        let fi: Vec<f64> = f.row(i).iter().zip(&mean).map(|(a, m)| a - m).collect();
        f.row_mut(i).copy_from_slice(&fi);
        for a in 0..q {
            for b in 0..q {
                v[(a, b)] += fi[a] * fi[b];
            }
        }
    }
    v /= n as f64;
    let dinv = d.clone().try_inverse().ok_or(EstimateError::SingularD)?;
    let mut cov = &dinv * &v * dinv.transpose() / n as f64;
    let sym = (&cov + cov.transpose()) * 0.5;
    cov = sym;
    Ok(Sandwich { cov, d, v, influence: InfluencePieces { u, f } })
}

/// Two-sided normal p-value for a z statistic.
pub fn p_value(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub method: String,
    pub names: Vec<String>,
    pub theta: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
    pub se: Vec<f64>,
    pub z: Vec<f64>,
    pub p_values: Vec<f64>,
    pub newton_iterations: usize,
    pub converged: bool,
    pub variance: String,
    /// Set when the covariance rests on too few bootstrap replicates.
    pub low_precision: bool,
}

impl FitResult {
    pub fn new(method: &str, names: Vec<String>, newton: &NewtonResult, cov: &DMatrix<f64>, variance: &str) -> Self {
        let q = newton.theta.len();
        let se: Vec<f64> = (0..q).map(|j| cov[(j, j)].max(0.0).sqrt()).collect();
        let z: Vec<f64> = newton.theta.iter().zip(&se).map(|(t, s)| t / s).collect();
        let p_values = z.iter().map(|&z| p_value(z)).collect();
        FitResult {
            method: method.to_string(),
            names,
            theta: newton.theta.clone(),
            cov: (0..q).map(|a| (0..q).map(|b| cov[(a, b)]).collect()).collect(),
            se,
            z,
            p_values,
            newton_iterations: newton.iterations,
            converged: newton.converged,
            variance: variance.to_string(),
            low_precision: false,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }
}

/// Parameters down the side, one estimate/p-value column pair per method.
pub fn format_table(fits: &[FitResult]) -> String {
    let Some(first) = fits.first() else { return String::new() };
    let w0 = first.names.iter().map(|s| s.len()).max().unwrap_or(9).max(9);
    let mut out = format!("{:<w0$}", "Parameter");
    for f in fits {
        out += &format!("  {:>10} {:>8}", f.method, "p-value");
    }
    out.push('\n');
    for (j, name) in first.names.iter().enumerate() {
        out += &format!("{name:<w0$}");
        for f in fits {
            out += &format!("  {:>10.4} {:>8.4}", f.theta[j], f.p_values[j]);
        }
        out.push('\n');
    }
    out
}

/// One full estimation run: weights, Newton solve, covariance.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub method: WeightMethod,
    pub fit: FitOptions,
    pub spec: EstimatingFunctionSpec,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub newton: NewtonResult,
    pub models: ModelMap,
    pub weights: WeightSet,
}

impl Pipeline {
    pub fn run(&self, g: &PatternGraph, ds: &Dataset) -> Result<PipelineOutput, EstimateError> {
        let (models, weights) = fit_weights(self.method, g, ds, &self.fit)?;
        let newton = solve_weighted_ee(ds, &weights, &self.spec)?;
        Ok(PipelineOutput { newton, models, weights })
    }

    /// Bases for the regression step: the fitted models' when present,
    /// otherwise built afresh.
    pub fn bases(
        &self,
        g: &PatternGraph,
        ds: &Dataset,
        models: &ModelMap,
    ) -> Result<BTreeMap<Pattern, BasisSpec>, EstimateError> {
        if models.is_empty() {
            return Ok(weights::build_bases(g, ds, &self.fit.basis)?);
        }
        Ok(models.values().map(|m| (m.pattern, m.spec.clone())).collect())
    }

    /// Estimates with the sandwich covariance.
    pub fn fit_sandwich(&self, g: &PatternGraph, ds: &Dataset) -> Result<(FitResult, PipelineOutput), EstimateError> {
        if !g.all_type1() && self.method != WeightMethod::Cc {
            return Err(EstimateError::SandwichUnsupported);
        }
        let out = self.run(g, ds)?;
        let bases = self.bases(g, ds, &out.models)?;
        let sw = sandwich_covariance(ds, &out.weights, &out.newton.theta, &self.spec, &bases)?;
        let fit = FitResult::new(&self.method.to_string(), self.spec.names.clone(), &out.newton, &sw.cov, "sandwich");
        Ok((fit, out))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapResult {
    pub cov: DMatrix<f64>,
    pub n_ok: usize,
    pub n_failed: usize,
    pub low_precision: bool,
}

/// Nonparametric bootstrap of the whole pipeline with each model's penalty
/// level held at `lambdas` (typically from the original fit).
pub fn bootstrap_covariance(
    ds: &Dataset,
    g: &PatternGraph,
    pipeline: &Pipeline,
    models: &ModelMap,
    b: usize,
    seed: u64,
    exec: Exec,
) -> Result<BootstrapResult, EstimateError> {
    if b < 2 {
        return Err(EstimateError::TooFewReplicates(b));
    }
    let mut fixed = pipeline.clone();
    if !models.is_empty() {
        fixed.fit.lambda = lambdas_of(models);
    }
    fixed.fit.exec = Exec::Sequential;
    let n = ds.n_rows();
    let thetas: Vec<Option<Vec<f64>>> = par::map_range(exec, b, |rep| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(rep as u64 + 1);
        let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let boot = ds.select_rows(&idx);
        match fixed.run(g, &boot) {
            Ok(out) => Some(out.newton.theta),
            Err(e) => {
                log::debug!("bootstrap replicate {rep} failed: {e}");
                None
            }
        }
    });
    let ok: Vec<Vec<f64>> = thetas.iter().flatten().cloned().collect();
    let failed = b - ok.len();
    if failed * 5 > b || ok.len() < 2 {
        return Err(EstimateError::BootstrapFailed { failed, total: b });
    }
    let q = pipeline.spec.dim();
    let m = ok.len() as f64;
    let mean: Vec<f64> = (0..q).map(|j| ok.iter().map(|t| t[j]).sum::<f64>() / m).collect();
    let mut cov = DMatrix::<f64>::zeros(q, q);
    for t in &ok {
        for a in 0..q {
            for c in 0..q {
                cov[(a, c)] += (t[a] - mean[a]) * (t[c] - mean[c]);
            }
        }
    }
    cov /= m - 1.0;
    Ok(BootstrapResult { cov, n_ok: ok.len(), n_failed: failed, low_precision: b < MIN_BOOTSTRAP })
}
