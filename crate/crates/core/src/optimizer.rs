//! Penalized balancing losses and their minimization.
//!
//! Every loss is an average over rows split into a *source* group (rows the
//! odds model reweights) and a *target* group (rows of the pattern being
//! modeled), normalized by the total sample size `N`:
//!
//! * tailored: `src: exp(eta)`, `tgt: -eta`
//! * entropy: `src: log(1 + exp(eta))`, `tgt: log(1 + exp(-eta))`
//! * sequential: `src: m_i * exp(eta)`, `tgt: -eta`
//!
//! with `eta = phi_i . alpha`. The weighted L1 penalty `lambda * sum t_k |alpha_k|`
//! is handled by the proximal step of an accelerated proximal-gradient solver.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{dot, Matrix};
use crate::par::{self, Exec};

/// Linear predictors above this are continued linearly in the exponential
/// losses, so `exp` never overflows.
pub const ETA_CAP: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Entropy,
    Tailored,
    Sequential,
}

#[derive(Debug, Error, PartialEq)]
pub enum OptError {
    #[error("design has {design} columns but {t} penalty weights")]
    ShapeMismatch { design: usize, t: usize },
    #[error("{0} rows but {1} role/multiplier entries")]
    RowMismatch(usize, usize),
    #[error("row {0} has a negative or non-finite multiplier")]
    BadMultiplier(usize),
    #[error("target row {0} must have multiplier 1")]
    TargetMultiplier(usize),
    #[error("problem has no source rows")]
    NoSource,
    #[error("problem has no target rows")]
    NoTarget,
    #[error("non-finite objective at iteration {0}")]
    NonFinite(usize),
    #[error("lambda must be finite and nonnegative, got {0}")]
    BadLambda(f64),
    #[error("cross-validation needs at least 2 folds, got {0}")]
    TooFewFolds(usize),
    #[error("empty lambda grid")]
    EmptyGrid,
    #[error("fold {fold} has no {role} rows ({available} available for {k} folds)")]
    EmptyFold { fold: usize, role: &'static str, available: usize, k: usize },
}

#[derive(Debug, Clone)]
pub struct LossProblem {
    pub kind: LossKind,
    pub design: Matrix,
    /// `true` for target rows (pattern `r`), `false` for source rows.
    pub target: Vec<bool>,
    /// Per-row factor on the source term; 1 on target rows.
    pub multiplier: Vec<f64>,
    pub t: Vec<f64>,
    /// The `1/N` normalizer's `N`.
    pub n_total: f64,
    // column-major copy of `design` with each column divided by its RMS
    cols: Vec<f64>,
    scale: Vec<f64>,
}

impl LossProblem {
    pub fn new(
        kind: LossKind,
        design: Matrix,
        target: Vec<bool>,
        multiplier: Vec<f64>,
        t: Vec<f64>,
        n_total: f64,
    ) -> Result<Self, OptError> {
        if design.n_cols() != t.len() {
            return Err(OptError::ShapeMismatch { design: design.n_cols(), t: t.len() });
        }
        if target.len() != design.n_rows() || multiplier.len() != design.n_rows() {
            return Err(OptError::RowMismatch(design.n_rows(), target.len().min(multiplier.len())));
        }
        for (i, (&m, &tg)) in multiplier.iter().zip(&target).enumerate() {
            if !(m.is_finite() && m >= 0.0) {
                return Err(OptError::BadMultiplier(i));
            }
            if tg && m != 1.0 {
                return Err(OptError::TargetMultiplier(i));
            }
        }
        if !target.iter().any(|&x| x) {
            return Err(OptError::NoTarget);
        }
        if !target.iter().zip(&multiplier).any(|(&tg, &m)| !tg && m > 0.0) {
            return Err(OptError::NoSource);
        }
        let (cols, scale) = column_major(&design);
        Ok(LossProblem { kind, design, target, multiplier, t, n_total, cols, scale })
    }

    /// Source rows all have multiplier 1 (the entropy and tailored losses).
    pub fn unit(kind: LossKind, design: Matrix, target: Vec<bool>, t: Vec<f64>, n_total: f64) -> Result<Self, OptError> {
        let m = vec![1.0; target.len()];
        Self::new(kind, design, target, m, t, n_total)
    }

    pub fn n_terms(&self) -> usize {
        self.t.len()
    }

    pub fn n_rows(&self) -> usize {
        self.target.len()
    }

    fn subset(&self, rows: &[usize], n_total: f64) -> LossProblem {
        let design = self.design.select_rows(rows);
        let (cols, scale) = column_major(&design);
        LossProblem {
            kind: self.kind,
            design,
            target: rows.iter().map(|&i| self.target[i]).collect(),
            multiplier: rows.iter().map(|&i| self.multiplier[i]).collect(),
            t: self.t.clone(),
            n_total,
            cols,
            scale,
        }
    }

    fn col(&self, k: usize) -> &[f64] {
        let n = self.n_rows();
        &self.cols[k * n..(k + 1) * n]
    }

    /// Linear predictors `Phi alpha`, skipping zero coefficients.
    pub fn predictor(&self, alpha: &[f64], eta: &mut [f64]) {
        let beta: Vec<f64> = alpha.iter().zip(&self.scale).map(|(a, s)| a * s).collect();
        self.predictor_scaled(&beta, eta);
    }

    // `beta_k = alpha_k * scale_k` are coefficients on the scaled columns
    fn predictor_scaled(&self, beta: &[f64], eta: &mut [f64]) {
        eta.iter_mut().for_each(|v| *v = 0.0);
        for (k, &b) in beta.iter().enumerate() {
            if b != 0.0 {
                eta.iter_mut().zip(self.col(k)).for_each(|(e, x)| *e += b * x);
            }
        }
    }

    /// Loss from the linear predictors; with `grad`, also the gradient in
    /// `alpha`.
    pub fn eval_eta(&self, eta: &[f64], grad: Option<&mut [f64]>) -> f64 {
        match grad {
            None => self.eval_eta_scaled(eta, None),
            Some(g) => {
                let v = self.eval_eta_scaled(eta, Some(&mut *g));
                g.iter_mut().zip(&self.scale).for_each(|(x, s)| *x *= s);
                v
            }
        }
    }

    // gradient in `beta`
    fn eval_eta_scaled(&self, eta: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let want = grad.is_some();
        let mut value = 0.0;
        let mut dl = vec![0.0; if want { eta.len() } else { 0 }];
        for (i, &e) in eta.iter().enumerate() {
            let m = self.multiplier[i];
            let tgt = self.target[i];
            let (v, d) = if !tgt && m == 0.0 {
                (0.0, 0.0)
            } else {
                match self.kind {
                    LossKind::Tailored | LossKind::Sequential => {
                        if tgt {
                            (-e, -1.0)
                        } else {
                            let (x, dx) = capped_exp(e);
                            (m * x, m * dx)
                        }
                    }
                    LossKind::Entropy => {
                        let s = if tgt { -e } else { e };
                        let sign = if tgt { -1.0 } else { 1.0 };
                        (m * softplus(s), m * sign * sigmoid(s))
                    }
                }
            };
            value += v;
            if want {
                dl[i] = d;
            }
        }
        let inv = 1.0 / self.n_total;
        if let Some(g) = grad {
            for (k, gk) in g.iter_mut().enumerate() {
                *gk = dot(self.col(k), &dl) * inv;
            }
        }
        value * inv
    }

    /// Unpenalized loss; writes the gradient when `grad` is given.
    pub fn eval(&self, alpha: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let mut eta = vec![0.0; self.n_rows()];
        self.predictor(alpha, &mut eta);
        self.eval_eta(&eta, grad)
    }

    pub fn penalty(&self, alpha: &[f64], lambda: f64) -> f64 {
        lambda * alpha.iter().zip(&self.t).map(|(a, t)| t * a.abs()).sum::<f64>()
    }

    pub fn objective(&self, alpha: &[f64], lambda: f64) -> f64 {
        self.eval(alpha, None) + self.penalty(alpha, lambda)
    }

    /// Largest linear predictor over rows that enter the loss.
    pub fn max_eta(&self, alpha: &[f64]) -> f64 {
        (0..self.n_rows())
            .map(|i| dot(self.design.row(i), alpha))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Per-term `(sum over targets of phi_k, sum over sources of m * odds * phi_k)`,
    /// both divided by `N`.
    pub fn balance_sums(&self, alpha: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let k = self.n_terms();
        let mut tgt = vec![0.0; k];
        let mut src = vec![0.0; k];
        for i in 0..self.n_rows() {
            let x = self.design.row(i);
            if self.target[i] {
                tgt.iter_mut().zip(x).for_each(|(a, b)| *a += b);
            } else {
                let w = self.multiplier[i] * capped_exp(dot(x, alpha)).0;
                src.iter_mut().zip(x).for_each(|(a, b)| *a += w * b);
            }
        }
        tgt.iter_mut().chain(src.iter_mut()).for_each(|v| *v /= self.n_total);
        (tgt, src)
    }
}

fn column_major(m: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let (n, k) = (m.n_rows(), m.n_cols());
    let mut cols = vec![0.0; n * k];
    for i in 0..n {
        for (j, v) in m.row(i).iter().enumerate() {
            cols[j * n + i] = *v;
        }
    }
    let mut scale = vec![1.0; k];
    for j in 0..k {
        let c = &mut cols[j * n..(j + 1) * n];
        let rms = (c.iter().map(|v| v * v).sum::<f64>() / n.max(1) as f64).sqrt();
        if rms > 0.0 && rms.is_finite() {
            c.iter_mut().for_each(|v| *v /= rms);
            scale[j] = rms;
        }
    }
    (cols, scale)
}

/// `exp(eta)` for `eta <= ETA_CAP`, its tangent line beyond. Returns value
/// and derivative.
#[inline]
pub fn capped_exp(eta: f64) -> (f64, f64) {
    if eta <= ETA_CAP {
        let e = eta.exp();
        (e, e)
    } else {
        let e = ETA_CAP.exp();
        (e * (1.0 + eta - ETA_CAP), e)
    }
}

/// Odds `exp(eta)` with the predictor capped at [`ETA_CAP`].
#[inline]
pub fn odds(eta: f64) -> f64 {
    eta.min(ETA_CAP).exp()
}

#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Value and gradient of the unpenalized loss.
pub fn loss_value_grad(p: &LossProblem, alpha: &[f64]) -> (f64, Vec<f64>) {
    let mut g = vec![0.0; p.n_terms()];
    let v = p.eval(alpha, Some(&mut g));
    (v, g)
}

/// Componentwise soft-thresholding at `step * lambda * t_k`.
pub fn prox_l1(v: &[f64], step: f64, lambda: f64, t: &[f64]) -> Vec<f64> {
    assert!(step > 0.0, "step must be positive");
    let mut out = v.to_vec();
    prox_l1_in_place(&mut out, step * lambda, t);
    out
}

fn prox_l1_in_place(v: &mut [f64], scale: f64, t: &[f64]) {
    for (x, &tk) in v.iter_mut().zip(t) {
        let thr = scale * tk;
        if thr > 0.0 {
            *x = x.signum() * (x.abs() - thr).max(0.0);
        }
    }
}

/// Max over coordinates of the L1 subgradient slack at `alpha`.
pub fn kkt_residual(grad: &[f64], alpha: &[f64], lambda: f64, t: &[f64]) -> f64 {
    grad.iter()
        .zip(alpha)
        .zip(t)
        .map(|((&g, &a), &tk)| {
            if a != 0.0 {
                (g + lambda * tk * a.signum()).abs()
            } else {
                (g.abs() - lambda * tk).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Relative iterate change that counts as stationary.
    pub tol: f64,
    pub max_iter: usize,
    /// KKT residual required to report convergence.
    pub kkt_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { tol: 1e-8, max_iter: 5000, kkt_tol: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub alpha: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub kkt_residual: f64,
    /// Some linear predictor exceeded [`ETA_CAP`] at the solution.
    pub capped: bool,
    /// Penalized objective after every accepted step.
    pub trace: Vec<f64>,
}

/// Accelerated proximal gradient (FISTA) with backtracking, started at zero.
pub fn minimize(p: &LossProblem, lambda: f64, opts: &SolverOptions) -> Result<SolveResult, OptError> {
    minimize_from(p, lambda, &vec![0.0; p.n_terms()], opts)
}

/// [`minimize`] from a given starting point.
///
/// Momentum is reset whenever a step would raise the penalized objective or
/// the momentum direction opposes the latest step, so accepted objectives are
/// non-increasing.
pub fn minimize_from(
    p: &LossProblem,
    lambda: f64,
    start: &[f64],
    opts: &SolverOptions,
) -> Result<SolveResult, OptError> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(OptError::BadLambda(lambda));
    }
    // iterate on the RMS-scaled columns; steps and KKT are judged in alpha
    let k = p.n_terms();
    let n = p.n_rows();
    let s = &p.scale;
    let t: Vec<f64> = p.t.iter().zip(s).map(|(t, s)| t / s).collect();
    let mut x: Vec<f64> = start.iter().zip(s).map(|(a, s)| a * s).collect();
    let mut eta_x = vec![0.0; n];
    p.predictor_scaled(&x, &mut eta_x);
    let mut y = x.clone();
    let mut eta_y = eta_x.clone();
    let mut z = vec![0.0; k];
    let mut eta_z = vec![0.0; n];
    let mut gy = vec![0.0; k];
    let pen = |b: &[f64]| lambda * b.iter().zip(&t).map(|(b, t)| t * b.abs()).sum::<f64>();
    let mut big_f = p.eval_eta_scaled(&eta_x, None) + pen(&x);
    if !big_f.is_finite() {
        return Err(OptError::NonFinite(0));
    }
    let mut lip = 1.0f64;
    let mut theta = 1.0f64;
    let mut trace = vec![big_f];
    let mut converged = false;
    let mut iterations = 0;
    // y == x, so a rejected step cannot be fixed by dropping momentum
    let mut y_is_x = true;

    for it in 1..=opts.max_iter {
        iterations = it;
        let fy = p.eval_eta_scaled(&eta_y, Some(&mut gy));
        if !fy.is_finite() {
            return Err(OptError::NonFinite(it));
        }
        lip = (lip * 0.9).max(1e-12);
        let fz = loop {
            for j in 0..k {
                z[j] = y[j] - gy[j] / lip;
            }
            prox_l1_in_place(&mut z, lambda / lip, &t);
            p.predictor_scaled(&z, &mut eta_z);
            let fz = p.eval_eta_scaled(&eta_z, None);
            let mut lin = 0.0;
            let mut sq = 0.0;
            for j in 0..k {
                let d = z[j] - y[j];
                lin += gy[j] * d;
                sq += d * d;
            }
            if fz.is_finite() && fz <= fy + lin + 0.5 * lip * sq + 1e-14 * fy.abs().max(1.0) {
                break fz;
            }
            lip *= 2.0;
            if lip > 1e30 {
                return Err(OptError::NonFinite(it));
            }
        };
        let big_fz = fz + pen(&z);
        if big_fz > big_f + 1e-12 * big_f.abs().max(1.0) {
            if y_is_x {
                // a proximal step from x itself only fails to descend through
                // rounding; nothing more to gain
                break;
            }
            theta = 1.0;
            y.copy_from_slice(&x);
            eta_y.copy_from_slice(&eta_x);
            y_is_x = true;
            continue;
        }
        let mut size = 0.0f64;
        let mut step = 0.0f64;
        let mut restart_dot = 0.0;
        for j in 0..k {
            let d = z[j] - x[j];
            size = size.max((x[j] / s[j]).abs());
            step = step.max((d / s[j]).abs());
            restart_dot += (y[j] - z[j]) * d;
        }
        let theta_next = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
        let restart = restart_dot > 0.0;
        let beta = if restart { 0.0 } else { (theta - 1.0) / theta_next };
        for j in 0..k {
            y[j] = z[j] + beta * (z[j] - x[j]);
        }
        for i in 0..n {
            eta_y[i] = eta_z[i] + beta * (eta_z[i] - eta_x[i]);
        }
        std::mem::swap(&mut x, &mut z);
        std::mem::swap(&mut eta_x, &mut eta_z);
        theta = if restart { 1.0 } else { theta_next };
        y_is_x = beta == 0.0;
        big_f = big_fz;
        trace.push(big_f);

        if step / size.max(1.0) < opts.tol {
            let alpha: Vec<f64> = x.iter().zip(s).map(|(b, s)| b / s).collect();
            let mut g = vec![0.0; k];
            p.eval_eta(&eta_x, Some(&mut g));
            if kkt_residual(&g, &alpha, lambda, &p.t) <= opts.kkt_tol {
                converged = true;
                break;
            }
            theta = 1.0;
            y.copy_from_slice(&x);
            eta_y.copy_from_slice(&eta_x);
            y_is_x = true;
        }
    }
    let alpha: Vec<f64> = x.iter().zip(s).map(|(b, s)| b / s).collect();
    let mut g = vec![0.0; k];
    p.eval(&alpha, Some(&mut g));
    let kkt = kkt_residual(&g, &alpha, lambda, &p.t);
    converged = converged || kkt <= opts.kkt_tol && iterations < opts.max_iter;
    let capped = p.max_eta(&alpha) > ETA_CAP;
    if capped {
        log::warn!("linear predictor exceeded {ETA_CAP} at the solution; odds are capped");
    }
    let objective = p.objective(&alpha, lambda);
    Ok(SolveResult { alpha, objective, iterations, converged, kkt_residual: kkt, capped, trace })
}

/// Smallest `lambda` at which every penalized coefficient is zero.
pub fn lambda_max(p: &LossProblem, opts: &SolverOptions) -> Result<f64, OptError> {
    let restricted = minimize(p, 1e30, opts)?;
    let (_, g) = loss_value_grad(p, &restricted.alpha);
    Ok(g.iter()
        .zip(&p.t)
        .filter(|(_, &t)| t > 0.0)
        .map(|(g, t)| g.abs() / t)
        .fold(0.0, f64::max))
}

/// `n` log-spaced values from `hi` down to `hi * min_ratio`.
pub fn log_grid(hi: f64, min_ratio: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![hi];
    }
    let (a, b) = (hi.ln(), (hi * min_ratio).ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvOptions {
    pub k_folds: usize,
    pub grid_size: usize,
    /// Smallest grid value as a fraction of `lambda_max`.
    pub min_ratio: f64,
    pub seed: u64,
    /// Stop walking down the grid once the held-out loss has not improved
    /// for this many consecutive values. `None` walks the whole grid.
    pub patience: Option<usize>,
}

impl Default for CvOptions {
    fn default() -> Self {
        CvOptions { k_folds: 5, grid_size: 40, min_ratio: 1e-4, seed: 0x5eed, patience: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvRow {
    pub lambda: f64,
    pub mean_loss: f64,
    pub fold_losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvResult {
    pub lambda: f64,
    pub table: Vec<CvRow>,
}

/// Role-stratified fold labels: each role's rows are shuffled and dealt
/// round-robin.
pub fn stratified_folds(target: &[bool], k: usize, seed: u64) -> Result<Vec<usize>, OptError> {
    if k < 2 {
        return Err(OptError::TooFewFolds(k));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold = vec![0; target.len()];
    for (role, name) in [(false, "source"), (true, "target")] {
        let mut idx: Vec<usize> = (0..target.len()).filter(|&i| target[i] == role).collect();
        if idx.len() < k {
            return Err(OptError::EmptyFold { fold: idx.len(), role: name, available: idx.len(), k });
        }
        idx.shuffle(&mut rng);
        for (pos, i) in idx.into_iter().enumerate() {
            fold[i] = pos % k;
        }
    }
    Ok(fold)
}

/// K-fold cross-validation of `lambda` by held-out unpenalized loss.
///
/// `grid` defaults to a log-spaced path from `lambda_max` down. Each fold
/// walks the grid from the largest value, warm-starting every solve at the
/// previous solution. Ties go to the larger `lambda`.
pub fn cross_validate(
    p: &LossProblem,
    grid: Option<&[f64]>,
    cv: &CvOptions,
    solver: &SolverOptions,
    exec: Exec,
) -> Result<CvResult, OptError> {
    let mut grid: Vec<f64> = match grid {
        Some(g) => g.to_vec(),
        None => {
            let hi = lambda_max(p, solver)?;
            if hi > 0.0 {
                log_grid(hi, cv.min_ratio, cv.grid_size.max(1))
            } else {
                vec![0.0]
            }
        }
    };
    if grid.is_empty() {
        return Err(OptError::EmptyGrid);
    }
    if grid.len() == 1 {
        return Ok(CvResult { lambda: grid[0], table: vec![CvRow { lambda: grid[0], mean_loss: f64::NAN, fold_losses: vec![] }] });
    }
    grid.sort_by(|a, b| b.total_cmp(a));
    let fold = stratified_folds(&p.target, cv.k_folds, cv.seed)?;
    let n = p.n_rows() as f64;
    let folds: Vec<(LossProblem, LossProblem)> = (0..cv.k_folds)
        .map(|f| {
            let train: Vec<usize> = (0..p.n_rows()).filter(|&i| fold[i] != f).collect();
            let hold: Vec<usize> = (0..p.n_rows()).filter(|&i| fold[i] == f).collect();
            let tr = p.subset(&train, p.n_total * train.len() as f64 / n);
            let ho = p.subset(&hold, p.n_total * hold.len() as f64 / n);
            (tr, ho)
        })
        .collect();
    let mut starts: Vec<Vec<f64>> = vec![vec![0.0; p.n_terms()]; cv.k_folds];
    let mut table: Vec<CvRow> = Vec::with_capacity(grid.len());
    let mut best_mean = f64::INFINITY;
    let mut since_best = 0;
    for &lambda in &grid {
        let fits: Vec<Result<(Vec<f64>, f64), OptError>> = par::map_range(exec, cv.k_folds, |f| {
            let (tr, ho) = &folds[f];
            let fit = minimize_from(tr, lambda, &starts[f], solver)?;
            let loss = ho.eval(&fit.alpha, None);
            Ok((fit.alpha, loss))
        });
        let mut fold_losses = Vec::with_capacity(cv.k_folds);
        for (f, r) in fits.into_iter().enumerate() {
            let (alpha, loss) = r?;
            starts[f] = alpha;
            fold_losses.push(loss);
        }
        let mean_loss = fold_losses.iter().sum::<f64>() / fold_losses.len() as f64;
        table.push(CvRow { lambda, mean_loss, fold_losses });
        if mean_loss < best_mean {
            best_mean = mean_loss;
            since_best = 0;
        } else {
            since_best += 1;
        }
        if cv.patience.is_some_and(|pat| since_best >= pat) {
            break;
        }
    }
    // grid is descending, so the first minimum is the largest lambda among ties
    let mut best = 0;
    for (g, row) in table.iter().enumerate() {
        if row.mean_loss < table[best].mean_loss || !table[best].mean_loss.is_finite() {
            best = g;
        }
    }
    Ok(CvResult { lambda: table[best].lambda, table })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(kind: LossKind) -> LossProblem {
        let rows: Vec<Vec<f64>> = (0..8).map(|i| vec![1.0, (i as f64) / 4.0 - 1.0]).collect();
        let target: Vec<bool> = (0..8).map(|i| i % 2 == 0).collect();
        LossProblem::unit(kind, Matrix::from_rows(&rows), target, vec![0.0, 1.0], 8.0).unwrap()
    }

    #[test]
    fn values_at_zero() {
        let (v, _) = loss_value_grad(&toy(LossKind::Tailored), &[0.0, 0.0]);
        assert!((v - 0.5).abs() < 1e-15);
        let (v, _) = loss_value_grad(&toy(LossKind::Entropy), &[0.0, 0.0]);
        assert!((v - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn prox_examples() {
        assert_eq!(prox_l1(&[3.0, -0.5], 1.0, 1.0, &[1.0, 1.0]), vec![2.0, 0.0]);
        assert_eq!(prox_l1(&[3.0, -0.5], 0.3, 0.0, &[1.0, 1.0]), vec![3.0, -0.5]);
        assert_eq!(prox_l1(&[3.0, -0.5], 1.0, 1e9, &[0.0, 1.0]), vec![3.0, 0.0]);
    }

    #[test]
    fn huge_lambda_zeroes_penalized() {
        let p = toy(LossKind::Tailored);
        let r = minimize(&p, 1e6, &SolverOptions::default()).unwrap();
        assert_eq!(r.alpha[1], 0.0);
        // intercept-only tailored optimum: n_src * exp(a) = n_tgt
        assert!(r.alpha[0].abs() < 1e-7);
        assert!(r.converged);
    }

    #[test]
    fn cap_is_continuous_and_convex() {
        let (a, _) = capped_exp(ETA_CAP);
        let (b, db) = capped_exp(ETA_CAP + 1e-9);
        assert!((b - a) / a < 1e-8);
        assert_eq!(db, ETA_CAP.exp());
        assert!(odds(1e6).is_finite());
    }

    #[test]
    fn validation_errors() {
        let m = Matrix::from_rows(&[vec![1.0], vec![1.0]]);
        assert_eq!(
            LossProblem::unit(LossKind::Tailored, m.clone(), vec![false, false], vec![0.0], 2.0).unwrap_err(),
            OptError::NoTarget
        );
        assert_eq!(
            LossProblem::new(LossKind::Sequential, m.clone(), vec![true, false], vec![2.0, 1.0], vec![0.0], 2.0)
                .unwrap_err(),
            OptError::TargetMultiplier(0)
        );
        assert_eq!(
            LossProblem::new(LossKind::Sequential, m, vec![true, false], vec![1.0, -1.0], vec![0.0], 2.0).unwrap_err(),
            OptError::BadMultiplier(1)
        );
    }

    #[test]
    fn single_value_grid() {
        let p = toy(LossKind::Tailored);
        let r = cross_validate(&p, Some(&[0.25]), &CvOptions::default(), &SolverOptions::default(), Exec::Sequential)
            .unwrap();
        assert_eq!(r.lambda, 0.25);
    }

    #[test]
    fn folds_need_enough_targets() {
        let target = vec![true, false, false, false, false, false];
        assert!(matches!(stratified_folds(&target, 2, 1), Err(OptError::EmptyFold { role: "target", .. })));
    }
}
