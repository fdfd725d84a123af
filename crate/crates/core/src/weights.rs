//! Propensity-odds models per pattern and the complete-case weights built
//! from them.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::{build_basis, BasisConfig, BasisError, BasisSpec};
use crate::dataset::{Dataset, DEFAULT_OVERLAP_FLOOR};
use crate::linalg::{dot, Matrix};
use crate::optimizer::{
    self, cross_validate, minimize, CvOptions, LossKind, LossProblem, OptError, SolverOptions,
};
use crate::par::{self, Exec};
use crate::pattern_graph::{CoeffType, GraphError, Pattern, PatternGraph};

#[derive(Debug, Error)]
pub enum WeightError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("data has {data} columns but the graph has dimension {graph}")]
    DimensionMismatch { data: usize, graph: usize },
    #[error("data do not fit the graph: {0}")]
    DataGraph(String),
    #[error("no observations for pattern {0}")]
    NoObservations(Pattern),
    #[error("no rows in the parent set of pattern {0}")]
    EmptyParents(Pattern),
    #[error("basis for pattern {pattern}: {source}")]
    Basis { pattern: Pattern, source: BasisError },
    #[error("odds model {key}: {source}")]
    Opt { key: ModelKey, source: OptError },
    #[error("no fitted model for {0}")]
    MissingModel(ModelKey),
    #[error("sequential estimation needs type1 coefficients everywhere; node {0} is {1:?}")]
    Unsupported(Pattern, CoeffType),
    #[error("true weights come from the data generator and cannot be fitted")]
    NotFittable,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Identifies an odds model: `O^r` when `parent` is `None`, the pairwise
/// `O^{s,r}` otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ModelKey {
    pub node: Pattern,
    pub parent: Option<Pattern>,
}

impl ModelKey {
    pub fn node(node: Pattern) -> Self {
        ModelKey { node, parent: None }
    }

    pub fn pair(parent: Pattern, node: Pattern) -> Self {
        ModelKey { node, parent: Some(parent) }
    }
}

impl fmt::Display for ModelKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.parent {
            None => write!(f, "{}", self.node),
            Some(s) => write!(f, "{}->{}", s, self.node),
        }
    }
}

/// How each model's penalty level is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LambdaPolicy {
    /// Cross-validated per model.
    #[default]
    Cv,
    /// One value for every model.
    Fixed(f64),
    /// Explicit value per model, e.g. replayed from an earlier fit.
    #[serde(skip)]
    PerModel(BTreeMap<ModelKey, f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct FitOptions {
    pub basis: BasisConfig,
    pub solver: SolverOptions,
    pub cv: CvOptions,
    pub lambda: LambdaPolicy,
    #[serde(skip)]
    pub exec: Exec,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OddsModel {
    pub pattern: Pattern,
    pub pairwise_parent: Option<Pattern>,
    pub spec: BasisSpec,
    pub alpha: Vec<f64>,
    pub loss_kind: LossKind,
    pub lambda_used: f64,
    pub converged: bool,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub capped: bool,
}

impl OddsModel {
    pub fn key(&self) -> ModelKey {
        ModelKey { node: self.pattern, parent: self.pairwise_parent }
    }

    /// Log-odds on a full-width row.
    pub fn eta(&self, row: &[f64]) -> f64 {
        dot(&self.spec.evaluate(row), &self.alpha)
    }

    pub fn odds(&self, row: &[f64]) -> f64 {
        optimizer::odds(self.eta(row))
    }
}

pub type ModelMap = BTreeMap<ModelKey, OddsModel>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightMethod {
    /// Unit weights on complete cases.
    Cc,
    Entropy,
    /// Local fits with the tailored loss.
    Local,
    #[serde(rename = "seq", alias = "sequential")]
    Sequential,
    /// Weights known from the data generator.
    True,
}

impl fmt::Display for WeightMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            WeightMethod::Cc => "cc",
            WeightMethod::Entropy => "entropy",
            WeightMethod::Local => "local",
            WeightMethod::Sequential => "seq",
            WeightMethod::True => "true",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for WeightMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "cc" => Ok(WeightMethod::Cc),
            "entropy" => Ok(WeightMethod::Entropy),
            "local" => Ok(WeightMethod::Local),
            "seq" | "sequential" => Ok(WeightMethod::Sequential),
            "true" => Ok(WeightMethod::True),
            other => Err(format!("unknown method {other:?} (expected cc, entropy, local or seq)")),
        }
    }
}

/// `Q^r` on complete-case rows. The weights are always assembled from `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet {
    pub complete_rows: Vec<usize>,
    /// Includes the complete pattern with all ones.
    pub q: BTreeMap<Pattern, Vec<f64>>,
    pub method: WeightMethod,
}

impl WeightSet {
    /// Weights that are 1 on every complete case.
    pub fn unit(ds: &Dataset) -> Self {
        let cc = ds.complete_rows().to_vec();
        let q = BTreeMap::from([(ds.complete_pattern(), vec![1.0; cc.len()])]);
        WeightSet { complete_rows: cc, q, method: WeightMethod::Cc }
    }

    /// `w_i = sum_r Q^r_i`, aligned with `complete_rows`.
    pub fn w(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.complete_rows.len()];
        for col in self.q.values() {
            w.iter_mut().zip(col).for_each(|(a, b)| *a += b);
        }
        w
    }

    pub fn max_w(&self) -> f64 {
        self.w().into_iter().fold(0.0, f64::max)
    }

    /// Writes `row_id, pattern, Q_<r>..., w`; `row_id` is the 0-based data row.
    pub fn write_csv(&self, ds: &Dataset, out: impl Write) -> Result<(), WeightError> {
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec!["row_id".to_string(), "pattern".to_string()];
        header.extend(self.q.keys().map(|r| format!("Q_{r}")));
        header.push("w".into());
        wtr.write_record(&header)?;
        let w = self.w();
        for (a, &i) in self.complete_rows.iter().enumerate() {
            let mut rec = vec![i.to_string(), ds.row_pattern(i).to_string()];
            rec.extend(self.q.values().map(|col| format!("{:?}", col[a])));
            rec.push(format!("{:?}", w[a]));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Type 1 recursion on a single row: `Q^r = O^r * sum_{s in Pa(r)} Q^s`.
pub fn recursive_q(g: &PatternGraph, odds: &BTreeMap<Pattern, f64>) -> Result<BTreeMap<Pattern, f64>, GraphError> {
    let mut q = BTreeMap::from([(g.source(), 1.0)]);
    for r in g.processing_order() {
        let parents = g.parents(&r)?;
        let sum: f64 = parents.iter().map(|s| q[s]).sum();
        let o = *odds.get(&r).ok_or(GraphError::UnknownNode(r))?;
        q.insert(r, o * sum);
    }
    Ok(q)
}

fn check_inputs(g: &PatternGraph, ds: &Dataset) -> Result<(), WeightError> {
    if g.dim() != ds.n_cols() {
        return Err(WeightError::DimensionMismatch { data: ds.n_cols(), graph: g.dim() });
    }
    g.ensure_regular()?;
    let check = ds
        .check_against_graph(g, DEFAULT_OVERLAP_FLOOR)
        .map_err(|e| WeightError::DataGraph(e.to_string()))?;
    if let Some(f) = check.fatal.first() {
        return Err(WeightError::DataGraph(f.to_string()));
    }
    for w in &check.warnings {
        log::warn!("{w}");
    }
    for r in g.processing_order() {
        if ds.rows_of(&r).is_empty() {
            return Err(WeightError::NoObservations(r));
        }
    }
    Ok(())
}

fn model_seed(base: u64, key: &ModelKey) -> u64 {
    let p = key.parent.map_or(0, |s| s.bits().iter().fold(0u64, |a, &b| a << 1 | b as u64));
    let r = key.node.bits().iter().fold(0u64, |a, &b| a << 1 | b as u64);
    base ^ r.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ p.wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
}

/// Picks the model's penalty level per policy and solves at it.
fn solve_model(
    opts: &FitOptions,
    key: &ModelKey,
    problem: &LossProblem,
) -> Result<(f64, optimizer::SolveResult), WeightError> {
    let wrap = |source| WeightError::Opt { key: *key, source };
    let lambda = match &opts.lambda {
        LambdaPolicy::Fixed(l) => *l,
        LambdaPolicy::PerModel(m) => *m.get(key).ok_or(WeightError::MissingModel(*key))?,
        LambdaPolicy::Cv => {
            let cv = CvOptions { seed: model_seed(opts.cv.seed, key), ..opts.cv };
            cross_validate(problem, None, &cv, &opts.solver, opts.exec).map_err(wrap)?.lambda
        }
    };
    let res = minimize(problem, lambda, &opts.solver).map_err(wrap)?;
    if !res.converged {
        log::warn!("odds model {key} stopped after {} iterations (kkt {:.2e})", res.iterations, res.kkt_residual);
    }
    Ok((lambda, res))
}

fn odds_model(key: ModelKey, spec: BasisSpec, kind: LossKind, lambda: f64, res: optimizer::SolveResult) -> OddsModel {
    OddsModel {
        pattern: key.node,
        pairwise_parent: key.parent,
        spec,
        alpha: res.alpha,
        loss_kind: kind,
        lambda_used: lambda,
        converged: res.converged,
        iterations: res.iterations,
        kkt_residual: res.kkt_residual,
        capped: res.capped,
    }
}

/// Builds the basis for every non-source node.
pub fn build_bases(g: &PatternGraph, ds: &Dataset, cfg: &BasisConfig) -> Result<BTreeMap<Pattern, BasisSpec>, WeightError> {
    g.processing_order()
        .into_iter()
        .map(|r| {
            build_basis(ds, &r, cfg)
                .map(|s| (r, s))
                .map_err(|source| WeightError::Basis { pattern: r, source })
        })
        .collect()
}

fn local_problem(
    ds: &Dataset,
    spec: &BasisSpec,
    kind: LossKind,
    source_rows: Vec<usize>,
    target_rows: &[usize],
) -> Result<LossProblem, OptError> {
    let mut rows = source_rows;
    let n_src = rows.len();
    rows.extend_from_slice(target_rows);
    let design = spec.design(ds, &rows).expect("parent rows observe every column of the child");
    let target: Vec<bool> = (0..rows.len()).map(|a| a >= n_src).collect();
    LossProblem::unit(kind, design, target, spec.t.clone(), ds.n_rows() as f64)
}

/// Fits local odds models with the entropy or tailored loss: `O^r` against
/// the parent-set rows for Type 1 nodes, and `O^{s,r}` against each parent
/// pattern separately for Type 2 and Type 3 nodes.
pub fn fit_local(g: &PatternGraph, ds: &Dataset, opts: &FitOptions, kind: LossKind) -> Result<ModelMap, WeightError> {
    assert!(kind != LossKind::Sequential, "use fit_sequential");
    check_inputs(g, ds)?;
    let bases = build_bases(g, ds, &opts.basis)?;
    let mut jobs: Vec<(ModelKey, Vec<usize>)> = Vec::new();
    for r in g.processing_order() {
        let parents = g.parents(&r)?;
        match g.coeff_type(&r) {
            CoeffType::Type1 => {
                let mut src: Vec<usize> = parents.iter().flat_map(|s| ds.rows_of(s).iter().copied()).collect();
                src.sort_unstable();
                if src.is_empty() {
                    return Err(WeightError::EmptyParents(r));
                }
                jobs.push((ModelKey::node(r), src));
            }
            CoeffType::Type2 | CoeffType::Type3 => {
                for s in parents {
                    let src = ds.rows_of(s).to_vec();
                    if src.is_empty() {
                        return Err(WeightError::EmptyParents(r));
                    }
                    jobs.push((ModelKey::pair(*s, r), src));
                }
            }
        }
    }
    let fitted = par::map(opts.exec, &jobs, |(key, src)| {
        let spec = &bases[&key.node];
        let problem = local_problem(ds, spec, kind, src.clone(), ds.rows_of(&key.node))
            .map_err(|source| WeightError::Opt { key: *key, source })?;
        let (lambda, res) = solve_model(opts, key, &problem)?;
        Ok::<_, WeightError>((*key, odds_model(*key, spec.clone(), kind, lambda, res)))
    });
    fitted.into_iter().collect()
}

/// Evaluates every model's odds on the complete cases, one vector per model.
fn complete_case_odds(models: &ModelMap, ds: &Dataset, exec: Exec) -> BTreeMap<ModelKey, Vec<f64>> {
    let cc = ds.complete_rows();
    let list: Vec<&OddsModel> = models.values().collect();
    let cols = par::map(exec, &list, |m| cc.iter().map(|&i| m.odds(ds.complete_row(i))).collect::<Vec<f64>>());
    list.iter().map(|m| m.key()).zip(cols).collect()
}

/// Runs the mixture recursion in processing order on the complete cases.
pub fn assemble_local_weights(
    models: &ModelMap,
    g: &PatternGraph,
    ds: &Dataset,
    method: WeightMethod,
) -> Result<WeightSet, WeightError> {
    let cc = ds.complete_rows().to_vec();
    let n = cc.len();
    let odds = complete_case_odds(models, ds, Exec::Sequential);
    let mut q: BTreeMap<Pattern, Vec<f64>> = BTreeMap::from([(g.source(), vec![1.0; n])]);
    for r in g.processing_order() {
        let parents = g.parents(&r)?;
        let mut col = vec![0.0; n];
        match g.coeff_type(&r) {
            CoeffType::Type1 => {
                let key = ModelKey::node(r);
                let o = odds.get(&key).ok_or(WeightError::MissingModel(key))?;
                for s in parents {
                    col.iter_mut().zip(&q[s]).for_each(|(c, qs)| *c += qs);
                }
                col.iter_mut().zip(o).for_each(|(c, o)| *c *= o);
            }
            ty => {
                let n_pa: usize = parents.iter().map(|s| ds.rows_of(s).len()).sum();
                for s in parents {
                    let key = ModelKey::pair(*s, r);
                    let o = odds.get(&key).ok_or(WeightError::MissingModel(key))?;
                    let c = match ty {
                        CoeffType::Type2 => ds.rows_of(s).len() as f64 / n_pa as f64,
                        _ => g.type3_constants(&r).and_then(|m| m.get(s)).copied().unwrap_or(0.0),
                    };
                    for ((a, qs), o) in col.iter_mut().zip(&q[s]).zip(o) {
                        *a += c * o * qs;
                    }
                }
            }
        }
        q.insert(r, col);
    }
    Ok(WeightSet { complete_rows: cc, q, method })
}

/// Fits local models and assembles their weights.
pub fn local_weights(
    g: &PatternGraph,
    ds: &Dataset,
    opts: &FitOptions,
    kind: LossKind,
) -> Result<(ModelMap, WeightSet), WeightError> {
    let models = fit_local(g, ds, opts, kind)?;
    let method = if kind == LossKind::Entropy { WeightMethod::Entropy } else { WeightMethod::Local };
    let ws = assemble_local_weights(&models, g, ds, method)?;
    Ok((models, ws))
}

/// Sequential estimation: each pattern's odds are balanced against complete
/// cases reweighted by the already-estimated `Q^{Pa(r)}`, layer by layer.
pub fn fit_sequential(g: &PatternGraph, ds: &Dataset, opts: &FitOptions) -> Result<(ModelMap, WeightSet), WeightError> {
    for r in g.processing_order() {
        let ty = g.coeff_type(&r);
        if ty != CoeffType::Type1 {
            return Err(WeightError::Unsupported(r, ty));
        }
    }
    check_inputs(g, ds)?;
    let bases = build_bases(g, ds, &opts.basis)?;
    let cc = ds.complete_rows().to_vec();
    let mut q: BTreeMap<Pattern, Vec<f64>> = BTreeMap::from([(g.source(), vec![1.0; cc.len()])]);
    let mut models = ModelMap::new();
    for layer in g.layers() {
        let fitted = par::map(opts.exec, &layer, |r| {
            let key = ModelKey::node(*r);
            let parents = g.parents(r)?;
            let mut m = vec![0.0; cc.len()];
            for s in parents {
                let qs = q.get(s).expect("parents come from earlier layers");
                m.iter_mut().zip(qs).for_each(|(a, b)| *a += b);
            }
            let spec = &bases[r];
            let target_rows = ds.rows_of(r);
            let mut rows = cc.clone();
            rows.extend_from_slice(target_rows);
            let design = spec.design(ds, &rows).expect("complete cases observe every column");
            let target: Vec<bool> = (0..rows.len()).map(|a| a >= cc.len()).collect();
            let mut mult = m.clone();
            mult.resize(rows.len(), 1.0);
            let problem = LossProblem::new(LossKind::Sequential, design, target, mult, spec.t.clone(), ds.n_rows() as f64)
                .map_err(|source| WeightError::Opt { key, source })?;
            let (lambda, res) = solve_model(opts, &key, &problem)?;
            let model = odds_model(key, spec.clone(), LossKind::Sequential, lambda, res);
            let qr: Vec<f64> = (0..cc.len())
                .map(|a| optimizer::odds(dot(problem.design.row(a), &model.alpha)) * m[a])
                .collect();
            Ok::<_, WeightError>((model, qr))
        });
        for item in fitted {
            let (model, qr) = item?;
            q.insert(model.pattern, qr);
            models.insert(model.key(), model);
        }
    }
    Ok((models, WeightSet { complete_rows: cc, q, method: WeightMethod::Sequential }))
}

/// Fits the weights of one method. `True` weights come from a data generator
/// and cannot be fitted.
pub fn fit_weights(
    method: WeightMethod,
    g: &PatternGraph,
    ds: &Dataset,
    opts: &FitOptions,
) -> Result<(ModelMap, WeightSet), WeightError> {
    match method {
        WeightMethod::Cc => Ok((ModelMap::new(), WeightSet::unit(ds))),
        WeightMethod::Entropy => local_weights(g, ds, opts, LossKind::Entropy),
        WeightMethod::Local => local_weights(g, ds, opts, LossKind::Tailored),
        WeightMethod::Sequential => fit_sequential(g, ds, opts),
        WeightMethod::True => Err(WeightError::NotFittable),
    }
}

/// Fixed per-model penalty levels taken from a previous fit.
pub fn lambdas_of(models: &ModelMap) -> LambdaPolicy {
    LambdaPolicy::PerModel(models.iter().map(|(k, m)| (*k, m.lambda_used)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BalanceRow {
    pub pattern: Pattern,
    pub term: usize,
    pub label: String,
    /// `sum_{R=r} phi_k / N`.
    pub target_mean: f64,
    /// `sum_{cc} Q^r phi_k / N`.
    pub source_mean: f64,
    pub gap: f64,
    /// `lambda * t_k`.
    pub slack: f64,
}

/// Per pattern and basis term, the pattern-`r` mean of the term against its
/// `Q^r`-reweighted complete-case mean, both on the `1/N` scale.
pub fn balance_report(ws: &WeightSet, models: &ModelMap, g: &PatternGraph, ds: &Dataset) -> Result<Vec<BalanceRow>, WeightError> {
    let n = ds.n_rows() as f64;
    let mut out = Vec::new();
    for r in g.processing_order() {
        let model = models
            .get(&ModelKey::node(r))
            .or_else(|| models.values().find(|m| m.pattern == r))
            .ok_or(WeightError::MissingModel(ModelKey::node(r)))?;
        let spec = &model.spec;
        let k = spec.n_terms();
        let tgt_m = spec.design(ds, ds.rows_of(&r)).expect("pattern rows observe their own columns");
        let src_m = spec.design(ds, &ws.complete_rows).expect("complete cases observe every column");
        let qr = ws.q.get(&r).ok_or(WeightError::MissingModel(ModelKey::node(r)))?;
        let tgt = column_sums(&tgt_m, None);
        let src = column_sums(&src_m, Some(qr));
        let labels = spec.labels(ds.column_names());
        for term in 0..k {
            let (a, b) = (tgt[term] / n, src[term] / n);
            out.push(BalanceRow {
                pattern: r,
                term,
                label: labels[term].clone(),
                target_mean: a,
                source_mean: b,
                gap: (a - b).abs(),
                slack: model.lambda_used * spec.t[term],
            });
        }
    }
    Ok(out)
}

fn column_sums(m: &Matrix, w: Option<&[f64]>) -> Vec<f64> {
    let mut s = vec![0.0; m.n_cols()];
    for i in 0..m.n_rows() {
        let wi = w.map_or(1.0, |w| w[i]);
        s.iter_mut().zip(m.row(i)).for_each(|(a, b)| *a += wi * b);
    }
    s
}

pub fn write_balance_csv(rows: &[BalanceRow], out: impl Write) -> Result<(), WeightError> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["pattern", "term", "label", "target_mean", "source_mean", "gap", "slack"])?;
    for r in rows {
        wtr.write_record([
            r.pattern.to_string(),
            r.term.to_string(),
            r.label.clone(),
            format!("{:?}", r.target_mean),
            format!("{:?}", r.source_mean),
            format!("{:?}", r.gap),
            format!("{:?}", r.slack),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pattern_graph::figures;

    fn p(s: &str) -> Pattern {
        s.parse().unwrap()
    }

    #[test]
    fn chain_recursion_multiplies() {
        let g = PatternGraph::from_strs(3, &["111", "110", "100"], &[("111", "110"), ("110", "100")]).unwrap();
        let odds = BTreeMap::from([(p("110"), 2.0), (p("100"), 2.0)]);
        let q = recursive_q(&g, &odds).unwrap();
        assert_eq!(q[&p("100")], 4.0);
    }

    #[test]
    fn diamond_recursion() {
        let g = figures::general_3();
        let (a, b, c) = (0.3, 0.7, 1.9);
        let odds = BTreeMap::from([(p("110"), a), (p("101"), b), (p("100"), c), (p("010"), 0.5)]);
        let q = recursive_q(&g, &odds).unwrap();
        assert!((q[&p("100")] - c * (a + b)).abs() < 1e-15);
    }

    #[test]
    fn unit_weights_are_one() {
        let ds = Dataset::from_rows(
            vec!["a".into(), "b".into()],
            &[vec![Some(1.0), Some(2.0)], vec![Some(1.0), None], vec![Some(0.0), Some(2.0)]],
            None,
        )
        .unwrap();
        let ws = WeightSet::unit(&ds);
        assert_eq!(ws.w(), vec![1.0, 1.0]);
        assert_eq!(ws.complete_rows, vec![0, 2]);
    }

    #[test]
    fn model_key_display() {
        assert_eq!(ModelKey::pair(p("110"), p("100")).to_string(), "110->100");
        assert_eq!(ModelKey::node(p("100")).to_string(), "100");
    }
}
