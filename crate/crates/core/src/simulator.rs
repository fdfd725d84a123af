//! Monte Carlo studies: logistic outcome, truncated-normal covariates and
//! missingness drawn from a pattern graph with polynomial log-odds.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ColumnKind, Dataset};
use crate::estimator::{expit, logistic_mle, solve_weighted_ee, EstimatingFunctionSpec};
use crate::par::{self, Exec};
use crate::pattern_graph::{figures, GraphError, Pattern, PatternGraph};
use crate::weights::{fit_weights, recursive_q, FitOptions, WeightMethod, WeightSet};

pub const TRUNCATION: f64 = 3.0;
/// Weights above this count as a blow-up.
pub const MAX_WEIGHT: f64 = 1e6;
const CALIBRATION_DRAWS: usize = 20_000;
const MIN_PATTERN_SHARE: f64 = 0.04;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("theta_true must have 5 entries, got {0}")]
    ThetaLength(usize),
    #[error("reps must be at least 1")]
    NoReps,
    #[error("n must be at least 10, got {0}")]
    TooFewRows(usize),
    #[error("the generating graph must have dimension 5, got {0}")]
    GraphDim(usize),
    #[error("data can only be generated under type1 coefficients")]
    NotType1,
    #[error("odds polynomial of {node}: {reason}")]
    BadOdds { node: Pattern, reason: String },
    #[error("odds calibration failed: {0}")]
    Calibration(String),
    #[error("unknown graph {0:?}")]
    UnknownGraph(String),
    #[error("fitting graph {name} has a different dimension from the data")]
    FitGraphDim { name: String },
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub const COLUMNS: [&str; 5] = ["y", "x1", "x2", "x3", "x4"];

/// Standard normal conditioned on `[-3, 3]`, by rejection.
pub fn truncated_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= TRUNCATION {
            return z;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub coef: f64,
    /// Exponent per column.
    pub exps: Vec<u32>,
}

impl Monomial {
    pub fn eval(&self, row: &[f64]) -> f64 {
        let mut v = self.coef;
        for (x, &e) in row.iter().zip(&self.exps) {
            if e > 0 {
                v *= x.powi(e as i32);
            }
        }
        v
    }
}

/// Log-odds polynomial per non-source node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OddsSpec {
    pub polys: BTreeMap<Pattern, Vec<Monomial>>,
}

impl OddsSpec {
    pub fn log_odds(&self, r: &Pattern, row: &[f64]) -> f64 {
        self.polys.get(r).map_or(0.0, |p| p.iter().map(|m| m.eval(row)).sum())
    }

    pub fn validate(&self, g: &PatternGraph) -> Result<(), SimError> {
        for r in g.processing_order() {
            let Some(poly) = self.polys.get(&r) else {
                return Err(SimError::BadOdds { node: r, reason: "missing".into() });
            };
            for m in poly {
                if m.exps.len() != g.dim() {
                    return Err(SimError::BadOdds { node: r, reason: "exponent vector has the wrong length".into() });
                }
                if m.exps.iter().sum::<u32>() > 4 {
                    return Err(SimError::BadOdds { node: r, reason: "degree above 4".into() });
                }
                if let Some(j) = (0..g.dim()).find(|&j| m.exps[j] > 0 && !r.is_observed(j)) {
                    return Err(SimError::BadOdds { node: r, reason: format!("uses unobserved column {}", j + 1) });
                }
                if !m.coef.is_finite() {
                    return Err(SimError::BadOdds { node: r, reason: "non-finite coefficient".into() });
                }
            }
        }
        for r in self.polys.keys() {
            if !g.contains(r) || r.is_complete() {
                return Err(SimError::BadOdds { node: *r, reason: "not a non-source graph node".into() });
            }
        }
        Ok(())
    }

    /// All-zero log-odds (every odds equal to one).
    pub fn flat(g: &PatternGraph) -> Self {
        let d = g.dim();
        OddsSpec {
            polys: g
                .processing_order()
                .into_iter()
                .map(|r| (r, vec![Monomial { coef: 0.0, exps: vec![0; d] }]))
                .collect(),
        }
    }

    /// Random univariate polynomials of degree up to four in each observed
    /// column (degree one for binary columns), drawn from `seed` and
    /// multiplied by `scale`. Intercepts are then calibrated so the
    /// complete-case share is near `target_complete` and every pattern has a
    /// share of at least 4%.
    pub fn seeded(
        g: &PatternGraph,
        theta: &[f64],
        seed: u64,
        scale: f64,
        target_complete: f64,
    ) -> Result<Self, SimError> {
        let d = g.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ranges = [0.6, 0.15, 0.04, 0.01];
        let mut polys = BTreeMap::new();
        for r in g.processing_order() {
            let mut poly = vec![Monomial { coef: 0.0, exps: vec![0; d] }];
            for j in r.observed_columns() {
                let max_deg = if j == 0 { 1 } else { 4 };
                for (deg, range) in ranges.iter().enumerate().take(max_deg) {
                    let mut exps = vec![0; d];
                    exps[j] = deg as u32 + 1;
                    let coef = scale * rng.random_range(-range..*range);
                    poly.push(Monomial { coef, exps });
                }
            }
            polys.insert(r, poly);
        }
        let mut spec = OddsSpec { polys };
        spec.calibrate(g, theta, seed ^ 0xCA11_B0A7, target_complete)?;
        Ok(spec)
    }

    fn calibrate(&mut self, g: &PatternGraph, theta: &[f64], seed: u64, target: f64) -> Result<(), SimError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let order = g.processing_order();
        let rows: Vec<Vec<f64>> = (0..CALIBRATION_DRAWS).map(|_| draw_row(&mut rng, theta)).collect();
        // polynomial values without intercepts, fixed during calibration
        let base: Vec<Vec<f64>> = rows
            .iter()
            .map(|row| order.iter().map(|r| self.log_odds(r, row) - self.intercept(r)).collect())
            .collect();
        let mut offsets: Vec<f64> = order.iter().map(|r| self.intercept(r)).collect();
        let shares_at = |offsets: &[f64], shift: f64| -> Result<Vec<f64>, SimError> {
            let mut acc = vec![0.0; order.len() + 1];
            for b in &base {
                let odds: BTreeMap<Pattern, f64> = order
                    .iter()
                    .zip(b)
                    .zip(offsets)
                    .map(|((r, v), o)| (*r, (v + o + shift).exp()))
                    .collect();
                let q = recursive_q(g, &odds)?;
                let total: f64 = q.values().sum();
                acc[0] += 1.0 / total;
                for (k, r) in order.iter().enumerate() {
                    acc[k + 1] += q[r] / total;
                }
            }
            Ok(acc.iter().map(|a| a / base.len() as f64).collect())
        };
        let mut shift = 0.0;
        for _round in 0..20 {
            // complete share decreases in the shift
            let (mut lo, mut hi) = (-30.0, 30.0);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if shares_at(&offsets, mid)?[0] > target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            shift = 0.5 * (lo + hi);
            let shares = shares_at(&offsets, shift)?;
            let mut adjusted = false;
            for k in 0..order.len() {
                if shares[k + 1] < MIN_PATTERN_SHARE {
                    offsets[k] += (MIN_PATTERN_SHARE * 1.25 / shares[k + 1].max(1e-6)).ln();
                    adjusted = true;
                }
            }
            if !adjusted {
                let complete = shares[0];
                if !(0.2..=0.6).contains(&complete) {
                    return Err(SimError::Calibration(format!("complete-case share {complete:.3}")));
                }
                for (k, r) in order.iter().enumerate() {
                    let poly = self.polys.get_mut(r).unwrap();
                    poly[0].coef = offsets[k] + shift;
                }
                return Ok(());
            }
        }
        Err(SimError::Calibration(format!("pattern shares did not reach {MIN_PATTERN_SHARE} (shift {shift:.3})")))
    }

    /// Constant term, taken from the first all-zero-exponent monomial.
    fn intercept(&self, r: &Pattern) -> f64 {
        self.polys
            .get(r)
            .and_then(|p| p.iter().find(|m| m.exps.iter().all(|&e| e == 0)))
            .map_or(0.0, |m| m.coef)
    }
}

fn draw_row<R: Rng + ?Sized>(rng: &mut R, theta: &[f64]) -> Vec<f64> {
    let mut row = vec![0.0; 5];
    for v in row.iter_mut().skip(1) {
        *v = truncated_normal(rng);
    }
    let eta = theta[0] + (1..5).map(|j| theta[j] * row[j]).sum::<f64>();
    row[0] = if rng.random::<f64>() < expit(eta) { 1.0 } else { 0.0 };
    row
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StudyMethod {
    Full,
    Cc,
    True,
    Entropy,
    Local,
    Seq,
}

impl StudyMethod {
    pub const ALL: [StudyMethod; 6] =
        [StudyMethod::Full, StudyMethod::Cc, StudyMethod::True, StudyMethod::Entropy, StudyMethod::Local, StudyMethod::Seq];

    pub fn name(self) -> &'static str {
        match self {
            StudyMethod::Full => "full",
            StudyMethod::Cc => "cc",
            StudyMethod::True => "true",
            StudyMethod::Entropy => "entropy",
            StudyMethod::Local => "local",
            StudyMethod::Seq => "seq",
        }
    }

    /// Whether the method's weights depend on the fitting graph.
    pub fn uses_graph(self) -> bool {
        matches!(self, StudyMethod::Entropy | StudyMethod::Local | StudyMethod::Seq)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    pub theta_true: Vec<f64>,
    /// `fig3`, `g1`, `g2`, `g3`, or a path to a graph JSON file.
    pub graph: String,
    /// Graphs the weights are fitted under; empty means the generating graph.
    pub fit_graphs: Vec<String>,
    pub methods: Vec<StudyMethod>,
    pub odds_seed: u64,
    pub odds_scale: f64,
    pub target_complete: f64,
    /// Explicit polynomials; overrides the seeded default.
    pub odds: Option<OddsSpec>,
    pub fit: FitOptions,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n: 1000,
            reps: 100,
            seed: 20240501,
            theta_true: vec![3.0, -2.0, 1.0, 2.0, -1.0],
            graph: "fig3".into(),
            fit_graphs: Vec::new(),
            methods: StudyMethod::ALL.to_vec(),
            odds_seed: 7,
            odds_scale: 1.0,
            target_complete: 0.4,
            odds: None,
            fit: study_fit_options(),
        }
    }
}

/// Fit options used by studies unless overridden: CV stops walking the grid
/// after five values without improvement.
pub fn study_fit_options() -> FitOptions {
    let mut fit = FitOptions::default();
    fit.cv.patience = Some(5);
    fit
}

impl SimConfig {
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, SimError> {
        serde_json::from_str(text).map_err(|e| SimError::Config(e.to_string()))
    }

    /// Reads TOML, or JSON when the extension is `.json`.
    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e == "json") {
            Self::from_json(&text)
        } else {
            Self::from_toml(&text)
        }
    }
}

/// Resolves a graph name or JSON path.
pub fn resolve_graph(name: &str) -> Result<PatternGraph, SimError> {
    match name {
        "fig3" | "g1" => Ok(figures::simulation()),
        "g2" => Ok(figures::sensitivity_g2()),
        "g3" | "ccmv" => Ok(figures::sensitivity_g3()),
        path if path.ends_with(".json") => Ok(PatternGraph::load(path)?),
        other => Err(SimError::UnknownGraph(other.to_string())),
    }
}

/// One generated dataset with its generator-side quantities.
#[derive(Debug, Clone)]
pub struct SimData {
    pub data: Dataset,
    /// The same rows before masking.
    pub full: Dataset,
    /// `P(R = 1_d | L)` per row.
    pub pi: Vec<f64>,
    /// True `Q^r` per row, every node.
    pub q: BTreeMap<Pattern, Vec<f64>>,
}

/// A validated configuration with its generating graph and odds resolved.
#[derive(Debug, Clone)]
pub struct Simulator {
    pub cfg: SimConfig,
    pub graph: PatternGraph,
    pub odds: OddsSpec,
    order: Vec<Pattern>,
}

impl Simulator {
    pub fn new(cfg: SimConfig) -> Result<Self, SimError> {
        let graph = resolve_graph(&cfg.graph)?;
        Self::with_graph(cfg, graph)
    }

    pub fn with_graph(cfg: SimConfig, graph: PatternGraph) -> Result<Self, SimError> {
        if cfg.theta_true.len() != 5 {
            return Err(SimError::ThetaLength(cfg.theta_true.len()));
        }
        if cfg.reps == 0 {
            return Err(SimError::NoReps);
        }
        if cfg.n < 10 {
            return Err(SimError::TooFewRows(cfg.n));
        }
        if graph.dim() != 5 {
            return Err(SimError::GraphDim(graph.dim()));
        }
        graph.ensure_regular()?;
        if !graph.all_type1() {
            return Err(SimError::NotType1);
        }
        let odds = match &cfg.odds {
            Some(o) => o.clone(),
            None => OddsSpec::seeded(&graph, &cfg.theta_true, cfg.odds_seed, cfg.odds_scale, cfg.target_complete)?,
        };
        odds.validate(&graph)?;
        let order = graph.processing_order();
        Ok(Simulator { cfg, graph, odds, order })
    }

    /// Random stream of replicate `rep`.
    pub fn rng(&self, rep: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(rep as u64);
        rng
    }

    /// True `Q^r` for every node at a full row.
    pub fn true_q(&self, row: &[f64]) -> BTreeMap<Pattern, f64> {
        let odds: BTreeMap<Pattern, f64> =
            self.order.iter().map(|r| (*r, self.odds.log_odds(r, row).exp())).collect();
        recursive_q(&self.graph, &odds).expect("graph validated")
    }

    pub fn generate(&self, rep: usize) -> SimData {
        let mut rng = self.rng(rep);
        let n = self.cfg.n;
        let mut full_rows = Vec::with_capacity(n);
        let mut rows = Vec::with_capacity(n);
        let mut pi = Vec::with_capacity(n);
        let mut q: BTreeMap<Pattern, Vec<f64>> = BTreeMap::new();
        for _ in 0..n {
            let row = draw_row(&mut rng, &self.cfg.theta_true);
            let qr = self.true_q(&row);
            let total: f64 = qr.values().sum();
            let u: f64 = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = *qr.keys().next_back().unwrap();
            for (r, v) in &qr {
                acc += v;
                if u < acc {
                    chosen = *r;
                    break;
                }
            }
            for (r, v) in &qr {
                q.entry(*r).or_default().push(*v);
            }
            pi.push(1.0 / total);
            rows.push(row.iter().enumerate().map(|(j, &v)| chosen.is_observed(j).then_some(v)).collect());
            full_rows.push(row.into_iter().map(Some).collect());
        }
        let names: Vec<String> = COLUMNS.iter().map(|s| s.to_string()).collect();
        let mut kinds = vec![ColumnKind::Continuous; 5];
        kinds[0] = ColumnKind::Discrete;
        let data = Dataset::from_rows(names.clone(), &rows, Some(kinds.clone())).expect("rectangular");
        let full = Dataset::from_rows(names, &full_rows, Some(kinds)).expect("rectangular");
        SimData { data, full, pi, q }
    }
}

/// `1/pi` on complete cases, split into its true `Q^r` parts.
pub fn true_weights(sim: &SimData) -> WeightSet {
    let cc = sim.data.complete_rows().to_vec();
    let q = sim.q.iter().map(|(r, col)| (*r, cc.iter().map(|&i| col[i]).collect())).collect();
    WeightSet { complete_rows: cc, q, method: WeightMethod::True }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: StudyMethod,
    pub n_ok: usize,
    pub n_failed: usize,
    pub bias: Vec<f64>,
    pub mse: Vec<f64>,
    /// `sum |bias_j|`.
    pub bias_l1: f64,
    /// `sqrt(sum mse_j^2)`.
    pub mse_l2: f64,
    /// `sum mse_j`.
    pub mse_sum: f64,
}

impl MethodSummary {
    fn from_estimates(method: StudyMethod, estimates: &[Option<Vec<f64>>], theta: &[f64]) -> Self {
        let ok: Vec<&Vec<f64>> = estimates.iter().flatten().collect();
        let q = theta.len();
        let m = ok.len() as f64;
        let (mut bias, mut mse) = (vec![f64::NAN; q], vec![f64::NAN; q]);
        if !ok.is_empty() {
            for j in 0..q {
                bias[j] = ok.iter().map(|t| t[j] - theta[j]).sum::<f64>() / m;
                mse[j] = ok.iter().map(|t| (t[j] - theta[j]).powi(2)).sum::<f64>() / m;
            }
        }
        MethodSummary {
            method,
            n_ok: ok.len(),
            n_failed: estimates.len() - ok.len(),
            bias_l1: bias.iter().map(|b| b.abs()).sum(),
            mse_l2: mse.iter().map(|v| v * v).sum::<f64>().sqrt(),
            mse_sum: mse.iter().sum(),
            bias,
            mse,
        }
    }

    /// Every replicate failed.
    pub fn failed(&self) -> bool {
        self.n_ok == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyResult {
    pub graph: String,
    pub n: usize,
    pub reps: usize,
    pub coef_names: Vec<String>,
    pub methods: Vec<MethodSummary>,
}

impl StudyResult {
    pub fn method(&self, m: StudyMethod) -> Option<&MethodSummary> {
        self.methods.iter().find(|s| s.method == m)
    }

    pub fn write_csv(results: &[StudyResult], out: impl Write) -> Result<(), SimError> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["method", "graph", "coef", "bias", "mse", "n_ok", "n_failed"])?;
        for res in results {
            for s in &res.methods {
                let mut rec = |coef: &str, b: f64, m: f64| {
                    wtr.write_record([
                        s.method.name().to_string(),
                        res.graph.clone(),
                        coef.to_string(),
                        format!("{b:?}"),
                        format!("{m:?}"),
                        s.n_ok.to_string(),
                        s.n_failed.to_string(),
                    ])
                };
                for (j, name) in res.coef_names.iter().enumerate() {
                    rec(name, s.bias[j], s.mse[j])?;
                }
                rec("norm", s.bias_l1, s.mse_l2)?;
                rec("sum", s.bias.iter().sum(), s.mse_sum)?;
            }
        }
        wtr.flush()?;
        Ok(())
    }

    /// Plain-text table: one row per method, bias and MSE per coefficient.
    pub fn summary(&self) -> String {
        let mut out = format!("graph {}  N={}  reps={}\n", self.graph, self.n, self.reps);
        let _ = write!(out, "{:<8}", "method");
        for name in &self.coef_names {
            let _ = write!(out, " {:>8}", format!("b:{name}"));
        }
        let _ = write!(out, " {:>8}", "|b|_1");
        for name in &self.coef_names {
            let _ = write!(out, " {:>8}", format!("m:{name}"));
        }
        let _ = writeln!(out, " {:>8} {:>8} {:>5}", "|m|_2", "sum m", "fail");
        for s in &self.methods {
            let _ = write!(out, "{:<8}", s.method.name());
            for b in &s.bias {
                let _ = write!(out, " {b:>8.3}");
            }
            let _ = write!(out, " {:>8.3}", s.bias_l1);
            for m in &s.mse {
                let _ = write!(out, " {m:>8.3}");
            }
            let _ = writeln!(out, " {:>8.3} {:>8.3} {:>5}", s.mse_l2, s.mse_sum, s.n_failed);
        }
        out
    }
}

/// Estimates for one replicate under one fitting graph, `None` on failure.
fn estimate_rep(
    data: &SimData,
    method: StudyMethod,
    fit_graph: &PatternGraph,
    spec: &EstimatingFunctionSpec,
    opts: &FitOptions,
) -> Option<Vec<f64>> {
    let ds = &data.data;
    let result = match method {
        StudyMethod::Full => logistic_mle(&data.full, &(0..data.full.n_rows()).collect::<Vec<_>>(), spec).ok(),
        StudyMethod::Cc => solve_weighted_ee(ds, &WeightSet::unit(ds), spec).ok(),
        StudyMethod::True => solve_weighted_ee(ds, &true_weights(data), spec).ok(),
        StudyMethod::Entropy | StudyMethod::Local | StudyMethod::Seq => {
            let wm = match method {
                StudyMethod::Entropy => WeightMethod::Entropy,
                StudyMethod::Local => WeightMethod::Local,
                _ => WeightMethod::Sequential,
            };
            let (models, ws) = match fit_weights(wm, fit_graph, ds, opts) {
                Ok(x) => x,
                Err(e) => {
                    log::debug!("{} fit failed: {e}", method.name());
                    return None;
                }
            };
            if models.values().any(|m| !m.converged) {
                log::debug!("{}: odds model did not converge", method.name());
                return None;
            }
            if ws.max_w() > MAX_WEIGHT || !ws.w().iter().all(|w| w.is_finite()) {
                log::debug!("{}: weight blow-up", method.name());
                return None;
            }
            solve_weighted_ee(ds, &ws, spec).ok()
        }
    };
    result.filter(|r| r.converged).map(|r| r.theta)
}

/// Generates each replicate once and fits every method under every graph in
/// `graphs`. Graph-free methods (full, cc, true) are shared across graphs.
pub fn sensitivity_study(
    sim: &Simulator,
    graphs: &[(String, PatternGraph)],
    exec: Exec,
) -> Result<Vec<StudyResult>, SimError> {
    for (name, g) in graphs {
        if g.dim() != 5 {
            return Err(SimError::FitGraphDim { name: name.clone() });
        }
        g.ensure_regular()?;
    }
    let cfg = &sim.cfg;
    let methods = {
        let mut m = cfg.methods.clone();
        m.sort();
        m.dedup();
        m
    };
    let mut opts = cfg.fit.clone();
    opts.exec = Exec::Sequential;
    // per replicate: per graph, per method
    let per_rep: Vec<Vec<Vec<Option<Vec<f64>>>>> = par::map_range(exec, cfg.reps, |rep| {
        let data = sim.generate(rep);
        let spec = EstimatingFunctionSpec::first_on_rest(&data.data);
        let mut shared: BTreeMap<StudyMethod, Option<Vec<f64>>> = BTreeMap::new();
        graphs
            .iter()
            .map(|(_, g)| {
                methods
                    .iter()
                    .map(|&m| {
                        if m.uses_graph() {
                            estimate_rep(&data, m, g, &spec, &opts)
                        } else {
                            shared.entry(m).or_insert_with(|| estimate_rep(&data, m, g, &spec, &opts)).clone()
                        }
                    })
                    .collect()
            })
            .collect()
    });
    let coef_names: Vec<String> = (0..5).map(|j| format!("theta{j}")).collect();
    Ok(graphs
        .iter()
        .enumerate()
        .map(|(gi, (name, _))| StudyResult {
            graph: name.clone(),
            n: cfg.n,
            reps: cfg.reps,
            coef_names: coef_names.clone(),
            methods: methods
                .iter()
                .enumerate()
                .map(|(mi, &m)| {
                    let est: Vec<Option<Vec<f64>>> = per_rep.iter().map(|r| r[gi][mi].clone()).collect();
                    MethodSummary::from_estimates(m, &est, &cfg.theta_true)
                })
                .collect(),
        })
        .collect())
}

/// Replicated study with weights fitted under the generating graph.
pub fn run_study(sim: &Simulator, exec: Exec) -> Result<StudyResult, SimError> {
    let graphs = vec![(sim.cfg.graph.clone(), sim.graph.clone())];
    Ok(sensitivity_study(sim, &graphs, exec)?.remove(0))
}

/// The fitting graphs named in the config, or the generating graph alone.
pub fn fit_graphs(sim: &Simulator) -> Result<Vec<(String, PatternGraph)>, SimError> {
    if sim.cfg.fit_graphs.is_empty() {
        return Ok(vec![(sim.cfg.graph.clone(), sim.graph.clone())]);
    }
    sim.cfg.fit_graphs.iter().map(|n| Ok((n.clone(), resolve_graph(n)?))).collect()
}
