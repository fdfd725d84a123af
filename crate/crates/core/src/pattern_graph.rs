//! Missingness patterns and regular pattern graphs.
//!
//! A [`Pattern`] is a binary vector over the `d` coordinates of an
//! observation (`1` = observed). A [`PatternGraph`] is a DAG over patterns
//! whose edges point from more-observed to less-observed patterns; the
//! complete-case pattern `1_d` is its unique source. Each non-source node
//! carries a mixture-coefficient type that decides how its odds combine
//! with its parents' odds.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Longest supported pattern.
pub const MAX_DIM: usize = 64;

/// A missingness pattern. Coordinate `j` (0-based) is the `j+1`-th character
/// of the rendered string.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Pattern {
    d: u8,
    // Character 0 of the string is the most significant of the `d` bits, so
    // numeric order on `mask` equals lexicographic order on the string.
    mask: u64,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PatternError {
    #[error("empty pattern string")]
    Empty,
    #[error("invalid character {found:?} at position {position} (expected '0' or '1')")]
    BadChar { position: usize, found: char },
    #[error("pattern longer than {MAX_DIM} coordinates")]
    TooLong,
}

impl Pattern {
    pub fn complete(d: usize) -> Self {
        assert!((1..=MAX_DIM).contains(&d), "pattern dimension out of range");
        let mask = if d == 64 { u64::MAX } else { (1u64 << d) - 1 };
        Pattern { d: d as u8, mask }
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        assert!((1..=MAX_DIM).contains(&bits.len()), "pattern dimension out of range");
        let d = bits.len();
        let mut mask = 0u64;
        for (j, &b) in bits.iter().enumerate() {
            if b {
                mask |= 1u64 << (d - 1 - j);
            }
        }
        Pattern { d: d as u8, mask }
    }

    pub fn dim(&self) -> usize {
        self.d as usize
    }

    pub fn is_observed(&self, j: usize) -> bool {
        assert!(j < self.dim());
        self.mask >> (self.dim() - 1 - j) & 1 == 1
    }

    pub fn bits(&self) -> Vec<bool> {
        (0..self.dim()).map(|j| self.is_observed(j)).collect()
    }

    /// Number of observed coordinates (`d_r`).
    pub fn n_observed(&self) -> usize {
        self.mask.count_ones() as usize
    }

    pub fn is_complete(&self) -> bool {
        self.n_observed() == self.dim()
    }

    pub fn observed_columns(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&j| self.is_observed(j)).collect()
    }

    /// Componentwise `self >= other`.
    pub fn covers(&self, other: &Pattern) -> bool {
        self.d == other.d && other.mask & !self.mask == 0
    }

    /// The strict partial order `self > other`.
    pub fn dominates(&self, other: &Pattern) -> bool {
        self.covers(other) && self.mask != other.mask
    }
}

impl PartialOrd for Pattern {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pattern {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d.cmp(&other.d).then(self.mask.cmp(&other.mask))
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for j in 0..self.dim() {
            f.write_str(if self.is_observed(j) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Pattern({self})")
    }
}

impl FromStr for Pattern {
    type Err = PatternError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.is_empty() {
            return Err(PatternError::Empty);
        }
        let mut bits = Vec::with_capacity(s.len());
        for (i, c) in s.chars().enumerate() {
            match c {
                '0' => bits.push(false),
                '1' => bits.push(true),
                found => return Err(PatternError::BadChar { position: i + 1, found }),
            }
        }
        if bits.len() > MAX_DIM {
            return Err(PatternError::TooLong);
        }
        Ok(Pattern::from_bits(&bits))
    }
}

impl Serialize for Pattern {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Pattern {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Parses a `'0'/'1'` string into a [`Pattern`].
pub fn parse_pattern(text: &str) -> Result<Pattern, PatternError> {
    text.parse()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CoeffType {
    /// Conditional parent-pattern probabilities.
    #[default]
    Type1,
    /// Marginal parent-pattern probabilities.
    Type2,
    /// Known constants.
    Type3,
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error(transparent)]
    Pattern(#[from] PatternError),
    #[error("pattern {pattern} has length {found}, graph dimension is {d}")]
    DimensionMismatch { pattern: Pattern, found: usize, d: usize },
    #[error("graph dimension must be between 1 and {MAX_DIM}, got {0}")]
    BadDimension(usize),
    #[error("duplicate node {0}")]
    DuplicateNode(Pattern),
    #[error("edge {from} -> {to} references a node that is not in the graph")]
    UnknownEdgeEndpoint { from: Pattern, to: Pattern },
    #[error("unknown node {0}")]
    UnknownNode(Pattern),
    #[error("graph is not regular: {0}")]
    NotRegular(ValidationReport),
    #[error("cannot read graph file: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse graph file: {0}")]
    Json(#[from] serde_json::Error),
}

/// One violated regularity condition.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Cycle(Vec<Pattern>),
    MissingCompletePattern,
    CompletePatternHasParent(Vec<Pattern>),
    ExtraSource(Pattern),
    OrderViolation { from: Pattern, to: Pattern },
    Type3Constants { node: Pattern, reason: String },
    Unreachable(Pattern),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Cycle(w) => {
                let names: Vec<String> = w.iter().map(|p| p.to_string()).collect();
                write!(f, "cycle: {}", names.join(" -> "))
            }
            Violation::MissingCompletePattern => write!(f, "complete-case pattern is not a node"),
            Violation::CompletePatternHasParent(ps) => {
                let names: Vec<String> = ps.iter().map(|p| p.to_string()).collect();
                write!(f, "complete-case pattern has parents {}", names.join(","))
            }
            Violation::ExtraSource(p) => write!(f, "node {p} has no parent"),
            Violation::OrderViolation { from, to } => {
                write!(f, "edge violates partial order: {from} -> {to}")
            }
            Violation::Type3Constants { node, reason } => {
                write!(f, "type3 constants at {node}: {reason}")
            }
            Violation::Unreachable(p) => write!(f, "node {p} is unreachable from the complete-case pattern"),
        }
    }
}

/// Violations found by [`PatternGraph::validate`]; empty means regular.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_regular(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "regular");
        }
        let lines: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", lines.join("; "))
    }
}

/// A directed path from `1_d` to its last vertex.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Path {
    pub vertices: Vec<Pattern>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatternGraph {
    d: usize,
    nodes: BTreeSet<Pattern>,
    parents: BTreeMap<Pattern, BTreeSet<Pattern>>,
    children: BTreeMap<Pattern, BTreeSet<Pattern>>,
    coeff_type: BTreeMap<Pattern, CoeffType>,
    type3_constants: BTreeMap<Pattern, BTreeMap<Pattern, f64>>,
}

/// On-disk graph description.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphFile {
    pub d: usize,
    pub nodes: Vec<String>,
    pub edges: Vec<[String; 2]>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub coeff_type: BTreeMap<String, CoeffType>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub type3_constants: BTreeMap<String, BTreeMap<String, f64>>,
}

impl PatternGraph {
    /// Builds a graph without checking regularity. Structural problems
    /// (length mismatch, duplicate nodes, dangling edges) are errors; the
    /// regularity conditions are reported by [`validate`](Self::validate).
    pub fn new(
        d: usize,
        nodes: impl IntoIterator<Item = Pattern>,
        edges: impl IntoIterator<Item = (Pattern, Pattern)>,
    ) -> Result<Self, GraphError> {
        if !(1..=MAX_DIM).contains(&d) {
            return Err(GraphError::BadDimension(d));
        }
        let mut set = BTreeSet::new();
        for p in nodes {
            if p.dim() != d {
                return Err(GraphError::DimensionMismatch { pattern: p, found: p.dim(), d });
            }
            if !set.insert(p) {
                return Err(GraphError::DuplicateNode(p));
            }
        }
        let mut parents: BTreeMap<Pattern, BTreeSet<Pattern>> =
            set.iter().map(|&p| (p, BTreeSet::new())).collect();
        let mut children = parents.clone();
        for (from, to) in edges {
            if !set.contains(&from) || !set.contains(&to) {
                return Err(GraphError::UnknownEdgeEndpoint { from, to });
            }
            parents.get_mut(&to).unwrap().insert(from);
            children.get_mut(&from).unwrap().insert(to);
        }
        Ok(PatternGraph {
            d,
            nodes: set,
            parents,
            children,
            coeff_type: BTreeMap::new(),
            type3_constants: BTreeMap::new(),
        })
    }

    /// Parses `"s->r"`-style pairs; convenience for tests and built-in figures.
    pub fn from_strs(d: usize, nodes: &[&str], edges: &[(&str, &str)]) -> Result<Self, GraphError> {
        let nodes: Vec<Pattern> = nodes.iter().map(|s| s.parse()).collect::<Result<_, _>>()?;
        let edges: Vec<(Pattern, Pattern)> = edges
            .iter()
            .map(|(a, b)| Ok((a.parse()?, b.parse()?)))
            .collect::<Result<_, PatternError>>()?;
        Self::new(d, nodes, edges)
    }

    /// CCMV graph: every listed pattern's sole parent is `1_d`.
    pub fn ccmv(d: usize, patterns: impl IntoIterator<Item = Pattern>) -> Result<Self, GraphError> {
        let full = Pattern::complete(d);
        let mut nodes: BTreeSet<Pattern> = patterns.into_iter().collect();
        nodes.insert(full);
        let edges: Vec<_> = nodes.iter().filter(|p| **p != full).map(|&p| (full, p)).collect();
        Self::new(d, nodes, edges)
    }

    pub fn with_coeff_type(mut self, node: Pattern, ty: CoeffType) -> Result<Self, GraphError> {
        if !self.nodes.contains(&node) {
            return Err(GraphError::UnknownNode(node));
        }
        self.coeff_type.insert(node, ty);
        Ok(self)
    }

    pub fn with_type3_constants(
        mut self,
        node: Pattern,
        constants: BTreeMap<Pattern, f64>,
    ) -> Result<Self, GraphError> {
        if !self.nodes.contains(&node) {
            return Err(GraphError::UnknownNode(node));
        }
        self.coeff_type.insert(node, CoeffType::Type3);
        self.type3_constants.insert(node, constants);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn source(&self) -> Pattern {
        Pattern::complete(self.d)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Pattern> {
        self.nodes.iter()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, p: &Pattern) -> bool {
        self.nodes.contains(p)
    }

    pub fn edges(&self) -> impl Iterator<Item = (Pattern, Pattern)> + '_ {
        self.children.iter().flat_map(|(&s, cs)| cs.iter().map(move |&r| (s, r)))
    }

    pub fn parents(&self, r: &Pattern) -> Result<&BTreeSet<Pattern>, GraphError> {
        self.parents.get(r).ok_or(GraphError::UnknownNode(*r))
    }

    pub fn children(&self, s: &Pattern) -> Result<&BTreeSet<Pattern>, GraphError> {
        self.children.get(s).ok_or(GraphError::UnknownNode(*s))
    }

    pub fn coeff_type(&self, r: &Pattern) -> CoeffType {
        self.coeff_type.get(r).copied().unwrap_or_default()
    }

    pub fn type3_constants(&self, r: &Pattern) -> Option<&BTreeMap<Pattern, f64>> {
        self.type3_constants.get(r)
    }

    /// True when every node uses conditional (Type 1) mixture coefficients.
    pub fn all_type1(&self) -> bool {
        self.nodes
            .iter()
            .filter(|p| !p.is_complete())
            .all(|p| self.coeff_type(p) == CoeffType::Type1)
    }

    /// Checks the regularity conditions and the Type 3 constant constraints.
    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        let full = self.source();

        if let Some(w) = self.find_cycle() {
            violations.push(Violation::Cycle(w));
        }
        if !self.nodes.contains(&full) {
            violations.push(Violation::MissingCompletePattern);
        } else {
            let pa = &self.parents[&full];
            if !pa.is_empty() {
                violations.push(Violation::CompletePatternHasParent(pa.iter().copied().collect()));
            }
        }
        for (&r, pa) in &self.parents {
            if r != full && pa.is_empty() {
                violations.push(Violation::ExtraSource(r));
            }
        }
        for (s, r) in self.edges() {
            if !s.dominates(&r) {
                violations.push(Violation::OrderViolation { from: s, to: r });
            }
        }
        for (&r, &ty) in &self.coeff_type {
            if ty != CoeffType::Type3 {
                continue;
            }
            if let Some(reason) = self.type3_problem(&r) {
                violations.push(Violation::Type3Constants { node: r, reason });
            }
        }
        if self.nodes.contains(&full) {
            let reach = self.reachable_from(full);
            for &r in &self.nodes {
                if !reach.contains(&r) {
                    violations.push(Violation::Unreachable(r));
                }
            }
        }
        ValidationReport { violations }
    }

    fn type3_problem(&self, r: &Pattern) -> Option<String> {
        let pa = &self.parents[r];
        let Some(c) = self.type3_constants.get(r) else {
            return Some("no constants given".into());
        };
        for s in c.keys() {
            if !pa.contains(s) {
                return Some(format!("{s} is not a parent"));
            }
        }
        for s in pa {
            if !c.contains_key(s) {
                return Some(format!("missing constant for parent {s}"));
            }
        }
        if let Some((s, v)) = c.iter().find(|(_, v)| !v.is_finite() || **v < 0.0) {
            return Some(format!("constant for {s} is {v}, must be nonnegative"));
        }
        let total: f64 = c.values().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Some(format!("constants sum to {total}, must sum to 1"));
        }
        None
    }

    fn reachable_from(&self, start: Pattern) -> BTreeSet<Pattern> {
        let mut seen = BTreeSet::from([start]);
        let mut stack = vec![start];
        while let Some(s) = stack.pop() {
            for &c in &self.children[&s] {
                if seen.insert(c) {
                    stack.push(c);
                }
            }
        }
        seen
    }

    fn find_cycle(&self) -> Option<Vec<Pattern>> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            New,
            Active,
            Done,
        }
        let mut mark: BTreeMap<Pattern, Mark> = self.nodes.iter().map(|&p| (p, Mark::New)).collect();
        for &start in &self.nodes {
            if mark[&start] != Mark::New {
                continue;
            }
            // iterative DFS keeping the active path for the witness
            let mut path: Vec<Pattern> = vec![start];
            let mut iters: Vec<std::vec::IntoIter<Pattern>> =
                vec![self.children[&start].iter().copied().collect::<Vec<_>>().into_iter()];
            mark.insert(start, Mark::Active);
            while let Some(it) = iters.last_mut() {
                match it.next() {
                    Some(c) => match mark[&c] {
                        Mark::Active => {
                            let pos = path.iter().position(|&p| p == c).unwrap();
                            let mut w = path[pos..].to_vec();
                            w.push(c);
                            return Some(w);
                        }
                        Mark::New => {
                            mark.insert(c, Mark::Active);
                            path.push(c);
                            iters.push(self.children[&c].iter().copied().collect::<Vec<_>>().into_iter());
                        }
                        Mark::Done => {}
                    },
                    None => {
                        iters.pop();
                        let p = path.pop().unwrap();
                        mark.insert(p, Mark::Done);
                    }
                }
            }
        }
        None
    }

    pub fn ensure_regular(&self) -> Result<(), GraphError> {
        let report = self.validate();
        if report.is_regular() {
            Ok(())
        } else {
            Err(GraphError::NotRegular(report))
        }
    }

    /// All directed paths from `1_d` to `r`, sorted lexicographically by
    /// vertex sequence. For `r = 1_d` the single trivial path `[1_d]`.
    pub fn enumerate_paths(&self, r: &Pattern) -> Result<Vec<Path>, GraphError> {
        self.ensure_regular()?;
        if !self.nodes.contains(r) {
            return Err(GraphError::UnknownNode(*r));
        }
        let mut out = Vec::new();
        let mut current = vec![self.source()];
        self.paths_dfs(r, &mut current, &mut out);
        out.sort();
        Ok(out)
    }

    fn paths_dfs(&self, target: &Pattern, current: &mut Vec<Pattern>, out: &mut Vec<Path>) {
        let last = *current.last().unwrap();
        if last == *target {
            out.push(Path { vertices: current.clone() });
            return;
        }
        for &c in &self.children[&last] {
            // only descend toward nodes that can still reach the target
            if c.covers(target) {
                current.push(c);
                self.paths_dfs(target, current, out);
                current.pop();
            }
        }
    }

    /// Non-source nodes by number of observed coordinates, descending; ties
    /// lexicographic by pattern string. For a regular graph every node comes
    /// after all of its non-source parents.
    pub fn processing_order(&self) -> Vec<Pattern> {
        let full = self.source();
        let mut order: Vec<Pattern> = self.nodes.iter().copied().filter(|&p| p != full).collect();
        order.sort_by(|a, b| b.n_observed().cmp(&a.n_observed()).then(a.cmp(b)));
        order
    }

    /// [`processing_order`](Self::processing_order) grouped into layers of
    /// equal `d_r`. Nodes within a layer never depend on one another.
    pub fn layers(&self) -> Vec<Vec<Pattern>> {
        let mut layers: Vec<Vec<Pattern>> = Vec::new();
        for p in self.processing_order() {
            match layers.last_mut() {
                Some(l) if l[0].n_observed() == p.n_observed() => l.push(p),
                _ => layers.push(vec![p]),
            }
        }
        layers
    }

    pub fn to_file(&self) -> GraphFile {
        GraphFile {
            d: self.d,
            nodes: self.nodes.iter().map(|p| p.to_string()).collect(),
            edges: self.edges().map(|(s, r)| [s.to_string(), r.to_string()]).collect(),
            coeff_type: self.coeff_type.iter().map(|(p, t)| (p.to_string(), *t)).collect(),
            type3_constants: self
                .type3_constants
                .iter()
                .map(|(p, c)| (p.to_string(), c.iter().map(|(s, v)| (s.to_string(), *v)).collect()))
                .collect(),
        }
    }

    pub fn from_file(file: &GraphFile) -> Result<Self, GraphError> {
        let parse = |s: &str| -> Result<Pattern, GraphError> {
            let p: Pattern = s.parse()?;
            if p.dim() != file.d {
                return Err(GraphError::DimensionMismatch { pattern: p, found: p.dim(), d: file.d });
            }
            Ok(p)
        };
        let nodes: Vec<Pattern> = file.nodes.iter().map(|s| parse(s)).collect::<Result<_, _>>()?;
        let edges: Vec<(Pattern, Pattern)> = file
            .edges
            .iter()
            .map(|[a, b]| Ok((parse(a)?, parse(b)?)))
            .collect::<Result<_, GraphError>>()?;
        let mut g = Self::new(file.d, nodes, edges)?;
        for (node, ty) in &file.coeff_type {
            g = g.with_coeff_type(parse(node)?, *ty)?;
        }
        for (node, consts) in &file.type3_constants {
            let consts = consts
                .iter()
                .map(|(s, v)| Ok((parse(s)?, *v)))
                .collect::<Result<BTreeMap<_, _>, GraphError>>()?;
            let node = parse(node)?;
            let explicit = g.coeff_type.get(&node).copied();
            g = g.with_type3_constants(node, consts)?;
            // an explicit non-type3 declaration wins; the constants are then unused
            if let Some(ty) = explicit {
                g.coeff_type.insert(node, ty);
            }
        }
        Ok(g)
    }

    pub fn from_json(text: &str) -> Result<Self, GraphError> {
        let file: GraphFile = serde_json::from_str(text)?;
        Self::from_file(&file)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("graph serializes")
    }

    /// Reads a graph file without checking regularity.
    pub fn read(path: impl AsRef<std::path::Path>) -> Result<Self, GraphError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    /// Reads a graph file and rejects it unless it is regular (including the
    /// Type 3 constant constraints).
    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, GraphError> {
        let g = Self::read(path)?;
        g.ensure_regular()?;
        Ok(g)
    }
}

/// Reference graphs for tests, the simulator and examples.
pub mod figures {
    use super::*;

    fn build(d: usize, nodes: &[&str], edges: &[(&str, &str)]) -> PatternGraph {
        PatternGraph::from_strs(d, nodes, edges).expect("built-in graph is well formed")
    }

    pub fn ccmv_3() -> PatternGraph {
        build(
            3,
            &["111", "110", "101", "010", "100"],
            &[("111", "110"), ("111", "101"), ("111", "010"), ("111", "100")],
        )
    }

    pub fn available_case_3() -> PatternGraph {
        build(3, &["111", "110", "100"], &[("111", "110"), ("110", "100"), ("111", "100")])
    }

    pub fn neighbor_case_3() -> PatternGraph {
        build(3, &["111", "110", "100"], &[("111", "110"), ("110", "100")])
    }

    pub fn general_3() -> PatternGraph {
        build(
            3,
            &["111", "110", "101", "010", "100"],
            &[
                ("111", "110"),
                ("111", "101"),
                ("110", "010"),
                ("110", "100"),
                ("101", "100"),
                ("111", "010"),
            ],
        )
    }

    /// [`general_3`] with every multi-parent node set to `ty`. Type 3 nodes
    /// get equal constants over their parents.
    pub fn general_3_typed(ty: CoeffType) -> PatternGraph {
        let mut g = general_3();
        for r in ["010", "100"] {
            let r: Pattern = r.parse().unwrap();
            g = match ty {
                CoeffType::Type3 => {
                    let pa = g.parents(&r).unwrap().clone();
                    let c = 1.0 / pa.len() as f64;
                    g.with_type3_constants(r, pa.into_iter().map(|s| (s, c)).collect()).unwrap()
                }
                _ => g.with_coeff_type(r, ty).unwrap(),
            };
        }
        g
    }

    pub const SIM_PATTERNS: [&str; 8] =
        ["11111", "01111", "10111", "11110", "11001", "10110", "11010", "11000"];

    const SIM_EDGES: [(&str, &str); 10] = [
        ("11111", "01111"),
        ("11111", "10111"),
        ("11111", "11110"),
        ("10111", "10110"),
        ("11110", "10110"),
        ("11110", "11010"),
        ("11001", "11000"),
        ("11010", "11000"),
        ("11111", "11001"),
        ("11111", "11010"),
    ];

    /// The eight-pattern simulation graph (also the correctly specified G1).
    pub fn simulation() -> PatternGraph {
        build(5, &SIM_PATTERNS, &SIM_EDGES)
    }

    pub fn sensitivity_g1() -> PatternGraph {
        simulation()
    }

    /// G1 without the edge `11111 -> 11010`.
    pub fn sensitivity_g2() -> PatternGraph {
        let edges: Vec<_> = SIM_EDGES.iter().copied().filter(|e| *e != ("11111", "11010")).collect();
        build(5, &SIM_PATTERNS, &edges)
    }

    /// CCMV over the simulation patterns.
    pub fn sensitivity_g3() -> PatternGraph {
        let edges: Vec<_> = SIM_PATTERNS[1..].iter().map(|r| ("11111", *r)).collect();
        build(5, &SIM_PATTERNS, &edges)
    }

    const SURVEY_PATTERNS: [&str; 8] =
        ["111111", "111101", "111011", "110111", "111001", "110011", "111000", "110001"];

    pub fn survey_ccmv() -> PatternGraph {
        let edges: Vec<_> = SURVEY_PATTERNS[1..].iter().map(|r| ("111111", *r)).collect();
        build(6, &SURVEY_PATTERNS, &edges)
    }

    pub fn survey_graph1() -> PatternGraph {
        build(
            6,
            &SURVEY_PATTERNS,
            &[
                ("111111", "111101"),
                ("111111", "111011"),
                ("111111", "110111"),
                ("111101", "111001"),
                ("111011", "110011"),
                ("110111", "110011"),
                ("111001", "111000"),
                ("110011", "110001"),
            ],
        )
    }

    pub fn survey_graph2() -> PatternGraph {
        build(
            6,
            &SURVEY_PATTERNS,
            &[
                ("111111", "111101"),
                ("111111", "111011"),
                ("111111", "110111"),
                ("111101", "111001"),
                ("111011", "111001"),
                ("111011", "110011"),
                ("110111", "110011"),
                ("111001", "111000"),
                ("111001", "110001"),
                ("110011", "110001"),
            ],
        )
    }

    pub fn all() -> Vec<(&'static str, PatternGraph)> {
        vec![
            ("ccmv_3", ccmv_3()),
            ("available_case_3", available_case_3()),
            ("neighbor_case_3", neighbor_case_3()),
            ("general_3", general_3()),
            ("general_3_type1", general_3_typed(CoeffType::Type1)),
            ("general_3_type2", general_3_typed(CoeffType::Type2)),
            ("general_3_type3", general_3_typed(CoeffType::Type3)),
            ("simulation", simulation()),
            ("sensitivity_g2", sensitivity_g2()),
            ("sensitivity_g3", sensitivity_g3()),
            ("survey_ccmv", survey_ccmv()),
            ("survey_graph1", survey_graph1()),
            ("survey_graph2", survey_graph2()),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::figures::*;
    use super::*;

    fn p(s: &str) -> Pattern {
        s.parse().unwrap()
    }

    #[test]
    fn parse_and_render() {
        assert_eq!(p("11111").bits(), vec![true; 5]);
        assert_eq!(p("101").bits(), vec![true, false, true]);
        assert_eq!(p("101").to_string(), "101");
        assert_eq!(parse_pattern("1a1"), Err(PatternError::BadChar { position: 2, found: 'a' }));
        assert_eq!(parse_pattern(""), Err(PatternError::Empty));
    }

    #[test]
    fn order_matches_string_order() {
        let mut v = vec![p("110"), p("011"), p("101"), p("001")];
        v.sort();
        let s: Vec<String> = v.iter().map(|x| x.to_string()).collect();
        assert_eq!(s, ["001", "011", "101", "110"]);
        assert!(p("111").dominates(&p("101")));
        assert!(!p("100").dominates(&p("110")));
        assert!(!p("101").dominates(&p("101")));
    }

    #[test]
    fn every_figure_is_regular() {
        for (name, g) in all() {
            assert!(g.validate().is_regular(), "{name}: {}", g.validate());
        }
    }

    #[test]
    fn order_violation_reported() {
        let g = PatternGraph::from_strs(3, &["111", "110", "100"], &[("111", "100"), ("100", "110")]).unwrap();
        let rep = g.validate();
        assert!(rep
            .violations
            .iter()
            .any(|v| matches!(v, Violation::OrderViolation { from, to } if *from == p("100") && *to == p("110"))));
        assert!(rep.to_string().contains("edge violates partial order"));
    }

    #[test]
    fn cycle_reported_with_witness() {
        let g = PatternGraph::from_strs(2, &["11", "01"], &[("11", "01"), ("01", "11")]).unwrap();
        let rep = g.validate();
        let cyc = rep.violations.iter().find_map(|v| match v {
            Violation::Cycle(w) => Some(w.clone()),
            _ => None,
        });
        let w = cyc.expect("cycle found");
        assert_eq!(w.first(), w.last());
        assert!(rep.to_string().contains("cycle"));
    }

    #[test]
    fn extra_source_and_unreachable() {
        let g = PatternGraph::from_strs(3, &["111", "110", "100"], &[("111", "110")]).unwrap();
        let rep = g.validate();
        assert!(rep.violations.contains(&Violation::ExtraSource(p("100"))));
        assert!(rep.violations.contains(&Violation::Unreachable(p("100"))));
        let g = PatternGraph::from_strs(2, &["10", "01"], &[]).unwrap();
        assert!(g.validate().violations.contains(&Violation::MissingCompletePattern));
    }

    #[test]
    fn type3_constants_checked() {
        let g = general_3();
        let r = p("100");
        let bad = g
            .clone()
            .with_type3_constants(r, [(p("110"), 0.7), (p("101"), 0.7)].into_iter().collect())
            .unwrap();
        assert!(!bad.validate().is_regular());
        let neg = g
            .clone()
            .with_type3_constants(r, [(p("110"), 1.5), (p("101"), -0.5)].into_iter().collect())
            .unwrap();
        assert!(!neg.validate().is_regular());
        let ok = g.with_type3_constants(r, [(p("110"), 0.25), (p("101"), 0.75)].into_iter().collect()).unwrap();
        assert!(ok.validate().is_regular());
    }

    #[test]
    fn parents_lookup() {
        let g = general_3();
        let pa: Vec<_> = g.parents(&p("100")).unwrap().iter().copied().collect();
        assert_eq!(pa, vec![p("101"), p("110")]);
        assert!(g.parents(&p("111")).unwrap().is_empty());
        let g = ccmv_3();
        assert_eq!(g.parents(&p("010")).unwrap().iter().copied().collect::<Vec<_>>(), vec![p("111")]);
        assert!(matches!(g.parents(&p("001")), Err(GraphError::UnknownNode(_))));
    }

    #[test]
    fn paths_general_and_simulation() {
        let g = general_3();
        let paths = g.enumerate_paths(&p("100")).unwrap();
        let got: Vec<Vec<String>> =
            paths.iter().map(|x| x.vertices.iter().map(|v| v.to_string()).collect()).collect();
        assert_eq!(got, vec![vec!["111", "101", "100"], vec!["111", "110", "100"]]);

        let g = simulation();
        let paths = g.enumerate_paths(&p("11000")).unwrap();
        let got: Vec<Vec<String>> =
            paths.iter().map(|x| x.vertices.iter().map(|v| v.to_string()).collect()).collect();
        assert_eq!(
            got,
            vec![
                vec!["11111", "11001", "11000"],
                vec!["11111", "11010", "11000"],
                vec!["11111", "11110", "11010", "11000"],
            ]
        );
        for r in ccmv_3().nodes().filter(|r| !r.is_complete()) {
            assert_eq!(ccmv_3().enumerate_paths(r).unwrap().len(), 1);
        }
    }

    #[test]
    fn paths_need_regular_graph() {
        let g = PatternGraph::from_strs(2, &["11", "01"], &[("11", "01"), ("01", "11")]).unwrap();
        assert!(matches!(g.enumerate_paths(&p("01")), Err(GraphError::NotRegular(_))));
    }

    #[test]
    fn processing_orders() {
        let names = |v: Vec<Pattern>| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        assert_eq!(
            names(simulation().processing_order()),
            ["01111", "10111", "11110", "10110", "11001", "11010", "11000"]
        );
        let g = PatternGraph::ccmv(2, [p("10"), p("01")]).unwrap();
        assert_eq!(names(g.processing_order()), ["01", "10"]);
        assert_eq!(names(neighbor_case_3().processing_order()), ["110", "100"]);
    }

    #[test]
    fn json_round_trip_and_default_type() {
        let text = r#"{"d":3,"nodes":["111","110","101","010","100"],
            "edges":[["111","110"],["111","101"],["111","010"],["111","100"]]}"#;
        let g = PatternGraph::from_json(text).unwrap();
        assert_eq!(g, ccmv_3());
        assert_eq!(g.coeff_type(&p("110")), CoeffType::Type1);
        let g3 = general_3_typed(CoeffType::Type3);
        let back = PatternGraph::from_json(&g3.to_json()).unwrap();
        assert_eq!(back, g3);
        assert_eq!(back.coeff_type(&p("100")), CoeffType::Type3);
    }
}
