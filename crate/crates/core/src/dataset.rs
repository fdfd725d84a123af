//! Observation tables with a missingness mask.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pattern_graph::{Pattern, PatternGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Continuous,
    Discrete,
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("empty file")]
    Empty,
    #[error("row {row} has {found} fields, header has {expected}")]
    Ragged { row: usize, found: usize, expected: usize },
    #[error("cannot parse {value:?} at row {row}, column {column:?}")]
    BadCell { row: usize, column: String, value: String },
    #[error("no columns")]
    NoColumns,
    #[error("unknown column {0:?}")]
    UnknownColumn(String),
    #[error("dataset has {data} columns, graph has dimension {graph}")]
    DimensionMismatch { data: usize, graph: usize },
    #[error("row {row} does not observe column {column:?} required by pattern {pattern}")]
    MaskedCell { row: usize, column: String, pattern: Pattern },
    #[error("row index {0} out of range")]
    RowOutOfRange(usize),
}

/// An `N x d` table whose missing cells are tracked by a mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n_cols: usize,
    // row-major, masked cells hold 0.0 and are never read through the public API
    values: Vec<f64>,
    observed: Vec<bool>,
    column_names: Vec<String>,
    column_kinds: Vec<ColumnKind>,
    row_pattern: Vec<Pattern>,
    pattern_index: BTreeMap<Pattern, Vec<usize>>,
}

/// The observed columns of a pattern restricted to some rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedView {
    pub rows: Vec<usize>,
    pub columns: Vec<usize>,
    /// row-major `rows.len() x columns.len()`
    pub values: Vec<f64>,
}

impl ObservedView {
    pub fn row(&self, k: usize) -> &[f64] {
        let w = self.columns.len();
        &self.values[k * w..(k + 1) * w]
    }
}

#[derive(Debug, Clone)]
pub struct CsvOptions {
    pub na_token: String,
    pub kind_overrides: BTreeMap<String, ColumnKind>,
}

impl Default for CsvOptions {
    fn default() -> Self {
        CsvOptions { na_token: "NA".into(), kind_overrides: BTreeMap::new() }
    }
}

/// Discrete when there are at most this many distinct observed values, all integral.
pub const DISCRETE_MAX_LEVELS: usize = 10;

pub fn infer_kind(values: impl Iterator<Item = f64>) -> ColumnKind {
    let mut distinct: BTreeSet<u64> = BTreeSet::new();
    for v in values {
        if v.fract() != 0.0 {
            return ColumnKind::Continuous;
        }
        distinct.insert(v.to_bits());
        if distinct.len() > DISCRETE_MAX_LEVELS {
            return ColumnKind::Continuous;
        }
    }
    ColumnKind::Discrete
}

impl Dataset {
    /// Builds a dataset from rows of optional values. Column kinds are
    /// inferred unless given.
    pub fn from_rows(
        column_names: Vec<String>,
        rows: &[Vec<Option<f64>>],
        kinds: Option<Vec<ColumnKind>>,
    ) -> Result<Self, DataError> {
        let d = column_names.len();
        if d == 0 {
            return Err(DataError::NoColumns);
        }
        let mut values = Vec::with_capacity(rows.len() * d);
        let mut observed = Vec::with_capacity(rows.len() * d);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(DataError::Ragged { row: i + 1, found: row.len(), expected: d });
            }
            for v in row {
                values.push(v.unwrap_or(0.0));
                observed.push(v.is_some());
            }
        }
        let column_kinds = match kinds {
            Some(k) => {
                assert_eq!(k.len(), d, "one kind per column");
                k
            }
            None => (0..d)
                .map(|j| infer_kind(rows.iter().filter_map(|r| r[j])))
                .collect(),
        };
        Ok(Self::assemble(column_names, column_kinds, values, observed))
    }

    fn assemble(
        column_names: Vec<String>,
        column_kinds: Vec<ColumnKind>,
        values: Vec<f64>,
        observed: Vec<bool>,
    ) -> Self {
        let d = column_names.len();
        let n = values.len() / d;
        let mut row_pattern = Vec::with_capacity(n);
        let mut pattern_index: BTreeMap<Pattern, Vec<usize>> = BTreeMap::new();
        for i in 0..n {
            let p = Pattern::from_bits(&observed[i * d..(i + 1) * d]);
            row_pattern.push(p);
            pattern_index.entry(p).or_default().push(i);
        }
        Dataset { n_cols: d, values, observed, column_names, column_kinds, row_pattern, pattern_index }
    }

    /// Reads a CSV file with a header row.
    pub fn load_csv(path: impl AsRef<Path>, opts: &CsvOptions) -> Result<Self, DataError> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)
            .map_err(|source| DataError::Io { path: path.display().to_string(), source })?;
        Self::read_csv(file, opts)
    }

    pub fn read_csv(reader: impl std::io::Read, opts: &CsvOptions) -> Result<Self, DataError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
        if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
            return Err(DataError::Empty);
        }
        for name in opts.kind_overrides.keys() {
            if !header.contains(name) {
                return Err(DataError::UnknownColumn(name.clone()));
            }
        }
        let d = header.len();
        let mut rows: Vec<Vec<Option<f64>>> = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = i + 1;
            if rec.len() != d {
                return Err(DataError::Ragged { row: line, found: rec.len(), expected: d });
            }
            let mut row = Vec::with_capacity(d);
            for (j, cell) in rec.iter().enumerate() {
                let cell = cell.trim();
                if cell == opts.na_token {
                    row.push(None);
                } else {
                    let v: f64 = cell.parse().map_err(|_| DataError::BadCell {
                        row: line,
                        column: header[j].clone(),
                        value: cell.to_string(),
                    })?;
                    if !v.is_finite() {
                        return Err(DataError::BadCell { row: line, column: header[j].clone(), value: cell.to_string() });
                    }
                    row.push(Some(v));
                }
            }
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(DataError::Empty);
        }
        let kinds: Vec<ColumnKind> = (0..d)
            .map(|j| {
                opts.kind_overrides
                    .get(&header[j])
                    .copied()
                    .unwrap_or_else(|| infer_kind(rows.iter().filter_map(|r| r[j])))
            })
            .collect();
        Self::from_rows(header, &rows, Some(kinds))
    }

    /// Writes the table as CSV; masked cells become `na_token`. Values use
    /// the shortest representation that parses back to the same `f64`.
    pub fn write_csv(&self, writer: impl std::io::Write, na_token: &str) -> Result<(), DataError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(&self.column_names)?;
        for i in 0..self.n_rows() {
            let rec: Vec<String> = (0..self.n_cols)
                .map(|j| match self.get(i, j) {
                    Some(v) => format!("{v:?}"),
                    None => na_token.to_string(),
                })
                .collect();
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| DataError::Io { path: "<writer>".into(), source: e })?;
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.row_pattern.len()
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn column_index(&self, name: &str) -> Result<usize, DataError> {
        self.column_names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| DataError::UnknownColumn(name.to_string()))
    }

    pub fn column_kinds(&self) -> &[ColumnKind] {
        &self.column_kinds
    }

    pub fn set_column_kind(&mut self, j: usize, kind: ColumnKind) {
        self.column_kinds[j] = kind;
    }

    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.observed[i * self.n_cols + j]
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let k = i * self.n_cols + j;
        self.observed[k].then(|| self.values[k])
    }

    /// The full row. Only legal for complete-case rows.
    pub fn complete_row(&self, i: usize) -> &[f64] {
        assert!(self.row_pattern[i].is_complete(), "row {i} is not a complete case");
        &self.values[i * self.n_cols..(i + 1) * self.n_cols]
    }

    /// Raw row storage with masked cells zeroed, for callers that have
    /// already checked the mask.
    pub(crate) fn raw_row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn row_pattern(&self, i: usize) -> Pattern {
        self.row_pattern[i]
    }

    pub fn row_patterns(&self) -> &[Pattern] {
        &self.row_pattern
    }

    pub fn pattern_index(&self) -> &BTreeMap<Pattern, Vec<usize>> {
        &self.pattern_index
    }

    pub fn rows_of(&self, r: &Pattern) -> &[usize] {
        self.pattern_index.get(r).map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn complete_pattern(&self) -> Pattern {
        Pattern::complete(self.n_cols)
    }

    pub fn complete_rows(&self) -> &[usize] {
        self.rows_of(&self.complete_pattern())
    }

    /// Values of `r`'s observed columns on `rows`.
    pub fn observed_view(&self, r: &Pattern, rows: &[usize]) -> Result<ObservedView, DataError> {
        if r.dim() != self.n_cols {
            return Err(DataError::DimensionMismatch { data: self.n_cols, graph: r.dim() });
        }
        let columns = r.observed_columns();
        let mut values = Vec::with_capacity(rows.len() * columns.len());
        for &i in rows {
            if i >= self.n_rows() {
                return Err(DataError::RowOutOfRange(i));
            }
            for &j in &columns {
                match self.get(i, j) {
                    Some(v) => values.push(v),
                    None => {
                        return Err(DataError::MaskedCell {
                            row: i,
                            column: self.column_names[j].clone(),
                            pattern: *r,
                        })
                    }
                }
            }
        }
        Ok(ObservedView { rows: rows.to_vec(), columns, values })
    }

    /// Copy of the rows `idx` (with repetition), e.g. for bootstrap resamples.
    pub fn select_rows(&self, idx: &[usize]) -> Dataset {
        let d = self.n_cols;
        let mut values = Vec::with_capacity(idx.len() * d);
        let mut observed = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            values.extend_from_slice(&self.values[i * d..(i + 1) * d]);
            observed.extend_from_slice(&self.observed[i * d..(i + 1) * d]);
        }
        Self::assemble(self.column_names.clone(), self.column_kinds.clone(), values, observed)
    }

    /// Compares the data's patterns with a graph's node set.
    pub fn check_against_graph(&self, g: &PatternGraph, overlap_floor: f64) -> Result<GraphCheck, DataError> {
        if g.dim() != self.n_cols {
            return Err(DataError::DimensionMismatch { data: self.n_cols, graph: g.dim() });
        }
        let mut fatal = Vec::new();
        let mut warnings = Vec::new();
        for (p, rows) in &self.pattern_index {
            if !g.contains(p) {
                fatal.push(Finding::PatternNotInGraph { pattern: *p, rows: rows.len() });
            }
        }
        for p in g.nodes() {
            if self.rows_of(p).is_empty() && !p.is_complete() {
                warnings.push(Finding::EmptyNode(*p));
            }
        }
        let n_complete = self.complete_rows().len();
        if n_complete == 0 {
            fatal.push(Finding::NoCompleteCases);
        } else {
            let share = n_complete as f64 / self.n_rows() as f64;
            if share < overlap_floor {
                warnings.push(Finding::LowOverlap { share, floor: overlap_floor });
            }
        }
        Ok(GraphCheck { fatal, warnings, n_complete })
    }
}

pub const DEFAULT_OVERLAP_FLOOR: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub enum Finding {
    PatternNotInGraph { pattern: Pattern, rows: usize },
    NoCompleteCases,
    EmptyNode(Pattern),
    LowOverlap { share: f64, floor: f64 },
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Finding::PatternNotInGraph { pattern, rows } => {
                write!(f, "pattern not in graph: {pattern} ({rows} rows)")
            }
            Finding::NoCompleteCases => write!(f, "no complete cases"),
            Finding::EmptyNode(p) => write!(f, "graph node {p} has no rows"),
            Finding::LowOverlap { share, floor } => {
                write!(f, "complete-case share {share:.4} is below the overlap floor {floor}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphCheck {
    pub fatal: Vec<Finding>,
    pub warnings: Vec<Finding>,
    pub n_complete: usize,
}

impl GraphCheck {
    pub fn is_clean(&self) -> bool {
        self.fatal.is_empty() && self.warnings.is_empty()
    }

    pub fn is_usable(&self) -> bool {
        self.fatal.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pattern_graph::figures;

    fn p(s: &str) -> Pattern {
        s.parse().unwrap()
    }

    fn load(text: &str) -> Result<Dataset, DataError> {
        Dataset::read_csv(text.as_bytes(), &CsvOptions::default())
    }

    #[test]
    fn mask_from_na_token() {
        let ds = load("a,b\n1,2\nNA,3\n4,5\n").unwrap();
        let masked = (0..3).flat_map(|i| (0..2).map(move |j| (i, j))).filter(|&(i, j)| !ds.is_observed(i, j)).count();
        assert_eq!(masked, 1);
        assert_eq!(ds.get(1, 0), None);
        assert_eq!(ds.get(1, 1), Some(3.0));
        assert_eq!(ds.row_pattern(1), p("01"));
    }

    #[test]
    fn pattern_index_partitions_rows() {
        let ds = load("a,b\n1,2\n1,NA\n4,5\n0,NA\n").unwrap();
        assert_eq!(ds.pattern_index().len(), 2);
        assert_eq!(ds.rows_of(&p("11")), &[0, 2]);
        assert_eq!(ds.rows_of(&p("10")), &[1, 3]);
        let total: usize = ds.pattern_index().values().map(|v| v.len()).sum();
        assert_eq!(total, ds.n_rows());
    }

    #[test]
    fn bad_cell_names_location() {
        let err = load("a,b\n1,2\n3,abc\n").unwrap_err();
        match err {
            DataError::BadCell { row, column, value } => {
                assert_eq!((row, column.as_str(), value.as_str()), (2, "b", "abc"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(load("a,b\n1,2\n3\n"), Err(DataError::Ragged { row: 2, .. })));
        assert!(matches!(load(""), Err(DataError::Empty)));
        assert!(matches!(load("a,b\n"), Err(DataError::Empty)));
    }

    #[test]
    fn kind_inference_and_override() {
        let ds = load("y,x\n0,1.5\n1,2.5\n1,NA\n").unwrap();
        assert_eq!(ds.column_kinds(), &[ColumnKind::Discrete, ColumnKind::Continuous]);
        let mut opts = CsvOptions::default();
        opts.kind_overrides.insert("y".into(), ColumnKind::Continuous);
        let ds = Dataset::read_csv("y,x\n0,1.5\n1,2.5\n".as_bytes(), &opts).unwrap();
        assert_eq!(ds.column_kinds()[0], ColumnKind::Continuous);
        let many: String = (0..12).map(|i| format!("{i}\n")).collect();
        let ds = load(&format!("z\n{many}")).unwrap();
        assert_eq!(ds.column_kinds()[0], ColumnKind::Continuous);
    }

    #[test]
    fn graph_checks() {
        let g = figures::simulation();
        let mut text = String::from("a,b,c,d,e\n");
        for _ in 0..4 {
            text.push_str("1,1,1,1,1\n");
        }
        for _ in 0..6 {
            text.push_str("NA,1,1,1,1\n");
        }
        let ds = load(&text).unwrap();
        let chk = ds.check_against_graph(&g, DEFAULT_OVERLAP_FLOOR).unwrap();
        assert!(chk.fatal.is_empty());
        assert_eq!(chk.n_complete, 4);

        let ccmv = PatternGraph::ccmv(5, [p("01111")]).unwrap();
        assert!(ds.check_against_graph(&ccmv, DEFAULT_OVERLAP_FLOOR).unwrap().is_clean());

        text.push_str("NA,NA,1,1,NA\n");
        let ds = load(&text).unwrap();
        let chk = ds.check_against_graph(&g, DEFAULT_OVERLAP_FLOOR).unwrap();
        assert!(chk.fatal.iter().any(|f| f.to_string().contains("pattern not in graph")));

        let ds = load("a,b,c,d,e\nNA,1,1,1,1\n").unwrap();
        let chk = ds.check_against_graph(&g, DEFAULT_OVERLAP_FLOOR).unwrap();
        assert!(chk.fatal.contains(&Finding::NoCompleteCases));

        let small = load("a,b\n1,2\n").unwrap();
        assert!(matches!(small.check_against_graph(&g, 0.05), Err(DataError::DimensionMismatch { .. })));
    }

    #[test]
    fn observed_views() {
        let ds = load("a,b,c\n1,2,3\n4,5,6\nNA,8,9\n").unwrap();
        let v = ds.observed_view(&p("101"), &[0, 1]).unwrap();
        assert_eq!(v.columns, vec![0, 2]);
        assert_eq!(v.row(1), &[4.0, 6.0]);
        let full = ds.observed_view(&p("111"), ds.complete_rows()).unwrap();
        assert_eq!(full.values, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert!(matches!(ds.observed_view(&p("110"), &[2]), Err(DataError::MaskedCell { row: 2, .. })));
    }

    #[test]
    fn csv_round_trip() {
        let ds = load("a,b\n0.1,2\nNA,-3.25e-7\n1e300,NA\n").unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf, "NA").unwrap();
        let back = Dataset::read_csv(buf.as_slice(), &CsvOptions::default()).unwrap();
        assert_eq!(back, ds);
    }
}
