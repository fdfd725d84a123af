#![allow(dead_code)]

use std::collections::BTreeMap;

use pgbal::{Pattern, PatternGraph};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn pat(s: &str) -> Pattern {
    s.parse().unwrap()
}

/// A random regular graph: at most `max_nodes` nodes over `d <= max_d`
/// coordinates, each non-source node getting a random nonempty set of
/// strictly larger parents.
pub fn random_regular_graph(seed: u64, max_nodes: usize, max_d: usize) -> PatternGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = rng.random_range(2..=max_d);
    let full = Pattern::complete(d);
    let mut pool: Vec<Pattern> = (0..(1u64 << d) - 1)
        .map(|m| Pattern::from_bits(&(0..d).map(|j| m >> (d - 1 - j) & 1 == 1).collect::<Vec<_>>()))
        .collect();
    pool.shuffle(&mut rng);
    let k = rng.random_range(1..max_nodes).min(pool.len());
    let mut nodes = vec![full];
    nodes.extend_from_slice(&pool[..k]);
    let mut edges = Vec::new();
    for &r in &nodes[1..] {
        let cands: Vec<Pattern> = nodes.iter().copied().filter(|s| s.dominates(&r)).collect();
        let mut chosen: Vec<Pattern> = cands.iter().copied().filter(|_| rng.random_bool(0.5)).collect();
        if chosen.is_empty() {
            chosen.push(cands[rng.random_range(0..cands.len())]);
        }
        edges.extend(chosen.into_iter().map(|s| (s, r)));
    }
    PatternGraph::new(d, nodes, edges).unwrap()
}

/// Every path from the source to `r`, found by trying every edge at each step.
pub fn brute_paths(g: &PatternGraph, r: &Pattern) -> Vec<Vec<Pattern>> {
    let edges: Vec<(Pattern, Pattern)> = g.edges().collect();
    let mut out = Vec::new();
    let mut stack = vec![vec![g.source()]];
    while let Some(path) = stack.pop() {
        let last = *path.last().unwrap();
        if last == *r {
            out.push(path);
            continue;
        }
        for &(a, b) in &edges {
            if a == last {
                let mut next = path.clone();
                next.push(b);
                stack.push(next);
            }
        }
    }
    out.sort();
    out
}

/// `Q^r` as a sum over source-to-`r` paths of the product of node odds.
pub fn path_sum(g: &PatternGraph, odds: &BTreeMap<Pattern, f64>, r: &Pattern) -> f64 {
    brute_paths(g, r).iter().map(|p| p[1..].iter().map(|v| odds[v]).product::<f64>()).sum()
}

/// Positive odds per non-source node, drawn in `[0.2, 3]`.
pub fn random_odds(g: &PatternGraph, seed: u64) -> BTreeMap<Pattern, f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    g.processing_order().into_iter().map(|r| (r, rng.random_range(0.2..3.0))).collect()
}

/// Newton-Raphson for the logistic MLE written against nalgebra directly,
/// as an oracle for the library solver. Rows of `x` include the intercept.
pub fn irls(x: &[Vec<f64>], y: &[f64], w: &[f64]) -> Vec<f64> {
    use nalgebra::{DMatrix, DVector};
    let q = x[0].len();
    let mut beta = DVector::<f64>::zeros(q);
    for _ in 0..200 {
        let mut g = DVector::<f64>::zeros(q);
        let mut h = DMatrix::<f64>::zeros(q, q);
        for ((xi, yi), wi) in x.iter().zip(y).zip(w) {
            let xv = DVector::from_column_slice(xi);
            let p = 1.0 / (1.0 + (-xv.dot(&beta)).exp());
            g += &xv * (wi * (yi - p));
            h += &xv * xv.transpose() * (wi * p * (1.0 - p));
        }
        let step = h.lu().solve(&g).unwrap();
        beta += &step;
        if step.amax() < 1e-14 {
            break;
        }
    }
    beta.iter().copied().collect()
}
