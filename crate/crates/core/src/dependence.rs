//! Per-window dependence structure: signed Pearson correlations of price
//! levels, the `1 - rho^2` distance, and the minimum spanning tree.

use std::cmp::Ordering;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::WindowView;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageRule {
    /// A country enters a window if observed on at least this fraction of it.
    pub min_coverage_fraction: f64,
    /// Every pair of included countries must overlap on at least this fraction.
    pub min_pair_overlap_fraction: f64,
}

impl Default for CoverageRule {
    fn default() -> Self {
        CoverageRule {
            min_coverage_fraction: 0.5,
            min_pair_overlap_fraction: 0.5,
        }
    }
}

impl CoverageRule {
    pub fn validate(&self) -> Result<()> {
        for (name, f) in [
            ("min_coverage_fraction", self.min_coverage_fraction),
            ("min_pair_overlap_fraction", self.min_pair_overlap_fraction),
        ] {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1], got {f}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExclusionReason {
    /// Observed months below the coverage threshold.
    LowCoverage { observed: usize },
    /// Dropped to resolve an undefined pair (short overlap or constant series).
    UndefinedPair { with: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub country: String,
    pub reason: ExclusionReason,
}

/// Symmetric signed correlations over the countries included in a window.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub window_index: usize,
    pub label_year: i32,
    countries: Vec<String>,
    rho: Vec<f64>,
    pub excluded: Vec<Exclusion>,
}

impl CorrelationMatrix {
    /// Builds a matrix from explicit values. Checks symmetry, unit diagonal
    /// and `|rho| <= 1`.
    pub fn new(countries: Vec<String>, rho: Vec<f64>) -> Result<Self> {
        let n = countries.len();
        if n < 2 {
            return Err(Error::TooFewNodes(n));
        }
        if rho.len() != n * n {
            return Err(Error::ShapeError(format!("{} entries for {n} countries", rho.len())));
        }
        for i in 0..n {
            if rho[i * n + i] != 1.0 {
                return Err(Error::BadInput(format!("diagonal entry {i} is not 1")));
            }
            for j in 0..n {
                let v = rho[i * n + j];
                if !v.is_finite() || v.abs() > 1.0 || v != rho[j * n + i] {
                    return Err(Error::BadInput(format!("invalid correlation at ({i},{j})")));
                }
            }
        }
        Ok(CorrelationMatrix {
            window_index: 0,
            label_year: 0,
            countries,
            rho,
            excluded: Vec::new(),
        })
    }

    pub fn countries(&self) -> &[String] {
        &self.countries
    }

    pub fn len(&self) -> usize {
        self.countries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.countries.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rho[i * self.len() + j]
    }
}

/// Observed index range `[first, last]` of a contiguous series.
fn observed_range(s: &[Option<f64>]) -> Option<(usize, usize)> {
    Some((s.iter().position(Option::is_some)?, s.iter().rposition(Option::is_some)?))
}

enum PairStat {
    Rho(f64),
    ShortOverlap,
    Constant,
}

fn pair_stat(a: &[Option<f64>], b: &[Option<f64>], min_overlap: f64) -> PairStat {
    let (Some((a0, a1)), Some((b0, b1))) = (observed_range(a), observed_range(b)) else {
        return PairStat::ShortOverlap;
    };
    let lo = a0.max(b0);
    let hi = a1.min(b1);
    if hi < lo || ((hi - lo + 1) as f64) < min_overlap {
        return PairStat::ShortOverlap;
    }
    // Contiguous ranges: every entry in lo..=hi is present in both.
    let x: Vec<f64> = a[lo..=hi].iter().map(|v| v.unwrap()).collect();
    let y: Vec<f64> = b[lo..=hi].iter().map(|v| v.unwrap()).collect();
    match pearson(&x, &y) {
        Some(r) => PairStat::Rho(r),
        None => PairStat::Constant,
    }
}

fn is_constant(x: &[f64]) -> bool {
    x.iter().all(|&v| v == x[0])
}

/// Two-pass Pearson correlation. `None` if either series is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len());
    if x.is_empty() || is_constant(x) || is_constant(y) {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Correlations among the countries of `window` that pass the coverage rule.
///
/// Countries below the per-country coverage are excluded first. Then, while
/// some included pair has too short an overlap or a constant series on it,
/// one country is dropped: the one in the most such pairs, then the lowest
/// coverage, then the lexicographically larger code.
pub fn window_correlations(window: &WindowView<'_>, rule: &CoverageRule) -> Result<CorrelationMatrix> {
    rule.validate()?;
    let len = window.len();
    let codes = window.countries();
    let min_cov = rule.min_coverage_fraction * len as f64;
    let min_overlap = rule.min_pair_overlap_fraction * len as f64;

    let coverage: Vec<usize> = (0..codes.len()).map(|c| window.observed(c)).collect();
    let mut excluded = Vec::new();
    let mut included = Vec::new();
    for (c, &obs) in coverage.iter().enumerate() {
        if obs > 0 && obs as f64 >= min_cov {
            included.push(c);
        } else {
            excluded.push(Exclusion {
                country: codes[c].clone(),
                reason: ExclusionReason::LowCoverage { observed: obs },
            });
        }
    }

    let sparse = |included: &[usize]| Error::WindowTooSparse {
        window_index: window.window_index,
        detail: format!("{} of {} countries usable", included.len(), codes.len()),
    };
    if included.len() < 2 {
        return Err(sparse(&included));
    }

    let n_all = codes.len();
    let mut stats: Vec<Option<f64>> = vec![None; n_all * n_all];
    let mut undefined: Vec<bool> = vec![false; n_all * n_all];
    for (p, &i) in included.iter().enumerate() {
        for &j in &included[p + 1..] {
            match pair_stat(window.series(i), window.series(j), min_overlap) {
                PairStat::Rho(r) => {
                    stats[i * n_all + j] = Some(r);
                    stats[j * n_all + i] = Some(r);
                }
                PairStat::ShortOverlap | PairStat::Constant => {
                    undefined[i * n_all + j] = true;
                    undefined[j * n_all + i] = true;
                }
            }
        }
    }

    loop {
        let culprit = included
            .iter()
            .copied()
            .map(|i| (i, included.iter().filter(|&&j| undefined[i * n_all + j]).count()))
            .filter(|&(_, bad)| bad > 0)
            .min_by(|&(a, bad_a), &(b, bad_b)| {
                bad_b
                    .cmp(&bad_a)
                    .then_with(|| coverage[a].cmp(&coverage[b]))
                    .then_with(|| codes[b].cmp(&codes[a]))
            })
            .map(|(i, _)| i);
        let Some(c) = culprit else { break };
        let partner = included
            .iter()
            .copied()
            .find(|&j| undefined[c * n_all + j])
            .expect("culprit has an undefined pair");
        included.retain(|&i| i != c);
        excluded.push(Exclusion {
            country: codes[c].clone(),
            reason: ExclusionReason::UndefinedPair {
                with: codes[partner].clone(),
            },
        });
    }
    if included.len() < 2 {
        return Err(sparse(&included));
    }

    let n = included.len();
    let mut rho = vec![0.0; n * n];
    for (p, &i) in included.iter().enumerate() {
        rho[p * n + p] = 1.0;
        for (q, &j) in included.iter().enumerate().skip(p + 1) {
            let r = stats[i * n_all + j].expect("defined pair");
            rho[p * n + q] = r;
            rho[q * n + p] = r;
        }
    }
    Ok(CorrelationMatrix {
        window_index: window.window_index,
        label_year: window.label_year,
        countries: included.iter().map(|&i| codes[i].clone()).collect(),
        rho,
        excluded,
    })
}

/// Symmetric distance matrix with zero diagonal. Keeps `|rho|` alongside for
/// edge rendering.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    pub window_index: usize,
    pub label_year: i32,
    countries: Vec<String>,
    d: Vec<f64>,
    abs_rho: Vec<f64>,
}

impl DistanceMatrix {
    /// Wraps an arbitrary finite, nonnegative, symmetric, zero-diagonal
    /// matrix. `|rho|` is recovered as `sqrt(1 - d)` clamped to `[0, 1]`.
    pub fn from_distances(countries: Vec<String>, d: Vec<f64>) -> Result<Self> {
        let n = countries.len();
        if d.len() != n * n {
            return Err(Error::ShapeError(format!("{} entries for {n} countries", d.len())));
        }
        for i in 0..n {
            if d[i * n + i] != 0.0 {
                return Err(Error::BadInput(format!("diagonal entry {i} is not 0")));
            }
            for j in 0..n {
                let v = d[i * n + j];
                if !v.is_finite() || v < 0.0 || v != d[j * n + i] {
                    return Err(Error::BadInput(format!("invalid distance at ({i},{j})")));
                }
            }
        }
        let abs_rho = d.iter().map(|&v| (1.0 - v).clamp(0.0, 1.0).sqrt()).collect();
        Ok(DistanceMatrix {
            window_index: 0,
            label_year: 0,
            countries,
            d,
            abs_rho,
        })
    }

    pub fn countries(&self) -> &[String] {
        &self.countries
    }

    pub fn len(&self) -> usize {
        self.countries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.countries.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.len() + j]
    }

    pub fn abs_rho(&self, i: usize, j: usize) -> f64 {
        self.abs_rho[i * self.len() + j]
    }

    pub fn index_of(&self, country: &str) -> Option<usize> {
        self.countries.iter().position(|c| c == country)
    }

    /// CSV with the country codes as header and row labels.
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(sink);
        let mut header = vec![String::new()];
        header.extend(self.countries.iter().cloned());
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec = vec![self.countries[i].clone()];
            rec.extend((0..self.len()).map(|j| self.get(i, j).to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<distance sink>", e))?;
        Ok(())
    }
}

/// `d_ij = 1 - rho_ij^2`.
pub fn to_distance(corr: &CorrelationMatrix) -> DistanceMatrix {
    let n = corr.len();
    let mut d = vec![0.0; n * n];
    let mut abs_rho = vec![1.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let r = corr.get(i, j);
                d[i * n + j] = 1.0 - r * r;
                abs_rho[i * n + j] = r.abs();
            }
        }
    }
    DistanceMatrix {
        window_index: corr.window_index,
        label_year: corr.label_year,
        countries: corr.countries.clone(),
        d,
        abs_rho,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEdge {
    /// Node indices; `a`'s code sorts before `b`'s.
    pub a: usize,
    pub b: usize,
    pub weight: f64,
    pub abs_rho: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpanningTree {
    pub window_index: usize,
    pub label_year: i32,
    pub nodes: Vec<String>,
    pub edges: Vec<TreeEdge>,
}

impl SpanningTree {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        let mut w: Vec<f64> = self.edges.iter().map(|e| e.weight).collect();
        w.sort_by(f64::total_cmp);
        w.iter().sum()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.len()];
        for e in &self.edges {
            deg[e.a] += 1;
            deg[e.b] += 1;
        }
        deg
    }

    /// Weighted adjacency lists `(neighbor, weight)`, neighbors in edge order.
    pub fn adjacency(&self) -> Vec<Vec<(usize, f64)>> {
        let mut adj = vec![Vec::new(); self.len()];
        for e in &self.edges {
            adj[e.a].push((e.b, e.weight));
            adj[e.b].push((e.a, e.weight));
        }
        adj
    }

    /// Unordered edge set as sorted code pairs.
    pub fn edge_names(&self) -> Vec<(String, String)> {
        let mut v: Vec<_> = self
            .edges
            .iter()
            .map(|e| (self.nodes[e.a].clone(), self.nodes[e.b].clone()))
            .collect();
        v.sort();
        v
    }

    /// Checks the tree invariants: n-1 edges, connected, acyclic.
    pub fn is_spanning_tree(&self) -> bool {
        let n = self.len();
        if n == 0 || self.edges.len() != n - 1 {
            return false;
        }
        let mut uf = UnionFind::new(n);
        self.edges.iter().all(|e| uf.union(e.a, e.b))
    }

    /// Edge list CSV `i,j,d,abs_rho` with country codes.
    pub fn write_edges_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(sink);
        w.write_record(["i", "j", "d", "abs_rho"])?;
        for e in &self.edges {
            w.write_record([
                self.nodes[e.a].as_str(),
                self.nodes[e.b].as_str(),
                &e.weight.to_string(),
                &e.abs_rho.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<edge sink>", e))?;
        Ok(())
    }
}

pub(crate) struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    pub(crate) fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    pub(crate) fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Returns false if `a` and `b` were already connected.
    pub(crate) fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            Ordering::Less => self.parent[ra] = rb,
            Ordering::Greater => self.parent[rb] = ra,
            Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
        true
    }
}

/// Kruskal over the complete graph. Edges are ordered by weight, then by
/// the lexicographic `(smaller code, larger code)` pair, so the result does
/// not depend on the order of countries in the matrix.
pub fn minimum_spanning_tree(dist: &DistanceMatrix) -> Result<SpanningTree> {
    let n = dist.len();
    if n < 2 {
        return Err(Error::TooFewNodes(n));
    }
    let names = dist.countries();
    let mut edges: Vec<(usize, usize)> = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            if !dist.get(i, j).is_finite() {
                return Err(Error::BadInput(format!("non-finite distance {}-{}", names[i], names[j])));
            }
            if names[i] < names[j] {
                edges.push((i, j));
            } else {
                edges.push((j, i));
            }
        }
    }
    edges.sort_by(|&(a1, b1), &(a2, b2)| {
        dist.get(a1, b1)
            .total_cmp(&dist.get(a2, b2))
            .then_with(|| names[a1].cmp(&names[a2]))
            .then_with(|| names[b1].cmp(&names[b2]))
    });

    let mut uf = UnionFind::new(n);
    let mut tree = Vec::with_capacity(n - 1);
    for (a, b) in edges {
        if uf.union(a, b) {
            tree.push(TreeEdge {
                a,
                b,
                weight: dist.get(a, b),
                abs_rho: dist.abs_rho(a, b),
            });
            if tree.len() == n - 1 {
                break;
            }
        }
    }
    Ok(SpanningTree {
        window_index: dist.window_index,
        label_year: dist.label_year,
        nodes: names.to_vec(),
        edges: tree,
    })
}
