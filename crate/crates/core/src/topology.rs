//! Five scalar descriptors of a spanning tree and their assembly into a
//! K x T panel.
//!
//! Distance indices use d-weighted paths along the tree:
//! - mean nearest-neighbor distance: mean over nodes of the lightest incident edge;
//! - mean path length: mean over unordered pairs of the tree path weight;
//! - eccentricity: the tree diameter (or, optionally, the mean per-node eccentricity).
//!
//! Connectivity indices use degrees: the population standard deviation of
//! degrees, and the mean over nodes of the average degree of their neighbors.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::dependence::SpanningTree;
use crate::error::{Error, Result};

pub const INDEX_NAMES: [&str; 5] = [
    "mean_nn_distance",
    "mean_path_length",
    "eccentricity",
    "degree_std",
    "mean_neighbor_degree",
];

pub const K_INDICES: usize = INDEX_NAMES.len();

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum EccentricityMode {
    /// Maximum path weight over all pairs.
    #[default]
    Diameter,
    /// Per-node maximum path weight, averaged over nodes.
    MeanNodeEccentricity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TopologyIndexVector {
    pub window_index: usize,
    pub node_count: usize,
    pub mean_nn_distance: f64,
    pub mean_path_length: f64,
    pub eccentricity: f64,
    pub degree_std: f64,
    pub mean_neighbor_degree: f64,
}

impl TopologyIndexVector {
    pub fn values(&self) -> [f64; K_INDICES] {
        [
            self.mean_nn_distance,
            self.mean_path_length,
            self.eccentricity,
            self.degree_std,
            self.mean_neighbor_degree,
        ]
    }
}

/// All-pairs path weights in a tree, one DFS per source.
fn tree_distances(adj: &[Vec<(usize, f64)>]) -> Vec<Vec<f64>> {
    let n = adj.len();
    let mut out = vec![vec![0.0; n]; n];
    let mut stack = Vec::with_capacity(n);
    for (src, row) in out.iter_mut().enumerate() {
        stack.clear();
        stack.push((src, usize::MAX));
        while let Some((u, parent)) = stack.pop() {
            for &(v, w) in &adj[u] {
                if v != parent {
                    row[v] = row[u] + w;
                    stack.push((v, u));
                }
            }
        }
    }
    out
}

pub fn compute_indices(tree: &SpanningTree) -> Result<TopologyIndexVector> {
    compute_indices_with(tree, EccentricityMode::Diameter)
}

pub fn compute_indices_with(tree: &SpanningTree, mode: EccentricityMode) -> Result<TopologyIndexVector> {
    let n = tree.len();
    if n < 2 {
        return Err(Error::TooFewNodes(n));
    }
    if !tree.is_spanning_tree() {
        return Err(Error::BadInput(format!(
            "window {}: edge list is not a spanning tree",
            tree.window_index
        )));
    }
    let adj = tree.adjacency();
    let nf = n as f64;

    let mean_nn_distance = adj
        .iter()
        .map(|nb| nb.iter().map(|&(_, w)| w).fold(f64::INFINITY, f64::min))
        .sum::<f64>()
        / nf;

    let dist = tree_distances(&adj);
    let mut pair_sum = 0.0;
    let mut diameter: f64 = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            pair_sum += dist[i][j];
            diameter = diameter.max(dist[i][j]);
        }
    }
    let mean_path_length = pair_sum / (nf * (nf - 1.0) / 2.0);
    let eccentricity = match mode {
        EccentricityMode::Diameter => diameter,
        EccentricityMode::MeanNodeEccentricity => {
            dist.iter().map(|row| row.iter().copied().fold(0.0, f64::max)).sum::<f64>() / nf
        }
    };

    let deg: Vec<f64> = adj.iter().map(|nb| nb.len() as f64).collect();
    let mean_deg = deg.iter().sum::<f64>() / nf;
    let degree_std = (deg.iter().map(|d| (d - mean_deg).powi(2)).sum::<f64>() / nf).sqrt();
    let mean_neighbor_degree = adj
        .iter()
        .map(|nb| nb.iter().map(|&(v, _)| deg[v]).sum::<f64>() / nb.len() as f64)
        .sum::<f64>()
        / nf;

    Ok(TopologyIndexVector {
        window_index: tree.window_index,
        node_count: n,
        mean_nn_distance,
        mean_path_length,
        eccentricity,
        degree_std,
        mean_neighbor_degree,
    })
}

/// K = 5 index rows over T windows, row order as in [`INDEX_NAMES`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexPanel {
    pub label_years: Vec<i32>,
    pub node_counts: Vec<usize>,
    /// `rows[k][t]`
    pub rows: Vec<Vec<f64>>,
}

impl IndexPanel {
    pub fn new(label_years: Vec<i32>, node_counts: Vec<usize>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let t = label_years.len();
        if rows.len() != K_INDICES {
            return Err(Error::ShapeError(format!("expected {K_INDICES} index rows, got {}", rows.len())));
        }
        if node_counts.len() != t || rows.iter().any(|r| r.len() != t) {
            return Err(Error::ShapeError("index rows, labels and node counts differ in length".into()));
        }
        if t < 2 {
            return Err(Error::NonContiguousWindows(format!("need at least 2 windows, got {t}")));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::BadInput("non-finite index value".into()));
        }
        Ok(IndexPanel {
            label_years,
            node_counts,
            rows,
        })
    }

    pub fn windows(&self) -> usize {
        self.label_years.len()
    }

    pub fn column(&self, t: usize) -> [f64; K_INDICES] {
        std::array::from_fn(|k| self.rows[k][t])
    }

    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(sink);
        let mut header = vec!["label_year", "node_count"];
        header.extend(INDEX_NAMES);
        w.write_record(&header)?;
        for t in 0..self.windows() {
            let mut rec = vec![self.label_years[t].to_string(), self.node_counts[t].to_string()];
            rec.extend(self.column(t).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<index sink>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(source: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let mut expected = vec!["label_year".to_string(), "node_count".to_string()];
        expected.extend(INDEX_NAMES.iter().map(|s| s.to_string()));
        if header != expected {
            return Err(Error::BadInput(format!("unexpected index CSV header {header:?}")));
        }
        let mut labels = Vec::new();
        let mut counts = Vec::new();
        let mut rows = vec![Vec::new(); K_INDICES];
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let bad = |col: &str, f: &str| Error::BadValue {
                row: i + 1,
                column: col.to_string(),
                reason: format!("not a number: {f:?}"),
            };
            labels.push(rec[0].parse().map_err(|_| bad("label_year", &rec[0]))?);
            counts.push(rec[1].parse().map_err(|_| bad("node_count", &rec[1]))?);
            for k in 0..K_INDICES {
                let f = &rec[k + 2];
                rows[k].push(f.parse().map_err(|_| bad(INDEX_NAMES[k], f))?);
            }
        }
        IndexPanel::new(labels, counts, rows)
    }
}

/// Assembles per-window index vectors. Trees must carry consecutive window
/// indices; at least two are required.
pub fn build_index_panel(trees: &[SpanningTree]) -> Result<IndexPanel> {
    build_index_panel_with(trees, EccentricityMode::Diameter)
}

pub fn build_index_panel_with(trees: &[SpanningTree], mode: EccentricityMode) -> Result<IndexPanel> {
    let vectors = trees
        .iter()
        .map(|t| compute_indices_with(t, mode).map_err(|e| e.in_window(t.window_index, t.label_year)))
        .collect::<Result<Vec<_>>>()?;
    let labels = trees.iter().map(|t| t.label_year).collect();
    index_panel_from_vectors(&vectors, labels)
}

pub fn index_panel_from_vectors(vectors: &[TopologyIndexVector], label_years: Vec<i32>) -> Result<IndexPanel> {
    if vectors.len() < 2 {
        return Err(Error::NonContiguousWindows(format!(
            "need at least 2 windows, got {}",
            vectors.len()
        )));
    }
    for pair in vectors.windows(2) {
        if pair[1].window_index != pair[0].window_index + 1 {
            return Err(Error::NonContiguousWindows(format!(
                "window {} followed by {}",
                pair[0].window_index, pair[1].window_index
            )));
        }
    }
    let rows = (0..K_INDICES).map(|k| vectors.iter().map(|v| v.values()[k]).collect()).collect();
    IndexPanel::new(label_years, vectors.iter().map(|v| v.node_count).collect(), rows)
}
