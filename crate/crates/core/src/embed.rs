//! Classical MDS layout and complete-linkage clustering of a window's
//! distance matrix, used for rendering.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::dependence::DistanceMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding2D {
    pub countries: Vec<String>,
    pub coords: Vec<[f64; 2]>,
    /// Eigenvalues of the doubly-centered matrix, descending.
    pub eigenvalues: Vec<f64>,
    /// Negative eigenvalues (beyond rounding) clamped to zero.
    pub clamped_negatives: usize,
}

impl Embedding2D {
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.coords[i], self.coords[j]);
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
    }
}

/// Torgerson scaling: `B = -1/2 J D^2 J`, coordinates from the two largest
/// eigenpairs. Each axis is oriented so the lexicographically first country
/// (with a non-negligible coordinate) sits on the nonnegative side.
pub fn mds_embed(dist: &DistanceMatrix) -> Result<Embedding2D> {
    let n = dist.len();
    if n < 2 {
        return Err(Error::TooFewNodes(n));
    }
    let sq = DMatrix::from_fn(n, n, |i, j| dist.get(i, j).powi(2));
    let row_means: Vec<f64> = (0..n).map(|i| sq.row(i).sum() / n as f64).collect();
    let grand = row_means.iter().sum::<f64>() / n as f64;
    let b = DMatrix::from_fn(n, n, |i, j| -0.5 * (sq[(i, j)] - row_means[i] - row_means[j] + grand));

    let eig = SymmetricEigen::new(b);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &c| eig.eigenvalues[c].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&c)));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let magnitude = eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let clamped_negatives = eigenvalues.iter().filter(|&&v| v < -1e-10 * magnitude.max(1e-300)).count();

    let mut lex: Vec<usize> = (0..n).collect();
    lex.sort_by(|&a, &b| dist.countries()[a].cmp(&dist.countries()[b]));

    let mut coords = vec![[0.0; 2]; n];
    for (axis, &ei) in order.iter().take(2).enumerate() {
        let lambda = eig.eigenvalues[ei].max(0.0);
        let s = lambda.sqrt();
        let mut col: Vec<f64> = (0..n).map(|i| eig.eigenvectors[(i, ei)] * s).collect();
        let mean = col.iter().sum::<f64>() / n as f64;
        col.iter_mut().for_each(|v| *v -= mean);
        let tiny = 1e-9 * col.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if let Some(&pivot) = lex.iter().find(|&&i| col[i].abs() > tiny) {
            if col[pivot] < 0.0 {
                col.iter_mut().for_each(|v| *v = -*v);
            }
        }
        for i in 0..n {
            coords[i][axis] = col[i] + 0.0;
        }
    }
    Ok(Embedding2D {
        countries: dist.countries().to_vec(),
        coords,
        eigenvalues,
        clamped_negatives,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterLabels {
    pub countries: Vec<String>,
    /// Label per country in `0..k`, numbered by each cluster's
    /// lexicographically smallest member.
    pub labels: Vec<usize>,
    pub k: usize,
    /// Linkage distance of each merge performed, in order.
    pub merge_heights: Vec<f64>,
}

/// Agglomerative complete linkage cut at `k` clusters. Among equally close
/// cluster pairs, the one with the lexicographically smallest
/// (min member, min member) code pair merges first.
pub fn complete_linkage_clusters(dist: &DistanceMatrix, k: usize) -> Result<ClusterLabels> {
    let n = dist.len();
    if k < 1 || k > n {
        return Err(Error::BadK { k, n });
    }
    let names = dist.countries();
    let mut clusters: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let min_name = |c: &Vec<usize>| c.iter().map(|&i| &names[i]).min().unwrap().clone();
    let mut merge_heights = Vec::with_capacity(n - k);

    while clusters.len() > k {
        let mut best: Option<(f64, (String, String), usize, usize)> = None;
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let link = clusters[a]
                    .iter()
                    .flat_map(|&i| clusters[b].iter().map(move |&j| (i, j)))
                    .map(|(i, j)| dist.get(i, j))
                    .fold(f64::NEG_INFINITY, f64::max);
                let (na, nb) = (min_name(&clusters[a]), min_name(&clusters[b]));
                let key = if na < nb { (na, nb) } else { (nb, na) };
                let better = match &best {
                    None => true,
                    Some((bl, bk, _, _)) => link < *bl || (link == *bl && key < *bk),
                };
                if better {
                    best = Some((link, key, a, b));
                }
            }
        }
        let (link, _, a, b) = best.expect("at least two clusters");
        let merged = clusters.remove(b);
        clusters[a].extend(merged);
        merge_heights.push(link);
    }

    clusters.sort_by_key(|c| min_name(c));
    let mut labels = vec![0; n];
    for (l, c) in clusters.iter().enumerate() {
        for &i in c {
            labels[i] = l;
        }
    }
    Ok(ClusterLabels {
        countries: names.to_vec(),
        labels,
        k,
        merge_heights,
    })
}
