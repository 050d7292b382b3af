//! Static renderings (SVG 1.1, Graphviz DOT) and the report writer.
//!
//! Every emitted byte depends only on the inputs: coordinates are printed
//! with fixed precision and all orderings are lexicographic.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dependence::SpanningTree;
use crate::embed::{ClusterLabels, Embedding2D};
use crate::error::{Error, Result};
use crate::segment::{standardize, Segmentation};
use crate::topology::{IndexPanel, INDEX_NAMES};

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderOptions {
    /// Stroke width for `|rho| = 1`.
    pub edge_width_per_unit_rho: f64,
    pub canvas: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            edge_width_per_unit_rho: 6.0,
            canvas: 600.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedWindow {
    pub mds_svg: String,
    pub tree_svg: String,
    pub dot: String,
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn svg_open(out: &mut String, w: f64, h: f64) {
    let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}">"#
    );
    let _ = writeln!(out, r#"<rect x="0" y="0" width="{w:.0}" height="{h:.0}" fill="white"/>"#);
}

/// Maps each tree node to its position in `names`; errors if the sets differ.
fn align(tree: &SpanningTree, names: &[String], what: &str) -> Result<Vec<usize>> {
    let mut a: Vec<&String> = tree.nodes.iter().collect();
    let mut b: Vec<&String> = names.iter().collect();
    a.sort();
    b.sort();
    if a != b {
        return Err(Error::ConsistencyError(format!(
            "window {}: tree nodes differ from {what} countries",
            tree.window_index
        )));
    }
    Ok(tree.nodes.iter().map(|n| names.iter().position(|m| m == n).unwrap()).collect())
}

fn edge_width(opts: &RenderOptions, abs_rho: f64) -> f64 {
    (opts.edge_width_per_unit_rho * abs_rho).max(0.25)
}

/// MDS scatter, hierarchical tree view and DOT file for one window.
pub fn render_window_graph(
    tree: &SpanningTree,
    emb: &Embedding2D,
    labels: &ClusterLabels,
    opts: &RenderOptions,
) -> Result<RenderedWindow> {
    let emb_idx = align(tree, &emb.countries, "embedding")?;
    let lab_idx = align(tree, &labels.countries, "cluster")?;
    let color = |node: usize| PALETTE[labels.labels[lab_idx[node]] % PALETTE.len()];
    Ok(RenderedWindow {
        mds_svg: mds_svg(tree, emb, &emb_idx, &color, opts),
        tree_svg: tree_svg(tree, &color, opts),
        dot: dot(tree, &color, opts),
    })
}

fn mds_svg(
    tree: &SpanningTree,
    emb: &Embedding2D,
    emb_idx: &[usize],
    color: &dyn Fn(usize) -> &'static str,
    opts: &RenderOptions,
) -> String {
    let size = opts.canvas;
    let margin = 40.0;
    let pts: Vec<[f64; 2]> = emb_idx.iter().map(|&i| emb.coords[i]).collect();
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in &pts {
        for a in 0..2 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-12);
    let scale = (size - 2.0 * margin) / span;
    let map = |p: [f64; 2]| {
        let x = margin + (p[0] - lo[0]) * scale + ((size - 2.0 * margin) - (hi[0] - lo[0]) * scale) / 2.0;
        let y = size - margin - (p[1] - lo[1]) * scale - ((size - 2.0 * margin) - (hi[1] - lo[1]) * scale) / 2.0;
        (x, y)
    };

    let mut out = String::new();
    svg_open(&mut out, size, size);
    let _ = writeln!(
        out,
        r#"<text x="10" y="20" font-family="sans-serif" font-size="14">window {} ({})</text>"#,
        tree.window_index, tree.label_year
    );
    for e in &tree.edges {
        let (x1, y1) = map(pts[e.a]);
        let (x2, y2) = map(pts[e.b]);
        let _ = writeln!(
            out,
            r##"<line class="edge" x1="{x1:.3}" y1="{y1:.3}" x2="{x2:.3}" y2="{y2:.3}" stroke="#444444" stroke-width="{:.3}"/>"##,
            edge_width(opts, e.abs_rho)
        );
    }
    let mut order: Vec<usize> = (0..tree.len()).collect();
    order.sort_by(|&a, &b| tree.nodes[a].cmp(&tree.nodes[b]));
    for i in order {
        let (x, y) = map(pts[i]);
        let _ = writeln!(
            out,
            r#"<circle class="node" cx="{x:.3}" cy="{y:.3}" r="7" fill="{}" stroke="black" stroke-width="0.5"/>"#,
            color(i)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.3}" y="{:.3}" font-family="sans-serif" font-size="11">{}</text>"#,
            x + 9.0,
            y - 4.0,
            xml_escape(&tree.nodes[i])
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Root: highest degree, ties to the smallest code.
pub fn tree_root(tree: &SpanningTree) -> usize {
    let deg = tree.degrees();
    (0..tree.len())
        .min_by(|&a, &b| deg[b].cmp(&deg[a]).then_with(|| tree.nodes[a].cmp(&tree.nodes[b])))
        .unwrap_or(0)
}

/// Rooted layout: depth and horizontal slot per node, children in code order.
fn hierarchical_layout(tree: &SpanningTree) -> (Vec<usize>, Vec<f64>) {
    let n = tree.len();
    let root = tree_root(tree);
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut depth = vec![0usize; n];
    let mut seen = vec![false; n];
    let adj = tree.adjacency();
    let mut queue = std::collections::VecDeque::from([root]);
    seen[root] = true;
    while let Some(u) = queue.pop_front() {
        let mut kids: Vec<usize> = adj[u].iter().map(|&(v, _)| v).filter(|&v| !seen[v]).collect();
        kids.sort_by(|&a, &b| tree.nodes[a].cmp(&tree.nodes[b]));
        for &v in &kids {
            seen[v] = true;
            depth[v] = depth[u] + 1;
            queue.push_back(v);
        }
        children[u] = kids;
    }
    let mut x = vec![0.0; n];
    let mut next_leaf = 0.0;
    fn place(u: usize, children: &[Vec<usize>], x: &mut [f64], next_leaf: &mut f64) {
        if children[u].is_empty() {
            x[u] = *next_leaf;
            *next_leaf += 1.0;
        } else {
            for &c in &children[u] {
                place(c, children, x, next_leaf);
            }
            let first = x[children[u][0]];
            let last = x[*children[u].last().unwrap()];
            x[u] = (first + last) / 2.0;
        }
    }
    place(root, &children, &mut x, &mut next_leaf);
    (depth, x)
}

fn tree_svg(tree: &SpanningTree, color: &dyn Fn(usize) -> &'static str, opts: &RenderOptions) -> String {
    let (depth, slot) = hierarchical_layout(tree);
    let leaves = slot.iter().fold(0.0f64, |m, &v| m.max(v)) + 1.0;
    let levels = depth.iter().copied().max().unwrap_or(0) as f64 + 1.0;
    let (w, h) = (opts.canvas.max(40.0 * leaves + 80.0), (90.0 * levels + 60.0).max(200.0));
    let px = |i: usize| 40.0 + (slot[i] + 0.5) * (w - 80.0) / leaves;
    let py = |i: usize| 50.0 + depth[i] as f64 * 90.0;

    let mut out = String::new();
    svg_open(&mut out, w, h);
    for e in &tree.edges {
        let _ = writeln!(
            out,
            r##"<line class="edge" x1="{:.3}" y1="{:.3}" x2="{:.3}" y2="{:.3}" stroke="#444444" stroke-width="{:.3}"/>"##,
            px(e.a),
            py(e.a),
            px(e.b),
            py(e.b),
            edge_width(opts, e.abs_rho)
        );
    }
    let mut order: Vec<usize> = (0..tree.len()).collect();
    order.sort_by(|&a, &b| tree.nodes[a].cmp(&tree.nodes[b]));
    for i in order {
        let _ = writeln!(
            out,
            r#"<circle class="node" cx="{:.3}" cy="{:.3}" r="7" fill="{}" stroke="black" stroke-width="0.5"/>"#,
            px(i),
            py(i),
            color(i)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.3}" y="{:.3}" font-family="sans-serif" font-size="11" text-anchor="middle">{}</text>"#,
            px(i),
            py(i) + 20.0,
            xml_escape(&tree.nodes[i])
        );
    }
    out.push_str("</svg>\n");
    out
}

fn dot(tree: &SpanningTree, color: &dyn Fn(usize) -> &'static str, opts: &RenderOptions) -> String {
    let q = |s: &str| format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""));
    let mut out = format!("graph mst_{} {{\n  node [style=filled];\n", tree.window_index);
    let mut order: Vec<usize> = (0..tree.len()).collect();
    order.sort_by(|&a, &b| tree.nodes[a].cmp(&tree.nodes[b]));
    for i in order {
        let _ = writeln!(out, "  {} [label={}, fillcolor={}];", q(&tree.nodes[i]), q(&tree.nodes[i]), q(color(i)));
    }
    let mut edges: Vec<_> = tree.edges.iter().collect();
    edges.sort_by(|x, y| (&tree.nodes[x.a], &tree.nodes[x.b]).cmp(&(&tree.nodes[y.a], &tree.nodes[y.b])));
    for e in edges {
        let _ = writeln!(
            out,
            "  {} -- {} [penwidth={:.3}];",
            q(&tree.nodes[e.a]),
            q(&tree.nodes[e.b]),
            edge_width(opts, e.abs_rho)
        );
    }
    out.push_str("}\n");
    out
}

/// Line plot of the standardized index rows; one stacked panel per
/// segmentation with its era plateaus and one vertical line per break.
pub fn index_plot_svg(panel: &IndexPanel, segs: &[Segmentation]) -> Result<String> {
    let (x, _) = standardize(panel)?;
    let t_len = panel.windows();
    let (w, panel_h, top) = (900.0, 320.0, 30.0);
    let panels = segs.len().max(1);
    let h = top + panel_h * panels as f64 + 20.0;
    let (left, right) = (60.0, 160.0);
    let lo = x.as_slice().iter().copied().fold(f64::INFINITY, f64::min).min(-1.0);
    let hi = x.as_slice().iter().copied().fold(f64::NEG_INFINITY, f64::max).max(1.0);
    let px = |t: f64| left + t * (w - left - right) / (t_len - 1) as f64;

    let mut out = String::new();
    svg_open(&mut out, w, h);
    for p in 0..panels {
        let y0 = top + panel_h * p as f64;
        let py = |v: f64| y0 + 20.0 + (hi - v) / (hi - lo) * (panel_h - 50.0);
        let title = segs.get(p).map_or_else(
            || "standardized indices".to_string(),
            |s| format!("lambda = {} ({}), {} eras", s.lambda, s.penalty.name(), s.era_count()),
        );
        let _ = writeln!(
            out,
            r#"<text x="{left:.0}" y="{:.3}" font-family="sans-serif" font-size="13">{}</text>"#,
            y0 + 12.0,
            xml_escape(&title)
        );
        let _ = writeln!(
            out,
            r##"<rect x="{left:.0}" y="{:.3}" width="{:.3}" height="{:.3}" fill="none" stroke="#999999"/>"##,
            y0 + 20.0,
            w - left - right,
            panel_h - 50.0
        );
        for t in (0..t_len).step_by(t_len.div_ceil(10).max(1)) {
            let _ = writeln!(
                out,
                r#"<text x="{:.3}" y="{:.3}" font-family="sans-serif" font-size="10" text-anchor="middle">{}</text>"#,
                px(t as f64),
                y0 + panel_h - 16.0,
                panel.label_years[t]
            );
        }
        for (k, name) in INDEX_NAMES.iter().enumerate() {
            let pts: Vec<String> =
                (0..t_len).map(|t| format!("{:.3},{:.3}", px(t as f64), py(x.get(k, t)))).collect();
            let _ = writeln!(
                out,
                r#"<polyline class="series" points="{}" fill="none" stroke="{}" stroke-width="1" stroke-opacity="0.6"/>"#,
                pts.join(" "),
                PALETTE[k]
            );
            if p == 0 {
                let ly = top + 40.0 + 18.0 * k as f64;
                let _ = writeln!(
                    out,
                    r#"<text x="{:.3}" y="{ly:.3}" font-family="sans-serif" font-size="11" fill="{}">{name}</text>"#,
                    w - right + 10.0,
                    PALETTE[k]
                );
            }
        }
        if let Some(s) = segs.get(p) {
            for era in &s.eras {
                for (k, &level) in era.level_standardized.iter().enumerate() {
                    let _ = writeln!(
                        out,
                        r#"<line class="level" x1="{:.3}" y1="{:.3}" x2="{:.3}" y2="{:.3}" stroke="{}" stroke-width="2.5"/>"#,
                        px(era.start_window as f64 - 0.5).max(left),
                        py(level),
                        px(era.end_window as f64 + 0.5).min(w - right),
                        py(level),
                        PALETTE[k % PALETTE.len()]
                    );
                }
            }
            for &cp in &s.change_points {
                let xb = px(cp as f64 + 0.5);
                let _ = writeln!(
                    out,
                    r##"<line class="break" x1="{xb:.3}" y1="{:.3}" x2="{xb:.3}" y2="{:.3}" stroke="#000000" stroke-dasharray="4,3"/>"##,
                    y0 + 20.0,
                    y0 + panel_h - 30.0
                );
            }
        }
    }
    out.push_str("</svg>\n");
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the output directory, `/`-separated.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub files: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn extend(&mut self, other: Manifest) {
        self.files.extend(other.files);
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Counts by file extension.
    pub fn count_by_extension(&self) -> BTreeMap<String, usize> {
        let mut m = BTreeMap::new();
        for f in &self.files {
            let ext = Path::new(&f.path).extension().and_then(|e| e.to_str()).unwrap_or("").to_string();
            *m.entry(ext).or_insert(0) += 1;
        }
        m
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes files under a root directory and records them in a manifest.
pub struct Sink {
    root: PathBuf,
    manifest: Manifest,
}

impl Sink {
    pub fn new(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(Sink {
            root,
            manifest: Manifest::default(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn emit(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.manifest.files.push(ManifestEntry {
            path: rel.to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    pub fn into_manifest(self) -> Manifest {
        self.manifest
    }

    /// Writes `manifest.json` (not listed in itself) and returns the manifest.
    pub fn finish(self) -> Result<Manifest> {
        let path = self.root.join("manifest.json");
        fs::write(&path, self.manifest.to_json()?).map_err(|e| Error::io(&path, e))?;
        Ok(self.manifest)
    }
}

pub fn segmentation_file_name(i: usize) -> String {
    format!("segmentation_{i:02}.json")
}

/// Index CSV, one JSON per segmentation, and the overlay plot.
pub fn write_report_into(sink: &mut Sink, panel: &IndexPanel, segs: &[Segmentation]) -> Result<()> {
    for s in segs {
        if s.label_years.len() != panel.windows() {
            return Err(Error::ConsistencyError(format!(
                "segmentation covers {} windows, panel has {}",
                s.label_years.len(),
                panel.windows()
            )));
        }
    }
    let mut csv = Vec::new();
    panel.write_csv(&mut csv)?;
    sink.emit("indices.csv", &csv)?;
    for (i, s) in segs.iter().enumerate() {
        let json = serde_json::to_string_pretty(&s.report())? + "\n";
        sink.emit(&segmentation_file_name(i), json.as_bytes())?;
    }
    sink.emit("indices_plot.svg", index_plot_svg(panel, segs)?.as_bytes())?;
    Ok(())
}

/// Writes the report files into `dir` and returns their manifest.
pub fn write_report(panel: &IndexPanel, segs: &[Segmentation], dir: impl AsRef<Path>) -> Result<Manifest> {
    let mut sink = Sink::new(dir.as_ref())?;
    write_report_into(&mut sink, panel, segs)?;
    Ok(sink.into_manifest())
}

/// Writes the three window views as `windows/<year>_w<idx>_{mds.svg,tree.svg,.dot}`.
pub fn emit_window(sink: &mut Sink, tree: &SpanningTree, r: &RenderedWindow) -> Result<()> {
    let stem = format!("windows/{}_w{:03}", tree.label_year, tree.window_index);
    sink.emit(&format!("{stem}_mds.svg"), r.mds_svg.as_bytes())?;
    sink.emit(&format!("{stem}_tree.svg"), r.tree_svg.as_bytes())?;
    sink.emit(&format!("{stem}.dot"), r.dot.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dependence::{minimum_spanning_tree, DistanceMatrix};
    use crate::embed::{complete_linkage_clusters, mds_embed};

    fn three() -> (SpanningTree, Embedding2D, ClusterLabels) {
        // |rho| = sqrt(1 - d): AB 0.9, BC 0.6 are the tree edges.
        let d = |r: f64| 1.0 - r * r;
        let m = vec![0.0, d(0.9), d(0.3), d(0.9), 0.0, d(0.6), d(0.3), d(0.6), 0.0];
        let dm = DistanceMatrix::from_distances(vec!["A".into(), "B".into(), "C".into()], m).unwrap();
        (
            minimum_spanning_tree(&dm).unwrap(),
            mds_embed(&dm).unwrap(),
            complete_linkage_clusters(&dm, 2).unwrap(),
        )
    }

    fn attr(line: &str, name: &str) -> f64 {
        let key = format!(r#"{name}=""#);
        let start = line.find(&key).unwrap() + key.len();
        line[start..].split('"').next().unwrap().parse().unwrap()
    }

    #[test]
    fn three_node_svg_elements_and_widths() {
        let (t, e, c) = three();
        let r = render_window_graph(&t, &e, &c, &RenderOptions::default()).unwrap();
        for svg in [&r.mds_svg, &r.tree_svg] {
            assert_eq!(svg.matches(r#"class="node""#).count(), 3);
            let edges: Vec<&str> = svg.lines().filter(|l| l.contains(r#"class="edge""#)).collect();
            assert_eq!(edges.len(), 2);
            let widths: Vec<f64> = edges.iter().map(|l| attr(l, "stroke-width")).collect();
            // Kruskal emits AB (d smaller, |rho| 0.9) before BC (|rho| 0.6).
            assert!(widths[0] > widths[1]);
            assert!((widths[0] / widths[1] - 0.9 / 0.6).abs() < 1e-3);
        }
        assert_eq!(r.dot.matches("--").count(), 2);
        assert_eq!(r.dot.matches("fillcolor").count(), 3);
        assert!(r.dot.contains("penwidth="));
    }

    #[test]
    fn two_nodes_single_edge() {
        let dm = DistanceMatrix::from_distances(vec!["X".into(), "Y".into()], vec![0.0, 0.5, 0.5, 0.0]).unwrap();
        let t = minimum_spanning_tree(&dm).unwrap();
        let r = render_window_graph(&t, &mds_embed(&dm).unwrap(), &complete_linkage_clusters(&dm, 1).unwrap(), &RenderOptions::default())
            .unwrap();
        assert_eq!(r.mds_svg.matches(r#"class="edge""#).count(), 1);
        assert_eq!(r.tree_svg.matches(r#"class="edge""#).count(), 1);
    }

    #[test]
    fn mismatched_countries_rejected() {
        let (t, e, _) = three();
        let other = DistanceMatrix::from_distances(vec!["A".into(), "B".into(), "Z".into()], vec![0.0, 0.1, 0.2, 0.1, 0.0, 0.3, 0.2, 0.3, 0.0]).unwrap();
        let c = complete_linkage_clusters(&other, 2).unwrap();
        assert!(matches!(render_window_graph(&t, &e, &c, &RenderOptions::default()), Err(Error::ConsistencyError(_))));
    }

    #[test]
    fn root_is_hub() {
        let (t, _, _) = three();
        assert_eq!(t.nodes[tree_root(&t)], "B");
    }
}
