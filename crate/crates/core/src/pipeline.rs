//! End-to-end orchestration: panel -> windows -> trees -> indices -> eras
//! -> report, plus the per-stage entry points used by the CLI.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use log::{info, warn};

use crate::dependence::{
    minimum_spanning_tree, to_distance, window_correlations, CorrelationMatrix, CoverageRule, DistanceMatrix,
    ExclusionReason, SpanningTree,
};
use crate::embed::{complete_linkage_clusters, mds_embed};
use crate::error::{Error, Result};
use crate::exec::{try_map_ordered, ExecMode};
use crate::panel::{load_panel, slice_windows, write_panel, PricePanel, WindowSpec};
use crate::render::{emit_window, render_window_graph, write_report_into, Manifest, RenderOptions, RenderedWindow, Sink};
use crate::segment::{nesting_report, Penalty, Segmentation, Segmenter, SegmenterConfig};
use crate::synth::{generate, SynthConfig};
use crate::topology::{build_index_panel_with, EccentricityMode, IndexPanel};

pub const EFFECTIVE_CONFIG_FILE: &str = "effective_config.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub input: Option<PathBuf>,
    pub outdir: PathBuf,
    pub window: WindowSpec,
    pub coverage: CoverageRule,
    pub segmenter: SegmenterConfig,
    pub lambdas: Vec<f64>,
    pub target_eras: Vec<usize>,
    pub render: bool,
    pub clusters: usize,
    pub eccentricity: EccentricityMode,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            input: None,
            outdir: PathBuf::from("out"),
            window: WindowSpec::default(),
            coverage: CoverageRule::default(),
            segmenter: SegmenterConfig::default(),
            lambdas: Vec::new(),
            target_eras: Vec::new(),
            render: true,
            clusters: 5,
            eccentricity: EccentricityMode::Diameter,
            seed: 0,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {value:?}"))),
    }
}

pub fn parse_penalty(value: &str) -> Result<Penalty> {
    match value {
        "group-l2" => Ok(Penalty::GroupL2),
        "literal-l1" => Ok(Penalty::LiteralL1),
        _ => Err(Error::Config(format!("penalty: expected group-l2 or literal-l1, got {value:?}"))),
    }
}

fn penalty_key(p: Penalty) -> &'static str {
    match p {
        Penalty::GroupL2 => "group-l2",
        Penalty::LiteralL1 => "literal-l1",
    }
}

fn eccentricity_key(m: EccentricityMode) -> &'static str {
    match m {
        EccentricityMode::Diameter => "diameter",
        EccentricityMode::MeanNodeEccentricity => "mean-node",
    }
}

/// Splits `key = value` lines; `#` starts a comment.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", no + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl PipelineConfig {
    /// Applies one layer of settings (a config file, or the command line).
    /// A list key given in a layer replaces the list from earlier layers.
    pub fn apply_layer(&mut self, pairs: &[(String, String)]) -> Result<()> {
        let (mut lambdas_seen, mut targets_seen) = (false, false);
        for (key, value) in pairs {
            let (k, v) = (key.as_str(), value.as_str());
            match k {
                "input" => self.input = Some(PathBuf::from(v)),
                "outdir" => self.outdir = PathBuf::from(v),
                "window-months" => self.window.length_months = parse(k, v)?,
                "step-months" => self.window.step_months = parse(k, v)?,
                "min-coverage" => self.coverage.min_coverage_fraction = parse(k, v)?,
                "min-pair-overlap" => self.coverage.min_pair_overlap_fraction = parse(k, v)?,
                "lambda" => {
                    if !lambdas_seen {
                        self.lambdas.clear();
                        lambdas_seen = true;
                    }
                    self.lambdas.push(parse(k, v)?);
                }
                "target-eras" => {
                    if !targets_seen {
                        self.target_eras.clear();
                        targets_seen = true;
                    }
                    self.target_eras.push(parse(k, v)?);
                }
                "penalty" => self.segmenter.penalty = parse_penalty(v)?,
                "tol" => self.segmenter.convergence_tol = parse(k, v)?,
                "max-iter" => self.segmenter.max_iterations = parse(k, v)?,
                "changepoint-eps" => self.segmenter.changepoint_eps = parse(k, v)?,
                "clusters" => self.clusters = parse(k, v)?,
                "no-render" => self.render = !parse_bool(k, v)?,
                "eccentricity" => {
                    self.eccentricity = match v {
                        "diameter" => EccentricityMode::Diameter,
                        "mean-node" => EccentricityMode::MeanNodeEccentricity,
                        _ => return Err(Error::Config(format!("eccentricity: unknown mode {v:?}"))),
                    }
                }
                "seed" => self.seed = parse(k, v)?,
                _ => return Err(Error::Config(format!("unknown key {k:?}"))),
            }
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = PipelineConfig::default();
        cfg.apply_layer(&parse_config_text(&text)?)?;
        Ok(cfg)
    }

    /// Every setting as `key = value` lines, readable by [`parse_config_text`].
    pub fn to_config_text(&self) -> String {
        let mut s = String::new();
        if let Some(input) = &self.input {
            let _ = writeln!(s, "input = {}", input.display());
        }
        let _ = writeln!(s, "outdir = {}", self.outdir.display());
        let _ = writeln!(s, "window-months = {}", self.window.length_months);
        let _ = writeln!(s, "step-months = {}", self.window.step_months);
        let _ = writeln!(s, "min-coverage = {}", self.coverage.min_coverage_fraction);
        let _ = writeln!(s, "min-pair-overlap = {}", self.coverage.min_pair_overlap_fraction);
        for l in &self.lambdas {
            let _ = writeln!(s, "lambda = {l}");
        }
        for t in &self.target_eras {
            let _ = writeln!(s, "target-eras = {t}");
        }
        let _ = writeln!(s, "penalty = {}", penalty_key(self.segmenter.penalty));
        let _ = writeln!(s, "tol = {}", self.segmenter.convergence_tol);
        let _ = writeln!(s, "max-iter = {}", self.segmenter.max_iterations);
        let _ = writeln!(s, "changepoint-eps = {}", self.segmenter.changepoint_eps);
        let _ = writeln!(s, "clusters = {}", self.clusters);
        let _ = writeln!(s, "no-render = {}", !self.render);
        let _ = writeln!(s, "eccentricity = {}", eccentricity_key(self.eccentricity));
        let _ = writeln!(s, "seed = {}", self.seed);
        s
    }

    fn validate_common(&self) -> Result<()> {
        self.window.validate()?;
        self.coverage.validate()?;
        self.segmenter.with_lambda(0.0).validate()?;
        if self.clusters == 0 {
            return Err(Error::Config("clusters must be at least 1".into()));
        }
        Ok(())
    }

    fn validate_segmentation(&self) -> Result<()> {
        if self.lambdas.is_empty() && self.target_eras.is_empty() {
            return Err(Error::Config("need at least one lambda or target-eras value".into()));
        }
        if let Some(l) = self.lambdas.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
            return Err(Error::Config(format!("lambda must be finite and >= 0, got {l}")));
        }
        Ok(())
    }

    fn input_path(&self) -> Result<&Path> {
        self.input.as_deref().ok_or_else(|| Error::Config("missing input path".into()))
    }
}

/// Everything computed for one window up to its spanning tree.
#[derive(Debug, Clone)]
pub struct WindowAnalysis {
    pub correlations: CorrelationMatrix,
    pub distances: DistanceMatrix,
    pub tree: SpanningTree,
}

pub fn read_panel_file(path: &Path) -> Result<PricePanel> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    load_panel(BufReader::new(f))
}

pub fn analyze_windows(
    panel: &PricePanel,
    spec: &WindowSpec,
    coverage: &CoverageRule,
    mode: ExecMode,
) -> Result<Vec<WindowAnalysis>> {
    let windows = slice_windows(panel, spec)?;
    let out = try_map_ordered(mode, &windows, |w| -> Result<WindowAnalysis> {
        let ctx = |e: Error| e.in_window(w.window_index, w.label_year);
        let correlations = window_correlations(w, coverage).map_err(ctx)?;
        let distances = to_distance(&correlations);
        let tree = minimum_spanning_tree(&distances).map_err(ctx)?;
        Ok(WindowAnalysis {
            correlations,
            distances,
            tree,
        })
    })?;
    for a in &out {
        let c = &a.correlations;
        let dropped: Vec<String> = c
            .excluded
            .iter()
            .map(|e| match &e.reason {
                ExclusionReason::LowCoverage { observed } => format!("{} (observed {observed})", e.country),
                ExclusionReason::UndefinedPair { with } => format!("{} (no correlation with {with})", e.country),
            })
            .collect();
        if dropped.is_empty() {
            info!("window {} ({}): {} countries", c.window_index, c.label_year, c.len());
        } else {
            info!(
                "window {} ({}): {} countries, dropped {}",
                c.window_index,
                c.label_year,
                c.len(),
                dropped.join(", ")
            );
        }
    }
    Ok(out)
}

pub fn index_panel(analyses: &[WindowAnalysis], mode: EccentricityMode) -> Result<IndexPanel> {
    let trees: Vec<SpanningTree> = analyses.iter().map(|a| a.tree.clone()).collect();
    build_index_panel_with(&trees, mode)
}

/// One segmentation per lambda (input order), then one per era-count target.
pub fn segment_all(panel: &IndexPanel, cfg: &PipelineConfig, mode: ExecMode) -> Result<Vec<Segmentation>> {
    let seg = Segmenter::from_panel(panel)?;
    let mut out = seg.sweep(&cfg.lambdas, &cfg.segmenter, mode)?;
    let found = try_map_ordered(mode, &cfg.target_eras, |&target| {
        seg.lambda_for_era_count(target, None, &cfg.segmenter)
    })?;
    for (target, s) in cfg.target_eras.iter().zip(found) {
        if s.exact {
            info!("target {target} eras: lambda {} after {} solves", s.lambda, s.probes);
        } else {
            warn!(
                "target {target} eras not reached; nearest has {} eras at lambda {}",
                s.segmentation.era_count(),
                s.lambda
            );
        }
        out.push(s.segmentation);
    }
    for s in &out {
        if !s.converged {
            warn!("lambda {}: solver hit the iteration limit", s.lambda);
        }
        info!("lambda {}: {} eras, breaks after windows {:?}", s.lambda, s.era_count(), s.change_points);
    }
    for n in nesting_report(&out) {
        info!(
            "nesting lambda {} ({} eras) -> {} ({} eras): {}",
            n.coarse_lambda,
            n.coarse_eras,
            n.fine_lambda,
            n.fine_eras,
            if n.nested { "nested" } else { "not nested" }
        );
    }
    Ok(out)
}

pub fn render_windows(
    analyses: &[WindowAnalysis],
    clusters: usize,
    opts: &RenderOptions,
    mode: ExecMode,
) -> Result<Vec<RenderedWindow>> {
    try_map_ordered(mode, analyses, |a| {
        let t = &a.tree;
        let ctx = |e: Error| e.in_window(t.window_index, t.label_year);
        let emb = mds_embed(&a.distances).map_err(ctx)?;
        let k = clusters.min(a.distances.len());
        let labels = complete_linkage_clusters(&a.distances, k).map_err(ctx)?;
        render_window_graph(t, &emb, &labels, opts).map_err(ctx)
    })
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub manifest: Manifest,
    pub index_panel: IndexPanel,
    pub segmentations: Vec<Segmentation>,
}

fn write_effective_config(cfg: &PipelineConfig) -> Result<()> {
    fs::create_dir_all(&cfg.outdir).map_err(|e| Error::io(&cfg.outdir, e))?;
    let path = cfg.outdir.join(EFFECTIVE_CONFIG_FILE);
    fs::write(&path, cfg.to_config_text()).map_err(|e| Error::io(&path, e))
}

fn emit_renders(sink: &mut Sink, analyses: &[WindowAnalysis], cfg: &PipelineConfig, mode: ExecMode) -> Result<()> {
    let rendered = render_windows(analyses, cfg.clusters, &RenderOptions::default(), mode)?;
    for (a, r) in analyses.iter().zip(&rendered) {
        emit_window(sink, &a.tree, r)?;
    }
    Ok(())
}

/// Full pipeline from a price panel on disk.
pub fn run_pipeline(cfg: &PipelineConfig, mode: ExecMode) -> Result<RunOutput> {
    cfg.validate_common()?;
    cfg.validate_segmentation()?;
    let panel = read_panel_file(cfg.input_path()?)?;
    run_pipeline_on(&panel, cfg, mode)
}

/// Full pipeline on an in-memory panel; writes into `cfg.outdir`.
pub fn run_pipeline_on(panel: &PricePanel, cfg: &PipelineConfig, mode: ExecMode) -> Result<RunOutput> {
    cfg.validate_common()?;
    cfg.validate_segmentation()?;
    info!("panel: {} countries, {} months from {}", panel.countries().len(), panel.len(), panel.start());
    let analyses = analyze_windows(panel, &cfg.window, &cfg.coverage, mode)?;
    let indices = index_panel(&analyses, cfg.eccentricity)?;
    let segmentations = segment_all(&indices, cfg, mode)?;

    write_effective_config(cfg)?;
    let mut sink = Sink::new(&cfg.outdir)?;
    write_report_into(&mut sink, &indices, &segmentations)?;
    if cfg.render {
        emit_renders(&mut sink, &analyses, cfg, mode)?;
    }
    Ok(RunOutput {
        manifest: sink.finish()?,
        index_panel: indices,
        segmentations,
    })
}

/// Stops after the index panel: `indices.csv` plus per-window tree edges.
pub fn run_indices(cfg: &PipelineConfig, mode: ExecMode) -> Result<Manifest> {
    cfg.validate_common()?;
    let panel = read_panel_file(cfg.input_path()?)?;
    let analyses = analyze_windows(&panel, &cfg.window, &cfg.coverage, mode)?;
    let indices = index_panel(&analyses, cfg.eccentricity)?;
    write_effective_config(cfg)?;
    let mut sink = Sink::new(&cfg.outdir)?;
    let mut csv = Vec::new();
    indices.write_csv(&mut csv)?;
    sink.emit("indices.csv", &csv)?;
    for a in &analyses {
        let mut buf = Vec::new();
        a.tree.write_edges_csv(&mut buf)?;
        sink.emit(&format!("windows/{}_w{:03}_edges.csv", a.tree.label_year, a.tree.window_index), &buf)?;
    }
    sink.finish()
}

/// Segments a saved `indices.csv` and writes the report.
pub fn run_segment(cfg: &PipelineConfig, mode: ExecMode) -> Result<RunOutput> {
    cfg.validate_common()?;
    cfg.validate_segmentation()?;
    let path = cfg.input_path()?;
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let indices = IndexPanel::read_csv(BufReader::new(f))?;
    let segmentations = segment_all(&indices, cfg, mode)?;
    write_effective_config(cfg)?;
    let mut sink = Sink::new(&cfg.outdir)?;
    write_report_into(&mut sink, &indices, &segmentations)?;
    Ok(RunOutput {
        manifest: sink.finish()?,
        index_panel: indices,
        segmentations,
    })
}

/// Per-window MDS, tree and DOT views only.
pub fn run_render(cfg: &PipelineConfig, mode: ExecMode) -> Result<Manifest> {
    cfg.validate_common()?;
    let panel = read_panel_file(cfg.input_path()?)?;
    let analyses = analyze_windows(&panel, &cfg.window, &cfg.coverage, mode)?;
    write_effective_config(cfg)?;
    let mut sink = Sink::new(&cfg.outdir)?;
    emit_renders(&mut sink, &analyses, cfg, mode)?;
    sink.finish()
}

pub const SYNTH_PANEL_FILE: &str = "synthetic_panel.csv";

/// Writes the default three-regime panel for `cfg.seed`, and the planted
/// break months and change-point indices as JSON.
pub fn run_synth(cfg: &PipelineConfig) -> Result<Manifest> {
    let synth = SynthConfig::default().with_seed(cfg.seed);
    let panel = generate(&synth)?;
    let mut sink = Sink::new(&cfg.outdir)?;
    let mut csv = Vec::new();
    write_panel(&panel, &mut csv)?;
    sink.emit(SYNTH_PANEL_FILE, &csv)?;
    let truth = serde_json::json!({
        "seed": cfg.seed,
        "break_months": synth.breaks,
        "change_points": synth.truth_change_points(&cfg.window),
    });
    sink.emit("synthetic_truth.json", (serde_json::to_string_pretty(&truth)? + "\n").as_bytes())?;
    sink.finish()
}
