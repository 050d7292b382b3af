//! Era segmentation of the topology index panel.

mod solver;

pub use solver::{
    group_tv_denoise, lambda_max, objective, standardize_rows, DenoisedPanel, MultiSeries, Penalty,
    SegmenterConfig, Standardization, StopReason,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{try_map_ordered, ExecMode};
use crate::topology::{IndexPanel, INDEX_NAMES};

/// Standardizes every index row of the panel.
pub fn standardize(panel: &IndexPanel) -> Result<(MultiSeries, Standardization)> {
    standardize_rows(&panel.rows, &INDEX_NAMES)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Era {
    pub start_window: usize,
    pub end_window: usize,
    pub start_label_year: i32,
    pub end_label_year: i32,
    /// Per-component mean of Y over the era, standardized units.
    pub level_standardized: Vec<f64>,
    /// Same levels mapped back to index units.
    pub level_original: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub lambda: f64,
    pub penalty: Penalty,
    /// `t` marks a break between windows `t` and `t + 1`.
    pub change_points: Vec<usize>,
    pub eras: Vec<Era>,
    pub label_years: Vec<i32>,
    pub converged: bool,
    pub objective: f64,
    pub iterations: usize,
}

impl Segmentation {
    pub fn era_count(&self) -> usize {
        self.eras.len()
    }

    /// Label year of the first window after each break.
    pub fn change_years(&self) -> Vec<i32> {
        self.change_points.iter().map(|&t| self.label_years[t + 1]).collect()
    }

    pub fn report(&self) -> SegmentationReport {
        SegmentationReport {
            lambda: self.lambda,
            penalty_variant: self.penalty.name().to_string(),
            converged: self.converged,
            objective: self.objective,
            iterations: self.iterations,
            change_points: self
                .change_points
                .iter()
                .map(|&t| ChangePointRecord {
                    window: t,
                    label_year_before: self.label_years[t],
                    label_year_after: self.label_years[t + 1],
                })
                .collect(),
            eras: self
                .eras
                .iter()
                .map(|e| EraRecord {
                    start_window: e.start_window,
                    end_window: e.end_window,
                    start_label_year: e.start_label_year,
                    end_label_year: e.end_label_year,
                    levels: INDEX_NAMES
                        .iter()
                        .zip(e.level_original.iter().zip(&e.level_standardized))
                        .map(|(name, (&value, &standardized))| LevelRecord {
                            index: name.to_string(),
                            value,
                            standardized,
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangePointRecord {
    pub window: usize,
    pub label_year_before: i32,
    pub label_year_after: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelRecord {
    pub index: String,
    pub value: f64,
    pub standardized: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EraRecord {
    pub start_window: usize,
    pub end_window: usize,
    pub start_label_year: i32,
    pub end_label_year: i32,
    pub levels: Vec<LevelRecord>,
}

/// JSON shape of one segmentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationReport {
    pub lambda: f64,
    pub penalty_variant: String,
    pub converged: bool,
    pub change_points: Vec<ChangePointRecord>,
    pub eras: Vec<EraRecord>,
    pub objective: f64,
    pub iterations: usize,
}

/// Thresholds jumps of the denoised signal and summarizes each era by the
/// per-component mean of Y.
pub fn extract_change_points(
    denoised: &DenoisedPanel,
    standardization: &Standardization,
    label_years: &[i32],
    config: &SegmenterConfig,
) -> Result<Segmentation> {
    let y = &denoised.y;
    let (k, t_len) = (y.components(), y.times());
    if label_years.len() != t_len || standardization.mean.len() != k {
        return Err(Error::ShapeError(format!(
            "Y is {k}x{t_len}, {} labels, {} standardization rows",
            label_years.len(),
            standardization.mean.len()
        )));
    }
    let change_points: Vec<usize> = (0..t_len - 1)
        .filter(|&t| (0..k).any(|c| (y.get(c, t + 1) - y.get(c, t)).abs() > config.changepoint_eps))
        .collect();

    let mut bounds = Vec::with_capacity(change_points.len() + 1);
    let mut start = 0;
    for &cp in &change_points {
        bounds.push((start, cp));
        start = cp + 1;
    }
    bounds.push((start, t_len - 1));

    let eras = bounds
        .into_iter()
        .map(|(a, b)| {
            let n = (b - a + 1) as f64;
            let level_standardized: Vec<f64> =
                (0..k).map(|c| (a..=b).map(|t| y.get(c, t)).sum::<f64>() / n).collect();
            let level_original =
                level_standardized.iter().enumerate().map(|(c, &v)| standardization.to_original(c, v)).collect();
            Era {
                start_window: a,
                end_window: b,
                start_label_year: label_years[a],
                end_label_year: label_years[b],
                level_standardized,
                level_original,
            }
        })
        .collect();

    Ok(Segmentation {
        lambda: config.lambda,
        penalty: config.penalty,
        change_points,
        eras,
        label_years: label_years.to_vec(),
        converged: denoised.converged,
        objective: denoised.objective,
        iterations: denoised.iterations,
    })
}

/// Standardized index panel ready for repeated solves.
#[derive(Debug, Clone)]
pub struct Segmenter {
    pub x: MultiSeries,
    pub standardization: Standardization,
    pub label_years: Vec<i32>,
}

#[derive(Debug, Clone)]
pub struct LambdaSearch {
    pub lambda: f64,
    pub segmentation: Segmentation,
    pub denoised: DenoisedPanel,
    /// False when no probed lambda reached the target era count; the result
    /// then has the nearest count found.
    pub exact: bool,
    pub probes: usize,
}

impl Segmenter {
    pub fn from_panel(panel: &IndexPanel) -> Result<Self> {
        let (x, standardization) = standardize(panel)?;
        Ok(Segmenter {
            x,
            standardization,
            label_years: panel.label_years.clone(),
        })
    }

    /// Uses `x` as given (already standardized, identity map back).
    pub fn from_standardized(x: MultiSeries, label_years: Vec<i32>) -> Self {
        let k = x.components();
        Segmenter {
            x,
            standardization: Standardization::identity(k),
            label_years,
        }
    }

    pub fn solve(&self, config: &SegmenterConfig) -> Result<(DenoisedPanel, Segmentation)> {
        let d = group_tv_denoise(&self.x, config)?;
        let s = extract_change_points(&d, &self.standardization, &self.label_years, config)?;
        Ok((d, s))
    }

    /// One segmentation per lambda, in input order.
    pub fn sweep(&self, lambdas: &[f64], config: &SegmenterConfig, mode: ExecMode) -> Result<Vec<Segmentation>> {
        try_map_ordered(mode, lambdas, |&l| self.solve(&config.with_lambda(l)).map(|(_, s)| s))
    }

    /// Default search interval `[1e-6, 1.05] * lambda_max`.
    pub fn default_bounds(&self, penalty: Penalty) -> (f64, f64) {
        let hi = lambda_max(&self.x, penalty).max(f64::MIN_POSITIVE) * 1.05;
        (hi * 1e-6, hi)
    }

    /// Geometric bisection on lambda for a target era count.
    ///
    /// Era count is not guaranteed monotone in lambda; the search assumes it
    /// roughly is, returns the first exact hit, and otherwise the probe with
    /// the nearest count (earliest probe on ties).
    pub fn lambda_for_era_count(
        &self,
        target_eras: usize,
        bounds: Option<(f64, f64)>,
        config: &SegmenterConfig,
    ) -> Result<LambdaSearch> {
        let t_len = self.x.times();
        if target_eras < 1 || target_eras > t_len {
            return Err(Error::BadBounds(format!("target {target_eras} eras outside 1..={t_len}")));
        }
        let (mut lo, mut hi) = bounds.unwrap_or_else(|| self.default_bounds(config.penalty));
        if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo < hi) {
            return Err(Error::BadBounds(format!("need 0 <= lo < hi, got [{lo}, {hi}]")));
        }

        let mut best: Option<LambdaSearch> = None;
        let mut probes = 0;
        let mut probe = |lambda: f64, best: &mut Option<LambdaSearch>| -> Result<usize> {
            let cfg = config.with_lambda(lambda);
            let (d, s) = self.solve(&cfg)?;
            probes += 1;
            let eras = s.era_count();
            let better = best
                .as_ref()
                .is_none_or(|b| eras.abs_diff(target_eras) < b.segmentation.era_count().abs_diff(target_eras));
            if better {
                *best = Some(LambdaSearch {
                    lambda,
                    segmentation: s,
                    denoised: d,
                    exact: eras == target_eras,
                    probes,
                });
            }
            Ok(eras)
        };

        let e_hi = probe(hi, &mut best)?;
        if e_hi != target_eras {
            let e_lo = probe(lo, &mut best)?;
            if e_lo != target_eras && e_hi < target_eras && e_lo > target_eras {
                if lo == 0.0 {
                    lo = hi * 1e-12;
                }
                for _ in 0..80 {
                    let mid = (lo * hi).sqrt();
                    if !(mid > lo && mid < hi) || hi / lo < 1.0 + 1e-12 {
                        break;
                    }
                    let e = probe(mid, &mut best)?;
                    if e == target_eras {
                        break;
                    } else if e > target_eras {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
            }
        }
        let mut out = best.expect("at least one probe");
        out.probes = probes;
        Ok(out)
    }
}

/// Free-function form of [`Segmenter::lambda_for_era_count`] on an already
/// standardized matrix.
pub fn lambda_for_era_count(
    x: &MultiSeries,
    label_years: &[i32],
    target_eras: usize,
    bounds: Option<(f64, f64)>,
    config: &SegmenterConfig,
) -> Result<LambdaSearch> {
    Segmenter::from_standardized(x.clone(), label_years.to_vec()).lambda_for_era_count(target_eras, bounds, config)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NestingCheck {
    pub coarse_lambda: f64,
    pub fine_lambda: f64,
    pub coarse_eras: usize,
    pub fine_eras: usize,
    /// Every break of the coarse segmentation also appears in the fine one.
    pub nested: bool,
}

/// For each adjacent pair after sorting by decreasing lambda, whether the
/// coarser change points are a subset of the finer ones. Diagnostic only.
pub fn nesting_report(segs: &[Segmentation]) -> Vec<NestingCheck> {
    let mut sorted: Vec<&Segmentation> = segs.iter().collect();
    sorted.sort_by(|a, b| b.lambda.total_cmp(&a.lambda));
    sorted
        .windows(2)
        .map(|w| NestingCheck {
            coarse_lambda: w[0].lambda,
            fine_lambda: w[1].lambda,
            coarse_eras: w[0].era_count(),
            fine_eras: w[1].era_count(),
            nested: w[0].change_points.iter().all(|c| w[1].change_points.contains(c)),
        })
        .collect()
}
