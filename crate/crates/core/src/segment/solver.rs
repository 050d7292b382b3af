//! Joint piecewise-constant denoising of K series:
//!
//! ```text
//! min_U  ||X - U||^2 + lambda * sum_t P(U(t+1) - U(t))
//! ```
//!
//! with `P` the l2 norm across components (group fused lasso) or the l1 norm.
//! Solved with the Chambolle-Pock primal-dual iteration on
//! `f(U) = ||X - U||^2`, `g(Z) = lambda * sum_t P(Z_t)`, `Z = D U`.
//!
//! Stopping uses the duality gap. For a dual point `P` (each column in the
//! dual-norm ball of radius lambda) the gap splits into two nonnegative terms
//!
//! ```text
//! gap = sum_t (lambda * P(DU_t) - <P_t, DU_t>) + ||X - U - D^T P / 2||^2
//! ```
//!
//! and, since `f` is 2-strongly convex, `||U - U*||^2 <= gap`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// K components x T time steps, stored time-major (`data[t * k + i]`).
#[derive(Debug, Clone, PartialEq)]
pub struct MultiSeries {
    k: usize,
    t: usize,
    data: Vec<f64>,
}

impl MultiSeries {
    pub fn zeros(k: usize, t: usize) -> Self {
        MultiSeries {
            k,
            t,
            data: vec![0.0; k * t],
        }
    }

    /// From component rows `rows[k][t]`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.len();
        let t = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != t) {
            return Err(Error::ShapeError("rows differ in length".into()));
        }
        let mut m = MultiSeries::zeros(k, t);
        for (i, r) in rows.iter().enumerate() {
            for (j, &v) in r.iter().enumerate() {
                m.set(i, j, v);
            }
        }
        Ok(m)
    }

    pub fn components(&self) -> usize {
        self.k
    }

    pub fn times(&self) -> usize {
        self.t
    }

    pub fn get(&self, comp: usize, time: usize) -> f64 {
        self.data[time * self.k + comp]
    }

    pub fn set(&mut self, comp: usize, time: usize, v: f64) {
        self.data[time * self.k + comp] = v;
    }

    /// All components at one time step.
    pub fn column(&self, time: usize) -> &[f64] {
        &self.data[time * self.k..(time + 1) * self.k]
    }

    pub fn row(&self, comp: usize) -> Vec<f64> {
        (0..self.t).map(|t| self.get(comp, t)).collect()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.k).map(|c| self.row(c)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn same_shape(&self, other: &MultiSeries) -> bool {
        self.k == other.k && self.t == other.t
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Every component replaced by its temporal mean.
    pub fn row_mean_constant(&self) -> MultiSeries {
        let mut out = MultiSeries::zeros(self.k, self.t);
        for c in 0..self.k {
            let m = self.row(c).iter().sum::<f64>() / self.t as f64;
            for t in 0..self.t {
                out.set(c, t, m);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Penalty {
    /// `sqrt(sum_k dU_k^2)`: jumps shared across components.
    #[default]
    GroupL2,
    /// `sum_k |dU_k|`: the printed square-root-of-squared-sum form, which
    /// reduces to the plain l1 norm.
    LiteralL1,
}

impl Penalty {
    pub fn name(self) -> &'static str {
        match self {
            Penalty::GroupL2 => "group_l2",
            Penalty::LiteralL1 => "literal_l1",
        }
    }

    fn norm(self, v: impl Iterator<Item = f64>) -> f64 {
        match self {
            Penalty::GroupL2 => v.map(|x| x * x).sum::<f64>().sqrt(),
            Penalty::LiteralL1 => v.map(f64::abs).sum(),
        }
    }

    /// Projection onto the dual-norm ball of radius `radius`.
    fn project(self, p: &mut [f64], radius: f64) {
        match self {
            Penalty::GroupL2 => {
                let n = p.iter().map(|x| x * x).sum::<f64>().sqrt();
                if n > radius {
                    let s = if n > 0.0 { radius / n } else { 0.0 };
                    p.iter_mut().for_each(|x| *x *= s);
                }
            }
            Penalty::LiteralL1 => p.iter_mut().for_each(|x| *x = x.clamp(-radius, radius)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmenterConfig {
    pub lambda: f64,
    pub penalty: Penalty,
    pub convergence_tol: f64,
    pub max_iterations: usize,
    /// Jump threshold in standardized units.
    pub changepoint_eps: f64,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        SegmenterConfig {
            lambda: 1.0,
            penalty: Penalty::GroupL2,
            convergence_tol: 1e-9,
            max_iterations: 100_000,
            changepoint_eps: 1e-3,
        }
    }
}

impl SegmenterConfig {
    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if !(self.convergence_tol > 0.0) || !(self.changepoint_eps > 0.0) {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be positive".into()));
        }
        Ok(())
    }
}

/// Affine map between index units and standardized units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardization {
    pub fn identity(k: usize) -> Self {
        Standardization {
            mean: vec![0.0; k],
            scale: vec![1.0; k],
        }
    }

    pub fn to_original(&self, comp: usize, v: f64) -> f64 {
        v * self.scale[comp] + self.mean[comp]
    }
}

/// Centers each row and divides by its population standard deviation.
/// `names` labels rows in the error for a constant row.
pub fn standardize_rows(rows: &[Vec<f64>], names: &[&str]) -> Result<(MultiSeries, Standardization)> {
    let t = rows.first().map_or(0, Vec::len);
    if t < 2 {
        return Err(Error::BadInput(format!("need at least 2 time steps, got {t}")));
    }
    let mut out = Vec::with_capacity(rows.len());
    let mut st = Standardization {
        mean: Vec::new(),
        scale: Vec::new(),
    };
    for (c, r) in rows.iter().enumerate() {
        if r.len() != t {
            return Err(Error::ShapeError("rows differ in length".into()));
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::BadInput(format!("non-finite value in row {c}")));
        }
        let name = names.get(c).map_or_else(|| c.to_string(), |s| s.to_string());
        if r.iter().all(|&v| v == r[0]) {
            return Err(Error::ConstantIndexRow(name));
        }
        let m = r.iter().sum::<f64>() / t as f64;
        let s = (r.iter().map(|v| (v - m).powi(2)).sum::<f64>() / t as f64).sqrt();
        if !(s > 0.0) {
            return Err(Error::ConstantIndexRow(name));
        }
        out.push(r.iter().map(|v| (v - m) / s).collect::<Vec<_>>());
        st.mean.push(m);
        st.scale.push(s);
    }
    Ok((MultiSeries::from_rows(&out)?, st))
}

fn penalty_sum(u: &MultiSeries, penalty: Penalty) -> f64 {
    (0..u.t.saturating_sub(1))
        .map(|t| penalty.norm((0..u.k).map(|c| u.get(c, t + 1) - u.get(c, t))))
        .sum()
}

/// `||X - U||^2 + lambda * sum_t P(U(t+1) - U(t))`.
pub fn objective(x: &MultiSeries, u: &MultiSeries, lambda: f64, penalty: Penalty) -> Result<f64> {
    if !x.same_shape(u) {
        return Err(Error::ShapeError(format!(
            "X is {}x{}, U is {}x{}",
            x.k, x.t, u.k, u.t
        )));
    }
    let fid: f64 = x.data.iter().zip(&u.data).map(|(a, b)| (a - b) * (a - b)).sum();
    let pen = if lambda == 0.0 { 0.0 } else { lambda * penalty_sum(u, penalty) };
    Ok(fid + pen)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// `sqrt(gap) <= tol * max(1, ||X||)`.
    GapCertificate,
    /// The primal iterate stopped moving at floating-point resolution.
    Stagnation,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoisedPanel {
    pub y: MultiSeries,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub stop_reason: StopReason,
    /// Duality gap at the last iterate.
    pub gap: f64,
}

/// `(D U)_t = U_{t+1} - U_t`, written into `out` (K x (T-1), time-major).
fn diff(u: &MultiSeries, out: &mut [f64]) {
    let k = u.k;
    for t in 0..u.t - 1 {
        for c in 0..k {
            out[t * k + c] = u.data[(t + 1) * k + c] - u.data[t * k + c];
        }
    }
}

/// `(D^T P)_t = P_{t-1} - P_t` with `P_{-1} = P_{T-1} = 0`.
fn diff_adjoint(p: &[f64], k: usize, t_len: usize, out: &mut [f64]) {
    for t in 0..t_len {
        for c in 0..k {
            let prev = if t > 0 { p[(t - 1) * k + c] } else { 0.0 };
            let cur = if t + 1 < t_len { p[t * k + c] } else { 0.0 };
            out[t * k + c] = prev - cur;
        }
    }
}

const PRIMAL_STEP: f64 = 0.03;
/// `||D||^2 <= 4`, so `tau * sigma * ||D||^2 < 1`.
const DUAL_STEP: f64 = 0.99 / (4.0 * PRIMAL_STEP);

struct Workspace {
    du: Vec<f64>,
    dtp: Vec<f64>,
}

fn duality_gap(
    x: &MultiSeries,
    u: &MultiSeries,
    p: &[f64],
    lambda: f64,
    penalty: Penalty,
    ws: &mut Workspace,
) -> f64 {
    let k = x.k;
    diff(u, &mut ws.du);
    diff_adjoint(p, k, x.t, &mut ws.dtp);
    let mut g = 0.0;
    for t in 0..x.t - 1 {
        let col = &ws.du[t * k..(t + 1) * k];
        let pc = &p[t * k..(t + 1) * k];
        let inner: f64 = col.iter().zip(pc).map(|(a, b)| a * b).sum();
        g += (lambda * penalty.norm(col.iter().copied()) - inner).max(0.0);
    }
    for i in 0..x.data.len() {
        let r = x.data[i] - u.data[i] - 0.5 * ws.dtp[i];
        g += r * r;
    }
    g
}

/// Minimizes the penalized functional from `U = X`, dual `P = 0`, with fixed
/// step sizes. Returns the best of the final iterate, `X` itself, and the
/// row-mean constant signal.
pub fn group_tv_denoise(x: &MultiSeries, config: &SegmenterConfig) -> Result<DenoisedPanel> {
    config.validate()?;
    if x.t < 2 || x.k < 1 {
        return Err(Error::BadInput(format!("need K >= 1 and T >= 2, got {}x{}", x.k, x.t)));
    }
    if x.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::BadInput("non-finite entry in X".into()));
    }
    let (k, t_len) = (x.k, x.t);
    let lambda = config.lambda;
    let penalty = config.penalty;
    let tau = PRIMAL_STEP;
    let sigma = DUAL_STEP;
    let scale = x.frobenius_norm().max(1.0);
    let target = (config.convergence_tol * scale).powi(2);

    let mut u = x.clone();
    let mut u_bar = x.clone();
    let mut u_next = x.clone();
    let mut p = vec![0.0; k * (t_len - 1)];
    let mut ws = Workspace {
        du: vec![0.0; k * (t_len - 1)],
        dtp: vec![0.0; k * t_len],
    };

    let mut iterations = 0;
    let mut stop_reason = StopReason::MaxIterations;
    let mut gap = duality_gap(x, &u, &p, lambda, penalty, &mut ws);
    if gap <= target {
        stop_reason = StopReason::GapCertificate;
    } else {
        while iterations < config.max_iterations {
            iterations += 1;
            // Dual ascent on the extrapolated primal, then projection.
            diff(&u_bar, &mut ws.du);
            for t in 0..t_len - 1 {
                let pc = &mut p[t * k..(t + 1) * k];
                for (pv, dv) in pc.iter_mut().zip(&ws.du[t * k..(t + 1) * k]) {
                    *pv += sigma * dv;
                }
                penalty.project(pc, lambda);
            }
            // Primal proximal step for ||X - U||^2.
            diff_adjoint(&p, k, t_len, &mut ws.dtp);
            let mut change = 0.0;
            let mut norm = 0.0;
            for i in 0..u.data.len() {
                let v = (u.data[i] - tau * ws.dtp[i] + 2.0 * tau * x.data[i]) / (1.0 + 2.0 * tau);
                change += (v - u.data[i]).powi(2);
                norm += v * v;
                u_next.data[i] = v;
            }
            for i in 0..u.data.len() {
                u_bar.data[i] = 2.0 * u_next.data[i] - u.data[i];
            }
            std::mem::swap(&mut u, &mut u_next);

            gap = duality_gap(x, &u, &p, lambda, penalty, &mut ws);
            if gap <= target {
                stop_reason = StopReason::GapCertificate;
                break;
            }
            if change.sqrt() <= 8.0 * f64::EPSILON * norm.sqrt().max(1.0) {
                stop_reason = StopReason::Stagnation;
                break;
            }
        }
    }

    let mut best = objective(x, &u, lambda, penalty)?;
    let mut y = u;
    for cand in [x.clone(), x.row_mean_constant()] {
        let f = objective(x, &cand, lambda, penalty)?;
        if f < best {
            best = f;
            y = cand;
        }
    }
    Ok(DenoisedPanel {
        y,
        objective: best,
        iterations,
        converged: stop_reason != StopReason::MaxIterations,
        stop_reason,
        gap,
    })
}

/// Smallest lambda for which the row-mean constant signal is optimal:
/// `max_t P*(2 * sum_{s<=t} (X_s - mean))`, with `P*` the dual norm.
pub fn lambda_max(x: &MultiSeries, penalty: Penalty) -> f64 {
    let means = x.row_mean_constant();
    let mut cum = vec![0.0; x.k];
    let mut best: f64 = 0.0;
    for t in 0..x.t - 1 {
        for (c, acc) in cum.iter_mut().enumerate() {
            *acc += 2.0 * (x.get(c, t) - means.get(c, t));
        }
        let dual = match penalty {
            Penalty::GroupL2 => cum.iter().map(|v| v * v).sum::<f64>().sqrt(),
            Penalty::LiteralL1 => cum.iter().fold(0.0f64, |m, v| m.max(v.abs())),
        };
        best = best.max(dual);
    }
    best
}
