//! Weighted least-squares fit of ln g²(τ) = b + σ²·e^{−|τ|/τ_d}·cos(2πτ/T).
//!
//! A coarse grid over (T, τ_d) with (b, σ²) solved linearly at each node
//! picks the basin; Levenberg–Marquardt then refines all four parameters.

use std::f64::consts::PI;

use nalgebra::{DMatrix, Matrix4, Vector4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correlator::Correlogram;
use crate::error::{Error, Result};

const TAU_D_GRID: usize = 48;
const MAX_ITERATIONS: usize = 200;
const STEP_TOL: f64 = 1e-10;
/// Cosine between the residual vector and any Jacobian column.
const GRAD_TOL: f64 = 1e-8;
/// Smallest eigenvalue of the column-normalised normal matrix.
const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitParams {
    /// ln of the long-lag baseline.
    pub log_baseline: f64,
    pub sigma2: f64,
    pub t_osc_ps: f64,
    pub tau_d_ps: f64,
}

/// ln g² of the fit model.
pub fn model(p: &FitParams, tau_ps: f64) -> f64 {
    let env = (-tau_ps.abs() / p.tau_d_ps).exp();
    p.log_baseline + p.sigma2 * env * (2.0 * PI * tau_ps / p.t_osc_ps).cos()
}

/// ∂model/∂(log_baseline, sigma2, t_osc_ps, tau_d_ps).
pub fn model_jacobian(p: &FitParams, tau_ps: f64) -> [f64; 4] {
    let env = (-tau_ps.abs() / p.tau_d_ps).exp();
    let phase = 2.0 * PI * tau_ps / p.t_osc_ps;
    let (sin, cos) = phase.sin_cos();
    [
        1.0,
        env * cos,
        p.sigma2 * env * sin * phase / p.t_osc_ps,
        p.sigma2 * env * cos * tau_ps.abs() / (p.tau_d_ps * p.tau_d_ps),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub sigma2: f64,
    pub t_osc_ps: f64,
    pub tau_d_ps: f64,
    /// Long-lag g² level, e^b.
    pub baseline: f64,
    /// Weighted RMS of the ln g² residuals.
    pub residual_rms: f64,
    pub chi2_per_dof: f64,
    pub converged: bool,
    pub iterations: usize,
    pub used_bins: usize,
    /// Bins dropped for g2 ≤ 0 or a zero error.
    pub excluded_bins: usize,
    /// One-sigma errors from the scaled covariance; `None` when singular.
    pub sigma2_err: Option<f64>,
    pub t_osc_err_ps: Option<f64>,
    pub tau_d_err_ps: Option<f64>,
}

impl FitResult {
    pub fn params(&self) -> FitParams {
        FitParams {
            log_baseline: self.baseline.ln(),
            sigma2: self.sigma2,
            t_osc_ps: self.t_osc_ps,
            tau_d_ps: self.tau_d_ps,
        }
    }
}

/// Fits a correlogram with weights (g2 / g2_err)², i.e. the bin counts.
pub fn fit_damped_oscillation(c: &Correlogram, initial: Option<&FitResult>) -> Result<FitResult> {
    let mut tau = Vec::new();
    let mut y = Vec::new();
    let mut w = Vec::new();
    let mut excluded = 0;
    for k in 0..c.n_bins() {
        let (g, e) = (c.g2[k], c.g2_err[k]);
        if g > 0.0 && e > 0.0 && g.is_finite() && e.is_finite() {
            tau.push(c.spec.bin_center(k));
            y.push(g.ln());
            w.push((g / e).powi(2));
        } else {
            excluded += 1;
        }
    }
    let mut fit = fit_log_curve(&tau, &y, &w, c.spec.bin_width_ps as f64, initial)?;
    fit.excluded_bins = excluded;
    Ok(fit)
}

/// Fits ln g² samples `y` at lags `tau` with weights `w`. `step_ps` sets
/// the period grid resolution and the scale of the time parameters.
pub fn fit_log_curve(
    tau: &[f64],
    y: &[f64],
    w: &[f64],
    step_ps: f64,
    initial: Option<&FitResult>,
) -> Result<FitResult> {
    if tau.len() != y.len() || tau.len() != w.len() {
        return Err(Error::param("tau", "sample arrays differ in length"));
    }
    if tau.len() < 8 {
        return Err(Error::param("correlogram", "fewer than 8 usable bins"));
    }
    if !(step_ps > 0.0) {
        return Err(Error::param("step_ps", "must be positive"));
    }
    let start = match initial {
        Some(f) if f.t_osc_ps > 0.0 && f.tau_d_ps > 0.0 => f.params(),
        Some(_) => return Err(Error::param("initial", "t_osc and tau_d must be positive")),
        None => grid_search(tau, y, w, step_ps)?,
    };
    Ok(levenberg_marquardt(tau, y, w, step_ps, start))
}

fn grid_search(tau: &[f64], y: &[f64], w: &[f64], step: f64) -> Result<FitParams> {
    let lo = tau.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = tau.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let t_count = ((span / 3.0) / step).floor() as usize;
    if t_count < 4 {
        return Err(Error::WindowTooNarrow(
            "window holds fewer than three periods of the shortest resolvable oscillation".into(),
        ));
    }
    let periods: Vec<f64> = (4..=t_count).map(|k| k as f64 * step).collect();
    let (d_lo, d_hi) = (step.ln(), (10.0 * span).ln());
    let dampings: Vec<f64> = (0..TAU_D_GRID)
        .map(|i| (d_lo + (d_hi - d_lo) * i as f64 / (TAU_D_GRID - 1) as f64).exp())
        .collect();
    let envelopes: Vec<Vec<f64>> = dampings
        .iter()
        .map(|d| tau.iter().map(|t| (-t.abs() / d).exp()).collect())
        .collect();
    let (sw, sy, syy) = tau.iter().enumerate().fold((0.0, 0.0, 0.0), |acc, (i, _)| {
        (
            acc.0 + w[i],
            acc.1 + w[i] * y[i],
            acc.2 + w[i] * y[i] * y[i],
        )
    });

    // Per period: best (sse, damping index, b, s).
    let best: Vec<Option<(f64, usize, f64, f64)>> = periods
        .par_iter()
        .map(|&period| {
            let cosines: Vec<f64> = tau.iter().map(|t| (2.0 * PI * t / period).cos()).collect();
            let mut best: Option<(f64, usize, f64, f64)> = None;
            for (j, env) in envelopes.iter().enumerate() {
                let (mut sf, mut sff, mut sfy) = (0.0, 0.0, 0.0);
                for i in 0..tau.len() {
                    let f = env[i] * cosines[i];
                    sf += w[i] * f;
                    sff += w[i] * f * f;
                    sfy += w[i] * f * y[i];
                }
                let det = sw * sff - sf * sf;
                if !(det > 1e-12 * sw * sff) {
                    continue;
                }
                let b = (sff * sy - sf * sfy) / det;
                let s = (sw * sfy - sf * sy) / det;
                let sse = syy - b * sy - s * sfy;
                if best.is_none_or(|(e, ..)| sse < e) {
                    best = Some((sse, j, b, s));
                }
            }
            best
        })
        .collect();

    let mut pick: Option<(f64, FitParams)> = None;
    for (i, cand) in best.iter().enumerate() {
        if let Some((sse, j, b, s)) = *cand {
            if pick.is_none_or(|(e, _)| sse < e) {
                pick = Some((
                    sse,
                    FitParams {
                        log_baseline: b,
                        sigma2: s,
                        t_osc_ps: periods[i],
                        tau_d_ps: dampings[j],
                    },
                ));
            }
        }
    }
    pick.map(|(_, p)| p)
        .ok_or_else(|| Error::param("correlogram", "no grid node gives a solvable fit"))
}

/// Parameters scaled so that the time constants are in units of `step`.
fn to_theta(p: &FitParams, step: f64) -> Vector4<f64> {
    Vector4::new(
        p.log_baseline,
        p.sigma2,
        p.t_osc_ps / step,
        p.tau_d_ps / step,
    )
}

fn from_theta(t: &Vector4<f64>, step: f64) -> FitParams {
    FitParams {
        log_baseline: t[0],
        sigma2: t[1],
        t_osc_ps: t[2] * step,
        tau_d_ps: t[3] * step,
    }
}

struct Linearized {
    cost: f64,
    jtj: Matrix4<f64>,
    jtr: Vector4<f64>,
    r_norm: f64,
}

fn linearize(tau: &[f64], y: &[f64], w: &[f64], step: f64, theta: &Vector4<f64>) -> Linearized {
    let p = from_theta(theta, step);
    let mut jtj = Matrix4::zeros();
    let mut jtr = Vector4::zeros();
    let mut cost = 0.0;
    for i in 0..tau.len() {
        let sw = w[i].sqrt();
        let r = sw * (y[i] - model(&p, tau[i]));
        let d = model_jacobian(&p, tau[i]);
        let j = Vector4::new(d[0], d[1], d[2] * step, d[3] * step) * sw;
        jtj += j * j.transpose();
        jtr += j * r;
        cost += r * r;
    }
    Linearized {
        cost,
        jtj,
        jtr,
        r_norm: cost.sqrt(),
    }
}

fn cost_at(tau: &[f64], y: &[f64], w: &[f64], step: f64, theta: &Vector4<f64>) -> f64 {
    let p = from_theta(theta, step);
    (0..tau.len())
        .map(|i| w[i] * (y[i] - model(&p, tau[i])).powi(2))
        .sum()
}

fn gradient_small(lin: &Linearized) -> bool {
    if lin.r_norm == 0.0 {
        return true;
    }
    (0..4).all(|j| {
        let col = lin.jtj[(j, j)].sqrt();
        col == 0.0 || (lin.jtr[j] / (col * lin.r_norm)).abs() <= GRAD_TOL
    })
}

fn levenberg_marquardt(
    tau: &[f64],
    y: &[f64],
    w: &[f64],
    step: f64,
    start: FitParams,
) -> FitResult {
    let mut theta = to_theta(&start, step);
    let mut lin = linearize(tau, y, w, step, &theta);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        if gradient_small(&lin) {
            converged = true;
            break;
        }
        iterations += 1;
        let max_diag = (0..4).map(|j| lin.jtj[(j, j)]).fold(0.0, f64::max);
        let mut improved = false;
        while lambda < 1e20 {
            let mut a = lin.jtj;
            for j in 0..4 {
                a[(j, j)] += lambda * lin.jtj[(j, j)].max(1e-12 * max_diag.max(1e-300));
            }
            let Some(delta) = a.cholesky().map(|ch| ch.solve(&lin.jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let next = theta + delta;
            if next[2] > 0.0 && next[3] > 0.0 {
                let c = cost_at(tau, y, w, step, &next);
                if c <= lin.cost {
                    let small = delta.norm() <= STEP_TOL * (theta.norm() + STEP_TOL);
                    theta = next;
                    lin = linearize(tau, y, w, step, &theta);
                    lambda = (lambda / 10.0).max(1e-15);
                    improved = true;
                    if small {
                        converged = true;
                    }
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !improved {
            converged = gradient_small(&lin);
            break;
        }
        if converged {
            break;
        }
    }

    let n = tau.len();
    let dof = n.saturating_sub(4).max(1) as f64;
    let sw: f64 = w.iter().sum();
    let covariance = well_conditioned_inverse(&lin.jtj);
    if covariance.is_none() {
        converged = false;
    }
    let p = from_theta(&theta, step);
    if !(p.t_osc_ps > 0.0 && p.tau_d_ps > 0.0) {
        converged = false;
    }
    let scale = lin.cost / dof;
    let err = |j: usize, unit: f64| covariance.map(|c| (c[(j, j)] * scale).sqrt() * unit);
    FitResult {
        sigma2: p.sigma2,
        t_osc_ps: p.t_osc_ps,
        tau_d_ps: p.tau_d_ps,
        baseline: p.log_baseline.exp(),
        residual_rms: (lin.cost / sw).sqrt(),
        chi2_per_dof: lin.cost / dof,
        converged,
        iterations,
        used_bins: n,
        excluded_bins: 0,
        sigma2_err: err(1, 1.0),
        t_osc_err_ps: err(2, step),
        tau_d_err_ps: err(3, step),
    }
}

fn well_conditioned_inverse(jtj: &Matrix4<f64>) -> Option<Matrix4<f64>> {
    let d: Vec<f64> = (0..4).map(|j| jtj[(j, j)].sqrt()).collect();
    if d.iter().any(|&x| !(x > 0.0)) {
        return None;
    }
    let normalized = DMatrix::from_fn(4, 4, |i, j| jtj[(i, j)] / (d[i] * d[j]));
    let min_eig = normalized
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if !(min_eig > RANK_TOL) {
        return None;
    }
    jtj.try_inverse()
}
