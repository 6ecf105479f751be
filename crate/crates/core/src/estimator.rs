//! Link travel-time estimators over the additive path model `Y = XΘ + E`.
//!
//! * [`solve_ridge`] fits long-run link times with a first-difference
//!   smoothness penalty, `‖Y − XΘ‖² + λ1‖DΘ‖²`.
//! * [`solve_lasso`] fits a day's sparse deviations from those times,
//!   `‖Y − X(Θ + Δ)‖² + λ2‖Δ‖₁`, by cyclic coordinate descent.
//! * [`median_backproject`] is the length-proportional baseline.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcher::PathIntegral;
use crate::network::DifferenceMatrix;

pub const LASSO_TOL_S: f64 = 1e-9;
pub const LASSO_MAX_SWEEPS: usize = 10_000;

/// Design matrix of coverage fractions and the observed travel times.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
}

impl ObservationSet {
    pub fn n_links(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_obs(&self) -> usize {
        self.x.nrows()
    }
}

pub fn build_observations(paths: &[PathIntegral], n_links: usize) -> Result<ObservationSet> {
    if paths.is_empty() {
        return Err(Error::InvalidInput("no path integrals to fit".into()));
    }
    let mut x = DMatrix::zeros(paths.len(), n_links);
    let mut y = DVector::zeros(paths.len());
    for (i, p) in paths.iter().enumerate() {
        if p.coverage.is_empty() {
            return Err(Error::InvalidInput(format!("path {i} covers no links")));
        }
        for (&id, &frac) in &p.coverage {
            if id >= n_links {
                return Err(Error::Domain(format!("path {i} covers unknown link {id}")));
            }
            if !(0.0..=1.0).contains(&frac) {
                return Err(Error::InvalidInput(format!(
                    "path {i} has coverage {frac} on link {id}"
                )));
            }
            x[(i, id)] = frac;
        }
        let tt = p.travel_time_s();
        if !(tt > 0.0 && tt.is_finite()) {
            return Err(Error::InvalidInput(format!("path {i} has travel time {tt}")));
        }
        y[i] = tt;
    }
    Ok(ObservationSet { x, y })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoricModel {
    pub theta: Vec<f64>,
    pub lambda1: f64,
    /// Links whose unconstrained estimate was negative and was set to zero.
    pub clamped_links: Vec<usize>,
}

/// `‖Y − XΘ‖² + λ1‖DΘ‖²`.
pub fn ridge_objective(obs: &ObservationSet, d: &DifferenceMatrix, lambda1: f64, theta: &[f64]) -> f64 {
    let t = DVector::from_column_slice(theta);
    let r = &obs.y - &obs.x * t;
    let smooth: f64 = d.apply(theta).iter().map(|v| v * v).sum();
    r.norm_squared() + lambda1 * smooth
}

/// Solves `(XᵀX + λ1 DᵀD) Θ = XᵀY` without the nonnegativity clamp.
///
/// A Cholesky solve is used when the system is well conditioned; otherwise
/// the minimum-norm solution is taken from an SVD.
pub fn ridge_normal_solution(
    obs: &ObservationSet,
    d: &DifferenceMatrix,
    lambda1: f64,
) -> Result<DVector<f64>> {
    let n = obs.n_links();
    if d.cols() != n {
        return Err(Error::InvalidInput(format!(
            "difference operator has {} columns for {n} links",
            d.cols()
        )));
    }
    if !(lambda1 >= 0.0 && lambda1.is_finite()) {
        return Err(Error::InvalidInput(format!("lambda1 must be >= 0, got {lambda1}")));
    }
    let xt = obs.x.transpose();
    let mut a = &xt * &obs.x;
    if d.rows() > 0 && lambda1 > 0.0 {
        a += d.gram() * lambda1;
    }
    let b = &xt * &obs.y;

    let scale = a.diagonal().amax();
    if scale == 0.0 {
        return Ok(DVector::zeros(n));
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let tol = 1e-10 * smax;
    let theta = if smin > 1e-10 * smax {
        match a.clone().cholesky() {
            Some(ch) => ch.solve(&b),
            None => svd
                .solve(&b, tol)
                .map_err(|e| Error::Numerical(e.to_string()))?,
        }
    } else {
        svd.solve(&b, tol)
            .map_err(|e| Error::Numerical(e.to_string()))?
    };
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("ridge solution is not finite".into()));
    }
    Ok(theta)
}

/// Historic link times: the ridge solution with negative entries set to 0.
pub fn solve_ridge(obs: &ObservationSet, d: &DifferenceMatrix, lambda1: f64) -> Result<HistoricModel> {
    let theta = ridge_normal_solution(obs, d, lambda1)?;
    let mut clamped_links = Vec::new();
    let theta = theta
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if v < 0.0 {
                clamped_links.push(i);
                0.0
            } else {
                v
            }
        })
        .collect();
    Ok(HistoricModel {
        theta,
        lambda1,
        clamped_links,
    })
}

fn residual_against(obs: &ObservationSet, theta: &[f64]) -> Result<DVector<f64>> {
    if theta.len() != obs.n_links() {
        return Err(Error::InvalidInput(format!(
            "theta has {} entries for {} links",
            theta.len(),
            obs.n_links()
        )));
    }
    Ok(&obs.y - &obs.x * DVector::from_column_slice(theta))
}

/// Smallest `λ2` at which a zero deviation vector is optimal:
/// `‖2Xᵀ(Y − XΘ)‖∞`.
pub fn lasso_lambda_max(obs: &ObservationSet, theta: &[f64]) -> Result<f64> {
    let r = residual_against(obs, theta)?;
    Ok((obs.x.transpose() * r).amax() * 2.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IncidentEstimate {
    pub delta: Vec<f64>,
    pub lambda2: f64,
    pub sweeps: usize,
    pub converged: bool,
    pub kkt_residual: f64,
}

impl IncidentEstimate {
    /// Errors if the solver stopped at the sweep cap.
    pub fn require_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NotConverged {
                sweeps: self.sweeps,
                kkt_residual: self.kkt_residual,
            })
        }
    }
}

/// `‖Y − X(Θ + Δ)‖² + λ2‖Δ‖₁`.
pub fn lasso_objective(obs: &ObservationSet, theta: &[f64], lambda2: f64, delta: &[f64]) -> f64 {
    let sum: Vec<f64> = theta.iter().zip(delta).map(|(t, d)| t + d).collect();
    let r = &obs.y - &obs.x * DVector::from_vec(sum);
    r.norm_squared() + lambda2 * delta.iter().map(|v| v.abs()).sum::<f64>()
}

/// Largest violation of the subgradient optimality conditions.
pub fn lasso_kkt_residual(obs: &ObservationSet, theta: &[f64], lambda2: f64, delta: &[f64]) -> f64 {
    let sum: Vec<f64> = theta.iter().zip(delta).map(|(t, d)| t + d).collect();
    let r = &obs.y - &obs.x * DVector::from_vec(sum);
    let g = obs.x.transpose() * r * 2.0;
    g.iter()
        .zip(delta)
        .map(|(&gn, &dn)| {
            if dn > 0.0 {
                (gn - lambda2).abs()
            } else if dn < 0.0 {
                (gn + lambda2).abs()
            } else {
                (gn.abs() - lambda2).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Sparse daily deviations from `theta`.
///
/// Cyclic coordinate descent in ascending link order starting from zero;
/// stops when a full sweep moves no coordinate by more than 1e-9 s or after
/// 10 000 sweeps, in which case `converged` is false.
pub fn solve_lasso(obs: &ObservationSet, theta: &[f64], lambda2: f64) -> Result<IncidentEstimate> {
    coordinate_descent(obs, theta, lambda2, |_| {})
}

/// [`solve_lasso`] plus the objective after every sweep.
pub fn solve_lasso_traced(
    obs: &ObservationSet,
    theta: &[f64],
    lambda2: f64,
) -> Result<(IncidentEstimate, Vec<f64>)> {
    let mut history = Vec::new();
    let est = coordinate_descent(obs, theta, lambda2, |d| {
        history.push(lasso_objective(obs, theta, lambda2, d))
    })?;
    Ok((est, history))
}

fn coordinate_descent(
    obs: &ObservationSet,
    theta: &[f64],
    lambda2: f64,
    mut after_sweep: impl FnMut(&[f64]),
) -> Result<IncidentEstimate> {
    if !(lambda2 >= 0.0 && lambda2.is_finite()) {
        return Err(Error::InvalidInput(format!("lambda2 must be >= 0, got {lambda2}")));
    }
    let r0 = residual_against(obs, theta)?;
    let n = obs.n_links();
    // covariance form: keep q = XᵀX δ instead of the residual, so a
    // coordinate update costs O(n) rather than O(rows)
    let gram = obs.x.transpose() * &obs.x;
    let g: Vec<f64> = gram.as_slice().to_vec(); // column-major, symmetric
    let c: Vec<f64> = (obs.x.transpose() * &r0).as_slice().to_vec();
    let mut q = vec![0.0; n];
    let mut delta = vec![0.0; n];
    let half = lambda2 / 2.0;

    let mut sweeps = 0;
    let mut converged = false;
    while sweeps < LASSO_MAX_SWEEPS {
        sweeps += 1;
        let mut max_step: f64 = 0.0;
        for j in 0..n {
            let gjj = g[j * n + j];
            if gjj == 0.0 {
                continue;
            }
            let old = delta[j];
            let rho = c[j] - q[j] + gjj * old;
            let new = soft_threshold(rho, half) / gjj;
            let step = new - old;
            if step != 0.0 {
                let col = &g[j * n..(j + 1) * n];
                for (qk, gk) in q.iter_mut().zip(col) {
                    *qk += step * gk;
                }
                delta[j] = new;
                max_step = max_step.max(step.abs());
            }
        }
        after_sweep(&delta);
        if max_step < LASSO_TOL_S {
            converged = true;
            break;
        }

    }
    if delta.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("lasso iterate is not finite".into()));
    }
    let kkt_residual = lasso_kkt_residual(obs, theta, lambda2, &delta);
    if !converged {
        log::debug!(
            "lasso stopped at {sweeps} sweeps with KKT residual {kkt_residual:.3e}"
        );
    }
    Ok(IncidentEstimate {
        delta,
        lambda2,
        sweeps,
        converged,
        kkt_residual,
    })
}

/// `Σ coverage[n] · (θ_n + δ_n)`, with `δ = 0` when absent.
pub fn predict_travel_time(
    coverage: &BTreeMap<usize, f64>,
    theta: &[f64],
    delta: Option<&[f64]>,
) -> Result<f64> {
    if let Some(d) = delta {
        if d.len() != theta.len() {
            return Err(Error::InvalidInput(format!(
                "delta has {} entries, theta {}",
                d.len(),
                theta.len()
            )));
        }
    }
    let mut total = 0.0;
    for (&id, &frac) in coverage {
        let t = theta
            .get(id)
            .ok_or_else(|| Error::Domain(format!("unknown link {id}")))?;
        let dv = delta.map_or(0.0, |d| d[id]);
        total += frac * (t + dv);
    }
    Ok(total)
}

/// Per-link medians of length-proportional backprojected travel times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackprojectionModel {
    /// `None` for links that no path covered.
    pub link_times: Vec<Option<f64>>,
}

impl BackprojectionModel {
    pub fn predict(&self, coverage: &BTreeMap<usize, f64>) -> Result<f64> {
        let mut total = 0.0;
        for (&id, &frac) in coverage {
            match self.link_times.get(id) {
                Some(Some(t)) => total += frac * t,
                Some(None) => {
                    return Err(Error::Domain(format!(
                        "link {id} has no backprojected samples"
                    )))
                }
                None => return Err(Error::Domain(format!("unknown link {id}"))),
            }
        }
        Ok(total)
    }
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    Some(if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    })
}

/// Splits each path's travel time over its links in proportion to the
/// covered length, rescales each share to a full-link time, and takes the
/// per-link median.
pub fn median_backproject(paths: &[PathIntegral], lengths_m: &[f64]) -> Result<BackprojectionModel> {
    if paths.is_empty() {
        return Err(Error::InvalidInput("no path integrals to backproject".into()));
    }
    let mut samples: Vec<Vec<f64>> = vec![Vec::new(); lengths_m.len()];
    for (i, p) in paths.iter().enumerate() {
        let mut covered = 0.0;
        for (&id, &frac) in &p.coverage {
            let len = lengths_m
                .get(id)
                .ok_or_else(|| Error::Domain(format!("path {i} covers unknown link {id}")))?;
            covered += frac * len;
        }
        if covered <= 0.0 {
            continue;
        }
        let y = p.travel_time_s();
        for (&id, &frac) in &p.coverage {
            if frac <= 0.0 {
                continue;
            }
            // y·frac·len/covered is this link's share; per full link the frac
            // cancels, and len/covered is exactly 1 for a lone full link
            samples[id].push(y * (lengths_m[id] / covered));
        }
    }
    Ok(BackprojectionModel {
        link_times: samples.iter_mut().map(|s| median(s)).collect(),
    })
}
