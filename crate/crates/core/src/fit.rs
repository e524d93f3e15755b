//! Damped least-squares fits of the resource-scaling models.
//!
//! * power law `y = ν₁ x^{−p} + ν₂`
//! * generalized logistic `y = a / (1 + e^{−b x + c}) + d`

use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub names: Vec<String>,
    pub params: Vec<f64>,
    /// One-sigma uncertainties from `s² (JᵀJ)⁻¹`.
    pub sigmas: Vec<f64>,
    pub r_squared: f64,
    pub ssr: f64,
    pub iterations: usize,
}

impl FitResult {
    pub fn get(&self, name: &str) -> Option<(f64, f64)> {
        let k = self.names.iter().position(|n| n == name)?;
        Some((self.params[k], self.sigmas[k]))
    }
}

/// A model with an analytic Jacobian.
pub trait Model {
    fn names(&self) -> &'static [&'static str];
    fn value(&self, p: &[f64], x: f64) -> f64;
    fn gradient(&self, p: &[f64], x: f64, out: &mut [f64]);
}

pub struct PowerLaw;

impl Model for PowerLaw {
    fn names(&self) -> &'static [&'static str] {
        &["nu1", "nu2", "p"]
    }
    fn value(&self, p: &[f64], x: f64) -> f64 {
        p[0] * x.powf(-p[2]) + p[1]
    }
    fn gradient(&self, p: &[f64], x: f64, out: &mut [f64]) {
        let xp = x.powf(-p[2]);
        out[0] = xp;
        out[1] = 1.0;
        out[2] = -p[0] * xp * x.ln();
    }
}

pub struct Logistic;

impl Model for Logistic {
    fn names(&self) -> &'static [&'static str] {
        &["a", "b", "c", "d"]
    }
    fn value(&self, p: &[f64], x: f64) -> f64 {
        p[0] / (1.0 + (-p[1] * x + p[2]).exp()) + p[3]
    }
    fn gradient(&self, p: &[f64], x: f64, out: &mut [f64]) {
        let e = (-p[1] * x + p[2]).exp();
        let s = 1.0 / (1.0 + e);
        let ds = if e.is_finite() { e * s * s } else { 0.0 };
        out[0] = s;
        out[1] = p[0] * x * ds;
        out[2] = -p[0] * ds;
        out[3] = 1.0;
    }
}

/// `1 − SS_res / SS_tot`.
pub fn r_squared(y: &[f64], fitted: &[f64]) -> f64 {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let ss_res: f64 = y.iter().zip(fitted).map(|(a, b)| (a - b).powi(2)).sum();
    1.0 - ss_res / ss_tot
}

const MAX_ITERATIONS: usize = 1000;

fn ssr_of(model: &dyn Model, p: &[f64], x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(xi, yi)| (yi - model.value(p, *xi)).powi(2)).sum()
}

fn jacobian(model: &dyn Model, p: &[f64], x: &[f64]) -> DMatrix<f64> {
    let k = p.len();
    let mut j = DMatrix::zeros(x.len(), k);
    let mut g = vec![0.0; k];
    for (i, xi) in x.iter().enumerate() {
        model.gradient(p, *xi, &mut g);
        for c in 0..k {
            j[(i, c)] = g[c];
        }
    }
    j
}

/// Levenberg–Marquardt from a single starting point.
pub fn levenberg_marquardt(model: &dyn Model, x: &[f64], y: &[f64], start: &[f64]) -> Result<FitResult> {
    let k = model.names().len();
    if start.len() != k {
        return Err(Error::Dimension(format!("model needs {k} starting values, got {}", start.len())));
    }
    if x.len() != y.len() || x.len() <= k {
        return Err(Error::InvalidParameter(format!("fit needs more than {k} points with matching x and y")));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("fit data"));
    }
    let mut p = start.to_vec();
    let mut ssr = ssr_of(model, &p, x, y);
    if !ssr.is_finite() {
        return Err(Error::FitFailed { reason: "model is not finite at the starting point".into(), ssr });
    }
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut it = 0;
    while it < MAX_ITERATIONS {
        it += 1;
        let j = jacobian(model, &p, x);
        let r = DVector::from_iterator(x.len(), x.iter().zip(y).map(|(xi, yi)| yi - model.value(&p, *xi)));
        let jtj = j.transpose() * &j;
        let g = j.transpose() * r;
        let mut accepted = false;
        while lambda < 1e16 {
            let mut a = jtj.clone();
            for d in 0..k {
                a[(d, d)] += lambda * jtj[(d, d)].max(1e-12);
            }
            let Some(step) = a.lu().solve(&g) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let s = ssr_of(model, &trial, x, y);
            if s.is_finite() && s <= ssr {
                let small_step = step.iter().zip(&p).all(|(d, v)| d.abs() <= 1e-12 * (v.abs() + 1e-12));
                let small_gain = ssr - s <= 1e-15 * ssr.max(1e-300);
                p = trial;
                ssr = s;
                lambda = (lambda / 10.0).max(1e-15);
                accepted = true;
                converged = small_step || small_gain || ssr == 0.0;
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // No downhill step at any damping: a stationary point.
            converged = true;
        }
        if converged {
            break;
        }
    }
    if !converged {
        return Err(Error::FitFailed { reason: format!("no convergence after {MAX_ITERATIONS} iterations"), ssr });
    }
    let j = jacobian(model, &p, x);
    let dof = (x.len() - k) as f64;
    let cov = (j.transpose() * &j)
        .try_inverse()
        .ok_or(Error::FitFailed { reason: "singular normal matrix at the optimum".into(), ssr })?
        * (ssr / dof);
    let fitted: Vec<f64> = x.iter().map(|xi| model.value(&p, *xi)).collect();
    Ok(FitResult {
        names: model.names().iter().map(|s| s.to_string()).collect(),
        sigmas: (0..k).map(|d| cov[(d, d)].max(0.0).sqrt()).collect(),
        params: p,
        r_squared: r_squared(y, &fitted),
        ssr,
        iterations: it,
    })
}

fn best_of(model: &dyn Model, x: &[f64], y: &[f64], starts: Vec<Vec<f64>>) -> Result<FitResult> {
    let mut best: Option<FitResult> = None;
    let mut last_err = None;
    for s in starts {
        match levenberg_marquardt(model, x, y, &s) {
            Ok(r) if best.as_ref().is_none_or(|b| r.ssr < b.ssr) => best = Some(r),
            Ok(_) => {}
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.unwrap_or(Error::FitFailed { reason: "no starting point".into(), ssr: f64::NAN }))
}

/// Linear least-squares slope and intercept.
fn line(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Fits `y = ν₁ x^{−p} + ν₂` (x > 0). Starting points come from log-log
/// slopes after subtracting several trial offsets.
pub fn fit_power_law(x: &[f64], y: &[f64]) -> Result<FitResult> {
    if x.len() < 4 {
        return Err(Error::InvalidParameter("power-law fit needs at least 4 points".into()));
    }
    if x.iter().any(|v| *v <= 0.0) {
        return Err(Error::InvalidParameter("power-law fit needs positive abscissae".into()));
    }
    let ymin = y.iter().cloned().fold(f64::INFINITY, f64::min);
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let starts = [0.0, 0.5, 0.8, 0.95]
        .iter()
        .filter_map(|frac| {
            let off = if ymin > 0.0 { frac * ymin } else { ymin - 1.0 };
            let ly: Vec<f64> = y.iter().map(|v| (v - off).ln()).collect();
            if ly.iter().any(|v| !v.is_finite()) {
                return None;
            }
            let (slope, icpt) = line(&lx, &ly);
            Some(vec![icpt.exp(), off, -slope])
        })
        .collect();
    best_of(&PowerLaw, x, y, starts)
}

/// Fits `y = a / (1 + e^{−b x + c}) + d`. Starting points place the midpoint
/// at the data's half-height crossing with several slopes.
pub fn fit_logistic(x: &[f64], y: &[f64]) -> Result<FitResult> {
    if x.len() < 5 {
        return Err(Error::InvalidParameter("logistic fit needs at least 5 points".into()));
    }
    let (ymin, ymax) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    let (xmin, xmax) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    let mut pts: Vec<(f64, f64)> = x.iter().cloned().zip(y.iter().cloned()).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let half = 0.5 * (ymin + ymax);
    let mid = pts
        .windows(2)
        .find(|w| (w[0].1 - half) * (w[1].1 - half) <= 0.0)
        .map_or(0.5 * (xmin + xmax), |w| 0.5 * (w[0].0 + w[1].0));
    let sign = if pts.last().map(|p| p.1) >= pts.first().map(|p| p.1) { 1.0 } else { -1.0 };
    let span = (xmax - xmin).max(1e-12);
    let mut starts = Vec::new();
    for width in [0.05, 0.1, 0.2, 0.4] {
        for xm in [mid, xmin + 0.3 * span, xmin + 0.7 * span] {
            let b = sign * 4.0 / (width * span * 4.0);
            starts.push(vec![ymax - ymin, b, b * xm, ymin]);
        }
    }
    best_of(&Logistic, x, y, starts)
}
