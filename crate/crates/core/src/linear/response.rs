use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::LinearModel;
use crate::error::{Error, Result};
use crate::pss::PssConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaSet {
    pub gamma: Vec<f64>,
    pub gamma_hat: Vec<f64>,
}

/// Output-matrix coefficients of the remote frequency terms, and their
/// values normalized by `beta1`.
pub fn gamma_coefficients(cfg: &PssConfig, weights: &[f64], f0: f64) -> Result<GammaSet> {
    if cfg.beta1 == 0.0 {
        return Err(Error::UndefinedRatio("normalized coefficients need beta1 > 0".into()));
    }
    let ratio = cfg.beta2 / cfg.beta1;
    Ok(GammaSet {
        gamma: weights.iter().map(|a| a * (cfg.beta1 - cfg.beta2) / f0).collect(),
        gamma_hat: weights.iter().map(|a| a / f0 * (1.0 - ratio)).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioClass {
    BelowOne,
    One,
    AboveOne,
}

pub fn ratio_class(cfg: &PssConfig) -> Result<RatioClass> {
    if cfg.beta1 == 0.0 {
        return Err(Error::UndefinedRatio("beta2/beta1 needs beta1 > 0".into()));
    }
    let r = cfg.beta2 / cfg.beta1;
    Ok(if r < 1.0 {
        RatioClass::BelowOne
    } else if r == 1.0 {
        RatioClass::One
    } else {
        RatioClass::AboveOne
    })
}

/// Whether a normalized coefficient lies in the range of its ratio class:
/// `(0, α/f0]` below one, exactly zero at one, negative above one.
pub fn gamma_hat_in_range(class: RatioClass, gamma_hat: f64, alpha: f64, f0: f64) -> bool {
    match class {
        RatioClass::BelowOne => gamma_hat > 0.0 && gamma_hat <= alpha / f0,
        RatioClass::One => gamma_hat == 0.0,
        RatioClass::AboveOne => gamma_hat < 0.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponsePoint {
    pub omega_rad: f64,
    pub gain_db: f64,
    pub phase_deg: f64,
    pub re: f64,
    pub im: f64,
}

impl ResponsePoint {
    fn new(omega_rad: f64, value: Complex64) -> Self {
        Self {
            omega_rad,
            gain_db: 20.0 * value.norm().log10(),
            phase_deg: value.arg().to_degrees(),
            re: value.re,
            im: value.im,
        }
    }

    pub fn value(&self) -> Complex64 {
        Complex64::new(self.re, self.im)
    }

    pub fn freq_hz(&self) -> f64 {
        self.omega_rad / (2.0 * PI)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ResponseReport {
    pub points: Vec<ResponsePoint>,
    /// Frequencies (rad/s) skipped because `jωI - A` was singular.
    pub skipped: Vec<f64>,
}

/// `n` logarithmically spaced frequencies from `f_lo` to `f_hi` Hz, in rad/s.
pub fn log_frequency_grid(f_lo: f64, f_hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![2.0 * PI * f_lo];
    }
    let (a, b) = (f_lo.log10(), f_hi.log10());
    (0..n).map(|k| 2.0 * PI * 10f64.powf(a + (b - a) * k as f64 / (n - 1) as f64)).collect()
}

fn io(model: &LinearModel) -> Result<(&DVector<f64>, &DVector<f64>)> {
    match (&model.b_p, &model.c_nu) {
        (Some(b), Some(c)) => Ok((b, c)),
        _ => Err(Error::Domain("frequency response needs an open-loop model with B_p and C_nu".into())),
    }
}

fn state_response(a: &DMatrix<f64>, b: &DVector<f64>, w: f64) -> Option<DVector<Complex64>> {
    let n = a.nrows();
    let m = DMatrix::from_fn(n, n, |i, j| {
        let d = if i == j { Complex64::new(0.0, w) } else { Complex64::new(0.0, 0.0) };
        d - a[(i, j)]
    });
    let lu = m.lu();
    let diag_min = (0..n).map(|i| lu.u()[(i, i)].norm()).fold(f64::INFINITY, f64::min);
    let diag_max = (0..n).map(|i| lu.u()[(i, i)].norm()).fold(0.0, f64::max);
    if !(diag_min > 1e-14 * diag_max) {
        return None;
    }
    let rhs = b.map(|x| Complex64::new(x, 0.0));
    lu.solve(&rhs).filter(|x| x.iter().all(|c| c.re.is_finite() && c.im.is_finite()))
}

fn response_with<F>(model: &LinearModel, omega_grid: &[f64], output: F) -> Result<ResponseReport>
where
    F: Fn(f64, usize, f64) -> Complex64,
{
    let (b, c) = io(model)?;
    let mut report = ResponseReport::default();
    for &w in omega_grid {
        let Some(x) = state_response(&model.a, b, w) else {
            report.skipped.push(w);
            continue;
        };
        let mut h = Complex64::new(0.0, 0.0);
        for (i, &ci) in c.iter().enumerate() {
            if ci != 0.0 {
                h += output(w, i, ci) * x[i];
            }
        }
        report.points.push(ResponsePoint::new(w, h));
    }
    Ok(report)
}

/// `H(jω) = C_ν (jωI − A)⁻¹ B_p` on a frequency grid in rad/s.
pub fn open_loop_response(model: &LinearModel, omega_grid: &[f64]) -> Result<ResponseReport> {
    response_with(model, omega_grid, |_, _, c| Complex64::new(c, 0.0))
}

/// Response with each sensor term of `C_ν` delayed by its own `τ_k`, s.
pub fn delayed_response(model: &LinearModel, delays: &[f64], omega_grid: &[f64]) -> Result<ResponseReport> {
    if delays.len() != model.sensors.len() {
        return Err(Error::Domain(format!("expected {} delays, got {}", model.sensors.len(), delays.len())));
    }
    if delays.iter().any(|&t| !(t >= 0.0)) {
        return Err(Error::Domain("delays must be >= 0".into()));
    }
    let delay_of: Vec<Option<f64>> = (0..model.dim())
        .map(|i| model.sensors.iter().position(|s| s.freq == i).map(|k| delays[k]))
        .collect();
    response_with(model, omega_grid, |w, i, c| match delay_of[i] {
        Some(tau) if tau != 0.0 => Complex64::new(c, 0.0) * Complex64::from_polar(1.0, -w * tau),
        _ => Complex64::new(c, 0.0),
    })
}
