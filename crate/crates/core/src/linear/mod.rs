//! Small-signal analysis of the closed loop.

mod eigen;
mod response;
mod sweep;

pub use eigen::{classify_modes, eigensolve, ModalResult, ModeClass};
pub use response::{
    delayed_response, gamma_coefficients, gamma_hat_in_range, log_frequency_grid, open_loop_response, ratio_class,
    GammaSet, RatioClass, ResponsePoint, ResponseReport,
};
pub use sweep::{beta_sweep, track_modes, LocusPoint, LocusTable, ModeTrack, SweepParam, SweepSpec};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::system::{ClosedLoop, Inputs, LoopBreak, Workspace};

/// Default finite-difference step on per-unit states.
pub const DEFAULT_STEP: f64 = 1e-6;
/// Largest derivative accepted as an equilibrium for linearization.
pub const EQUILIBRIUM_TOLERANCE: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineStates {
    pub id: usize,
    pub area: u32,
    pub delta: usize,
    pub omega: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorStates {
    pub sensor_id: usize,
    pub freq: usize,
    pub weight: f64,
}

/// `ẋ = A x + B_p u`, `y = C_ν x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub a: DMatrix<f64>,
    pub b_p: Option<DVector<f64>>,
    pub c_nu: Option<DVector<f64>>,
    pub state_labels: Vec<String>,
    /// Online machines and their angle and speed states.
    pub machines: Vec<MachineStates>,
    pub sensors: Vec<SensorStates>,
    /// Unit whose loop is open, if any.
    pub studied: Option<usize>,
}

impl LinearModel {
    /// Model from raw matrices with generic labels.
    pub fn from_matrices(a: DMatrix<f64>, b_p: Option<DVector<f64>>, c_nu: Option<DVector<f64>>) -> Self {
        let n = a.nrows();
        Self {
            a,
            b_p,
            c_nu,
            state_labels: (0..n).map(|i| format!("x{i}")).collect(),
            machines: Vec::new(),
            sensors: Vec::new(),
            studied: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }
}

/// Linearize the closed loop at `x0` by central differences.
///
/// With the loop of a studied unit opened at its filter-chain input, `B_p`
/// is the input column of that signal and `C_ν` reads the negated control
/// error from the local speed and the sensor frequency states.
pub fn linearize(sys: &ClosedLoop, x0: &[f64], ws: &Workspace, step: f64) -> Result<LinearModel> {
    let n = sys.n_states();
    if x0.len() != n {
        return Err(Error::Structure(format!("state length {} does not match {n}", x0.len())));
    }
    if !(step > 0.0) {
        return Err(Error::Domain("perturbation must be > 0".into()));
    }
    let eval = |x: &[f64], u: f64| -> Result<Vec<f64>> {
        let mut w = ws.clone();
        let mut dx = vec![0.0; n];
        sys.derivatives(x, &Inputs { omega_bar: None, u }, &mut w, &mut dx)?;
        Ok(dx)
    };
    let f0 = eval(x0, 0.0)?;
    if let Some((i, r)) = f0.iter().map(|r| r.abs()).enumerate().max_by(|a, b| a.1.total_cmp(&b.1)) {
        if r > EQUILIBRIUM_TOLERANCE {
            return Err(Error::NotEquilibrium { state: sys.labels()[i].clone(), residual: r });
        }
    }
    let columns: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let mut xp = x0.to_vec();
            let mut xm = x0.to_vec();
            xp[j] += step;
            xm[j] -= step;
            let fp = eval(&xp, 0.0)?;
            let fm = eval(&xm, 0.0)?;
            Ok(fp.iter().zip(&fm).map(|(p, m)| (p - m) / (2.0 * step)).collect())
        })
        .collect::<Result<_>>()?;
    let a = DMatrix::from_fn(n, n, |i, j| columns[j][i]);

    let machines = sys
        .units()
        .iter()
        .filter(|u| u.online)
        .map(|u| MachineStates { id: u.id, area: u.area, delta: u.index.delta, omega: u.index.omega })
        .collect();
    let sensors = sys
        .sensors()
        .iter()
        .map(|s| SensorStates { sensor_id: s.channel.sensor_id, freq: s.freq, weight: s.channel.weight })
        .collect();

    let (mut b_p, mut c_nu, mut studied) = (None, None, None);
    if let Some((k, LoopBreak::ChainInput)) = sys.open_loop() {
        let fp = eval(x0, step)?;
        let fm = eval(x0, -step)?;
        b_p = Some(DVector::from_iterator(n, fp.iter().zip(&fm).map(|(p, m)| (p - m) / (2.0 * step))));
        let unit = &sys.units()[k];
        let cfg = unit.pss.as_ref().expect("open loop requires a stabilizer");
        let mut c = DVector::zeros(n);
        for s in sys.sensors() {
            c[s.freq] += s.channel.weight * (cfg.beta1 - cfg.beta2) / sys.f0;
        }
        c[unit.index.omega] -= cfg.beta1;
        c_nu = Some(c);
        studied = Some(unit.id);
    }
    Ok(LinearModel { a, b_p, c_nu, state_labels: sys.labels().to_vec(), machines, sensors, studied })
}
