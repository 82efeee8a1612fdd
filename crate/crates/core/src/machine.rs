//! Synchronous machine, exciter and turbine-governor equations.
//!
//! The machine is a two-axis model (rotor angle, speed and the two transient
//! voltages) or a classical constant-voltage-behind-reactance model. The
//! swing equation is written in accelerating-power form with the `1/ω`
//! factor kept, so linearizing it about a trajectory that is not an
//! equilibrium produces the extra damping term returned by
//! [`ltv_damping_coefficient`].

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Matrix2, Vector2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MachineModel {
    #[default]
    TwoAxis,
    /// Constant internal voltage behind `xd_p`; flux states are not integrated.
    Classical,
}

/// Machine parameters on the machine's own MVA base unless converted with
/// [`MachineParams::to_system_base`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineParams {
    /// Inertia constant H, s.
    pub h: f64,
    /// Damping D, pu torque / pu speed.
    #[serde(default)]
    pub d: f64,
    /// Synchronous speed, pu.
    #[serde(default = "unity")]
    pub omega0: f64,
    pub xd: f64,
    pub xq: f64,
    pub xd_p: f64,
    pub xq_p: f64,
    #[serde(default)]
    pub ra: f64,
    pub td0_p: f64,
    pub tq0_p: f64,
    pub mva_base: f64,
    #[serde(default)]
    pub model: MachineModel,
}

fn unity() -> f64 {
    1.0
}

impl MachineParams {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(self.h > 0.0) {
            return Err("machine h must be > 0".into());
        }
        if !(self.xd_p > 0.0) || self.xd < self.xd_p {
            return Err("machine reactances must satisfy xd >= xd_p > 0".into());
        }
        if !(self.xq_p > 0.0) || self.xq < self.xq_p {
            return Err("machine reactances must satisfy xq >= xq_p > 0".into());
        }
        if !(self.td0_p > 0.0) || !(self.tq0_p > 0.0) {
            return Err("open-circuit time constants must be > 0".into());
        }
        if !(self.mva_base > 0.0) {
            return Err("mva_base must be > 0".into());
        }
        if !(self.omega0 > 0.0) {
            return Err("omega0 must be > 0".into());
        }
        Ok(())
    }

    /// Convert impedances, inertia and damping to `base_mva`.
    pub fn to_system_base(&self, base_mva: f64) -> MachineParams {
        let z = base_mva / self.mva_base;
        let s = self.mva_base / base_mva;
        MachineParams {
            h: self.h * s,
            d: self.d * s,
            omega0: self.omega0,
            xd: self.xd * z,
            xq: self.xq * z,
            xd_p: self.xd_p * z,
            xq_p: self.xq_p * z,
            ra: self.ra * z,
            td0_p: self.td0_p,
            tq0_p: self.tq0_p,
            mva_base: base_mva,
            model: self.model,
        }
    }

    /// `1 / (ra + j x'd)`.
    pub fn source_admittance(&self) -> Complex64 {
        Complex64::new(self.ra, self.xd_p).inv()
    }

    /// Quadrature transient reactance seen by the stator equations.
    fn effective_xq_p(&self) -> f64 {
        match self.model {
            MachineModel::TwoAxis => self.xq_p,
            MachineModel::Classical => self.xd_p,
        }
    }
}

/// Single time-constant static exciter with AVR gain and hard output limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExciterParams {
    pub ka: f64,
    pub ta: f64,
    pub efd_min: f64,
    pub efd_max: f64,
    /// Voltage reference; back-solved at initialization when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vref: Option<f64>,
}

impl ExciterParams {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(self.ka > 0.0) || !(self.ta > 0.0) {
            return Err("exciter ka and ta must be > 0".into());
        }
        if !(self.efd_min < self.efd_max) {
            return Err("exciter limits must satisfy efd_min < efd_max".into());
        }
        Ok(())
    }
}

/// Droop governor: servo lag followed by a turbine lag. Machine base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GovernorParams {
    pub droop_r: f64,
    pub tg: f64,
    pub tt: f64,
    pub pmax: f64,
}

impl Default for GovernorParams {
    fn default() -> Self {
        Self { droop_r: 0.05, tg: 0.2, tt: 5.0, pmax: 1.0 }
    }
}

impl GovernorParams {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(self.droop_r > 0.0) {
            return Err("governor droop_r must be > 0".into());
        }
        if !(self.tg > 0.0) || !(self.tt > 0.0) {
            return Err("governor time constants must be > 0".into());
        }
        Ok(())
    }
}

/// Dynamic state of one unit. `efd`, `pv` and `pm` are held constant when the
/// corresponding block is absent.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MachineState {
    pub delta: f64,
    pub omega: f64,
    pub eq_p: f64,
    pub ed_p: f64,
    pub efd: f64,
    pub pv: f64,
    pub pm: f64,
}

/// A machine with its control blocks and operating setpoints, on system base.
#[derive(Debug, Clone, PartialEq)]
pub struct MachineAssembly {
    pub params: MachineParams,
    pub exciter: Option<ExciterParams>,
    pub governor: Option<GovernorParams>,
    /// Machine MVA over system MVA; scales governor quantities.
    pub rating: f64,
    pub vref: f64,
    pub pref: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwingRates {
    pub d_omega: f64,
    pub d_delta: f64,
}

/// Accelerating-power swing equation.
pub fn swing_derivative(state: &MachineState, pe: f64, params: &MachineParams, f0: f64) -> Result<SwingRates> {
    if !(state.omega > 0.0) {
        return Err(Error::NumericGuard(format!("rotor speed {} must stay positive", state.omega)));
    }
    let two_h = 2.0 * params.h;
    let d_omega = -params.d / two_h * (state.omega - params.omega0) + (state.pm - pe) / (two_h * state.omega);
    let d_delta = 2.0 * PI * f0 * (state.omega - params.omega0);
    Ok(SwingRates { d_omega, d_delta })
}

/// Damping coefficient of the swing equation linearized along a trajectory.
pub fn ltv_damping_coefficient(pm_bar: f64, pe_bar: f64, omega_bar: f64, d: f64) -> Result<f64> {
    if !(omega_bar > 0.0) {
        return Err(Error::Domain(format!("trajectory speed {omega_bar} must be > 0")));
    }
    Ok(d + (pm_bar - pe_bar) / (omega_bar * omega_bar))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub pm_bar: f64,
    pub pe_bar: f64,
    pub omega_bar: f64,
}

/// `Δω̇ = a·Δω + b·(ΔPm − ΔPe)` about a trajectory point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwingLinearization {
    pub a_coeff: f64,
    pub b_coeff: f64,
}

pub fn ltv_swing_linearization(point: &TrajectoryPoint, params: &MachineParams) -> Result<SwingLinearization> {
    let TrajectoryPoint { pm_bar, pe_bar, omega_bar } = *point;
    if !(omega_bar > 0.0) {
        return Err(Error::Domain(format!("trajectory speed {omega_bar} must be > 0")));
    }
    let two_h = 2.0 * params.h;
    Ok(SwingLinearization {
        a_coeff: -(params.d / two_h + (pm_bar - pe_bar) / (two_h * omega_bar * omega_bar)),
        b_coeff: 1.0 / (two_h * omega_bar),
    })
}

fn rotation(delta: f64) -> Matrix2<f64> {
    let (s, c) = (delta - FRAC_PI_2).sin_cos();
    Matrix2::new(c, -s, s, c)
}

/// Stator quantities in the machine dq frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatorSolution {
    pub current: Complex64,
    pub i_d: f64,
    pub i_q: f64,
    pub v_d: f64,
    pub v_q: f64,
    /// Air-gap power, pu.
    pub pe: f64,
}

fn stator_impedance(params: &MachineParams) -> Matrix2<f64> {
    // v_d = e'd - ra i_d + x'q i_q ; v_q = e'q - ra i_q - x'd i_d
    Matrix2::new(params.ra, -params.effective_xq_p(), params.xd_p, params.ra)
}

/// Stator currents and electrical power for a given terminal voltage.
pub fn stator(state: &MachineState, v_terminal: Complex64, params: &MachineParams) -> StatorSolution {
    let rot = rotation(state.delta);
    let v_dq = rot.transpose() * Vector2::new(v_terminal.re, v_terminal.im);
    let z = stator_impedance(params);
    let e = Vector2::new(state.ed_p, state.eq_p);
    let i_dq = z.try_inverse().expect("stator impedance is nonsingular for x'd > 0") * (e - v_dq);
    let i_net = rot * i_dq;
    let (i_d, i_q) = (i_dq[0], i_dq[1]);
    let (v_d, v_q) = (v_dq[0], v_dq[1]);
    let pe = v_d * i_d + v_q * i_q + params.ra * (i_d * i_d + i_q * i_q);
    StatorSolution { current: Complex64::new(i_net[0], i_net[1]), i_d, i_q, v_d, v_q, pe }
}

/// Norton representation for the network solution: the injection, and the
/// real 2x2 admittance correction relative to `source_admittance()` that
/// accounts for transient saliency (zero when x'q = x'd).
pub fn norton(state: &MachineState, params: &MachineParams) -> (Complex64, Matrix2<f64>) {
    let rot = rotation(state.delta);
    let y_dq = stator_impedance(params).try_inverse().expect("nonsingular stator impedance");
    let inj = rot * y_dq * Vector2::new(state.ed_p, state.eq_p);
    let y_net = rot * y_dq * rot.transpose();
    let ys = params.source_admittance();
    let ys_real = Matrix2::new(ys.re, -ys.im, ys.im, ys.re);
    (Complex64::new(inj[0], inj[1]), y_net - ys_real)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MachineDerivative {
    pub d_delta: f64,
    pub d_omega: f64,
    pub d_eq_p: f64,
    pub d_ed_p: f64,
    pub d_efd: f64,
    pub d_pv: f64,
    pub d_pm: f64,
    pub pe: f64,
    pub vt: f64,
    pub current: Complex64,
}

fn limited_rate(value: f64, rate: f64, lo: f64, hi: f64) -> f64 {
    if (value >= hi && rate > 0.0) || (value <= lo && rate < 0.0) {
        0.0
    } else {
        rate
    }
}

/// Full derivative of one unit. The exciter summing junction adds the PSS
/// output to the voltage reference.
pub fn machine_derivatives(
    state: &MachineState,
    v_terminal: Complex64,
    pss_output: f64,
    unit: &MachineAssembly,
    f0: f64,
) -> Result<MachineDerivative> {
    let p = &unit.params;
    let st = stator(state, v_terminal, p);
    let swing = swing_derivative(state, st.pe, p, f0)?;
    let vt = v_terminal.norm();
    let mut out = MachineDerivative {
        d_delta: swing.d_delta,
        d_omega: swing.d_omega,
        pe: st.pe,
        vt,
        current: st.current,
        ..Default::default()
    };
    if p.model == MachineModel::TwoAxis {
        out.d_eq_p = (-state.eq_p - (p.xd - p.xd_p) * st.i_d + state.efd) / p.td0_p;
        out.d_ed_p = (-state.ed_p + (p.xq - p.xq_p) * st.i_q) / p.tq0_p;
    }
    if let Some(ex) = &unit.exciter {
        let raw = (ex.ka * (unit.vref + pss_output - vt) - state.efd) / ex.ta;
        out.d_efd = limited_rate(state.efd, raw, ex.efd_min, ex.efd_max);
    }
    if let Some(gov) = &unit.governor {
        let demand = unit.pref - unit.rating * (state.omega - p.omega0) / gov.droop_r;
        let raw = (demand - state.pv) / gov.tg;
        out.d_pv = limited_rate(state.pv, raw, 0.0, gov.pmax * unit.rating);
        out.d_pm = (state.pv - state.pm) / gov.tt;
    }
    Ok(out)
}

/// Clamp limited states after an integration step.
pub fn clamp_state(state: &mut MachineState, unit: &MachineAssembly) {
    if let Some(ex) = &unit.exciter {
        state.efd = state.efd.clamp(ex.efd_min, ex.efd_max);
    }
    if let Some(gov) = &unit.governor {
        state.pv = state.pv.clamp(0.0, gov.pmax * unit.rating);
    }
}

/// Steady state consistent with a terminal voltage and power injection.
pub fn steady_state(v_terminal: Complex64, p: f64, q: f64, params: &MachineParams) -> MachineState {
    let i = (Complex64::new(p, q) / v_terminal).conj();
    let xq = match params.model {
        MachineModel::TwoAxis => params.xq,
        MachineModel::Classical => params.xd_p,
    };
    let e_q_axis = v_terminal + Complex64::new(params.ra, xq) * i;
    let delta = e_q_axis.arg();
    let rot = rotation(delta);
    let v_dq = rot.transpose() * Vector2::new(v_terminal.re, v_terminal.im);
    let i_dq = rot.transpose() * Vector2::new(i.re, i.im);
    let (i_d, i_q) = (i_dq[0], i_dq[1]);
    let xq_p = params.effective_xq_p();
    let ed_p = v_dq[0] + params.ra * i_d - xq_p * i_q;
    let eq_p = v_dq[1] + params.ra * i_q + params.xd_p * i_d;
    let efd = match params.model {
        MachineModel::TwoAxis => eq_p + (params.xd - params.xd_p) * i_d,
        MachineModel::Classical => eq_p,
    };
    let pe = v_dq[0] * i_d + v_dq[1] * i_q + params.ra * (i_d * i_d + i_q * i_q);
    MachineState { delta, omega: params.omega0, eq_p, ed_p, efd, pv: pe, pm: pe }
}
