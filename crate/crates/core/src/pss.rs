//! Generalized speed-deviation stabilizer.
//!
//! The control error splits the usual `ωᵢ − ω₀` into a small-signal part
//! `ωᵢ − ω̄` and a steady-state part `ω̄ − ω₀`, weighted by `beta1` and
//! `beta2`. With `beta1 == beta2` the stabilizer reduces to a conventional
//! Δω design with gain `beta * gain_k`. The executed form builds the error
//! from a constant reference and a single feedback signal
//! ([`reference_and_feedback`]); [`equivalent_speed_signal`] is the
//! single-signal view referenced to ω₀.
//!
//! Filter chain: washout on the combined error, then one or more lead-lag
//! stages, then the gain and the output limiter.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PssConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub gain_k: f64,
    #[serde(default = "default_washout")]
    pub washout_tw: f64,
    /// `(t_num, t_den)` per lead-lag stage.
    #[serde(default = "default_stages")]
    pub leadlag_stages: Vec<(f64, f64)>,
    #[serde(default = "default_vs_min")]
    pub vs_min: f64,
    #[serde(default = "default_vs_max")]
    pub vs_max: f64,
}

fn default_washout() -> f64 {
    10.0
}
fn default_stages() -> Vec<(f64, f64)> {
    vec![(0.25, 0.04)]
}
fn default_vs_min() -> f64 {
    -0.1
}
fn default_vs_max() -> f64 {
    0.1
}

impl Default for PssConfig {
    fn default() -> Self {
        Self {
            beta1: 1.0,
            beta2: 1.0,
            gain_k: 25.0,
            washout_tw: default_washout(),
            leadlag_stages: default_stages(),
            vs_min: default_vs_min(),
            vs_max: default_vs_max(),
        }
    }
}

impl PssConfig {
    pub fn with_tuning(beta1: f64, beta2: f64, gain_k: f64) -> Self {
        Self { beta1, beta2, gain_k, ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.beta1) || !(0.0..=1.0).contains(&self.beta2) {
            return Err("beta1 and beta2 must lie in [0, 1]".into());
        }
        if !(self.washout_tw > 0.0) {
            return Err("washout_tw must be > 0".into());
        }
        if self.leadlag_stages.iter().any(|&(_, den)| !(den > 0.0)) {
            return Err("lead-lag denominators must be > 0".into());
        }
        if !(self.vs_min < self.vs_max) {
            return Err("output limits must satisfy vs_min < vs_max".into());
        }
        Ok(())
    }

    /// Number of filter states (washout plus one per lead-lag stage).
    pub fn state_count(&self) -> usize {
        1 + self.leadlag_stages.len()
    }
}

/// `β₁(ωᵢ − ω̄) + β₂(ω̄ − ω₀)`.
pub fn control_error(omega_i: f64, omega_bar: f64, omega0: f64, cfg: &PssConfig) -> f64 {
    cfg.beta1 * (omega_i - omega_bar) + cfg.beta2 * (omega_bar - omega0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceFeedback {
    pub nu_ref: f64,
    pub nu: f64,
}

impl ReferenceFeedback {
    pub fn error(&self) -> f64 {
        self.nu - self.nu_ref
    }
}

pub fn reference_and_feedback(omega_i: f64, omega_bar: f64, omega0: f64, cfg: &PssConfig) -> ReferenceFeedback {
    ReferenceFeedback {
        nu_ref: cfg.beta2 * omega0,
        nu: cfg.beta1 * (omega_i - omega_bar) + cfg.beta2 * omega_bar,
    }
}

/// Feedback signal of the single-signal form; its deviation from ω₀ times
/// `beta2` is the control error when `beta2 > 0`.
pub fn equivalent_speed_signal(omega_i: f64, omega_bar: f64, omega0: f64, cfg: &PssConfig) -> f64 {
    if cfg.beta2 > 0.0 {
        if cfg.beta1 == cfg.beta2 {
            return omega_i;
        }
        cfg.beta1 / cfg.beta2 * (omega_i - omega_bar) + omega_bar
    } else {
        cfg.beta1 * (omega_i - omega_bar) + omega0
    }
}

/// Filter states: washout then lead-lag stages.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PssState {
    pub washout_state: f64,
    pub leadlag_states: Vec<f64>,
}

impl PssState {
    pub fn zeroed(cfg: &PssConfig) -> Self {
        Self { washout_state: 0.0, leadlag_states: vec![0.0; cfg.leadlag_stages.len()] }
    }

    pub fn from_slice(x: &[f64]) -> Self {
        Self { washout_state: x[0], leadlag_states: x[1..].to_vec() }
    }

    pub fn write_to(&self, out: &mut [f64]) {
        out[0] = self.washout_state;
        out[1..1 + self.leadlag_states.len()].copy_from_slice(&self.leadlag_states);
    }
}

/// Output of the filter chain before gain and limits, and the state
/// derivatives, evaluated directly on a state slice.
pub(crate) fn chain_eval(x: &[f64], input: f64, cfg: &PssConfig, dx: &mut [f64]) -> f64 {
    // Washout sTw/(1+sTw): y = u - x, x' = (u - x)/Tw.
    let mut signal = input - x[0];
    dx[0] = signal / cfg.washout_tw;
    // Lead-lag (1+sTn)/(1+sTd): x' = (u - x)/Td, y = x + (Tn/Td)(u - x).
    for (k, &(t_num, t_den)) in cfg.leadlag_stages.iter().enumerate() {
        let s = x[1 + k];
        let gap = signal - s;
        dx[1 + k] = gap / t_den;
        signal = s + t_num / t_den * gap;
    }
    signal
}

pub fn pss_derivatives(state: &PssState, delta_nu: f64, cfg: &PssConfig) -> PssState {
    let mut x = vec![0.0; cfg.state_count()];
    state.write_to(&mut x);
    let mut dx = vec![0.0; x.len()];
    chain_eval(&x, delta_nu, cfg, &mut dx);
    PssState::from_slice(&dx)
}

/// Unlimited chain output (unity gain).
pub fn chain_output(state: &PssState, delta_nu: f64, cfg: &PssConfig) -> f64 {
    let mut x = vec![0.0; cfg.state_count()];
    state.write_to(&mut x);
    let mut dx = vec![0.0; x.len()];
    chain_eval(&x, delta_nu, cfg, &mut dx)
}

pub fn limit_output(chain: f64, cfg: &PssConfig) -> f64 {
    (cfg.gain_k * chain).clamp(cfg.vs_min, cfg.vs_max)
}

/// Stabilizer output `v_s`: gain applied to the chain output, then limited.
pub fn pss_output(state: &PssState, delta_nu: f64, cfg: &PssConfig) -> f64 {
    limit_output(chain_output(state, delta_nu, cfg), cfg)
}

/// Standalone stabilizer driven by recorded speed signals, integrated with
/// classical RK4 and linear interpolation of the inputs between samples.
#[derive(Debug, Clone)]
pub struct PssRunner {
    pub cfg: PssConfig,
    state: Vec<f64>,
}

impl PssRunner {
    pub fn new(cfg: PssConfig) -> Self {
        let n = cfg.state_count();
        Self { cfg, state: vec![0.0; n] }
    }

    /// Output sequence for a control-error sequence sampled at step `dt`.
    pub fn run(&mut self, errors: &[f64], dt: f64) -> Vec<f64> {
        let n = self.state.len();
        let mut out = Vec::with_capacity(errors.len());
        let mut dx = vec![0.0; n];
        let mut k = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        let mut tmp = vec![0.0; n];
        for (i, &e) in errors.iter().enumerate() {
            let y = chain_eval(&self.state, e, &self.cfg, &mut dx);
            out.push(limit_output(y, &self.cfg));
            let Some(&e_next) = errors.get(i + 1) else { break };
            let e_mid = 0.5 * (e + e_next);
            let inputs = [e, e_mid, e_mid, e_next];
            let weights = [0.0, 0.5, 0.5, 1.0];
            for s in 0..4 {
                for j in 0..n {
                    tmp[j] = self.state[j] + if s == 0 { 0.0 } else { weights[s] * dt * k[s - 1][j] };
                }
                chain_eval(&tmp, inputs[s], &self.cfg, &mut k[s]);
            }
            for j in 0..n {
                self.state[j] += dt / 6.0 * (k[0][j] + 2.0 * k[1][j] + 2.0 * k[2][j] + k[3][j]);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(b1: f64, b2: f64) -> PssConfig {
        PssConfig::with_tuning(b1, b2, 25.0)
    }

    #[test]
    fn standard_row_recovers_speed_deviation() {
        let e = control_error(1.004, 1.001, 1.0, &cfg(1.0, 1.0));
        assert!((e - 0.004).abs() < 1e-15);
    }

    #[test]
    fn small_signal_only() {
        let e = control_error(1.002, 1.001, 1.0, &cfg(1.0, 0.0));
        assert!((e - 0.001).abs() < 1e-15);
    }

    #[test]
    fn no_control_row() {
        assert_eq!(control_error(1.3, 0.7, 1.0, &cfg(0.0, 0.0)), 0.0);
    }

    #[test]
    fn reference_value() {
        let rf = reference_and_feedback(1.0, 1.0, 1.0, &cfg(0.3, 0.5));
        assert_eq!(rf.nu_ref, 0.5);
    }

    #[test]
    fn feedback_value() {
        let rf = reference_and_feedback(1.01, 1.005, 1.0, &cfg(0.33, 0.67));
        assert!((rf.nu - (0.33 * 0.005 + 0.67 * 1.005)).abs() < 1e-15);
        assert!((rf.nu - 0.675).abs() < 1e-12);
        assert!((rf.error() - 0.005).abs() < 1e-12);
    }

    #[test]
    fn equal_betas_feed_back_local_speed() {
        assert_eq!(equivalent_speed_signal(1.003, 0.99, 1.0, &cfg(0.7, 0.7)), 1.003);
    }

    #[test]
    fn zero_beta2_branch() {
        let w = equivalent_speed_signal(1.002, 1.001, 1.0, &cfg(1.0, 0.0));
        assert!((w - 1.001).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn reference_form_equals_error(
            wi in 0.9..1.1f64, wb in 0.9..1.1f64, b1 in 0.0..=1.0f64, b2 in 0.0..=1.0f64
        ) {
            let c = cfg(b1, b2);
            let rf = reference_and_feedback(wi, wb, 1.0, &c);
            let err = control_error(wi, wb, 1.0, &c);
            prop_assert!((rf.error() - err).abs() <= 4.0 * f64::EPSILON);
        }

        #[test]
        fn single_signal_form_scaled_by_beta2(
            wi in 0.9..1.1f64, wb in 0.9..1.1f64, b1 in 0.0..=1.0f64, b2 in 0.01..=1.0f64
        ) {
            let c = cfg(b1, b2);
            let w = equivalent_speed_signal(wi, wb, 1.0, &c);
            let err = control_error(wi, wb, 1.0, &c);
            prop_assert!((b2 * (w - 1.0) - err).abs() <= 1e-14);
        }

        #[test]
        fn output_is_clamped(x0 in -1.0..1.0f64, x1 in -1.0..1.0f64, u in -1.0..1.0f64, k in 0.0..200.0f64) {
            let mut c = cfg(1.0, 1.0);
            c.gain_k = k;
            let st = PssState { washout_state: x0, leadlag_states: vec![x1] };
            let v = pss_output(&st, u, &c);
            prop_assert!(v.abs() <= c.vs_min.abs().max(c.vs_max.abs()));
        }
    }

    #[test]
    fn saturation() {
        // Chain output 0.02 with zero states and an identity lead-lag.
        let mut c = cfg(1.0, 1.0);
        c.leadlag_stages = vec![(0.1, 0.1)];
        let st = PssState::zeroed(&c);
        assert!((chain_output(&st, 0.02, &c) - 0.02).abs() < 1e-15);
        assert_eq!(pss_output(&st, 0.02, &c), 0.1);
    }

    #[test]
    fn zero_input_zero_output() {
        let c = cfg(1.0, 0.5);
        let mut runner = PssRunner::new(c);
        let out = runner.run(&vec![0.0; 1000], 0.01);
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn washout_step_response() {
        let mut c = cfg(1.0, 1.0);
        c.leadlag_stages.clear();
        c.gain_k = 1.0;
        c.vs_max = 10.0;
        c.vs_min = -10.0;
        let dt = 1e-3;
        let mut runner = PssRunner::new(c);
        let out = runner.run(&vec![1.0; 10_001], dt);
        for t in [1.0, 5.0, 10.0] {
            let k = (t / dt).round() as usize;
            assert!((out[k] - (-t / 10.0f64).exp()).abs() < 1e-6, "t={t}");
        }
    }

    #[test]
    fn constant_error_washes_out() {
        let c = cfg(1.0, 1.0);
        let mut runner = PssRunner::new(c);
        let out = runner.run(&vec![0.003; 20_001], 0.01);
        assert!(out.last().unwrap().abs() < 1e-6);
    }

    #[test]
    fn matched_leadlag_is_identity() {
        let mut c = cfg(1.0, 1.0);
        c.leadlag_stages = vec![(0.3, 0.3)];
        c.gain_k = 1.0;
        c.vs_max = 10.0;
        c.vs_min = -10.0;
        let mut with_stage = PssRunner::new(c.clone());
        c.leadlag_stages.clear();
        let mut without = PssRunner::new(c);
        let input: Vec<f64> = (0..2000).map(|k| (k as f64 * 0.01).sin() * 0.01).collect();
        let a = with_stage.run(&input, 0.01);
        let b = without.run(&input, 0.01);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn derivatives_match_chain() {
        let c = PssConfig { leadlag_stages: vec![(0.25, 0.04), (0.1, 0.3)], ..cfg(1.0, 0.5) };
        let st = PssState { washout_state: 0.01, leadlag_states: vec![0.02, -0.01] };
        let d = pss_derivatives(&st, 0.05, &c);
        assert!((d.washout_state - 0.004).abs() < 1e-15);
        let y_w = 0.04;
        assert!((d.leadlag_states[0] - (y_w - 0.02) / 0.04).abs() < 1e-12);
    }

    #[test]
    fn validation() {
        assert!(cfg(1.2, 0.0).validate().is_err());
        assert!(PssConfig { washout_tw: 0.0, ..cfg(1.0, 1.0) }.validate().is_err());
        assert!(PssConfig { vs_min: 0.2, ..cfg(1.0, 1.0) }.validate().is_err());
        assert!(cfg(0.33, 0.67).validate().is_ok());
    }
}
