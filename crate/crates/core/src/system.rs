//! Closed-loop machine, network, stabilizer and sensor model.
//!
//! The state vector holds, per generator, `δ, ω` followed by whichever of
//! `e'q, e'd, Efd, Pv, Pm` and the stabilizer filter states the unit has,
//! then two states per frequency sensor (an angle tracker and the filtered
//! frequency in Hz). The network is solved algebraically at every
//! derivative evaluation.

use std::f64::consts::PI;

use nalgebra::Matrix2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{
    apply_generator_trip, augmented_admittance, BusKind, solve_power_flow, NetworkCase, NetworkSolver, PowerFlowOptions,
    PowerFlowSolution,
};
use crate::machine::{self, MachineAssembly, MachineModel, MachineState};
use crate::pss::{self, PssConfig};
use crate::wams::{self, FrequencyFilter, SensorChannel, Weighting};

/// Largest derivative accepted at an initialized operating point.
pub const INIT_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemOptions {
    /// Sensor placement; empty places one sensor per generator bus.
    #[serde(default)]
    pub sensors: Vec<SensorChannel>,
    /// Weighting used for automatic placement.
    #[serde(default)]
    pub weighting: Weighting,
    #[serde(default)]
    pub filter: FrequencyFilter,
    #[serde(default = "default_pf_tol")]
    pub pf_tol: f64,
}

fn default_pf_tol() -> f64 {
    1e-10
}

impl Default for SystemOptions {
    fn default() -> Self {
        Self { sensors: Vec::new(), weighting: Weighting::Equal, filter: FrequencyFilter::default(), pf_tol: default_pf_tol() }
    }
}

/// Where a studied unit's stabilizer loop is opened.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoopBreak {
    /// External signal drives the filter chain; the unity-gain, unlimited
    /// chain output feeds the exciter.
    ChainInput,
    /// The chain sees its own control error but its output is not applied;
    /// the external signal is added to the exciter reference.
    ExciterReference,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Inputs {
    /// Replaces the sensor-based ω̄ (used with a communication channel).
    pub omega_bar: Option<f64>,
    /// Signal applied at the open loop break, if one is configured.
    pub u: f64,
}

/// State indices of one generating unit.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitIndex {
    pub delta: usize,
    pub omega: usize,
    pub eq_p: Option<usize>,
    pub ed_p: Option<usize>,
    pub efd: Option<usize>,
    pub pv: Option<usize>,
    pub pm: Option<usize>,
    pub pss: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Unit {
    pub id: usize,
    pub bus: usize,
    pub area: u32,
    pub online: bool,
    pub asm: MachineAssembly,
    pub pss: Option<PssConfig>,
    pub index: UnitIndex,
    fixed: MachineState,
}

impl Unit {
    fn state(&self, x: &[f64]) -> MachineState {
        let mut s = self.fixed;
        s.delta = x[self.index.delta];
        s.omega = x[self.index.omega];
        let read = |i: Option<usize>, d: f64| i.map_or(d, |i| x[i]);
        s.eq_p = read(self.index.eq_p, s.eq_p);
        s.ed_p = read(self.index.ed_p, s.ed_p);
        s.efd = read(self.index.efd, s.efd);
        s.pv = read(self.index.pv, s.pv);
        s.pm = read(self.index.pm, s.pm);
        s
    }

    fn state_slots(&self) -> Vec<usize> {
        let i = &self.index;
        let mut v = vec![i.delta, i.omega];
        v.extend([i.eq_p, i.ed_p, i.efd, i.pv, i.pm].into_iter().flatten());
        if let (Some(p), Some(cfg)) = (i.pss, &self.pss) {
            v.extend(p..p + cfg.state_count());
        }
        v
    }

    /// Inertia on the system base, s.
    pub fn inertia(&self) -> f64 {
        self.asm.params.h
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sensor {
    pub channel: SensorChannel,
    pub bus: usize,
    pub angle: usize,
    pub freq: usize,
}

/// Recorded quantities at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub voltages: Vec<Complex64>,
    pub pe: Vec<f64>,
    pub vt: Vec<f64>,
    /// Stabilizer signal applied at each exciter (zero without a stabilizer).
    pub vs: Vec<f64>,
    /// Unity-gain filter-chain output of each stabilizer.
    pub chain: Vec<f64>,
    pub omega_bar: f64,
    pub coi_exact: f64,
}

/// Reusable buffers; carries the last network solution as the next guess.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub voltages: Vec<Complex64>,
}

fn wrap(a: f64) -> f64 {
    (a + PI).rem_euclid(2.0 * PI) - PI
}

#[derive(Debug, Clone)]
pub struct ClosedLoop {
    pub case: NetworkCase,
    pub f0: f64,
    pub filter: FrequencyFilter,
    units: Vec<Unit>,
    sensors: Vec<Sensor>,
    solver: NetworkSolver,
    labels: Vec<String>,
    open_loop: Option<(usize, LoopBreak)>,
}

/// An initialized system with its equilibrium state.
#[derive(Debug, Clone)]
pub struct Initialized {
    pub system: ClosedLoop,
    pub x0: Vec<f64>,
    pub workspace: Workspace,
    pub power_flow: PowerFlowSolution,
}

/// Solve the power flow and back-solve every dynamic state so the closed
/// loop starts at equilibrium.
pub fn initialize(case: &NetworkCase, opts: &SystemOptions) -> Result<Initialized> {
    case.validate()?;
    let pf = solve_power_flow(case, &PowerFlowOptions { tol: opts.pf_tol, ..Default::default() })?;
    let case = case.with_load_voltages(&pf)?;

    let mut labels = Vec::new();
    let mut x0 = Vec::new();
    let mut push = |labels: &mut Vec<String>, name: String, value: f64| {
        labels.push(name);
        x0.push(value);
        x0.len() - 1
    };
    let mut units = Vec::with_capacity(case.generators.len());
    for (k, g) in case.generators.iter().enumerate() {
        let bus = case.bus_index(g.bus)?;
        let params = g.machine.to_system_base(case.base_mva);
        let v = pf.voltages[bus];
        let st = if g.online {
            machine::steady_state(v, pf.gen_p[k], pf.gen_q[k], &params)
        } else {
            MachineState { delta: v.arg(), omega: params.omega0, eq_p: v.norm(), efd: v.norm(), ..Default::default() }
        };
        let two_axis = params.model == MachineModel::TwoAxis;
        let tag = format!("G{}", g.id);
        let index = UnitIndex {
            delta: push(&mut labels, format!("{tag}.delta"), st.delta),
            omega: push(&mut labels, format!("{tag}.omega"), st.omega),
            eq_p: two_axis.then(|| push(&mut labels, format!("{tag}.eq_p"), st.eq_p)),
            ed_p: two_axis.then(|| push(&mut labels, format!("{tag}.ed_p"), st.ed_p)),
            efd: g.exciter.as_ref().map(|_| push(&mut labels, format!("{tag}.efd"), st.efd)),
            pv: g.governor.as_ref().map(|_| push(&mut labels, format!("{tag}.pv"), st.pv)),
            pm: g.governor.as_ref().map(|_| push(&mut labels, format!("{tag}.pm"), st.pm)),
            pss: g.pss.as_ref().map(|cfg| {
                let first = push(&mut labels, format!("{tag}.pss0"), 0.0);
                for s in 1..cfg.state_count() {
                    push(&mut labels, format!("{tag}.pss{s}"), 0.0);
                }
                first
            }),
        };
        if let Some(ex) = &g.exciter {
            if g.online && (st.efd < ex.efd_min || st.efd > ex.efd_max) {
                return Err(Error::Initialization { state: format!("{tag}.efd"), residual: st.efd });
            }
        }
        let asm = MachineAssembly {
            params,
            exciter: g.exciter.clone(),
            governor: g.governor.clone(),
            rating: g.machine.mva_base / case.base_mva,
            vref: 0.0,
            pref: st.pm,
        };
        let area = case.buses[bus].area;
        units.push(Unit { id: g.id, bus, area, online: g.online, asm, pss: g.pss.clone(), index, fixed: st });
    }

    let channels = if opts.sensors.is_empty() {
        wams::sensors_at_generators(&case, opts.weighting)
    } else {
        opts.sensors.clone()
    };
    wams::validate_channels(&channels)?;
    let mut sensors = Vec::with_capacity(channels.len());
    for ch in channels {
        let bus = case.bus_index(ch.bus)?;
        let tag = format!("S{}", ch.sensor_id);
        let angle = push(&mut labels, format!("{tag}.angle"), pf.voltages[bus].arg());
        let freq = push(&mut labels, format!("{tag}.freq"), case.f0);
        sensors.push(Sensor { channel: ch, bus, angle, freq });
    }

    let solver = build_solver(&case)?;
    let mut system = ClosedLoop {
        f0: case.f0,
        case,
        filter: opts.filter,
        units,
        sensors,
        solver,
        labels,
        open_loop: None,
    };
    let mut ws = Workspace { voltages: pf.voltages.clone() };

    // Back-solve references against the dynamic network solution.
    let obs = system.observe(&x0, &Inputs::default(), &mut ws)?;
    for (k, u) in system.units.iter_mut().enumerate() {
        if !u.online {
            continue;
        }
        let pe = obs.pe[k];
        u.fixed.pm = pe;
        u.fixed.pv = pe;
        u.asm.pref = pe;
        if let Some(i) = u.index.pv {
            x0[i] = pe;
        }
        if let Some(i) = u.index.pm {
            x0[i] = pe;
        }
        if let Some(ex) = &u.asm.exciter {
            let efd = u.index.efd.map_or(u.fixed.efd, |i| x0[i]);
            u.asm.vref = ex.vref.unwrap_or(obs.vt[k] + efd / ex.ka);
        }
    }
    for s in &system.sensors {
        x0[s.angle] = obs.voltages[s.bus].arg();
    }
    let mut dx = vec![0.0; x0.len()];
    system.derivatives(&x0, &Inputs::default(), &mut ws, &mut dx)?;
    if let Some((i, r)) = dx.iter().enumerate().map(|(i, r)| (i, r.abs())).max_by(|a, b| a.1.total_cmp(&b.1)) {
        if r > INIT_TOLERANCE {
            return Err(Error::Initialization { state: system.labels[i].clone(), residual: r });
        }
    }
    Ok(Initialized { system, x0, workspace: ws, power_flow: pf })
}

fn build_solver(case: &NetworkCase) -> Result<NetworkSolver> {
    let y = augmented_admittance(case)?;
    let mut loads = Vec::with_capacity(case.loads.len());
    for l in &case.loads {
        loads.push((case.bus_index(l.bus)?, l.active_current()));
    }
    // A slack bus without any machine is an infinite bus.
    let mut fixed = Vec::new();
    for (i, b) in case.buses.iter().enumerate() {
        if b.kind == BusKind::Slack && case.generators.iter().all(|g| g.bus != b.id) {
            fixed.push((i, Complex64::from_polar(b.voltage_mag, b.voltage_ang)));
        }
    }
    Ok(NetworkSolver::new(&y, loads, fixed))
}

impl ClosedLoop {
    pub fn n_states(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn units(&self) -> &[Unit] {
        &self.units
    }

    pub fn sensors(&self) -> &[Sensor] {
        &self.sensors
    }

    pub fn unit_position(&self, id: usize) -> Result<usize> {
        self.units.iter().position(|u| u.id == id).ok_or_else(|| Error::UnknownUnit {
            id,
            available: self.units.iter().map(|u| u.id).collect(),
        })
    }

    pub fn open_loop(&self) -> Option<(usize, LoopBreak)> {
        self.open_loop
    }

    /// Open the stabilizer loop of unit `id` at `at`.
    pub fn with_open_loop(mut self, id: usize, at: LoopBreak) -> Result<Self> {
        let k = self.unit_position(id)?;
        if at == LoopBreak::ChainInput && self.units[k].pss.is_none() {
            return Err(Error::Domain(format!("unit {id} has no stabilizer to open")));
        }
        self.open_loop = Some((k, at));
        Ok(self)
    }

    pub fn workspace(&self) -> Workspace {
        Workspace { voltages: vec![Complex64::new(1.0, 0.0); self.solver.dim()] }
    }

    /// Take a unit offline; its states freeze from here on.
    pub fn trip(&mut self, id: usize) -> Result<()> {
        let k = self.unit_position(id)?;
        self.case = apply_generator_trip(&self.case, id)?;
        self.units[k].online = false;
        self.solver = build_solver(&self.case)?;
        Ok(())
    }

    /// Add `dp` (pu) to the active load at `bus`.
    pub fn step_load(&mut self, bus: usize, dp: f64) -> Result<()> {
        let l = self
            .case
            .loads
            .iter_mut()
            .find(|l| l.bus == bus)
            .ok_or_else(|| Error::Domain(format!("no load at bus {bus}")))?;
        l.p0 += dp;
        self.solver = build_solver(&self.case)?;
        Ok(())
    }

    pub fn step_vref(&mut self, id: usize, dv: f64) -> Result<()> {
        let k = self.unit_position(id)?;
        if self.units[k].asm.exciter.is_none() {
            return Err(Error::Domain(format!("unit {id} has no exciter")));
        }
        self.units[k].asm.vref += dv;
        Ok(())
    }

    /// Exact center-of-inertia speed over online units.
    pub fn coi_exact(&self, x: &[f64]) -> Result<f64> {
        let (w, h): (Vec<f64>, Vec<f64>) =
            self.units.iter().filter(|u| u.online).map(|u| (x[u.index.omega], u.inertia())).unzip();
        wams::coi_speed_exact(&w, &h)
    }

    /// Sensor-based ω̄ from the filtered frequency states.
    pub fn coi_from_sensors(&self, x: &[f64]) -> f64 {
        self.sensors.iter().map(|s| s.channel.weight * x[s.freq]).sum::<f64>() / self.f0
    }

    /// Filtered frequency of every sensor, Hz.
    pub fn sensor_frequencies(&self, x: &[f64]) -> Vec<f64> {
        self.sensors.iter().map(|s| x[s.freq]).collect()
    }

    pub fn derivatives(&self, x: &[f64], inputs: &Inputs, ws: &mut Workspace, dx: &mut [f64]) -> Result<()> {
        self.evaluate(x, inputs, ws, dx, None)
    }

    pub fn observe(&self, x: &[f64], inputs: &Inputs, ws: &mut Workspace) -> Result<Observation> {
        let mut dx = vec![0.0; x.len()];
        let mut obs = Observation {
            voltages: Vec::new(),
            pe: vec![0.0; self.units.len()],
            vt: vec![0.0; self.units.len()],
            vs: vec![0.0; self.units.len()],
            chain: vec![0.0; self.units.len()],
            omega_bar: 0.0,
            coi_exact: 0.0,
        };
        self.evaluate(x, inputs, ws, &mut dx, Some(&mut obs))?;
        Ok(obs)
    }

    fn evaluate(
        &self,
        x: &[f64],
        inputs: &Inputs,
        ws: &mut Workspace,
        dx: &mut [f64],
        mut obs: Option<&mut Observation>,
    ) -> Result<()> {
        let nbus = self.solver.dim();
        let mut inj = vec![Complex64::new(0.0, 0.0); nbus];
        let mut extra: Vec<(usize, Matrix2<f64>)> = Vec::new();
        let states: Vec<MachineState> = self.units.iter().map(|u| u.state(x)).collect();
        for (u, st) in self.units.iter().zip(&states) {
            if !u.online {
                continue;
            }
            let (i, corr) = machine::norton(st, &u.asm.params);
            inj[u.bus] += i;
            if corr.amax() > 0.0 {
                extra.push((u.bus, corr));
            }
        }
        if ws.voltages.len() != nbus {
            ws.voltages = vec![Complex64::new(1.0, 0.0); nbus];
        }
        let sol = self.solver.solve(&inj, &extra, &ws.voltages)?;
        ws.voltages.copy_from_slice(&sol.voltages);
        let v = &sol.voltages;

        let omega_bar = inputs.omega_bar.unwrap_or_else(|| self.coi_from_sensors(x));
        for (k, (u, st)) in self.units.iter().zip(&states).enumerate() {
            if !u.online {
                for i in u.state_slots() {
                    dx[i] = 0.0;
                }
                continue;
            }
            let brk = self.open_loop.filter(|&(pos, _)| pos == k).map(|(_, b)| b);
            let mut vs = 0.0;
            let mut vref_extra = 0.0;
            if let (Some(cfg), Some(p)) = (&u.pss, u.index.pss) {
                let err = pss::control_error(st.omega, omega_bar, u.asm.params.omega0, cfg);
                let n = cfg.state_count();
                let chain_in = if brk == Some(LoopBreak::ChainInput) { inputs.u } else { err };
                let y = pss::chain_eval(&x[p..p + n], chain_in, cfg, &mut dx[p..p + n]);
                vs = match brk {
                    Some(LoopBreak::ChainInput) => y,
                    Some(LoopBreak::ExciterReference) => 0.0,
                    None => pss::limit_output(y, cfg),
                };
                if let Some(o) = obs.as_deref_mut() {
                    o.chain[k] = y;
                }
            }
            if brk == Some(LoopBreak::ExciterReference) {
                vref_extra = inputs.u;
            }
            let d = machine::machine_derivatives(st, v[u.bus], vs + vref_extra, &u.asm, self.f0)?;
            dx[u.index.delta] = d.d_delta;
            dx[u.index.omega] = d.d_omega;
            let mut put = |i: Option<usize>, val: f64| {
                if let Some(i) = i {
                    dx[i] = val;
                }
            };
            put(u.index.eq_p, d.d_eq_p);
            put(u.index.ed_p, d.d_ed_p);
            put(u.index.efd, d.d_efd);
            put(u.index.pv, d.d_pv);
            put(u.index.pm, d.d_pm);
            if let Some(o) = obs.as_deref_mut() {
                o.pe[k] = d.pe;
                o.vt[k] = d.vt;
                o.vs[k] = vs;
            }
        }
        let (t1, t2) = (self.filter.t1, self.filter.t2);
        for s in &self.sensors {
            let rate = wrap(v[s.bus].arg() - x[s.angle]) / t1;
            dx[s.angle] = rate;
            dx[s.freq] = (self.f0 + rate / (2.0 * PI) - x[s.freq]) / t2;
        }
        if let Some(o) = obs {
            o.voltages = sol.voltages.clone();
            o.omega_bar = omega_bar;
            o.coi_exact = self.coi_exact(x)?;
            for (k, u) in self.units.iter().enumerate() {
                if !u.online {
                    o.vt[k] = v[u.bus].norm();
                }
            }
        }
        Ok(())
    }

    /// Clamp limited states after an integration step.
    pub fn clamp(&self, x: &mut [f64]) {
        for u in self.units.iter().filter(|u| u.online) {
            let mut st = u.state(x);
            machine::clamp_state(&mut st, &u.asm);
            if let Some(i) = u.index.efd {
                x[i] = st.efd;
            }
            if let Some(i) = u.index.pv {
                x[i] = st.pv;
            }
        }
    }
}

/// Copy of `case` with the same stabilizer on every generator.
pub fn with_uniform_pss(case: &NetworkCase, cfg: Option<&PssConfig>) -> NetworkCase {
    let mut out = case.clone();
    for g in &mut out.generators {
        g.pss = cfg.cloned();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cases;

    #[test]
    fn two_area_initializes_at_equilibrium() {
        let case = with_uniform_pss(&cases::two_area(), Some(&PssConfig::with_tuning(1.0, 0.5, 20.0)));
        let init = initialize(&case, &SystemOptions::default()).unwrap();
        let mut ws = init.workspace.clone();
        let mut dx = vec![0.0; init.x0.len()];
        init.system.derivatives(&init.x0, &Inputs::default(), &mut ws, &mut dx).unwrap();
        assert!(dx.iter().all(|d| d.abs() < INIT_TOLERANCE));
        assert_eq!(init.system.labels().len(), init.x0.len());
    }

    #[test]
    fn mis_set_vref_is_rejected_with_state_name() {
        let mut case = cases::two_area();
        case.generators[0].exciter.as_mut().unwrap().vref = Some(1.2);
        match initialize(&case, &SystemOptions::default()) {
            Err(Error::Initialization { state, .. }) => assert_eq!(state, "G1.efd"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn layout_depends_on_configured_blocks() {
        let init =
            initialize(&cases::single_machine_infinite_bus(3.0, 0.0, 0.3, 0.2, 0.5), &SystemOptions::default()).unwrap();
        assert_eq!(&init.system.labels()[..2], &["G1.delta".to_string(), "G1.omega".to_string()]);
        assert_eq!(init.system.n_states(), 4);
    }

    #[test]
    fn coi_exact_uses_online_units() {
        let init = initialize(&cases::two_area(), &SystemOptions::default()).unwrap();
        let mut sys = init.system;
        let mut x = init.x0.clone();
        let w3 = sys.units()[2].index.omega;
        x[w3] = 1.5;
        let before = sys.coi_exact(&x).unwrap();
        sys.trip(3).unwrap();
        let after = sys.coi_exact(&x).unwrap();
        assert!(before > 1.0);
        assert!((after - 1.0).abs() < 1e-12);
    }

    #[test]
    fn wrap_is_principal() {
        assert!((wrap(3.0 * PI) - PI).abs() < 1e-12 || (wrap(3.0 * PI) + PI).abs() < 1e-12);
        assert!((wrap(0.1) - 0.1).abs() < 1e-15);
    }
}
