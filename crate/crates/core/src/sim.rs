//! Fixed-step nonlinear time simulation.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::NetworkCase;
use crate::pss::PssConfig;
use crate::system::{initialize, ClosedLoop, Inputs, Initialized, LoopBreak, SystemOptions, Workspace};
use crate::wams::{AuditEntry, ChannelEmulator, CoiEstimator, STALENESS_CUTOFF};

/// Speed deviation treated as loss of stability, pu.
pub const DIVERGENCE_LIMIT: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    GenTrip,
    VrefStep,
    LoadStep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
    /// Generator id for trips and reference steps, bus id for load steps.
    pub target: usize,
    #[serde(default)]
    pub magnitude: f64,
}

/// How stabilizers obtain ω̄.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Communication {
    /// Continuous sensor states, no channel.
    #[default]
    Ideal,
    /// Periodic datagrams through the emulated channel with last-value hold.
    Channel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    /// Case reference resolved by the caller (path or bundled name).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub case: Option<String>,
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub events: Vec<Event>,
    /// Stabilizer applied to every unit in `pss_units` (all when empty);
    /// `None` keeps the case's own settings.
    #[serde(default)]
    pub pss: Option<PssConfig>,
    #[serde(default)]
    pub pss_units: Vec<usize>,
    #[serde(default)]
    pub system: SystemOptions,
    #[serde(default)]
    pub communication: Communication,
    /// Staleness cutoff of the receiver, s.
    #[serde(default = "default_cutoff")]
    pub staleness_cutoff: f64,
    /// Intervals during which sensors send nothing.
    #[serde(default)]
    pub blackouts: Vec<Interval>,
    #[serde(default)]
    pub seed: u64,
    /// Extra relative-speed columns, written `omegaA-omegaB` with generator ids.
    #[serde(default)]
    pub record: Vec<String>,
}

fn default_t_end() -> f64 {
    21.0
}
fn default_dt() -> f64 {
    0.005
}
fn default_cutoff() -> f64 {
    STALENESS_CUTOFF
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            case: None,
            t_end: default_t_end(),
            dt: default_dt(),
            events: Vec::new(),
            pss: None,
            pss_units: Vec::new(),
            system: SystemOptions::default(),
            communication: Communication::Ideal,
            staleness_cutoff: default_cutoff(),
            blackouts: Vec::new(),
            seed: 0,
            record: Vec::new(),
        }
    }
}

impl Scenario {
    /// Trip of unit `id` at `time`.
    pub fn trip(id: usize, time: f64, t_end: f64) -> Self {
        Self { t_end, events: vec![Event { time, kind: EventKind::GenTrip, target: id, magnitude: 0.0 }], ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::Domain("dt must be > 0".into()));
        }
        if !(self.t_end > 0.0) {
            return Err(Error::Domain("t_end must be > 0".into()));
        }
        for e in &self.events {
            if !(0.0..=self.t_end).contains(&e.time) {
                return Err(Error::Domain(format!("event at {} s lies outside [0, {}]", e.time, self.t_end)));
            }
        }
        for r in &self.record {
            parse_pair(r)?;
        }
        if let Some(p) = &self.pss {
            p.validate().map_err(Error::Domain)?;
        }
        Ok(())
    }

    /// Case with this scenario's stabilizer settings applied.
    pub fn prepare_case(&self, case: &NetworkCase) -> Result<NetworkCase> {
        let mut out = case.clone();
        if let Some(cfg) = &self.pss {
            for id in &self.pss_units {
                case.generator(*id)?;
            }
            for g in &mut out.generators {
                if self.pss_units.is_empty() || self.pss_units.contains(&g.id) {
                    g.pss = Some(cfg.clone());
                }
            }
        }
        Ok(out)
    }
}

fn parse_pair(spec: &str) -> Result<(usize, usize)> {
    let bad = || Error::Domain(format!("record spec `{spec}` must look like omega2-omega4"));
    let (a, b) = spec.split_once('-').ok_or_else(bad)?;
    let id = |s: &str| s.trim().strip_prefix("omega").and_then(|n| n.parse::<usize>().ok()).ok_or_else(bad);
    Ok((id(a)?, id(b)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub time: f64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub frequency_nadir: Option<f64>,
    pub nadir_time: Option<f64>,
    pub unstable: bool,
    pub failure: Option<Failure>,
    pub final_time: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeSpeed {
    pub name: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SimulationRecord {
    pub time: Vec<f64>,
    pub machine_ids: Vec<usize>,
    /// Indexed `[machine][sample]`.
    pub omega: Vec<Vec<f64>>,
    pub delta: Vec<Vec<f64>>,
    pub vt: Vec<Vec<f64>>,
    pub vs: Vec<Vec<f64>>,
    /// Unity-gain filter-chain outputs.
    pub chain: Vec<Vec<f64>>,
    pub coi_exact: Vec<f64>,
    pub omega_bar: Vec<f64>,
    pub stale: Vec<bool>,
    pub relative: Vec<RelativeSpeed>,
    pub metrics: Metrics,
    #[serde(skip)]
    pub audit: Vec<AuditEntry>,
    #[serde(skip)]
    pub final_state: Vec<f64>,
}

impl SimulationRecord {
    fn new(sys: &ClosedLoop, record: &[String]) -> Result<Self> {
        let n = sys.units().len();
        let mut relative = Vec::new();
        for spec in record {
            let (a, b) = parse_pair(spec)?;
            sys.unit_position(a)?;
            sys.unit_position(b)?;
            relative.push(RelativeSpeed { name: spec.clone(), values: Vec::new() });
        }
        Ok(Self {
            machine_ids: sys.units().iter().map(|u| u.id).collect(),
            omega: vec![Vec::new(); n],
            delta: vec![Vec::new(); n],
            vt: vec![Vec::new(); n],
            vs: vec![Vec::new(); n],
            chain: vec![Vec::new(); n],
            relative,
            ..Default::default()
        })
    }

    pub fn series(&self, id: usize) -> Option<usize> {
        self.machine_ids.iter().position(|&m| m == id)
    }

    /// `ω_a − ω_b` for generator ids `a`, `b`.
    pub fn speed_difference(&self, a: usize, b: usize) -> Option<Vec<f64>> {
        let (i, j) = (self.series(a)?, self.series(b)?);
        Some(self.omega[i].iter().zip(&self.omega[j]).map(|(x, y)| x - y).collect())
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let mut header = vec!["time".to_string()];
        for id in &self.machine_ids {
            header.push(format!("omega_g{id}"));
        }
        for id in &self.machine_ids {
            header.push(format!("delta_g{id}"));
        }
        for id in &self.machine_ids {
            header.push(format!("vt_g{id}"));
        }
        for id in &self.machine_ids {
            header.push(format!("vs_g{id}"));
        }
        header.extend(["coi_exact", "omega_bar", "stale"].map(String::from));
        header.extend(self.relative.iter().map(|r| r.name.clone()));
        writeln!(w, "{}", header.join(","))?;
        for k in 0..self.time.len() {
            let mut row = vec![format!("{:.6}", self.time[k])];
            for series in [&self.omega, &self.delta, &self.vt, &self.vs] {
                row.extend(series.iter().map(|s| format!("{:.12e}", s[k])));
            }
            row.push(format!("{:.12e}", self.coi_exact[k]));
            row.push(format!("{:.12e}", self.omega_bar[k]));
            row.push((self.stale[k] as u8).to_string());
            row.extend(self.relative.iter().map(|r| format!("{:.12e}", r.values[k])));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Nadir {
    pub nadir: f64,
    pub time: f64,
}

/// Minimum exact center-of-inertia speed at or after `event_time`.
pub fn nadir_metric(record: &SimulationRecord, event_time: f64) -> Result<Nadir> {
    nadir_of(&record.time, &record.coi_exact, event_time)
}

/// Minimum of `series` over samples at or after `event_time`.
pub fn nadir_of(time: &[f64], series: &[f64], event_time: f64) -> Result<Nadir> {
    match time.last() {
        Some(&end) if event_time <= end + 1e-12 => {}
        _ => return Err(Error::Domain(format!("event time {event_time} lies beyond the record"))),
    }
    let mut best: Option<Nadir> = None;
    for (&t, &v) in time.iter().zip(series) {
        if t + 1e-12 < event_time {
            continue;
        }
        if best.is_none_or(|b| v < b.nadir) {
            best = Some(Nadir { nadir: v, time: t });
        }
    }
    best.ok_or_else(|| Error::Domain("no samples after the event".into()))
}

/// Time after `from` at which `series` last leaves a band of `frac` times
/// its largest excursion about the final value (mean of the last second).
pub fn settling_time(time: &[f64], series: &[f64], from: f64, frac: f64) -> f64 {
    let end = *time.last().unwrap_or(&0.0);
    let tail: Vec<f64> = time.iter().zip(series).filter(|(t, _)| **t >= end - 1.0).map(|(_, v)| *v).collect();
    let fin = tail.iter().sum::<f64>() / tail.len().max(1) as f64;
    let after: Vec<(f64, f64)> = time.iter().zip(series).filter(|(t, _)| **t >= from).map(|(t, v)| (*t, v - fin)).collect();
    let peak = after.iter().map(|(_, e)| e.abs()).fold(0.0, f64::max);
    let band = frac * peak;
    after.iter().rev().find(|(_, e)| e.abs() > band).map_or(0.0, |(t, _)| t - from)
}

/// Largest absolute excursion of `series` about its own linear trend on `[a, b]`.
pub fn window_amplitude(time: &[f64], series: &[f64], a: f64, b: f64) -> f64 {
    let pts: Vec<(f64, f64)> = time.iter().zip(series).filter(|(t, _)| **t >= a && **t <= b).map(|(t, v)| (*t, *v)).collect();
    if pts.len() < 2 {
        return 0.0;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let mv = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let stt: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let slope = if stt > 0.0 { pts.iter().map(|p| (p.0 - mt) * (p.1 - mv)).sum::<f64>() / stt } else { 0.0 };
    pts.iter().map(|p| (p.1 - mv - slope * (p.0 - mt)).abs()).fold(0.0, f64::max)
}

/// Signal applied at an open loop break as a function of time.
pub type InputSignal<'a> = &'a (dyn Fn(f64) -> f64 + Sync);

/// Simulate `scenario` on `case`.
pub fn run(case: &NetworkCase, scenario: &Scenario) -> Result<SimulationRecord> {
    scenario.validate()?;
    let case = scenario.prepare_case(case)?;
    let init = initialize(&case, &scenario.system)?;
    run_from(init.system, init.x0, init.workspace, scenario, None)
}

/// Simulate from a given state. `input` drives the open loop break of the
/// system, if one is configured.
pub fn run_from(
    mut sys: ClosedLoop,
    x0: Vec<f64>,
    mut ws: Workspace,
    scenario: &Scenario,
    input: Option<InputSignal>,
) -> Result<SimulationRecord> {
    scenario.validate()?;
    let dt = scenario.dt;
    let steps = (scenario.t_end / dt).round() as usize;
    let mut events: Vec<(usize, &Event)> = scenario.events.iter().map(|e| ((e.time / dt).round() as usize, e)).collect();
    events.sort_by_key(|(k, _)| *k);
    let mut next_event = 0;

    let channels: Vec<_> = sys.sensors().iter().map(|s| s.channel.clone()).collect();
    let mut emulator = ChannelEmulator::new(channels.clone(), scenario.seed, 0.0);
    let mut estimator = CoiEstimator::new(&channels, sys.f0, 0.0).with_cutoff(scenario.staleness_cutoff);
    let use_channel = scenario.communication == Communication::Channel;
    let pairs: Vec<(usize, usize)> = scenario
        .record
        .iter()
        .map(|r| {
            let (a, b) = parse_pair(r)?;
            Ok((sys.unit_position(a)?, sys.unit_position(b)?))
        })
        .collect::<Result<_>>()?;

    let mut rec = SimulationRecord::new(&sys, &scenario.record)?;
    let mut x = x0;
    let n = x.len();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    let u_at = |t: f64| input.map_or(0.0, |f| f(t));

    for step in 0..=steps {
        let t = step as f64 * dt;
        while next_event < events.len() && events[next_event].0 == step {
            let e = events[next_event].1;
            match e.kind {
                EventKind::GenTrip => sys.trip(e.target)?,
                EventKind::VrefStep => sys.step_vref(e.target, e.magnitude)?,
                EventKind::LoadStep => sys.step_load(e.target, e.magnitude)?,
            }
            next_event += 1;
        }

        let mut stale = false;
        let omega_bar = if use_channel {
            let blacked_out = scenario.blackouts.iter().any(|b| t >= b.start - 1e-9 && t < b.end - 1e-9);
            for k in emulator.due(t) {
                if !blacked_out {
                    emulator.send(k, t, x[sys.sensors()[k].freq]);
                }
            }
            for d in emulator.deliver(t) {
                estimator.receive(&d);
            }
            let r = estimator.estimate(t);
            stale = r.stale;
            Some(r.value)
        } else {
            None
        };
        let inputs = |tt: f64| Inputs { omega_bar, u: u_at(tt) };

        let obs = match sys.observe(&x, &inputs(t), &mut ws) {
            Ok(o) => o,
            Err(e) => {
                rec.metrics.failure = Some(Failure { time: t, message: e.to_string() });
                break;
            }
        };
        rec.time.push(t);
        for (k, u) in sys.units().iter().enumerate() {
            rec.omega[k].push(x[u.index.omega]);
            rec.delta[k].push(x[u.index.delta]);
            rec.vt[k].push(obs.vt[k]);
            rec.vs[k].push(obs.vs[k]);
            rec.chain[k].push(obs.chain[k]);
        }
        rec.coi_exact.push(obs.coi_exact);
        rec.omega_bar.push(obs.omega_bar);
        rec.stale.push(stale);
        for (r, &(a, b)) in rec.relative.iter_mut().zip(&pairs) {
            r.values.push(x[sys.units()[a].index.omega] - x[sys.units()[b].index.omega]);
        }
        rec.metrics.final_time = t;
        rec.metrics.steps = step;
        if sys.units().iter().any(|u| u.online && (x[u.index.omega] - 1.0).abs() > DIVERGENCE_LIMIT) {
            rec.metrics.unstable = true;
            break;
        }
        if step == steps {
            break;
        }

        let stage = |xs: &[f64], tt: f64, ws: &mut Workspace, out: &mut [f64]| sys.derivatives(xs, &inputs(tt), ws, out);
        let result = (|| -> Result<()> {
            stage(&x, t, &mut ws, &mut k1)?;
            for i in 0..n {
                tmp[i] = x[i] + 0.5 * dt * k1[i];
            }
            stage(&tmp, t + 0.5 * dt, &mut ws, &mut k2)?;
            for i in 0..n {
                tmp[i] = x[i] + 0.5 * dt * k2[i];
            }
            stage(&tmp, t + 0.5 * dt, &mut ws, &mut k3)?;
            for i in 0..n {
                tmp[i] = x[i] + dt * k3[i];
            }
            stage(&tmp, t + dt, &mut ws, &mut k4)?;
            Ok(())
        })();
        if let Err(e) = result {
            rec.metrics.failure = Some(Failure { time: t, message: e.to_string() });
            break;
        }
        for i in 0..n {
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if x.iter().any(|v| !v.is_finite()) {
            rec.metrics.failure = Some(Failure { time: t + dt, message: "non-finite state".into() });
            break;
        }
        sys.clamp(&mut x);
    }

    if let Some(first) = scenario.events.iter().map(|e| e.time).reduce(f64::min) {
        if let Ok(nd) = nadir_metric(&rec, first) {
            rec.metrics.frequency_nadir = Some(nd.nadir);
            rec.metrics.nadir_time = Some(nd.time);
        }
    } else if let Ok(nd) = nadir_metric(&rec, 0.0) {
        rec.metrics.frequency_nadir = Some(nd.nadir);
        rec.metrics.nadir_time = Some(nd.time);
    }
    rec.audit = emulator.audit().to_vec();
    rec.final_state = x;
    Ok(rec)
}

/// Run independent scenarios in parallel; results keep the input order.
pub fn run_many(case: &NetworkCase, scenarios: &[Scenario]) -> Vec<Result<SimulationRecord>> {
    scenarios.par_iter().map(|s| run(case, s)).collect()
}

/// Transfer from a sinusoidal exciter-reference perturbation of `unit` to
/// its unity-gain stabilizer chain output, measured on the nonlinear model
/// with the unit's stabilizer output disconnected. One complex gain per
/// frequency (Hz).
pub fn probe_response(init: &Initialized, unit: usize, freqs_hz: &[f64], amplitude: f64, t_end: f64) -> Result<Vec<Complex64>> {
    let sys = init.system.clone().with_open_loop(unit, LoopBreak::ExciterReference)?;
    let k = sys.unit_position(unit)?;
    let tw = sys.units()[k]
        .pss
        .as_ref()
        .map(|p| p.washout_tw)
        .ok_or_else(|| Error::Domain(format!("unit {unit} has no stabilizer to probe")))?;
    let scenario = Scenario { t_end, ..Default::default() };
    freqs_hz
        .par_iter()
        .map(|&f| {
            let w = 2.0 * PI * f;
            let sig = move |t: f64| amplitude * (w * t).sin();
            let rec = run_from(sys.clone(), init.x0.clone(), init.workspace.clone(), &scenario, Some(&sig))?;
            if let Some(fail) = &rec.metrics.failure {
                return Err(Error::Domain(format!("probe run failed at {} s: {}", fail.time, fail.message)));
            }
            fit_sinusoid(&rec.time, &rec.chain[k], w, t_end * 0.5, tw).map(|c| c / amplitude)
        })
        .collect()
}

/// Least-squares phasor of `y` at `w` over `t >= from`, with a constant, a
/// ramp and a decaying washout transient as nuisance terms. The returned
/// value `Y` satisfies `y ≈ Im(Y e^{jwt})`.
fn fit_sinusoid(time: &[f64], y: &[f64], w: f64, from: f64, tw: f64) -> Result<Complex64> {
    let rows: Vec<usize> = (0..time.len()).filter(|&i| time[i] >= from).collect();
    let m = DMatrix::from_fn(rows.len(), 5, |r, c| {
        let t = time[rows[r]];
        match c {
            0 => (w * t).sin(),
            1 => (w * t).cos(),
            2 => 1.0,
            3 => t - from,
            _ => (-(t - from) / tw).exp(),
        }
    });
    let b = DVector::from_iterator(rows.len(), rows.iter().map(|&i| y[i]));
    let qr = m.qr();
    let rhs = qr.q().transpose() * b;
    let sol = qr.r().solve_upper_triangular(&rhs).ok_or_else(|| Error::Singular("sinusoid fit regressors are dependent".into()))?;
    Ok(Complex64::new(sol[0], sol[1]))
}
