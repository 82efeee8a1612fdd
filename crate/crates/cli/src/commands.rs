use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gpss_core::cases;
use gpss_core::grid::{solve_power_flow, PowerFlowOptions};
use gpss_core::linear::{beta_sweep, delayed_response, log_frequency_grid, open_loop_response, LocusTable, ResponseReport, SweepParam, SweepSpec};
use gpss_core::sim::{Communication, Scenario};
use gpss_core::wams::sensors_at_generators;
use gpss_core::{eigensolve, initialize, linearize, LoopBreak, ModalResult, ModeClass, NetworkCase, PssConfig, SystemOptions};
use serde_json::json;

use crate::manifest::RunManifest;
use crate::{BodeArgs, CaseArg, ModalArgs, PowerflowArgs, SimulateArgs, SweepArgs, TuningArgs};

/// Raised when the numerics fail on valid input.
#[derive(Debug)]
pub struct Numerical(pub String);

impl std::fmt::Display for Numerical {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Numerical {}

fn load_case(arg: &CaseArg, manifest: &mut RunManifest) -> Result<NetworkCase> {
    match &arg.case {
        Some(path) => {
            manifest.input(path);
            let text = fs::read_to_string(path).with_context(|| format!("reading case {}", path.display()))?;
            NetworkCase::from_json(&text).with_context(|| format!("parsing case {}", path.display()))
        }
        None => Ok(cases::two_area()),
    }
}

fn write(out: &Path, manifest: &mut RunManifest, name: &str, body: &str) -> Result<()> {
    let path = out.join(name);
    fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
    manifest.outputs.push(name.into());
    Ok(())
}

fn with_pss(case: &NetworkCase, cfg: Option<PssConfig>, units: Option<&[usize]>) -> Result<NetworkCase> {
    let mut case = case.clone();
    let Some(cfg) = cfg else { return Ok(case) };
    if let Some(ids) = units {
        for &id in ids {
            case.generator(id)?;
        }
    }
    for g in &mut case.generators {
        if units.is_none_or(|ids| ids.contains(&g.id)) {
            g.pss = Some(cfg.clone());
        }
    }
    Ok(case)
}

impl TuningArgs {
    fn config(&self) -> Option<PssConfig> {
        if self.beta1.is_none() && self.beta2.is_none() && self.gain.is_none() {
            return None;
        }
        let d = PssConfig::default();
        Some(PssConfig::with_tuning(self.beta1.unwrap_or(d.beta1), self.beta2.unwrap_or(d.beta2), self.gain.unwrap_or(d.gain_k)))
    }
}

pub fn powerflow(args: &PowerflowArgs, out: &Path) -> Result<RunManifest> {
    let mut m = RunManifest::new("powerflow", out, json!({ "tol": args.tol }));
    let case = load_case(&args.case, &mut m)?;
    let pf = solve_power_flow(&case, &PowerFlowOptions { tol: args.tol, ..Default::default() })?;

    let buses: Vec<_> = case
        .buses
        .iter()
        .zip(&pf.voltages)
        .map(|(b, v)| json!({ "bus": b.id, "vm": v.norm(), "va_deg": v.arg().to_degrees() }))
        .collect();
    let gens: Vec<_> = case
        .generators
        .iter()
        .enumerate()
        .map(|(k, g)| json!({ "id": g.id, "bus": g.bus, "p": pf.gen_p[k], "q": pf.gen_q[k] }))
        .collect();
    let doc = json!({
        "case": case.name,
        "iterations": pf.iterations,
        "max_mismatch": pf.max_mismatch,
        "buses": buses,
        "generators": gens,
        "branches": pf.branch_flows,
    });
    write(out, &mut m, "powerflow.json", &(serde_json::to_string_pretty(&doc)? + "\n"))?;

    println!("{} converged in {} iterations (mismatch {:.2e} pu)", case.name, pf.iterations, pf.max_mismatch);
    println!("{:>5} {:>9} {:>10}", "bus", "vm (pu)", "va (deg)");
    for (b, v) in case.buses.iter().zip(&pf.voltages) {
        println!("{:>5} {:>9.5} {:>10.4}", b.id, v.norm(), v.arg().to_degrees());
    }
    Ok(m)
}

fn modes_of(case: &NetworkCase) -> Result<Vec<ModalResult>> {
    let init = initialize(case, &SystemOptions::default())?;
    let model = linearize(&init.system, &init.x0, &init.workspace, 1e-6)?;
    Ok(eigensolve(&model)?)
}

fn print_modes(modes: &[ModalResult]) {
    println!("{:>10} {:>10} {:>8} {:>9}  class", "real", "imag", "f (Hz)", "zeta (%)");
    for m in modes.iter().filter(|m| m.frequency_hz > 1e-3 && m.eigenvalue.im > 0.0 && m.frequency_hz <= 3.0) {
        println!(
            "{:>10.4} {:>10.4} {:>8.3} {:>9.2}  {:?}",
            m.eigenvalue.re,
            m.eigenvalue.im,
            m.frequency_hz,
            100.0 * m.damping_ratio,
            m.classification
        );
    }
}

pub fn modal(args: &ModalArgs, out: &Path) -> Result<RunManifest> {
    let cfg = args.tuning.config();
    let mut m = RunManifest::new("modal", out, json!({ "pss": cfg, "units": args.units }));
    let case = load_case(&args.case, &mut m)?;
    let case = with_pss(&case, cfg, args.units.as_deref())?;
    let modes = modes_of(&case)?;
    write(out, &mut m, "modes.json", &(serde_json::to_string_pretty(&modes)? + "\n"))?;
    print_modes(&modes);
    Ok(m)
}

/// Parses `start:step:stop` or a single value.
pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let parts: Vec<f64> = text
        .split(':')
        .map(|p| p.trim().parse::<f64>().with_context(|| format!("bad grid value `{p}`")))
        .collect::<Result<_>>()?;
    match parts[..] {
        [v] => Ok(vec![v]),
        [a, step, b] => {
            if step == 0.0 || (b - a) * step < 0.0 {
                bail!("grid step {step} does not move from {a} toward {b}");
            }
            let n = ((b - a) / step + 1e-9).floor() as usize;
            // Snap so that forward and reversed grids hit identical values.
            Ok((0..=n).map(|k| ((a + step * k as f64) * 1e12).round() / 1e12).collect())
        }
        _ => bail!("grid must be `start:step:stop` or a single value, got `{text}`"),
    }
}

/// Shortest round-trip text, in exponent form for tiny magnitudes.
fn num(v: f64) -> String {
    if v != 0.0 && v.abs() < 1e-4 {
        format!("{v:e}")
    } else {
        v.to_string()
    }
}

fn locus_csv(table: &LocusTable) -> String {
    let mut s = String::from("value,mode,track,real,imag,freq_hz,damping_ratio,class\n");
    for (p, point) in table.points.iter().enumerate() {
        for (i, md) in point.modes.iter().enumerate() {
            if md.eigenvalue.im < 0.0 {
                continue;
            }
            let track = table.tracks.iter().position(|t| t.indices[p] == Some(i)).map_or(String::new(), |t| t.to_string());
            let class = serde_json::to_value(md.classification).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{i},{track},{},{},{},{},{class}",
                num(point.value),
                num(md.eigenvalue.re),
                num(md.eigenvalue.im),
                num(md.frequency_hz),
                num(md.damping_ratio)
            );
        }
    }
    s
}

pub fn sweep(args: &SweepArgs, out: &Path) -> Result<RunManifest> {
    let grid = parse_grid(&args.grid)?;
    let param: SweepParam = args.param.into();
    let mut m = RunManifest::new("sweep", out, json!({ "param": param, "grid": grid, "fixed": args.fixed, "gain": args.gain }));
    let case = load_case(&args.case, &mut m)?;
    let spec = SweepSpec::new(param, grid, args.fixed, args.gain);
    let table = beta_sweep(&case, &spec, &SystemOptions::default())?;
    write(out, &mut m, "locus.json", &(serde_json::to_string_pretty(&table)? + "\n"))?;
    write(out, &mut m, "locus.csv", &locus_csv(&table))?;
    for (k, t) in table.tracks.iter().enumerate().filter(|(_, t)| !matches!(t.label, ModeClass::Control | ModeClass::Other)) {
        let ev: Vec<String> = t.eigenvalues(&table.points).iter().map(|l| l.map_or("-".into(), |l| format!("{:.4}", l.re))).collect();
        println!("track {k} {:?}: {}", t.label, ev.join(" "));
    }
    Ok(m)
}

fn response_csv(r: &ResponseReport) -> String {
    let mut s = String::from("freq_hz,omega_rad,gain_db,phase_deg,re,im\n");
    for p in &r.points {
        let _ = writeln!(s, "{},{},{},{},{},{}", num(p.freq_hz()), num(p.omega_rad), num(p.gain_db), num(p.phase_deg), num(p.re), num(p.im));
    }
    s
}

pub fn bode(args: &BodeArgs, out: &Path) -> Result<RunManifest> {
    let cfg = args.tuning.config().unwrap_or_default();
    let mut m = RunManifest::new(
        "bode",
        out,
        json!({ "unit": args.unit, "pss": cfg, "delay": args.delay, "fmin": args.fmin, "fmax": args.fmax, "points": args.points }),
    );
    let case = load_case(&args.case, &mut m)?;
    case.generator(args.unit)?;
    let case = with_pss(&case, Some(cfg), Some(&[args.unit]))?;
    let init = initialize(&case, &SystemOptions::default())?;
    let open = init.system.clone().with_open_loop(args.unit, LoopBreak::ChainInput)?;
    let model = linearize(&open, &init.x0, &init.workspace, 1e-6)?;
    let grid = log_frequency_grid(args.fmin, args.fmax, args.points);
    let report = match &args.delay {
        None => open_loop_response(&model, &grid)?,
        Some(d) => {
            let delays = match d.len() {
                1 => vec![d[0]; model.sensors.len()],
                n if n == model.sensors.len() => d.clone(),
                n => bail!("expected 1 or {} delays, got {n}", model.sensors.len()),
            };
            delayed_response(&model, &delays, &grid)?
        }
    };
    write(out, &mut m, "response.csv", &response_csv(&report))?;
    println!("{} points, {} skipped", report.points.len(), report.skipped.len());
    Ok(m)
}

fn load_scenario(args: &SimulateArgs, m: &mut RunManifest) -> Result<(Scenario, Option<PathBuf>)> {
    let Some(path) = &args.scenario else {
        let mut sc = Scenario::trip(3, 1.0, 21.0);
        sc.record = vec!["omega2-omega4".into()];
        return Ok((sc, None));
    };
    m.input(path);
    let text = fs::read_to_string(path).with_context(|| format!("reading scenario {}", path.display()))?;
    let sc: Scenario = serde_json::from_str(&text).map_err(gpss_core::Error::from).with_context(|| format!("parsing scenario {}", path.display()))?;
    let case = sc.case.as_ref().map(|c| path.parent().unwrap_or(Path::new(".")).join(c));
    Ok((sc, case))
}

pub fn simulate(args: &SimulateArgs, out: &Path) -> Result<RunManifest> {
    let mut m = RunManifest::new("simulate", out, serde_json::Value::Null);
    let (mut sc, scenario_case) = load_scenario(args, &mut m)?;
    let case_arg = CaseArg { case: args.case.case.clone().or(scenario_case) };
    let case = load_case(&case_arg, &mut m)?;

    if let Some(cfg) = args.tuning.config() {
        sc.pss = Some(cfg);
    }
    if let Some(seed) = args.seed {
        sc.seed = seed;
    }
    if let Some(t) = args.t_end {
        sc.t_end = t;
    }
    for r in &args.record {
        if !sc.record.contains(r) {
            sc.record.push(r.clone());
        }
    }
    if let Some(delay) = args.delay {
        sc.communication = Communication::Channel;
        sc.system.sensors = sensors_at_generators(&case, sc.system.weighting)
            .into_iter()
            .map(|c| c.with_link(delay, args.jitter, args.drop))
            .collect();
    }
    m.seed = Some(sc.seed);
    m.config = serde_json::to_value(&sc)?;

    let record = gpss_core::run(&case, &sc)?;
    let mut csv = Vec::new();
    record.write_csv(&mut csv)?;
    write(out, &mut m, "record.csv", std::str::from_utf8(&csv)?)?;
    write(out, &mut m, "metrics.json", &(serde_json::to_string_pretty(&record.metrics)? + "\n"))?;

    let mx = &record.metrics;
    match mx.frequency_nadir {
        Some(n) => println!("nadir {n:.6} pu at {:.3} s, {} steps", mx.nadir_time.unwrap_or(f64::NAN), mx.steps),
        None => println!("{} steps", mx.steps),
    }
    if mx.unstable {
        println!("run flagged unstable");
    }
    if let Some(f) = &mx.failure {
        m.finish(out)?;
        return Err(Numerical(format!("simulation stopped at t = {:.3} s: {}", f.time, f.message)).into());
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_forms() {
        assert_eq!(parse_grid("0:0.25:1").unwrap(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(parse_grid("0.4").unwrap(), vec![0.4]);
        let fwd = parse_grid("0:0.1:1").unwrap();
        let mut rev = parse_grid("1:-0.1:0").unwrap();
        rev.reverse();
        assert_eq!(fwd, rev);
        assert_eq!(fwd[3], 0.3);
        assert!(parse_grid("1:0.1:0").is_err());
        assert!(parse_grid("0:1").is_err());
        assert!(parse_grid("a").is_err());
    }

    #[test]
    fn tiny_values_use_exponents() {
        assert_eq!(num(3.9e-14), "3.9e-14");
        assert_eq!(num(0.5), "0.5");
        assert_eq!(num(0.0), "0");
    }
}
