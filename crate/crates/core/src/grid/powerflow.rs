use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{build_admittance, BusKind, NetworkCase};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Starting voltages; flat start when `None`.
    pub warm_start: Option<Vec<Complex64>>,
}

impl Default for PowerFlowOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 30, warm_start: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchFlow {
    pub from_bus: usize,
    pub to_bus: usize,
    pub p_from: f64,
    pub q_from: f64,
    pub p_to: f64,
    pub q_to: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowSolution {
    /// Bus voltages in case bus order.
    pub voltages: Vec<Complex64>,
    /// Generator injections in case generator order (zero when offline).
    pub gen_p: Vec<f64>,
    pub gen_q: Vec<f64>,
    pub iterations: usize,
    pub max_mismatch: f64,
    pub branch_flows: Vec<BranchFlow>,
}

impl PowerFlowSolution {
    /// Net active power flowing out of `from_area` into other areas over in-service branches.
    pub fn interchange(&self, case: &NetworkCase, from_area: u32) -> f64 {
        let area: std::collections::HashMap<usize, u32> = case.buses.iter().map(|b| (b.id, b.area)).collect();
        self.branch_flows
            .iter()
            .map(|f| match (area[&f.from_bus] == from_area, area[&f.to_bus] == from_area) {
                (true, false) => f.p_from,
                (false, true) => f.p_to,
                _ => 0.0,
            })
            .sum()
    }
}

/// Net scheduled injections (P at all buses, Q at all buses) in constant-power form.
fn scheduled_injections(case: &NetworkCase) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = case.buses.len();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    for l in &case.loads {
        let i = case.bus_index(l.bus)?;
        p[i] -= l.p0;
        q[i] -= l.q0;
    }
    for g in case.online_generators() {
        let i = case.bus_index(g.bus)?;
        p[i] += g.p_set;
    }
    Ok((p, q))
}

/// Newton-Raphson power flow in polar coordinates.
pub fn solve_power_flow(case: &NetworkCase, opts: &PowerFlowOptions) -> Result<PowerFlowSolution> {
    let n = case.buses.len();
    let slack: Vec<usize> = (0..n).filter(|&i| case.buses[i].kind == BusKind::Slack).collect();
    if slack.len() != 1 {
        return Err(Error::Structure(format!("expected exactly one slack bus, found {}", slack.len())));
    }
    let ybus = build_admittance(case)?.matrix;
    let (p_spec, q_spec) = scheduled_injections(case)?;

    let pvpq: Vec<usize> = (0..n).filter(|&i| case.buses[i].kind != BusKind::Slack).collect();
    let pq: Vec<usize> = (0..n).filter(|&i| case.buses[i].kind == BusKind::Pq).collect();

    let mut vm: Vec<f64> = Vec::with_capacity(n);
    let mut va: Vec<f64> = Vec::with_capacity(n);
    match &opts.warm_start {
        Some(v) if v.len() == n => {
            for (i, b) in case.buses.iter().enumerate() {
                let mag = if b.kind == BusKind::Pq { v[i].norm() } else { b.voltage_mag };
                vm.push(mag);
                va.push(if b.kind == BusKind::Slack { b.voltage_ang } else { v[i].arg() });
            }
        }
        Some(_) => return Err(Error::Structure("warm start has wrong length".into())),
        None => {
            for b in &case.buses {
                vm.push(if b.kind == BusKind::Pq { 1.0 } else { b.voltage_mag });
                va.push(if b.kind == BusKind::Slack { b.voltage_ang } else { 0.0 });
            }
        }
    }

    let voltages = |vm: &[f64], va: &[f64]| -> Vec<Complex64> {
        vm.iter().zip(va).map(|(&m, &a)| Complex64::from_polar(m, a)).collect()
    };
    let mismatch = |v: &[Complex64]| -> (Vec<f64>, f64) {
        let ibus = &ybus * DVector::from_column_slice(v);
        let s: Vec<Complex64> = (0..n).map(|i| v[i] * ibus[i].conj()).collect();
        let mut f = Vec::with_capacity(pvpq.len() + pq.len());
        for &i in &pvpq {
            f.push(s[i].re - p_spec[i]);
        }
        for &i in &pq {
            f.push(s[i].im - q_spec[i]);
        }
        let norm = f.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        (f, norm)
    };

    let mut v = voltages(&vm, &va);
    let (mut f, mut norm) = mismatch(&v);
    let mut iterations = 0;
    while norm > opts.tol {
        if iterations >= opts.max_iter {
            return Err(Error::Divergence { iterations, mismatch: norm });
        }
        iterations += 1;
        let jac = jacobian(&ybus, &v, &pvpq, &pq);
        let rhs = DVector::from_vec(f.iter().map(|x| -x).collect());
        let dx = jac
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Singular("power-flow Jacobian".into()))?;
        for (k, &i) in pvpq.iter().enumerate() {
            va[i] += dx[k];
        }
        for (k, &i) in pq.iter().enumerate() {
            vm[i] += dx[pvpq.len() + k];
        }
        v = voltages(&vm, &va);
        (f, norm) = mismatch(&v);
        if !norm.is_finite() {
            return Err(Error::Divergence { iterations, mismatch: norm });
        }
    }

    let ibus = &ybus * DVector::from_column_slice(&v);
    let s: Vec<Complex64> = (0..n).map(|i| v[i] * ibus[i].conj()).collect();
    let (gen_p, gen_q) = allocate_generation(case, &s)?;
    let branch_flows = branch_flows(case, &v)?;
    Ok(PowerFlowSolution { voltages: v, gen_p, gen_q, iterations, max_mismatch: norm, branch_flows })
}

/// Jacobian of [P(pvpq); Q(pq)] with respect to [angle(pvpq); magnitude(pq)].
fn jacobian(ybus: &DMatrix<Complex64>, v: &[Complex64], pvpq: &[usize], pq: &[usize]) -> DMatrix<f64> {
    let n = v.len();
    let vd = DVector::from_column_slice(v);
    let ibus = ybus * &vd;
    let vnorm: Vec<Complex64> = v.iter().map(|x| x / x.norm()).collect();
    // dS/dVa = j diag(V) conj(diag(I) - Y diag(V))
    // dS/dVm = diag(V) conj(Y diag(Vn)) + conj(diag(I)) diag(Vn)
    let j = Complex64::new(0.0, 1.0);
    let ds_dva = |r: usize, c: usize| -> Complex64 {
        let diag_i = if r == c { ibus[r] } else { Complex64::new(0.0, 0.0) };
        j * v[r] * (diag_i - ybus[(r, c)] * v[c]).conj()
    };
    let ds_dvm = |r: usize, c: usize| -> Complex64 {
        let mut x = v[r] * (ybus[(r, c)] * vnorm[c]).conj();
        if r == c {
            x += ibus[r].conj() * vnorm[r];
        }
        x
    };
    let m = pvpq.len() + pq.len();
    let mut jac = DMatrix::zeros(m, m);
    for (a, &r) in pvpq.iter().enumerate() {
        for (b, &c) in pvpq.iter().enumerate() {
            jac[(a, b)] = ds_dva(r, c).re;
        }
        for (b, &c) in pq.iter().enumerate() {
            jac[(a, pvpq.len() + b)] = ds_dvm(r, c).re;
        }
    }
    for (a, &r) in pq.iter().enumerate() {
        for (b, &c) in pvpq.iter().enumerate() {
            jac[(pvpq.len() + a, b)] = ds_dva(r, c).im;
        }
        for (b, &c) in pq.iter().enumerate() {
            jac[(pvpq.len() + a, pvpq.len() + b)] = ds_dvm(r, c).im;
        }
    }
    debug_assert_eq!(n, v.len());
    jac
}

fn allocate_generation(case: &NetworkCase, s: &[Complex64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = case.buses.len();
    let mut load_p = vec![0.0; n];
    let mut load_q = vec![0.0; n];
    for l in &case.loads {
        let i = case.bus_index(l.bus)?;
        load_p[i] += l.p0;
        load_q[i] += l.q0;
    }
    let mut gen_p = vec![0.0; case.generators.len()];
    let mut gen_q = vec![0.0; case.generators.len()];
    for i in 0..n {
        let units: Vec<usize> = case
            .generators
            .iter()
            .enumerate()
            .filter(|(_, g)| g.online && case.bus_index(g.bus).ok() == Some(i))
            .map(|(k, _)| k)
            .collect();
        if units.is_empty() {
            continue;
        }
        let p_total = s[i].re + load_p[i];
        let q_total = s[i].im + load_q[i];
        let slack = case.buses[i].kind == BusKind::Slack;
        let scheduled: f64 = units.iter().map(|&k| case.generators[k].p_set).sum();
        for &k in &units {
            gen_p[k] = if slack {
                case.generators[k].p_set + (p_total - scheduled) / units.len() as f64
            } else {
                case.generators[k].p_set
            };
            gen_q[k] = q_total / units.len() as f64;
        }
    }
    Ok((gen_p, gen_q))
}

fn branch_flows(case: &NetworkCase, v: &[Complex64]) -> Result<Vec<BranchFlow>> {
    case.branches
        .iter()
        .filter(|b| b.status)
        .map(|br| {
            let f = case.bus_index(br.from_bus)?;
            let t = case.bus_index(br.to_bus)?;
            let ys = Complex64::new(br.series_r, br.series_x).inv();
            let hb = Complex64::new(0.0, br.shunt_b / 2.0);
            let tap = br.tap;
            let i_from = (ys + hb) / (tap * tap) * v[f] - ys / tap * v[t];
            let i_to = -ys / tap * v[f] + (ys + hb) * v[t];
            let s_from = v[f] * i_from.conj();
            let s_to = v[t] * i_to.conj();
            Ok(BranchFlow {
                from_bus: br.from_bus,
                to_bus: br.to_bus,
                p_from: s_from.re,
                q_from: s_from.im,
                p_to: s_to.re,
                q_to: s_to.im,
            })
        })
        .collect()
}
