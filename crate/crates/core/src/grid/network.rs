use nalgebra::{DMatrix, DVector, Matrix2};
use num_complex::Complex64;

use super::{AdmittanceMatrix, LoadModel};
use crate::error::{Error, Result};

/// Sweep limit for the algebraic network solution.
pub const MAX_SWEEPS: usize = 50;
const STEP_TOL: f64 = 1e-13;

#[derive(Debug, Clone)]
pub struct NetworkSolution {
    pub voltages: Vec<Complex64>,
    pub sweeps: usize,
    /// Max KCL mismatch at the returned voltages, pu current.
    pub residual: f64,
}

/// Solves `Y v + i_load(v) = i_inj` in real rectangular form.
///
/// `Y` is the augmented admittance (impedance loads and machine source
/// admittances folded in). Active loads draw a current of fixed magnitude in
/// phase with their bus voltage, which is the only nonlinearity; it is
/// resolved with Newton steps. Buses listed in `fixed` are ideal voltage
/// sources (infinite buses) and are eliminated from the KCL rows.
#[derive(Debug, Clone)]
pub struct NetworkSolver {
    n: usize,
    base: DMatrix<f64>,
    loads: Vec<(usize, f64)>,
    fixed: Vec<(usize, Complex64)>,
}

impl NetworkSolver {
    pub fn new(y_aug: &AdmittanceMatrix, loads: Vec<(usize, f64)>, fixed: Vec<(usize, Complex64)>) -> Self {
        let n = y_aug.dim();
        let mut base = DMatrix::zeros(2 * n, 2 * n);
        for (r, c, y) in y_aug.entries() {
            base[(2 * r, 2 * c)] = y.re;
            base[(2 * r, 2 * c + 1)] = -y.im;
            base[(2 * r + 1, 2 * c)] = y.im;
            base[(2 * r + 1, 2 * c + 1)] = y.re;
        }
        Self { n, base, loads, fixed }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    fn residual_vec(&self, x: &DVector<f64>, inj: &[Complex64], extra: &[(usize, Matrix2<f64>)]) -> DVector<f64> {
        let mut f = &self.base * x;
        for &(i, m) in extra {
            let v = nalgebra::Vector2::new(x[2 * i], x[2 * i + 1]);
            let iv = m * v;
            f[2 * i] += iv[0];
            f[2 * i + 1] += iv[1];
        }
        for &(i, mag) in &self.loads {
            let (vr, vi) = (x[2 * i], x[2 * i + 1]);
            let r = vr.hypot(vi);
            if r > 1e-9 {
                f[2 * i] += mag * vr / r;
                f[2 * i + 1] += mag * vi / r;
            }
        }
        for (i, c) in inj.iter().enumerate() {
            f[2 * i] -= c.re;
            f[2 * i + 1] -= c.im;
        }
        for &(i, v) in &self.fixed {
            f[2 * i] = x[2 * i] - v.re;
            f[2 * i + 1] = x[2 * i + 1] - v.im;
        }
        f
    }

    fn jacobian(&self, x: &DVector<f64>, extra: &[(usize, Matrix2<f64>)]) -> DMatrix<f64> {
        let mut j = self.base.clone();
        for &(i, m) in extra {
            for a in 0..2 {
                for b in 0..2 {
                    j[(2 * i + a, 2 * i + b)] += m[(a, b)];
                }
            }
        }
        for &(i, mag) in &self.loads {
            let (vr, vi) = (x[2 * i], x[2 * i + 1]);
            let r = vr.hypot(vi);
            if r > 1e-9 {
                let (ur, ui) = (vr / r, vi / r);
                let k = mag / r;
                j[(2 * i, 2 * i)] += k * (1.0 - ur * ur);
                j[(2 * i, 2 * i + 1)] -= k * ur * ui;
                j[(2 * i + 1, 2 * i)] -= k * ur * ui;
                j[(2 * i + 1, 2 * i + 1)] += k * (1.0 - ui * ui);
            }
        }
        for &(i, _) in &self.fixed {
            for row in [2 * i, 2 * i + 1] {
                j.row_mut(row).fill(0.0);
                j[(row, row)] = 1.0;
            }
        }
        j
    }

    /// Solve for bus voltages given Norton injections and optional per-bus
    /// real 2x2 admittance corrections (used for machine saliency).
    pub fn solve(
        &self,
        injections: &[Complex64],
        extra: &[(usize, Matrix2<f64>)],
        guess: &[Complex64],
    ) -> Result<NetworkSolution> {
        if injections.len() != self.n || guess.len() != self.n {
            return Err(Error::Structure("network vector length mismatch".into()));
        }
        let mut x = DVector::from_iterator(2 * self.n, guess.iter().flat_map(|v| [v.re, v.im]));
        let mut lu = self.jacobian(&x, extra).lu();
        let mut last_step = f64::INFINITY;
        for sweep in 1..=MAX_SWEEPS {
            let f = self.residual_vec(&x, injections, extra);
            let dx = lu.solve(&(-f)).ok_or_else(|| Error::Singular("network admittance".into()))?;
            x += &dx;
            let step = dx.amax();
            if !step.is_finite() {
                break;
            }
            if step <= STEP_TOL * (1.0 + x.amax()) {
                let voltages: Vec<Complex64> = (0..self.n).map(|i| Complex64::new(x[2 * i], x[2 * i + 1])).collect();
                let residual = self.kcl_residual_real(&x, injections, extra);
                return Ok(NetworkSolution { voltages, sweeps: sweep, residual });
            }
            // Refresh the factorization unless the chord iteration contracts quickly.
            if !self.loads.is_empty() && step > 0.1 * last_step {
                lu = self.jacobian(&x, extra).lu();
            }
            last_step = step;
        }
        let residual = self.kcl_residual_real(&x, injections, extra);
        Err(Error::AlgebraicFailure { sweeps: MAX_SWEEPS, residual })
    }

    fn kcl_residual_real(&self, x: &DVector<f64>, inj: &[Complex64], extra: &[(usize, Matrix2<f64>)]) -> f64 {
        let f = self.residual_vec(x, inj, extra);
        let fixed: Vec<usize> = self.fixed.iter().map(|&(i, _)| i).collect();
        (0..self.n)
            .filter(|i| !fixed.contains(i))
            .map(|i| f[2 * i].hypot(f[2 * i + 1]))
            .fold(0.0, f64::max)
    }

    /// Max KCL mismatch over non-fixed buses.
    pub fn kcl_residual(&self, v: &[Complex64], injections: &[Complex64], extra: &[(usize, Matrix2<f64>)]) -> f64 {
        let x = DVector::from_iterator(2 * self.n, v.iter().flat_map(|c| [c.re, c.im]));
        self.kcl_residual_real(&x, injections, extra)
    }
}

/// One-shot network solution with constant-current active loads.
pub fn network_algebraic_solve(
    y_aug: &AdmittanceMatrix,
    machine_injections: &[Complex64],
    loads: &[LoadModel],
    v_guess: &[Complex64],
) -> Result<Vec<Complex64>> {
    let mut cc = Vec::with_capacity(loads.len());
    for l in loads {
        let idx = y_aug
            .bus_ids
            .iter()
            .position(|&b| b == l.bus)
            .ok_or_else(|| Error::Structure(format!("load references unknown bus {}", l.bus)))?;
        cc.push((idx, l.active_current()));
    }
    let solver = NetworkSolver::new(y_aug, cc, Vec::new());
    Ok(solver.solve(machine_injections, &[], v_guess)?.voltages)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cases;
    use crate::grid::{augmented_admittance, solve_power_flow, PowerFlowOptions};

    fn zeros(n: usize) -> Vec<Complex64> {
        vec![Complex64::new(0.0, 0.0); n]
    }

    fn dense_solve(y: &AdmittanceMatrix, rhs: &[Complex64]) -> Vec<Complex64> {
        let b = DVector::from_column_slice(rhs);
        y.matrix.clone().lu().solve(&b).unwrap().iter().copied().collect()
    }

    /// Fixed-point oracle: repeatedly dense-solve with load currents frozen at
    /// the previous iterate.
    fn fixed_point_oracle(y: &AdmittanceMatrix, inj: &[Complex64], loads: &[(usize, f64)]) -> Vec<Complex64> {
        let mut v = vec![Complex64::new(1.0, 0.0); y.dim()];
        for _ in 0..2000 {
            let mut rhs = inj.to_vec();
            for &(i, mag) in loads {
                rhs[i] -= mag * v[i] / v[i].norm();
            }
            let next = dense_solve(y, &rhs);
            let diff = next.iter().zip(&v).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            v = next;
            if diff < 1e-15 {
                break;
            }
        }
        v
    }

    fn two_area_setup() -> (AdmittanceMatrix, Vec<Complex64>, Vec<LoadModel>, Vec<Complex64>) {
        let case = cases::two_area();
        let pf = solve_power_flow(&case, &PowerFlowOptions::default()).unwrap();
        let case = case.with_load_voltages(&pf).unwrap();
        let y = augmented_admittance(&case).unwrap();
        // Norton injections that reproduce the power-flow voltages.
        let mut inj = y.currents(&pf.voltages);
        for l in &case.loads {
            let i = case.bus_index(l.bus).unwrap();
            inj[i] += l.active_current() * pf.voltages[i] / pf.voltages[i].norm();
        }
        (y, inj, case.loads.clone(), pf.voltages)
    }

    #[test]
    fn single_injection_matches_dense_solve() {
        let (y, _, _, _) = two_area_setup();
        let mut inj = zeros(y.dim());
        inj[0] = Complex64::new(3.0, -4.0);
        let v = network_algebraic_solve(&y, &inj, &[], &zeros(y.dim())).unwrap();
        let oracle = dense_solve(&y, &inj);
        for (a, b) in v.iter().zip(&oracle) {
            assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn homogeneous_system_gives_zero_voltage() {
        let (y, _, _, _) = two_area_setup();
        let v = network_algebraic_solve(&y, &zeros(y.dim()), &[], &zeros(y.dim())).unwrap();
        assert!(v.iter().all(|x| x.norm() < 1e-14));
    }

    #[test]
    fn reproduces_power_flow_voltages() {
        let (y, inj, loads, v_pf) = two_area_setup();
        let flat = vec![Complex64::new(1.0, 0.0); y.dim()];
        let v = network_algebraic_solve(&y, &inj, &loads, &flat).unwrap();
        for (a, b) in v.iter().zip(&v_pf) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn halved_loads_match_dense_oracle() {
        let (y, inj, mut loads, v_pf) = two_area_setup();
        for l in &mut loads {
            l.p0 *= 0.5;
        }
        let v = network_algebraic_solve(&y, &inj, &loads, &v_pf).unwrap();
        let cc: Vec<(usize, f64)> = loads
            .iter()
            .map(|l| (y.bus_ids.iter().position(|&b| b == l.bus).unwrap(), l.active_current()))
            .collect();
        let oracle = fixed_point_oracle(&y, &inj, &cc);
        for (a, b) in v.iter().zip(&oracle) {
            assert!((a - b).norm() < 1e-8, "{a} vs {b}");
        }
        let solver = NetworkSolver::new(&y, cc, Vec::new());
        assert!(solver.kcl_residual(&v, &inj, &[]) < 1e-8);
    }

    #[test]
    fn load_power_scales_with_voltage() {
        let (y, inj, loads, v_pf) = two_area_setup();
        // Weaken the sources so load voltages move away from v0.
        let inj: Vec<Complex64> = inj.iter().map(|c| c * 0.95).collect();
        let v = network_algebraic_solve(&y, &inj, &loads, &v_pf).unwrap();
        for l in &loads {
            let i = y.bus_ids.iter().position(|&b| b == l.bus).unwrap();
            let vm = v[i].norm();
            let current = l.active_current() * v[i] / vm;
            let p = (v[i] * current.conj()).re;
            assert!((p - l.p0 * vm / l.v0).abs() < 1e-10);
            let q = -(v[i] * (l.reactive_admittance() * v[i]).conj()).im;
            assert!((-q - l.q0 * (vm / l.v0).powi(2)).abs() < 1e-10);
        }
    }

    #[test]
    fn fixed_bus_holds_voltage() {
        let case = cases::two_bus(0.1, None);
        let y = crate::grid::build_admittance(&case).unwrap();
        let v_inf = Complex64::from_polar(1.0, 0.1);
        let solver = NetworkSolver::new(&y, vec![(1, 0.5)], vec![(0, v_inf)]);
        let sol = solver.solve(&zeros(2), &[], &[Complex64::new(1.0, 0.0); 2]).unwrap();
        assert_eq!(sol.voltages[0], v_inf);
        // Load current through x=0.1: |V1| follows from the KCL at bus 1.
        let i_line = (v_inf - sol.voltages[1]) / Complex64::new(0.0, 0.1);
        let i_load = 0.5 * sol.voltages[1] / sol.voltages[1].norm();
        assert!((i_line - i_load).norm() < 1e-12);
    }
}
