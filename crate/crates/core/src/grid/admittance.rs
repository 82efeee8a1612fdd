use nalgebra::DMatrix;
use num_complex::Complex64;

use super::NetworkCase;
use crate::error::{Error, Result};

/// Bus admittance matrix, indexed in case bus order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix {
    pub bus_ids: Vec<usize>,
    pub matrix: DMatrix<Complex64>,
}

impl AdmittanceMatrix {
    pub fn zeros(bus_ids: Vec<usize>) -> Self {
        let n = bus_ids.len();
        Self { bus_ids, matrix: DMatrix::from_element(n, n, Complex64::new(0.0, 0.0)) }
    }

    pub fn dim(&self) -> usize {
        self.bus_ids.len()
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.matrix[(row, col)]
    }

    pub fn add(&mut self, row: usize, col: usize, y: Complex64) {
        self.matrix[(row, col)] += y;
    }

    /// Nonzero entries as `(row, col, value)`.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, Complex64)> + '_ {
        let n = self.dim();
        (0..n)
            .flat_map(move |r| (0..n).map(move |c| (r, c)))
            .filter_map(|(r, c)| {
                let v = self.matrix[(r, c)];
                (v.norm_sqr() > 0.0).then_some((r, c, v))
            })
    }

    /// Injected currents `Y v`.
    pub fn currents(&self, v: &[Complex64]) -> Vec<Complex64> {
        let n = self.dim();
        (0..n).map(|r| (0..n).map(|c| self.matrix[(r, c)] * v[c]).sum()).collect()
    }
}

/// Network admittance from in-service branches and bus shunts.
pub fn build_admittance(case: &NetworkCase) -> Result<AdmittanceMatrix> {
    let map = case.bus_map();
    let mut y = AdmittanceMatrix::zeros(case.buses.iter().map(|b| b.id).collect());
    for (i, bus) in case.buses.iter().enumerate() {
        y.add(i, i, Complex64::new(bus.shunt_g, bus.shunt_b));
    }
    for br in &case.branches {
        let (Some(&f), Some(&t)) = (map.get(&br.from_bus), map.get(&br.to_bus)) else {
            return Err(Error::Structure(format!(
                "branch {}-{} has a dangling endpoint",
                br.from_bus, br.to_bus
            )));
        };
        let z = Complex64::new(br.series_r, br.series_x);
        if z.norm() == 0.0 {
            return Err(Error::SingularBranch { from: br.from_bus, to: br.to_bus });
        }
        if !br.status {
            continue;
        }
        let ys = z.inv();
        let half_b = Complex64::new(0.0, br.shunt_b / 2.0);
        let tap = br.tap;
        y.add(f, f, (ys + half_b) / (tap * tap));
        y.add(f, t, -ys / tap);
        y.add(t, f, -ys / tap);
        y.add(t, t, ys + half_b);
    }
    Ok(y)
}

/// Admittance used by the dynamic network solution: the network matrix plus
/// the constant-impedance (reactive) load parts and the source admittance
/// `1 / (ra + j x'd)` of every online machine.
pub fn augmented_admittance(case: &NetworkCase) -> Result<AdmittanceMatrix> {
    let mut y = build_admittance(case)?;
    for load in &case.loads {
        let i = case.bus_index(load.bus)?;
        y.add(i, i, load.reactive_admittance());
    }
    for g in case.online_generators() {
        let i = case.bus_index(g.bus)?;
        let m = g.machine.to_system_base(case.base_mva);
        y.add(i, i, m.source_admittance());
    }
    Ok(y)
}
