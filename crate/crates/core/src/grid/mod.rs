//! Static network model: buses, branches, loads and generator placements.
//!
//! Impedances are per-unit on the system MVA base. Generator dynamic
//! parameters are kept on their own machine base and converted when a
//! dynamic system is assembled.

mod admittance;
mod network;
mod powerflow;

pub use admittance::{augmented_admittance, build_admittance, AdmittanceMatrix};
pub use network::{network_algebraic_solve, NetworkSolution, NetworkSolver};
pub use powerflow::{solve_power_flow, BranchFlow, PowerFlowOptions, PowerFlowSolution};

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::machine::{ExciterParams, GovernorParams, MachineParams};
use crate::pss::PssConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    Pv,
    Pq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: usize,
    pub kind: BusKind,
    /// Voltage magnitude setpoint (slack/pv) or initial guess, pu.
    #[serde(default = "one")]
    pub voltage_mag: f64,
    /// Voltage angle, radians. Only the slack angle is used as a setpoint.
    #[serde(default)]
    pub voltage_ang: f64,
    #[serde(default)]
    pub base_kv: f64,
    /// Shunt conductance, pu.
    #[serde(default)]
    pub shunt_g: f64,
    /// Shunt susceptance, pu (positive = capacitive).
    #[serde(default)]
    pub shunt_b: f64,
    #[serde(default = "one_u32")]
    pub area: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from_bus: usize,
    pub to_bus: usize,
    pub series_r: f64,
    pub series_x: f64,
    /// Total line-charging susceptance, split equally between the ends.
    #[serde(default)]
    pub shunt_b: f64,
    /// Off-nominal turns ratio on the from side.
    #[serde(default = "one")]
    pub tap: f64,
    #[serde(default = "yes")]
    pub status: bool,
}

/// Bus load. In dynamics the active part draws constant current and the
/// reactive part is a constant impedance, both referenced to `v0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadModel {
    pub bus: usize,
    pub p0: f64,
    pub q0: f64,
    /// Power-flow voltage magnitude; filled in by [`NetworkCase::with_load_voltages`].
    #[serde(default = "one")]
    pub v0: f64,
}

impl LoadModel {
    /// Constant-impedance admittance representing the reactive part.
    pub fn reactive_admittance(&self) -> num_complex::Complex64 {
        num_complex::Complex64::new(0.0, -self.q0 / (self.v0 * self.v0))
    }

    /// Magnitude of the constant active current drawn, pu.
    pub fn active_current(&self) -> f64 {
        self.p0 / self.v0
    }
}

/// A generating unit: placement, dispatch, and its dynamic blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub id: usize,
    pub bus: usize,
    /// Scheduled active power, pu on system base (ignored at the slack bus).
    pub p_set: f64,
    #[serde(default = "yes")]
    pub online: bool,
    pub machine: MachineParams,
    #[serde(default)]
    pub exciter: Option<ExciterParams>,
    #[serde(default)]
    pub governor: Option<GovernorParams>,
    #[serde(default)]
    pub pss: Option<PssConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkCase {
    #[serde(default)]
    pub name: String,
    #[serde(default = "hundred")]
    pub base_mva: f64,
    /// Nominal frequency, Hz.
    #[serde(default = "sixty")]
    pub f0: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    #[serde(default)]
    pub loads: Vec<LoadModel>,
    #[serde(default)]
    pub generators: Vec<Generator>,
}

fn one() -> f64 {
    1.0
}
fn one_u32() -> u32 {
    1
}
fn yes() -> bool {
    true
}
fn hundred() -> f64 {
    100.0
}
fn sixty() -> f64 {
    60.0
}

impl NetworkCase {
    pub fn from_json(text: &str) -> Result<Self> {
        let case: NetworkCase = serde_json::from_str(text)?;
        case.validate()?;
        Ok(case)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let ids = self.bus_map();
        if ids.len() != self.buses.len() {
            return Err(Error::Structure("duplicate bus id".into()));
        }
        let slack = self.buses.iter().filter(|b| b.kind == BusKind::Slack).count();
        if slack != 1 {
            return Err(Error::Structure(format!("expected exactly one slack bus, found {slack}")));
        }
        for b in &self.buses {
            if !(b.voltage_mag > 0.0) {
                return Err(Error::Structure(format!("bus {}: voltage_mag must be > 0", b.id)));
            }
        }
        for br in &self.branches {
            for end in [br.from_bus, br.to_bus] {
                if !ids.contains_key(&end) {
                    return Err(Error::Structure(format!(
                        "branch {}-{} references unknown bus {end}",
                        br.from_bus, br.to_bus
                    )));
                }
            }
            if !(br.tap > 0.0) {
                return Err(Error::Structure(format!("branch {}-{}: tap must be > 0", br.from_bus, br.to_bus)));
            }
        }
        for l in &self.loads {
            if !ids.contains_key(&l.bus) {
                return Err(Error::Structure(format!("load references unknown bus {}", l.bus)));
            }
            if !(l.v0 > 0.0) {
                return Err(Error::Structure(format!("load at bus {}: v0 must be > 0", l.bus)));
            }
        }
        let mut gen_ids = BTreeSet::new();
        for g in &self.generators {
            if !gen_ids.insert(g.id) {
                return Err(Error::Structure(format!("duplicate generator id {}", g.id)));
            }
            if !ids.contains_key(&g.bus) {
                return Err(Error::Structure(format!("generator {} references unknown bus {}", g.id, g.bus)));
            }
            g.machine.validate().map_err(|e| Error::Structure(format!("generator {}: {e}", g.id)))?;
            if let Some(ex) = &g.exciter {
                ex.validate().map_err(|e| Error::Structure(format!("generator {}: {e}", g.id)))?;
            }
            if let Some(gov) = &g.governor {
                gov.validate().map_err(|e| Error::Structure(format!("generator {}: {e}", g.id)))?;
            }
            if let Some(p) = &g.pss {
                p.validate().map_err(|e| Error::Structure(format!("generator {}: {e}", g.id)))?;
            }
        }
        Ok(())
    }

    /// Bus id to matrix index.
    pub fn bus_map(&self) -> HashMap<usize, usize> {
        self.buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect()
    }

    pub fn bus_index(&self, id: usize) -> Result<usize> {
        self.buses
            .iter()
            .position(|b| b.id == id)
            .ok_or_else(|| Error::Structure(format!("unknown bus {id}")))
    }

    pub fn generator(&self, id: usize) -> Result<&Generator> {
        self.generators.iter().find(|g| g.id == id).ok_or_else(|| Error::UnknownUnit {
            id,
            available: self.generators.iter().map(|g| g.id).collect(),
        })
    }

    pub fn generator_position(&self, id: usize) -> Result<usize> {
        self.generators.iter().position(|g| g.id == id).ok_or_else(|| Error::UnknownUnit {
            id,
            available: self.generators.iter().map(|g| g.id).collect(),
        })
    }

    pub fn online_generators(&self) -> impl Iterator<Item = &Generator> {
        self.generators.iter().filter(|g| g.online)
    }

    /// Sum of online inertia constants on the system base, seconds.
    pub fn online_inertia(&self) -> f64 {
        self.online_generators().map(|g| g.machine.h * g.machine.mva_base / self.base_mva).sum()
    }

    /// Copy of the case with every load's `v0` set from a power-flow solution.
    pub fn with_load_voltages(&self, pf: &PowerFlowSolution) -> Result<NetworkCase> {
        let mut out = self.clone();
        for l in &mut out.loads {
            let idx = self.bus_index(l.bus)?;
            l.v0 = pf.voltages[idx].norm();
        }
        Ok(out)
    }

    /// Islands of the in-service branch graph, as sets of bus indices.
    pub fn islands(&self) -> Vec<BTreeSet<usize>> {
        let map = self.bus_map();
        let n = self.buses.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        for br in self.branches.iter().filter(|b| b.status) {
            let (a, b) = (map[&br.from_bus], map[&br.to_bus]);
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra != rb {
                parent[ra] = rb;
            }
        }
        let mut groups: HashMap<usize, BTreeSet<usize>> = HashMap::new();
        for i in 0..n {
            let r = find(&mut parent, i);
            groups.entry(r).or_default().insert(i);
        }
        let mut out: Vec<_> = groups.into_values().collect();
        out.sort();
        out
    }
}

/// Take a unit offline. The unit leaves the injection set and the
/// center-of-inertia aggregation set; the augmented admittance built from
/// the returned case no longer contains its source admittance.
pub fn apply_generator_trip(case: &NetworkCase, unit: usize) -> Result<NetworkCase> {
    let pos = case.generator_position(unit)?;
    let gen = &case.generators[pos];
    if !gen.online {
        return Err(Error::Domain(format!("generator {unit} is already offline")));
    }
    let bus = case.bus_index(gen.bus)?;
    let island = case
        .islands()
        .into_iter()
        .find(|s| s.contains(&bus))
        .expect("every bus belongs to an island");
    let map = case.bus_map();
    let others = case
        .generators
        .iter()
        .filter(|g| g.online && g.id != unit)
        .any(|g| island.contains(&map[&g.bus]));
    if !others {
        return Err(Error::Islanding { unit });
    }
    let mut out = case.clone();
    out.generators[pos].online = false;
    Ok(out)
}
