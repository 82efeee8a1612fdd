//! Bundled and synthetic test cases.

use crate::grid::{Branch, Bus, BusKind, Generator, LoadModel, NetworkCase};
use crate::machine::{MachineModel, MachineParams};

const TWO_AREA: &str = include_str!("../data/two_area.json");

/// Four-machine, two-area system: 13 buses, 14 branches. G1 and G3 are
/// small units, G2 and G4 carry the rest of the capacity.
pub fn two_area() -> NetworkCase {
    NetworkCase::from_json(TWO_AREA).expect("bundled case is valid")
}

/// Raw text of the bundled two-area case.
pub fn two_area_json() -> &'static str {
    TWO_AREA
}

fn bus(id: usize, kind: BusKind) -> Bus {
    Bus {
        id,
        kind,
        voltage_mag: 1.0,
        voltage_ang: 0.0,
        base_kv: 230.0,
        shunt_g: 0.0,
        shunt_b: 0.0,
        area: 1,
    }
}

fn branch(from_bus: usize, to_bus: usize, series_x: f64) -> Branch {
    Branch { from_bus, to_bus, series_r: 0.0, series_x, shunt_b: 0.0, tap: 1.0, status: true }
}

/// Slack bus 1 feeding bus 2 through a lossless reactance `x`, with an
/// optional `(p, q)` load at bus 2. No generators.
pub fn two_bus(x: f64, load: Option<(f64, f64)>) -> NetworkCase {
    NetworkCase {
        name: "two_bus".into(),
        base_mva: 100.0,
        f0: 60.0,
        buses: vec![bus(1, BusKind::Slack), bus(2, BusKind::Pq)],
        branches: vec![branch(1, 2, x)],
        loads: load.map(|(p0, q0)| vec![LoadModel { bus: 2, p0, q0, v0: 1.0 }]).unwrap_or_default(),
        generators: Vec::new(),
    }
}

/// Classical machine parameters with transient reactance `xd_p` on a
/// 100 MVA base.
pub fn classical_machine(h: f64, d: f64, xd_p: f64) -> MachineParams {
    MachineParams {
        h,
        d,
        omega0: 1.0,
        xd: xd_p,
        xq: xd_p,
        xd_p,
        xq_p: xd_p,
        ra: 0.0,
        td0_p: 1.0,
        tq0_p: 1.0,
        mva_base: 100.0,
        model: MachineModel::Classical,
    }
}

/// Classical machine at bus 1 delivering `p` through reactance `x` to an
/// infinite bus (bus 2, the slack, held at 1.0 pu).
pub fn single_machine_infinite_bus(h: f64, d: f64, xd_p: f64, x: f64, p: f64) -> NetworkCase {
    NetworkCase {
        name: "smib".into(),
        base_mva: 100.0,
        f0: 60.0,
        buses: vec![Bus { kind: BusKind::Pv, ..bus(1, BusKind::Pv) }, bus(2, BusKind::Slack)],
        branches: vec![branch(1, 2, x)],
        loads: Vec::new(),
        generators: vec![Generator {
            id: 1,
            bus: 1,
            p_set: p,
            online: true,
            machine: classical_machine(h, d, xd_p),
            exciter: None,
            governor: None,
            pss: None,
        }],
    }
}

/// Two classical machines joined by a lossless reactance, no loads.
pub fn two_machine_lossless(h1: f64, h2: f64, x: f64, p: f64) -> NetworkCase {
    let gen = |id: usize, h: f64, p_set: f64| Generator {
        id,
        bus: id,
        p_set,
        online: true,
        machine: classical_machine(h, 0.0, 0.25),
        exciter: None,
        governor: None,
        pss: None,
    };
    NetworkCase {
        name: "two_machine".into(),
        base_mva: 100.0,
        f0: 60.0,
        buses: vec![bus(1, BusKind::Pv), bus(2, BusKind::Slack)],
        branches: vec![branch(1, 2, x)],
        loads: Vec::new(),
        generators: vec![gen(1, h1, p), gen(2, h2, -p)],
    }
}
