//! Shared fixtures for the criterion benches.

use gpss_core::sim::Scenario;
use gpss_core::{cases, initialize, linearize, LinearModel, LoopBreak, NetworkCase, PssConfig, SystemOptions};

/// Bundled two-area case.
pub fn case() -> NetworkCase {
    cases::two_area()
}

/// G3 trip at 1 s over `t_end` seconds with every unit stabilized.
pub fn trip(t_end: f64) -> Scenario {
    let mut sc = Scenario::trip(3, 1.0, t_end);
    sc.pss = Some(PssConfig::with_tuning(1.0 / 3.0, 1.0 / 3.0, 18.0));
    sc
}

/// Open-loop model at unit 1 with a stabilizer on that unit only.
pub fn open_loop_model() -> LinearModel {
    let mut case = case();
    case.generators[0].pss = Some(PssConfig::with_tuning(1.0, 0.5, 9.0));
    let init = initialize(&case, &SystemOptions::default()).expect("bundled case initializes");
    let sys = init.system.clone().with_open_loop(1, LoopBreak::ChainInput).expect("unit 1 exists");
    linearize(&sys, &init.x0, &init.workspace, 1e-6).expect("linearization succeeds")
}
