//! Power system electromechanical dynamics with a wide-area, generalized
//! speed-deviation stabilizer: network and machine models, the stabilizer and
//! its measurement channel, small-signal analysis and time simulation.

pub mod cases;
pub mod error;
pub mod grid;
pub mod linear;
pub mod machine;
pub mod pss;
pub mod sim;
pub mod system;
pub mod wams;

pub use error::{Error, Result};
pub use grid::NetworkCase;
pub use linear::{eigensolve, linearize, LinearModel, ModalResult, ModeClass};
pub use pss::PssConfig;
pub use sim::{run, Event, EventKind, Scenario, SimulationRecord};
pub use system::{initialize, ClosedLoop, Initialized, LoopBreak, SystemOptions};
pub use wams::{SensorChannel, Weighting};
