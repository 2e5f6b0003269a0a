//! Energy-aware DVFS planning for decoupled access-execute CNN kernels on
//! STM32-class microcontrollers.
//!
//! The crate models the SYSCLK tree ([`clock`]), turns network layers into
//! (latency, energy) operating points ([`cost`]), keeps the Pareto-optimal
//! ones ([`pareto`]), picks one point per layer under a latency budget
//! ([`mckp`]) and replays the resulting schedule against constant-clock
//! baselines ([`sim`]). [`pipeline`] strings the steps together.

pub mod clock;
pub mod cost;
pub mod error;
pub mod fixtures;
pub mod mckp;
pub mod pareto;
pub mod pipeline;
pub mod sim;

pub use clock::{Calibration, ClockConfig, ClockSource, Frequency, PowerModel, SwitchCostModel};
pub use cost::{Granularity, LayerKind, LayerProfile, LayerSpec, OperatingPoint};
pub use error::{Error, Result};
pub use mckp::{PlanProblem, PlanSolution};
pub use pareto::ParetoSet;
pub use sim::{IdlePolicy, Schedule, SimReport};
