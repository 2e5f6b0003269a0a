//! End-to-end flow: clock selection, profile synthesis, planning and the
//! three-way comparison against the constant-clock baselines.

use serde::{Deserialize, Serialize};

use crate::clock::{
    enumerate_configs, group_iso_frequency, min_power_config, Calibration, ClockConfig, ClockSweep,
    Frequency, DEFAULT_HSE_MHZ,
};
use crate::cost::{build_profile_grid, Granularity, LayerProfile, LayerSpec};
use crate::error::Result;
use crate::mckp::{solve_dp, PlanProblem, PlanSolution, DEFAULT_QUANTUM_US};
use crate::pareto::pareto_front_all;
use crate::sim::{
    baseline_constant, baseline_gated, baseline_schedule, compare, qos_from_slack, simulate,
    ComparisonTable, IdlePolicy, Schedule, SimReport,
};

/// Highest SYSCLK the reference MCU runs at.
pub const DEFAULT_MAX_SYSCLK_MHZ: u64 = 216;
pub const DEFAULT_SLACKS: [f64; 3] = [10.0, 30.0, 50.0];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlannerOptions {
    /// Ceiling on HFO frequencies, applied to both the grid and the baseline.
    pub max_sysclk: Option<Frequency>,
    pub quantum_us: f64,
    pub planned_idle: IdlePolicy,
}

impl Default for PlannerOptions {
    fn default() -> Self {
        Self {
            max_sysclk: Some(Frequency::from_mhz(DEFAULT_MAX_SYSCLK_MHZ)),
            quantum_us: DEFAULT_QUANTUM_US,
            planned_idle: IdlePolicy::ClockGatedIdle,
        }
    }
}

/// One lowest-power PLL config per reachable frequency of `sweep`.
pub fn hfo_set(sweep: &ClockSweep, cal: &Calibration) -> Result<Vec<ClockConfig>> {
    let configs: Vec<ClockConfig> = enumerate_configs(sweep)?.into_iter().map(|(c, _)| c).collect();
    group_iso_frequency(&configs)
        .into_iter()
        .map(|(f, group)| min_power_config(f, &group, &cal.power))
        .collect()
}

pub fn default_hfo_set(cal: &Calibration, max_sysclk: Option<Frequency>) -> Result<Vec<ClockConfig>> {
    hfo_set(&ClockSweep { max_sysclk, ..ClockSweep::default() }, cal)
}

/// All six granularities against the default HFO set, LFO on the 50 MHz HSE.
pub fn synthesize_profiles(
    layers: &[LayerSpec],
    cal: &Calibration,
    opts: &PlannerOptions,
) -> Result<Vec<LayerProfile>> {
    let hfos = default_hfo_set(cal, opts.max_sysclk)?;
    let lfo = ClockConfig::hse(DEFAULT_HSE_MHZ)?;
    let gs: Vec<Granularity> = Granularity::all().collect();
    build_profile_grid(layers, &gs, &hfos, &lfo, cal)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub solution: PlanSolution,
    pub schedule: Schedule,
}

/// Pareto-filters the profiles and solves for `qos_us`. The schedule starts
/// from the same clock as the baseline.
pub fn plan(
    profiles: &[LayerProfile],
    qos_us: f64,
    opts: &PlannerOptions,
) -> Result<Plan> {
    let fronts = pareto_front_all(profiles)?;
    let problem = PlanProblem::new(fronts, qos_us, opts.quantum_us)?;
    let solution = solve_dp(&problem)?;
    let initial = baseline_schedule(profiles, opts.max_sysclk)?.initial_config;
    let lfo = solution.selection[0].lfo;
    let schedule = Schedule::new(solution.selection.clone(), lfo, initial)?;
    Ok(Plan { solution, schedule })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlackComparison {
    pub slack_pct: f64,
    pub qos_us: f64,
    pub baseline: SimReport,
    pub gated: SimReport,
    pub planned: SimReport,
    pub plan: Plan,
}

impl SlackComparison {
    pub fn table(&self) -> ComparisonTable {
        let tag = format_slack(self.slack_pct);
        compare(&[
            (format!("baseline_slack{tag}"), self.baseline.clone()),
            (format!("gated_slack{tag}"), self.gated.clone()),
            (format!("planned_slack{tag}"), self.planned.clone()),
        ])
    }
}

fn format_slack(slack: f64) -> String {
    if slack.fract() == 0.0 {
        format!("{}", slack as i64)
    } else {
        format!("{slack}")
    }
}

/// Runs both baselines and the planner at one slack level.
pub fn compare_at_slack(
    profiles: &[LayerProfile],
    slack_pct: f64,
    cal: &Calibration,
    opts: &PlannerOptions,
) -> Result<SlackComparison> {
    let qos_us = qos_from_slack(profiles, slack_pct, cal, opts.max_sysclk)?;
    let baseline = baseline_constant(profiles, qos_us, cal, opts.max_sysclk)?;
    let gated = baseline_gated(profiles, qos_us, cal, opts.max_sysclk)?;
    let plan = plan(profiles, qos_us, opts)?;
    let planned = simulate(&plan.schedule, qos_us, cal, opts.planned_idle)?;
    Ok(SlackComparison { slack_pct, qos_us, baseline, gated, planned, plan })
}
