//! Discrete-event replay of an inference under a schedule.
//!
//! Layers run back to back. Synthesized decoupled layers replay their
//! LFO/HFO alternation one iteration at a time; measured points are charged
//! their recorded totals. After the last layer the board idles until the QoS
//! horizon, either with its clock still running or with clocks gated.

use serde::{Deserialize, Serialize};

use crate::clock::{switch_cost, Calibration, ClockConfig, Frequency};
use crate::cost::{Granularity, LayerProfile, OperatingPoint};
use crate::error::{Error, Result};
use crate::pareto::duplicate_order;

/// Per-layer choice plus the clocks the run starts from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub entries: Vec<OperatingPoint>,
    pub lfo: ClockConfig,
    pub initial_config: ClockConfig,
}

impl Schedule {
    pub fn new(entries: Vec<OperatingPoint>, lfo: ClockConfig, initial_config: ClockConfig) -> Result<Self> {
        let s = Self { entries, lfo, initial_config };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::InvalidSchedule("schedule has no layers".into()));
        }
        if self.entries.windows(2).any(|w| w[0].layer_index >= w[1].layer_index) {
            return Err(Error::InvalidSchedule("entries must be in strictly increasing layer order".into()));
        }
        for p in &self.entries {
            p.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IdlePolicy {
    /// Clock keeps running at the last configuration.
    #[serde(rename = "constant")]
    ConstantClockIdle,
    /// Unused clocks and the regulator are switched off.
    #[serde(rename = "gated")]
    ClockGatedIdle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerTrace {
    pub layer_index: usize,
    pub g: Granularity,
    pub hfo_mhz: f64,
    pub start_us: f64,
    /// Time from the layer's first event to its last, inter-layer switch included.
    pub latency_us: f64,
    pub energy_active_uj: f64,
    pub energy_switch_uj: f64,
    pub intra_switches: u32,
    pub inter_layer_switch: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub qos_us: f64,
    pub idle_policy: IdlePolicy,
    pub active_latency_us: f64,
    pub idle_latency_us: f64,
    pub energy_active_uj: f64,
    pub energy_switch_uj: f64,
    pub energy_idle_uj: f64,
    pub energy_total_uj: f64,
    pub switch_count: u32,
    pub qos_met: bool,
    pub per_layer: Vec<LayerTrace>,
}

/// Everything the simulator charges, in order.
#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    Switch { layer_index: usize, from: ClockConfig, to: ClockConfig, latency_us: f64, energy_uj: f64 },
    Segment { layer_index: usize, config: ClockConfig, latency_us: f64, energy_uj: f64 },
    /// Measured point charged as a whole.
    Recorded { layer_index: usize, latency_us: f64, energy_uj: f64 },
    Idle { latency_us: f64, energy_uj: f64 },
}

impl Event {
    pub fn energy_uj(&self) -> f64 {
        match *self {
            Event::Switch { energy_uj, .. }
            | Event::Segment { energy_uj, .. }
            | Event::Recorded { energy_uj, .. }
            | Event::Idle { energy_uj, .. } => energy_uj,
        }
    }

    pub fn latency_us(&self) -> f64 {
        match *self {
            Event::Switch { latency_us, .. }
            | Event::Segment { latency_us, .. }
            | Event::Recorded { latency_us, .. }
            | Event::Idle { latency_us, .. } => latency_us,
        }
    }
}

struct Replay<'a> {
    cal: &'a Calibration,
    now_us: f64,
    current: ClockConfig,
    energy_active: f64,
    energy_switch: f64,
    switch_count: u32,
    events: Vec<Event>,
}

impl Replay<'_> {
    /// Returns the switch energy charged; no-op moves are not events.
    fn switch(&mut self, layer_index: usize, to: ClockConfig, always: bool) -> (f64, bool) {
        if !always && self.current == to {
            return (0.0, false);
        }
        let cost = switch_cost(&self.current, &to, &self.cal.switching);
        self.events.push(Event::Switch {
            layer_index,
            from: self.current,
            to,
            latency_us: cost.latency_us,
            energy_uj: cost.energy_uj,
        });
        self.now_us += cost.latency_us;
        self.energy_switch += cost.energy_uj;
        self.switch_count += 1;
        self.current = to;
        (cost.energy_uj, true)
    }

    fn segment(&mut self, layer_index: usize, latency_us: f64) -> f64 {
        let energy_uj = latency_us * self.cal.power.power_mw(&self.current) / 1000.0;
        self.events.push(Event::Segment { layer_index, config: self.current, latency_us, energy_uj });
        self.now_us += latency_us;
        self.energy_active += energy_uj;
        energy_uj
    }

    fn layer(&mut self, p: &OperatingPoint) -> LayerTrace {
        let start_us = self.now_us;
        let mut active = 0.0;
        let mut switching = 0.0;
        let mut intra = 0;
        let mut inter = false;
        match p.segments {
            Some(plan) if p.g.is_decoupled() && plan.iterations > 0 => {
                // The first HFO->LFO move doubles as the inter-layer transition.
                let s = plan.iterations as f64;
                let (mem_each, compute_each) = (plan.mem_us / s, plan.compute_us / s);
                for _ in 0..plan.iterations {
                    switching += self.switch(p.layer_index, p.lfo, true).0;
                    active += self.segment(p.layer_index, mem_each);
                    switching += self.switch(p.layer_index, p.hfo, true).0;
                    active += self.segment(p.layer_index, compute_each);
                    intra += 2;
                }
            }
            Some(plan) => {
                let (e, moved) = self.switch(p.layer_index, p.hfo, false);
                switching += e;
                inter = moved;
                active += self.segment(p.layer_index, plan.compute_us);
            }
            None => {
                let (e, moved) = self.switch(p.layer_index, p.entry_config(), false);
                switching += e;
                inter = moved;
                self.events.push(Event::Recorded {
                    layer_index: p.layer_index,
                    latency_us: p.latency_us,
                    energy_uj: p.energy_uj,
                });
                self.now_us += p.latency_us;
                self.energy_active += p.energy_uj;
                active += p.energy_uj;
                self.current = p.hfo;
            }
        }
        LayerTrace {
            layer_index: p.layer_index,
            g: p.g,
            hfo_mhz: p.hfo.frequency().mhz(),
            start_us,
            latency_us: self.now_us - start_us,
            energy_active_uj: active,
            energy_switch_uj: switching,
            intra_switches: intra,
            inter_layer_switch: inter,
        }
    }
}

/// Runs `schedule` and returns the report with its full event log.
pub fn simulate_trace(
    schedule: &Schedule,
    qos_us: f64,
    cal: &Calibration,
    idle_policy: IdlePolicy,
) -> Result<(SimReport, Vec<Event>)> {
    schedule.validate()?;
    if !(qos_us.is_finite() && qos_us > 0.0) {
        return Err(Error::InvalidSchedule(format!("QoS budget {qos_us} must be positive")));
    }
    let mut replay = Replay {
        cal,
        now_us: 0.0,
        current: schedule.initial_config,
        energy_active: 0.0,
        energy_switch: 0.0,
        switch_count: 0,
        events: Vec::new(),
    };
    let per_layer: Vec<LayerTrace> = schedule.entries.iter().map(|p| replay.layer(p)).collect();

    let active_latency_us = replay.now_us;
    let qos_met = active_latency_us <= qos_us;
    let idle_latency_us = if qos_met { qos_us - active_latency_us } else { 0.0 };
    let idle_mw = match idle_policy {
        IdlePolicy::ConstantClockIdle => cal.power.idle_mw_at(replay.current.frequency()),
        IdlePolicy::ClockGatedIdle => cal.power.gated_idle_mw,
    };
    let energy_idle_uj = idle_latency_us * idle_mw / 1000.0;
    if idle_latency_us > 0.0 {
        replay.events.push(Event::Idle { latency_us: idle_latency_us, energy_uj: energy_idle_uj });
    }

    let report = SimReport {
        qos_us,
        idle_policy,
        active_latency_us,
        idle_latency_us,
        energy_active_uj: replay.energy_active,
        energy_switch_uj: replay.energy_switch,
        energy_idle_uj,
        energy_total_uj: replay.energy_active + replay.energy_switch + energy_idle_uj,
        switch_count: replay.switch_count,
        qos_met,
        per_layer,
    };
    Ok((report, replay.events))
}

pub fn simulate(
    schedule: &Schedule,
    qos_us: f64,
    cal: &Calibration,
    idle_policy: IdlePolicy,
) -> Result<SimReport> {
    simulate_trace(schedule, qos_us, cal, idle_policy).map(|(r, _)| r)
}

/// The untouched network at the highest frequency available: each layer's
/// `g = 0` point with the highest HFO frequency not above `max_hfo`
/// (lowest energy among equals). The run starts on the first layer's HFO.
pub fn baseline_schedule(profiles: &[LayerProfile], max_hfo: Option<Frequency>) -> Result<Schedule> {
    if profiles.is_empty() {
        return Err(Error::InvalidSchedule("no layer profiles".into()));
    }
    let entries = profiles
        .iter()
        .map(|prof| {
            prof.points
                .iter()
                .filter(|p| p.g == Granularity::NONE)
                .filter(|p| max_hfo.is_none_or(|m| p.hfo.frequency() <= m))
                .max_by(|a, b| {
                    a.hfo
                        .frequency()
                        .cmp(&b.hfo.frequency())
                        .then_with(|| b.energy_uj.total_cmp(&a.energy_uj))
                        .then_with(|| duplicate_order(b, a))
                })
                .cloned()
                .ok_or(Error::NoBaselinePoint(prof.layer_index))
        })
        .collect::<Result<Vec<_>>>()?;
    let lfo = entries[0].lfo;
    let initial = entries[0].hfo;
    Schedule::new(entries, lfo, initial)
}

/// Constant-frequency baseline idling with its clock running.
pub fn baseline_constant(
    profiles: &[LayerProfile],
    qos_us: f64,
    cal: &Calibration,
    max_hfo: Option<Frequency>,
) -> Result<SimReport> {
    simulate(&baseline_schedule(profiles, max_hfo)?, qos_us, cal, IdlePolicy::ConstantClockIdle)
}

/// Same run as [`baseline_constant`] with gated idle.
pub fn baseline_gated(
    profiles: &[LayerProfile],
    qos_us: f64,
    cal: &Calibration,
    max_hfo: Option<Frequency>,
) -> Result<SimReport> {
    simulate(&baseline_schedule(profiles, max_hfo)?, qos_us, cal, IdlePolicy::ClockGatedIdle)
}

/// Active latency of the baseline run.
pub fn baseline_latency_us(
    profiles: &[LayerProfile],
    cal: &Calibration,
    max_hfo: Option<Frequency>,
) -> Result<f64> {
    let schedule = baseline_schedule(profiles, max_hfo)?;
    // Any positive budget works; only the active phase is read.
    Ok(simulate(&schedule, 1.0, cal, IdlePolicy::ClockGatedIdle)?.active_latency_us)
}

/// Budget allowing `slack_pct` percent of latency inflation over the baseline.
pub fn qos_from_slack(
    profiles: &[LayerProfile],
    slack_pct: f64,
    cal: &Calibration,
    max_hfo: Option<Frequency>,
) -> Result<f64> {
    if !(slack_pct.is_finite() && slack_pct >= 0.0) {
        return Err(Error::InvalidProblem(format!("slack {slack_pct}% must be non-negative")));
    }
    Ok(baseline_latency_us(profiles, cal, max_hfo)? * (1.0 + slack_pct / 100.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub name: String,
    pub energy_total_uj: f64,
    pub normalized: f64,
    pub active_latency_us: f64,
    pub qos_met: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn extend(&mut self, other: ComparisonTable) {
        self.rows.extend(other.rows);
    }
}

/// Normalizes every report's total energy by the first report's.
pub fn compare(reports: &[(String, SimReport)]) -> ComparisonTable {
    let Some((_, base)) = reports.first() else {
        return ComparisonTable::default();
    };
    let reference = base.energy_total_uj;
    ComparisonTable {
        rows: reports
            .iter()
            .map(|(name, r)| ComparisonRow {
                name: name.clone(),
                energy_total_uj: r.energy_total_uj,
                normalized: r.energy_total_uj / reference,
                active_latency_us: r.active_latency_us,
                qos_met: r.qos_met,
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::SwitchCostModel;
    use crate::cost::{synthesize_point, DaeOverhead, LayerKind, LayerSpec};

    fn layer(index: usize, channels: u32) -> LayerSpec {
        LayerSpec {
            index,
            kind: LayerKind::Depthwise,
            channels,
            spatial: (14, 14),
            kernel: (3, 3),
            work_cycles: 2_000_000,
            mem_cycles: 800_000,
            dae_overhead: DaeOverhead::default(),
        }
    }

    fn hse() -> ClockConfig {
        ClockConfig::hse(50).unwrap()
    }

    fn hfo(n: u32) -> ClockConfig {
        ClockConfig::pll(50, 25, n, 2).unwrap()
    }

    fn point(l: &LayerSpec, g: u32, n: u32, cal: &Calibration) -> OperatingPoint {
        synthesize_point(l, Granularity::new(g).unwrap(), &hse(), &hfo(n), cal).unwrap()
    }

    #[test]
    fn idle_tail_per_policy() {
        let cal = Calibration::default();
        let p = point(&layer(0, 16), 0, 216, &cal);
        let lat = p.latency_us;
        let s = Schedule::new(vec![p], hse(), hfo(216)).unwrap();
        let constant = simulate(&s, 2.0 * lat, &cal, IdlePolicy::ConstantClockIdle).unwrap();
        assert_eq!(constant.idle_latency_us, lat);
        assert_eq!(constant.energy_idle_uj, cal.power.idle_mw_at(Frequency::from_mhz(216)) * lat / 1000.0);
        let gated = simulate(&s, 2.0 * lat, &cal, IdlePolicy::ClockGatedIdle).unwrap();
        assert_eq!(gated.energy_idle_uj, cal.power.gated_idle_mw * lat / 1000.0);
        assert!(gated.energy_idle_uj < constant.energy_idle_uj);
        assert_eq!(gated.energy_active_uj, constant.energy_active_uj);
        assert_eq!(constant.switch_count, 0);
    }

    #[test]
    fn zero_switch_cost_conserves_point_energy() {
        let cal = Calibration { switching: SwitchCostModel::zero(), ..Calibration::default() };
        let l0 = layer(0, 16);
        let l1 = layer(1, 32);
        let entries = vec![point(&l0, 4, 216, &cal), point(&l1, 0, 150, &cal)];
        let sum: f64 = entries.iter().map(|p| p.energy_uj).sum();
        let s = Schedule::new(entries, hse(), hfo(216)).unwrap();
        let r = simulate(&s, 1e7, &cal, IdlePolicy::ClockGatedIdle).unwrap();
        assert_eq!(r.energy_switch_uj, 0.0);
        assert!((r.energy_active_uj - sum).abs() <= 1e-9 * sum);
        assert_eq!(r.energy_total_uj, r.energy_active_uj + r.energy_switch_uj + r.energy_idle_uj);
    }

    #[test]
    fn replay_matches_synthesized_totals() {
        let cal = Calibration::default();
        let l = layer(0, 16);
        for g in [2, 4, 8, 12, 16] {
            let p = point(&l, g, 216, &cal);
            // Start on the HFO so the first switch matches the synthesized one.
            let s = Schedule::new(vec![p.clone()], hse(), hfo(216)).unwrap();
            let r = simulate(&s, 1e7, &cal, IdlePolicy::ClockGatedIdle).unwrap();
            let e = r.energy_active_uj + r.energy_switch_uj;
            assert!((e - p.energy_uj).abs() <= 1e-9 * p.energy_uj);
            assert!((r.active_latency_us - p.latency_us).abs() <= 1e-9 * p.latency_us);
            assert_eq!(r.per_layer[0].intra_switches, 2 * 16u32.div_ceil(g));
        }
    }

    #[test]
    fn inter_layer_switches_follow_entry_configs() {
        let cal = Calibration::default();
        let (l0, l1, l2) = (layer(0, 16), layer(1, 16), layer(2, 16));
        let entries = vec![point(&l0, 0, 216, &cal), point(&l1, 0, 150, &cal), point(&l2, 8, 150, &cal)];
        let s = Schedule::new(entries, hse(), hfo(216)).unwrap();
        let r = simulate(&s, 1e7, &cal, IdlePolicy::ClockGatedIdle).unwrap();
        assert!(!r.per_layer[0].inter_layer_switch);
        assert!(r.per_layer[1].inter_layer_switch);
        assert_eq!(r.per_layer[1].energy_switch_uj, 200.0 * 60.0 / 1000.0);
        assert_eq!(r.per_layer[2].intra_switches, 4);
        assert_eq!(r.switch_count, 1 + 4);
    }

    #[test]
    fn violated_qos_has_no_idle_tail() {
        let cal = Calibration::default();
        let p = point(&layer(0, 16), 0, 216, &cal);
        let lat = p.latency_us;
        let s = Schedule::new(vec![p], hse(), hfo(216)).unwrap();
        let r = simulate(&s, lat / 2.0, &cal, IdlePolicy::ConstantClockIdle).unwrap();
        assert!(!r.qos_met);
        assert_eq!(r.idle_latency_us, 0.0);
        assert_eq!(r.energy_idle_uj, 0.0);
    }

    #[test]
    fn events_sum_to_total() {
        let cal = Calibration::default();
        let entries = vec![point(&layer(0, 16), 2, 216, &cal), point(&layer(1, 24), 12, 100, &cal)];
        let s = Schedule::new(entries, hse(), hfo(216)).unwrap();
        let (r, events) = simulate_trace(&s, 1e6, &cal, IdlePolicy::ConstantClockIdle).unwrap();
        let sum: f64 = events.iter().map(Event::energy_uj).sum();
        assert!((sum - r.energy_total_uj).abs() <= 1e-9 * r.energy_total_uj);
        let t: f64 = events.iter().map(Event::latency_us).sum();
        assert!((t - r.qos_us).abs() <= 1e-9 * r.qos_us);
    }

    #[test]
    fn measured_points_charge_recorded_values() {
        let cal = Calibration::default();
        let mut p = point(&layer(0, 16), 4, 216, &cal);
        p.segments = None;
        let s = Schedule::new(vec![p.clone()], hse(), hfo(216)).unwrap();
        let r = simulate(&s, 1e7, &cal, IdlePolicy::ClockGatedIdle).unwrap();
        assert_eq!(r.energy_active_uj, p.energy_uj);
        // HFO -> HSE costs nothing by default but is still a switch
        assert_eq!(r.energy_switch_uj, 0.0);
        assert_eq!(r.switch_count, 1);
        assert_eq!(r.active_latency_us, p.latency_us);
    }

    #[test]
    fn schedule_validation() {
        let cal = Calibration::default();
        let p = point(&layer(0, 16), 0, 216, &cal);
        assert!(Schedule::new(vec![], hse(), hfo(216)).is_err());
        assert!(Schedule::new(vec![p.clone(), p], hse(), hfo(216)).is_err());
    }

    #[test]
    fn comparison_normalizes_by_first() {
        let cal = Calibration::default();
        let p = point(&layer(0, 16), 0, 216, &cal);
        let s = Schedule::new(vec![p], hse(), hfo(216)).unwrap();
        let mut a = simulate(&s, 1e5, &cal, IdlePolicy::ConstantClockIdle).unwrap();
        let mut b = a.clone();
        a.energy_total_uj = 100.0;
        b.energy_total_uj = 80.0;
        let t = compare(&[("baseline".into(), a.clone()), ("plan".into(), b)]);
        assert_eq!(t.rows[1].normalized, 0.8);
        let t = compare(&[("x".into(), a.clone()), ("y".into(), a)]);
        assert_eq!(t.rows[1].normalized, 1.0);
        assert!(compare(&[]).rows.is_empty());
    }
}
