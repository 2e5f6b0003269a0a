//! QoS-constrained energy minimization as a multiple-choice knapsack.
//!
//! Each layer is a class; exactly one point is picked per class so that the
//! summed energy is minimal and the summed latency stays within the QoS
//! budget. [`solve_dp`] is the pseudo-polynomial solver over a quantized
//! time axis; [`solve_exhaustive`] enumerates every combination and serves
//! as its oracle.
//!
//! The DP minimizes directly rather than going through the classic
//! `max sum(U_k - E_kj)` rewrite; both have the same optimum.

use serde::{Deserialize, Serialize};

use crate::cost::OperatingPoint;
use crate::error::{Error, Result};
use crate::pareto::ParetoSet;

/// Default DP time step.
pub const DEFAULT_QUANTUM_US: f64 = 10.0;
/// Refuse DP tables with more cells than this.
pub const MAX_DP_CELLS: usize = 400_000_000;
/// Largest search space [`solve_exhaustive`] will walk.
pub const MAX_EXHAUSTIVE: u128 = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct PlanProblem {
    classes: Vec<ParetoSet>,
    qos_us: f64,
    time_quantum_us: f64,
}

impl PlanProblem {
    pub fn new(classes: Vec<ParetoSet>, qos_us: f64, time_quantum_us: f64) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::InvalidProblem("at least one layer is required".into()));
        }
        if let Some(c) = classes.iter().find(|c| c.points.is_empty()) {
            return Err(Error::EmptyProfile(c.layer_index));
        }
        if !(qos_us.is_finite() && qos_us > 0.0) {
            return Err(Error::InvalidProblem(format!("QoS budget {qos_us} must be positive")));
        }
        if !(time_quantum_us.is_finite() && time_quantum_us > 0.0) {
            return Err(Error::InvalidProblem(format!("time quantum {time_quantum_us} must be positive")));
        }
        Ok(Self { classes, qos_us, time_quantum_us })
    }

    pub fn classes(&self) -> &[ParetoSet] {
        &self.classes
    }

    pub fn qos_us(&self) -> f64 {
        self.qos_us
    }

    pub fn time_quantum_us(&self) -> f64 {
        self.time_quantum_us
    }

    /// Quantized latency, rounded up so quantized feasibility implies true
    /// feasibility.
    pub fn quantize(&self, latency_us: f64) -> usize {
        (latency_us / self.time_quantum_us).ceil() as usize
    }

    /// Quantized budget, rounded down.
    pub fn budget(&self) -> usize {
        (self.qos_us / self.time_quantum_us).floor() as usize
    }

    /// Per-class point with the smallest latency.
    fn fastest_indices(&self) -> Vec<usize> {
        self.classes
            .iter()
            .map(|c| {
                (0..c.points.len())
                    .min_by(|&a, &b| {
                        c.points[a]
                            .latency_us
                            .total_cmp(&c.points[b].latency_us)
                            .then_with(|| c.points[a].energy_uj.total_cmp(&c.points[b].energy_uj))
                    })
                    .expect("classes are non-empty")
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSolution {
    /// One point per layer, in layer order.
    pub selection: Vec<OperatingPoint>,
    /// Index of each selected point within its class.
    pub indices: Vec<usize>,
    pub total_latency_us: f64,
    pub total_energy_uj: f64,
    /// False when no selection meets the budget; `selection` then holds the
    /// fastest point of every layer.
    pub feasible: bool,
    pub dp_cells: usize,
}

impl PlanSolution {
    fn from_indices(p: &PlanProblem, indices: Vec<usize>, feasible: bool, dp_cells: usize) -> Self {
        let selection: Vec<OperatingPoint> = p
            .classes
            .iter()
            .zip(&indices)
            .map(|(c, &j)| c.points[j].clone())
            .collect();
        let (total_latency_us, total_energy_uj) = energy_of(&selection);
        Self { selection, indices, total_latency_us, total_energy_uj, feasible, dp_cells }
    }
}

/// Summed (latency, energy) of a selection, accumulated in layer order.
pub fn energy_of(selection: &[OperatingPoint]) -> (f64, f64) {
    selection
        .iter()
        .fold((0.0, 0.0), |(t, e), p| (t + p.latency_us, e + p.energy_uj))
}

/// Dynamic program over (layer, remaining quantized time).
///
/// `best[k][b]` is the least energy of layers `k..n` within `b` time
/// quanta; equal energies go to lower latency, then to the smaller point
/// index, so rebuilding the selection front to back yields the
/// lexicographically smallest optimum.
pub fn solve_dp(p: &PlanProblem) -> Result<PlanSolution> {
    let n = p.classes.len();
    let quant: Vec<Vec<usize>> = p
        .classes
        .iter()
        .map(|c| c.points.iter().map(|pt| p.quantize(pt.latency_us)).collect())
        .collect();
    let min_total: usize = quant.iter().map(|q| *q.iter().min().expect("non-empty")).sum();
    let max_total: usize = quant.iter().map(|q| *q.iter().max().expect("non-empty")).sum();
    let budget = p.budget();

    if min_total > budget {
        return Ok(PlanSolution::from_indices(p, p.fastest_indices(), false, 0));
    }
    // Budgets beyond the slowest combination constrain nothing.
    let cap = budget.min(max_total);
    let width = cap + 1;
    let cells = n
        .checked_mul(width)
        .filter(|&c| c <= MAX_DP_CELLS)
        .ok_or_else(|| {
            Error::InvalidProblem(format!(
                "DP table of {n} x {width} cells is too large; increase the time quantum"
            ))
        })?;

    const NONE: u32 = u32::MAX;
    let mut choice = vec![NONE; cells];
    // Suffix values for layers k+1..n; empty suffix costs nothing.
    let mut next_e = vec![0.0f64; width];
    let mut next_t = vec![0.0f64; width];
    let mut cur_e = vec![f64::INFINITY; width];
    let mut cur_t = vec![f64::INFINITY; width];

    for k in (0..n).rev() {
        let class = &p.classes[k].points;
        let row = &mut choice[k * width..(k + 1) * width];
        for b in 0..width {
            let mut best_e = f64::INFINITY;
            let mut best_t = f64::INFINITY;
            let mut best_j = NONE;
            for (j, pt) in class.iter().enumerate() {
                let qj = quant[k][j];
                if qj > b {
                    continue;
                }
                let rest_e = next_e[b - qj];
                if rest_e == f64::INFINITY {
                    continue;
                }
                let e = pt.energy_uj + rest_e;
                let t = pt.latency_us + next_t[b - qj];
                if e < best_e || (e == best_e && t < best_t) {
                    best_e = e;
                    best_t = t;
                    best_j = j as u32;
                }
            }
            cur_e[b] = best_e;
            cur_t[b] = best_t;
            row[b] = best_j;
        }
        std::mem::swap(&mut cur_e, &mut next_e);
        std::mem::swap(&mut cur_t, &mut next_t);
    }

    let mut indices = Vec::with_capacity(n);
    let mut b = cap;
    for k in 0..n {
        let j = choice[k * width + b];
        debug_assert_ne!(j, NONE, "min_total <= budget guarantees a path");
        let j = j as usize;
        indices.push(j);
        b -= quant[k][j];
    }
    let sol = PlanSolution::from_indices(p, indices, true, cells);
    debug_assert!(sol.total_latency_us <= p.qos_us);
    Ok(sol)
}

/// Exact optimum by enumerating every combination against true latencies.
pub fn solve_exhaustive(p: &PlanProblem) -> Result<PlanSolution> {
    let space: u128 = p.classes.iter().map(|c| c.points.len() as u128).product();
    if space > MAX_EXHAUSTIVE {
        return Err(Error::SearchSpaceTooLarge(space));
    }
    let n = p.classes.len();
    let mut idx = vec![0usize; n];
    let mut best: Option<(f64, f64, Vec<usize>)> = None;
    loop {
        let (mut t, mut e) = (0.0, 0.0);
        for (c, &j) in p.classes.iter().zip(&idx) {
            t += c.points[j].latency_us;
            e += c.points[j].energy_uj;
        }
        // Odometer order is lexicographic, so the first of equal optima wins.
        if t <= p.qos_us
            && best.as_ref().is_none_or(|(be, bt, _)| e < *be || (e == *be && t < *bt))
        {
            best = Some((e, t, idx.clone()));
        }
        let mut k = n;
        loop {
            if k == 0 {
                return Ok(match best {
                    Some((_, _, indices)) => PlanSolution::from_indices(p, indices, true, 0),
                    None => PlanSolution::from_indices(p, p.fastest_indices(), false, 0),
                });
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < p.classes[k].points.len() {
                break;
            }
            idx[k] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ClockConfig;
    use crate::cost::{Granularity, LayerKind};
    use proptest::prelude::*;

    fn pt(layer: usize, j: usize, latency: f64, energy: f64) -> OperatingPoint {
        OperatingPoint {
            layer_index: layer,
            g: Granularity::NONE,
            lfo: ClockConfig::hse(50).unwrap(),
            hfo: ClockConfig::pll(50, 25, 75 + j as u32, 2).unwrap(),
            latency_us: latency,
            energy_uj: energy,
            segments: None,
        }
    }

    fn class(layer: usize, pairs: &[(f64, f64)]) -> ParetoSet {
        let points = pairs.iter().enumerate().map(|(j, &(l, e))| pt(layer, j, l, e)).collect();
        ParetoSet::from_sorted(layer, LayerKind::Depthwise, points).unwrap()
    }

    #[test]
    fn single_layer_examples() {
        let c = class(0, &[(10.0, 5.0), (20.0, 3.0)]);
        let tight = solve_dp(&PlanProblem::new(vec![c.clone()], 15.0, 1.0).unwrap()).unwrap();
        assert!(tight.feasible);
        assert_eq!((tight.total_latency_us, tight.total_energy_uj), (10.0, 5.0));
        let loose = solve_dp(&PlanProblem::new(vec![c], 25.0, 1.0).unwrap()).unwrap();
        assert_eq!((loose.total_latency_us, loose.total_energy_uj), (20.0, 3.0));
    }

    #[test]
    fn energy_of_sums() {
        let sel = [pt(0, 0, 10.0, 5.0), pt(1, 0, 20.0, 3.0)];
        assert_eq!(energy_of(&sel), (30.0, 8.0));
        assert_eq!(energy_of(&sel[..1]), (10.0, 5.0));
    }

    #[test]
    fn infeasible_budget_is_flagged() {
        let c = class(0, &[(10.0, 5.0), (20.0, 3.0)]);
        let p = PlanProblem::new(vec![c.clone(), c], 15.0, 1.0).unwrap();
        let sol = solve_dp(&p).unwrap();
        assert!(!sol.feasible);
        assert_eq!(sol.indices, [0, 0]);
        assert_eq!(sol.total_latency_us, 20.0);
        assert!(!solve_exhaustive(&p).unwrap().feasible);
    }

    #[test]
    fn feasibility_boundary_uses_quantized_minima() {
        // 12.5 us rounds up to 2 quanta of 10 us
        let c = class(0, &[(12.5, 5.0), (31.0, 1.0)]);
        let p = PlanProblem::new(vec![c.clone(), c.clone()], 40.0, 10.0).unwrap();
        assert!(solve_dp(&p).unwrap().feasible);
        let p = PlanProblem::new(vec![c.clone(), c], 39.9, 10.0).unwrap();
        assert!(!solve_dp(&p).unwrap().feasible);
    }

    #[test]
    fn ties_prefer_lower_latency_then_lower_index() {
        let a = class(0, &[(1.0, 4.0), (2.0, 3.0)]);
        let b = class(1, &[(1.0, 4.0), (2.0, 3.0)]);
        // (0,1) and (1,0) both cost 7 uJ and 3 us; lexicographic pick is [0, 1]
        let p = PlanProblem::new(vec![a, b], 3.0, 1.0).unwrap();
        let dp = solve_dp(&p).unwrap();
        let ex = solve_exhaustive(&p).unwrap();
        assert_eq!(dp.indices, [0, 1]);
        assert_eq!(ex.indices, [0, 1]);
    }

    #[test]
    fn problem_validation() {
        let c = class(0, &[(10.0, 5.0)]);
        assert!(PlanProblem::new(vec![], 10.0, 1.0).is_err());
        assert!(PlanProblem::new(vec![c.clone()], 0.0, 1.0).is_err());
        assert!(PlanProblem::new(vec![c.clone()], 10.0, 0.0).is_err());
        assert!(PlanProblem::new(vec![c], f64::NAN, 1.0).is_err());
    }

    #[test]
    fn oversized_exhaustive_is_refused() {
        let pairs: Vec<(f64, f64)> = (0..40).map(|i| (1.0 + i as f64, 100.0 - i as f64)).collect();
        let classes: Vec<_> = (0..4).map(|k| class(k, &pairs)).collect();
        let p = PlanProblem::new(classes, 1000.0, 1.0).unwrap();
        assert!(matches!(solve_exhaustive(&p), Err(Error::SearchSpaceTooLarge(_))));
    }

    fn instance() -> impl Strategy<Value = (Vec<Vec<(u32, u32)>>, f64)> {
        let class = prop::collection::vec((1u32..50, 1u32..400), 1..6);
        (prop::collection::vec(class, 1..5), 0.0f64..1.0)
    }

    fn build(raw: &[Vec<(u32, u32)>], frac: f64) -> PlanProblem {
        let classes: Vec<ParetoSet> = raw
            .iter()
            .enumerate()
            .map(|(k, pairs)| {
                let pts: Vec<OperatingPoint> = pairs
                    .iter()
                    .enumerate()
                    .map(|(j, &(l, e))| pt(k, j, l as f64, e as f64 / 8.0))
                    .collect();
                let prof = crate::cost::LayerProfile::new(k, LayerKind::Depthwise, None, pts).unwrap();
                crate::pareto::pareto_front(&prof).unwrap()
            })
            .collect();
        let lo: f64 = classes.iter().map(|c| c.fastest().latency_us).sum();
        let hi: f64 = classes.iter().map(|c| c.points.last().unwrap().latency_us).sum();
        let qos = (lo - 2.0 + frac * (hi - lo + 4.0)).max(0.5);
        PlanProblem::new(classes, qos, 1.0).unwrap()
    }

    proptest! {
        #[test]
        fn dp_matches_exhaustive((raw, frac) in instance()) {
            let p = build(&raw, frac);
            let dp = solve_dp(&p).unwrap();
            let ex = solve_exhaustive(&p).unwrap();
            prop_assert_eq!(dp.feasible, ex.feasible);
            if dp.feasible {
                prop_assert_eq!(dp.total_energy_uj, ex.total_energy_uj);
                prop_assert!(dp.total_latency_us <= p.qos_us());
                prop_assert_eq!(&dp.indices, &ex.indices);
            }
            prop_assert_eq!(dp.selection.len(), p.classes().len());
        }

        #[test]
        fn energy_is_monotone_in_budget((raw, frac) in instance(), extra in 0.0f64..50.0) {
            let p1 = build(&raw, frac);
            let p2 = PlanProblem::new(p1.classes().to_vec(), p1.qos_us() + extra, 1.0).unwrap();
            let s1 = solve_dp(&p1).unwrap();
            let s2 = solve_dp(&p2).unwrap();
            if s1.feasible {
                prop_assert!(s2.feasible);
                prop_assert!(s2.total_energy_uj <= s1.total_energy_uj);
            }
        }
    }
}
