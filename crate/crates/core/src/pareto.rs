//! Latency/energy Pareto frontiers of layer profiles.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::cost::{LayerKind, LayerProfile, OperatingPoint};
use crate::error::{Error, Result};

/// Non-dominated points of one layer, by ascending latency. Energy is
/// strictly decreasing along the list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoSet {
    pub layer_index: usize,
    pub kind: LayerKind,
    pub points: Vec<OperatingPoint>,
}

impl ParetoSet {
    /// Wraps points that already form a strict frontier.
    pub fn from_sorted(layer_index: usize, kind: LayerKind, points: Vec<OperatingPoint>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyProfile(layer_index));
        }
        for w in points.windows(2) {
            if !(w[0].latency_us < w[1].latency_us && w[0].energy_uj > w[1].energy_uj) {
                return Err(Error::InvalidPoint(format!(
                    "layer {layer_index}: points are not a strict frontier"
                )));
            }
        }
        Ok(Self { layer_index, kind, points })
    }

    /// Fastest point (the head of the list).
    pub fn fastest(&self) -> &OperatingPoint {
        &self.points[0]
    }
}

/// Preference between points with identical latency and energy: smaller g,
/// then lower HFO frequency, then the remaining PLL fields.
pub fn duplicate_order(a: &OperatingPoint, b: &OperatingPoint) -> Ordering {
    a.g.cmp(&b.g)
        .then_with(|| a.hfo.frequency().cmp(&b.hfo.frequency()))
        .then_with(|| {
            (a.hfo.hse_mhz(), a.hfo.pllm(), a.hfo.plln(), a.hfo.pllp())
                .cmp(&(b.hfo.hse_mhz(), b.hfo.pllm(), b.hfo.plln(), b.hfo.pllp()))
        })
}

/// Indices of the strict frontier of `points`, ordered by ascending latency.
///
/// Sorts by (latency, energy, `tie`) and keeps each point whose energy is
/// strictly below everything kept so far.
pub fn frontier_indices<T>(
    points: &[T],
    key: impl Fn(&T) -> (f64, f64),
    tie: impl Fn(&T, &T) -> Ordering,
) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&i, &j| {
        let (li, ei) = key(&points[i]);
        let (lj, ej) = key(&points[j]);
        li.total_cmp(&lj)
            .then_with(|| ei.total_cmp(&ej))
            .then_with(|| tie(&points[i], &points[j]))
    });
    let mut kept = Vec::new();
    let mut best = f64::INFINITY;
    for i in order {
        let (_, e) = key(&points[i]);
        if e < best {
            best = e;
            kept.push(i);
        }
    }
    kept
}

pub fn pareto_front(profile: &LayerProfile) -> Result<ParetoSet> {
    if profile.points.is_empty() {
        return Err(Error::EmptyProfile(profile.layer_index));
    }
    let idx = frontier_indices(&profile.points, |p| (p.latency_us, p.energy_uj), duplicate_order);
    Ok(ParetoSet {
        layer_index: profile.layer_index,
        kind: profile.kind,
        points: idx.into_iter().map(|i| profile.points[i].clone()).collect(),
    })
}

pub fn pareto_front_all(profiles: &[LayerProfile]) -> Result<Vec<ParetoSet>> {
    profiles.iter().map(pareto_front).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ClockConfig;
    use crate::cost::Granularity;
    use proptest::prelude::*;

    fn point(i: usize, latency: f64, energy: f64) -> OperatingPoint {
        OperatingPoint {
            layer_index: 0,
            g: Granularity::NONE,
            lfo: ClockConfig::hse(50).unwrap(),
            hfo: ClockConfig::pll(1 + (i % 50) as u32, 1, 1 + (i / 50) as u32, 2).unwrap(),
            latency_us: latency,
            energy_uj: energy,
            segments: None,
        }
    }

    fn profile(pairs: &[(f64, f64)]) -> LayerProfile {
        let points = pairs.iter().enumerate().map(|(i, &(l, e))| point(i, l, e)).collect();
        LayerProfile::new(0, LayerKind::Depthwise, None, points).unwrap()
    }

    fn values(set: &ParetoSet) -> Vec<(f64, f64)> {
        set.points.iter().map(|p| (p.latency_us, p.energy_uj)).collect()
    }

    /// Pairwise dominance filter, then one survivor per duplicate group.
    fn naive(points: &[OperatingPoint]) -> Vec<OperatingPoint> {
        let dominates = |p: &OperatingPoint, q: &OperatingPoint| {
            p.latency_us <= q.latency_us
                && p.energy_uj <= q.energy_uj
                && (p.latency_us < q.latency_us || p.energy_uj < q.energy_uj)
        };
        let mut out: Vec<OperatingPoint> = Vec::new();
        for q in points {
            if points.iter().any(|p| dominates(p, q)) {
                continue;
            }
            let shadowed = points.iter().any(|p| {
                p.latency_us == q.latency_us
                    && p.energy_uj == q.energy_uj
                    && duplicate_order(p, q) == Ordering::Less
            });
            if !shadowed {
                out.push(q.clone());
            }
        }
        out.sort_by(|a, b| a.latency_us.total_cmp(&b.latency_us));
        out
    }

    #[test]
    fn small_examples() {
        let set = pareto_front(&profile(&[(10.0, 5.0), (12.0, 4.0), (11.0, 6.0)])).unwrap();
        assert_eq!(values(&set), [(10.0, 5.0), (12.0, 4.0)]);

        let set = pareto_front(&profile(&[(3.0, 3.0)])).unwrap();
        assert_eq!(values(&set), [(3.0, 3.0)]);

        let set = pareto_front(&profile(&[(3.0, 3.0); 5])).unwrap();
        assert_eq!(set.points.len(), 1);
        assert_eq!(set.points[0].hfo, point(0, 0.0, 0.0).hfo);
    }

    #[test]
    fn duplicates_prefer_smaller_g() {
        let mut a = point(0, 5.0, 5.0);
        a.g = Granularity::new(8).unwrap();
        let b = point(0, 5.0, 5.0);
        let p = LayerProfile::new(0, LayerKind::Depthwise, None, vec![a, b]).unwrap();
        assert_eq!(pareto_front(&p).unwrap().points[0].g, Granularity::NONE);
    }

    #[test]
    fn empty_profile_is_rejected() {
        let p = LayerProfile { layer_index: 3, kind: LayerKind::Other, spec: None, points: vec![] };
        assert!(matches!(pareto_front(&p), Err(Error::EmptyProfile(3))));
    }

    #[test]
    fn from_sorted_checks_strictness() {
        let ok = vec![point(0, 1.0, 3.0), point(1, 2.0, 2.0)];
        assert!(ParetoSet::from_sorted(0, LayerKind::Other, ok).is_ok());
        let flat = vec![point(0, 1.0, 3.0), point(1, 2.0, 3.0)];
        assert!(ParetoSet::from_sorted(0, LayerKind::Other, flat).is_err());
    }

    fn cloud() -> impl Strategy<Value = Vec<(f64, f64)>> {
        prop::collection::vec((1u32..60, 1u32..60), 1..120)
            .prop_map(|v| v.into_iter().map(|(l, e)| (l as f64, e as f64)).collect())
    }

    proptest! {
        #[test]
        fn matches_naive_filter(pairs in cloud()) {
            let p = profile(&pairs);
            let set = pareto_front(&p).unwrap();
            prop_assert_eq!(&set.points, &naive(&p.points));
            for w in set.points.windows(2) {
                prop_assert!(w[0].latency_us < w[1].latency_us);
                prop_assert!(w[0].energy_uj > w[1].energy_uj);
            }
        }

        #[test]
        fn idempotent(pairs in cloud()) {
            let once = pareto_front(&profile(&pairs)).unwrap();
            let again = LayerProfile::new(0, LayerKind::Depthwise, None, once.points.clone()).unwrap();
            prop_assert_eq!(pareto_front(&again).unwrap(), once);
        }

        #[test]
        fn permutation_invariant(pairs in cloud(), seed in any::<u64>()) {
            let p = profile(&pairs);
            let mut shuffled = p.clone();
            let n = shuffled.points.len();
            let mut s = seed;
            for i in (1..n).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                shuffled.points.swap(i, (s >> 33) as usize % (i + 1));
            }
            prop_assert_eq!(pareto_front(&shuffled).unwrap(), pareto_front(&p).unwrap());
        }

        #[test]
        fn scale_invariant(pairs in cloud(), a in 1u32..8, b in 1u32..8) {
            let p = profile(&pairs);
            let mut scaled = p.clone();
            for q in &mut scaled.points {
                q.latency_us *= a as f64 * 0.25;
                q.energy_uj *= b as f64 * 3.0;
            }
            let keys = |s: &ParetoSet| s.points.iter().map(|q| (q.g, q.hfo)).collect::<Vec<_>>();
            prop_assert_eq!(keys(&pareto_front(&scaled).unwrap()), keys(&pareto_front(&p).unwrap()));
        }
    }
}
