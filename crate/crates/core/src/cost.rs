//! Per-layer (latency, energy) operating points.
//!
//! A decoupled layer with granularity `g > 0` runs `ceil(units / g)`
//! iterations, each of which drops to the LFO clock for a memory-bound
//! fetch of `g` channels (depthwise) or columns (pointwise), then returns
//! to the HFO clock to compute on the buffered data. `g = 0` is the
//! untouched kernel running entirely at the HFO clock.
//!
//! Points come either from measurements ([`parse_profiles`]) or from the
//! analytic model in [`synthesize_point`].

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clock::{switch_cost, Calibration, ClockConfig, ClockSource, DEFAULT_PLLP};
use crate::error::{Error, Result};

pub const GRANULARITIES: [u32; 6] = [0, 2, 4, 8, 12, 16];

/// Decoupling granularity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct Granularity(u32);

impl Granularity {
    pub const NONE: Granularity = Granularity(0);

    pub fn new(g: u32) -> Result<Self> {
        if GRANULARITIES.contains(&g) {
            Ok(Self(g))
        } else {
            Err(Error::InvalidGranularity(g))
        }
    }

    pub fn get(self) -> u32 {
        self.0
    }

    pub fn is_decoupled(self) -> bool {
        self.0 > 0
    }

    pub fn all() -> impl Iterator<Item = Granularity> {
        GRANULARITIES.into_iter().map(Granularity)
    }
}

impl TryFrom<u32> for Granularity {
    type Error = Error;

    fn try_from(g: u32) -> Result<Self> {
        Granularity::new(g)
    }
}

impl From<Granularity> for u32 {
    fn from(g: Granularity) -> u32 {
        g.0
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LayerKind {
    #[serde(rename = "dw")]
    Depthwise,
    #[serde(rename = "pw")]
    Pointwise,
    #[serde(rename = "other")]
    Other,
}

impl LayerKind {
    pub fn admits_decoupling(self) -> bool {
        matches!(self, LayerKind::Depthwise | LayerKind::Pointwise)
    }

    pub fn tag(self) -> &'static str {
        match self {
            LayerKind::Depthwise => "dw",
            LayerKind::Pointwise => "pw",
            LayerKind::Other => "other",
        }
    }
}

/// Compute-segment slowdown per granularity. Entries are `>= 1`; the
/// default dips after g=2 and climbs again as buffers outgrow the cache.
/// A table read from JSON overrides only the entries it lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "BTreeMap<u32, f64>", into = "BTreeMap<u32, f64>")]
pub struct DaeOverhead(BTreeMap<u32, f64>);

impl From<BTreeMap<u32, f64>> for DaeOverhead {
    fn from(entries: BTreeMap<u32, f64>) -> Self {
        let mut table = DaeOverhead::default();
        table.0.extend(entries);
        table
    }
}

impl From<DaeOverhead> for BTreeMap<u32, f64> {
    fn from(table: DaeOverhead) -> Self {
        table.0
    }
}

impl Default for DaeOverhead {
    fn default() -> Self {
        Self(BTreeMap::from([
            (0, 1.00),
            (2, 1.08),
            (4, 1.04),
            (8, 1.02),
            (12, 1.03),
            (16, 1.06),
        ]))
    }
}

impl DaeOverhead {
    pub fn from_entries(entries: impl IntoIterator<Item = (u32, f64)>) -> Result<Self> {
        let table = DaeOverhead::from(entries.into_iter().collect::<BTreeMap<_, _>>());
        table.validate()?;
        Ok(table)
    }

    pub fn uniform(multiplier: f64) -> Self {
        Self(GRANULARITIES.iter().map(|&g| (g, multiplier)).collect())
    }

    pub fn multiplier(&self, g: Granularity) -> f64 {
        self.0.get(&g.get()).copied().unwrap_or(1.0)
    }

    fn validate(&self) -> Result<()> {
        for (&g, &m) in &self.0 {
            Granularity::new(g)?;
            if !m.is_finite() || m < 1.0 {
                return Err(Error::InvalidPoint(format!("overhead multiplier for g={g} must be >= 1")));
            }
        }
        Ok(())
    }
}

/// One network layer as seen by the cost model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub index: usize,
    pub kind: LayerKind,
    pub channels: u32,
    /// (h, w) of the input feature map.
    pub spatial: (u32, u32),
    pub kernel: (u32, u32),
    /// Compute-bound cycles of the undecoupled kernel.
    pub work_cycles: u64,
    /// Memory-bound cycles of the undecoupled kernel.
    pub mem_cycles: u64,
    #[serde(default)]
    pub dae_overhead: DaeOverhead,
}

impl LayerSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |reason: &str| Error::InvalidLayer { index: self.index, reason: reason.into() };
        if self.work_cycles == 0 || self.mem_cycles == 0 {
            return Err(fail("work_cycles and mem_cycles must be positive"));
        }
        if self.channels == 0 || self.spatial.0 == 0 || self.spatial.1 == 0 {
            return Err(fail("channels and spatial dimensions must be positive"));
        }
        self.dae_overhead.validate()
    }

    /// Units fetched per memory phase: channels for depthwise, columns
    /// (one element per input channel) for pointwise.
    pub fn decoupling_units(&self) -> Option<u32> {
        match self.kind {
            LayerKind::Depthwise => Some(self.channels),
            LayerKind::Pointwise => Some(self.spatial.0 * self.spatial.1),
            LayerKind::Other => None,
        }
    }

    /// LFO/HFO iterations at granularity `g`; zero for `g = 0`.
    pub fn iterations(&self, g: Granularity) -> Result<u32> {
        if !g.is_decoupled() {
            return Ok(0);
        }
        let units = self
            .decoupling_units()
            .ok_or(Error::UnsupportedGranularity { layer: self.index, g: g.get() })?;
        Ok(units.div_ceil(g.get()))
    }
}

/// Time split of a synthesized point, replayed by the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentPlan {
    /// LFO/HFO iterations; zero when the layer is not decoupled.
    pub iterations: u32,
    /// Total memory-bound time at the LFO clock.
    pub mem_us: f64,
    /// Total time at the HFO clock.
    pub compute_us: f64,
}

/// One (layer, g, HFO) choice and its cost, intra-layer switches included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub layer_index: usize,
    pub g: Granularity,
    pub lfo: ClockConfig,
    pub hfo: ClockConfig,
    pub latency_us: f64,
    pub energy_uj: f64,
    /// Present for synthesized points; measured points carry totals only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segments: Option<SegmentPlan>,
}

impl OperatingPoint {
    pub fn validate(&self) -> Result<()> {
        let fail = |r: String| Err(Error::InvalidPoint(format!("layer {}: {r}", self.layer_index)));
        if !(self.latency_us.is_finite() && self.latency_us > 0.0) {
            return fail(format!("latency_us {} must be positive", self.latency_us));
        }
        if !(self.energy_uj.is_finite() && self.energy_uj > 0.0) {
            return fail(format!("energy_uj {} must be positive", self.energy_uj));
        }
        if self.lfo.source() != ClockSource::HseDirect {
            return fail("LFO must be the direct HSE clock".into());
        }
        if self.g.is_decoupled() && !self.hfo.is_pll() {
            return fail("decoupled points need a PLL-generated HFO".into());
        }
        Ok(())
    }

    /// Config in effect when the layer starts.
    pub fn entry_config(&self) -> ClockConfig {
        if self.g.is_decoupled() {
            self.lfo
        } else {
            self.hfo
        }
    }

    /// Average power over the layer in milliwatts.
    pub fn average_power_mw(&self) -> f64 {
        self.energy_uj * 1000.0 / self.latency_us
    }
}

/// Operating points of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerProfile {
    pub layer_index: usize,
    pub kind: LayerKind,
    /// Known for synthesized profiles only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<LayerSpec>,
    pub points: Vec<OperatingPoint>,
}

impl LayerProfile {
    pub fn new(
        layer_index: usize,
        kind: LayerKind,
        spec: Option<LayerSpec>,
        points: Vec<OperatingPoint>,
    ) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyProfile(layer_index));
        }
        let mut keys = std::collections::HashSet::new();
        for p in &points {
            p.validate()?;
            if p.layer_index != layer_index {
                return Err(Error::InvalidPoint(format!(
                    "point for layer {} in profile of layer {layer_index}",
                    p.layer_index
                )));
            }
            if p.g.is_decoupled() && !kind.admits_decoupling() {
                return Err(Error::UnsupportedGranularity { layer: layer_index, g: p.g.get() });
            }
            if !keys.insert((p.g, p.hfo)) {
                return Err(Error::InvalidPoint(format!(
                    "layer {layer_index}: duplicate point g={} hfo={}",
                    p.g, p.hfo
                )));
            }
        }
        Ok(Self { layer_index, kind, spec, points })
    }
}

/// Analytic cost of running `layer` at granularity `g` with the given clocks.
///
/// Memory-bound time runs at `min(f_lfo, mem_ceiling_mhz)`; compute time is
/// `work_cycles * overhead[g] / f_hfo`. Every iteration pays one HFO->LFO
/// and one LFO->HFO switch.
pub fn synthesize_point(
    layer: &LayerSpec,
    g: Granularity,
    lfo: &ClockConfig,
    hfo: &ClockConfig,
    cal: &Calibration,
) -> Result<OperatingPoint> {
    if lfo.source() != ClockSource::HseDirect {
        return Err(Error::InvalidClock(format!("LFO {lfo} must be the direct HSE clock")));
    }
    if !hfo.is_pll() {
        return Err(Error::InvalidClock(format!("HFO {hfo} must be PLL-generated")));
    }
    let pm = &cal.power;
    let f_hfo = hfo.frequency().mhz();
    let iterations = layer.iterations(g)?;

    let (latency_us, energy_uj, plan) = if iterations == 0 {
        let compute_us = (layer.mem_cycles + layer.work_cycles) as f64 / f_hfo;
        let energy = compute_us * pm.power_mw(hfo) / 1000.0;
        (compute_us, energy, SegmentPlan { iterations: 0, mem_us: 0.0, compute_us })
    } else {
        let f_mem = lfo.frequency().mhz().min(cal.mem_ceiling_mhz);
        let mem_us = layer.mem_cycles as f64 / f_mem;
        let compute_us = layer.work_cycles as f64 * layer.dae_overhead.multiplier(g) / f_hfo;
        let down = switch_cost(hfo, lfo, &cal.switching);
        let up = switch_cost(lfo, hfo, &cal.switching);
        let s = iterations as f64;
        let latency = mem_us + compute_us + s * (down.latency_us + up.latency_us);
        let energy = (mem_us * pm.power_mw(lfo) + compute_us * pm.power_mw(hfo)) / 1000.0
            + s * (down.energy_uj + up.energy_uj);
        (latency, energy, SegmentPlan { iterations, mem_us, compute_us })
    };

    let point = OperatingPoint {
        layer_index: layer.index,
        g,
        lfo: *lfo,
        hfo: *hfo,
        latency_us,
        energy_uj,
        segments: Some(plan),
    };
    point.validate()?;
    Ok(point)
}

/// Full sweep of `g_set x hfo_set` per layer. Layers that cannot be
/// decoupled only get `g = 0` points.
pub fn build_profile_grid(
    layers: &[LayerSpec],
    g_set: &[Granularity],
    hfo_set: &[ClockConfig],
    lfo: &ClockConfig,
    cal: &Calibration,
) -> Result<Vec<LayerProfile>> {
    let mut gs = g_set.to_vec();
    gs.sort();
    gs.dedup();
    layers
        .iter()
        .map(|layer| {
            layer.validate()?;
            let mut points = Vec::with_capacity(gs.len() * hfo_set.len());
            for &g in gs.iter().filter(|g| !g.is_decoupled() || layer.kind.admits_decoupling()) {
                for hfo in hfo_set {
                    points.push(synthesize_point(layer, g, lfo, hfo, cal)?);
                }
            }
            LayerProfile::new(layer.index, layer.kind, Some(layer.clone()), points)
        })
        .collect()
}

/// Parses a network description (JSON list of layers), sorted by index.
pub fn parse_network(text: &str) -> Result<Vec<LayerSpec>> {
    let mut layers: Vec<LayerSpec> = serde_json::from_str(text)?;
    layers.sort_by_key(|l| l.index);
    for w in layers.windows(2) {
        if w[0].index == w[1].index {
            return Err(Error::InvalidLayer { index: w[0].index, reason: "duplicate index".into() });
        }
    }
    for l in &layers {
        l.validate()?;
    }
    if layers.is_empty() {
        return Err(Error::InvalidLayer { index: 0, reason: "network has no layers".into() });
    }
    Ok(layers)
}

pub fn load_network(path: impl AsRef<Path>) -> Result<Vec<LayerSpec>> {
    parse_network(&std::fs::read_to_string(path)?)
}

/// Scales each layer's cycle counts by an independent factor drawn
/// uniformly from `[1 - pct/100, 1 + pct/100]`.
pub fn jitter_layers(layers: &[LayerSpec], pct: f64, seed: u64) -> Vec<LayerSpec> {
    if pct <= 0.0 {
        return layers.to_vec();
    }
    let spread = (pct / 100.0).min(0.95);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    layers
        .iter()
        .map(|l| {
            let mut l = l.clone();
            let fw: f64 = 1.0 + rng.random_range(-spread..=spread);
            let fm: f64 = 1.0 + rng.random_range(-spread..=spread);
            l.work_cycles = ((l.work_cycles as f64 * fw).round() as u64).max(1);
            l.mem_cycles = ((l.mem_cycles as f64 * fm).round() as u64).max(1);
            l
        })
        .collect()
}

/// One JSON Lines record of a profile file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileRow {
    pub layer: usize,
    pub kind: LayerKind,
    pub g: u32,
    pub hse_mhz: u32,
    pub pllm: Option<u32>,
    pub plln: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pllp: Option<u32>,
    pub latency_us: f64,
    pub energy_uj: f64,
}

impl ProfileRow {
    pub fn from_point(kind: LayerKind, p: &OperatingPoint) -> Self {
        let pllp = p.hfo.pllp().filter(|&pp| pp != DEFAULT_PLLP);
        Self {
            layer: p.layer_index,
            kind,
            g: p.g.get(),
            hse_mhz: p.hfo.hse_mhz(),
            pllm: p.hfo.pllm(),
            plln: p.hfo.plln(),
            pllp,
            latency_us: p.latency_us,
            energy_uj: p.energy_uj,
        }
    }

    fn into_point(self) -> std::result::Result<(LayerKind, OperatingPoint), String> {
        let g = Granularity::new(self.g).map_err(|e| e.to_string())?;
        if g.is_decoupled() && !self.kind.admits_decoupling() {
            return Err(format!("g={} on a layer of kind {}", self.g, self.kind.tag()));
        }
        let lfo = ClockConfig::hse(self.hse_mhz).map_err(|e| e.to_string())?;
        let hfo = match (self.pllm, self.plln) {
            (Some(m), Some(n)) => ClockConfig::pll(self.hse_mhz, m, n, self.pllp.unwrap_or(DEFAULT_PLLP))
                .map_err(|e| e.to_string())?,
            (None, None) => lfo,
            _ => return Err("pllm and plln must both be set or both be null".into()),
        };
        let point = OperatingPoint {
            layer_index: self.layer,
            g,
            lfo,
            hfo,
            latency_us: self.latency_us,
            energy_uj: self.energy_uj,
            segments: None,
        };
        point.validate().map_err(|e| e.to_string())?;
        Ok((self.kind, point))
    }
}

/// Parses a JSON Lines profile file. Latencies and energies are taken as
/// including intra-layer switches. Identical repeated rows collapse; rows
/// repeating a (layer, g, hfo) key with different values are rejected.
/// Line numbers in errors are 1-based.
pub fn parse_profiles(text: &str) -> Result<Vec<LayerProfile>> {
    let mut layers: BTreeMap<usize, (LayerKind, Vec<OperatingPoint>)> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let row: ProfileRow = serde_json::from_str(raw)
            .map_err(|e| Error::Parse { line, reason: e.to_string() })?;
        let (kind, point) = row.into_point().map_err(|reason| Error::Parse { line, reason })?;
        let (layer_kind, points) = layers.entry(point.layer_index).or_insert((kind, Vec::new()));
        if *layer_kind != kind {
            return Err(Error::Parse {
                line,
                reason: format!(
                    "layer {} declared as {} and {}",
                    point.layer_index,
                    layer_kind.tag(),
                    kind.tag()
                ),
            });
        }
        match points.iter().find(|p| p.g == point.g && p.hfo == point.hfo) {
            Some(existing) if *existing == point => {}
            Some(_) => {
                return Err(Error::Conflict {
                    line,
                    layer: point.layer_index,
                    g: point.g.get(),
                    hfo: point.hfo.label(),
                })
            }
            None => points.push(point),
        }
    }
    layers
        .into_iter()
        .map(|(index, (kind, points))| LayerProfile::new(index, kind, None, points))
        .collect()
}

pub fn ingest_profiles(path: impl AsRef<Path>) -> Result<Vec<LayerProfile>> {
    parse_profiles(&std::fs::read_to_string(path)?)
}

/// Serializes profiles as JSON Lines, one point per line.
pub fn write_profiles(profiles: &[LayerProfile]) -> String {
    let mut out = String::new();
    for profile in profiles {
        for p in &profile.points {
            let row = ProfileRow::from_point(profile.kind, p);
            out.push_str(&serde_json::to_string(&row).expect("row serializes"));
            out.push('\n');
        }
    }
    out
}
