//! SYSCLK generation paths of an STM32-class clock tree.
//!
//! SYSCLK is either wired straight to the HSE oscillator or produced by the
//! PLL from it:
//!
//! ```text
//!   SYSCLK = HSE                          (HseDirect)
//!   VCO    = HSE * PLLN / PLLM
//!   SYSCLK = VCO / PLLP                   (Pll)
//! ```
//!
//! Frequencies are exact rationals in MHz; `PLLM = 50` already yields
//! non-integer values such as 37.5 MHz.

use std::collections::BTreeMap;
use std::fmt;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Supported HSE crystal range in MHz.
pub const HSE_RANGE_MHZ: (u32, u32) = (1, 50);
/// Output dividers the PLL accepts.
pub const VALID_PLLP: [u32; 4] = [2, 4, 6, 8];
/// Crystal used by the reference board.
pub const DEFAULT_HSE_MHZ: u32 = 50;
pub const DEFAULT_PLLM: [u32; 2] = [25, 50];
pub const DEFAULT_PLLN: [u32; 7] = [75, 100, 150, 168, 216, 336, 432];
/// Smallest legal output divider; minimizes VCO frequency for a target SYSCLK.
pub const DEFAULT_PLLP: u32 = 2;

/// Exact frequency in MHz.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Frequency(Ratio<u64>);

impl Frequency {
    pub fn from_mhz(mhz: u64) -> Self {
        Self(Ratio::from_integer(mhz))
    }

    pub fn from_ratio(numer: u64, denom: u64) -> Self {
        Self(Ratio::new(numer, denom))
    }

    pub fn ratio(&self) -> Ratio<u64> {
        self.0
    }

    pub fn mhz(&self) -> f64 {
        *self.0.numer() as f64 / *self.0.denom() as f64
    }

    /// Renders with exactly three decimals, rounding half up.
    pub fn render(&self) -> String {
        let milli = (*self.0.numer() as u128 * 1000 * 2 + *self.0.denom() as u128)
            / (2 * *self.0.denom() as u128);
        format!("{}.{:03}", milli / 1000, milli % 1000)
    }
}

impl fmt::Display for Frequency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockSource {
    HseDirect,
    Pll,
}

/// One SYSCLK configuration. PLL fields are zero for `HseDirect`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawClockConfig", into = "RawClockConfig")]
pub struct ClockConfig {
    source: ClockSource,
    hse_mhz: u32,
    pllm: u32,
    plln: u32,
    pllp: u32,
}

impl ClockConfig {
    pub fn hse(hse_mhz: u32) -> Result<Self> {
        check_hse(hse_mhz)?;
        Ok(Self { source: ClockSource::HseDirect, hse_mhz, pllm: 0, plln: 0, pllp: 0 })
    }

    pub fn pll(hse_mhz: u32, pllm: u32, plln: u32, pllp: u32) -> Result<Self> {
        check_hse(hse_mhz)?;
        if pllm == 0 {
            return Err(Error::InvalidClock("PLLM must be at least 1".into()));
        }
        if plln == 0 {
            return Err(Error::InvalidClock("PLLN must be at least 1".into()));
        }
        if !VALID_PLLP.contains(&pllp) {
            return Err(Error::InvalidClock(format!("PLLP {pllp} is not one of 2, 4, 6, 8")));
        }
        Ok(Self { source: ClockSource::Pll, hse_mhz, pllm, plln, pllp })
    }

    pub fn source(&self) -> ClockSource {
        self.source
    }

    pub fn hse_mhz(&self) -> u32 {
        self.hse_mhz
    }

    pub fn pllm(&self) -> Option<u32> {
        self.is_pll().then_some(self.pllm)
    }

    pub fn plln(&self) -> Option<u32> {
        self.is_pll().then_some(self.plln)
    }

    pub fn pllp(&self) -> Option<u32> {
        self.is_pll().then_some(self.pllp)
    }

    pub fn is_pll(&self) -> bool {
        self.source == ClockSource::Pll
    }

    pub fn frequency(&self) -> Frequency {
        compute_frequency(self)
    }

    /// VCO output frequency; zero when the PLL is bypassed.
    pub fn vco_frequency(&self) -> Frequency {
        match self.source {
            ClockSource::HseDirect => Frequency(Ratio::from_integer(0)),
            ClockSource::Pll => Frequency(Ratio::new(
                self.hse_mhz as u64 * self.plln as u64,
                self.pllm as u64,
            )),
        }
    }

    /// `{hse,pllm,plln}` for PLL configs, `HSE(hse)` otherwise.
    pub fn label(&self) -> String {
        match self.source {
            ClockSource::HseDirect => format!("HSE({})", self.hse_mhz),
            ClockSource::Pll if self.pllp == DEFAULT_PLLP => {
                format!("{{{},{},{}}}", self.hse_mhz, self.pllm, self.plln)
            }
            ClockSource::Pll => {
                format!("{{{},{},{},{}}}", self.hse_mhz, self.pllm, self.plln, self.pllp)
            }
        }
    }
}

impl fmt::Display for ClockConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

fn check_hse(hse_mhz: u32) -> Result<()> {
    if !(HSE_RANGE_MHZ.0..=HSE_RANGE_MHZ.1).contains(&hse_mhz) {
        return Err(Error::InvalidClock(format!("HSE {hse_mhz} MHz outside 1..=50")));
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct RawClockConfig {
    source: ClockSource,
    hse_mhz: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pllm: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    plln: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pllp: Option<u32>,
}

impl TryFrom<RawClockConfig> for ClockConfig {
    type Error = Error;

    fn try_from(raw: RawClockConfig) -> Result<Self> {
        match raw.source {
            ClockSource::HseDirect => ClockConfig::hse(raw.hse_mhz),
            ClockSource::Pll => {
                let (Some(m), Some(n)) = (raw.pllm, raw.plln) else {
                    return Err(Error::InvalidClock("PLL config needs pllm and plln".into()));
                };
                ClockConfig::pll(raw.hse_mhz, m, n, raw.pllp.unwrap_or(DEFAULT_PLLP))
            }
        }
    }
}

impl From<ClockConfig> for RawClockConfig {
    fn from(c: ClockConfig) -> Self {
        RawClockConfig {
            source: c.source,
            hse_mhz: c.hse_mhz,
            pllm: c.pllm(),
            plln: c.plln(),
            pllp: c.pllp(),
        }
    }
}

/// `HSE` for direct wiring, `HSE * PLLN / (PLLM * PLLP)` through the PLL.
pub fn compute_frequency(cfg: &ClockConfig) -> Frequency {
    match cfg.source {
        ClockSource::HseDirect => Frequency::from_mhz(cfg.hse_mhz as u64),
        ClockSource::Pll => Frequency(Ratio::new(
            cfg.hse_mhz as u64 * cfg.plln as u64,
            cfg.pllm as u64 * cfg.pllp as u64,
        )),
    }
}

/// Parameter sets swept by [`enumerate_configs`].
#[derive(Debug, Clone, PartialEq)]
pub struct ClockSweep {
    pub hse_mhz: Vec<u32>,
    pub pllm: Vec<u32>,
    pub plln: Vec<u32>,
    pub pllp: u32,
    /// Inclusive VCO output bounds in MHz. Unbounded when `None`.
    pub vco_bounds: Option<(Frequency, Frequency)>,
    /// Drop configs whose SYSCLK exceeds this ceiling.
    pub max_sysclk: Option<Frequency>,
}

impl Default for ClockSweep {
    fn default() -> Self {
        Self {
            hse_mhz: vec![DEFAULT_HSE_MHZ],
            pllm: DEFAULT_PLLM.to_vec(),
            plln: DEFAULT_PLLN.to_vec(),
            pllp: DEFAULT_PLLP,
            vco_bounds: None,
            max_sysclk: None,
        }
    }
}

/// Cartesian product of the sweep's PLL parameters, each config paired with
/// its frequency, sorted by frequency, then VCO frequency, then
/// (hse, pllm, plln).
pub fn enumerate_configs(sweep: &ClockSweep) -> Result<Vec<(ClockConfig, Frequency)>> {
    let mut out = Vec::new();
    for &hse in dedup(&sweep.hse_mhz).iter() {
        for &m in dedup(&sweep.pllm).iter() {
            for &n in dedup(&sweep.plln).iter() {
                let cfg = ClockConfig::pll(hse, m, n, sweep.pllp)?;
                let f = cfg.frequency();
                if let Some((lo, hi)) = sweep.vco_bounds {
                    let vco = cfg.vco_frequency();
                    if vco < lo || vco > hi {
                        continue;
                    }
                }
                if sweep.max_sysclk.is_some_and(|max| f > max) {
                    continue;
                }
                out.push((cfg, f));
            }
        }
    }
    out.sort_by(|(a, fa), (b, fb)| {
        fa.cmp(fb)
            .then_with(|| a.vco_frequency().cmp(&b.vco_frequency()))
            .then_with(|| (a.hse_mhz, a.pllm, a.plln).cmp(&(b.hse_mhz, b.pllm, b.plln)))
    });
    Ok(out)
}

fn dedup(values: &[u32]) -> Vec<u32> {
    let mut v = values.to_vec();
    v.sort_unstable();
    v.dedup();
    v
}

/// Partitions configs by exact output frequency, preserving input order
/// within each group.
pub fn group_iso_frequency<'a, I>(configs: I) -> BTreeMap<Frequency, Vec<ClockConfig>>
where
    I: IntoIterator<Item = &'a ClockConfig>,
{
    let mut groups: BTreeMap<Frequency, Vec<ClockConfig>> = BTreeMap::new();
    for cfg in configs {
        groups.entry(cfg.frequency()).or_default().push(*cfg);
    }
    groups
}

/// Parametric board power model (milliwatts, MHz).
///
/// Run power is `static + dynamic * SYSCLK + vco_penalty * VCO`, so two
/// iso-frequency configs differ only through their VCO frequency. Idle power
/// with the clock left running is affine in SYSCLK.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerModel {
    pub static_mw: f64,
    pub dynamic_mw_per_mhz: f64,
    pub vco_penalty_mw_per_mhz: f64,
    pub idle_mw_intercept: f64,
    pub idle_mw_slope: f64,
    pub gated_idle_mw: f64,
}

impl Default for PowerModel {
    fn default() -> Self {
        Self {
            static_mw: 20.0,
            dynamic_mw_per_mhz: 0.30,
            vco_penalty_mw_per_mhz: 0.45,
            idle_mw_intercept: 20.0,
            idle_mw_slope: 0.50,
            gated_idle_mw: 8.0,
        }
    }
}

impl PowerModel {
    pub fn power_mw(&self, cfg: &ClockConfig) -> f64 {
        self.static_mw
            + self.dynamic_mw_per_mhz * cfg.frequency().mhz()
            + self.vco_penalty_mw_per_mhz * cfg.vco_frequency().mhz()
    }

    pub fn idle_mw_at(&self, f: Frequency) -> f64 {
        self.idle_mw_intercept + self.idle_mw_slope * f.mhz()
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("static_mw", self.static_mw),
            ("dynamic_mw_per_mhz", self.dynamic_mw_per_mhz),
            ("vco_penalty_mw_per_mhz", self.vco_penalty_mw_per_mhz),
            ("idle_mw_intercept", self.idle_mw_intercept),
            ("idle_mw_slope", self.idle_mw_slope),
            ("gated_idle_mw", self.gated_idle_mw),
        ];
        check_non_negative(&fields)?;
        // Iso-frequency configs must be ordered by VCO frequency.
        if self.vco_penalty_mw_per_mhz <= 0.0 {
            return Err(Error::InvalidCalibration(
                "vco_penalty_mw_per_mhz must be strictly positive".into(),
            ));
        }
        Ok(())
    }
}

/// Cost of changing the SYSCLK source or PLL parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwitchCostModel {
    /// PLL restart and relock.
    pub pll_reconfigure_us: f64,
    /// Selecting the directly wired HSE.
    pub to_hse_us: f64,
    pub switch_power_mw: f64,
}

impl Default for SwitchCostModel {
    fn default() -> Self {
        Self { pll_reconfigure_us: 200.0, to_hse_us: 0.0, switch_power_mw: 60.0 }
    }
}

impl SwitchCostModel {
    pub fn zero() -> Self {
        Self { pll_reconfigure_us: 0.0, to_hse_us: 0.0, switch_power_mw: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        check_non_negative(&[
            ("pll_reconfigure_us", self.pll_reconfigure_us),
            ("to_hse_us", self.to_hse_us),
            ("switch_power_mw", self.switch_power_mw),
        ])?;
        if self.pll_reconfigure_us < self.to_hse_us {
            return Err(Error::InvalidCalibration(
                "pll_reconfigure_us must be at least to_hse_us".into(),
            ));
        }
        Ok(())
    }
}

fn check_non_negative(fields: &[(&str, f64)]) -> Result<()> {
    for (name, v) in fields {
        if !v.is_finite() || *v < 0.0 {
            return Err(Error::InvalidCalibration(format!("{name} must be a non-negative number")));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SwitchCost {
    pub latency_us: f64,
    pub energy_uj: f64,
}

/// Identical configs cost nothing; selecting HSE costs `to_hse_us`; any other
/// move onto the PLL restarts it.
pub fn switch_cost(from: &ClockConfig, to: &ClockConfig, scm: &SwitchCostModel) -> SwitchCost {
    let latency_us = if from == to {
        0.0
    } else {
        match to.source {
            ClockSource::HseDirect => scm.to_hse_us,
            ClockSource::Pll => scm.pll_reconfigure_us,
        }
    };
    SwitchCost { latency_us, energy_uj: latency_us * scm.switch_power_mw / 1000.0 }
}

/// Lowest-power config generating `frequency` among `configs`. Ties go to
/// the lower VCO frequency, then the smaller PLLN.
pub fn min_power_config(
    frequency: Frequency,
    configs: &[ClockConfig],
    pm: &PowerModel,
) -> Result<ClockConfig> {
    configs
        .iter()
        .filter(|c| c.frequency() == frequency)
        .min_by(|a, b| {
            pm.power_mw(a)
                .total_cmp(&pm.power_mw(b))
                .then_with(|| a.vco_frequency().cmp(&b.vco_frequency()))
                .then_with(|| a.plln.cmp(&b.plln))
                .then_with(|| (a.hse_mhz, a.pllm, a.pllp).cmp(&(b.hse_mhz, b.pllm, b.pllp)))
        })
        .copied()
        .ok_or(Error::NoConfig(frequency))
}

/// Power and switch-cost parameters plus the memory-bound frequency ceiling.
///
/// Serialized flat:
/// `{"static_mw": .., "dynamic_mw_per_mhz": .., "vco_penalty_mw_per_mhz": ..,
///   "idle_mw_intercept": .., "idle_mw_slope": .., "gated_idle_mw": ..,
///   "pll_reconfigure_us": .., "to_hse_us": .., "switch_power_mw": ..}`
/// with an optional `mem_ceiling_mhz` (default 50).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    #[serde(flatten)]
    pub power: PowerModel,
    #[serde(flatten)]
    pub switching: SwitchCostModel,
    #[serde(default = "default_mem_ceiling")]
    pub mem_ceiling_mhz: f64,
}

fn default_mem_ceiling() -> f64 {
    50.0
}

impl Default for Calibration {
    fn default() -> Self {
        Self {
            power: PowerModel::default(),
            switching: SwitchCostModel::default(),
            mem_ceiling_mhz: default_mem_ceiling(),
        }
    }
}

impl Calibration {
    pub fn validate(&self) -> Result<()> {
        self.power.validate()?;
        self.switching.validate()?;
        if !self.mem_ceiling_mhz.is_finite() || self.mem_ceiling_mhz <= 0.0 {
            return Err(Error::InvalidCalibration("mem_ceiling_mhz must be positive".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cal: Calibration = serde_json::from_str(text)
            .map_err(|e| Error::InvalidCalibration(e.to_string()))?;
        cal.validate()?;
        Ok(cal)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("calibration serializes")
    }
}
