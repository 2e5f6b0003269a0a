//! Data files shipped with the crate.

use crate::clock::Calibration;
use crate::cost::{parse_network, parse_profiles, LayerProfile, LayerSpec};

/// 20-layer MobileNet-style network.
pub const NETWORK_20: &str = include_str!("../fixtures/network20.json");
/// Default calibration, identical to `Calibration::default()`.
pub const CALIBRATION: &str = include_str!("../fixtures/calibration.json");
/// Small measured profile: three layers.
pub const PROFILES_3: &str = include_str!("../fixtures/profiles3.jsonl");

pub fn network20() -> Vec<LayerSpec> {
    parse_network(NETWORK_20).expect("shipped network parses")
}

pub fn calibration() -> Calibration {
    Calibration::from_json(CALIBRATION).expect("shipped calibration parses")
}

pub fn profiles3() -> Vec<LayerProfile> {
    parse_profiles(PROFILES_3).expect("shipped profiles parse")
}
