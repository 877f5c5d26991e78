//! User-facing run configuration in presentation units.
//!
//! The JSON config (and every emitted sidecar) mirrors the scenario fields but
//! carries human units: meters and seconds throughout, km/h for the initial
//! speed, dBm for powers, dB for the Rician factor. A run always executes
//! through [`RunSpec::to_scenario`], so feeding a sidecar back as `--config`
//! reproduces the original run bit for bit.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::str::FromStr;

use v2itrack_core::channel::{db_to_linear, dbm_to_watts, RadioParams};
use v2itrack_core::ekf::{CombinerStrategy, MotionModel};
use v2itrack_core::geometry::NetworkGeometry;
use v2itrack_core::selection::{MetricKind, SelectionPolicy};
use v2itrack_core::sim::{self, Scenario, TrackerKind};

/// Road/array geometry in meters.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GeometrySpec {
    /// Longitudinal RSU spacing: RSUs 2 and 3 sit at x = −X and +X.
    #[serde(rename = "X")]
    pub x_spacing: f64,
    /// Lateral offset of RSU 1 from the far roadside.
    #[serde(rename = "Y")]
    pub y_offset: f64,
    /// Array mounting height.
    pub h: f64,
    /// Vehicle lane's lateral position.
    pub y: f64,
}

/// Radio parameters; powers in dBm, the Rician factor in dB.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RadioSpec {
    #[serde(rename = "M")]
    pub m: usize,
    pub carrier_freq_hz: f64,
    pub bandwidth_hz: f64,
    pub tx_power_dbm: f64,
    pub noise_power_dbm: f64,
    pub pathloss_exp: f64,
    pub rician_k_db: f64,
}

/// Motion model in SI units.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MotionSpec {
    /// Sounding interval (s).
    #[serde(rename = "Ts")]
    pub ts: f64,
    /// Unmodeled-acceleration scale (m/s²).
    pub sigma_alpha: f64,
    /// Additive state-noise scale (m/s per step).
    pub sigma_omega: f64,
}

/// Selection policy: metric name, threshold, and the map-reference variance.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PolicySpec {
    /// "snr" or "sanr".
    pub metric: String,
    pub tau_th: f64,
    /// Reference (Q̂)₁,₁ for precomputed SANR maps (m²).
    pub q11_ref: f64,
}

/// Complete run configuration; the sidecar serializes exactly this.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunSpec {
    pub geometry: GeometrySpec,
    pub radio: RadioSpec,
    pub motion: MotionSpec,
    /// Initial longitudinal position (m).
    pub x0: f64,
    /// Initial speed (km/h).
    pub v0_kmh: f64,
    /// Tracked duration (s).
    pub duration: f64,
    pub policy: PolicySpec,
    /// Tracker name: fixed:<1|2|3>, snr, sanr, snr-joint, sanr-joint, full.
    pub tracker: String,
    /// Combiner strategy: conjugate-beam or monopulse-dither.
    pub strategy: String,
    pub trials: u32,
    pub master_seed: u64,
    /// Provenance block written by the CLI; ignored on input.
    #[serde(rename = "_meta", default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<Value>,
}

/// Rounds presentation values recovered through logarithms/unit factors so
/// that round numbers (23 dBm, 60 km/h) survive the inversion exactly.
fn round9(v: f64) -> f64 {
    (v * 1e9).round() / 1e9
}

fn watts_to_dbm(w: f64) -> f64 {
    10.0 * (w / 1e-3).log10()
}

fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

impl RunSpec {
    /// Presentation-unit view of a scenario.
    pub fn from_scenario(sc: &Scenario) -> Self {
        RunSpec {
            geometry: GeometrySpec {
                x_spacing: sc.geometry.x_spacing,
                y_offset: sc.geometry.y_offset,
                h: sc.geometry.height,
                y: sc.geometry.lane_y,
            },
            radio: RadioSpec {
                m: sc.radio.m,
                carrier_freq_hz: sc.radio.carrier_freq,
                bandwidth_hz: sc.radio.bandwidth,
                tx_power_dbm: round9(watts_to_dbm(sc.radio.tx_power)),
                noise_power_dbm: round9(watts_to_dbm(sc.radio.noise_power)),
                pathloss_exp: sc.radio.pathloss_exp,
                rician_k_db: round9(linear_to_db(sc.radio.rician_k)),
            },
            motion: MotionSpec {
                ts: sc.motion.ts,
                sigma_alpha: sc.motion.sigma_alpha,
                sigma_omega: sc.motion.sigma_omega,
            },
            x0: sc.x0,
            v0_kmh: round9(sc.v0 * 3.6),
            duration: sc.duration,
            policy: PolicySpec {
                metric: sc.policy.kind.to_string(),
                tau_th: sc.policy.tau_th,
                q11_ref: sc.policy.q11_ref,
            },
            tracker: sc.tracker.as_string(),
            strategy: sc.strategy.to_string(),
            trials: sc.trials,
            master_seed: sc.master_seed,
            meta: None,
        }
    }

    /// Resolves a named experiment preset to its presentation-unit config.
    pub fn from_preset(name: &str) -> Result<Self, String> {
        let sc = sim::preset(name).map_err(|e| e.to_string())?;
        Ok(Self::from_scenario(&sc))
    }

    /// Converts to the executable scenario, validating everything.
    pub fn to_scenario(&self) -> Result<Scenario, String> {
        let kind = match self.policy.metric.as_str() {
            "snr" => MetricKind::SnrBased,
            "sanr" => MetricKind::SanrBased,
            other => return Err(format!("unknown policy metric '{other}' (snr or sanr)")),
        };
        let sc = Scenario {
            geometry: NetworkGeometry {
                x_spacing: self.geometry.x_spacing,
                y_offset: self.geometry.y_offset,
                height: self.geometry.h,
                lane_y: self.geometry.y,
            },
            radio: RadioParams {
                m: self.radio.m,
                carrier_freq: self.radio.carrier_freq_hz,
                bandwidth: self.radio.bandwidth_hz,
                tx_power: dbm_to_watts(self.radio.tx_power_dbm),
                noise_power: dbm_to_watts(self.radio.noise_power_dbm),
                pathloss_exp: self.radio.pathloss_exp,
                rician_k: db_to_linear(self.radio.rician_k_db),
            },
            motion: MotionModel {
                ts: self.motion.ts,
                sigma_alpha: self.motion.sigma_alpha,
                sigma_omega: self.motion.sigma_omega,
            },
            x0: self.x0,
            v0: self.v0_kmh / 3.6,
            duration: self.duration,
            policy: SelectionPolicy { kind, tau_th: self.policy.tau_th, q11_ref: self.policy.q11_ref },
            tracker: TrackerKind::from_str(&self.tracker)
                .map_err(|e| format!("tracker: {e}"))?,
            strategy: CombinerStrategy::from_str(&self.strategy)
                .map_err(|e| format!("strategy: {e}"))?,
            trials: self.trials,
            master_seed: self.master_seed,
        };
        sc.validate().map_err(|e| e.to_string())?;
        Ok(sc)
    }
}

/// Applies one `path.to.field=value` override onto the config's JSON tree.
/// The path must reference an existing field; the value is parsed as a JSON
/// literal, falling back to a bare string (so `tracker=fixed:1` works).
pub fn apply_override(tree: &mut Value, assignment: &str) -> Result<(), String> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| format!("override '{assignment}' is not of the form path=value"))?;
    if path.is_empty() {
        return Err(format!("override '{assignment}' has an empty path"));
    }
    let value: Value = serde_json::from_str(raw).unwrap_or(Value::String(raw.to_string()));
    let mut node = &mut *tree;
    let segments: Vec<&str> = path.split('.').collect();
    for (i, seg) in segments.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| format!("override path '{path}': '{}' is not an object", segments[..i].join(".")))?;
        node = obj
            .get_mut(*seg)
            .ok_or_else(|| format!("override path '{path}': no field '{seg}'"))?;
        if i == segments.len() - 1 {
            *node = value;
            return Ok(());
        }
    }
    unreachable!("loop returns on the last segment")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_round_trips_to_scenario_exactly() {
        for name in sim::PRESET_NAMES {
            let spec = RunSpec::from_preset(name).unwrap();
            let sc = spec.to_scenario().unwrap();
            let reference = sim::preset(name).unwrap();
            assert_eq!(sc.radio.tx_power.to_bits(), reference.radio.tx_power.to_bits(), "{name}");
            assert_eq!(sc.radio.rician_k.to_bits(), reference.radio.rician_k.to_bits(), "{name}");
            assert_eq!(sc.v0.to_bits(), reference.v0.to_bits(), "{name}");
            assert_eq!(sc.x0.to_bits(), reference.x0.to_bits(), "{name}");
            assert_eq!(sc.motion.sigma_alpha.to_bits(), reference.motion.sigma_alpha.to_bits());
        }
    }

    #[test]
    fn presentation_units_are_round_numbers() {
        let spec = RunSpec::from_preset("fig5_rsu12").unwrap();
        assert_eq!(spec.v0_kmh, 60.0);
        assert_eq!(spec.radio.tx_power_dbm, 23.0);
        assert_eq!(spec.radio.noise_power_dbm, -101.0);
        assert_eq!(spec.radio.rician_k_db, 13.0);
    }

    #[test]
    fn override_rewrites_nested_field() {
        let spec = RunSpec::from_preset("fig5_rsu12").unwrap();
        let mut tree = serde_json::to_value(&spec).unwrap();
        apply_override(&mut tree, "motion.Ts=0.005").unwrap();
        apply_override(&mut tree, "tracker=fixed:2").unwrap();
        let back: RunSpec = serde_json::from_value(tree).unwrap();
        assert_eq!(back.motion.ts, 0.005);
        assert_eq!(back.tracker, "fixed:2");
    }

    #[test]
    fn override_rejects_unknown_paths_and_bad_shapes() {
        let spec = RunSpec::from_preset("fig5_rsu12").unwrap();
        let mut tree = serde_json::to_value(&spec).unwrap();
        assert!(apply_override(&mut tree, "motion.ts=0.005").is_err(), "case-sensitive names");
        assert!(apply_override(&mut tree, "nosuch=1").is_err());
        assert!(apply_override(&mut tree, "x0.deeper=1").is_err());
        assert!(apply_override(&mut tree, "just-a-path").is_err());
    }

    #[test]
    fn scenario_validation_propagates() {
        let mut spec = RunSpec::from_preset("fig4a_rsu1area").unwrap();
        spec.duration = 0.0101; // not an integral number of steps
        assert!(spec.to_scenario().is_err());
        spec.duration = 1.5;
        spec.tracker = "warp".into();
        assert!(spec.to_scenario().is_err());
    }
}
