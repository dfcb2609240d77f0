//! JSON experiment configuration.
//!
//! All physical quantities are SI linear units except the fields explicitly
//! suffixed `_dbm`, which are converted once at load time.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::RisAssignment;
use crate::power_allocation::LogBase;
use crate::scene::{PhysicalParams, SceneConfig, dbm_to_watts};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicalConfig {
    pub carrier_frequency_hz: f64,
    pub bandwidth_hz: f64,
    pub noise_power_dbm: f64,
    pub max_power_w: f64,
    pub emf_threshold_dbm: f64,
    pub safety_radius_m: f64,
    pub n_circle_samples: usize,
}

impl Default for PhysicalConfig {
    fn default() -> Self {
        Self {
            carrier_frequency_hz: 3.5e9,
            bandwidth_hz: 1.0e8,
            // thermal floor over 100 MHz; absolute capacity scales with this
            noise_power_dbm: -94.0,
            max_power_w: 200.0,
            emf_threshold_dbm: -5.0,
            safety_radius_m: 50.0,
            n_circle_samples: 360,
        }
    }
}

impl PhysicalConfig {
    pub fn to_params(&self) -> Result<PhysicalParams> {
        let p = PhysicalParams {
            carrier_frequency_hz: self.carrier_frequency_hz,
            bandwidth_hz: self.bandwidth_hz,
            noise_power_w: dbm_to_watts(self.noise_power_dbm),
            max_power_w: self.max_power_w,
            emf_threshold_w: dbm_to_watts(self.emf_threshold_dbm),
            safety_radius_m: self.safety_radius_m,
            n_circle_samples: self.n_circle_samples,
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// UE counts to sweep over.
    pub ue_counts: Vec<usize>,
    /// Monte Carlo draws per UE count.
    pub n_draws: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            ue_counts: (2..=7).collect(),
            n_draws: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeatmapConfig {
    /// Side length of the square observation region centered at the BS.
    pub extent_m: f64,
    pub resolution_m: f64,
}

impl Default for HeatmapConfig {
    fn default() -> Self {
        Self {
            extent_m: 400.0,
            resolution_m: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub physical: PhysicalConfig,
    pub scene: SceneConfig,
    pub sweep: SweepConfig,
    /// Layers per UE; `null` selects all N layers.
    pub layers_per_ue: Option<usize>,
    /// Redraw only fading (not geometry) across Monte Carlo draws.
    pub freeze_geometry: bool,
    pub capacity_log_base: LogBase,
    pub ris_assignment: RisAssignment,
    pub heatmap: HeatmapConfig,
    /// Audit grid density as a multiple of `n_circle_samples`.
    pub audit_factor: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            physical: PhysicalConfig::default(),
            scene: SceneConfig::default(),
            sweep: SweepConfig::default(),
            layers_per_ue: None,
            freeze_geometry: false,
            capacity_log_base: LogBase::Two,
            ris_assignment: RisAssignment::RoundRobin,
            heatmap: HeatmapConfig::default(),
            audit_factor: 4,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(json: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(json)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.physical.to_params()?;
        if self.sweep.ue_counts.is_empty() {
            return Err(Error::Config("sweep.ue_counts must be non-empty".into()));
        }
        if self.sweep.n_draws == 0 {
            return Err(Error::Config("sweep.n_draws must be positive".into()));
        }
        if let Some(nu) = self.layers_per_ue {
            if nu == 0 || nu > self.scene.num_ue_elements {
                return Err(Error::Config(format!(
                    "layers_per_ue must be in 1..={}, got {nu}",
                    self.scene.num_ue_elements
                )));
            }
        }
        if self.heatmap.extent_m <= 0.0 || self.heatmap.resolution_m <= 0.0 {
            return Err(Error::Config("heatmap extent and resolution must be positive".into()));
        }
        if self.audit_factor == 0 {
            return Err(Error::Config("audit_factor must be positive".into()));
        }
        Ok(())
    }

    /// Layers requested per UE: the configured count or all N.
    pub fn layers_request(&self) -> usize {
        self.layers_per_ue.unwrap_or(self.scene.num_ue_elements)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let p = cfg.physical.to_params().unwrap();
        assert!((p.emf_threshold_w - 3.1623e-4).abs() / 3.1623e-4 < 1e-4);
        assert_eq!(cfg.layers_request(), 4);
    }

    #[test]
    fn json_roundtrip_and_partial_override() {
        let cfg = ExperimentConfig::from_json(
            r#"{"physical": {"emf_threshold_dbm": -15.0}, "sweep": {"ue_counts": [2, 3], "n_draws": 5}}"#,
        )
        .unwrap();
        assert_eq!(cfg.sweep.ue_counts, vec![2, 3]);
        assert_eq!(cfg.physical.max_power_w, 200.0);
        let json = serde_json::to_string(&cfg).unwrap();
        let back = ExperimentConfig::from_json(&json).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn bad_values_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"sweep": {"n_draws": 0}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"layers_per_ue": 9}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"physical": {"max_power_w": -1.0}}"#).is_err());
    }
}
