//! Deployment geometry, physical constants, and randomness.
//!
//! Everything lives in the z = 0 plane of a 3D coordinate system; antenna
//! arrays are linear along the x-axis with half-wavelength element spacing.
//! Scene construction is a pure function of the configuration (including its
//! seed), so the same config always yields a bit-identical scene.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Convert dBm to linear watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    debug_assert!(dbm.is_finite());
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Convert linear watts to dBm. Errors on non-positive or non-finite input.
pub fn watts_to_dbm(watts: f64) -> Result<f64> {
    if !watts.is_finite() || watts <= 0.0 {
        return Err(Error::NonPositivePower(watts));
    }
    Ok(10.0 * watts.log10() + 30.0)
}

/// Watts to dBm with a floor instead of an error for zero/negative power.
pub fn watts_to_dbm_floored(watts: f64, floor_dbm: f64) -> f64 {
    watts_to_dbm(watts).unwrap_or(floor_dbm).max(floor_dbm)
}

/// Physical constants of one experiment, all in linear SI units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    pub carrier_frequency_hz: f64,
    pub bandwidth_hz: f64,
    pub noise_power_w: f64,
    pub max_power_w: f64,
    pub emf_threshold_w: f64,
    pub safety_radius_m: f64,
    pub n_circle_samples: usize,
}

impl PhysicalParams {
    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_frequency_hz
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("carrier_frequency_hz", self.carrier_frequency_hz),
            ("bandwidth_hz", self.bandwidth_hz),
            ("noise_power_w", self.noise_power_w),
            ("max_power_w", self.max_power_w),
            ("emf_threshold_w", self.emf_threshold_w),
            ("safety_radius_m", self.safety_radius_m),
        ];
        for (name, v) in positive {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.n_circle_samples < 3 {
            return Err(Error::Config(format!(
                "n_circle_samples must be >= 3, got {}",
                self.n_circle_samples
            )));
        }
        Ok(())
    }
}

/// Entity counts, placement region, and seed for one scene draw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    /// Number of BS antenna elements (M).
    pub num_bs_elements: usize,
    /// Number of UEs (L).
    pub num_ues: usize,
    /// Antenna elements per UE (N).
    pub num_ue_elements: usize,
    /// Number of RIS panels (Z).
    pub num_ris: usize,
    /// Elements per RIS (K).
    pub num_ris_elements: usize,
    /// Number of scatterers (S).
    pub num_scatterers: usize,
    /// Inner radius of the random-placement annulus; must exceed the safety radius.
    pub placement_min_radius_m: f64,
    /// Outer radius of the random-placement annulus.
    pub placement_max_radius_m: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            num_bs_elements: 64,
            num_ues: 5,
            num_ue_elements: 4,
            num_ris: 3,
            num_ris_elements: 4,
            num_scatterers: 3,
            placement_min_radius_m: 60.0,
            placement_max_radius_m: 200.0,
            seed: 0,
        }
    }
}

/// Immutable deployment geometry: element positions for the BS, the UEs and
/// the RIS panels, plus scatterer positions.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub bs_center: Vector3<f64>,
    pub bs_elements: Vec<Vector3<f64>>,
    pub ue_centers: Vec<Vector3<f64>>,
    /// `ue_elements[l][n]` is element n of UE l.
    pub ue_elements: Vec<Vec<Vector3<f64>>>,
    pub ris_centers: Vec<Vector3<f64>>,
    /// `ris_elements[z][k]` is element k of RIS z.
    pub ris_elements: Vec<Vec<Vector3<f64>>>,
    pub scatterers: Vec<Vector3<f64>>,
    pub rng_seed: u64,
}

/// Points sampled on the safety circle for exposure checks.
#[derive(Clone, Debug, PartialEq)]
pub struct CirclePointSet {
    pub points: Vec<Vector3<f64>>,
}

/// Half-wavelength linear array along the x-axis, centered at `center`.
fn linear_array(center: Vector3<f64>, n: usize, wavelength: f64) -> Vec<Vector3<f64>> {
    let spacing = 0.5 * wavelength;
    (0..n)
        .map(|i| center + Vector3::new((i as f64 - (n as f64 - 1.0) / 2.0) * spacing, 0.0, 0.0))
        .collect()
}

/// Area-uniform point in the annulus [r_min, r_max] around the origin, z = 0.
fn annulus_point(rng: &mut ChaCha8Rng, r_min: f64, r_max: f64) -> Vector3<f64> {
    let u: f64 = rng.gen();
    let r = (r_min * r_min + u * (r_max * r_max - r_min * r_min)).sqrt();
    let theta: f64 = rng.gen::<f64>() * std::f64::consts::TAU;
    Vector3::new(r * theta.cos(), r * theta.sin(), 0.0)
}

/// Build a reproducible scene from the configuration. The BS array sits at
/// the origin; UE centers, RIS centers, and scatterers are drawn uniformly
/// in the placement annulus, which must lie strictly outside the safety
/// circle.
pub fn build_scene(config: &SceneConfig, params: &PhysicalParams) -> Result<Scene> {
    params.validate()?;
    for (name, v) in [
        ("num_bs_elements", config.num_bs_elements),
        ("num_ues", config.num_ues),
        ("num_ue_elements", config.num_ue_elements),
    ] {
        if v == 0 {
            return Err(Error::Config(format!("{name} must be positive")));
        }
    }
    if config.num_ris > 0 && config.num_ris_elements == 0 {
        return Err(Error::Config(
            "num_ris_elements must be positive when num_ris > 0".into(),
        ));
    }
    if config.placement_min_radius_m <= params.safety_radius_m {
        return Err(Error::Config(format!(
            "placement annulus (inner radius {} m) intersects the safety circle (radius {} m)",
            config.placement_min_radius_m, params.safety_radius_m
        )));
    }
    if config.placement_max_radius_m <= config.placement_min_radius_m {
        return Err(Error::Config(
            "placement_max_radius_m must exceed placement_min_radius_m".into(),
        ));
    }

    let wavelength = params.wavelength();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let bs_center = Vector3::zeros();
    let bs_elements = linear_array(bs_center, config.num_bs_elements, wavelength);

    let ue_centers: Vec<_> = (0..config.num_ues)
        .map(|_| {
            annulus_point(
                &mut rng,
                config.placement_min_radius_m,
                config.placement_max_radius_m,
            )
        })
        .collect();
    let ue_elements = ue_centers
        .iter()
        .map(|&c| linear_array(c, config.num_ue_elements, wavelength))
        .collect();

    let ris_centers: Vec<_> = (0..config.num_ris)
        .map(|_| {
            annulus_point(
                &mut rng,
                config.placement_min_radius_m,
                config.placement_max_radius_m,
            )
        })
        .collect();
    let ris_elements = ris_centers
        .iter()
        .map(|&c| linear_array(c, config.num_ris_elements, wavelength))
        .collect();

    let scatterers = (0..config.num_scatterers)
        .map(|_| {
            annulus_point(
                &mut rng,
                config.placement_min_radius_m,
                config.placement_max_radius_m,
            )
        })
        .collect();

    Ok(Scene {
        bs_center,
        bs_elements,
        ue_centers,
        ue_elements,
        ris_centers,
        ris_elements,
        scatterers,
        rng_seed: config.seed,
    })
}

/// Equal-angle points on a circle in the z = 0 plane.
pub fn circle_points(
    center: Vector3<f64>,
    radius: f64,
    n: usize,
    angle_offset: f64,
) -> Vec<Vector3<f64>> {
    (0..n)
        .map(|k| {
            let theta = angle_offset + std::f64::consts::TAU * k as f64 / n as f64;
            center + Vector3::new(radius * theta.cos(), radius * theta.sin(), 0.0)
        })
        .collect()
}

/// Sample `n_circle_samples` points at equal angular spacing on the safety
/// circle around the BS array center.
pub fn sample_safety_circle(scene: &Scene, params: &PhysicalParams) -> Result<CirclePointSet> {
    if params.n_circle_samples < 3 {
        return Err(Error::Config(format!(
            "n_circle_samples must be >= 3, got {}",
            params.n_circle_samples
        )));
    }
    Ok(CirclePointSet {
        points: circle_points(
            scene.bs_center,
            params.safety_radius_m,
            params.n_circle_samples,
            0.0,
        ),
    })
}

/// Audit grid: a denser circle sampling offset by half a step, used to probe
/// exposure between the compliance samples.
pub fn sample_audit_circle(
    scene: &Scene,
    params: &PhysicalParams,
    factor: usize,
) -> CirclePointSet {
    let n = params.n_circle_samples * factor.max(1);
    let offset = std::f64::consts::PI / n as f64;
    CirclePointSet {
        points: circle_points(scene.bs_center, params.safety_radius_m, n, offset),
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Stable per-draw seed derivation: independent streams for every
/// (master seed, UE count, draw index) triple.
pub fn derive_seed(master: u64, l: usize, draw_index: u64) -> u64 {
    let a = splitmix64(master ^ 0xa076_1d64_78bd_642f);
    let b = splitmix64(a ^ (l as u64).wrapping_mul(0xe703_7ed1_a0b4_28db));
    splitmix64(b ^ draw_index.wrapping_mul(0x8ebc_6af0_9c88_c6e3))
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn test_params() -> PhysicalParams {
        PhysicalParams {
            carrier_frequency_hz: 3.5e9,
            bandwidth_hz: 1.0e8,
            noise_power_w: dbm_to_watts(-94.0),
            max_power_w: 200.0,
            emf_threshold_w: dbm_to_watts(-5.0),
            safety_radius_m: 50.0,
            n_circle_samples: 360,
        }
    }

    #[test]
    fn dbm_conversions() {
        assert_relative_eq!(dbm_to_watts(-5.0), 3.1623e-4, max_relative = 1e-4);
        assert_relative_eq!(dbm_to_watts(30.0), 1.0, max_relative = 1e-12);
        assert!(watts_to_dbm(0.0).is_err());
        assert!(watts_to_dbm(-1.0).is_err());
    }

    proptest! {
        #[test]
        fn dbm_roundtrip(dbm in -120.0f64..60.0) {
            let w = dbm_to_watts(dbm);
            let back = watts_to_dbm(w).unwrap();
            prop_assert!((back - dbm).abs() <= 1e-12 * dbm.abs().max(1.0));
        }
    }

    #[test]
    fn scene_is_deterministic() {
        let cfg = SceneConfig {
            seed: 7,
            ..SceneConfig::default()
        };
        let p = test_params();
        let a = build_scene(&cfg, &p).unwrap();
        let b = build_scene(&cfg, &p).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn element_counts_match_config() {
        let cfg = SceneConfig::default();
        let s = build_scene(&cfg, &test_params()).unwrap();
        assert_eq!(s.bs_elements.len(), 64);
        assert_eq!(s.ue_elements.len(), 5);
        assert!(s.ue_elements.iter().all(|u| u.len() == 4));
        assert_eq!(s.ris_elements.len(), 3);
        assert!(s.ris_elements.iter().all(|r| r.len() == 4));
        assert_eq!(s.scatterers.len(), 3);
    }

    #[test]
    fn bs_element_spacing_is_half_wavelength() {
        let p = test_params();
        let s = build_scene(&SceneConfig::default(), &p).unwrap();
        // c / f / 2 at 3.5 GHz, computed independently
        let expected = 299_792_458.0 / 3.5e9 / 2.0;
        assert_relative_eq!(expected, 0.04283, max_relative = 1e-4);
        for w in s.bs_elements.windows(2) {
            assert_relative_eq!((w[1] - w[0]).norm(), expected, max_relative = 1e-12);
        }
    }

    #[test]
    fn entities_stay_outside_safety_circle() {
        let p = test_params();
        for seed in 0..20 {
            let cfg = SceneConfig {
                seed,
                ..SceneConfig::default()
            };
            let s = build_scene(&cfg, &p).unwrap();
            for pt in s
                .ue_centers
                .iter()
                .chain(s.ris_centers.iter())
                .chain(s.scatterers.iter())
            {
                assert!(pt.norm() > p.safety_radius_m);
                assert!(pt.norm() >= 60.0 && pt.norm() <= 200.0);
            }
        }
    }

    #[test]
    fn placement_region_must_clear_circle() {
        let cfg = SceneConfig {
            placement_min_radius_m: 40.0,
            ..SceneConfig::default()
        };
        assert!(build_scene(&cfg, &test_params()).is_err());
    }

    #[test]
    fn circle_four_points() {
        let p = PhysicalParams {
            n_circle_samples: 4,
            ..test_params()
        };
        let s = build_scene(&SceneConfig::default(), &p).unwrap();
        let c = sample_safety_circle(&s, &p).unwrap();
        assert_eq!(c.points.len(), 4);
        let expected = [
            Vector3::new(50.0, 0.0, 0.0),
            Vector3::new(0.0, 50.0, 0.0),
            Vector3::new(-50.0, 0.0, 0.0),
            Vector3::new(0.0, -50.0, 0.0),
        ];
        for (pt, ex) in c.points.iter().zip(expected.iter()) {
            assert!((pt - ex).norm() < 1e-9);
        }
    }

    #[test]
    fn circle_points_on_radius_and_evenly_spaced() {
        let p = test_params();
        let s = build_scene(&SceneConfig::default(), &p).unwrap();
        let c = sample_safety_circle(&s, &p).unwrap();
        assert_eq!(c.points.len(), 360);
        for pt in &c.points {
            assert!(((pt - s.bs_center).norm() - 50.0).abs() / 50.0 <= 1e-9);
        }
        // consecutive points subtend 1 degree
        let chord = (c.points[1] - c.points[0]).norm();
        let expected = 2.0 * 50.0 * (std::f64::consts::PI / 360.0).sin();
        assert_relative_eq!(chord, expected, max_relative = 1e-9);
    }

    #[test]
    fn derived_seeds_are_distinct() {
        let mut seen = std::collections::HashSet::new();
        for l in 2..8 {
            for d in 0..100 {
                assert!(seen.insert(derive_seed(42, l, d)));
            }
        }
        assert_eq!(derive_seed(42, 3, 5), derive_seed(42, 3, 5));
    }
}
