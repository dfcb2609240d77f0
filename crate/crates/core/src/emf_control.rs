//! Exposure evaluation on the safety circle and the two EMF-compliant
//! power-control schemes.
//!
//! `reduced_bf` scales the whole beamformer so the worst sampled circle
//! point lands exactly on the threshold. `enhanced_bf` walks the worst
//! point's dominant layer down iteratively, which preserves more transmit
//! power on layers that do not radiate toward the circle hot spot.

use nalgebra::Vector3;
use serde::Serialize;

use crate::channel::probe_channel;
use crate::precoding::{BeamformingMatrix, Precoder, Scheme, assemble_bf};
use crate::scene::{CirclePointSet, PhysicalParams, Scene, watts_to_dbm_floored};
use crate::{CMat, Error, Result};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// dBm floor used when serializing zero powers.
pub const DBM_FLOOR: f64 = -150.0;

/// Precomputed free-space probe rows for a fixed set of observation points.
#[derive(Clone, Debug, PartialEq)]
pub struct CircleProbes {
    pub points: Vec<Vector3<f64>>,
    /// One probe row per point, N_Q x M.
    pub matrix: CMat,
}

impl CircleProbes {
    pub fn new(scene: &Scene, circle: &CirclePointSet, wavelength: f64) -> Result<Self> {
        if circle.points.is_empty() {
            return Err(Error::EmptyInput("circle point set".into()));
        }
        let m = scene.bs_elements.len();
        let mut matrix = CMat::zeros(circle.points.len(), m);
        for (i, &q) in circle.points.iter().enumerate() {
            matrix.row_mut(i).copy_from(&probe_channel(scene, q, wavelength)?);
        }
        Ok(Self {
            points: circle.points.clone(),
            matrix,
        })
    }
}

/// Received power at every sampled point, plus the decomposition of the
/// worst point's power into per-layer contributions.
#[derive(Clone, Debug, PartialEq)]
pub struct ExposureProfile {
    pub point_powers: Vec<f64>,
    pub max_power: f64,
    pub argmax_index: usize,
    pub argmax_point: Vector3<f64>,
    pub per_layer_at_max: Vec<f64>,
}

fn row_layer_powers(probe_row: &nalgebra::RowDVector<crate::C64>, bf: &CMat) -> Vec<f64> {
    let prod = probe_row * bf;
    prod.iter().map(|c| c.norm_sqr()).collect()
}

/// Received power ||H^Q B||^2 at every probe point. Points are independent,
/// so the scan is data-parallel under the `parallel` feature.
pub fn exposure(bf: &BeamformingMatrix, probes: &CircleProbes) -> ExposureProfile {
    let n = probes.points.len();
    let eval = |i: usize| -> f64 {
        let row = probes.matrix.row(i);
        (row * &bf.matrix).iter().map(|c| c.norm_sqr()).sum()
    };
    #[cfg(feature = "parallel")]
    let point_powers: Vec<f64> = (0..n).into_par_iter().map(eval).collect();
    #[cfg(not(feature = "parallel"))]
    let point_powers: Vec<f64> = (0..n).map(eval).collect();

    // ties break to the lowest index
    let mut argmax_index = 0;
    for (i, &p) in point_powers.iter().enumerate() {
        if p > point_powers[argmax_index] {
            argmax_index = i;
        }
    }
    let max_power = point_powers[argmax_index];
    let per_layer_at_max = row_layer_powers(
        &probes.matrix.row(argmax_index).clone_owned(),
        &bf.matrix,
    );
    ExposureProfile {
        point_powers,
        max_power,
        argmax_index,
        argmax_point: probes.points[argmax_index],
        per_layer_at_max,
    }
}

/// Independent route to the received power: the trace form
/// tr[diag(P) (H^Q V~+)^H (H^Q V~+)] = sum_i P_i |H^Q v~+_i|^2.
pub fn trace_form_power(precoder: &Precoder, powers: &[f64], probe_row: &nalgebra::RowDVector<crate::C64>) -> f64 {
    let prod = probe_row * &precoder.pinv; // 1 x nu
    prod.iter()
        .zip(powers)
        .map(|(c, &p)| p * c.norm_sqr())
        .sum()
}

/// Global power reduction: scale the reference beamformer so the worst
/// circle point meets the threshold. Returns the (possibly unchanged)
/// beamformer and the applied factor alpha.
pub fn reduced_bf(
    reference: &BeamformingMatrix,
    profile: &ExposureProfile,
    emf_threshold_w: f64,
) -> (BeamformingMatrix, f64) {
    let alpha = (emf_threshold_w / profile.max_power).min(1.0);
    if alpha >= 1.0 {
        return (reference.clone(), 1.0);
    }
    let scale = crate::C64::new(alpha.sqrt(), 0.0);
    let matrix = &reference.matrix * scale;
    let layer_powers = reference.layer_powers.iter().map(|p| p * alpha).collect();
    (
        BeamformingMatrix {
            matrix,
            layer_powers,
            scheme: Scheme::Reduced,
        },
        alpha,
    )
}

#[derive(Clone, Debug)]
pub struct EnhancedLimits {
    pub max_iterations: usize,
    /// Relative compliance margin tau: the loop stops once
    /// max_Q P_Q <= threshold * (1 + tau).
    pub tolerance: f64,
}

impl EnhancedLimits {
    pub fn for_layers(nu: usize, n_circle_samples: usize) -> Self {
        Self {
            max_iterations: 10 * nu.max(1) * n_circle_samples.max(1),
            tolerance: 1e-9,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EnhancedStep {
    pub argmax_index: usize,
    pub argmax_point: Vector3<f64>,
    pub max_power_w: f64,
    pub layer: usize,
    pub scale: f64,
}

#[derive(Clone, Debug, Default)]
pub struct EnhancedTrace {
    pub steps: Vec<EnhancedStep>,
    pub final_powers: Vec<f64>,
}

/// Per-layer iterative power reduction. Each pass finds the worst circle
/// point, picks the layer contributing most there (ties to the lowest
/// index), scales that layer's power by threshold / max_power, rebuilds the
/// beamformer, and re-scans. Every pass multiplies one layer by a factor in
/// (0, 1), so the worst-point power sequence is non-increasing.
pub fn enhanced_bf(
    reference: &BeamformingMatrix,
    precoder: &Precoder,
    probes: &CircleProbes,
    emf_threshold_w: f64,
    limits: &EnhancedLimits,
) -> Result<(BeamformingMatrix, EnhancedTrace)> {
    let mut powers = reference.layer_powers.clone();
    let mut bf = BeamformingMatrix {
        matrix: reference.matrix.clone(),
        layer_powers: powers.clone(),
        scheme: Scheme::Enhanced,
    };
    let mut trace = EnhancedTrace::default();
    let stop_at = emf_threshold_w * (1.0 + limits.tolerance);

    let mut profile = exposure(&bf, probes);
    if profile.max_power <= stop_at {
        // already compliant: return the reference matrix bit-for-bit
        trace.final_powers = powers;
        return Ok((
            BeamformingMatrix {
                matrix: reference.matrix.clone(),
                layer_powers: reference.layer_powers.clone(),
                scheme: Scheme::Enhanced,
            },
            trace,
        ));
    }

    while profile.max_power > stop_at {
        if trace.steps.len() >= limits.max_iterations {
            return Err(Error::IterationCap {
                cap: limits.max_iterations,
                max_power_w: profile.max_power,
                threshold_w: emf_threshold_w,
            });
        }
        // dominant layer at the worst point, ties to the lowest index
        let mut layer = 0;
        for (i, &p) in profile.per_layer_at_max.iter().enumerate() {
            if p > profile.per_layer_at_max[layer] {
                layer = i;
            }
        }
        let scale = emf_threshold_w / profile.max_power;
        powers[layer] *= scale;
        trace.steps.push(EnhancedStep {
            argmax_index: profile.argmax_index,
            argmax_point: profile.argmax_point,
            max_power_w: profile.max_power,
            layer,
            scale,
        });
        bf = assemble_bf(precoder, &powers, Scheme::Enhanced)?;
        profile = exposure(&bf, probes);
    }
    trace.final_powers = powers;
    Ok((bf, trace))
}

/// Residuals of the constrained problem for any beamformer: transmit-power
/// slack, worst exposure slack, and the smallest layer power.
#[derive(Clone, Debug, Serialize)]
pub struct ComplianceReport {
    pub scheme: Scheme,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    pub max_circle_power_dbm: f64,
    pub emf_threshold_dbm: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub audit_max_dbm: Option<f64>,
    pub per_layer_power_w: Vec<f64>,
    /// Pmax - sum_i P_i c_i.
    pub transmit_power_slack_w: f64,
    /// EMF_th - max_Q P_Q.
    pub exposure_slack_w: f64,
    pub min_layer_power_w: f64,
}

pub fn compliance_report(
    bf: &BeamformingMatrix,
    precoder: &Precoder,
    probes: &CircleProbes,
    audit_probes: Option<&CircleProbes>,
    params: &PhysicalParams,
    alpha: Option<f64>,
    iterations: Option<usize>,
) -> ComplianceReport {
    let profile = exposure(bf, probes);
    let weighted: f64 = bf
        .layer_powers
        .iter()
        .zip(&precoder.coupling)
        .map(|(&p, &c)| p * c)
        .sum();
    let audit_max_dbm = audit_probes.map(|a| {
        let p = exposure(bf, a);
        watts_to_dbm_floored(p.max_power, DBM_FLOOR)
    });
    ComplianceReport {
        scheme: bf.scheme,
        alpha,
        iterations,
        max_circle_power_dbm: watts_to_dbm_floored(profile.max_power, DBM_FLOOR),
        emf_threshold_dbm: watts_to_dbm_floored(params.emf_threshold_w, DBM_FLOOR),
        audit_max_dbm,
        per_layer_power_w: bf.layer_powers.clone(),
        transmit_power_slack_w: params.max_power_w - weighted,
        exposure_slack_w: params.emf_threshold_w - profile.max_power,
        min_layer_power_w: bf
            .layer_powers
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{self, FadingDraw, RisAssignment};
    use crate::precoding::{decompose_ue, build_precoder, select_layers};
    use crate::power_allocation::reference_bf;
    use crate::scene::{self, PhysicalParams, SceneConfig, build_scene, dbm_to_watts};
    use approx::assert_relative_eq;

    fn params(emf_dbm: f64) -> PhysicalParams {
        PhysicalParams {
            carrier_frequency_hz: 3.5e9,
            bandwidth_hz: 1.0e8,
            noise_power_w: dbm_to_watts(-94.0),
            max_power_w: 200.0,
            emf_threshold_w: dbm_to_watts(emf_dbm),
            safety_radius_m: 50.0,
            n_circle_samples: 90,
        }
    }

    struct Pipeline {
        precoder: Precoder,
        reference: BeamformingMatrix,
        probes: CircleProbes,
        params: PhysicalParams,
    }

    fn pipeline(seed: u64, emf_dbm: f64) -> Pipeline {
        let p = params(emf_dbm);
        let cfg = SceneConfig {
            num_bs_elements: 16,
            num_ues: 2,
            num_ue_elements: 2,
            num_ris: 1,
            num_ris_elements: 4,
            // the stacked 4 layers need at least S + Z = 4 scatterer/RIS
            // directions on the BS side
            num_scatterers: 4,
            seed,
            ..SceneConfig::default()
        };
        let sc = build_scene(&cfg, &p).unwrap();
        let lambda = p.wavelength();
        let mut rng = scene::rng_from_seed(seed ^ 0xabc);
        let fading = FadingDraw::sample(&mut rng, 4, 1);
        let ris = channel::configure_ris(&sc, lambda, &RisAssignment::RoundRobin).unwrap();
        let ch = channel::build_channel(&sc, lambda, &fading, &ris).unwrap();
        let decomps: Vec<_> = ch.per_ue.iter().map(|h| decompose_ue(h).unwrap()).collect();
        let map = select_layers(&decomps, &[2, 2]).unwrap();
        let precoder = build_precoder(&decomps, map).unwrap();
        let (reference, _) = reference_bf(&precoder, &p).unwrap();
        let circle = scene::sample_safety_circle(&sc, &p).unwrap();
        let probes = CircleProbes::new(&sc, &circle, lambda).unwrap();
        Pipeline {
            precoder,
            reference,
            probes,
            params: p,
        }
    }

    #[test]
    fn zero_beamformer_zero_exposure() {
        let pl = pipeline(1, -5.0);
        let zero = BeamformingMatrix {
            matrix: &pl.reference.matrix * crate::C64::new(0.0, 0.0),
            layer_powers: vec![0.0; 4],
            scheme: Scheme::Reference,
        };
        let prof = exposure(&zero, &pl.probes);
        assert!(prof.point_powers.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn layer_powers_decompose_total() {
        let pl = pipeline(2, -5.0);
        let prof = exposure(&pl.reference, &pl.probes);
        let sum: f64 = prof.per_layer_at_max.iter().sum();
        assert_relative_eq!(sum, prof.max_power, max_relative = 1e-10);
    }

    #[test]
    fn trace_form_matches_norm_form() {
        let pl = pipeline(3, -5.0);
        let prof = exposure(&pl.reference, &pl.probes);
        for i in [0usize, prof.argmax_index] {
            let row = pl.probes.matrix.row(i).clone_owned();
            let trace = trace_form_power(&pl.precoder, &pl.reference.layer_powers, &row);
            assert_relative_eq!(trace, prof.point_powers[i], max_relative = 1e-10);
        }
    }

    #[test]
    fn exposure_is_linear_in_power_scaling() {
        let pl = pipeline(4, -5.0);
        let prof = exposure(&pl.reference, &pl.probes);
        let alpha: f64 = 0.37;
        let scaled = BeamformingMatrix {
            matrix: &pl.reference.matrix * crate::C64::new(alpha.sqrt(), 0.0),
            layer_powers: pl.reference.layer_powers.iter().map(|p| p * alpha).collect(),
            scheme: Scheme::Reduced,
        };
        let prof2 = exposure(&scaled, &pl.probes);
        for (a, b) in prof.point_powers.iter().zip(&prof2.point_powers) {
            assert_relative_eq!(a * alpha, *b, max_relative = 1e-12);
        }
    }

    #[test]
    fn reduced_noop_when_compliant() {
        let pl = pipeline(5, 30.0); // absurdly high threshold
        let prof = exposure(&pl.reference, &pl.probes);
        let (red, alpha) = reduced_bf(&pl.reference, &prof, pl.params.emf_threshold_w);
        assert_eq!(alpha, 1.0);
        assert_eq!(red.matrix, pl.reference.matrix);
    }

    #[test]
    fn reduced_hits_threshold_exactly() {
        // pick a threshold well below the reference max so alpha < 1
        let pl = pipeline(6, -5.0);
        let prof = exposure(&pl.reference, &pl.probes);
        let th = prof.max_power / 4.0;
        let (red, alpha) = reduced_bf(&pl.reference, &prof, th);
        assert_relative_eq!(alpha, 0.25, max_relative = 1e-12);
        assert_relative_eq!(red.total_power(), pl.reference.total_power() * 0.25, max_relative = 1e-10);
        let prof2 = exposure(&red, &pl.probes);
        assert_relative_eq!(prof2.max_power, th, max_relative = 1e-9);
    }

    #[test]
    fn enhanced_noop_when_compliant() {
        let pl = pipeline(7, 30.0);
        let limits = EnhancedLimits::for_layers(4, 90);
        let (enh, trace) =
            enhanced_bf(&pl.reference, &pl.precoder, &pl.probes, pl.params.emf_threshold_w, &limits)
                .unwrap();
        assert!(trace.steps.is_empty());
        assert_eq!(enh.matrix, pl.reference.matrix);
        assert_eq!(enh.scheme, Scheme::Enhanced);
    }

    #[test]
    fn enhanced_reaches_compliance_with_monotone_trace() {
        let pl = pipeline(8, -5.0);
        let prof = exposure(&pl.reference, &pl.probes);
        let th = prof.max_power / 10.0;
        let limits = EnhancedLimits::for_layers(4, 90);
        let (enh, trace) =
            enhanced_bf(&pl.reference, &pl.precoder, &pl.probes, th, &limits).unwrap();
        let final_prof = exposure(&enh, &pl.probes);
        assert!(final_prof.max_power <= th * (1.0 + 1e-9));
        // per-layer powers never exceed the reference
        for (e, r) in enh.layer_powers.iter().zip(&pl.reference.layer_powers) {
            assert!(e <= r);
        }
        // worst-point power sequence is non-increasing
        for w in trace.steps.windows(2) {
            assert!(w[1].max_power_w <= w[0].max_power_w * (1.0 + 1e-12));
        }
        for s in &trace.steps {
            assert!(s.scale > 0.0 && s.scale < 1.0);
        }
    }

    #[test]
    fn enhanced_single_layer_lands_on_threshold() {
        // one UE, one layer: received power is linear in the single P_1, so
        // the final max equals the threshold up to the margin
        let p = params(-5.0);
        let cfg = SceneConfig {
            num_bs_elements: 16,
            num_ues: 1,
            num_ue_elements: 2,
            num_ris: 0,
            num_ris_elements: 1,
            num_scatterers: 2,
            seed: 31,
            ..SceneConfig::default()
        };
        let sc = build_scene(&cfg, &p).unwrap();
        let lambda = p.wavelength();
        let mut rng = scene::rng_from_seed(31);
        let fading = FadingDraw::sample(&mut rng, 2, 0);
        let ris = channel::configure_ris(&sc, lambda, &RisAssignment::RoundRobin).unwrap();
        let ch = channel::build_channel(&sc, lambda, &fading, &ris).unwrap();
        let decomps: Vec<_> = ch.per_ue.iter().map(|h| decompose_ue(h).unwrap()).collect();
        let map = select_layers(&decomps, &[1]).unwrap();
        let precoder = build_precoder(&decomps, map).unwrap();
        let (reference, _) = reference_bf(&precoder, &p).unwrap();
        let circle = scene::sample_safety_circle(&sc, &p).unwrap();
        let probes = CircleProbes::new(&sc, &circle, lambda).unwrap();
        let prof = exposure(&reference, &probes);
        let th = prof.max_power / 7.0;
        let limits = EnhancedLimits::for_layers(1, p.n_circle_samples);
        let (enh, trace) = enhanced_bf(&reference, &precoder, &probes, th, &limits).unwrap();
        assert_eq!(trace.steps.len(), 1);
        let final_prof = exposure(&enh, &probes);
        assert_relative_eq!(final_prof.max_power, th, max_relative = 1e-9);
    }

    #[test]
    fn compliance_report_serializes() {
        let pl = pipeline(9, -5.0);
        let prof = exposure(&pl.reference, &pl.probes);
        let th = prof.max_power / 2.0;
        let (red, alpha) = reduced_bf(&pl.reference, &prof, th);
        let report = compliance_report(
            &red,
            &pl.precoder,
            &pl.probes,
            None,
            &pl.params,
            Some(alpha),
            None,
        );
        assert!(report.exposure_slack_w.abs() > 0.0 || report.exposure_slack_w == 0.0);
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.contains("\"scheme\":\"reduced\""));
        assert!(json.contains("alpha"));
        assert!(!json.contains("iterations"));
    }
}
