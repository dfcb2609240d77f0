//! Multipath channel synthesis.
//!
//! Each entry of the BS-to-UE channel matrix is a sum of path gains: one
//! term per scatterer and one per RIS element. Path phases come from
//! far-field projections of element offsets onto center-to-center
//! directions; amplitudes are the Rayleigh fading coefficients (scatterer
//! paths) or the fading coefficient times the RIS reflection amplitude
//! 1/K (RIS paths). A separate free-space probe channel gives the field at
//! an arbitrary observation point, with 1/d amplitude decay.

use nalgebra::{RowDVector, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::scene::Scene;
use crate::{C64, CMat, Error, Result};

/// One sample of a standard complex Gaussian with E[|x|^2] = 1
/// (real and imaginary parts iid N(0, 1/2)), via Box-Muller.
pub fn complex_gaussian(rng: &mut impl Rng) -> C64 {
    let u1: f64 = 1.0 - rng.gen::<f64>(); // (0, 1]
    let u2: f64 = rng.gen();
    let r = (-2.0 * u1.ln()).sqrt();
    let theta = std::f64::consts::TAU * u2;
    C64::new(r * theta.cos(), r * theta.sin()) * std::f64::consts::FRAC_1_SQRT_2
}

/// Fading coefficients for one channel draw: one per scatterer, one per RIS.
#[derive(Clone, Debug, PartialEq)]
pub struct FadingDraw {
    pub scatterer_coeffs: Vec<C64>,
    pub ris_coeffs: Vec<C64>,
}

impl FadingDraw {
    pub fn sample(rng: &mut impl Rng, num_scatterers: usize, num_ris: usize) -> Self {
        Self {
            scatterer_coeffs: (0..num_scatterers).map(|_| complex_gaussian(rng)).collect(),
            ris_coeffs: (0..num_ris).map(|_| complex_gaussian(rng)).collect(),
        }
    }
}

/// Which UE each RIS co-phases its reflection toward.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RisAssignment {
    /// RIS z serves UE (z mod L).
    #[default]
    RoundRobin,
    /// Each RIS serves the UE whose center is closest.
    NearestUe,
    /// Explicit UE index per RIS.
    Explicit(Vec<usize>),
}

/// Frozen per-RIS reflection weights (unit modulus per element) and the
/// common reflection amplitude 1/K.
#[derive(Clone, Debug, PartialEq)]
pub struct RisConfiguration {
    /// `weights[z][k]` is the reflection phasor of element k of RIS z.
    pub weights: Vec<Vec<C64>>,
    pub reflection_amplitude: f64,
    pub target_ue: Vec<usize>,
}

/// Channel matrices for one draw: one N x M matrix per UE plus the
/// row-stacked N_t x M combined matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSet {
    pub per_ue: Vec<CMat>,
    pub stacked: CMat,
}

fn unit_direction(from: Vector3<f64>, to: Vector3<f64>, what: &str) -> Result<Vector3<f64>> {
    let d = to - from;
    let n = d.norm();
    if n == 0.0 {
        return Err(Error::CoincidentPoints(what.to_string()));
    }
    Ok(d / n)
}

/// Far-field path-length offsets for the scatterer path m -> s -> UE(l, n):
/// projections of the BS and UE element offsets onto the center-to-scatterer
/// and scatterer-to-center directions.
pub fn path_phase_scatterer(
    scene: &Scene,
    m: usize,
    s: usize,
    l: usize,
    n: usize,
) -> Result<(f64, f64)> {
    let bs_el = *scene
        .bs_elements
        .get(m)
        .ok_or_else(|| Error::IndexOutOfRange(format!("BS element {m}")))?;
    let sca = *scene
        .scatterers
        .get(s)
        .ok_or_else(|| Error::IndexOutOfRange(format!("scatterer {s}")))?;
    let ue_center = *scene
        .ue_centers
        .get(l)
        .ok_or_else(|| Error::IndexOutOfRange(format!("UE {l}")))?;
    let ue_el = *scene.ue_elements[l]
        .get(n)
        .ok_or_else(|| Error::IndexOutOfRange(format!("UE {l} element {n}")))?;

    let bs_dir = unit_direction(scene.bs_center, sca, "BS center -> scatterer")?;
    let ue_dir = unit_direction(sca, ue_center, "scatterer -> UE center")?;
    let delta_bs = bs_dir.dot(&(bs_el - scene.bs_center));
    let delta_ue = ue_dir.dot(&(ue_el - ue_center));
    Ok((delta_bs, delta_ue))
}

/// Far-field path-length offsets for the RIS path m -> RIS(z, k) -> UE(l, n).
/// The BS-side term projects (BS element offset + RIS element offset) onto
/// the BS-to-RIS direction; the UE-side term projects (RIS element offset +
/// UE element offset) onto the RIS-to-UE direction.
pub fn path_phase_ris(
    scene: &Scene,
    m: usize,
    z: usize,
    k: usize,
    l: usize,
    n: usize,
) -> Result<(f64, f64)> {
    let bs_el = *scene
        .bs_elements
        .get(m)
        .ok_or_else(|| Error::IndexOutOfRange(format!("BS element {m}")))?;
    let ris_center = *scene
        .ris_centers
        .get(z)
        .ok_or_else(|| Error::IndexOutOfRange(format!("RIS {z}")))?;
    let ris_el = *scene.ris_elements[z]
        .get(k)
        .ok_or_else(|| Error::IndexOutOfRange(format!("RIS {z} element {k}")))?;
    let ue_center = *scene
        .ue_centers
        .get(l)
        .ok_or_else(|| Error::IndexOutOfRange(format!("UE {l}")))?;
    let ue_el = *scene.ue_elements[l]
        .get(n)
        .ok_or_else(|| Error::IndexOutOfRange(format!("UE {l} element {n}")))?;

    let bs_dir = unit_direction(scene.bs_center, ris_center, "BS center -> RIS center")?;
    let ue_dir = unit_direction(ris_center, ue_center, "RIS center -> UE center")?;
    let ris_offset = ris_el - ris_center;
    let eta_bs = bs_dir.dot(&((bs_el - scene.bs_center) + ris_offset));
    let eta_ue = ue_dir.dot(&(ris_offset + (ue_el - ue_center)));
    Ok((eta_bs, eta_ue))
}

/// Complex gain of one scatterer path: fading amplitude with the propagation
/// phase -2*pi*(delta_bs + delta_ue)/lambda.
pub fn gain_scatterer_path(beta: C64, delta_bs: f64, delta_ue: f64, wavelength: f64) -> C64 {
    debug_assert!(wavelength > 0.0);
    let phase = -std::f64::consts::TAU * (delta_bs + delta_ue) / wavelength;
    beta * C64::from_polar(1.0, phase)
}

/// Complex gain of one RIS element path: reflection amplitude, RIS fading,
/// incident phase, reflection weight, and departing phase.
pub fn gain_ris_path(
    epsilon: C64,
    reflection_amplitude: f64,
    weight: C64,
    eta_bs: f64,
    eta_ue: f64,
    wavelength: f64,
) -> C64 {
    debug_assert!(wavelength > 0.0);
    let k = std::f64::consts::TAU / wavelength;
    reflection_amplitude
        * epsilon
        * C64::from_polar(1.0, -k * eta_bs)
        * weight
        * C64::from_polar(1.0, -k * eta_ue)
}

fn resolve_assignment(scene: &Scene, assignment: &RisAssignment) -> Result<Vec<usize>> {
    let num_ris = scene.ris_centers.len();
    let num_ues = scene.ue_centers.len();
    match assignment {
        RisAssignment::RoundRobin => Ok((0..num_ris).map(|z| z % num_ues).collect()),
        RisAssignment::NearestUe => Ok(scene
            .ris_centers
            .iter()
            .map(|rc| {
                scene
                    .ue_centers
                    .iter()
                    .enumerate()
                    .min_by(|(_, a), (_, b)| {
                        (*a - rc).norm().partial_cmp(&(*b - rc).norm()).unwrap()
                    })
                    .map(|(i, _)| i)
                    .unwrap()
            })
            .collect()),
        RisAssignment::Explicit(v) => {
            if v.len() != num_ris {
                return Err(Error::Config(format!(
                    "explicit RIS assignment has {} entries, expected {}",
                    v.len(),
                    num_ris
                )));
            }
            for &ue in v {
                if ue >= num_ues {
                    return Err(Error::IndexOutOfRange(format!(
                        "RIS assignment targets UE {ue}, only {num_ues} UEs"
                    )));
                }
            }
            Ok(v.clone())
        }
    }
}

/// Freeze the RIS reflection weights: each element applies the phase
/// conjugate of its BS-center -> element -> target-UE-center compound path,
/// so all K element paths add coherently toward the assigned UE.
pub fn configure_ris(
    scene: &Scene,
    wavelength: f64,
    assignment: &RisAssignment,
) -> Result<RisConfiguration> {
    let target_ue = resolve_assignment(scene, assignment)?;
    let num_k = scene.ris_elements.first().map_or(0, |e| e.len());
    let reflection_amplitude = if num_k > 0 { 1.0 / num_k as f64 } else { 1.0 };
    let wave_number = std::f64::consts::TAU / wavelength;

    let mut weights = Vec::with_capacity(scene.ris_centers.len());
    for (z, &ue) in target_ue.iter().enumerate() {
        let ue_center = scene.ue_centers[ue];
        let ris_center = scene.ris_centers[z];
        let bs_dir = unit_direction(scene.bs_center, ris_center, "BS center -> RIS center")?;
        let ue_dir = unit_direction(ris_center, ue_center, "RIS center -> UE center")?;
        let w = scene.ris_elements[z]
            .iter()
            .map(|&el| {
                let offset = el - ris_center;
                let eta_bs = bs_dir.dot(&offset);
                let eta_ue = ue_dir.dot(&offset);
                C64::from_polar(1.0, wave_number * (eta_bs + eta_ue))
            })
            .collect();
        weights.push(w);
    }
    Ok(RisConfiguration {
        weights,
        reflection_amplitude,
        target_ue,
    })
}

/// Assemble the per-UE channel matrices: every entry is the sum over all
/// scatterer paths and all RIS element paths, then row-stack the per-UE
/// blocks in UE order.
pub fn build_channel(
    scene: &Scene,
    wavelength: f64,
    fading: &FadingDraw,
    ris_config: &RisConfiguration,
) -> Result<ChannelSet> {
    let num_s = scene.scatterers.len();
    let num_z = scene.ris_centers.len();
    if fading.scatterer_coeffs.len() != num_s || fading.ris_coeffs.len() != num_z {
        return Err(Error::DimensionMismatch(format!(
            "fading draw has {}/{} coefficients, scene has {}/{} scatterers/RISs",
            fading.scatterer_coeffs.len(),
            fading.ris_coeffs.len(),
            num_s,
            num_z
        )));
    }
    if ris_config.weights.len() != num_z {
        return Err(Error::DimensionMismatch(format!(
            "RIS configuration has {} weight vectors, scene has {} RISs",
            ris_config.weights.len(),
            num_z
        )));
    }

    let m_count = scene.bs_elements.len();
    let n_count = scene.ue_elements.first().map_or(0, |e| e.len());
    let mut per_ue = Vec::with_capacity(scene.ue_centers.len());

    for l in 0..scene.ue_centers.len() {
        let mut h = CMat::zeros(n_count, m_count);
        for n in 0..n_count {
            for m in 0..m_count {
                let mut acc = C64::new(0.0, 0.0);
                for s in 0..num_s {
                    let (d_bs, d_ue) = path_phase_scatterer(scene, m, s, l, n)?;
                    acc += gain_scatterer_path(fading.scatterer_coeffs[s], d_bs, d_ue, wavelength);
                }
                for z in 0..num_z {
                    for k in 0..scene.ris_elements[z].len() {
                        let (e_bs, e_ue) = path_phase_ris(scene, m, z, k, l, n)?;
                        acc += gain_ris_path(
                            fading.ris_coeffs[z],
                            ris_config.reflection_amplitude,
                            ris_config.weights[z][k],
                            e_bs,
                            e_ue,
                            wavelength,
                        );
                    }
                }
                h[(n, m)] = acc;
            }
        }
        per_ue.push(h);
    }

    let n_total = per_ue.len() * n_count;
    let mut stacked = CMat::zeros(n_total, m_count);
    for (l, h) in per_ue.iter().enumerate() {
        stacked.rows_mut(l * n_count, n_count).copy_from(h);
    }
    Ok(ChannelSet { per_ue, stacked })
}

/// Free-space probe channel at observation point `q`: per BS element,
/// amplitude lambda/(4*pi*d) with phase +2*pi*d/lambda.
pub fn probe_channel(scene: &Scene, q: Vector3<f64>, wavelength: f64) -> Result<RowDVector<C64>> {
    let mut row = RowDVector::zeros(scene.bs_elements.len());
    for (m, &el) in scene.bs_elements.iter().enumerate() {
        let d = (q - el).norm();
        if d == 0.0 {
            return Err(Error::CoincidentPoints(format!(
                "probe point coincides with BS element {m}"
            )));
        }
        let amp = wavelength / (4.0 * std::f64::consts::PI * d);
        row[m] = C64::from_polar(amp, std::f64::consts::TAU * d / wavelength);
    }
    Ok(row)
}

/// Self-describing JSON channel dump for regression testing.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ChannelDump {
    pub num_ues: usize,
    pub rows_per_ue: usize,
    pub num_bs_elements: usize,
    /// Row-major (re, im) pairs of the stacked matrix.
    pub entries: Vec<[f64; 2]>,
}

impl ChannelDump {
    pub fn from_channel(ch: &ChannelSet) -> Self {
        let rows_per_ue = ch.per_ue.first().map_or(0, |h| h.nrows());
        Self {
            num_ues: ch.per_ue.len(),
            rows_per_ue,
            num_bs_elements: ch.stacked.ncols(),
            entries: ch
                .stacked
                .row_iter()
                .flat_map(|r| r.iter().map(|c| [c.re, c.im]).collect::<Vec<_>>())
                .collect(),
        }
    }

    pub fn to_stacked(&self) -> Result<CMat> {
        let rows = self.num_ues * self.rows_per_ue;
        if self.entries.len() != rows * self.num_bs_elements {
            return Err(Error::DimensionMismatch(format!(
                "channel dump has {} entries, expected {}",
                self.entries.len(),
                rows * self.num_bs_elements
            )));
        }
        Ok(CMat::from_fn(rows, self.num_bs_elements, |i, j| {
            let [re, im] = self.entries[i * self.num_bs_elements + j];
            C64::new(re, im)
        }))
    }
}
