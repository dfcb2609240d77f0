//! Zero-forcing precoder construction.
//!
//! Per-UE thin SVDs expose the spatial layers; the selected right-singular
//! rows are stacked and pseudo-inverted so that every layer arrives
//! interference-free at its UE. The diagonal of the inverse row Gram matrix
//! gives the transmit-power cost multiplier of each layer.

use serde::{Deserialize, Serialize};

use crate::{C64, CMat, Error, Result};

/// Default cap on the row Gram matrix condition number.
pub const DEFAULT_COND_CAP: f64 = 1e12;
/// Singular values below this fraction of the largest are treated as zero.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Thin SVD of one UE channel, descending singular values, with the phase of
/// each singular pair fixed so decompositions are reproducible.
#[derive(Clone, Debug, PartialEq)]
pub struct UeDecomposition {
    /// Left singular vectors, N x N.
    pub u: CMat,
    /// Singular values (the square roots of the layer gains), descending.
    pub singular_values: Vec<f64>,
    /// Right singular vectors, M x N, orthonormal columns.
    pub v: CMat,
}

/// Which (UE, singular index) pairs form the global layer list, in stacking
/// order, together with the squared singular value of each layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerMap {
    pub layers: Vec<(usize, usize)>,
    pub per_ue_counts: Vec<usize>,
    /// Squared singular values, one per selected layer.
    pub gains: Vec<f64>,
}

impl LayerMap {
    pub fn total_layers(&self) -> usize {
        self.layers.len()
    }
}

/// Trimmed pseudo-inverse of the stacked right-singular rows plus the
/// per-layer power coupling coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct Precoder {
    /// The selected rows v^H, nu x M.
    pub v_tilde: CMat,
    /// Pseudo-inverse, M x nu.
    pub pinv: CMat,
    /// Diagonal of the inverse row Gram matrix; >= 1 for unit-norm rows.
    pub coupling: Vec<f64>,
    pub layer_map: LayerMap,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Reference,
    Reduced,
    Enhanced,
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Scheme::Reference => write!(f, "reference"),
            Scheme::Reduced => write!(f, "reduced"),
            Scheme::Enhanced => write!(f, "enhanced"),
        }
    }
}

/// Precoding matrix with its per-layer transmit powers.
#[derive(Clone, Debug, PartialEq)]
pub struct BeamformingMatrix {
    /// M x nu.
    pub matrix: CMat,
    /// Per-layer transmit power P_i in watts.
    pub layer_powers: Vec<f64>,
    pub scheme: Scheme,
}

impl BeamformingMatrix {
    /// tr[B B^H], the total radiated power.
    pub fn total_power(&self) -> f64 {
        self.matrix.iter().map(|c| c.norm_sqr()).sum()
    }
}

/// Thin SVD of an N x M channel (N <= M) with descending singular values.
/// The phase ambiguity is removed by rotating each singular pair so the
/// largest-magnitude entry of the right singular vector is real positive.
pub fn decompose_ue(h: &CMat) -> Result<UeDecomposition> {
    let (n, m) = h.shape();
    if n > m {
        return Err(Error::DimensionMismatch(format!(
            "channel matrix is {n} x {m}; expected rows <= columns"
        )));
    }
    if h.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
        return Err(Error::NonFinite("channel matrix entry".into()));
    }
    let svd = h.clone().try_svd(true, true, f64::EPSILON, 0).ok_or(Error::SvdFailed)?;
    let u_thin = svd.u.ok_or(Error::SvdFailed)?; // N x N
    let v_t = svd.v_t.ok_or(Error::SvdFailed)?; // N x M
    let sigma = svd.singular_values;

    // enforce descending order regardless of backend behavior
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| sigma[b].partial_cmp(&sigma[a]).unwrap());

    let mut u = CMat::zeros(n, n);
    let mut v = CMat::zeros(m, n);
    let mut singular_values = Vec::with_capacity(n);
    for (dst, &src) in order.iter().enumerate() {
        let mut u_col = u_thin.column(src).clone_owned();
        let mut v_col = v_t.row(src).adjoint();
        // phase fix: largest-magnitude entry of v real positive
        let (idx, _) = v_col
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| a.norm_sqr().partial_cmp(&b.norm_sqr()).unwrap())
            .unwrap();
        let pivot = v_col[idx];
        if pivot.norm() > 0.0 {
            let phase = pivot / pivot.norm();
            let rot = phase.conj();
            v_col *= rot;
            u_col *= rot;
        }
        u.set_column(dst, &u_col);
        v.set_column(dst, &v_col);
        singular_values.push(sigma[src]);
    }
    Ok(UeDecomposition {
        u,
        singular_values,
        v,
    })
}

/// Pick the requested number of strongest layers per UE. Ordering is
/// UE-major, strength-descending within each UE. Requests beyond the
/// numerical rank are rejected.
pub fn select_layers(decomps: &[UeDecomposition], requested: &[usize]) -> Result<LayerMap> {
    if decomps.len() != requested.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} decompositions but {} layer requests",
            decomps.len(),
            requested.len()
        )));
    }
    let mut layers = Vec::new();
    let mut gains = Vec::new();
    let mut per_ue_counts = Vec::with_capacity(decomps.len());
    for (l, (dec, &want)) in decomps.iter().zip(requested).enumerate() {
        let sigma_max = dec.singular_values.first().copied().unwrap_or(0.0);
        let rank = dec
            .singular_values
            .iter()
            .filter(|&&s| s > RANK_TOLERANCE * sigma_max)
            .count();
        if want == 0 || want > rank {
            return Err(Error::RankDeficient {
                ue: l,
                requested: want,
                rank,
            });
        }
        for n in 0..want {
            layers.push((l, n));
            gains.push(dec.singular_values[n] * dec.singular_values[n]);
        }
        per_ue_counts.push(want);
    }
    Ok(LayerMap {
        layers,
        per_ue_counts,
        gains,
    })
}

/// Build the trimmed pseudo-inverse and the coupling coefficients. The
/// pseudo-inverse comes from an SVD of the stacked rows; the explicit
/// Gram-inverse formula is kept as a test oracle.
pub fn build_precoder(decomps: &[UeDecomposition], layer_map: LayerMap) -> Result<Precoder> {
    build_precoder_with_cap(decomps, layer_map, DEFAULT_COND_CAP)
}

pub fn build_precoder_with_cap(
    decomps: &[UeDecomposition],
    layer_map: LayerMap,
    cond_cap: f64,
) -> Result<Precoder> {
    let nu = layer_map.total_layers();
    if nu == 0 {
        return Err(Error::EmptyInput("layer map has no layers".into()));
    }
    let m = decomps[0].v.nrows();
    if nu > m {
        return Err(Error::DimensionMismatch(format!(
            "{nu} layers exceed {m} BS elements; pseudo-inverse does not exist"
        )));
    }

    let mut v_tilde = CMat::zeros(nu, m);
    for (i, &(l, n)) in layer_map.layers.iter().enumerate() {
        let row = decomps[l].v.column(n).adjoint();
        v_tilde.row_mut(i).copy_from(&row);
    }

    let svd = v_tilde
        .clone()
        .try_svd(true, true, f64::EPSILON, 0)
        .ok_or(Error::SvdFailed)?;
    let u = svd.u.ok_or(Error::SvdFailed)?; // nu x nu
    let v_t = svd.v_t.ok_or(Error::SvdFailed)?; // nu x m
    let sigma = &svd.singular_values;

    let sigma_max = sigma.iter().cloned().fold(0.0f64, f64::max);
    let sigma_min = sigma.iter().cloned().fold(f64::INFINITY, f64::min);
    let cond = if sigma_min > 0.0 {
        (sigma_max / sigma_min).powi(2) // Gram matrix condition number
    } else {
        f64::INFINITY
    };
    if cond > cond_cap {
        return Err(Error::IllConditioned {
            cond,
            cap: cond_cap,
        });
    }

    // pinv = W diag(1/sigma) U^H, with v_tilde = U diag(sigma) W^H
    let mut scaled = u.adjoint(); // nu x nu
    for (i, mut row) in scaled.row_iter_mut().enumerate() {
        let inv = C64::new(1.0 / sigma[i], 0.0);
        for e in row.iter_mut() {
            *e *= inv;
        }
    }
    let pinv = v_t.adjoint() * scaled; // m x nu

    // c_i = [(V~ V~^H)^{-1}]_ii = sum_j |U_ij|^2 / sigma_j^2
    let coupling = (0..nu)
        .map(|i| {
            (0..nu)
                .map(|j| u[(i, j)].norm_sqr() / (sigma[j] * sigma[j]))
                .sum()
        })
        .collect();

    Ok(Precoder {
        v_tilde,
        pinv,
        coupling,
        layer_map,
    })
}

/// B = pinv * diag(sqrt(P_i)).
pub fn assemble_bf(
    precoder: &Precoder,
    powers: &[f64],
    scheme: Scheme,
) -> Result<BeamformingMatrix> {
    let nu = precoder.layer_map.total_layers();
    if powers.len() != nu {
        return Err(Error::DimensionMismatch(format!(
            "{} powers for {nu} layers",
            powers.len()
        )));
    }
    if let Some(&p) = powers.iter().find(|&&p| !p.is_finite() || p < 0.0) {
        return Err(Error::NonPositivePower(p));
    }
    let mut matrix = precoder.pinv.clone();
    for (i, &p) in powers.iter().enumerate() {
        let s = C64::new(p.sqrt(), 0.0);
        for e in matrix.column_mut(i).iter_mut() {
            *e *= s;
        }
    }
    Ok(BeamformingMatrix {
        matrix,
        layer_powers: powers.to_vec(),
        scheme,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cmat(rng: &mut ChaCha8Rng, n: usize, m: usize) -> CMat {
        CMat::from_fn(n, m, |_, _| {
            C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
        })
    }

    #[test]
    fn identity_channel_decomposition() {
        let h = CMat::identity(4, 4);
        let d = decompose_ue(&h).unwrap();
        for s in &d.singular_values {
            assert_relative_eq!(*s, 1.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn diagonal_channel_singular_values() {
        let mut h = CMat::zeros(2, 4);
        h[(0, 0)] = C64::new(2.0, 0.0);
        h[(1, 1)] = C64::new(1.0, 0.0);
        let d = decompose_ue(&h).unwrap();
        assert_relative_eq!(d.singular_values[0], 2.0, max_relative = 1e-12);
        assert_relative_eq!(d.singular_values[1], 1.0, max_relative = 1e-12);
    }

    #[test]
    fn random_decomposition_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let h = random_cmat(&mut rng, 4, 8);
            let d = decompose_ue(&h).unwrap();
            let lambda_mat = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
                4,
                d.singular_values.iter().map(|&s| C64::new(s, 0.0)),
            ));
            let rec = &d.u * lambda_mat * d.v.adjoint();
            assert!((rec - &h).norm() / h.norm() <= 1e-10);
            assert!((d.u.adjoint() * &d.u - CMat::identity(4, 4)).norm() <= 1e-10);
            assert!((d.v.adjoint() * &d.v - CMat::identity(4, 4)).norm() <= 1e-10);
            for w in d.singular_values.windows(2) {
                assert!(w[0] >= w[1]);
            }
        }
    }

    #[test]
    fn singular_values_match_hermitian_eigenroute() {
        // independent route: eigenvalues of H H^H
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let h = random_cmat(&mut rng, 4, 8);
            let d = decompose_ue(&h).unwrap();
            let gram = &h * h.adjoint();
            let eig = nalgebra::SymmetricEigen::new(gram);
            let mut ev: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
            ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
            for (s, e) in d.singular_values.iter().zip(ev) {
                assert_relative_eq!(s * s, e, max_relative = 1e-8);
            }
        }
    }

    #[test]
    fn decomposition_is_phase_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = random_cmat(&mut rng, 3, 6);
        let a = decompose_ue(&h).unwrap();
        let b = decompose_ue(&h).unwrap();
        assert_eq!(a, b);
        for j in 0..3 {
            let (idx, _) = a
                .v
                .column(j)
                .iter()
                .enumerate()
                .max_by(|(_, x), (_, y)| x.norm_sqr().partial_cmp(&y.norm_sqr()).unwrap())
                .unwrap();
            let pivot = a.v.column(j)[idx];
            assert!(pivot.im.abs() < 1e-12 && pivot.re > 0.0);
        }
    }

    #[test]
    fn non_finite_channel_rejected() {
        let mut h = CMat::zeros(2, 4);
        h[(0, 0)] = C64::new(f64::NAN, 0.0);
        assert!(decompose_ue(&h).is_err());
    }

    #[test]
    fn full_layer_selection() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let decomps: Vec<_> = (0..3)
            .map(|_| decompose_ue(&random_cmat(&mut rng, 2, 8)).unwrap())
            .collect();
        let map = select_layers(&decomps, &[2, 2, 2]).unwrap();
        assert_eq!(map.total_layers(), 6);
        assert_eq!(map.layers[0], (0, 0));
        assert_eq!(map.layers[5], (2, 1));
        for (i, &(l, n)) in map.layers.iter().enumerate() {
            let s = decomps[l].singular_values[n];
            assert_relative_eq!(map.gains[i], s * s, max_relative = 1e-14);
        }
    }

    #[test]
    fn single_layer_selection_takes_strongest() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let decomps: Vec<_> = (0..4)
            .map(|_| decompose_ue(&random_cmat(&mut rng, 3, 8)).unwrap())
            .collect();
        let map = select_layers(&decomps, &[1, 1, 1, 1]).unwrap();
        assert_eq!(map.total_layers(), 4);
        for (l, dec) in decomps.iter().enumerate() {
            let max_gain = dec.singular_values[0] * dec.singular_values[0];
            assert_relative_eq!(map.gains[l], max_gain, max_relative = 1e-14);
        }
    }

    #[test]
    fn degenerate_rank_rejected() {
        // rank-1 channel: second singular value is numerically zero
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let col = random_cmat(&mut rng, 1, 8);
        let mut h = CMat::zeros(2, 8);
        h.row_mut(0).copy_from(&col.row(0));
        h.row_mut(1).copy_from(&(col.row(0) * C64::new(2.0, 0.0)));
        let d = decompose_ue(&h).unwrap();
        let err = select_layers(std::slice::from_ref(&d), &[2]).unwrap_err();
        match err {
            Error::RankDeficient { ue, requested, rank } => {
                assert_eq!((ue, requested, rank), (0, 2, 1));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn orthonormal_rows_give_adjoint_pinv() {
        // identity-channel decompositions have orthonormal v rows
        let decomps: Vec<_> = (0..2)
            .map(|l| {
                let mut h = CMat::zeros(2, 8);
                h[(0, 2 * l)] = C64::new(1.0, 0.0);
                h[(1, 2 * l + 1)] = C64::new(1.0, 0.0);
                decompose_ue(&h).unwrap()
            })
            .collect();
        let map = select_layers(&decomps, &[2, 2]).unwrap();
        let p = build_precoder(&decomps, map).unwrap();
        assert!((p.pinv.clone() - p.v_tilde.adjoint()).norm() <= 1e-10);
        for c in &p.coupling {
            assert_relative_eq!(*c, 1.0, max_relative = 1e-10);
        }
    }

    #[test]
    fn colinear_ues_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = random_cmat(&mut rng, 2, 8);
        let d1 = decompose_ue(&h).unwrap();
        let d2 = d1.clone(); // identical right-singular rows
        let map = select_layers(&[d1, d2], &[2, 2]).unwrap();
        let err = build_precoder(&[decompose_ue(&h).unwrap(), decompose_ue(&h).unwrap()], map)
            .unwrap_err();
        assert!(matches!(err, Error::IllConditioned { .. }));
    }

    #[test]
    fn pinv_matches_explicit_gram_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10 {
            let decomps: Vec<_> = (0..3)
                .map(|_| decompose_ue(&random_cmat(&mut rng, 2, 16)).unwrap())
                .collect();
            let map = select_layers(&decomps, &[2, 2, 2]).unwrap();
            let p = build_precoder(&decomps, map).unwrap();

            assert!((&p.v_tilde * &p.pinv - CMat::identity(6, 6)).norm() <= 1e-8);

            // explicit formula oracle: V^H (V V^H)^{-1}
            let gram = &p.v_tilde * p.v_tilde.adjoint();
            let gram_inv = gram.clone().try_inverse().unwrap();
            let explicit = p.v_tilde.adjoint() * &gram_inv;
            assert!((&p.pinv - &explicit).norm() / explicit.norm() <= 1e-8);
            for (i, &c) in p.coupling.iter().enumerate() {
                assert_relative_eq!(c, gram_inv[(i, i)].re, max_relative = 1e-8);
                assert!(c >= 1.0 - 1e-8);
            }
        }
    }

    #[test]
    fn assemble_scales_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let decomps: Vec<_> = (0..2)
            .map(|_| decompose_ue(&random_cmat(&mut rng, 2, 8)).unwrap())
            .collect();
        let map = select_layers(&decomps, &[2, 2]).unwrap();
        let p = build_precoder(&decomps, map).unwrap();

        let zero = assemble_bf(&p, &[0.0; 4], Scheme::Reference).unwrap();
        assert_eq!(zero.total_power(), 0.0);

        assert!(assemble_bf(&p, &[1.0, -0.5, 1.0, 1.0], Scheme::Reference).is_err());

        let powers = [1.0, 2.0, 3.0, 4.0];
        let bf = assemble_bf(&p, &powers, Scheme::Reference).unwrap();
        // trace identity: tr[B B^H] = sum_i P_i c_i
        let direct: f64 = bf.total_power();
        let via_coupling: f64 = powers
            .iter()
            .zip(&p.coupling)
            .map(|(&pw, &c)| pw * c)
            .sum();
        assert_relative_eq!(direct, via_coupling, max_relative = 1e-10);
    }
}
