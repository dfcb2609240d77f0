//! RIS-aided MU-MIMO downlink simulator with EMF-aware beamforming.
//!
//! The library models a base station with a linear antenna array serving
//! multiple multi-antenna users through scatterers and reconfigurable
//! intelligent surfaces (RIS). It builds the multipath channel, computes a
//! zero-forcing precoder with water-filling power allocation, and enforces
//! an electromagnetic-field exposure limit on a safety circle around the
//! base station via two power-control schemes:
//!
//! - **reduced**: scale the whole beamforming matrix down until the worst
//!   sampled circle point meets the exposure threshold;
//! - **enhanced**: iteratively shrink the power of the single layer that
//!   contributes most at the worst circle point, until all sampled points
//!   comply.
//!
//! Monte Carlo sweeps over the number of users produce capacity and
//! transmit-power statistics for the three schemes (reference / reduced /
//! enhanced) on identical channel draws.
//!
//! With the `parallel` feature (on by default) draws and exposure scans run
//! on a rayon pool; without it everything runs sequentially with identical
//! results.

pub mod channel;
pub mod config;
pub mod emf_control;
pub mod evaluation;
pub mod harness;
pub mod power_allocation;
pub mod precoding;
pub mod scene;

use nalgebra::DMatrix;
use num_complex::Complex;

/// Complex scalar used throughout.
pub type C64 = Complex<f64>;
/// Dynamically sized complex matrix.
pub type CMat = DMatrix<C64>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("power must be positive and finite, got {0} W")]
    NonPositivePower(f64),
    #[error("points coincide: cannot form a direction vector ({0})")]
    CoincidentPoints(String),
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("UE {ue}: requested {requested} layers but numerical rank is {rank}")]
    RankDeficient {
        ue: usize,
        requested: usize,
        rank: usize,
    },
    #[error("row-space Gram matrix ill-conditioned (cond ~ {cond:.3e}, cap {cap:.3e}); UEs are nearly colinear")]
    IllConditioned { cond: f64, cap: f64 },
    #[error("enhanced power control hit the iteration cap ({cap}) with max circle power {max_power_w:.6e} W above threshold {threshold_w:.6e} W")]
    IterationCap {
        cap: usize,
        max_power_w: f64,
        threshold_w: f64,
    },
    #[error("SVD failed to converge")]
    SvdFailed,
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
