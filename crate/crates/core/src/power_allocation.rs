//! Water-filling power allocation over coupled layer costs.
//!
//! Maximizes sum log(1 + gain_i * P_i / N0) subject to the weighted power
//! equality sum_i P_i * c_i = Pmax, where c_i is the ZF coupling cost of
//! layer i. Solved by the closed-form multiplier restricted to an active
//! set, shrinking the set until all active powers are non-negative.

use serde::{Deserialize, Serialize};

use crate::precoding::{BeamformingMatrix, Precoder, Scheme, assemble_bf};
use crate::scene::PhysicalParams;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogBase {
    /// Shannon convention: capacity in bits.
    #[default]
    Two,
    /// Natural log, for sensitivity checks.
    Natural,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WaterFillingSolution {
    pub powers: Vec<f64>,
    /// 1 / mu; the per-layer water level is this divided by c_i.
    pub water_level: f64,
    pub active_set: Vec<usize>,
    pub iterations: usize,
}

/// KKT-optimal allocation via active-set iteration. Each pass computes the
/// multiplier mu over the surviving layers and drops any layer whose
/// closed-form power goes negative; at most nu passes are needed.
pub fn waterfill(
    gains: &[f64],
    costs: &[f64],
    p_max: f64,
    noise_power: f64,
) -> Result<WaterFillingSolution> {
    let nu = gains.len();
    if nu == 0 {
        return Err(Error::EmptyInput("no layers to allocate".into()));
    }
    if costs.len() != nu {
        return Err(Error::DimensionMismatch(format!(
            "{} gains but {} costs",
            nu,
            costs.len()
        )));
    }
    if !p_max.is_finite() || p_max <= 0.0 {
        return Err(Error::NonPositivePower(p_max));
    }
    if !noise_power.is_finite() || noise_power <= 0.0 {
        return Err(Error::NonPositivePower(noise_power));
    }
    for (&g, &c) in gains.iter().zip(costs) {
        if !g.is_finite() || g <= 0.0 || !c.is_finite() || c <= 0.0 {
            return Err(Error::NonFinite(format!(
                "gains and costs must be positive finite (gain {g}, cost {c})"
            )));
        }
    }

    let mut active = vec![true; nu];
    let mut powers = vec![0.0; nu];
    let mut iterations = 0;
    let mut mu;
    loop {
        iterations += 1;
        let n_active = active.iter().filter(|&&a| a).count();
        assert!(n_active > 0, "active set emptied with positive inputs");
        let denom: f64 = p_max
            + (0..nu)
                .filter(|&i| active[i])
                .map(|i| noise_power * costs[i] / gains[i])
                .sum::<f64>();
        mu = n_active as f64 / denom;
        let mut any_negative = false;
        for i in 0..nu {
            if active[i] {
                let p = 1.0 / (mu * costs[i]) - noise_power / gains[i];
                if p < 0.0 {
                    active[i] = false;
                    any_negative = true;
                    powers[i] = 0.0;
                } else {
                    powers[i] = p;
                }
            }
        }
        if !any_negative {
            break;
        }
    }
    Ok(WaterFillingSolution {
        powers,
        water_level: 1.0 / mu,
        active_set: (0..nu).filter(|&i| active[i]).collect(),
        iterations,
    })
}

/// Sum-rate capacity in bits per second (or nats/s under `LogBase::Natural`).
pub fn capacity(powers: &[f64], gains: &[f64], bandwidth_hz: f64, noise_power: f64, base: LogBase) -> f64 {
    debug_assert_eq!(powers.len(), gains.len());
    let sum: f64 = powers
        .iter()
        .zip(gains)
        .map(|(&p, &g)| {
            let snr = g * p / noise_power;
            match base {
                LogBase::Two => (1.0 + snr).log2(),
                LogBase::Natural => (1.0 + snr).ln(),
            }
        })
        .sum();
    bandwidth_hz * sum
}

pub fn capacity_mbps(powers: &[f64], gains: &[f64], bandwidth_hz: f64, noise_power: f64, base: LogBase) -> f64 {
    capacity(powers, gains, bandwidth_hz, noise_power, base) / 1e6
}

/// Reference beamformer: water-filling powers applied to the ZF
/// pseudo-inverse, using the full power budget.
pub fn reference_bf(
    precoder: &Precoder,
    params: &PhysicalParams,
) -> Result<(BeamformingMatrix, WaterFillingSolution)> {
    let wf = waterfill(
        &precoder.layer_map.gains,
        &precoder.coupling,
        params.max_power_w,
        params.noise_power_w,
    )?;
    let bf = assemble_bf(precoder, &wf.powers, Scheme::Reference)?;
    Ok((bf, wf))
}

/// Residuals of the KKT conditions at a candidate solution; all should be
/// ~0 at the optimum.
#[derive(Clone, Copy, Debug)]
pub struct KktResiduals {
    /// |sum P_i c_i - Pmax| / Pmax.
    pub feasibility: f64,
    /// max over active i of |mu c_i (P_i + N0/gain_i) - 1|.
    pub stationarity: f64,
    /// max over inactive i of max(0, 1/(mu c_i) - N0/gain_i) / Pmax.
    pub complementary_slackness: f64,
}

pub fn kkt_residuals(
    sol: &WaterFillingSolution,
    gains: &[f64],
    costs: &[f64],
    p_max: f64,
    noise_power: f64,
) -> KktResiduals {
    let mu = 1.0 / sol.water_level;
    let budget: f64 = sol.powers.iter().zip(costs).map(|(&p, &c)| p * c).sum();
    let feasibility = (budget - p_max).abs() / p_max;
    let mut stationarity = 0.0f64;
    let mut slack = 0.0f64;
    for i in 0..gains.len() {
        if sol.powers[i] > 0.0 {
            let r = (mu * costs[i] * (sol.powers[i] + noise_power / gains[i]) - 1.0).abs();
            stationarity = stationarity.max(r);
        } else {
            // inactive layer: water level must sit below its floor
            let excess = 1.0 / (mu * costs[i]) - noise_power / gains[i];
            slack = slack.max(excess.max(0.0) / p_max);
        }
    }
    KktResiduals {
        feasibility,
        stationarity,
        complementary_slackness: slack,
    }
}
