//! Spatial maps and Monte Carlo summaries.
//!
//! Heatmaps evaluate the free-space probe channel on a regular grid around
//! the BS; exceedance maps threshold them outside the safety circle. Sweep
//! summaries reduce per-draw records with streaming Welford accumulators in
//! a fixed order, so the output is independent of how draws were scheduled.

use nalgebra::Vector3;

use crate::channel::probe_channel;
use crate::emf_control::DBM_FLOOR;
use crate::harness::DrawRecord;
use crate::precoding::{BeamformingMatrix, Scheme};
use crate::scene::{Scene, watts_to_dbm_floored};
use crate::{Error, Result};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Received power over a regular grid, in dBm. Cells containing a BS
/// element are masked (NaN).
#[derive(Clone, Debug)]
pub struct HeatmapGrid {
    /// Lower-left corner (x, y) of the grid.
    pub origin: [f64; 2],
    /// Grid extent (width, height) in meters.
    pub extent: [f64; 2],
    /// Cell size in meters.
    pub resolution: f64,
    pub n_x: usize,
    pub n_y: usize,
    /// Row-major, y-major: `values_dbm[iy * n_x + ix]`.
    pub values_dbm: Vec<f64>,
    pub scheme: Scheme,
}

impl HeatmapGrid {
    pub fn cell_center(&self, ix: usize, iy: usize) -> Vector3<f64> {
        Vector3::new(
            self.origin[0] + (ix as f64 + 0.5) * self.resolution,
            self.origin[1] + (iy as f64 + 0.5) * self.resolution,
            0.0,
        )
    }

    pub fn value(&self, ix: usize, iy: usize) -> f64 {
        self.values_dbm[iy * self.n_x + ix]
    }
}

/// Square observation region centered at `center`.
#[derive(Clone, Copy, Debug)]
pub struct Region {
    pub center: [f64; 2],
    pub extent_m: f64,
}

/// Evaluate ||H^Q B||^2 at every cell center of the region. Cells whose
/// bounds contain a BS element are masked instead of evaluated.
pub fn render_heatmap(
    bf: &BeamformingMatrix,
    scene: &Scene,
    region: Region,
    resolution: f64,
    wavelength: f64,
) -> Result<HeatmapGrid> {
    if resolution <= 0.0 || region.extent_m <= 0.0 {
        return Err(Error::Config("heatmap resolution and extent must be positive".into()));
    }
    let n = (region.extent_m / resolution).round().max(1.0) as usize;
    let origin = [
        region.center[0] - region.extent_m / 2.0,
        region.center[1] - region.extent_m / 2.0,
    ];

    let row_values = |iy: usize| -> Result<Vec<f64>> {
        let mut row = Vec::with_capacity(n);
        let y0 = origin[1] + iy as f64 * resolution;
        for ix in 0..n {
            let x0 = origin[0] + ix as f64 * resolution;
            let masked = scene.bs_elements.iter().any(|e| {
                e.x >= x0 && e.x < x0 + resolution && e.y >= y0 && e.y < y0 + resolution
            });
            if masked {
                row.push(f64::NAN);
                continue;
            }
            let q = Vector3::new(x0 + 0.5 * resolution, y0 + 0.5 * resolution, 0.0);
            let h = probe_channel(scene, q, wavelength)?;
            let p: f64 = (h * &bf.matrix).iter().map(|c| c.norm_sqr()).sum();
            row.push(watts_to_dbm_floored(p, DBM_FLOOR));
        }
        Ok(row)
    };

    #[cfg(feature = "parallel")]
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(row_values)
        .collect::<Result<_>>()?;
    #[cfg(not(feature = "parallel"))]
    let rows: Vec<Vec<f64>> = (0..n).map(row_values).collect::<Result<_>>()?;

    Ok(HeatmapGrid {
        origin,
        extent: [n as f64 * resolution, n as f64 * resolution],
        resolution,
        n_x: n,
        n_y: n,
        values_dbm: rows.into_iter().flatten().collect(),
        scheme: bf.scheme,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CellState {
    /// Inside the safety circle (or masked): the limit does not apply.
    NotApplicable,
    Compliant,
    Exceeded,
}

#[derive(Clone, Debug)]
pub struct ExceedanceMap {
    pub origin: [f64; 2],
    pub resolution: f64,
    pub n_x: usize,
    pub n_y: usize,
    pub cells: Vec<CellState>,
    pub scheme: Scheme,
}

impl ExceedanceMap {
    pub fn exceeded_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c == CellState::Exceeded).count()
    }
}

/// Threshold the heatmap at the exposure limit outside the safety circle.
pub fn exceedance_map(
    heatmap: &HeatmapGrid,
    emf_threshold_w: f64,
    safety_radius_m: f64,
    bs_center: Vector3<f64>,
) -> ExceedanceMap {
    let threshold_dbm = watts_to_dbm_floored(emf_threshold_w, DBM_FLOOR);
    let mut cells = Vec::with_capacity(heatmap.values_dbm.len());
    for iy in 0..heatmap.n_y {
        for ix in 0..heatmap.n_x {
            let v = heatmap.value(ix, iy);
            let q = heatmap.cell_center(ix, iy);
            let state = if v.is_nan() || (q - bs_center).norm() <= safety_radius_m {
                CellState::NotApplicable
            } else if v > threshold_dbm {
                CellState::Exceeded
            } else {
                CellState::Compliant
            };
            cells.push(state);
        }
    }
    ExceedanceMap {
        origin: heatmap.origin,
        resolution: heatmap.resolution,
        n_x: heatmap.n_x,
        n_y: heatmap.n_y,
        cells,
        scheme: heatmap.scheme,
    }
}

/// Welford streaming mean/variance accumulator.
#[derive(Clone, Copy, Debug, Default)]
pub struct RunningStats {
    n: u64,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 { 0.0 } else { self.m2 / (self.n - 1) as f64 }
    }

    pub fn std_error(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }
}

#[derive(Clone, Debug)]
pub struct SummaryRow {
    pub l: usize,
    pub scheme: Scheme,
    pub mean_capacity_mbps: f64,
    pub se_capacity: f64,
    pub mean_power_w: f64,
    pub se_power: f64,
    pub power_pct_vs_ref: f64,
    pub capacity_pct_vs_ref: f64,
    pub n_draws: u64,
}

#[derive(Clone, Debug, Default)]
pub struct SweepSummary {
    pub rows: Vec<SummaryRow>,
}

/// Reduce per-draw records to per-(L, scheme) means and standard errors.
/// Records are accumulated in slice order, so the result is invariant to
/// how the draws were scheduled as long as the caller orders them.
pub fn summarize_sweep(records: &[DrawRecord]) -> Result<SweepSummary> {
    if records.is_empty() {
        return Err(Error::EmptyInput("no draw records to summarize".into()));
    }
    let mut ls: Vec<usize> = records.iter().map(|r| r.l).collect();
    ls.sort_unstable();
    ls.dedup();

    let mut rows = Vec::new();
    for &l in &ls {
        let mut acc = [[RunningStats::default(); 2]; 3]; // [scheme][capacity|power]
        for r in records.iter().filter(|r| r.l == l) {
            for (s, m) in [&r.reference, &r.reduced, &r.enhanced].iter().enumerate() {
                acc[s][0].push(m.capacity_mbps);
                acc[s][1].push(m.total_power_w);
            }
        }
        let ref_cap = acc[0][0].mean();
        let ref_pow = acc[0][1].mean();
        for (s, scheme) in [Scheme::Reference, Scheme::Reduced, Scheme::Enhanced]
            .into_iter()
            .enumerate()
        {
            rows.push(SummaryRow {
                l,
                scheme,
                mean_capacity_mbps: acc[s][0].mean(),
                se_capacity: acc[s][0].std_error(),
                mean_power_w: acc[s][1].mean(),
                se_power: acc[s][1].std_error(),
                power_pct_vs_ref: if ref_pow > 0.0 {
                    acc[s][1].mean() / ref_pow * 100.0
                } else {
                    0.0
                },
                capacity_pct_vs_ref: if ref_cap > 0.0 {
                    acc[s][0].mean() / ref_cap * 100.0
                } else {
                    0.0
                },
                n_draws: acc[s][0].count(),
            });
        }
    }
    Ok(SweepSummary { rows })
}

pub fn summary_to_csv(summary: &SweepSummary) -> String {
    let mut out = String::from(
        "L,scheme,mean_capacity_mbps,se_capacity,mean_power_w,se_power,power_pct_vs_ref,capacity_pct_vs_ref,n_draws\n",
    );
    for r in &summary.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.l,
            r.scheme,
            r.mean_capacity_mbps,
            r.se_capacity,
            r.mean_power_w,
            r.se_power,
            r.power_pct_vs_ref,
            r.capacity_pct_vs_ref,
            r.n_draws
        ));
    }
    out
}

pub fn heatmap_to_csv(h: &HeatmapGrid) -> String {
    let mut out = format!(
        "# origin_x={},origin_y={},extent_x={},extent_y={},resolution={},scheme={}\n",
        h.origin[0], h.origin[1], h.extent[0], h.extent[1], h.resolution, h.scheme
    );
    for iy in 0..h.n_y {
        let row: Vec<String> = (0..h.n_x)
            .map(|ix| {
                let v = h.value(ix, iy);
                if v.is_nan() { "nan".to_string() } else { v.to_string() }
            })
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn exceedance_to_csv(m: &ExceedanceMap) -> String {
    let mut out = format!(
        "# origin_x={},origin_y={},resolution={},scheme={},legend=-1:n/a 0:ok 1:exceeded\n",
        m.origin[0], m.origin[1], m.resolution, m.scheme
    );
    for iy in 0..m.n_y {
        let row: Vec<&str> = (0..m.n_x)
            .map(|ix| match m.cells[iy * m.n_x + ix] {
                CellState::NotApplicable => "-1",
                CellState::Compliant => "0",
                CellState::Exceeded => "1",
            })
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Fixed color scale for SVG rendering: -150 dBm (dark blue) to +40 dBm
/// (red), masked cells gray.
fn dbm_to_rgb(v: f64) -> (u8, u8, u8) {
    if v.is_nan() {
        return (128, 128, 128);
    }
    let t = ((v - DBM_FLOOR) / (40.0 - DBM_FLOOR)).clamp(0.0, 1.0);
    // simple blue -> cyan -> yellow -> red ramp
    let (r, g, b) = if t < 1.0 / 3.0 {
        let u = t * 3.0;
        (0.0, u, 1.0)
    } else if t < 2.0 / 3.0 {
        let u = (t - 1.0 / 3.0) * 3.0;
        (u, 1.0, 1.0 - u)
    } else {
        let u = (t - 2.0 / 3.0) * 3.0;
        (1.0, 1.0 - u, 0.0)
    };
    ((r * 255.0) as u8, (g * 255.0) as u8, (b * 255.0) as u8)
}

pub fn heatmap_to_svg(h: &HeatmapGrid, safety_radius_m: f64) -> String {
    let cell = 2; // pixels per cell
    let w = h.n_x * cell;
    let hh = h.n_y * cell;
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{hh}\" viewBox=\"0 0 {w} {hh}\">\n"
    );
    for iy in 0..h.n_y {
        for ix in 0..h.n_x {
            let (r, g, b) = dbm_to_rgb(h.value(ix, iy));
            // flip y so north is up
            let y = (h.n_y - 1 - iy) * cell;
            out.push_str(&format!(
                "<rect x=\"{}\" y=\"{}\" width=\"{cell}\" height=\"{cell}\" fill=\"rgb({r},{g},{b})\"/>\n",
                ix * cell,
                y
            ));
        }
    }
    // safety circle outline, assuming the BS sits at the region center
    let cx = w as f64 / 2.0;
    let cy = hh as f64 / 2.0;
    let radius_px = safety_radius_m / h.resolution * cell as f64;
    out.push_str(&format!(
        "<circle cx=\"{cx}\" cy=\"{cy}\" r=\"{radius_px}\" fill=\"none\" stroke=\"white\" stroke-width=\"1\"/>\n"
    ));
    out.push_str("</svg>\n");
    out
}
