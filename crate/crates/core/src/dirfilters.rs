//! Directional filters tiling the three spatial frequency pyramids.
//!
//! Pyramid `d` is the region where `|xi_d| >= |xi_a|, |xi_b|` for the other two
//! spatial axes `a < b`. Inside it, each slope `xi_a / xi_d` and `xi_b / xi_d` is
//! covered by overlapping squared-cosine bumps that sum to one on `[-1, 1]`.
//! Each pyramid's wedges are extended a little past the pyramid seam with a
//! smooth taper, and every filter is then divided by the pointwise total, which
//! glues the boundary wedges and makes `sum_{d,l} V = 1` exact.
//!
//! Filters only depend on the spatial frequencies, so they are stored as 3D
//! arrays (`n1 * n2 * n3` values) and broadcast along the temporal axis.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pyramid::lowpass_cutoff;
use crate::volume::GridDims;

/// How the slopes of one scale are split into wedges along each slope axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WedgeLayout {
    /// `2L + 1` wedges centred at the slopes `l / L`, `|l| <= L`.
    Odd(usize),
    /// `K` wedges (K even) centred at half-integer multiples of `2 / K`.
    Even(usize),
}

impl WedgeLayout {
    pub fn per_axis(self) -> usize {
        match self {
            WedgeLayout::Odd(l) => 2 * l + 1,
            WedgeLayout::Even(k) => k,
        }
    }

    /// Directions per pyramid at this scale.
    pub fn directions(self) -> usize {
        self.per_axis().pow(2)
    }

    fn validate(self, scale: usize) -> Result<()> {
        match self {
            WedgeLayout::Odd(0) => Err(Error::WedgeTooFine { scale, reason: "shear radius must be at least 1".into() }),
            WedgeLayout::Even(k) if k < 2 || k % 2 != 0 => {
                Err(Error::WedgeTooFine { scale, reason: format!("even layout needs an even count >= 2, got {k}") })
            }
            _ => Ok(()),
        }
    }

    /// Slope spacing between neighbouring wedge centres.
    pub fn spacing(self) -> f64 {
        match self {
            WedgeLayout::Odd(l) => 1.0 / l as f64,
            WedgeLayout::Even(k) => 2.0 / k as f64,
        }
    }

    /// Shear indices along one axis, ascending.
    pub fn shears(self) -> Vec<i32> {
        match self {
            WedgeLayout::Odd(l) => (-(l as i32)..=l as i32).collect(),
            WedgeLayout::Even(k) => (-(k as i32) / 2..k as i32 / 2).collect(),
        }
    }

    pub fn center(self, shear: i32) -> f64 {
        match self {
            WedgeLayout::Odd(l) => shear as f64 / l as f64,
            WedgeLayout::Even(_) => (shear as f64 + 0.5) * self.spacing(),
        }
    }

    /// Bump for wedge `shear` at slope `u`, with the outermost bumps held flat past their centres.
    pub fn bump(self, shear: i32, u: f64) -> f64 {
        let shears = self.shears();
        let lo = self.center(shears[0]);
        let hi = self.center(*shears.last().unwrap());
        let t = (u.clamp(lo, hi) - self.center(shear)).abs() / self.spacing();
        if t >= 1.0 {
            0.0
        } else {
            (FRAC_PI_2 * meyer_nu(t)).cos().powi(2)
        }
    }
}

fn meyer_nu(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t.powi(4) * (35.0 - 84.0 * t + 70.0 * t * t - 20.0 * t.powi(3))
}

/// Directions per pyramid for each scale, finest first. `layouts` is ordered coarsest first.
pub fn directions_per_scale(layouts: &[WedgeLayout]) -> Vec<usize> {
    layouts.iter().rev().map(|l| l.directions()).collect()
}

/// The per-pyramid 36/16/4 wedge grids (6x6, 4x4, 2x2), coarsest first.
pub fn reference_layouts() -> Vec<WedgeLayout> {
    vec![WedgeLayout::Even(2), WedgeLayout::Even(4), WedgeLayout::Even(6)]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ShearIndex {
    /// Scale, 1 = coarsest directional scale.
    pub j: usize,
    /// Pyramid, 0-based: the spatial axis that dominates.
    pub d: usize,
    pub l1: i32,
    pub l2: i32,
}

impl std::fmt::Display for ShearIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "j{}_d{}_l{}_{}", self.j, self.d + 1, self.l1, self.l2)
    }
}

/// The other two spatial axes of pyramid `d`, in increasing order.
pub fn slope_axes(d: usize) -> (usize, usize) {
    match d {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    }
}

#[derive(Clone, Debug)]
pub struct DirFilterBank {
    dims: GridDims,
    layouts: Vec<WedgeLayout>,
    /// per scale (index j-1): filters in canonical (d, l1, l2) order
    filters: Vec<Vec<(ShearIndex, Vec<f64>)>>,
}

impl DirFilterBank {
    /// `layouts[j-1]` configures scale `j`, coarsest first.
    pub fn build(dims: GridDims, layouts: &[WedgeLayout]) -> Result<Self> {
        if layouts.is_empty() {
            return Err(Error::InvalidParameter("at least one directional scale is required".into()));
        }
        let scales = layouts.len();
        let min_half = *dims.spatial().iter().min().unwrap() as f64 / 2.0;
        for (i, &layout) in layouts.iter().enumerate() {
            let j = i + 1;
            layout.validate(j)?;
            // outer edge of the corona in grid steps along the shortest spatial axis
            let reach = if j == scales { 1.0 } else { 2.0 * lowpass_cutoff(scales, j) };
            let lines = layout.spacing() * reach * min_half;
            if lines < 2.0 {
                return Err(Error::WedgeTooFine {
                    scale: j,
                    reason: format!("{} wedges per axis leave {lines:.2} grid lines per wedge (need 2)", layout.per_axis()),
                });
            }
        }

        let freqs: Vec<Vec<f64>> = (0..3).map(|a| signed_normalized_freqs(&dims, a)).collect();
        let [n1, n2, n3] = dims.spatial();
        let m = n1 * n2 * n3;
        let coord = |i: usize| -> [f64; 3] {
            let (x, rest) = (i % n1, i / n1);
            let (y, z) = (rest % n2, rest / n2);
            [freqs[0][x], freqs[1][y], freqs[2][z]]
        };

        let mirror = |i: usize| -> usize {
            let (x, rest) = (i % n1, i / n1);
            let (y, z) = (rest % n2, rest / n2);
            (n1 - x) % n1 + n1 * ((n2 - y) % n2 + n2 * ((n3 - z) % n3))
        };

        let mut filters = Vec::with_capacity(scales);
        for (i, &layout) in layouts.iter().enumerate() {
            let j = i + 1;
            let shears = layout.shears();
            let taper_width = 0.5 * layout.spacing();
            let mut bank: Vec<(ShearIndex, Vec<f64>)> = Vec::new();
            for d in 0..3 {
                for &l1 in &shears {
                    for &l2 in &shears {
                        bank.push((ShearIndex { j, d, l1, l2 }, vec![0.0; m]));
                    }
                }
            }
            let per_pyramid = shears.len() * shears.len();
            let centre = shears.iter().position(|&s| s == 0).unwrap();
            let mut raw = vec![0.0; bank.len()];
            for p in 0..m {
                let xi = coord(p);
                if xi.iter().all(|&x| x == 0.0) {
                    // the spatial origin: split evenly between the three central wedges
                    for d in 0..3 {
                        bank[d * per_pyramid + centre * shears.len() + centre].1[p] = 1.0 / 3.0;
                    }
                    continue;
                }
                for d in 0..3 {
                    let (a, b) = slope_axes(d);
                    let base = d * per_pyramid;
                    let slab = &mut raw[base..base + per_pyramid];
                    if xi[d] == 0.0 {
                        slab.iter_mut().for_each(|r| *r = 0.0);
                        continue;
                    }
                    let (ua, ub) = (xi[a] / xi[d], xi[b] / xi[d]);
                    let taper = pyramid_taper(ua.abs().max(ub.abs()), taper_width);
                    if taper == 0.0 {
                        slab.iter_mut().for_each(|r| *r = 0.0);
                        continue;
                    }
                    let ba: Vec<f64> = shears.iter().map(|&s| layout.bump(s, ua)).collect();
                    let bb: Vec<f64> = shears.iter().map(|&s| layout.bump(s, ub)).collect();
                    for (q, &va) in ba.iter().enumerate() {
                        for (r, &vb) in bb.iter().enumerate() {
                            slab[q * shears.len() + r] = taper * va * vb;
                        }
                    }
                }
                let total: f64 = raw.iter().sum();
                for (k, &r) in raw.iter().enumerate() {
                    bank[k].1[p] = r / total;
                }
            }
            // Nyquist planes map to themselves under negation, so the slope formula
            // alone is not even there; averaging with the mirror keeps the responses real.
            for (_, v) in bank.iter_mut() {
                let mirrored: Vec<f64> = (0..m).map(|p| v[mirror(p)]).collect();
                for (x, y) in v.iter_mut().zip(mirrored) {
                    *x = 0.5 * (*x + y);
                }
            }
            filters.push(bank);
        }
        Ok(Self { dims, layouts: layouts.to_vec(), filters })
    }

    pub fn dims(&self) -> GridDims {
        self.dims
    }

    pub fn layouts(&self) -> &[WedgeLayout] {
        &self.layouts
    }

    pub fn scales(&self) -> usize {
        self.layouts.len()
    }

    /// Filters of scale `j` (1-based) in canonical order.
    pub fn scale_filters(&self, j: usize) -> &[(ShearIndex, Vec<f64>)] {
        &self.filters[j - 1]
    }

    pub fn iter(&self) -> impl Iterator<Item = &(ShearIndex, Vec<f64>)> {
        self.filters.iter().flatten()
    }

    pub fn filter(&self, idx: &ShearIndex) -> Option<&[f64]> {
        self.filters
            .get(idx.j.checked_sub(1)?)?
            .iter()
            .find(|(k, _)| k == idx)
            .map(|(_, v)| v.as_slice())
    }

    /// Filter value at a full 4D frequency index; constant along the temporal axis.
    pub fn value(&self, idx: &ShearIndex, full_index: usize) -> Option<f64> {
        self.filter(idx).map(|v| v[full_index % self.dims.frame_len()])
    }

    /// max over scales and spatial frequencies of |sum_{d,l} V - 1|.
    pub fn sum_defect(&self) -> f64 {
        let m = self.dims.frame_len();
        let mut worst = 0.0f64;
        for bank in &self.filters {
            for p in 0..m {
                let s: f64 = bank.iter().map(|(_, v)| v[p]).sum();
                worst = worst.max((s - 1.0).abs());
            }
        }
        worst
    }
}

/// Smooth cut-off of pyramid `d` as the largest slope leaves `[-1, 1]`.
fn pyramid_taper(max_slope: f64, width: f64) -> f64 {
    if max_slope <= 1.0 {
        1.0
    } else if max_slope >= 1.0 + width {
        0.0
    } else {
        (FRAC_PI_2 * meyer_nu((max_slope - 1.0) / width)).cos().powi(2)
    }
}

fn signed_normalized_freqs(dims: &GridDims, axis: usize) -> Vec<f64> {
    let half = dims.n[axis] as f64 / 2.0;
    (0..dims.n[axis]).map(|i| dims.freq(axis, i) as f64 / half).collect()
}
