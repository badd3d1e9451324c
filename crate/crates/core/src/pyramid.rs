//! Undecimated frequency-domain subband decomposition.
//!
//! Window `W_j` lives on the dyadic corona of scale `j` (ratio 4 between
//! consecutive scales), built from tensor-product lowpass profiles `Phi_j`
//! so that `W_0 = Phi_0`, `W_j^2 = Phi_j^2 - Phi_{j-1}^2` and `Phi_J = 1`.
//! The squares telescope to one everywhere, which makes recomposition both the
//! inverse and the adjoint of decomposition.

use std::f64::consts::FRAC_PI_2;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::volume::{real_part_checked, Fft4, GridDims, Volume4};

/// Whether the frequency windows see the temporal axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformMode {
    /// Windows depend on all four frequency axes.
    #[default]
    Cylindrical4d,
    /// Windows ignore the temporal axis: an independent 3D transform per frame.
    Spatial3d,
}

impl TransformMode {
    fn axes(self) -> usize {
        match self {
            TransformMode::Cylindrical4d => 4,
            TransformMode::Spatial3d => 3,
        }
    }
}

/// Meyer's auxiliary polynomial: 0 at 0, 1 at 1, flat to third order at both ends.
fn meyer_nu(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t.powi(4) * (35.0 - 84.0 * t + 70.0 * t * t - 20.0 * t.powi(3))
}

/// 1D lowpass profile: 1 on [0, a], cosine roll-off on (a, 2a), 0 beyond.
fn lowpass_profile(x: f64, a: f64) -> f64 {
    if x <= a {
        1.0
    } else if x >= 2.0 * a {
        0.0
    } else {
        (FRAC_PI_2 * meyer_nu((x - a) / a)).cos()
    }
}

/// Normalized |frequency| (1 at Nyquist) of every storage index along an axis.
pub(crate) fn normalized_abs_freqs(dims: &GridDims, axis: usize) -> Vec<f64> {
    let half = dims.n[axis] as f64 / 2.0;
    (0..dims.n[axis]).map(|i| dims.freq(axis, i).unsigned_abs() as f64 / half).collect()
}

#[derive(Clone, Debug)]
pub struct WindowBank {
    dims: GridDims,
    scales: usize,
    mode: TransformMode,
    windows: Vec<Vec<f64>>,
    fft: Fft4,
}

/// The subbands `f_0 ... f_J` of a volume.
#[derive(Clone, Debug, PartialEq)]
pub struct SubbandStack {
    pub dims: GridDims,
    pub bands: Vec<Volume4>,
}

impl WindowBank {
    /// Largest scale count the grid supports: the coarsest lowpass must still
    /// reach the first nonzero frequency of the longest spatial axis.
    pub fn max_scales(dims: &GridDims) -> usize {
        let half = dims.spatial().into_iter().max().unwrap() / 2;
        let mut j = 1;
        while 4usize.pow(j as u32) <= half {
            j += 1;
        }
        j
    }

    /// Roll-off start `a_j` of the lowpass `Phi_j`, in Nyquist units; `Phi_j` vanishes beyond `2 a_j`.
    pub fn cutoff(&self, j: usize) -> f64 {
        lowpass_cutoff(self.scales, j)
    }

    pub fn build(dims: GridDims, scales: usize) -> Result<Self> {
        Self::build_with_mode(dims, scales, TransformMode::Cylindrical4d)
    }

    pub fn build_with_mode(dims: GridDims, scales: usize, mode: TransformMode) -> Result<Self> {
        let max = Self::max_scales(&dims);
        if scales == 0 || scales > max {
            return Err(Error::TooManyScales { requested: scales, max });
        }
        let freqs: Vec<Vec<f64>> = (0..4).map(|a| normalized_abs_freqs(&dims, a)).collect();
        let naxes = mode.axes();

        // squared cumulative lowpass Phi_j^2 for j < J, evaluated separably
        let lowpass_sq = |j: usize, idx: [usize; 4]| -> f64 {
            let a = lowpass_cutoff(scales, j);
            (0..naxes).map(|ax| lowpass_profile(freqs[ax][idx[ax]], a)).product::<f64>().powi(2)
        };

        let n = dims.len();
        let mut windows = vec![vec![0.0; n]; scales + 1];
        for i in 0..n {
            let idx = dims.unravel(i);
            let mut prev = lowpass_sq(0, idx);
            windows[0][i] = prev.sqrt();
            for j in 1..=scales {
                let cur = if j == scales { 1.0 } else { lowpass_sq(j, idx) };
                windows[j][i] = (cur - prev).max(0.0).sqrt();
                prev = cur;
            }
        }
        Ok(Self { dims, scales, mode, windows, fft: Fft4::new(dims) })
    }

    pub fn dims(&self) -> GridDims {
        self.dims
    }

    pub fn scales(&self) -> usize {
        self.scales
    }

    pub fn mode(&self) -> TransformMode {
        self.mode
    }

    pub fn window(&self, j: usize) -> &[f64] {
        &self.windows[j]
    }

    pub fn fft(&self) -> &Fft4 {
        &self.fft
    }

    /// max over the grid of |sum_j W_j^2 - 1|.
    pub fn partition_defect(&self) -> f64 {
        (0..self.dims.len())
            .map(|i| (self.windows.iter().map(|w| w[i] * w[i]).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn decompose(&self, f: &Volume4) -> Result<SubbandStack> {
        self.dims.check_same(&f.dims)?;
        let mut spec: Vec<Complex64> = f.data.iter().map(|&x| x.into()).collect();
        self.fft.forward_inplace(&mut spec);
        let reference = f.max_abs();
        let bands = self
            .windows
            .iter()
            .map(|w| {
                let mut band: Vec<Complex64> = spec.iter().zip(w).map(|(z, &wv)| z * wv).collect();
                self.fft.inverse_inplace(&mut band);
                real_part_checked(self.dims, band, reference)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SubbandStack { dims: self.dims, bands })
    }

    pub fn recompose(&self, s: &SubbandStack) -> Result<Volume4> {
        self.dims.check_same(&s.dims)?;
        if s.bands.len() != self.scales + 1 {
            return Err(Error::DimensionMismatch { expected: vec![self.scales + 1], got: vec![s.bands.len()] });
        }
        let mut acc = vec![Complex64::default(); self.dims.len()];
        let mut buf = vec![Complex64::default(); self.dims.len()];
        let reference = s.bands.iter().map(Volume4::max_abs).fold(0.0, f64::max);
        for (band, w) in s.bands.iter().zip(&self.windows) {
            self.dims.check_same(&band.dims)?;
            for (b, &x) in buf.iter_mut().zip(&band.data) {
                *b = x.into();
            }
            self.fft.forward_inplace(&mut buf);
            for ((a, b), &wv) in acc.iter_mut().zip(&buf).zip(w) {
                *a += b * wv;
            }
        }
        self.fft.inverse_inplace(&mut acc);
        real_part_checked(self.dims, acc, reference)
    }
}

pub(crate) fn lowpass_cutoff(scales: usize, j: usize) -> f64 {
    0.5 * 0.25f64.powi((scales - 1 - j) as i32)
}
