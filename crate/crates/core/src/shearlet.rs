//! Discrete cylindrical shearlet transform: forward, inverse and exact adjoint.
//!
//! Coefficients of scale `j >= 1` are `F^-1(f^ W_j V_{j,l}^(d))`; the coarse band
//! is `F^-1(f^ W_0)`. Because the directional filters sum to one per scale, the
//! inverse only has to add the bands of each scale before recomposing the
//! pyramid, while the adjoint filters every band once more.

use std::fs;
use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dirfilters::{DirFilterBank, ShearIndex, WedgeLayout};
use crate::error::{Error, Result};
use crate::operator::{check_len, LinearOperator, SparsifyingTransform};
use crate::pyramid::{TransformMode, WindowBank};
use crate::volume::{check_residue, max_abs, GridDims, Volume4};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShearletConfig {
    /// Wedge layout per directional scale, coarsest first; its length is the scale count `J`.
    pub layouts: Vec<WedgeLayout>,
    #[serde(default)]
    pub mode: TransformMode,
}

impl ShearletConfig {
    pub fn odd(radii: &[usize]) -> Self {
        Self { layouts: radii.iter().map(|&l| WedgeLayout::Odd(l)).collect(), mode: TransformMode::Cylindrical4d }
    }

    pub fn scales(&self) -> usize {
        self.layouts.len()
    }
}

#[derive(Clone, Debug)]
pub struct ShearletSystem {
    config: ShearletConfig,
    windows: WindowBank,
    filters: DirFilterBank,
    bands: Vec<BandKey>,
    /// (scale, position within the scale's filter list) per band; scale 0 is the coarse band
    band_map: Vec<(usize, usize)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BandKey {
    Coarse,
    Detail(ShearIndex),
}

impl std::fmt::Display for BandKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BandKey::Coarse => write!(f, "coarse"),
            BandKey::Detail(idx) => write!(f, "{idx}"),
        }
    }
}

/// All coefficient bands, stored back to back; band 0 is the coarse band.
#[derive(Clone, Debug, PartialEq)]
pub struct CoeffSet {
    pub dims: GridDims,
    pub bands: Vec<BandKey>,
    pub data: Vec<f64>,
}

impl CoeffSet {
    pub fn zeros(dims: GridDims, bands: Vec<BandKey>) -> Self {
        let data = vec![0.0; dims.len() * bands.len()];
        Self { dims, bands, data }
    }

    pub fn band(&self, i: usize) -> &[f64] {
        let n = self.dims.len();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn band_mut(&mut self, i: usize) -> &mut [f64] {
        let n = self.dims.len();
        &mut self.data[i * n..(i + 1) * n]
    }

    pub fn coarse(&self) -> &[f64] {
        self.band(0)
    }

    pub fn detail(&self, idx: &ShearIndex) -> Option<&[f64]> {
        let pos = self.bands.iter().position(|b| *b == BandKey::Detail(*idx))?;
        Some(self.band(pos))
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dot(&self, other: &CoeffSet) -> f64 {
        crate::volume::dot(&self.data, &other.data)
    }

    /// Writes one raw volume per band plus `manifest.json` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut entries = Vec::with_capacity(self.bands.len());
        for (i, key) in self.bands.iter().enumerate() {
            let name = format!("band_{i:04}_{key}");
            let vol = Volume4 { dims: self.dims, data: self.band(i).to_vec() };
            vol.write_raw(&dir.join(&name))?;
            entries.push(ManifestEntry { band: *key, file: format!("{name}.raw") });
        }
        let manifest = CoeffManifest { dims: self.dims.n.to_vec(), bands: entries };
        fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let manifest: CoeffManifest = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
        let d = &manifest.dims;
        let dims = GridDims::new(d[0], d[1], d[2], d[3])?;
        let mut data = Vec::with_capacity(dims.len() * manifest.bands.len());
        let mut bands = Vec::with_capacity(manifest.bands.len());
        for e in &manifest.bands {
            let vol = Volume4::read_raw(&dir.join(e.file.trim_end_matches(".raw")))?;
            dims.check_same(&vol.dims)?;
            data.extend_from_slice(&vol.data);
            bands.push(e.band);
        }
        Ok(Self { dims, bands, data })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    band: BandKey,
    file: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct CoeffManifest {
    dims: Vec<usize>,
    bands: Vec<ManifestEntry>,
}

impl ShearletSystem {
    pub fn build(dims: GridDims, config: ShearletConfig) -> Result<Self> {
        let windows = WindowBank::build_with_mode(dims, config.scales(), config.mode)?;
        let filters = DirFilterBank::build(dims, &config.layouts)?;
        let mut bands = vec![BandKey::Coarse];
        let mut band_map = vec![(0, 0)];
        for j in 1..=config.scales() {
            for (local, (idx, _)) in filters.scale_filters(j).iter().enumerate() {
                bands.push(BandKey::Detail(*idx));
                band_map.push((j, local));
            }
        }
        Ok(Self { config, windows, filters, bands, band_map })
    }

    pub fn dims(&self) -> GridDims {
        self.windows.dims()
    }

    pub fn config(&self) -> &ShearletConfig {
        &self.config
    }

    pub fn windows(&self) -> &WindowBank {
        &self.windows
    }

    pub fn filters(&self) -> &DirFilterBank {
        &self.filters
    }

    pub fn band_keys(&self) -> &[BandKey] {
        &self.bands
    }

    pub fn coeff_count(&self) -> usize {
        self.bands.len() * self.dims().len()
    }

    fn spectrum(&self, f: &[f64]) -> Vec<Complex64> {
        let mut spec: Vec<Complex64> = f.iter().map(|&x| x.into()).collect();
        self.windows.fft().forward_inplace(&mut spec);
        spec
    }

    /// Combines `spec * W_j V` of band `b` into `out`, one temporal frequency at a time.
    #[inline]
    fn apply_response(&self, b: usize, spec: &[Complex64], out: &mut [Complex64], put: impl Fn(&mut Complex64, Complex64)) {
        let m = self.dims().frame_len();
        match self.band_map[b] {
            (0, _) => {
                for ((o, z), &w) in out.iter_mut().zip(spec).zip(self.windows.window(0)) {
                    put(o, z * w);
                }
            }
            (j, local) => {
                let v = &self.filters.scale_filters(j)[local].1;
                let w = self.windows.window(j);
                for ((o, z), w) in out.chunks_exact_mut(m).zip(spec.chunks_exact(m)).zip(w.chunks_exact(m)) {
                    for (((o, z), &w), &v) in o.iter_mut().zip(z).zip(w).zip(v) {
                        put(o, z * (w * v));
                    }
                }
            }
        }
    }

    pub fn forward(&self, f: &Volume4) -> Result<CoeffSet> {
        self.dims().check_same(&f.dims)?;
        let n = f.dims.len();
        let spec = self.spectrum(&f.data);
        let reference = f.max_abs();
        let mut out = CoeffSet::zeros(f.dims, self.bands.clone());
        let fft = self.windows.fft();
        out.data
            .par_chunks_mut(n)
            .enumerate()
            .map(|(b, dst)| {
                let mut buf = vec![Complex64::default(); n];
                self.apply_response(b, &spec, &mut buf, |o, x| *o = x);
                fft.inverse_inplace(&mut buf);
                write_real(&buf, dst, reference)
            })
            .collect::<Result<Vec<()>>>()?;
        Ok(out)
    }

    fn check_coeffs(&self, c: &CoeffSet) -> Result<()> {
        self.dims().check_same(&c.dims)?;
        if c.bands != self.bands {
            let missing = self.bands.iter().find(|b| !c.bands.contains(b));
            return Err(Error::MissingBand(match missing {
                Some(b) => b.to_string(),
                None => "band order differs from the system".into(),
            }));
        }
        Ok(())
    }

    /// Left inverse: sum the bands of each scale, then recompose the pyramid.
    pub fn inverse(&self, c: &CoeffSet) -> Result<Volume4> {
        self.check_coeffs(c)?;
        Ok(Volume4 { dims: c.dims, data: self.inverse_flat(&c.data)? })
    }

    fn inverse_flat(&self, c: &[f64]) -> Result<Vec<f64>> {
        let n = self.dims().len();
        let mut scale_sums = vec![vec![0.0; n]; self.config.scales() + 1];
        for (band, &(j, _)) in c.chunks_exact(n).zip(&self.band_map) {
            for (s, &x) in scale_sums[j].iter_mut().zip(band) {
                *s += x;
            }
        }
        let mut acc = vec![Complex64::default(); n];
        for (j, sum) in scale_sums.iter().enumerate() {
            let spec = self.spectrum(sum);
            for ((a, z), &w) in acc.iter_mut().zip(&spec).zip(self.windows.window(j)) {
                *a += z * w;
            }
        }
        self.windows.fft().inverse_inplace(&mut acc);
        let mut out = vec![0.0; n];
        write_real(&acc, &mut out, max_abs(c))?;
        Ok(out)
    }

    /// Exact adjoint of [`forward`](Self::forward).
    pub fn adjoint(&self, u: &CoeffSet) -> Result<Volume4> {
        self.check_coeffs(u)?;
        Ok(Volume4 { dims: u.dims, data: self.adjoint_flat(&u.data)? })
    }

    fn adjoint_flat(&self, u: &[f64]) -> Result<Vec<f64>> {
        let n = self.dims().len();
        let fft = self.windows.fft();
        let mut acc = vec![Complex64::default(); n];
        let mut buf = vec![Complex64::default(); n];
        for (b, band) in u.chunks_exact(n).enumerate() {
            for (z, &x) in buf.iter_mut().zip(band) {
                *z = x.into();
            }
            fft.forward_inplace(&mut buf);
            self.apply_response(b, &buf, &mut acc, |a, x| *a += x);
        }
        fft.inverse_inplace(&mut acc);
        let mut out = vec![0.0; n];
        write_real(&acc, &mut out, max_abs(u))?;
        Ok(out)
    }

    /// Fourier multiplier of `S* S`: `W_0^2 + sum_j W_j^2 sum_{d,l} V^2`.
    pub fn gram_multiplier(&self) -> Vec<f64> {
        let dims = self.dims();
        let m = dims.frame_len();
        let per_scale: Vec<Vec<f64>> = (1..=self.config.scales())
            .map(|j| {
                let mut acc = vec![0.0; m];
                for (_, v) in self.filters.scale_filters(j) {
                    for (a, &x) in acc.iter_mut().zip(v) {
                        *a += x * x;
                    }
                }
                acc
            })
            .collect();
        (0..dims.len())
            .map(|p| {
                let w0 = self.windows.window(0)[p];
                w0 * w0
                    + per_scale
                        .iter()
                        .enumerate()
                        .map(|(i, v2)| self.windows.window(i + 1)[p].powi(2) * v2[p % m])
                        .sum::<f64>()
            })
            .collect()
    }

    /// Exact lower and upper frame bounds of `S* S`.
    pub fn frame_bounds(&self) -> (f64, f64) {
        self.gram_multiplier().iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &x| (lo.min(x), hi.max(x)))
    }
}

fn write_real(buf: &[Complex64], dst: &mut [f64], reference: f64) -> Result<()> {
    check_residue(buf, reference)?;
    for (d, z) in dst.iter_mut().zip(buf) {
        *d = z.re;
    }
    Ok(())
}

impl LinearOperator for ShearletSystem {
    fn input_len(&self) -> usize {
        self.dims().len()
    }

    fn output_len(&self) -> usize {
        self.coeff_count()
    }

    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let v = Volume4 { dims: self.dims(), data: x.to_vec() };
        Ok(self.forward(&v)?.data)
    }

    fn apply_adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_len(self.coeff_count(), y.len())?;
        self.adjoint_flat(y)
    }
}

impl SparsifyingTransform for ShearletSystem {
    fn coarse_len(&self) -> usize {
        self.dims().len()
    }

    fn synthesize(&self, c: &[f64]) -> Result<Vec<f64>> {
        check_len(self.coeff_count(), c.len())?;
        self.inverse_flat(c)
    }

    fn upper_frame_bound(&self) -> f64 {
        self.frame_bounds().1
    }
}
