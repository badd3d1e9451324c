//! Grid containers and the DFT convention shared by every transform.
//!
//! Storage is axis-1 fastest: sample `(i1, i2, i3, i4)` lives at
//! `i1 + n1 * (i2 + n2 * (i3 + n3 * i4))`. Axes 1-3 are spatial, axis 4 is time.
//! Frequency index `k` in `{-n/2, ..., n/2 - 1}` is stored at `k mod n`.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridDims {
    pub n: [usize; 4],
}

impl GridDims {
    pub fn new(n1: usize, n2: usize, n3: usize, n4: usize) -> Result<Self> {
        let n = [n1, n2, n3, n4];
        if n.iter().any(|&k| k < 2) {
            return Err(Error::InvalidDims { dims: n.to_vec(), reason: "every axis needs at least 2 samples".into() });
        }
        if n[..3].iter().any(|&k| k % 2 != 0) {
            return Err(Error::InvalidDims { dims: n.to_vec(), reason: "spatial axes must have even length".into() });
        }
        Ok(Self { n })
    }

    pub fn len(&self) -> usize {
        self.n.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spatial(&self) -> [usize; 3] {
        [self.n[0], self.n[1], self.n[2]]
    }

    pub fn frame_len(&self) -> usize {
        self.n[0] * self.n[1] * self.n[2]
    }

    pub fn frames(&self) -> usize {
        self.n[3]
    }

    #[inline]
    pub fn index(&self, i: [usize; 4]) -> usize {
        i[0] + self.n[0] * (i[1] + self.n[1] * (i[2] + self.n[2] * i[3]))
    }

    #[inline]
    pub fn unravel(&self, mut idx: usize) -> [usize; 4] {
        let mut out = [0; 4];
        for (a, o) in out.iter_mut().enumerate() {
            *o = idx % self.n[a];
            idx /= self.n[a];
        }
        out
    }

    /// Signed frequency of storage index `i` along axis `a`.
    #[inline]
    pub fn freq(&self, a: usize, i: usize) -> i64 {
        let n = self.n[a] as i64;
        let i = i as i64;
        if i >= (n + 1) / 2 { i - n } else { i }
    }

    pub fn check_same(&self, other: &GridDims) -> Result<()> {
        if self != other {
            return Err(Error::DimensionMismatch { expected: self.n.to_vec(), got: other.n.to_vec() });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Volume4 {
    pub dims: GridDims,
    pub data: Vec<f64>,
}

impl Volume4 {
    pub fn zeros(dims: GridDims) -> Self {
        Self { dims, data: vec![0.0; dims.len()] }
    }

    pub fn from_vec(dims: GridDims, data: Vec<f64>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::DimensionMismatch { expected: vec![dims.len()], got: vec![data.len()] });
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("volume contains non-finite samples".into()));
        }
        Ok(Self { dims, data })
    }

    pub fn from_fn(dims: GridDims, mut f: impl FnMut([usize; 4]) -> f64) -> Self {
        let data = (0..dims.len()).map(|i| f(dims.unravel(i))).collect();
        Self { dims, data }
    }

    pub fn frame(&self, t: usize) -> Volume3 {
        let m = self.dims.frame_len();
        Volume3 { dims: self.dims.spatial(), data: self.data[t * m..(t + 1) * m].to_vec() }
    }

    pub fn from_frames(frames: &[Volume3]) -> Result<Self> {
        let first = frames.first().ok_or_else(|| Error::InvalidParameter("no frames".into()))?;
        let [n1, n2, n3] = first.dims;
        let dims = GridDims::new(n1, n2, n3, frames.len())?;
        let mut data = Vec::with_capacity(dims.len());
        for f in frames {
            if f.dims != first.dims {
                return Err(Error::DimensionMismatch { expected: first.dims.to_vec(), got: f.dims.to_vec() });
            }
            data.extend_from_slice(&f.data);
        }
        Ok(Self { dims, data })
    }

    pub fn norm2(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn dot(&self, other: &Volume4) -> f64 {
        dot(&self.data, &other.data)
    }

    /// Writes `<stem>.raw` (little-endian f32) and `<stem>.json`.
    pub fn write_raw(&self, stem: &Path) -> Result<()> {
        write_f32_raw(&stem.with_extension("raw"), &self.data)?;
        let sidecar = RawSidecar { dims: self.dims.n.to_vec(), dtype: "f32".into(), order: "axis1-fastest".into() };
        fs::write(stem.with_extension("json"), serde_json::to_vec_pretty(&sidecar)?)?;
        Ok(())
    }

    pub fn read_raw(stem: &Path) -> Result<Self> {
        let sidecar: RawSidecar = serde_json::from_slice(&fs::read(stem.with_extension("json"))?)?;
        if sidecar.dtype != "f32" || sidecar.order != "axis1-fastest" || sidecar.dims.len() != 4 {
            return Err(Error::InvalidParameter(format!("unsupported raw sidecar {sidecar:?}")));
        }
        let d = &sidecar.dims;
        let dims = GridDims::new(d[0], d[1], d[2], d[3])?;
        let data = read_f32_raw(&stem.with_extension("raw"))?;
        Self::from_vec(dims, data)
    }
}

/// Sidecar describing a raw float volume.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RawSidecar {
    pub dims: Vec<usize>,
    pub dtype: String,
    pub order: String,
}

pub fn write_f32_raw(path: &Path, data: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(data.len() * 4);
    for &x in data {
        bytes.extend_from_slice(&(x as f32).to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_f32_raw(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path)?;
    if bytes.len() % 4 != 0 {
        return Err(Error::InvalidParameter(format!("{} is not a whole number of f32 samples", path.display())));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect())
}

/// A single spatial frame, axis-1 fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume3 {
    pub dims: [usize; 3],
    pub data: Vec<f64>,
}

impl Volume3 {
    pub fn zeros(dims: [usize; 3]) -> Self {
        Self { dims, data: vec![0.0; dims.iter().product()] }
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum4 {
    pub dims: GridDims,
    pub data: Vec<Complex64>,
}

impl Spectrum4 {
    pub fn norm2(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Strided lines copied out together for the FFT along a non-contiguous axis.
const LINE_BATCH: usize = 32;

/// Cached per-axis FFT plans for one grid.
#[derive(Clone)]
pub struct Fft4 {
    dims: GridDims,
    forward: [Arc<dyn Fft<f64>>; 4],
    inverse: [Arc<dyn Fft<f64>>; 4],
}

impl std::fmt::Debug for Fft4 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft4").field("dims", &self.dims).finish()
    }
}

impl Fft4 {
    pub fn new(dims: GridDims) -> Self {
        let mut planner = FftPlanner::new();
        let forward = dims.n.map(|n| planner.plan_fft_forward(n));
        let inverse = dims.n.map(|n| planner.plan_fft_inverse(n));
        Self { dims, forward, inverse }
    }

    pub fn dims(&self) -> GridDims {
        self.dims
    }

    /// Unnormalized forward transform in place.
    pub fn forward_inplace(&self, buf: &mut [Complex64]) {
        self.run(buf, &self.forward, 4);
    }

    /// Inverse transform in place, including the 1/N factor.
    pub fn inverse_inplace(&self, buf: &mut [Complex64]) {
        self.run(buf, &self.inverse, 4);
        let scale = 1.0 / self.dims.len() as f64;
        for z in buf.iter_mut() {
            *z *= scale;
        }
    }

    /// Forward transform along the three spatial axes only.
    pub fn forward_spatial_inplace(&self, buf: &mut [Complex64]) {
        self.run(buf, &self.forward, 3);
    }

    pub fn inverse_spatial_inplace(&self, buf: &mut [Complex64]) {
        self.run(buf, &self.inverse, 3);
        let scale = 1.0 / self.dims.frame_len() as f64;
        for z in buf.iter_mut() {
            *z *= scale;
        }
    }

    fn run(&self, buf: &mut [Complex64], plans: &[Arc<dyn Fft<f64>>; 4], naxes: usize) {
        assert_eq!(buf.len(), self.dims.len());
        let n = self.dims.n;
        // axis 1 is contiguous
        plans[0].process(buf);
        let mut lines = Vec::new();
        let mut scratch = Vec::new();
        let mut stride = n[0];
        for a in 1..naxes {
            let len = n[a];
            let block = stride * len;
            // gather a few strided lines at a time so the working set stays in cache
            let batch = stride.min(LINE_BATCH);
            lines.resize(batch * len, Complex64::default());
            scratch.resize(plans[a].get_inplace_scratch_len(), Complex64::default());
            for chunk in buf.chunks_exact_mut(block) {
                for s0 in (0..stride).step_by(batch) {
                    let width = batch.min(stride - s0);
                    let lines = &mut lines[..width * len];
                    for k in 0..len {
                        let row = &chunk[k * stride + s0..k * stride + s0 + width];
                        for (b, &z) in row.iter().enumerate() {
                            lines[b * len + k] = z;
                        }
                    }
                    plans[a].process_with_scratch(lines, &mut scratch);
                    for k in 0..len {
                        let row = &mut chunk[k * stride + s0..k * stride + s0 + width];
                        for (b, z) in row.iter_mut().enumerate() {
                            *z = lines[b * len + k];
                        }
                    }
                }
            }
            stride = block;
        }
    }

    pub fn dft(&self, v: &Volume4) -> Result<Spectrum4> {
        self.dims.check_same(&v.dims)?;
        let mut data: Vec<Complex64> = v.data.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.forward_inplace(&mut data);
        Ok(Spectrum4 { dims: v.dims, data })
    }

    pub fn idft(&self, s: &Spectrum4) -> Result<Volume4> {
        self.dims.check_same(&s.dims)?;
        let mut data = s.data.clone();
        let reference = s.data.iter().fold(0.0f64, |m, z| m.max(z.norm()));
        self.inverse_inplace(&mut data);
        real_part_checked(s.dims, data, reference)
    }
}

/// Maximum imaginary part relative to the largest magnitude, as used by [`real_part_checked`].
pub const IMAG_RESIDUE_TOL: f64 = 1e-6;

/// Absolute floor of the residue bound, relative to the magnitude of the transform input.
pub const IMAG_RESIDUE_FLOOR: f64 = 1e-12;

/// Fails if `max |im| > 1e-6 max |z| + 1e-12 reference`, where `reference` is the
/// largest magnitude of the data the result was computed from.
pub(crate) fn check_residue(data: &[Complex64], reference: f64) -> Result<()> {
    let (residue, scale) = imag_residue(data);
    let bound = IMAG_RESIDUE_TOL * scale + IMAG_RESIDUE_FLOOR * reference;
    if residue > bound {
        return Err(Error::ImaginaryResidue { residue, bound });
    }
    Ok(())
}

pub(crate) fn max_abs(data: &[f64]) -> f64 {
    data.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

pub(crate) fn real_part_checked(dims: GridDims, data: Vec<Complex64>, reference: f64) -> Result<Volume4> {
    let (residue, scale) = imag_residue(&data);
    let bound = IMAG_RESIDUE_TOL * scale + IMAG_RESIDUE_FLOOR * reference;
    if residue > bound {
        return Err(Error::ImaginaryResidue { residue, bound });
    }
    Ok(Volume4 { dims, data: data.into_iter().map(|z| z.re).collect() })
}

/// Returns `(max |im|, max |z|)`.
pub fn imag_residue(data: &[Complex64]) -> (f64, f64) {
    data.iter().fold((0.0f64, 0.0f64), |(r, m), z| (r.max(z.im.abs()), m.max(z.norm())))
}

/// Forward DFT with the unnormalized convention.
pub fn dft(v: &Volume4) -> Result<Spectrum4> {
    Fft4::new(v.dims).dft(v)
}

/// Inverse DFT carrying the 1/N factor. Fails if the result is not real.
pub fn idft(s: &Spectrum4) -> Result<Volume4> {
    Fft4::new(s.dims).idft(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_volume(dims: GridDims, seed: u64) -> Volume4 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Volume4::from_fn(dims, |_| rng.random_range(-1.0..1.0))
    }

    // O(N^2) direct summation
    fn naive_dft(v: &Volume4) -> Vec<Complex64> {
        let d = v.dims;
        (0..d.len())
            .map(|k| {
                let kk = d.unravel(k);
                let mut acc = Complex64::new(0.0, 0.0);
                for (x, &val) in v.data.iter().enumerate() {
                    let xx = d.unravel(x);
                    let phase: f64 = (0..4).map(|a| (kk[a] * xx[a]) as f64 / d.n[a] as f64).sum();
                    acc += val * Complex64::from_polar(1.0, -2.0 * PI * phase);
                }
                acc
            })
            .collect()
    }

    #[test]
    fn rejects_odd_spatial_dims() {
        assert!(GridDims::new(5, 4, 4, 2).is_err());
        assert!(GridDims::new(4, 4, 4, 1).is_err());
        assert!(GridDims::new(4, 4, 4, 3).is_ok());
    }

    #[test]
    fn impulse_gives_flat_spectrum() {
        let dims = GridDims::new(4, 4, 4, 2).unwrap();
        let mut v = Volume4::zeros(dims);
        v.data[0] = 1.0;
        let s = dft(&v).unwrap();
        for z in &s.data {
            assert!((z - Complex64::new(1.0, 0.0)).norm() < 1e-14);
        }
    }

    #[test]
    fn constant_goes_to_dc() {
        let dims = GridDims::new(4, 6, 4, 3).unwrap();
        let v = Volume4 { dims, data: vec![2.5; dims.len()] };
        let s = dft(&v).unwrap();
        assert!((s.data[0].re - 2.5 * dims.len() as f64).abs() < 1e-10);
        assert!(s.data[1..].iter().all(|z| z.norm() < 1e-10));
    }

    #[test]
    fn matches_direct_summation() {
        let dims = GridDims::new(4, 4, 4, 2).unwrap();
        let v = random_volume(dims, 7);
        let fast = dft(&v).unwrap();
        let slow = naive_dft(&v);
        let scale = slow.iter().map(|z| z.norm()).fold(0.0, f64::max);
        for (a, b) in fast.data.iter().zip(&slow) {
            assert!((a - b).norm() <= 1e-12 * scale);
        }
    }

    #[test]
    fn spatial_only_transform_leaves_time_axis() {
        let dims = GridDims::new(4, 4, 2, 3).unwrap();
        let v = random_volume(dims, 3);
        let fft = Fft4::new(dims);
        let mut buf: Vec<Complex64> = v.data.iter().map(|&x| x.into()).collect();
        fft.forward_spatial_inplace(&mut buf);
        for t in 0..3 {
            let frame = Volume4 {
                dims: GridDims::new(4, 4, 2, 2).unwrap(),
                data: [v.frame(t).data.clone(), vec![0.0; 32]].concat(),
            };
            // a zero second frame turns the 4D DFT into the 3D DFT of the first
            let s = dft(&frame).unwrap();
            for i in 0..32 {
                assert!((s.data[i] - buf[t * 32 + i]).norm() < 1e-12 * 4.0);
            }
        }
        fft.inverse_spatial_inplace(&mut buf);
        for (z, x) in buf.iter().zip(&v.data) {
            assert!((z.re - x).abs() < 1e-13);
        }
    }

    #[test]
    fn zero_spectrum_inverts_to_zero() {
        let dims = GridDims::new(4, 4, 4, 2).unwrap();
        let s = Spectrum4 { dims, data: vec![Complex64::default(); dims.len()] };
        assert!(idft(&s).unwrap().data.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn hermitian_spectrum_is_real() {
        let dims = GridDims::new(4, 6, 4, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let raw: Vec<Complex64> =
            (0..dims.len()).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        let neg = |i: usize| {
            let k = dims.unravel(i);
            dims.index([0, 1, 2, 3].map(|a| (dims.n[a] - k[a]) % dims.n[a]))
        };
        let data = (0..dims.len()).map(|i| 0.5 * (raw[i] + raw[neg(i)].conj())).collect();
        let s = Spectrum4 { dims, data };
        let mut buf = s.data.clone();
        Fft4::new(dims).inverse_inplace(&mut buf);
        assert!(imag_residue(&buf).0 < 1e-12);
        assert!(idft(&s).is_ok());
    }

    #[test]
    fn non_hermitian_spectrum_is_rejected() {
        let dims = GridDims::new(4, 4, 4, 2).unwrap();
        let mut data = vec![Complex64::default(); dims.len()];
        data[1] = Complex64::new(1.0, 0.0);
        assert!(matches!(idft(&Spectrum4 { dims, data }), Err(Error::ImaginaryResidue { .. })));
    }

    #[test]
    fn raw_file_round_trip() {
        let dims = GridDims::new(4, 2, 2, 3).unwrap();
        let v = Volume4::from_fn(dims, |i| (i[0] + 10 * i[3]) as f64 * 0.5);
        let dir = std::env::temp_dir().join(format!("cylshear-raw-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let stem = dir.join("vol");
        v.write_raw(&stem).unwrap();
        assert_eq!(fs::metadata(stem.with_extension("raw")).unwrap().len(), dims.len() as u64 * 4);
        let back = Volume4::read_raw(&stem).unwrap();
        assert_eq!(back, v);
        fs::remove_dir_all(dir).ok();
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn round_trip_parseval_linearity(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
                let dims = GridDims::new(4, 2, 6, 3).unwrap();
                let v = random_volume(dims, seed);
                let w = random_volume(dims, seed.wrapping_add(1));
                let fft = Fft4::new(dims);
                let sv = fft.dft(&v).unwrap();
                let back = fft.idft(&sv).unwrap();
                let err = back.data.iter().zip(&v.data).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
                prop_assert!(err <= 1e-10 * v.max_abs());

                let lhs = sv.norm2().powi(2);
                let rhs = dims.len() as f64 * v.norm2().powi(2);
                prop_assert!((lhs - rhs).abs() <= 1e-10 * rhs);

                let comb = Volume4 { dims, data: v.data.iter().zip(&w.data).map(|(x, y)| a * x + b * y).collect() };
                let sc = fft.dft(&comb).unwrap();
                let sw = fft.dft(&w).unwrap();
                for i in 0..dims.len() {
                    let expect = sv.data[i] * a + sw.data[i] * b;
                    prop_assert!((sc.data[i] - expect).norm() <= 1e-10 * (1.0 + expect.norm()));
                }
            }
        }
    }
}
