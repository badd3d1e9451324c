//! Separable periodic Daubechies-2 wavelet transform in four dimensions.
//!
//! Each level filters the current approximation block along all four axes,
//! giving one approximation and 15 detail orientations. Coefficients are kept
//! in a canonical flat order: the final approximation block first, then for
//! each level from coarsest to finest the 15 detail blocks, orientation `o`
//! (bit `a` set = highpass along axis `a`) in increasing order, each block
//! flattened axis-1 fastest.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::{check_len, LinearOperator, SparsifyingTransform};
use crate::volume::{GridDims, Volume4};

/// db2 lowpass analysis taps.
pub const DB2_LOWPASS: [f64; 4] = [
    0.482_962_913_144_534_1,
    0.836_516_303_737_807_9,
    0.224_143_868_042_013_4,
    -0.129_409_522_551_260_4,
];

/// Quadrature-mirror highpass `g[k] = (-1)^k h[3 - k]`.
pub const DB2_HIGHPASS: [f64; 4] = [DB2_LOWPASS[3], -DB2_LOWPASS[2], DB2_LOWPASS[1], -DB2_LOWPASS[0]];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaveletCoeffs {
    pub dims: GridDims,
    pub levels: usize,
    /// Canonical order, see the module docs.
    pub data: Vec<f64>,
}

impl WaveletCoeffs {
    /// Length of the approximation block (the coarse band).
    pub fn approx_len(&self) -> usize {
        approx_len(&self.dims, self.levels)
    }
}

fn approx_len(dims: &GridDims, levels: usize) -> usize {
    dims.n.iter().map(|n| n >> levels).product()
}

pub fn max_levels(dims: &GridDims) -> usize {
    dims.n.iter().map(|n| n.trailing_zeros() as usize).min().unwrap()
}

fn check_levels(dims: &GridDims, levels: usize) -> Result<()> {
    if levels == 0 || dims.n.iter().any(|n| n % (1 << levels) != 0) {
        return Err(Error::InvalidParameter(format!(
            "dims {:?} are not divisible by 2^{levels} (maximum level count {})",
            dims.n,
            max_levels(dims)
        )));
    }
    Ok(())
}

fn analyze_line(src: &[f64], dst: &mut [f64]) {
    let n = src.len();
    let half = n / 2;
    for i in 0..half {
        let (mut a, mut d) = (0.0, 0.0);
        for k in 0..4 {
            let x = src[(2 * i + k) % n];
            a += DB2_LOWPASS[k] * x;
            d += DB2_HIGHPASS[k] * x;
        }
        dst[i] = a;
        dst[half + i] = d;
    }
}

fn synthesize_line(src: &[f64], dst: &mut [f64]) {
    let n = src.len();
    let half = n / 2;
    dst.iter_mut().for_each(|x| *x = 0.0);
    for i in 0..half {
        let (a, d) = (src[i], src[half + i]);
        for k in 0..4 {
            dst[(2 * i + k) % n] += DB2_LOWPASS[k] * a + DB2_HIGHPASS[k] * d;
        }
    }
}

/// Applies `op` along `axis` to every line of the sub-block `[0, ext)` of `buf`.
fn along_axis(buf: &mut [f64], dims: &[usize; 4], ext: &[usize; 4], axis: usize, op: fn(&[f64], &mut [f64])) {
    let strides = [1, dims[0], dims[0] * dims[1], dims[0] * dims[1] * dims[2]];
    let len = ext[axis];
    let mut line = vec![0.0; len];
    let mut out = vec![0.0; len];
    let others: Vec<usize> = (0..4).filter(|&a| a != axis).collect();
    for i in 0..ext[others[0]] {
        for j in 0..ext[others[1]] {
            for k in 0..ext[others[2]] {
                let base = i * strides[others[0]] + j * strides[others[1]] + k * strides[others[2]];
                for (t, l) in line.iter_mut().enumerate() {
                    *l = buf[base + t * strides[axis]];
                }
                op(&line, &mut out);
                for (t, &o) in out.iter().enumerate() {
                    buf[base + t * strides[axis]] = o;
                }
            }
        }
    }
}

/// Visits the blocks of the Mallat layout in canonical order, yielding (origin, extent).
fn canonical_blocks(dims: &GridDims, levels: usize) -> Vec<([usize; 4], [usize; 4])> {
    let coarse = dims.n.map(|n| n >> levels);
    let mut blocks = vec![([0; 4], coarse)];
    for level in (1..=levels).rev() {
        let ext = dims.n.map(|n| n >> level);
        for o in 1..16usize {
            let origin = [0, 1, 2, 3].map(|a| if o >> a & 1 == 1 { ext[a] } else { 0 });
            blocks.push((origin, ext));
        }
    }
    blocks
}

fn gather(mallat: &[f64], dims: &GridDims, levels: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(mallat.len());
    for (o, e) in canonical_blocks(dims, levels) {
        for l in 0..e[3] {
            for k in 0..e[2] {
                for j in 0..e[1] {
                    let row = dims.index([o[0], o[1] + j, o[2] + k, o[3] + l]);
                    out.extend_from_slice(&mallat[row..row + e[0]]);
                }
            }
        }
    }
    out
}

fn scatter(flat: &[f64], dims: &GridDims, levels: usize) -> Vec<f64> {
    let mut mallat = vec![0.0; flat.len()];
    let mut pos = 0;
    for (o, e) in canonical_blocks(dims, levels) {
        for l in 0..e[3] {
            for k in 0..e[2] {
                for j in 0..e[1] {
                    let row = dims.index([o[0], o[1] + j, o[2] + k, o[3] + l]);
                    mallat[row..row + e[0]].copy_from_slice(&flat[pos..pos + e[0]]);
                    pos += e[0];
                }
            }
        }
    }
    mallat
}

pub fn dwt4_forward(f: &Volume4, levels: usize) -> Result<WaveletCoeffs> {
    check_levels(&f.dims, levels)?;
    let mut buf = f.data.clone();
    for level in 0..levels {
        let ext = f.dims.n.map(|n| n >> level);
        for axis in 0..4 {
            along_axis(&mut buf, &f.dims.n, &ext, axis, analyze_line);
        }
    }
    Ok(WaveletCoeffs { dims: f.dims, levels, data: gather(&buf, &f.dims, levels) })
}

pub fn dwt4_inverse(c: &WaveletCoeffs) -> Result<Volume4> {
    check_levels(&c.dims, c.levels)?;
    check_len(c.dims.len(), c.data.len())?;
    let mut buf = scatter(&c.data, &c.dims, c.levels);
    for level in (0..c.levels).rev() {
        let ext = c.dims.n.map(|n| n >> level);
        for axis in (0..4).rev() {
            along_axis(&mut buf, &c.dims.n, &ext, axis, synthesize_line);
        }
    }
    Ok(Volume4 { dims: c.dims, data: buf })
}

/// The transform as a sparsifying operator on flat vectors.
#[derive(Clone, Copy, Debug)]
pub struct Dwt4 {
    pub dims: GridDims,
    pub levels: usize,
}

impl Dwt4 {
    pub fn new(dims: GridDims, levels: usize) -> Result<Self> {
        check_levels(&dims, levels)?;
        Ok(Self { dims, levels })
    }
}

impl LinearOperator for Dwt4 {
    fn input_len(&self) -> usize {
        self.dims.len()
    }

    fn output_len(&self) -> usize {
        self.dims.len()
    }

    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.dims.len(), x.len())?;
        let v = Volume4 { dims: self.dims, data: x.to_vec() };
        Ok(dwt4_forward(&v, self.levels)?.data)
    }

    fn apply_adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        let c = WaveletCoeffs { dims: self.dims, levels: self.levels, data: y.to_vec() };
        Ok(dwt4_inverse(&c)?.data)
    }
}

impl SparsifyingTransform for Dwt4 {
    fn coarse_len(&self) -> usize {
        approx_len(&self.dims, self.levels)
    }

    fn synthesize(&self, c: &[f64]) -> Result<Vec<f64>> {
        self.apply_adjoint(c)
    }

    fn upper_frame_bound(&self) -> f64 {
        1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_volume(dims: GridDims, seed: u64) -> Volume4 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Volume4::from_fn(dims, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn db2_taps_satisfy_the_defining_conditions() {
        let h = DB2_LOWPASS;
        let s3 = 3f64.sqrt();
        let exact = [1.0 + s3, 3.0 + s3, 3.0 - s3, 1.0 - s3].map(|x| x / (4.0 * 2f64.sqrt()));
        for k in 0..4 {
            assert!((h[k] - exact[k]).abs() < 1e-15);
        }
        // sum sqrt(2), unit energy, orthogonal to the double shift
        assert!((h.iter().sum::<f64>() - 2f64.sqrt()).abs() < 1e-15);
        assert!((h.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((h[0] * h[2] + h[1] * h[3]).abs() < 1e-15);
        // two vanishing moments of the highpass
        let g = DB2_HIGHPASS;
        assert!(g.iter().sum::<f64>().abs() < 1e-15);
        assert!(g.iter().enumerate().map(|(k, x)| k as f64 * x).sum::<f64>().abs() < 1e-14);
    }

    #[test]
    fn constant_volume_has_no_details() {
        let dims = GridDims::new(8, 8, 8, 8).unwrap();
        let f = Volume4 { dims, data: vec![1.5; dims.len()] };
        let c = dwt4_forward(&f, 2).unwrap();
        let na = c.approx_len();
        assert_eq!(na, 16);
        // each level scales the constant by 2^(4/2) = 4
        assert!(c.data[..na].iter().all(|x| (x - 1.5 * 16.0).abs() < 1e-12));
        assert!(c.data[na..].iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn matches_the_explicit_analysis_matrix() {
        let n = 8;
        let dims = GridDims::new(n, n, n, n).unwrap();
        let f = random_volume(dims, 3);
        // rows 0..4 lowpass, 4..8 highpass
        let mut a = vec![[0.0; 8]; 8];
        for i in 0..4 {
            for k in 0..4 {
                a[i][(2 * i + k) % n] += DB2_LOWPASS[k];
                a[4 + i][(2 * i + k) % n] += DB2_HIGHPASS[k];
            }
        }
        let c = dwt4_forward(&f, 1).unwrap();
        let mallat = scatter(&c.data, &dims, 1);
        for out in 0..dims.len() {
            let o = dims.unravel(out);
            let mut acc = 0.0;
            for inp in 0..dims.len() {
                let i = dims.unravel(inp);
                acc += a[o[0]][i[0]] * a[o[1]][i[1]] * a[o[2]][i[2]] * a[o[3]][i[3]] * f.data[inp];
            }
            assert!((acc - mallat[out]).abs() < 1e-10);
        }
    }

    #[test]
    fn isometry_round_trip_and_adjoint() {
        let dims = GridDims::new(16, 16, 16, 16).unwrap();
        let f = random_volume(dims, 8);
        let c = dwt4_forward(&f, 3).unwrap();
        let cn: f64 = c.data.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((cn - f.norm2()).abs() <= 1e-10 * f.norm2());
        let back = dwt4_inverse(&c).unwrap();
        let err: f64 = back.data.iter().zip(&f.data).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(err <= 1e-10 * f.norm2());

        let u = random_volume(dims, 9);
        let lhs = crate::volume::dot(&c.data, &u.data);
        let rhs = f.dot(&dwt4_inverse(&WaveletCoeffs { dims, levels: 3, data: u.data.clone() }).unwrap());
        assert!((lhs - rhs).abs() <= 1e-10 * f.norm2() * u.norm2());
    }

    #[test]
    fn zero_coefficients_give_zero() {
        let dims = GridDims::new(8, 8, 4, 4).unwrap();
        let v = dwt4_inverse(&WaveletCoeffs { dims, levels: 2, data: vec![0.0; dims.len()] }).unwrap();
        assert!(v.data.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn indivisible_dims_are_rejected() {
        let dims = GridDims::new(16, 16, 16, 8).unwrap();
        assert_eq!(max_levels(&dims), 3);
        assert!(dwt4_forward(&Volume4::zeros(dims), 4).is_err());
        assert!(dwt4_forward(&Volume4::zeros(dims), 0).is_err());
        let bad = WaveletCoeffs { dims, levels: 2, data: vec![0.0; 7] };
        assert!(dwt4_inverse(&bad).is_err());
    }

    #[test]
    fn canonical_blocks_cover_the_grid_once() {
        let dims = GridDims::new(16, 8, 8, 4).unwrap();
        let mut hit = vec![0u8; dims.len()];
        for (o, e) in canonical_blocks(&dims, 2) {
            for i in 0..dims.len() {
                let x = dims.unravel(i);
                if (0..4).all(|a| x[a] >= o[a] && x[a] < o[a] + e[a]) {
                    hit[i] += 1;
                }
            }
        }
        assert!(hit.iter().all(|&h| h == 1));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(12))]
            #[test]
            fn perfect_reconstruction(seed in any::<u64>(), levels in 1usize..=2) {
                let dims = GridDims::new(8, 4, 8, 4).unwrap();
                let f = random_volume(dims, seed);
                let back = dwt4_inverse(&dwt4_forward(&f, levels).unwrap()).unwrap();
                let err = back.data.iter().zip(&f.data).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                prop_assert!(err <= 1e-10 * f.max_abs());
            }
        }
    }
}
