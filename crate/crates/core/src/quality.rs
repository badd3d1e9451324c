//! Reconstruction quality: PSNR over the whole 4D volume and the frame-averaged
//! 3D structural similarity index.

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::volume::{Volume3, Volume4};

pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn same_dims(recon: &Volume4, truth: &Volume4) -> Result<()> {
    truth.dims.check_same(&recon.dims)
}

/// `10 log10(peak^2 / MSE)` with `peak = max(truth)`; `+inf` for identical inputs.
pub fn psnr(recon: &Volume4, truth: &Volume4) -> Result<f64> {
    same_dims(recon, truth)?;
    Ok(psnr_slices(&recon.data, &truth.data, truth.max()))
}

fn psnr_slices(recon: &[f64], truth: &[f64], peak: f64) -> f64 {
    let mse = recon.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / truth.len() as f64;
    if mse == 0.0 {
        return f64::INFINITY;
    }
    10.0 * (peak * peak / mse).log10()
}

fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let c = (SSIM_WINDOW / 2) as f64;
    let mut taps = [0.0; SSIM_WINDOW];
    for (i, t) in taps.iter_mut().enumerate() {
        let x = i as f64 - c;
        *t = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= s);
    taps
}

/// Separable 'valid' filtering along each of the three axes.
fn filter_valid(data: &[f64], dims: [usize; 3], taps: &[f64]) -> (Vec<f64>, [usize; 3]) {
    let w = taps.len();
    let mut cur = data.to_vec();
    let mut d = dims;
    for axis in 0..3 {
        let mut out_dims = d;
        out_dims[axis] = d[axis] + 1 - w;
        let stride = match axis {
            0 => 1,
            1 => d[0],
            _ => d[0] * d[1],
        };
        let mut out = vec![0.0; out_dims.iter().product()];
        let mut o = 0;
        for k in 0..out_dims[2] {
            for j in 0..out_dims[1] {
                for i in 0..out_dims[0] {
                    let base = i + d[0] * (j + d[1] * k);
                    out[o] = taps.iter().enumerate().map(|(t, c)| c * cur[base + t * stride]).sum();
                    o += 1;
                }
            }
        }
        cur = out;
        d = out_dims;
    }
    (cur, d)
}

/// Mean luminance term and mean contrast-structure term of one frame, and the mean SSIM.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimComponents {
    pub ssim: f64,
    pub luminance: f64,
    pub contrast_structure: f64,
}

/// 3D SSIM of one frame with an 11^3 Gaussian window (sigma 1.5), evaluated
/// where the window fits entirely inside the volume.
pub fn ssim3d_components(x: &Volume3, y: &Volume3, range: f64) -> Result<SsimComponents> {
    if x.dims != y.dims {
        return Err(Error::DimensionMismatch { expected: y.dims.to_vec(), got: x.dims.to_vec() });
    }
    if x.dims.iter().any(|&n| n < SSIM_WINDOW) {
        return Err(Error::InvalidDims {
            dims: x.dims.to_vec(),
            reason: format!("every spatial axis must be at least {SSIM_WINDOW} for the SSIM window"),
        });
    }
    if !(range > 0.0) {
        return Err(Error::InvalidParameter(format!("SSIM dynamic range must be positive, got {range}")));
    }
    let taps = gaussian_taps();
    let c1 = (SSIM_K1 * range).powi(2);
    let c2 = (SSIM_K2 * range).powi(2);
    let filt = |v: &[f64]| filter_valid(v, x.dims, &taps).0;
    let mx = filt(&x.data);
    let my = filt(&y.data);
    let sq = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(p, q)| p * q).collect() };
    let mxx = filt(&sq(&x.data, &x.data));
    let myy = filt(&sq(&y.data, &y.data));
    let mxy = filt(&sq(&x.data, &y.data));
    let n = mx.len() as f64;
    let (mut s, mut l, mut cs) = (0.0, 0.0, 0.0);
    for i in 0..mx.len() {
        let (ux, uy) = (mx[i], my[i]);
        let vx = mxx[i] - ux * ux;
        let vy = myy[i] - uy * uy;
        let cov = mxy[i] - ux * uy;
        let lum = (2.0 * ux * uy + c1) / (ux * ux + uy * uy + c1);
        let con = (2.0 * cov + c2) / (vx + vy + c2);
        s += lum * con;
        l += lum;
        cs += con;
    }
    Ok(SsimComponents { ssim: s / n, luminance: l / n, contrast_structure: cs / n })
}

pub fn ssim3d(x: &Volume3, y: &Volume3, range: f64) -> Result<f64> {
    Ok(ssim3d_components(x, y, range)?.ssim)
}

/// Per-frame 3D SSIM with dynamic range `max(truth)`, averaged over frames.
pub fn ssim3d_mean(recon: &Volume4, truth: &Volume4) -> Result<f64> {
    let per = ssim3d_per_frame(recon, truth)?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

pub fn ssim3d_per_frame(recon: &Volume4, truth: &Volume4) -> Result<Vec<f64>> {
    same_dims(recon, truth)?;
    let range = truth.max();
    (0..truth.dims.frames())
        .into_par_iter()
        .map(|t| ssim3d(&recon.frame(t), &truth.frame(t), range))
        .collect()
}

fn ser_db<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() && *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*v)
    }
}

fn ser_db_vec<S: Serializer>(v: &[f64], s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(v.len()))?;
    for x in v {
        seq.serialize_element(&Db(*x))?;
    }
    seq.end()
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum DbRepr {
    Num(f64),
    Text(String),
}

struct Db(f64);

impl Serialize for Db {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ser_db(&self.0, s)
    }
}

fn from_repr<E: serde::de::Error>(r: DbRepr) -> std::result::Result<f64, E> {
    match r {
        DbRepr::Num(x) => Ok(x),
        DbRepr::Text(t) if t == "inf" => Ok(f64::INFINITY),
        DbRepr::Text(t) => Err(E::custom(format!("invalid dB value {t:?}"))),
    }
}

fn de_db<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    from_repr(DbRepr::deserialize(d)?)
}

fn de_db_vec<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<f64>, D::Error> {
    Vec::<DbRepr>::deserialize(d)?.into_iter().map(from_repr).collect()
}

/// Metrics of one reconstruction. An infinite PSNR (identical volumes) is
/// written as the string `"inf"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    #[serde(serialize_with = "ser_db", deserialize_with = "de_db")]
    pub psnr_db: f64,
    pub mean_ssim: f64,
    #[serde(serialize_with = "ser_db_vec", deserialize_with = "de_db_vec")]
    pub psnr_per_frame: Vec<f64>,
    pub ssim_per_frame: Vec<f64>,
    pub peak: f64,
}

impl MetricsReport {
    pub fn compute(recon: &Volume4, truth: &Volume4) -> Result<Self> {
        same_dims(recon, truth)?;
        let peak = truth.max();
        let m = truth.dims.frame_len();
        let psnr_per_frame = (0..truth.dims.frames())
            .map(|t| psnr_slices(&recon.data[t * m..(t + 1) * m], &truth.data[t * m..(t + 1) * m], peak))
            .collect();
        let ssim_per_frame = ssim3d_per_frame(recon, truth)?;
        Ok(Self {
            psnr_db: psnr(recon, truth)?,
            mean_ssim: ssim_per_frame.iter().sum::<f64>() / ssim_per_frame.len() as f64,
            psnr_per_frame,
            ssim_per_frame,
            peak,
        })
    }
}
