//! Nonlinear N-term approximation: keep the N largest coefficients, synthesize,
//! and measure how fast the squared error falls with N.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dwt4::Dwt4;
use crate::error::{Error, Result};
use crate::operator::SparsifyingTransform;
use crate::phantom::{render_cartoon, CartoonSpec};
use crate::shearlet::{ShearletConfig, ShearletSystem};
use crate::volume::{GridDims, Volume4};

/// Coefficients together with their ranking by decreasing magnitude, ties
/// broken by increasing index.
pub struct RankedCoefficients {
    coeffs: Vec<f64>,
    order: Vec<u32>,
}

impl RankedCoefficients {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() > u32::MAX as usize {
            return Err(Error::InvalidParameter(format!("{} coefficients exceed the ranking index range", coeffs.len())));
        }
        let mut order: Vec<u32> = (0..coeffs.len() as u32).collect();
        order.sort_unstable_by(|&a, &b| coeffs[b as usize].abs().total_cmp(&coeffs[a as usize].abs()).then(a.cmp(&b)));
        Ok(Self { coeffs, order })
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Copy with all but the `n` top-ranked coefficients set to zero.
    pub fn keep(&self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.coeffs.len()];
        for &i in &self.order[..n.min(self.order.len())] {
            out[i as usize] = self.coeffs[i as usize];
        }
        out
    }

    /// Sum of squares of the coefficients outside the top `n`.
    pub fn tail_energy(&self, n: usize) -> f64 {
        self.order[n.min(self.order.len())..].iter().map(|&i| self.coeffs[i as usize].powi(2)).sum()
    }
}

fn check_n<S: SparsifyingTransform + ?Sized>(s: &S, n: usize) -> Result<()> {
    if n > s.output_len() {
        return Err(Error::InvalidParameter(format!("N = {n} exceeds the {} available coefficients", s.output_len())));
    }
    Ok(())
}

/// Synthesis from the `n` largest-magnitude coefficients of `f`.
pub fn n_term_approx<S: SparsifyingTransform + ?Sized>(f: &Volume4, s: &S, n: usize) -> Result<Volume4> {
    check_n(s, n)?;
    if n == 0 {
        return Ok(Volume4::zeros(f.dims));
    }
    let ranked = RankedCoefficients::new(s.apply(&f.data)?)?;
    Ok(Volume4 { dims: f.dims, data: s.synthesize(&ranked.keep(n))? })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayPoint {
    pub n: usize,
    pub error2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root mean square residual of the log-log fit.
    pub residual: f64,
    pub points_used: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayCurve {
    pub transform: String,
    pub points: Vec<DecayPoint>,
    pub fit: SlopeFit,
}

/// Roughly geometric, strictly increasing ladder of `count` values from `lo` to `hi`.
pub fn geometric_ladder(lo: usize, hi: usize, count: usize) -> Result<Vec<usize>> {
    if lo == 0 || hi <= lo || count < 3 {
        return Err(Error::InvalidParameter(format!("degenerate ladder {lo}..{hi} with {count} points")));
    }
    let ratio = (hi as f64 / lo as f64).powf(1.0 / (count - 1) as f64);
    let mut out: Vec<usize> = (0..count).map(|i| (lo as f64 * ratio.powi(i as i32)).round() as usize).collect();
    out.dedup();
    check_ladder(&out)?;
    Ok(out)
}

fn check_ladder(ladder: &[usize]) -> Result<()> {
    if ladder.len() < 3 || ladder[0] == 0 || ladder.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter(format!(
            "the N ladder needs at least 3 strictly increasing positive values, got {ladder:?}"
        )));
    }
    Ok(())
}

/// Least-squares line through `(log N, log error2)` after dropping the smallest
/// third of the ladder; zero errors are skipped.
pub fn fit_slope(points: &[DecayPoint]) -> Result<SlopeFit> {
    let skip = points.len() / 3;
    let xy: Vec<(f64, f64)> = points[skip..]
        .iter()
        .filter(|p| p.error2 > 0.0)
        .map(|p| ((p.n as f64).ln(), p.error2.ln()))
        .collect();
    if xy.len() < 2 {
        return Err(Error::InvalidParameter("fewer than two nonzero errors to fit".into()));
    }
    let k = xy.len() as f64;
    let mx = xy.iter().map(|p| p.0).sum::<f64>() / k;
    let my = xy.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = xy.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = xy.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (xy.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum::<f64>() / k).sqrt();
    Ok(SlopeFit { slope, intercept, residual, points_used: xy.len() })
}

/// Squared N-term errors of `f` over the ladder.
pub fn decay_curve<S: SparsifyingTransform + ?Sized>(f: &Volume4, s: &S, name: &str, ladder: &[usize]) -> Result<DecayCurve> {
    check_ladder(ladder)?;
    check_n(s, *ladder.last().unwrap_or(&0))?;
    let ranked = RankedCoefficients::new(s.apply(&f.data)?)?;
    let mut points = Vec::with_capacity(ladder.len());
    for &n in ladder {
        let approx = s.synthesize(&ranked.keep(n))?;
        let error2 = approx.iter().zip(&f.data).map(|(a, b)| (a - b) * (a - b)).sum();
        points.push(DecayPoint { n, error2 });
    }
    let fit = fit_slope(&points)?;
    Ok(DecayCurve { transform: name.into(), points, fit })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecayConfig {
    pub shearlet: ShearletConfig,
    pub dwt_levels: usize,
    pub ladder: Vec<usize>,
}

/// Curves for the shearlet system and the separable wavelet on the rendered cartoon.
pub fn decay_experiment(spec: &CartoonSpec, dims: GridDims, cfg: &DecayConfig) -> Result<Vec<DecayCurve>> {
    check_ladder(&cfg.ladder)?;
    let f = render_cartoon(spec, dims);
    let cyl = decay_curve(&f, &ShearletSystem::build(dims, cfg.shearlet.clone())?, "cylsh", &cfg.ladder)?;
    let dwt = decay_curve(&f, &Dwt4::new(dims, cfg.dwt_levels)?, "dwt4", &cfg.ladder)?;
    Ok(vec![cyl, dwt])
}

pub fn write_curves_csv(curves: &[DecayCurve], out: impl Write) -> Result<()> {
    #[derive(Serialize)]
    struct Row<'a> {
        transform: &'a str,
        n: usize,
        error2: f64,
    }
    let mut w = csv::Writer::from_writer(out);
    for c in curves {
        for p in &c.points {
            w.serialize(Row { transform: &c.transform, n: p.n, error2: p.error2 })
                .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeSummary {
    pub transform: String,
    pub slope: f64,
    pub intercept: f64,
    pub residual: f64,
    pub points_used: usize,
}

pub fn slope_summary(curves: &[DecayCurve]) -> Vec<SlopeSummary> {
    curves
        .iter()
        .map(|c| SlopeSummary {
            transform: c.transform.clone(),
            slope: c.fit.slope,
            intercept: c.fit.intercept,
            residual: c.fit.residual,
            points_used: c.fit.points_used,
        })
        .collect()
}
