//! Primal-dual fixed-point (PDFP) reconstruction.
//!
//! Minimizes `J(f) = 1/2 ||R f - m||^2 + beta ||S f||_1` over `f >= 0`:
//!
//! ```text
//! y  = P+(f - rho R^T(R f - m) - lambda S^T r)
//! r' = (I - Soft_{beta rho / lambda})(S y + r)
//! f' = P+(f - rho R^T(R f - m) - lambda S^T r')
//! ```
//!
//! `beta` may be steered by a proportional controller toward a target fraction
//! of nonzero detail coefficients.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::{check_len, LinearOperator, SparsifyingTransform};
use crate::projector::{DynamicProjector, SinogramSet};
use crate::volume::{dot, GridDims, Volume4};

/// `sign(x) max(|x| - theta, 0)`, elementwise.
pub fn soft_threshold(values: &[f64], theta: f64) -> Result<Vec<f64>> {
    check_theta(theta)?;
    Ok(values.iter().map(|&x| shrink(x, theta)).collect())
}

fn check_theta(theta: f64) -> Result<()> {
    if !(theta >= 0.0) {
        return Err(Error::InvalidParameter(format!("threshold must be >= 0, got {theta}")));
    }
    Ok(())
}

#[inline]
fn shrink(x: f64, theta: f64) -> f64 {
    if x > theta {
        x - theta
    } else if x < -theta {
        x + theta
    } else {
        0.0
    }
}

pub fn project_nonneg(v: &Volume4) -> Volume4 {
    Volume4 { dims: v.dims, data: v.data.iter().map(|&x| x.max(0.0)).collect() }
}

fn clamp_nonneg(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = x.max(0.0));
}

/// Largest eigenvalue of a symmetric positive semidefinite map by power
/// iteration from a seeded Gaussian start. Returns 0 for the zero map.
pub fn estimate_norm(n: usize, apply: impl Fn(&[f64]) -> Result<Vec<f64>>, iters: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = dot(&x, &x).sqrt();
    if norm == 0.0 {
        return Ok(0.0);
    }
    x.iter_mut().for_each(|v| *v /= norm);
    let mut estimate = 0.0;
    for _ in 0..iters.max(1) {
        let ax = apply(&x)?;
        estimate = dot(&x, &ax);
        let norm = dot(&ax, &ax).sqrt();
        if norm == 0.0 {
            return Ok(0.0);
        }
        x = ax.into_iter().map(|v| v / norm).collect();
    }
    Ok(estimate)
}

/// Power-method estimate of `||A^T A||`.
pub fn estimate_normal_norm(op: &(impl LinearOperator + ?Sized), iters: usize, seed: u64) -> Result<f64> {
    estimate_norm(op.input_len(), |x| op.apply_adjoint(&op.apply(x)?), iters, seed)
}

/// Solver settings as read from configuration; unset step sizes take their
/// defaults once the operator norms are known.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub rho: Option<f64>,
    pub lambda: Option<f64>,
    pub beta: Option<f64>,
    pub max_iters: usize,
    pub rel_change_tol: f64,
    pub target_sparsity: Option<f64>,
    pub gain: f64,
    pub threshold_coarse: bool,
    /// Quantile of `|S(rho R^T m)|` detail coefficients used as the initial threshold.
    pub beta_quantile: f64,
    pub power_iters: usize,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            rho: None,
            lambda: None,
            beta: None,
            max_iters: 50,
            rel_change_tol: 1e-4,
            target_sparsity: None,
            gain: 0.1,
            threshold_coarse: true,
            beta_quantile: 0.9,
            power_iters: 30,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdfpParams {
    pub rho: f64,
    pub lambda: f64,
    pub beta: f64,
    pub max_iters: usize,
    pub rel_change_tol: f64,
    pub target_sparsity: Option<f64>,
    pub gain: f64,
    pub threshold_coarse: bool,
}

impl PdfpParams {
    /// Checks `0 < rho < 2 / l_hat` and `0 < lambda <= 1 / ub`.
    pub fn new(rho: f64, lambda: f64, beta: f64, l_hat: f64, ub: f64) -> Result<Self> {
        let p = Self {
            rho,
            lambda,
            beta,
            max_iters: 50,
            rel_change_tol: 1e-4,
            target_sparsity: None,
            gain: 0.1,
            threshold_coarse: true,
        };
        p.check(l_hat, ub)?;
        Ok(p)
    }

    pub fn check(&self, l_hat: f64, ub: f64) -> Result<()> {
        if !(self.rho > 0.0) || (l_hat > 0.0 && self.rho * l_hat >= 2.0) {
            return Err(Error::InvalidParameter(format!("rho = {} must lie in (0, 2/L) with L = {l_hat}", self.rho)));
        }
        if !(self.lambda > 0.0) || self.lambda * ub > 1.0 + 1e-12 {
            return Err(Error::InvalidParameter(format!("lambda = {} must lie in (0, 1/ub] with ub = {ub}", self.lambda)));
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::InvalidParameter(format!("beta must be finite and >= 0, got {}", self.beta)));
        }
        if let Some(s) = self.target_sparsity {
            if !(s > 0.0 && s < 1.0) {
                return Err(Error::InvalidParameter(format!("target sparsity must lie in (0, 1), got {s}")));
            }
        }
        if !(self.gain >= 0.0) {
            return Err(Error::InvalidParameter("controller gain must be >= 0".into()));
        }
        Ok(())
    }

    /// Fills unset values from the defaults `rho = 1.9 / l_hat`, `lambda = 1 / ub`,
    /// and `beta` such that the threshold `beta rho / lambda` equals the chosen
    /// quantile of the detail coefficients of the first gradient step `rho R^T m`.
    pub fn resolve<S: SparsifyingTransform + ?Sized>(
        cfg: &SolverConfig,
        l_hat: f64,
        s: &S,
        rt_m: &[f64],
    ) -> Result<Self> {
        let ub = s.upper_frame_bound();
        let rho = cfg.rho.unwrap_or(if l_hat > 0.0 { 1.9 / l_hat } else { 1.0 });
        let lambda = cfg.lambda.unwrap_or(1.0 / ub);
        let beta = match cfg.beta {
            Some(b) => b,
            None => {
                let step: Vec<f64> = rt_m.iter().map(|x| rho * x).collect();
                let coeffs = s.apply(&step)?;
                let theta = quantile_abs(&coeffs[s.coarse_len()..], cfg.beta_quantile);
                theta * lambda / rho
            }
        };
        let p = Self {
            rho,
            lambda,
            beta,
            max_iters: cfg.max_iters,
            rel_change_tol: cfg.rel_change_tol,
            target_sparsity: cfg.target_sparsity,
            gain: cfg.gain,
            threshold_coarse: cfg.threshold_coarse,
        };
        p.check(l_hat, ub)?;
        Ok(p)
    }

    pub fn threshold(&self) -> f64 {
        self.beta * self.rho / self.lambda
    }
}

/// `q`-quantile of the magnitudes (nearest rank).
pub fn quantile_abs(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut mags: Vec<f64> = values.iter().map(|x| x.abs()).collect();
    let k = ((q.clamp(0.0, 1.0) * mags.len() as f64).ceil() as usize).clamp(1, mags.len()) - 1;
    let (_, kth, _) = mags.select_nth_unstable_by(k, f64::total_cmp);
    *kth
}

/// `beta (1 + gain (s_obs - s_target) / s_target)`, clipped to `[beta/2, 2 beta]`.
pub fn tune_beta(beta: f64, observed: f64, target: f64, gain: f64) -> f64 {
    let next = beta * (1.0 + gain * (observed - target) / target);
    next.clamp(0.5 * beta, 2.0 * beta)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub iteration: usize,
    pub objective: f64,
    pub data_fit: f64,
    pub l1: f64,
    pub residual_norm: f64,
    pub sparsity: f64,
    pub beta: f64,
    pub rel_change: f64,
}

/// Iterates and cached operator outputs of the solver.
#[derive(Clone, Debug)]
pub struct PdfpState {
    pub f: Vec<f64>,
    pub y: Vec<f64>,
    pub r: Vec<f64>,
    /// `S^T r`, reused by the next y-step.
    st_r: Vec<f64>,
    /// `R f - m`.
    residual: Vec<f64>,
    pub beta: f64,
    pub iteration: usize,
    pub history: Vec<HistoryRow>,
}

impl PdfpState {
    pub fn new<R, S>(f0: Vec<f64>, beta: f64, r_op: &R, s_op: &S, m: &[f64], threshold_coarse: bool) -> Result<Self>
    where
        R: LinearOperator + ?Sized,
        S: SparsifyingTransform + ?Sized,
    {
        check_len(r_op.input_len(), f0.len())?;
        check_len(r_op.output_len(), m.len())?;
        let mut f = f0;
        clamp_nonneg(&mut f);
        let residual = sub(&r_op.apply(&f)?, m);
        let mut state = Self {
            y: f.clone(),
            r: vec![0.0; s_op.output_len()],
            st_r: vec![0.0; f.len()],
            residual,
            f,
            beta,
            iteration: 0,
            history: Vec::new(),
        };
        let sf = s_op.apply(&state.f)?;
        let row = state.record(&sf, s_op.coarse_len(), threshold_coarse, f64::NAN, sparsity_at(&sf[s_op.coarse_len()..], 0.0));
        state.history.push(row);
        Ok(state)
    }

    pub fn residual(&self) -> &[f64] {
        &self.residual
    }

    fn record(&self, sf: &[f64], coarse: usize, threshold_coarse: bool, rel_change: f64, sparsity: f64) -> HistoryRow {
        let data_fit = 0.5 * dot(&self.residual, &self.residual);
        let start = if threshold_coarse { 0 } else { coarse };
        let l1: f64 = sf[start..].iter().map(|x| x.abs()).sum();
        HistoryRow {
            iteration: self.iteration,
            objective: data_fit + self.beta * l1,
            data_fit,
            l1,
            residual_norm: (2.0 * data_fit).sqrt(),
            sparsity,
            beta: self.beta,
            rel_change,
        }
    }
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn sparsity_at(detail: &[f64], theta: f64) -> f64 {
    if detail.is_empty() {
        return 0.0;
    }
    detail.iter().filter(|x| x.abs() > theta).count() as f64 / detail.len() as f64
}

/// One PDFP iteration; returns the relative change of `f`.
pub fn pdfp_step<R, S>(state: &mut PdfpState, params: &PdfpParams, r_op: &R, s_op: &S, m: &[f64]) -> Result<f64>
where
    R: LinearOperator + ?Sized,
    S: SparsifyingTransform + ?Sized,
{
    let it = state.iteration + 1;
    let grad = r_op.apply_adjoint(&state.residual)?;
    // shared by both primal updates
    let base: Vec<f64> = state.f.iter().zip(&grad).map(|(f, g)| f - params.rho * g).collect();

    let mut y: Vec<f64> = base.iter().zip(&state.st_r).map(|(b, s)| b - params.lambda * s).collect();
    clamp_nonneg(&mut y);

    let theta = state.beta * params.rho / params.lambda;
    let coarse = s_op.coarse_len();
    let mut r = s_op.apply(&y)?;
    r.iter_mut().zip(&state.r).for_each(|(c, old)| *c += old);
    let sparsity = sparsity_at(&r[coarse..], theta);
    for (i, c) in r.iter_mut().enumerate() {
        let t = if i < coarse && !params.threshold_coarse { 0.0 } else { theta };
        // (I - Soft_t)(c) is the clamp of c to [-t, t]
        *c = c.clamp(-t, t);
    }
    let st_r = s_op.apply_adjoint(&r)?;

    let mut f: Vec<f64> = base.iter().zip(&st_r).map(|(b, s)| b - params.lambda * s).collect();
    clamp_nonneg(&mut f);
    if f.iter().chain(&y).any(|x| !x.is_finite()) {
        return Err(Error::Divergence { iteration: it });
    }

    let diff: f64 = f.iter().zip(&state.f).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let norm = dot(&f, &f).sqrt();
    let rel_change = if norm > 0.0 { diff / norm } else if diff == 0.0 { 0.0 } else { f64::INFINITY };

    state.residual = sub(&r_op.apply(&f)?, m);
    state.f = f;
    state.y = y;
    state.r = r;
    state.st_r = st_r;
    state.iteration = it;
    let sf = s_op.apply(&state.f)?;
    let row = state.record(&sf, coarse, params.threshold_coarse, rel_change, sparsity);
    if !row.objective.is_finite() {
        return Err(Error::Divergence { iteration: it });
    }
    state.history.push(row);
    if let Some(target) = params.target_sparsity {
        state.beta = tune_beta(state.beta, sparsity, target, params.gain);
    }
    Ok(rel_change)
}

#[derive(Clone, Debug)]
pub struct PdfpOutcome {
    pub f: Vec<f64>,
    pub params: PdfpParams,
    pub history: Vec<HistoryRow>,
    pub converged: bool,
}

/// Runs PDFP from `f0` until the relative change drops below the tolerance or
/// `max_iters` is reached. `on_iter` sees the state after every iteration.
pub fn solve<R, S>(
    r_op: &R,
    s_op: &S,
    m: &[f64],
    params: &PdfpParams,
    f0: Vec<f64>,
    mut on_iter: impl FnMut(&PdfpState) -> Result<()>,
) -> Result<PdfpOutcome>
where
    R: LinearOperator + ?Sized,
    S: SparsifyingTransform + ?Sized,
{
    let mut state = PdfpState::new(f0, params.beta, r_op, s_op, m, params.threshold_coarse)?;
    let mut converged = false;
    for _ in 0..params.max_iters {
        let change = pdfp_step(&mut state, params, r_op, s_op, m)?;
        on_iter(&state)?;
        if change < params.rel_change_tol {
            converged = true;
            break;
        }
    }
    let mut params = params.clone();
    params.beta = state.beta;
    Ok(PdfpOutcome { f: state.f, params, history: state.history, converged })
}

/// Reconstruction of every frame of a sinogram set with a shared regularizer.
#[derive(Debug)]
pub struct Reconstruction {
    pub volume: Volume4,
    pub outcome: PdfpOutcome,
    pub l_hat: f64,
}

/// Assembles the block-diagonal projector over frames, resolves the solver
/// parameters and runs PDFP from zero.
pub fn reconstruct<S: SparsifyingTransform + ?Sized>(
    sino: &SinogramSet,
    s_op: &S,
    cfg: &SolverConfig,
    on_iter: impl FnMut(&PdfpState) -> Result<()>,
) -> Result<Reconstruction> {
    let op = DynamicProjector::new(sino.geometry.clone(), sino.angles.clone(), sino.frames)?;
    reconstruct_with(&op, sino, s_op, cfg, on_iter)
}

pub fn reconstruct_with<S: SparsifyingTransform + ?Sized>(
    op: &DynamicProjector,
    sino: &SinogramSet,
    s_op: &S,
    cfg: &SolverConfig,
    on_iter: impl FnMut(&PdfpState) -> Result<()>,
) -> Result<Reconstruction> {
    let [n1, n2, n3] = sino.geometry.vol_dims;
    let dims = GridDims::new(n1, n2, n3, sino.frames)?;
    check_len(dims.len(), s_op.input_len())?;
    check_len(op.output_len(), sino.data.len())?;
    let l_hat = estimate_normal_norm(op, cfg.power_iters, cfg.seed)?;
    let rt_m = op.apply_adjoint(&sino.data)?;
    let params = PdfpParams::resolve(cfg, l_hat, s_op, &rt_m)?;
    let outcome = solve(op, s_op, &sino.data, &params, vec![0.0; dims.len()], on_iter)?;
    let volume = Volume4 { dims, data: outcome.f.clone() };
    Ok(Reconstruction { volume, outcome, l_hat })
}

pub fn write_history_csv(rows: &[HistoryRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    w.flush()?;
    Ok(())
}
