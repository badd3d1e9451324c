//! Ray-driven tomographic projector with exact voxel intersection lengths.
//!
//! The volume is centred at the origin with voxels of side `voxel_size`. The
//! gantry rotates about axis 3. For angle `theta` the cone-beam source sits at
//! `D_so (cos theta, sin theta, 0)` and the flat detector is centred at
//! `-D_od (cos theta, sin theta, 0)` with columns along `(-sin theta, cos theta, 0)`
//! and rows along axis 3. In parallel mode every ray runs along
//! `-(cos theta, sin theta, 0)` through the detector cell centre.
//!
//! Sinogram layout per frame: angle-major, then detector row, then column.

use std::f64::consts::{PI, TAU};
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::{check_len, LinearOperator};
use crate::phantom::{render_ground_truth, LabelMap, OmegaSchedule, PhantomSpec};
use crate::volume::{write_f32_raw, Volume3, Volume4};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BeamMode {
    Cone,
    Parallel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Geometry {
    pub mode: BeamMode,
    /// Source to rotation axis (cone only).
    pub source_origin: f64,
    /// Rotation axis to detector (cone only).
    pub origin_detector: f64,
    pub det_cols: usize,
    pub det_rows: usize,
    pub pitch_u: f64,
    pub pitch_v: f64,
    pub vol_dims: [usize; 3],
    #[serde(default = "unit")]
    pub voxel_size: f64,
}

fn unit() -> f64 {
    1.0
}

impl Geometry {
    /// Cone beam with the source at three volume diagonals, magnification 2,
    /// one-voxel detector cells at the isocentre and a detector just wide
    /// enough for the rotating volume.
    pub fn cone_default(vol_dims: [usize; 3]) -> Self {
        let [n1, n2, n3] = vol_dims.map(|n| n as f64);
        let diag = (n1 * n1 + n2 * n2 + n3 * n3).sqrt();
        let source_origin = 3.0 * diag;
        let origin_detector = source_origin;
        let magnification = (source_origin + origin_detector) / source_origin;
        let radius = 0.5 * (n1 * n1 + n2 * n2).sqrt();
        let near = (source_origin + origin_detector) / (source_origin - radius);
        let pitch = magnification;
        let cols = even_ceil(2.0 * radius * near / pitch);
        let rows = even_ceil(n3 * near / pitch);
        Self {
            mode: BeamMode::Cone,
            source_origin,
            origin_detector,
            det_cols: cols,
            det_rows: rows,
            pitch_u: pitch,
            pitch_v: pitch,
            vol_dims,
            voxel_size: 1.0,
        }
    }

    /// Parallel beam with one-voxel cells covering the rotating volume.
    pub fn parallel_default(vol_dims: [usize; 3]) -> Self {
        let [n1, n2, _] = vol_dims.map(|n| n as f64);
        let radius = 0.5 * (n1 * n1 + n2 * n2).sqrt();
        Self {
            mode: BeamMode::Parallel,
            source_origin: 0.0,
            origin_detector: 0.0,
            det_cols: even_ceil(2.0 * radius),
            det_rows: vol_dims[2],
            pitch_u: 1.0,
            pitch_v: 1.0,
            vol_dims,
            voxel_size: 1.0,
        }
    }

    /// The same physical setup at twice the resolution of volume and detector.
    pub fn refined(&self) -> Self {
        Self {
            det_cols: 2 * self.det_cols,
            det_rows: 2 * self.det_rows,
            pitch_u: self.pitch_u / 2.0,
            pitch_v: self.pitch_v / 2.0,
            vol_dims: self.vol_dims.map(|n| 2 * n),
            voxel_size: self.voxel_size / 2.0,
            ..self.clone()
        }
    }

    pub fn rays_per_angle(&self) -> usize {
        self.det_cols * self.det_rows
    }

    pub fn voxels(&self) -> usize {
        self.vol_dims.iter().product()
    }

    fn half_extent(&self) -> [f64; 3] {
        self.vol_dims.map(|n| 0.5 * n as f64 * self.voxel_size)
    }

    /// Detector coordinates `(u, v)` of a point, for the coverage check.
    fn detector_coords(&self, theta: f64, p: [f64; 3]) -> (f64, f64) {
        let (s, c) = theta.sin_cos();
        let along = p[0] * c + p[1] * s;
        let u = -p[0] * s + p[1] * c;
        match self.mode {
            BeamMode::Parallel => (u, p[2]),
            BeamMode::Cone => {
                let mag = (self.source_origin + self.origin_detector) / (self.source_origin - along);
                (u * mag, p[2] * mag)
            }
        }
    }

    pub fn validate(&self, angles: &[f64]) -> Result<()> {
        if self.det_cols == 0 || self.det_rows == 0 || self.pitch_u <= 0.0 || self.pitch_v <= 0.0 || self.voxel_size <= 0.0 {
            return Err(Error::InvalidParameter("detector and voxel sizes must be positive".into()));
        }
        if self.vol_dims.contains(&0) {
            return Err(Error::InvalidParameter("volume must be non-empty".into()));
        }
        let h = self.half_extent();
        if self.mode == BeamMode::Cone {
            let reach = (h[0] * h[0] + h[1] * h[1]).sqrt();
            if self.source_origin <= reach || self.origin_detector <= 0.0 {
                return Err(Error::InvalidParameter("cone source must lie outside the volume".into()));
            }
        }
        let (umax, vmax) = (0.5 * self.det_cols as f64 * self.pitch_u, 0.5 * self.det_rows as f64 * self.pitch_v);
        for &theta in angles {
            for corner in 0..8 {
                let p = [0, 1, 2].map(|a| if corner >> a & 1 == 1 { h[a] } else { -h[a] });
                let (u, v) = self.detector_coords(theta, p);
                if u.abs() > umax + 1e-9 || v.abs() > vmax + 1e-9 {
                    return Err(Error::InvalidParameter(format!(
                        "detector ({} x {}) does not cover the volume footprint at angle {theta:.4}",
                        self.det_cols, self.det_rows
                    )));
                }
            }
        }
        Ok(())
    }

    /// End points of ray `(col, row)` at angle `theta`; the segment spans the whole volume.
    fn ray(&self, theta: f64, col: usize, row: usize) -> ([f64; 3], [f64; 3]) {
        let (s, c) = theta.sin_cos();
        let u = (col as f64 - 0.5 * (self.det_cols as f64 - 1.0)) * self.pitch_u;
        let v = (row as f64 - 0.5 * (self.det_rows as f64 - 1.0)) * self.pitch_v;
        let eu = [-s, c, 0.0];
        match self.mode {
            BeamMode::Cone => {
                let src = [self.source_origin * c, self.source_origin * s, 0.0];
                let det = [-self.origin_detector * c + u * eu[0], -self.origin_detector * s + u * eu[1], v];
                (src, det)
            }
            BeamMode::Parallel => {
                let h = self.half_extent();
                let r = 2.0 * (h[0] * h[0] + h[1] * h[1] + h[2] * h[2]).sqrt() + 1.0;
                let base = [u * eu[0], u * eu[1], v];
                ([base[0] + r * c, base[1] + r * s, v], [base[0] - r * c, base[1] - r * s, base[2]])
            }
        }
    }
}

fn even_ceil(x: f64) -> usize {
    let n = x.ceil() as usize;
    n + n % 2
}

/// Equispaced angles over `[0, 2 pi)` for cone beam and `[0, pi)` for parallel beam.
pub fn equispaced_angles(mode: BeamMode, count: usize) -> Vec<f64> {
    let span = match mode {
        BeamMode::Cone => TAU,
        BeamMode::Parallel => PI,
    };
    (0..count).map(|i| span * i as f64 / count as f64).collect()
}

/// Voxel indices and intersection lengths of the segment `p0 -> p1`, by
/// incremental traversal of the voxel grid.
pub fn trace_ray(dims: [usize; 3], voxel_size: f64, p0: [f64; 3], p1: [f64; 3], out: &mut Vec<(u32, f64)>) {
    out.clear();
    let d = [p1[0] - p0[0], p1[1] - p0[1], p1[2] - p0[2]];
    let length = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    let lo = dims.map(|n| -0.5 * n as f64 * voxel_size);
    let (mut a_min, mut a_max) = (0.0f64, 1.0f64);
    for ax in 0..3 {
        let hi = -lo[ax];
        if d[ax] == 0.0 {
            if p0[ax] <= lo[ax] || p0[ax] >= hi {
                return;
            }
        } else {
            let a1 = (lo[ax] - p0[ax]) / d[ax];
            let a2 = (hi - p0[ax]) / d[ax];
            a_min = a_min.max(a1.min(a2));
            a_max = a_max.min(a1.max(a2));
        }
    }
    if a_min >= a_max {
        return;
    }
    let mut idx = [0i64; 3];
    let mut next = [f64::INFINITY; 3];
    let mut delta = [f64::INFINITY; 3];
    let mut step = [0i64; 3];
    for ax in 0..3 {
        let x = (p0[ax] + a_min * d[ax] - lo[ax]) / voxel_size;
        let n = dims[ax] as i64;
        let i = if d[ax] < 0.0 { x.ceil() as i64 - 1 } else { x.floor() as i64 };
        idx[ax] = i.clamp(0, n - 1);
        if d[ax] != 0.0 {
            step[ax] = if d[ax] > 0.0 { 1 } else { -1 };
            let plane = lo[ax] + (idx[ax] + i64::from(d[ax] > 0.0)) as f64 * voxel_size;
            next[ax] = (plane - p0[ax]) / d[ax];
            delta[ax] = voxel_size / d[ax].abs();
        }
    }
    let mut alpha = a_min;
    loop {
        let ax = if next[0] <= next[1] && next[0] <= next[2] {
            0
        } else if next[1] <= next[2] {
            1
        } else {
            2
        };
        let a_next = next[ax].min(a_max);
        let len = (a_next - alpha) * length;
        if len > 0.0 {
            let flat = idx[0] + dims[0] as i64 * (idx[1] + dims[1] as i64 * idx[2]);
            out.push((flat as u32, len));
        }
        alpha = a_next;
        if alpha >= a_max {
            break;
        }
        idx[ax] += step[ax];
        if idx[ax] < 0 || idx[ax] >= dims[ax] as i64 {
            break;
        }
        next[ax] += delta[ax];
    }
}

/// Sparse system matrix of one frame, stored both row-wise (rays) and column-wise
/// (voxels) so that projection and backprojection are both gathers.
#[derive(Clone, Debug)]
pub struct SystemMatrix {
    rays: usize,
    voxels: usize,
    row_ptr: Vec<usize>,
    row_idx: Vec<u32>,
    row_val: Vec<f64>,
    col_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    col_val: Vec<f64>,
}

impl SystemMatrix {
    pub fn build(geom: &Geometry, angles: &[f64]) -> Result<Self> {
        geom.validate(angles)?;
        let per_angle = geom.rays_per_angle();
        let rows: Vec<Vec<(u32, f64)>> = (0..angles.len() * per_angle)
            .into_par_iter()
            .map_init(Vec::new, |buf, r| {
                let (a, rest) = (r / per_angle, r % per_angle);
                let (p0, p1) = geom.ray(angles[a], rest % geom.det_cols, rest / geom.det_cols);
                trace_ray(geom.vol_dims, geom.voxel_size, p0, p1, buf);
                buf.clone()
            })
            .collect();
        let voxels = geom.voxels();
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        row_ptr.push(0);
        let nnz: usize = rows.iter().map(Vec::len).sum();
        let (mut row_idx, mut row_val) = (Vec::with_capacity(nnz), Vec::with_capacity(nnz));
        let mut counts = vec![0usize; voxels];
        for row in &rows {
            for &(c, w) in row {
                row_idx.push(c);
                row_val.push(w);
                counts[c as usize] += 1;
            }
            row_ptr.push(row_idx.len());
        }
        let mut col_ptr = vec![0usize; voxels + 1];
        for v in 0..voxels {
            col_ptr[v + 1] = col_ptr[v] + counts[v];
        }
        let mut fill = col_ptr.clone();
        let (mut col_idx, mut col_val) = (vec![0u32; nnz], vec![0.0; nnz]);
        for (r, row) in rows.iter().enumerate() {
            for &(c, w) in row {
                let slot = &mut fill[c as usize];
                col_idx[*slot] = r as u32;
                col_val[*slot] = w;
                *slot += 1;
            }
        }
        Ok(Self { rays: rows.len(), voxels, row_ptr, row_idx, row_val, col_ptr, col_idx, col_val })
    }

    pub fn rays(&self) -> usize {
        self.rays
    }

    pub fn voxels(&self) -> usize {
        self.voxels
    }

    pub fn nnz(&self) -> usize {
        self.row_val.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.row_idx[span.clone()].iter().zip(&self.row_val[span]).map(|(&c, &w)| (c as usize, w))
    }

    pub fn project_into(&self, x: &[f64], y: &mut [f64]) {
        y.par_iter_mut().enumerate().for_each(|(r, out)| {
            *out = self.row(r).map(|(c, w)| w * x[c]).sum();
        });
    }

    pub fn backproject_into(&self, y: &[f64], x: &mut [f64]) {
        x.par_iter_mut().enumerate().for_each(|(v, out)| {
            let span = self.col_ptr[v]..self.col_ptr[v + 1];
            *out = self.col_idx[span.clone()].iter().zip(&self.col_val[span]).map(|(&r, &w)| w * y[r as usize]).sum();
        });
    }
}

/// Projector for one static frame.
#[derive(Clone, Debug)]
pub struct Projector {
    pub geometry: Geometry,
    pub angles: Vec<f64>,
    matrix: SystemMatrix,
}

impl Projector {
    pub fn new(geometry: Geometry, angles: Vec<f64>) -> Result<Self> {
        let matrix = SystemMatrix::build(&geometry, &angles)?;
        Ok(Self { geometry, angles, matrix })
    }

    pub fn matrix(&self) -> &SystemMatrix {
        &self.matrix
    }

    pub fn sinogram_len(&self) -> usize {
        self.matrix.rays()
    }

    pub fn project(&self, frame: &Volume3) -> Result<Vec<f64>> {
        if frame.dims != self.geometry.vol_dims {
            return Err(Error::DimensionMismatch { expected: self.geometry.vol_dims.to_vec(), got: frame.dims.to_vec() });
        }
        let mut out = vec![0.0; self.matrix.rays()];
        self.matrix.project_into(&frame.data, &mut out);
        Ok(out)
    }

    pub fn backproject(&self, sino: &[f64]) -> Result<Volume3> {
        check_len(self.matrix.rays(), sino.len())?;
        let mut out = Volume3::zeros(self.geometry.vol_dims);
        self.matrix.backproject_into(sino, &mut out.data);
        Ok(out)
    }
}

impl LinearOperator for Projector {
    fn input_len(&self) -> usize {
        self.matrix.voxels()
    }

    fn output_len(&self) -> usize {
        self.matrix.rays()
    }

    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.matrix.voxels(), x.len())?;
        let mut out = vec![0.0; self.matrix.rays()];
        self.matrix.project_into(x, &mut out);
        Ok(out)
    }

    fn apply_adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_len(self.matrix.rays(), y.len())?;
        let mut out = vec![0.0; self.matrix.voxels()];
        self.matrix.backproject_into(y, &mut out);
        Ok(out)
    }
}

/// Block-diagonal projector applying the same per-frame geometry to every frame.
#[derive(Clone, Debug)]
pub struct DynamicProjector {
    pub frame: Projector,
    pub frames: usize,
}

impl DynamicProjector {
    pub fn new(geometry: Geometry, angles: Vec<f64>, frames: usize) -> Result<Self> {
        Ok(Self { frame: Projector::new(geometry, angles)?, frames })
    }
}

impl LinearOperator for DynamicProjector {
    fn input_len(&self) -> usize {
        self.frames * self.frame.input_len()
    }

    fn output_len(&self) -> usize {
        self.frames * self.frame.output_len()
    }

    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.input_len(), x.len())?;
        let (nv, nr) = (self.frame.input_len(), self.frame.output_len());
        let mut out = vec![0.0; self.output_len()];
        for (xi, yi) in x.chunks_exact(nv).zip(out.chunks_exact_mut(nr)) {
            self.frame.matrix.project_into(xi, yi);
        }
        Ok(out)
    }

    fn apply_adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_len(self.output_len(), y.len())?;
        let (nv, nr) = (self.frame.input_len(), self.frame.output_len());
        let mut out = vec![0.0; self.input_len()];
        for (yi, xi) in y.chunks_exact(nr).zip(out.chunks_exact_mut(nv)) {
            self.frame.matrix.backproject_into(yi, xi);
        }
        Ok(out)
    }
}

/// Ray-by-ray projection without storing the system matrix.
pub fn project_on_the_fly(frame: &Volume3, geom: &Geometry, angles: &[f64]) -> Result<Vec<f64>> {
    if frame.dims != geom.vol_dims {
        return Err(Error::DimensionMismatch { expected: geom.vol_dims.to_vec(), got: frame.dims.to_vec() });
    }
    geom.validate(angles)?;
    let per_angle = geom.rays_per_angle();
    Ok((0..angles.len() * per_angle)
        .into_par_iter()
        .map_init(Vec::new, |buf, r| {
            let (a, rest) = (r / per_angle, r % per_angle);
            let (p0, p1) = geom.ray(angles[a], rest % geom.det_cols, rest / geom.det_cols);
            trace_ray(geom.vol_dims, geom.voxel_size, p0, p1, buf);
            buf.iter().map(|&(c, w)| w * frame.data[c as usize]).sum()
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseConvention {
    /// Each projection image is scaled to `[0, 1]` by its maximum, noise of the
    /// given variance is added, and the image is scaled back.
    #[default]
    RelativeToMax,
    /// Noise of the given variance in data units.
    Absolute,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub variance: f64,
    #[serde(default)]
    pub convention: NoiseConvention,
    pub seed: u64,
}

/// Projection data of all frames: `frames x angles x det_rows x det_cols`.
#[derive(Clone, Debug, PartialEq)]
pub struct SinogramSet {
    pub geometry: Geometry,
    pub angles: Vec<f64>,
    pub frames: usize,
    pub noise: Option<NoiseSpec>,
    pub data: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SinogramManifest {
    pub frames: usize,
    pub angles: Vec<f64>,
    pub det_rows: usize,
    pub det_cols: usize,
    pub geometry: Geometry,
    pub noise: Option<NoiseSpec>,
    pub noiseless: bool,
    pub dtype: String,
    pub order: String,
    pub file: String,
}

impl SinogramSet {
    pub fn frame_len(&self) -> usize {
        self.angles.len() * self.geometry.rays_per_angle()
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let m = self.frame_len();
        &self.data[t * m..(t + 1) * m]
    }

    pub fn manifest(&self, file: &str) -> SinogramManifest {
        SinogramManifest {
            frames: self.frames,
            angles: self.angles.clone(),
            det_rows: self.geometry.det_rows,
            det_cols: self.geometry.det_cols,
            geometry: self.geometry.clone(),
            noise: self.noise.clone(),
            noiseless: self.noise.as_ref().is_none_or(|n| n.variance == 0.0),
            dtype: "f32".into(),
            order: "frame,angle,row,col (col fastest)".into(),
            file: file.into(),
        }
    }

    /// Writes `<stem>.raw` and `<stem>.json`.
    pub fn write(&self, stem: &Path) -> Result<()> {
        let raw = stem.with_extension("raw");
        write_f32_raw(&raw, &self.data)?;
        let name = raw.file_name().and_then(|s| s.to_str()).unwrap_or("sinogram.raw").to_string();
        fs::write(stem.with_extension("json"), serde_json::to_vec_pretty(&self.manifest(&name))?)?;
        Ok(())
    }

    pub fn read(stem: &Path) -> Result<Self> {
        let m: SinogramManifest = serde_json::from_slice(&fs::read(stem.with_extension("json"))?)?;
        let data = crate::volume::read_f32_raw(&stem.with_file_name(&m.file))?;
        let set = Self { geometry: m.geometry, angles: m.angles, frames: m.frames, noise: m.noise, data };
        check_len(set.frames * set.frame_len(), set.data.len())?;
        Ok(set)
    }
}

/// Stage (0-based) whose phantom state is used for angle `i` of `count`:
/// the angles of a frame are split into `stages` consecutive batches.
pub fn stage_of_angle(i: usize, count: usize, stages: usize) -> usize {
    i * stages / count
}

/// 2x2 detector binning by averaging, per projection image.
pub fn downsample_detector(fine: &[f64], fine_cols: usize, fine_rows: usize) -> Vec<f64> {
    let (cols, rows) = (fine_cols / 2, fine_rows / 2);
    let images = fine.len() / (fine_cols * fine_rows);
    let mut out = Vec::with_capacity(images * rows * cols);
    for img in fine.chunks_exact(fine_cols * fine_rows) {
        for r in 0..rows {
            for c in 0..cols {
                let at = |rr: usize, cc: usize| img[rr * fine_cols + cc];
                out.push(0.25 * (at(2 * r, 2 * c) + at(2 * r, 2 * c + 1) + at(2 * r + 1, 2 * c) + at(2 * r + 1, 2 * c + 1)));
            }
        }
    }
    out
}

pub fn add_noise(data: &mut [f64], image_len: usize, noise: &NoiseSpec) -> Result<()> {
    if noise.variance < 0.0 || !noise.variance.is_finite() {
        return Err(Error::InvalidParameter(format!("noise variance must be >= 0, got {}", noise.variance)));
    }
    if noise.variance == 0.0 {
        return Ok(());
    }
    let normal = Normal::new(0.0, noise.variance.sqrt()).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    for img in data.chunks_mut(image_len) {
        let scale = match noise.convention {
            NoiseConvention::Absolute => 1.0,
            NoiseConvention::RelativeToMax => img.iter().fold(0.0f64, |m, x| m.max(x.abs())),
        };
        for x in img.iter_mut() {
            *x += scale * normal.sample(&mut rng);
        }
    }
    Ok(())
}

/// Simulated measurements and the matching ground truth.
#[derive(Clone, Debug)]
pub struct Simulation {
    pub sinograms: SinogramSet,
    pub ground_truth: Volume4,
}

/// Renders the phantom at twice the target resolution, projects each frame in
/// stage batches with a doubled detector, bins the detector 2x2 and adds noise.
/// The ground truth is rendered at the target resolution from the middle stages.
pub fn simulate_measurements(
    spec: &PhantomSpec,
    schedule: &OmegaSchedule,
    geom: &Geometry,
    angles: &[f64],
    noise: Option<NoiseSpec>,
) -> Result<Simulation> {
    spec.validate()?;
    geom.validate(angles)?;
    let fine = geom.refined();
    // the simulator never shares a grid with the reconstruction geometry
    debug_assert_ne!(fine.vol_dims, geom.vol_dims);
    let labels = LabelMap::render(spec, fine.vol_dims);
    let image_len = geom.rays_per_angle();
    let mut data = Vec::with_capacity(schedule.frames * angles.len() * image_len);
    for t in 0..schedule.frames {
        for s in 0..schedule.stages {
            let batch: Vec<f64> = (0..angles.len())
                .filter(|&i| stage_of_angle(i, angles.len(), schedule.stages) == s)
                .map(|i| angles[i])
                .collect();
            if batch.is_empty() {
                continue;
            }
            let frame = labels.frame(spec, schedule.omega[t][s]);
            let proj = project_on_the_fly(&frame, &fine, &batch)?;
            data.extend(downsample_detector(&proj, fine.det_cols, fine.det_rows));
        }
    }
    if let Some(n) = &noise {
        add_noise(&mut data, image_len, n)?;
    }
    let ground_truth = render_ground_truth(spec, geom.vol_dims, schedule)?;
    let sinograms = SinogramSet { geometry: geom.clone(), angles: angles.to_vec(), frames: schedule.frames, noise, data };
    Ok(Simulation { sinograms, ground_truth })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    /// Length of the segment inside an axis-aligned box, by slab clipping.
    fn chord(p0: [f64; 3], p1: [f64; 3], lo: [f64; 3], hi: [f64; 3]) -> f64 {
        let d = [p1[0] - p0[0], p1[1] - p0[1], p1[2] - p0[2]];
        let (mut a0, mut a1) = (0.0f64, 1.0f64);
        for ax in 0..3 {
            if d[ax] == 0.0 {
                if p0[ax] < lo[ax] || p0[ax] > hi[ax] {
                    return 0.0;
                }
            } else {
                let (t0, t1) = ((lo[ax] - p0[ax]) / d[ax], (hi[ax] - p0[ax]) / d[ax]);
                a0 = a0.max(t0.min(t1));
                a1 = a1.min(t0.max(t1));
            }
        }
        (a1 - a0).max(0.0) * (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
    }

    fn dense_oracle(geom: &Geometry, angles: &[f64]) -> Vec<Vec<f64>> {
        let [n1, n2, n3] = geom.vol_dims;
        let h = geom.voxel_size;
        let mut rows = Vec::new();
        for &theta in angles {
            for r in 0..geom.det_rows {
                for c in 0..geom.det_cols {
                    let (p0, p1) = geom.ray(theta, c, r);
                    let mut row = vec![0.0; n1 * n2 * n3];
                    for k in 0..n3 {
                        for j in 0..n2 {
                            for i in 0..n1 {
                                let lo = [i, j, k].map(|x| x as f64 * h);
                                let lo = [lo[0] - 0.5 * n1 as f64 * h, lo[1] - 0.5 * n2 as f64 * h, lo[2] - 0.5 * n3 as f64 * h];
                                row[i + n1 * (j + n2 * k)] = chord(p0, p1, lo, [lo[0] + h, lo[1] + h, lo[2] + h]);
                            }
                        }
                    }
                    rows.push(row);
                }
            }
        }
        rows
    }

    #[test]
    fn uniform_cube_gives_chord_lengths() {
        let geom = Geometry::parallel_default([8, 8, 8]);
        let ones = Volume3 { dims: [8, 8, 8], data: vec![1.0; 512] };
        for theta in [0.0, PI / 2.0, 0.37, 1.1] {
            let p = Projector::new(geom.clone(), vec![theta]).unwrap();
            let sino = p.project(&ones).unwrap();
            for r in 0..geom.det_rows {
                for c in 0..geom.det_cols {
                    let (p0, p1) = geom.ray(theta, c, r);
                    let expect = chord(p0, p1, [-4.0; 3], [4.0; 3]);
                    assert!((sino[r * geom.det_cols + c] - expect).abs() < 1e-10);
                    if theta == 0.0 && expect > 0.0 {
                        assert!((expect - 8.0).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn matches_dense_matrix_oracle() {
        for geom in [Geometry::parallel_default([8, 8, 8]), Geometry::cone_default([8, 8, 8])] {
            let angles = equispaced_angles(geom.mode, 5);
            let p = Projector::new(geom.clone(), angles.clone()).unwrap();
            let dense = dense_oracle(&geom, &angles);
            for (r, row) in dense.iter().enumerate() {
                let mut sparse = vec![0.0; row.len()];
                for (c, w) in p.matrix().row(r) {
                    sparse[c] += w;
                }
                for (a, b) in sparse.iter().zip(row) {
                    assert!((a - b).abs() < 1e-10);
                }
            }
            // impulse response: the sinogram of a single voxel is that voxel's column
            let mut frame = Volume3::zeros([8, 8, 8]);
            frame.data[3 + 8 * (4 + 8 * 2)] = 1.0;
            let sino = p.project(&frame).unwrap();
            for (r, row) in dense.iter().enumerate() {
                assert!((sino[r] - row[3 + 8 * (4 + 8 * 2)]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn backprojection_is_the_transpose() {
        for geom in [Geometry::parallel_default([16, 16, 16]), Geometry::cone_default([16, 16, 16])] {
            let p = Projector::new(geom.clone(), equispaced_angles(geom.mode, 7)).unwrap();
            let f = random(p.input_len(), 1);
            let m = random(p.output_len(), 2);
            let lhs = crate::volume::dot(&p.apply(&f).unwrap(), &m);
            let rhs = crate::volume::dot(&f, &p.apply_adjoint(&m).unwrap());
            assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(rhs.abs()));
        }
    }

    #[test]
    fn dense_transpose_oracle() {
        let geom = Geometry::cone_default([8, 8, 8]);
        let angles = equispaced_angles(BeamMode::Cone, 3);
        let p = Projector::new(geom.clone(), angles.clone()).unwrap();
        let dense = dense_oracle(&geom, &angles);
        let m = random(dense.len(), 5);
        let bp = p.backproject(&m).unwrap();
        for v in 0..512 {
            let expect: f64 = dense.iter().zip(&m).map(|(row, y)| row[v] * y).sum();
            assert!((bp.data[v] - expect).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_in_zero_out_and_linearity() {
        let geom = Geometry::cone_default([8, 8, 4]);
        let p = Projector::new(geom, equispaced_angles(BeamMode::Cone, 4)).unwrap();
        assert!(p.project(&Volume3::zeros([8, 8, 4])).unwrap().iter().all(|&x| x == 0.0));
        assert!(p.backproject(&vec![0.0; p.sinogram_len()]).unwrap().data.iter().all(|&x| x == 0.0));
        let f = Volume3 { dims: [8, 8, 4], data: random(256, 3) };
        let f2 = Volume3 { dims: [8, 8, 4], data: f.data.iter().map(|x| 2.0 * x).collect() };
        let (a, b) = (p.project(&f).unwrap(), p.project(&f2).unwrap());
        assert!(a.iter().zip(&b).all(|(x, y)| 2.0 * x == *y));
        assert!(p.backproject(&[1.0]).is_err());
    }

    #[test]
    fn on_the_fly_matches_matrix() {
        let geom = Geometry::cone_default([8, 8, 8]);
        let angles = equispaced_angles(BeamMode::Cone, 4);
        let p = Projector::new(geom.clone(), angles.clone()).unwrap();
        let f = Volume3 { dims: [8, 8, 8], data: random(512, 4) };
        assert_eq!(p.project(&f).unwrap(), project_on_the_fly(&f, &geom, &angles).unwrap());
    }

    #[test]
    fn narrow_detector_is_rejected() {
        let mut geom = Geometry::cone_default([16, 16, 8]);
        geom.det_cols = 4;
        assert!(Projector::new(geom, vec![0.0, 1.0]).is_err());
    }

    #[test]
    fn stage_partition_covers_every_angle_once() {
        for count in 1..=40 {
            for stages in [1, 3, 15] {
                let mut sizes = vec![0usize; stages];
                for i in 0..count {
                    let s = stage_of_angle(i, count, stages);
                    assert!(s < stages);
                    sizes[s] += 1;
                }
                assert_eq!(sizes.iter().sum::<usize>(), count);
                // stages are visited in acquisition order
                assert!((1..count).all(|i| stage_of_angle(i, count, stages) >= stage_of_angle(i - 1, count, stages)));
            }
        }
        let sizes: Vec<usize> = (0..15).map(|s| (0..12).filter(|&i| stage_of_angle(i, 12, 15) == s).count()).collect();
        assert_eq!(sizes.iter().sum::<usize>(), 12);
        assert!(sizes.iter().all(|&n| n <= 1));
    }

    #[test]
    fn static_noiseless_simulation_matches_direct_projection() {
        use crate::phantom::{Ellipsoid, IntensityLaw};
        let spec = PhantomSpec { ellipsoids: vec![Ellipsoid::ball([0.1, 0.0, 0.0], 0.5, IntensityLaw::Constant { c: 0.8 })] };
        let sched = OmegaSchedule::build(2, 3).unwrap();
        let mismatch = |n: usize| {
            let geom = Geometry::cone_default([n; 3]);
            let angles = equispaced_angles(BeamMode::Cone, 6);
            let sim = simulate_measurements(&spec, &sched, &geom, &angles, None).unwrap();
            let p = Projector::new(geom, angles).unwrap();
            let direct = p.project(&sim.ground_truth.frame(1)).unwrap();
            assert_eq!(sim.sinograms.frame(0), sim.sinograms.frame(1));
            let got = sim.sinograms.frame(1);
            let num: f64 = direct.iter().zip(got).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            num / direct.iter().map(|a| a * a).sum::<f64>().sqrt()
        };
        // only the voxelization of the ball boundary differs, so the gap shrinks like 1/n
        let (coarse, fine) = (mismatch(16), mismatch(32));
        assert!(fine < 0.06, "{fine}");
        assert!(fine < 0.65 * coarse, "{coarse} -> {fine}");
    }

    #[test]
    fn simulation_is_deterministic_under_a_seed() {
        let spec = PhantomSpec::default_dynamic();
        let sched = OmegaSchedule::build(2, 15).unwrap();
        let geom = Geometry::cone_default([16, 16, 8]);
        let angles = equispaced_angles(BeamMode::Cone, 12);
        let noise = Some(NoiseSpec { variance: 0.05, convention: NoiseConvention::RelativeToMax, seed: 9 });
        let a = simulate_measurements(&spec, &sched, &geom, &angles, noise.clone()).unwrap();
        let b = simulate_measurements(&spec, &sched, &geom, &angles, noise).unwrap();
        assert_eq!(a.sinograms, b.sinograms);
        assert_eq!(a.sinograms.data.len(), 2 * 12 * geom.rays_per_angle());
    }

    #[test]
    fn sinogram_file_round_trip() {
        let geom = Geometry::parallel_default([4, 4, 2]);
        let set = SinogramSet { angles: vec![0.0, 1.0], frames: 1, noise: None, data: (0..2 * geom.rays_per_angle()).map(|i| i as f64).collect(), geometry: geom };
        let dir = std::env::temp_dir().join(format!("cylshear-sino-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        set.write(&dir.join("sino")).unwrap();
        assert_eq!(SinogramSet::read(&dir.join("sino")).unwrap(), set);
        fs::remove_dir_all(dir).ok();
    }
}
