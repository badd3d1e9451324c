//! Dynamic ellipsoid phantoms, the acquisition-time schedule, and cylindrical
//! cartoon-like test functions.
//!
//! Spatial coordinates are normalized to the cube `[-1, 1]^3`, with voxel `i`
//! of an axis of length `n` centred at `-1 + (2i + 1) / n`.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{GridDims, Volume3, Volume4};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntensityLaw {
    Constant { c: f64 },
    /// `a + b * omega`
    Linear { a: f64, b: f64 },
    /// `a + b * sin(omega + phase)`
    Sinusoid { a: f64, b: f64, phase: f64 },
}

impl IntensityLaw {
    pub fn eval(&self, omega: f64) -> f64 {
        let v = match *self {
            IntensityLaw::Constant { c } => c,
            IntensityLaw::Linear { a, b } => a + b * omega,
            IntensityLaw::Sinusoid { a, b, phase } => a + b * (omega + phase).sin(),
        };
        v.clamp(0.0, 1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    pub center: [f64; 3],
    pub semi_axes: [f64; 3],
    /// Rotation angles (radians) about z, y and x, applied in that order.
    #[serde(default)]
    pub rotation: [f64; 3],
    pub law: IntensityLaw,
}

impl Ellipsoid {
    pub fn ball(center: [f64; 3], radius: f64, law: IntensityLaw) -> Self {
        Self { center, semi_axes: [radius; 3], rotation: [0.0; 3], law }
    }

    fn rotation_matrix(&self) -> [[f64; 3]; 3] {
        let [a, b, c] = self.rotation;
        let (sa, ca) = a.sin_cos();
        let (sb, cb) = b.sin_cos();
        let (sc, cc) = c.sin_cos();
        // Rz(a) * Ry(b) * Rx(c)
        [
            [ca * cb, ca * sb * sc - sa * cc, ca * sb * cc + sa * sc],
            [sa * cb, sa * sb * sc + ca * cc, sa * sb * cc - ca * sc],
            [-sb, cb * sc, cb * cc],
        ]
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        let r = self.rotation_matrix();
        let d = [p[0] - self.center[0], p[1] - self.center[1], p[2] - self.center[2]];
        // body coordinates: R^T d
        (0..3)
            .map(|i| {
                let q = r[0][i] * d[0] + r[1][i] * d[1] + r[2][i] * d[2];
                (q / self.semi_axes[i]).powi(2)
            })
            .sum::<f64>()
            <= 1.0
    }

    fn validate(&self) -> Result<()> {
        if self.semi_axes.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidParameter(format!("semi-axes must be positive, got {:?}", self.semi_axes)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub ellipsoids: Vec<Ellipsoid>,
}

impl PhantomSpec {
    /// The checked-in default: an outer shell, two linearly changing and six
    /// oscillating ellipsoids.
    pub fn default_dynamic() -> Self {
        serde_json::from_str(include_str!("../config/default_phantom.json")).expect("bundled phantom config parses")
    }

    pub fn validate(&self) -> Result<()> {
        self.ellipsoids.iter().try_for_each(Ellipsoid::validate)
    }
}

pub fn voxel_center(i: usize, n: usize) -> f64 {
    -1.0 + (2 * i + 1) as f64 / n as f64
}

/// Static geometry of a phantom: for each voxel, the last ellipsoid covering it.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelMap {
    pub dims: [usize; 3],
    pub labels: Vec<Option<u16>>,
}

impl LabelMap {
    pub fn render(spec: &PhantomSpec, dims: [usize; 3]) -> Self {
        let [n1, n2, n3] = dims;
        let mut labels = vec![None; n1 * n2 * n3];
        for (e_idx, e) in spec.ellipsoids.iter().enumerate() {
            for k in 0..n3 {
                for j in 0..n2 {
                    for i in 0..n1 {
                        let p = [voxel_center(i, n1), voxel_center(j, n2), voxel_center(k, n3)];
                        if e.contains(p) {
                            labels[i + n1 * (j + n2 * k)] = Some(e_idx as u16);
                        }
                    }
                }
            }
        }
        Self { dims, labels }
    }

    /// Painter's-order frame at acquisition parameter `omega`.
    pub fn frame(&self, spec: &PhantomSpec, omega: f64) -> Volume3 {
        let values: Vec<f64> = spec.ellipsoids.iter().map(|e| e.law.eval(omega)).collect();
        Volume3 { dims: self.dims, data: self.labels.iter().map(|l| l.map_or(0.0, |i| values[i as usize])).collect() }
    }
}

/// One spatial frame of the phantom at `omega`.
pub fn render_phantom(spec: &PhantomSpec, dims: [usize; 3], omega: f64) -> Volume3 {
    LabelMap::render(spec, dims).frame(spec, omega)
}

/// Acquisition parameters: `frames` disjoint sub-intervals of `[0, 2 pi]`,
/// each sampled at `stages` equispaced points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OmegaSchedule {
    pub frames: usize,
    pub stages: usize,
    pub omega: Vec<Vec<f64>>,
}

impl OmegaSchedule {
    pub fn build(frames: usize, stages: usize) -> Result<Self> {
        if frames == 0 {
            return Err(Error::InvalidParameter("at least one frame is required".into()));
        }
        if stages % 2 == 0 {
            return Err(Error::InvalidParameter(format!("stage count must be odd, got {stages}")));
        }
        let width = TAU / (2 * frames - 1) as f64;
        let omega = (0..frames)
            .map(|t| {
                let start = 2.0 * t as f64 * width;
                (0..stages).map(|s| start + width * (s as f64 + 0.5) / stages as f64).collect()
            })
            .collect();
        Ok(Self { frames, stages, omega })
    }

    /// 0-based index of the middle stage, used for the ground truth.
    pub fn middle_stage(&self) -> usize {
        self.stages / 2
    }

    pub fn interval(&self, t: usize) -> (f64, f64) {
        let width = TAU / (2 * self.frames - 1) as f64;
        (2.0 * t as f64 * width, (2 * t + 1) as f64 * width)
    }

    pub fn ground_truth_omegas(&self) -> Vec<f64> {
        self.omega.iter().map(|w| w[self.middle_stage()]).collect()
    }
}

/// Ground-truth 4D phantom sampled at the middle stage of every frame.
pub fn render_ground_truth(spec: &PhantomSpec, spatial: [usize; 3], schedule: &OmegaSchedule) -> Result<Volume4> {
    let labels = LabelMap::render(spec, spatial);
    let frames: Vec<Volume3> = schedule.ground_truth_omegas().into_iter().map(|w| labels.frame(spec, w)).collect();
    Volume4::from_frames(&frames)
}

/// One term `amp * cos(pi * (freq . x) + phase)` of a spatial trigonometric polynomial.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrigTerm {
    pub amp: f64,
    pub freq: [f64; 3],
    pub phase: f64,
}

/// `window(x) * (offset + sum of terms)`, with the C^2 window `prod (1 - x_i^2)^3`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothField {
    pub offset: f64,
    #[serde(default)]
    pub terms: Vec<TrigTerm>,
    #[serde(default = "yes")]
    pub windowed: bool,
}

fn yes() -> bool {
    true
}

impl SmoothField {
    pub fn zero() -> Self {
        Self { offset: 0.0, terms: vec![], windowed: false }
    }

    pub fn eval(&self, x: [f64; 3]) -> f64 {
        let poly = self.offset
            + self
                .terms
                .iter()
                .map(|t| t.amp * (PI * (t.freq[0] * x[0] + t.freq[1] * x[1] + t.freq[2] * x[2]) + t.phase).cos())
                .sum::<f64>();
        if self.windowed {
            poly * x.iter().map(|&s| (1.0 - s * s).max(0.0).powi(3)).product::<f64>()
        } else {
            poly
        }
    }
}

/// Periodic temporal factor `offset + amp * cos(2 pi t + phase)`, `t` in frames / total frames.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemporalProfile {
    pub offset: f64,
    pub amp: f64,
    pub phase: f64,
}

impl TemporalProfile {
    pub fn constant(c: f64) -> Self {
        Self { offset: c, amp: 0.0, phase: 0.0 }
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.offset + self.amp * (TAU * t + self.phase).cos()
    }
}

/// `f = h0 g0 + h1 1_B g1`: smooth in time, a jump across the fixed surface of `B`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CartoonSpec {
    pub region_center: [f64; 3],
    pub region_semi_axes: [f64; 3],
    pub h0: SmoothField,
    pub h1: SmoothField,
    pub g0: TemporalProfile,
    pub g1: TemporalProfile,
}

impl CartoonSpec {
    /// A ball of radius 0.5 with a textured interior on a smooth windowed background.
    pub fn default_ball() -> Self {
        Self {
            region_center: [0.05, -0.03, 0.02],
            region_semi_axes: [0.5, 0.5, 0.5],
            h0: SmoothField {
                offset: 0.25,
                terms: vec![TrigTerm { amp: 0.1, freq: [1.0, 0.5, 0.0], phase: 0.3 }],
                windowed: true,
            },
            h1: SmoothField {
                offset: 0.5,
                terms: vec![TrigTerm { amp: 0.1, freq: [0.0, 1.0, 1.0], phase: 0.0 }],
                windowed: false,
            },
            g0: TemporalProfile { offset: 1.0, amp: 0.1, phase: 0.0 },
            g1: TemporalProfile { offset: 0.8, amp: 0.2, phase: 1.0 },
        }
    }

    /// The same background without the discontinuous part.
    pub fn smooth() -> Self {
        Self { h1: SmoothField::zero(), ..Self::default_ball() }
    }

    pub fn region(&self) -> Ellipsoid {
        Ellipsoid {
            center: self.region_center,
            semi_axes: self.region_semi_axes,
            rotation: [0.0; 3],
            law: IntensityLaw::Constant { c: 1.0 },
        }
    }

    pub fn eval(&self, x: [f64; 3], t: f64) -> f64 {
        let inside = if self.region().contains(x) { 1.0 } else { 0.0 };
        self.h0.eval(x) * self.g0.eval(t) + inside * self.h1.eval(x) * self.g1.eval(t)
    }
}

pub fn render_cartoon(spec: &CartoonSpec, dims: GridDims) -> Volume4 {
    let [n1, n2, n3, n4] = dims.n;
    Volume4::from_fn(dims, |i| {
        let x = [voxel_center(i[0], n1), voxel_center(i[1], n2), voxel_center(i[2], n3)];
        spec.eval(x, i[3] as f64 / n4 as f64)
    })
}
