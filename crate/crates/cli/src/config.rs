use std::path::{Path, PathBuf};

use cylshear::dirfilters::WedgeLayout;
use cylshear::pdfp::SolverConfig;
use cylshear::projector::{BeamMode, Geometry, NoiseConvention};
use cylshear::shearlet::ShearletConfig;
use cylshear::GridDims;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Regularizer {
    Cylsh,
    Dwt4,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometryConfig {
    pub mode: BeamMode,
    pub source_origin: Option<f64>,
    pub origin_detector: Option<f64>,
    pub det_cols: Option<usize>,
    pub det_rows: Option<usize>,
    pub pitch: Option<f64>,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self { mode: BeamMode::Cone, source_origin: None, origin_detector: None, det_cols: None, det_rows: None, pitch: None }
    }
}

impl GeometryConfig {
    pub fn build(&self, dims: [usize; 3]) -> Geometry {
        let mut g = match self.mode {
            BeamMode::Cone => Geometry::cone_default(dims),
            BeamMode::Parallel => Geometry::parallel_default(dims),
        };
        if let Some(v) = self.source_origin {
            g.source_origin = v;
        }
        if let Some(v) = self.origin_detector {
            g.origin_detector = v;
        }
        if let Some(v) = self.det_cols {
            g.det_cols = v;
        }
        if let Some(v) = self.det_rows {
            g.det_rows = v;
        }
        if let Some(v) = self.pitch {
            g.pitch_u = v;
            g.pitch_v = v;
        }
        g
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub variance: f64,
    pub convention: NoiseConvention,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { variance: 0.05, convention: NoiseConvention::RelativeToMax }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ApproxConfig {
    pub dims: [usize; 3],
    pub frames: usize,
    pub ladder_min: usize,
    pub ladder_max: usize,
    pub ladder_points: usize,
    pub smooth: bool,
}

impl Default for ApproxConfig {
    fn default() -> Self {
        Self { dims: [48, 48, 48], frames: 8, ladder_min: 256, ladder_max: 65536, ladder_points: 9, smooth: false }
    }
}

/// Every setting of every subcommand. Read from `--config`, then overridden by flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dims: [usize; 3],
    pub frames: usize,
    pub stages: usize,
    /// Phantom spec file; the built-in dynamic phantom when unset.
    pub phantom: Option<PathBuf>,
    pub geometry: GeometryConfig,
    pub angles: usize,
    pub noise: NoiseConfig,
    /// Wedge layout per directional scale, coarsest first.
    pub shear_layouts: Vec<WedgeLayout>,
    pub dwt_levels: usize,
    pub regularizer: Regularizer,
    pub solver: SolverConfig,
    pub approx: ApproxConfig,
    pub seed: u64,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dims: [64, 64, 16],
            frames: 8,
            stages: 15,
            phantom: None,
            geometry: GeometryConfig::default(),
            angles: 30,
            noise: NoiseConfig::default(),
            shear_layouts: vec![WedgeLayout::Odd(1), WedgeLayout::Odd(2)],
            dwt_levels: 3,
            regularizer: Regularizer::Cylsh,
            solver: SolverConfig::default(),
            approx: ApproxConfig::default(),
            seed: 0,
            threads: None,
            out: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("config {}: {e}", p.display())))
            }
        }
    }

    pub fn grid(&self) -> Result<GridDims, CliError> {
        let [a, b, c] = self.dims;
        GridDims::new(a, b, c, self.frames).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn shearlet(&self) -> ShearletConfig {
        ShearletConfig { layouts: self.shear_layouts.clone(), mode: Default::default() }
    }

    /// Checks that do not need any computation.
    pub fn validate(&self) -> Result<(), CliError> {
        self.grid()?;
        let bad = |m: &str| Err(CliError::Config(m.into()));
        if self.stages == 0 || self.stages % 2 == 0 {
            return bad("stages must be odd so that a middle stage exists");
        }
        if self.angles == 0 {
            return bad("angles must be positive");
        }
        if !(self.noise.variance >= 0.0) {
            return bad("noise variance must be >= 0");
        }
        if self.shear_layouts.is_empty() {
            return bad("at least one directional scale is required");
        }
        if self.dwt_levels == 0 {
            return bad("dwt_levels must be positive");
        }
        if self.threads == Some(0) {
            return bad("threads must be positive");
        }
        if let Some(s) = self.solver.target_sparsity {
            if !(s > 0.0 && s < 1.0) {
                return bad("solver.target_sparsity must lie in (0, 1)");
            }
        }
        Ok(())
    }
}
