//! Command-line front end: phantom rendering, measurement simulation,
//! reconstruction, transforms, N-term benchmarks and quality metrics.

mod config;
mod output;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cylshear::approx::{decay_experiment, geometric_ladder, slope_summary, write_curves_csv, DecayConfig};
use cylshear::dirfilters::WedgeLayout;
use cylshear::dwt4::Dwt4;
use cylshear::operator::SparsifyingTransform;
use cylshear::pdfp::{reconstruct, write_history_csv};
use cylshear::phantom::{render_ground_truth, CartoonSpec, OmegaSchedule, PhantomSpec};
use cylshear::projector::{equispaced_angles, simulate_measurements, NoiseConvention, NoiseSpec, SinogramSet};
use cylshear::quality::MetricsReport;
use cylshear::shearlet::{CoeffSet, ShearletSystem};
use cylshear::{GridDims, Volume4};

use config::{Regularizer, RunConfig};
use output::{write_json, write_slices, Provenance};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Divergence(String),
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Divergence(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Divergence(m) => write!(f, "numerical divergence: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<cylshear::Error> for CliError {
    fn from(e: cylshear::Error) -> Self {
        match e {
            cylshear::Error::Io(_) | cylshear::Error::Json(_) => CliError::Io(e.to_string()),
            cylshear::Error::Divergence { .. } => CliError::Divergence(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "cylshear", version, about = "4D cylindrical shearlets for dynamic tomography")]
struct Cli {
    /// Seed for every random draw (noise, power iteration).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results are reproducible for a fixed count.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct GridArgs {
    /// Spatial grid as N1,N2,N3 [default: 64,64,16].
    #[arg(long, value_parser = parse_dims)]
    dims: Option<[usize; 3]>,
    /// Number of time frames [default: 8].
    #[arg(long)]
    frames: Option<usize>,
    /// Phantom states per frame (odd) [default: 15].
    #[arg(long)]
    stages: Option<usize>,
    /// Phantom spec JSON [default: built-in dynamic phantom].
    #[arg(long)]
    phantom: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
struct ShearArgs {
    /// Shear radius per directional scale, coarsest first (odd layouts) [default: 1,2].
    #[arg(long, value_delimiter = ',')]
    shear_radii: Option<Vec<usize>>,
    /// Wavelet decomposition levels [default: 3].
    #[arg(long)]
    dwt_levels: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render the ground-truth phantom volume.
    Phantom {
        #[command(flatten)]
        grid: GridArgs,
        /// Output stem (writes .raw and .json).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate noisy sinograms and the matching ground truth.
    Simulate {
        #[command(flatten)]
        grid: GridArgs,
        /// Projection angles per frame [default: 30].
        #[arg(long)]
        angles: Option<usize>,
        /// Noise variance [default: 0.05].
        #[arg(long)]
        noise_var: Option<f64>,
        /// Noise scaling convention [default: relative-to-max].
        #[arg(long, value_enum)]
        noise_convention: Option<NoiseArg>,
        /// Output stem; the ground truth goes to `<stem>_truth`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reconstruct a volume from a sinogram set.
    Reconstruct {
        /// Sinogram stem written by `simulate`.
        #[arg(long)]
        sino: PathBuf,
        /// Regularizing transform [default: cylsh].
        #[arg(long, value_enum)]
        reg: Option<Regularizer>,
        #[command(flatten)]
        shear: ShearArgs,
        /// Iteration cap [default: 50].
        #[arg(long)]
        max_iters: Option<usize>,
        /// Fixed regularization weight (disables the data-driven start).
        #[arg(long)]
        beta: Option<f64>,
        /// Target fraction of nonzero detail coefficients for the beta controller.
        #[arg(long)]
        target_sparsity: Option<f64>,
        /// Leave the coarse band unpenalized.
        #[arg(long)]
        no_coarse_threshold: bool,
        /// Ground-truth stem; adds a metrics report.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Directory for central-slice PNGs of every frame.
        #[arg(long)]
        png: Option<PathBuf>,
        /// Upper end of the shared PNG gray scale.
        #[arg(long, default_value_t = 1.0)]
        png_max: f64,
        /// Write the iterate every k iterations.
        #[arg(long)]
        checkpoint_every: Option<usize>,
        /// Output stem.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Apply the shearlet transform, its inverse or its adjoint.
    Transform {
        #[arg(value_enum)]
        direction: Direction,
        /// Volume stem (fwd) or coefficient directory (inv, adj).
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        shear: ShearArgs,
        /// Coefficient directory (fwd) or volume stem (inv, adj).
        #[arg(long)]
        out: PathBuf,
    },
    /// N-term approximation decay curves on the cartoon phantom.
    Approx {
        /// Spatial grid [default: 48,48,48].
        #[arg(long, value_parser = parse_dims)]
        dims: Option<[usize; 3]>,
        /// Frames [default: 8].
        #[arg(long)]
        frames: Option<usize>,
        /// Ladder as MIN:MAX:POINTS [default: 256:65536:9].
        #[arg(long)]
        ladder: Option<String>,
        /// Use the cartoon without its discontinuity.
        #[arg(long)]
        smooth: bool,
        #[command(flatten)]
        shear: ShearArgs,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// PSNR and SSIM of a reconstruction against the ground truth.
    Metrics {
        #[arg(long)]
        recon: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Report file [default: print to stdout].
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum NoiseArg {
    RelativeToMax,
    Absolute,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Direction {
    Fwd,
    Inv,
    Adj,
}

fn parse_dims(s: &str) -> Result<[usize; 3], String> {
    let v: Vec<usize> = s.split(',').map(|p| p.trim().parse::<usize>().map_err(|e| e.to_string())).collect::<Result<_, _>>()?;
    v.try_into().map_err(|_| format!("expected N1,N2,N3, got {s:?}"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("cylshear: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn apply_grid(cfg: &mut RunConfig, g: &GridArgs) {
    if let Some(d) = g.dims {
        cfg.dims = d;
    }
    if let Some(f) = g.frames {
        cfg.frames = f;
    }
    if let Some(s) = g.stages {
        cfg.stages = s;
    }
    if let Some(p) = &g.phantom {
        cfg.phantom = Some(p.clone());
    }
}

fn apply_shear(cfg: &mut RunConfig, s: &ShearArgs) {
    if let Some(r) = &s.shear_radii {
        cfg.shear_layouts = r.iter().map(|&l| WedgeLayout::Odd(l)).collect();
    }
    if let Some(l) = s.dwt_levels {
        cfg.dwt_levels = l;
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    let command_name = match &cli.command {
        Command::Phantom { .. } => "phantom",
        Command::Simulate { .. } => "simulate",
        Command::Reconstruct { .. } => "reconstruct",
        Command::Transform { .. } => "transform",
        Command::Approx { .. } => "approx",
        Command::Metrics { .. } => "metrics",
    };
    match &cli.command {
        Command::Phantom { grid, out } => {
            apply_grid(&mut cfg, grid);
            set_out(&mut cfg, out);
        }
        Command::Simulate { grid, angles, noise_var, noise_convention, out } => {
            apply_grid(&mut cfg, grid);
            if let Some(a) = angles {
                cfg.angles = *a;
            }
            if let Some(v) = noise_var {
                cfg.noise.variance = *v;
            }
            if let Some(c) = noise_convention {
                cfg.noise.convention = match c {
                    NoiseArg::RelativeToMax => NoiseConvention::RelativeToMax,
                    NoiseArg::Absolute => NoiseConvention::Absolute,
                };
            }
            set_out(&mut cfg, out);
        }
        Command::Reconstruct { reg, shear, max_iters, beta, target_sparsity, no_coarse_threshold, out, .. } => {
            apply_shear(&mut cfg, shear);
            if let Some(r) = reg {
                cfg.regularizer = *r;
            }
            if let Some(m) = max_iters {
                cfg.solver.max_iters = *m;
            }
            if beta.is_some() {
                cfg.solver.beta = *beta;
            }
            if target_sparsity.is_some() {
                cfg.solver.target_sparsity = *target_sparsity;
            }
            if *no_coarse_threshold {
                cfg.solver.threshold_coarse = false;
            }
            set_out(&mut cfg, out);
        }
        Command::Transform { shear, .. } => apply_shear(&mut cfg, shear),
        Command::Approx { dims, frames, ladder, smooth, shear, out } => {
            apply_shear(&mut cfg, shear);
            if let Some(d) = dims {
                cfg.approx.dims = *d;
            }
            if let Some(f) = frames {
                cfg.approx.frames = *f;
            }
            if let Some(l) = ladder {
                let parts: Vec<usize> = l
                    .split(':')
                    .map(|p| p.trim().parse().map_err(|_| CliError::Config(format!("bad ladder {l:?}"))))
                    .collect::<CliResult<_>>()?;
                let [lo, hi, n] = parts[..] else {
                    return Err(CliError::Config(format!("ladder must be MIN:MAX:POINTS, got {l:?}")));
                };
                (cfg.approx.ladder_min, cfg.approx.ladder_max, cfg.approx.ladder_points) = (lo, hi, n);
            }
            if *smooth {
                cfg.approx.smooth = true;
            }
            set_out(&mut cfg, out);
        }
        Command::Metrics { .. } => {}
    }
    cfg.validate()?;
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    cfg.solver.seed = cfg.seed;
    let prov = Provenance::new(command_name, &cfg);

    match cli.command {
        Command::Phantom { .. } => cmd_phantom(&cfg, &prov),
        Command::Simulate { .. } => cmd_simulate(&cfg, &prov),
        Command::Reconstruct { sino, truth, png, png_max, checkpoint_every, .. } => {
            cmd_reconstruct(&cfg, &prov, &sino, truth.as_deref(), png.as_deref(), png_max, checkpoint_every)
        }
        Command::Transform { direction, input, out, .. } => cmd_transform(&cfg, &prov, direction, &input, &out),
        Command::Approx { .. } => cmd_approx(&cfg, &prov),
        Command::Metrics { recon, truth, out } => cmd_metrics(&prov, &recon, &truth, out.as_deref()),
    }
}

fn set_out(cfg: &mut RunConfig, out: &Option<PathBuf>) {
    if let Some(o) = out {
        cfg.out = Some(o.clone());
    }
}

fn out_path(cfg: &RunConfig, default: &str) -> PathBuf {
    cfg.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn load_phantom(cfg: &RunConfig) -> CliResult<PhantomSpec> {
    let spec = match &cfg.phantom {
        None => PhantomSpec::default_dynamic(),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("phantom {}: {e}", p.display())))?
        }
    };
    spec.validate()?;
    Ok(spec)
}

fn ensure_parent(path: &Path) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    Ok(())
}

fn cmd_phantom(cfg: &RunConfig, prov: &Provenance) -> CliResult<()> {
    let spec = load_phantom(cfg)?;
    let schedule = OmegaSchedule::build(cfg.frames, cfg.stages)?;
    let truth = render_ground_truth(&spec, cfg.dims, &schedule)?;
    let stem = out_path(cfg, "phantom");
    ensure_parent(&stem)?;
    truth.write_raw(&stem)?;
    write_json(&output::sibling(&stem, "_spec.json"), &spec)?;
    prov.write_for(&stem)
}

fn cmd_simulate(cfg: &RunConfig, prov: &Provenance) -> CliResult<()> {
    let spec = load_phantom(cfg)?;
    let schedule = OmegaSchedule::build(cfg.frames, cfg.stages)?;
    let geom = cfg.geometry.build(cfg.dims);
    let angles = equispaced_angles(geom.mode, cfg.angles);
    let noise = NoiseSpec { variance: cfg.noise.variance, convention: cfg.noise.convention, seed: cfg.seed };
    let sim = simulate_measurements(&spec, &schedule, &geom, &angles, Some(noise))?;
    let stem = out_path(cfg, "sinogram");
    ensure_parent(&stem)?;
    sim.sinograms.write(&stem)?;
    let truth_stem = output::sibling(&stem, "_truth");
    sim.ground_truth.write_raw(&truth_stem)?;
    prov.write_for(&stem)?;
    prov.write_for(&truth_stem)
}

fn regularizer(cfg: &RunConfig, dims: GridDims) -> CliResult<Box<dyn SparsifyingTransform + Sync>> {
    Ok(match cfg.regularizer {
        Regularizer::Cylsh => Box::new(ShearletSystem::build(dims, cfg.shearlet())?),
        Regularizer::Dwt4 => Box::new(Dwt4::new(dims, cfg.dwt_levels)?),
    })
}

fn cmd_reconstruct(
    cfg: &RunConfig,
    prov: &Provenance,
    sino: &Path,
    truth: Option<&Path>,
    png: Option<&Path>,
    png_max: f64,
    checkpoint_every: Option<usize>,
) -> CliResult<()> {
    let set = SinogramSet::read(sino)?;
    let [n1, n2, n3] = set.geometry.vol_dims;
    let dims = GridDims::new(n1, n2, n3, set.frames)?;
    let reg = regularizer(cfg, dims)?;
    let stem = out_path(cfg, "recon");
    ensure_parent(&stem)?;
    let every = checkpoint_every.filter(|&k| k > 0);
    let rec = reconstruct(&set, reg.as_ref(), &cfg.solver, |state| {
        if let Some(k) = every {
            if state.iteration % k == 0 {
                let v = Volume4 { dims, data: state.f.clone() };
                v.write_raw(&output::sibling(&stem, &format!("_iter{:04}", state.iteration)))?;
            }
        }
        Ok(())
    })?;
    rec.volume.write_raw(&stem)?;
    let mut csv = fs::File::create(output::sibling(&stem, "_history.csv"))?;
    write_history_csv(&rec.outcome.history, &mut csv)?;
    write_json(&output::sibling(&stem, "_params.json"), &serde_json::json!({
        "params": rec.outcome.params,
        "l_hat": rec.l_hat,
        "upper_frame_bound": reg.upper_frame_bound(),
        "converged": rec.outcome.converged,
        "iterations": rec.outcome.history.len() - 1,
    }))?;
    if let Some(t) = truth {
        let truth = Volume4::read_raw(t)?;
        let report = MetricsReport::compute(&rec.volume, &truth)?;
        write_json(&output::sibling(&stem, "_metrics.json"), &report)?;
    }
    if let Some(dir) = png {
        write_slices(&rec.volume, dir, png_max)?;
    }
    prov.write_for(&stem)
}

fn cmd_transform(cfg: &RunConfig, prov: &Provenance, dir: Direction, input: &Path, out: &Path) -> CliResult<()> {
    match dir {
        Direction::Fwd => {
            let f = Volume4::read_raw(input)?;
            let sys = ShearletSystem::build(f.dims, cfg.shearlet())?;
            let c = sys.forward(&f)?;
            c.write_dir(out)?;
            prov.write_for(&out.join("coefficients"))
        }
        Direction::Inv | Direction::Adj => {
            let c = CoeffSet::read_dir(input)?;
            let sys = ShearletSystem::build(c.dims, cfg.shearlet())?;
            let v = match dir {
                Direction::Inv => sys.inverse(&c)?,
                _ => sys.adjoint(&c)?,
            };
            ensure_parent(out)?;
            v.write_raw(out)?;
            prov.write_for(out)
        }
    }
}

fn cmd_approx(cfg: &RunConfig, prov: &Provenance) -> CliResult<()> {
    let a = &cfg.approx;
    let dims = GridDims::new(a.dims[0], a.dims[1], a.dims[2], a.frames)?;
    let ladder = geometric_ladder(a.ladder_min, a.ladder_max, a.ladder_points)?;
    let spec = if a.smooth { CartoonSpec::smooth() } else { CartoonSpec::default_ball() };
    let decay = DecayConfig { shearlet: cfg.shearlet(), dwt_levels: cfg.dwt_levels, ladder };
    let curves = decay_experiment(&spec, dims, &decay)?;
    let dir = out_path(cfg, "approx");
    fs::create_dir_all(&dir)?;
    write_curves_csv(&curves, fs::File::create(dir.join("curves.csv"))?)?;
    write_json(&dir.join("slopes.json"), &slope_summary(&curves))?;
    for s in slope_summary(&curves) {
        println!("{}: slope {:.3}", s.transform, s.slope);
    }
    prov.write_for(&dir.join("curves"))
}

fn cmd_metrics(prov: &Provenance, recon: &Path, truth: &Path, out: Option<&Path>) -> CliResult<()> {
    let r = Volume4::read_raw(recon)?;
    let t = Volume4::read_raw(truth)?;
    let report = MetricsReport::compute(&r, &t)?;
    match out {
        Some(path) => {
            ensure_parent(path)?;
            write_json(path, &report)?;
            prov.write_for(&path.with_extension(""))
        }
        None => {
            println!("{}", serde_json::to_string_pretty(&report).map_err(|e| CliError::Io(e.to_string()))?);
            Ok(())
        }
    }
}
