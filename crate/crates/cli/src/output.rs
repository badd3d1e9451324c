use std::fs;
use std::path::{Path, PathBuf};

use cylshear::Volume4;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::CliError;

/// `dir/name` -> `dir/name<suffix>`.
pub fn sibling(stem: &Path, suffix: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Written next to every artifact so that a run can be repeated exactly.
#[derive(Debug, Serialize)]
pub struct Provenance {
    pub command: String,
    pub version: String,
    pub config_sha256: String,
    pub seed: u64,
    pub threads: usize,
    pub config: RunConfig,
}

impl Provenance {
    pub fn new(command: &str, cfg: &RunConfig) -> Self {
        let canonical = serde_json::to_vec(cfg).expect("config serializes");
        let digest = Sha256::digest(&canonical);
        Self {
            command: command.to_owned(),
            version: env!("CARGO_PKG_VERSION").to_owned(),
            config_sha256: digest.iter().map(|b| format!("{b:02x}")).collect(),
            seed: cfg.seed,
            threads: cfg.threads.unwrap_or_else(rayon::current_num_threads),
            config: cfg.clone(),
        }
    }

    pub fn write_for(&self, stem: &Path) -> Result<(), CliError> {
        write_json(&sibling(stem, "_provenance.json"), self)
    }
}

/// Central axis-3 slice of every frame as 8-bit PNG, all frames on the same
/// gray scale `[0, max]`.
pub fn write_slices(v: &Volume4, dir: &Path, max: f64) -> Result<(), CliError> {
    if !(max > 0.0) {
        return Err(CliError::Config("png scale maximum must be positive".into()));
    }
    fs::create_dir_all(dir)?;
    let [n1, n2, n3, nt] = v.dims.n;
    let k = n3 / 2;
    for t in 0..nt {
        let mut img = image::GrayImage::new(n1 as u32, n2 as u32);
        for j in 0..n2 {
            for i in 0..n1 {
                let x = v.data[v.dims.index([i, j, k, t])] / max;
                let g = (x.clamp(0.0, 1.0) * 255.0).round() as u8;
                img.put_pixel(i as u32, j as u32, image::Luma([g]));
            }
        }
        let path = dir.join(format!("frame{t:03}.png"));
        img.save(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}
