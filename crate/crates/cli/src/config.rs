//! Run configuration: defaults, then a `key=value` file, then flags.

use std::path::Path;
use std::str::FromStr;

use rcs_deblur::{GaussianPsfSpec, MotionPsfSpec, PipelineConfig};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PsfSpec {
    Motion(MotionPsfSpec),
    Gaussian(GaussianPsfSpec),
}

impl FromStr for PsfSpec {
    type Err = String;

    /// `motion:<length>,<angle>` or `gaussian:<radius>,<sigma>`.
    fn from_str(s: &str) -> Result<Self, String> {
        let (kind, params) = s.split_once(':').ok_or_else(|| format!("bad PSF spec {s:?}"))?;
        let (a, b) = params.split_once(',').ok_or_else(|| format!("PSF spec {s:?} needs two parameters"))?;
        let num = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("bad PSF parameter {v:?}: {e}"));
        match kind.trim() {
            "motion" => Ok(PsfSpec::Motion(MotionPsfSpec { length: num(a)?, angle_deg: num(b)? })),
            "gaussian" => {
                let radius = a.trim().parse::<usize>().map_err(|e| format!("bad PSF radius {a:?}: {e}"))?;
                Ok(PsfSpec::Gaussian(GaussianPsfSpec { radius, sigma: num(b)? }))
            }
            other => Err(format!("unknown PSF kind {other:?}")),
        }
    }
}

pub fn parse_bbox(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("bounding box {s:?} must look like HxW"))?;
    let dim = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("bad bounding box size {v:?}: {e}"));
    Ok((dim(h)?, dim(w)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub pipeline: PipelineConfig,
    /// Set once a bounding box came from a file or flag.
    pub bbox_given: bool,
    pub psf: Option<PsfSpec>,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            pipeline: PipelineConfig::default(),
            bbox_given: false,
            psf: None,
            noise_sigma: 0.0,
            seed: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> CliResult<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| CliError::Usage(format!("bad value {value:?} for {key}: {e}")))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        let s = &mut self.pipeline.solver;
        match key {
            "bbox" => {
                self.pipeline.bbox = parse_bbox(value).map_err(CliError::Usage)?;
                self.bbox_given = true;
            }
            "psf" => self.psf = Some(value.parse().map_err(CliError::Usage)?),
            "noise" => self.noise_sigma = parse(key, value)?,
            "seed" => {
                self.seed = parse(key, value)?;
                s.seed = self.seed;
            }
            "lambda" => s.lambda = parse(key, value)?,
            "rank" => s.rank = parse(key, value)?,
            "sigma0" => s.sigma0 = parse(key, value)?,
            "rho" => s.rho = parse(key, value)?,
            "eps0" => s.eps0 = parse(key, value)?,
            "outer_iters" => s.outer_iters = parse(key, value)?,
            "lbfgs_memory" => s.lbfgs_memory = parse(key, value)?,
            "lbfgs_max_iters" => s.lbfgs_max_iters = parse(key, value)?,
            "lbfgs_grad_tol" => s.lbfgs_grad_tol = parse(key, value)?,
            "image_keep_fraction" => self.pipeline.image_keep_fraction = parse(key, value)?,
            "row_threshold_factor" => self.pipeline.row_threshold_factor = parse(key, value)?,
            "max_refinement_rounds" => self.pipeline.max_refinement_rounds = parse(key, value)?,
            "image_refinement_rounds" => self.pipeline.image_refinement_rounds = parse(key, value)?,
            "haar_depth" => self.pipeline.haar_depth = Some(parse(key, value)?),
            _ => return Err(CliError::Usage(format!("unknown configuration key {key:?}"))),
        }
        Ok(())
    }

    /// Applies a `key=value` file; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> CliResult<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("config line {}: expected key=value", n + 1)))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> CliResult<()> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        self.apply_text(&text)
    }
}
