//! Command-line front end: blur synthesis, blind deblurring, metrics and PSF
//! emission.

pub mod config;
pub mod error;
pub mod imageio;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use rcs_deblur::recovery::{
    blur, isnr, motion_psf_extent, psf_from_text, psf_to_text, snr, synth_gaussian_psf, synth_motion_psf,
    PhaseTrace,
};
use rcs_deblur::support::{bd_rcs_pipeline_traced, Diagnostics};
use rcs_deblur::{Image, TraceRecord};

use crate::config::{parse_bbox, PsfSpec, RunConfig};
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "rcs-deblur", version, about = "Blind image deblurring with row-column sparse lifting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Blur an image with a synthetic PSF and write the PSF next to it.
    Blur(RunArgs),
    /// Recover kernel and image from a blurred image.
    Deblur(RunArgs),
    /// Print SNR and ISNR of a reconstruction.
    Metrics(RunArgs),
    /// Write a synthetic PSF grid.
    Psf(RunArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Input image (.png or .pgm); deblur accepts several for a batch run.
    #[arg(long, num_args = 1..)]
    pub input: Vec<PathBuf>,
    /// Output image, PSF file, or directory for batch runs.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// `key=value` configuration file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Initial kernel bounding box, e.g. `9x9`.
    #[arg(long, value_parser = parse_bbox)]
    pub bbox: Option<(usize, usize)>,
    /// `motion:<length>,<angle>` or `gaussian:<radius>,<sigma>`.
    #[arg(long)]
    pub psf: Option<PsfSpec>,
    /// Standard deviation of added Gaussian noise, in `[0, 1]` intensity units.
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Trace CSV path (deblur); defaults to `<output>.trace.csv`.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Kernel grid path (blur, deblur); defaults to `<output>.psf`.
    #[arg(long)]
    pub kernel: Option<PathBuf>,
    /// Ground-truth image for metrics.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Reconstruction to score (metrics).
    #[arg(long)]
    pub recovered: Option<PathBuf>,
}

impl RunArgs {
    pub fn resolve(&self) -> CliResult<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        if let Some(bbox) = self.bbox {
            cfg.pipeline.bbox = bbox;
            cfg.bbox_given = true;
        }
        if let Some(psf) = self.psf {
            cfg.psf = Some(psf);
        }
        if let Some(noise) = self.noise {
            cfg.noise_sigma = noise;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
            cfg.pipeline.solver.seed = seed;
        }
        Ok(cfg)
    }

    fn single_input(&self) -> CliResult<&Path> {
        match self.input.as_slice() {
            [one] => Ok(one),
            [] => Err(CliError::Usage("--input is required".into())),
            _ => Err(CliError::Usage("this subcommand takes a single --input".into())),
        }
    }

    fn output(&self) -> CliResult<&Path> {
        self.output.as_deref().ok_or_else(|| CliError::Usage("--output is required".into()))
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Blur(args) => cmd_blur(&args),
        Command::Deblur(args) => cmd_deblur(&args),
        Command::Metrics(args) => cmd_metrics(&args),
        Command::Psf(args) => cmd_psf(&args),
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.with_extension("").into_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Synthesizes a PSF on its tight centred grid.
pub fn synth_psf(spec: &PsfSpec) -> CliResult<Image> {
    Ok(match spec {
        PsfSpec::Motion(m) => synth_motion_psf(m, motion_psf_extent(m))?,
        PsfSpec::Gaussian(g) => synth_gaussian_psf(g, (2 * g.radius + 1, 2 * g.radius + 1))?,
    })
}

fn require_psf(cfg: &RunConfig) -> CliResult<PsfSpec> {
    cfg.psf.ok_or_else(|| CliError::Usage("--psf is required".into()))
}

pub fn cmd_psf(args: &RunArgs) -> CliResult<()> {
    let cfg = args.resolve()?;
    let text = psf_to_text(&synth_psf(&require_psf(&cfg)?)?);
    match &args.output {
        Some(path) => write_text(path, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn cmd_blur(args: &RunArgs) -> CliResult<()> {
    let cfg = args.resolve()?;
    let spec = require_psf(&cfg)?;
    let input = args.single_input()?;
    let output = args.output()?;
    let x = imageio::read_image(input)?;
    let k = synth_psf(&spec)?;
    let y = blur(&x, &k, cfg.noise_sigma, cfg.seed)?;
    imageio::write_image(output, &y)?;
    let kernel_path = args.kernel.clone().unwrap_or_else(|| with_suffix(output, ".psf"));
    write_text(&kernel_path, &psf_to_text(&k))
}

/// Trace CSV of a whole run; `iter` counts outer iterations across all solves.
pub fn trace_csv(trace: &[PhaseTrace]) -> String {
    let mut out = String::from(TraceRecord::CSV_HEADER);
    out.push('\n');
    for (i, rec) in trace.iter().flat_map(|p| &p.records).enumerate() {
        let row = TraceRecord { iter: i, ..rec.clone() }.csv_row();
        out.push_str(&row);
        out.push('\n');
    }
    out
}

struct DeblurPaths {
    image: PathBuf,
    kernel: PathBuf,
    trace: PathBuf,
    kernel_mask: PathBuf,
    image_mask: PathBuf,
}

impl DeblurPaths {
    fn single(args: &RunArgs, output: &Path) -> Self {
        Self {
            image: output.to_path_buf(),
            kernel: args.kernel.clone().unwrap_or_else(|| with_suffix(output, ".psf")),
            trace: args.trace.clone().unwrap_or_else(|| with_suffix(output, ".trace.csv")),
            kernel_mask: with_suffix(output, ".kernel.mask"),
            image_mask: with_suffix(output, ".image.mask"),
        }
    }

    fn in_dir(dir: &Path, input: &Path) -> Self {
        let stem = input.file_stem().map(PathBuf::from).unwrap_or_else(|| PathBuf::from("image"));
        let base = dir.join(stem);
        Self {
            image: base.join("recovered.png"),
            kernel: base.join("kernel.psf"),
            trace: base.join("trace.csv"),
            kernel_mask: base.join("kernel.mask"),
            image_mask: base.join("image.mask"),
        }
    }
}

fn deblur_one(input: &Path, paths: &DeblurPaths, cfg: &RunConfig, truth: Option<&Path>) -> CliResult<String> {
    let y = imageio::read_image(input)?;
    let mut diag = Diagnostics::default();
    let result = bd_rcs_pipeline_traced(&y, &cfg.pipeline, &mut diag);
    write_text(&paths.trace, &trace_csv(&diag.trace))?;
    for w in &diag.warnings {
        log::warn!("{}: {w}", input.display());
    }
    let out = result?;
    imageio::write_image(&paths.image, &out.image)?;
    write_text(&paths.kernel, &psf_to_text(&out.kernel))?;
    write_text(&paths.kernel_mask, &out.kernel_mask.to_text())?;
    write_text(&paths.image_mask, &out.image_mask.to_text())?;

    let mut report = String::new();
    let _ = writeln!(report, "kernel_support={}", out.kernel_mask.len());
    let _ = writeln!(report, "image_support={}", out.image_mask.len());
    let _ = writeln!(report, "kernel_rounds={}", out.kernel_rounds);
    let _ = writeln!(report, "image_rounds={}", out.image_rounds);
    let _ = writeln!(report, "s1={:.6e}", out.singular_values[0]);
    let _ = writeln!(report, "s2={:.6e}", out.singular_values[1]);
    if let Some(truth) = truth {
        let x = imageio::read_image(truth)?;
        let _ = writeln!(report, "SNR={:.4}", snr(&x, &out.image)?);
        match isnr(&y, &x, &out.image) {
            Ok(v) => {
                let _ = writeln!(report, "ISNR={v:.4}");
            }
            Err(e) => log::info!("ISNR not reported: {e}"),
        }
    }
    Ok(report)
}

pub fn cmd_deblur(args: &RunArgs) -> CliResult<()> {
    let cfg = args.resolve()?;
    if !cfg.bbox_given {
        return Err(CliError::Usage("a bounding box is required (--bbox HxW or bbox= in --config)".into()));
    }
    let output = args.output()?;
    match args.input.as_slice() {
        [] => Err(CliError::Usage("--input is required".into())),
        [input] => {
            let report = deblur_one(input, &DeblurPaths::single(args, output), &cfg, args.truth.as_deref())?;
            print!("{report}");
            Ok(())
        }
        inputs => {
            if args.truth.is_some() || args.trace.is_some() || args.kernel.is_some() {
                return Err(CliError::Usage("--truth, --trace and --kernel apply to single-image runs".into()));
            }
            let results: Vec<CliResult<String>> = inputs
                .par_iter()
                .map(|input| {
                    let paths = DeblurPaths::in_dir(output, input);
                    let dir = paths.image.parent().expect("joined path has a parent");
                    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
                    deblur_one(input, &paths, &cfg, None)
                })
                .collect();
            let mut first_err = None;
            for (input, res) in inputs.iter().zip(results) {
                match res {
                    Ok(report) => print!("[{}]\n{report}", input.display()),
                    Err(e) => {
                        eprintln!("{}: {e}", input.display());
                        first_err.get_or_insert(e);
                    }
                }
            }
            first_err.map_or(Ok(()), Err)
        }
    }
}

pub fn cmd_metrics(args: &RunArgs) -> CliResult<()> {
    let blurred = imageio::read_image(args.single_input()?)?;
    let truth_path = args.truth.as_deref().ok_or_else(|| CliError::Usage("--truth is required".into()))?;
    let rec_path = args.recovered.as_deref().ok_or_else(|| CliError::Usage("--recovered is required".into()))?;
    let truth = imageio::read_image(truth_path)?;
    let rec = imageio::read_image(rec_path)?;
    println!("SNR={:.4}", snr(&truth, &rec)?);
    println!("ISNR={:.4}", isnr(&blurred, &truth, &rec)?);
    Ok(())
}

/// Reads a kernel grid written by `psf`, `blur` or `deblur`.
pub fn read_psf(path: &Path) -> CliResult<Image> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(psf_from_text(&text)?)
}
