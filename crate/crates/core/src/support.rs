//! Support masks, hard thresholding and the sequential kernel-then-image
//! refinement pipeline.

use std::fmt;

use crate::error::{DeblurError, Result};
use crate::image::Image;
use crate::lifted_op::{FactorPair, LiftedProblem};
use crate::recovery::{normalize_kernel, rank_one_extract, DeblurResult, PhaseTrace, Warning};
use crate::solver::{initialize_state, solve_traced, SolverConfig, SparsityMode};
use crate::transforms::{default_haar_depth, fft2, haar_analysis, ImageBasis, KernelBasis};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MaskTarget {
    Kernel,
    ImageCoeffs,
}

impl MaskTarget {
    fn as_str(self) -> &'static str {
        match self {
            MaskTarget::Kernel => "kernel",
            MaskTarget::ImageCoeffs => "image",
        }
    }
}

/// Sorted set of selected indices on a `height x width` grid.
///
/// Kernel masks index the bounding box row-major; image masks index the Haar
/// coefficient layout of the image grid.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SupportMask {
    target: MaskTarget,
    height: usize,
    width: usize,
    indices: Vec<usize>,
}

impl SupportMask {
    pub fn new(target: MaskTarget, height: usize, width: usize, mut indices: Vec<usize>) -> Result<Self> {
        if indices.is_empty() {
            return Err(DeblurError::Domain("support mask must be non-empty".into()));
        }
        indices.sort_unstable();
        if let Some(w) = indices.windows(2).find(|w| w[0] == w[1]) {
            return Err(DeblurError::Domain(format!("duplicate mask index {}", w[0])));
        }
        if let Some(&last) = indices.last().filter(|&&i| i >= height * width) {
            return Err(DeblurError::dim(format!("mask index {last} outside {height}x{width}")));
        }
        Ok(Self { target, height, width, indices })
    }

    pub fn full(target: MaskTarget, height: usize, width: usize) -> Result<Self> {
        Self::new(target, height, width, (0..height * width).collect())
    }

    pub fn target(&self) -> MaskTarget {
        self.target
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn contains(&self, index: usize) -> bool {
        self.indices.binary_search(&index).is_ok()
    }

    pub fn is_subset_of(&self, other: &SupportMask) -> bool {
        self.grid() == other.grid() && self.indices.iter().all(|&i| other.contains(i))
    }

    fn select(&self, positions: &[usize]) -> Self {
        Self {
            target: self.target,
            height: self.height,
            width: self.width,
            indices: positions.iter().map(|&p| self.indices[p]).collect(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("mask {} {} {}\n", self.target.as_str(), self.height, self.width);
        for i in &self.indices {
            out.push_str(&i.to_string());
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let header = lines.next().ok_or_else(|| DeblurError::Parse("empty mask file".into()))?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        let (target, h, w) = match parts.as_slice() {
            ["mask", t, h, w] => {
                let target = match *t {
                    "kernel" => MaskTarget::Kernel,
                    "image" => MaskTarget::ImageCoeffs,
                    other => return Err(DeblurError::Parse(format!("unknown mask target {other:?}"))),
                };
                let parse = |s: &str| s.parse::<usize>().map_err(|e| DeblurError::Parse(format!("bad mask dims: {e}")));
                (target, parse(h)?, parse(w)?)
            }
            _ => return Err(DeblurError::Parse(format!("bad mask header {header:?}"))),
        };
        let indices = lines
            .map(|l| l.parse::<usize>().map_err(|e| DeblurError::Parse(format!("bad mask index {l:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(target, h, w, indices)
    }
}

impl fmt::Display for SupportMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} mask {}x{} ({} selected)", self.target.as_str(), self.height, self.width, self.len())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Initial kernel bounding box `(height, width)`.
    pub bbox: (usize, usize),
    pub image_keep_fraction: f64,
    pub row_threshold_factor: f64,
    /// Round cap of the kernel phase.
    pub max_refinement_rounds: usize,
    /// Round cap of the image phase.
    pub image_refinement_rounds: usize,
    /// Haar depth; `None` picks [`default_haar_depth`].
    pub haar_depth: Option<usize>,
    pub solver: SolverConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            bbox: (9, 9),
            image_keep_fraction: 0.25,
            row_threshold_factor: 0.5,
            max_refinement_rounds: 8,
            image_refinement_rounds: 1,
            haar_depth: None,
            solver: SolverConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self, grid: (usize, usize)) -> Result<()> {
        let (bh, bw) = self.bbox;
        if bh == 0 || bw == 0 || bh > grid.0 || bw > grid.1 {
            return Err(DeblurError::Config(format!(
                "bounding box {bh}x{bw} does not fit the {}x{} image",
                grid.0, grid.1
            )));
        }
        if !(self.image_keep_fraction > 0.0 && self.image_keep_fraction <= 1.0) {
            return Err(DeblurError::Config(format!(
                "image_keep_fraction must lie in (0, 1], got {}",
                self.image_keep_fraction
            )));
        }
        if !(self.row_threshold_factor > 0.0 && self.row_threshold_factor.is_finite()) {
            return Err(DeblurError::Config(format!(
                "row_threshold_factor must be positive, got {}",
                self.row_threshold_factor
            )));
        }
        if self.max_refinement_rounds == 0 || self.image_refinement_rounds == 0 {
            return Err(DeblurError::Config("refinement round caps must be positive".into()));
        }
        self.solver.validate()
    }

    fn depth(&self, grid: (usize, usize)) -> usize {
        self.haar_depth.unwrap_or_else(|| default_haar_depth(grid.0, grid.1))
    }
}

/// Positions kept by [`threshold_rows`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Threshold {
    pub kept: Vec<usize>,
    /// Nothing exceeded the threshold; only the largest entry was kept.
    pub degenerate: bool,
}

/// Keeps the positions whose norm exceeds `factor · mean(norms)`.
pub fn threshold_rows(norms: &[f64], factor: f64) -> Result<Threshold> {
    if norms.is_empty() {
        return Err(DeblurError::Domain("cannot threshold an empty norm vector".into()));
    }
    if norms.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(DeblurError::Domain("norms must be finite and non-negative".into()));
    }
    let mean = norms.iter().sum::<f64>() / norms.len() as f64;
    if mean == 0.0 {
        return Err(DeblurError::Degenerate("all norms are zero".into()));
    }
    let cut = factor * mean;
    let kept: Vec<usize> = (0..norms.len()).filter(|&i| norms[i] > cut).collect();
    if !kept.is_empty() {
        return Ok(Threshold { kept, degenerate: false });
    }
    let best = (0..norms.len()).fold(0, |b, i| if norms[i] > norms[b] { i } else { b });
    Ok(Threshold { kept: vec![best], degenerate: true })
}

/// The `⌈keep_fraction · L⌉` largest-magnitude Haar coefficients of `y`.
pub fn init_image_support(y: &Image, keep_fraction: f64, depth: usize) -> Result<SupportMask> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(DeblurError::Domain(format!("keep_fraction must lie in (0, 1], got {keep_fraction}")));
    }
    let coeffs = haar_analysis(y, depth)?;
    let keep = ((keep_fraction * coeffs.len() as f64).ceil() as usize).clamp(1, coeffs.len());
    let mut order: Vec<usize> = (0..coeffs.len()).collect();
    order.sort_by(|&a, &b| coeffs[b].abs().total_cmp(&coeffs[a].abs()).then(a.cmp(&b)));
    order.truncate(keep);
    SupportMask::new(MaskTarget::ImageCoeffs, y.height(), y.width(), order)
}

/// Trace and warnings accumulated by a pipeline run, kept outside the result
/// so they survive a failure.
#[derive(Debug, Clone, Default)]
pub struct Diagnostics {
    pub trace: Vec<PhaseTrace>,
    pub warnings: Vec<Warning>,
}

/// Outcome of one refinement phase.
#[derive(Debug, Clone)]
pub struct Refinement {
    pub mask: SupportMask,
    pub factors: FactorPair,
    pub rounds: usize,
    /// Mask at the start of every round followed by the final mask.
    pub history: Vec<SupportMask>,
}

struct Observation {
    y_hat: crate::image::SpectralField,
    depth: usize,
    grid: (usize, usize),
    y: Image,
}

impl Observation {
    fn new(y: &Image, cfg: &PipelineConfig) -> Result<Self> {
        cfg.validate(y.dims())?;
        let depth = cfg.depth(y.dims());
        ImageBasis::full(y.height(), y.width(), depth)?;
        Ok(Self { y_hat: fft2(y)?, depth, grid: y.dims(), y: y.clone() })
    }

    fn solve(
        &self,
        kernel: &SupportMask,
        image: &SupportMask,
        cfg: &PipelineConfig,
        mode: SparsityMode,
        phase: &'static str,
        round: usize,
        diag: &mut Diagnostics,
    ) -> Result<FactorPair> {
        let (h, w) = self.grid;
        let kb = KernelBasis::from_box(h, w, cfg.bbox.0, cfg.bbox.1, kernel.indices())?;
        let ib = ImageBasis::new(h, w, self.depth, image.indices().to_vec())?;
        let blurred = ib.extract(self.y.data());
        let prob = LiftedProblem::new(kb, ib, self.y_hat.clone(), cfg.solver.lambda)?;
        let init = initialize_state(&prob, &blurred, &cfg.solver, mode)?;
        diag.trace.push(PhaseTrace { phase, round, records: Vec::new() });
        let records = &mut diag.trace.last_mut().expect("just pushed").records;
        let state = solve_traced(&prob, init, &cfg.solver, mode, records)?;
        Ok(state.factors)
    }

    fn refine(
        &self,
        kernel: SupportMask,
        image: SupportMask,
        cfg: &PipelineConfig,
        mode: SparsityMode,
        diag: &mut Diagnostics,
    ) -> Result<Refinement> {
        let (phase, max_rounds) = match mode {
            SparsityMode::RowSparse => ("kernel", cfg.max_refinement_rounds),
            SparsityMode::ColumnSparse => ("image", cfg.image_refinement_rounds),
        };
        let (mut kernel, mut image) = (kernel, image);
        let mut history = Vec::new();
        let mut rounds = 0;
        loop {
            let current = match mode {
                SparsityMode::RowSparse => kernel.clone(),
                SparsityMode::ColumnSparse => image.clone(),
            };
            history.push(current.clone());
            let factors = self.solve(&kernel, &image, cfg, mode, phase, rounds, diag)?;
            let th = threshold_rows(&mode.group_norms(&factors), cfg.row_threshold_factor)?;
            if th.degenerate {
                diag.warnings.push(Warning::DegenerateSupport { phase, round: rounds });
            }
            rounds += 1;
            let next = current.select(&th.kept);
            let done = next == current || rounds >= max_rounds;
            log::info!("{phase} round {rounds}: {} -> {} indices", current.len(), next.len());
            match mode {
                SparsityMode::RowSparse => kernel = next.clone(),
                SparsityMode::ColumnSparse => image = next.clone(),
            }
            if done {
                history.push(next.clone());
                let factors = restrict(&factors, mode, &th.kept);
                return Ok(Refinement { mask: next, factors, rounds, history });
            }
        }
    }

    fn initial_masks(&self, cfg: &PipelineConfig) -> Result<(SupportMask, SupportMask)> {
        let kernel = SupportMask::full(MaskTarget::Kernel, cfg.bbox.0, cfg.bbox.1)?;
        let image = init_image_support(&self.y, cfg.image_keep_fraction, self.depth)?;
        Ok((kernel, image))
    }
}

/// Keeps the factor rows of the thresholded groups so the factors match the
/// final mask.
fn restrict(f: &FactorPair, mode: SparsityMode, kept: &[usize]) -> FactorPair {
    let pick = |m: &nalgebra::DMatrix<f64>| m.select_rows(kept.iter());
    match mode {
        SparsityMode::RowSparse => FactorPair { left: pick(&f.left), right: f.right.clone() },
        SparsityMode::ColumnSparse => FactorPair { left: f.left.clone(), right: pick(&f.right) },
    }
}

/// Shrinks the kernel mask from the full bounding box with row-sparse solves,
/// holding the initial image container fixed.
pub fn refine_kernel_support(y: &Image, cfg: &PipelineConfig) -> Result<Refinement> {
    let obs = Observation::new(y, cfg)?;
    let (kernel, image) = obs.initial_masks(cfg)?;
    obs.refine(kernel, image, cfg, SparsityMode::RowSparse, &mut Diagnostics::default())
}

/// Shrinks the image coefficient mask with column-sparse solves on a fixed
/// kernel mask.
pub fn refine_image_support(y: &Image, kernel_mask: &SupportMask, cfg: &PipelineConfig) -> Result<Refinement> {
    let obs = Observation::new(y, cfg)?;
    check_kernel_mask(kernel_mask, cfg)?;
    let image = init_image_support(y, cfg.image_keep_fraction, obs.depth)?;
    obs.refine(kernel_mask.clone(), image, cfg, SparsityMode::ColumnSparse, &mut Diagnostics::default())
}

fn check_kernel_mask(mask: &SupportMask, cfg: &PipelineConfig) -> Result<()> {
    if mask.target() != MaskTarget::Kernel || mask.grid() != cfg.bbox {
        return Err(DeblurError::Config(format!("{mask} does not match the {}x{} bounding box", cfg.bbox.0, cfg.bbox.1)));
    }
    Ok(())
}

pub fn bd_rcs_pipeline(y: &Image, cfg: &PipelineConfig) -> Result<DeblurResult> {
    bd_rcs_pipeline_traced(y, cfg, &mut Diagnostics::default())
}

/// As [`bd_rcs_pipeline`], recording trace and warnings into `diag` as the run
/// progresses.
pub fn bd_rcs_pipeline_traced(y: &Image, cfg: &PipelineConfig, diag: &mut Diagnostics) -> Result<DeblurResult> {
    let obs = Observation::new(y, cfg)?;
    let (kernel0, image0) = obs.initial_masks(cfg)?;
    let (bh, bw) = cfg.bbox;

    if y.norm_sq() == 0.0 {
        diag.warnings.push(Warning::ZeroObservation);
        let kernel = Image::from_fn(bh, bw, |r, c| if (r, c) == (bh / 2, bw / 2) { 1.0 } else { 0.0 })?;
        return Ok(DeblurResult {
            kernel,
            image: Image::zeros(y.height(), y.width())?,
            singular_values: [0.0, 0.0],
            kernel_mask: kernel0,
            image_mask: image0,
            kernel_rounds: 0,
            image_rounds: 0,
            trace: diag.trace.clone(),
            warnings: diag.warnings.clone(),
        });
    }

    let kernel = obs.refine(kernel0, image0.clone(), cfg, SparsityMode::RowSparse, diag)?;
    let image = obs.refine(kernel.mask.clone(), image0, cfg, SparsityMode::ColumnSparse, diag)?;

    let one = rank_one_extract(&image.factors)?;
    let normalized = normalize_kernel(&one.left, &kernel.mask)?;
    if let Some(w) = normalized.warning.clone() {
        diag.warnings.push(w);
    }
    let coeffs: Vec<f64> = one.right.iter().map(|v| v * normalized.image_scale).collect();
    let basis = ImageBasis::new(y.height(), y.width(), obs.depth, image.mask.indices().to_vec())?;
    let recovered = basis.embed(&coeffs)?.circshift(-normalized.shift.0, -normalized.shift.1);
    Ok(DeblurResult {
        kernel: normalized.kernel,
        image: recovered,
        singular_values: [one.s1, one.s2],
        kernel_mask: kernel.mask,
        image_mask: image.mask,
        kernel_rounds: kernel.rounds,
        image_rounds: image.rounds,
        trace: diag.trace.clone(),
        warnings: diag.warnings.clone(),
    })
}
