//! Rank-one extraction, PSF synthesis, the forward blur model, quality metrics
//! and the matrix norms used by the programs.

use std::fmt;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{DeblurError, Result};
use crate::image::Image;
use crate::lifted_op::FactorPair;
use crate::solver::TraceRecord;
use crate::support::SupportMask;
use crate::transforms::Fft2Plan;

/// Reported in place of `+inf` dB when a reconstruction is exact.
pub const METRIC_CAP_DB: f64 = 300.0;

/// Non-fatal conditions met during a pipeline run.
#[derive(Debug, Clone, PartialEq)]
pub enum Warning {
    /// Thresholding would have removed every index; the largest one was kept.
    DegenerateSupport { phase: &'static str, round: usize },
    /// The recovered kernel had negative entries below `-1e-3 · max`.
    NegativeKernelMass { min: f64, max: f64 },
    /// The observation is identically zero.
    ZeroObservation,
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Warning::DegenerateSupport { phase, round } => {
                write!(f, "degenerate {phase} support in round {round}: kept the largest index only")
            }
            Warning::NegativeKernelMass { min, max } => {
                write!(f, "kernel has negative entries (min {min:.3e}, max {max:.3e}); clamped to zero")
            }
            Warning::ZeroObservation => write!(f, "observation is identically zero"),
        }
    }
}

/// Output of the blind deblurring pipeline.
#[derive(Debug, Clone)]
pub struct DeblurResult {
    /// Recovered PSF on the bounding-box grid, unit sum, centred.
    pub kernel: Image,
    pub image: Image,
    /// Top two singular values of the final lifted solution.
    pub singular_values: [f64; 2],
    pub kernel_mask: SupportMask,
    pub image_mask: SupportMask,
    pub kernel_rounds: usize,
    pub image_rounds: usize,
    pub trace: Vec<PhaseTrace>,
    pub warnings: Vec<Warning>,
}

/// Solver trace of one refinement round.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseTrace {
    pub phase: &'static str,
    pub round: usize,
    pub records: Vec<TraceRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionPsfSpec {
    pub length: f64,
    /// Degrees counter-clockwise from the positive column axis, in `[0, 180)`.
    pub angle_deg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianPsfSpec {
    pub radius: usize,
    pub sigma: f64,
}

/// Top singular triple of a factored matrix.
#[derive(Debug, Clone)]
pub struct RankOne {
    /// `sqrt(s1) · u1`.
    pub left: Vec<f64>,
    /// `sqrt(s1) · v1`.
    pub right: Vec<f64>,
    pub s1: f64,
    pub s2: f64,
    /// `s2 / s1`.
    pub gap: f64,
}

/// Singular values of `Z Hᵀ` through the small core of the thin QR factors,
/// sorted descending, plus the matching singular vector pairs.
fn factored_svd(f: &FactorPair) -> (Vec<f64>, DMatrix<f64>, DMatrix<f64>) {
    let qr_l = f.left.clone().qr();
    let qr_r = f.right.clone().qr();
    let (q1, r1) = (qr_l.q(), qr_l.r());
    let (q2, r2) = (qr_r.q(), qr_r.r());
    let core = &r1 * r2.transpose();
    let svd = core.svd(true, true);
    let u = svd.u.expect("requested u");
    let vt = svd.v_t.expect("requested v_t");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let values = order.iter().map(|&i| svd.singular_values[i]).collect();
    let u_sorted = DMatrix::from_columns(&order.iter().map(|&i| u.column(i)).collect::<Vec<_>>());
    let v_sorted = DMatrix::from_columns(&order.iter().map(|&i| vt.row(i).transpose()).collect::<Vec<_>>());
    (values, q1 * u_sorted, q2 * v_sorted)
}

/// Leading singular pair of `Z Hᵀ` without forming it.
pub fn rank_one_extract(f: &FactorPair) -> Result<RankOne> {
    if f.left.iter().chain(f.right.iter()).any(|v| !v.is_finite()) {
        return Err(DeblurError::Domain("non-finite factor entry".into()));
    }
    let (values, u, v) = factored_svd(f);
    let s1 = values.first().copied().unwrap_or(0.0);
    if !(s1 > 0.0) {
        return Err(DeblurError::Degenerate("lifted solution is zero".into()));
    }
    let s2 = values.get(1).copied().unwrap_or(0.0).max(0.0);
    let root = s1.sqrt();
    Ok(RankOne {
        left: u.column(0).iter().map(|x| x * root).collect(),
        right: v.column(0).iter().map(|x| x * root).collect(),
        s1,
        s2,
        gap: s2 / s1,
    })
}

/// Unit-mass kernel on the mask's bounding-box grid.
#[derive(Debug, Clone)]
pub struct NormalizedKernel {
    pub kernel: Image,
    /// Multiply the image coefficients by this to keep the product `k ⊛ x` unchanged.
    pub image_scale: f64,
    /// Cyclic shift applied to centre the kernel; the image needs the opposite shift.
    pub shift: (isize, isize),
    pub warning: Option<Warning>,
}

/// Fixes sign and scale of a recovered kernel vector and centres its mass.
///
/// The kernel is flipped to a non-negative sum, clamped at zero, rescaled to
/// unit sum, scattered to the mask positions and cyclically shifted so its
/// centre of mass lands on the box centre `(h/2, w/2)`.
pub fn normalize_kernel(h: &[f64], mask: &SupportMask) -> Result<NormalizedKernel> {
    if h.len() != mask.len() {
        return Err(DeblurError::dim(format!(
            "{} kernel values for a mask of {}",
            h.len(),
            mask.len()
        )));
    }
    if h.iter().all(|v| *v == 0.0) {
        return Err(DeblurError::Degenerate("kernel vector is zero".into()));
    }
    let sign = if h.iter().sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
    let signed: Vec<f64> = h.iter().map(|v| v * sign).collect();
    let max = signed.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = signed.iter().copied().fold(f64::INFINITY, f64::min);
    let warning = (min < -1e-3 * max).then_some(Warning::NegativeKernelMass { min, max });
    let clamped: Vec<f64> = signed.iter().map(|v| v.max(0.0)).collect();
    let total: f64 = clamped.iter().sum();
    if !(total > 0.0) {
        return Err(DeblurError::Degenerate("kernel has no positive mass".into()));
    }

    let (bh, bw) = mask.grid();
    let mut data = vec![0.0; bh * bw];
    for (&i, v) in mask.indices().iter().zip(&clamped) {
        data[i] = v / total;
    }
    let kernel = Image::from_raw(bh, bw, data);
    let (mut cr, mut cc) = (0.0, 0.0);
    for r in 0..bh {
        for c in 0..bw {
            let v = kernel.get(r, c);
            cr += v * r as f64;
            cc += v * c as f64;
        }
    }
    let shift = (
        ((bh / 2) as f64 - cr).round() as isize,
        ((bw / 2) as f64 - cc).round() as isize,
    );
    let kernel = kernel.circshift(shift.0, shift.1);
    Ok(NormalizedKernel {
        kernel,
        image_scale: sign * total,
        shift,
        warning,
    })
}

fn segment_length_in_box(p0: (f64, f64), p1: (f64, f64), lo: (f64, f64), hi: (f64, f64)) -> f64 {
    // Liang-Barsky clip of p0 + t (p1 - p0), t in [0, 1]
    let d = (p1.0 - p0.0, p1.1 - p0.1);
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for (p, q) in [
        (-d.0, p0.0 - lo.0),
        (d.0, hi.0 - p0.0),
        (-d.1, p0.1 - lo.1),
        (d.1, hi.1 - p0.1),
    ] {
        if p == 0.0 {
            if q < 0.0 {
                return 0.0;
            }
        } else {
            let t = q / p;
            if p < 0.0 {
                t0 = t0.max(t);
            } else {
                t1 = t1.min(t);
            }
        }
    }
    if t1 <= t0 {
        0.0
    } else {
        (t1 - t0) * (d.0 * d.0 + d.1 * d.1).sqrt()
    }
}

/// Linear motion PSF: a segment of the given length and angle through the
/// centre pixel `(h/2, w/2)`, each pixel weighted by the segment length inside it.
pub fn synth_motion_psf(spec: &MotionPsfSpec, grid: (usize, usize)) -> Result<Image> {
    if !(spec.length >= 1.0 && spec.length.is_finite()) {
        return Err(DeblurError::Domain(format!("motion length must be >= 1, got {}", spec.length)));
    }
    if !(0.0..180.0).contains(&spec.angle_deg) {
        return Err(DeblurError::Domain(format!("angle must lie in [0, 180), got {}", spec.angle_deg)));
    }
    let (h, w) = grid;
    let (cr, cc) = ((h / 2) as f64, (w / 2) as f64);
    let theta = spec.angle_deg.to_radians();
    let (dr, dc) = (-theta.sin() * spec.length / 2.0, theta.cos() * spec.length / 2.0);
    let p0 = (cr - dr, cc - dc);
    let p1 = (cr + dr, cc + dc);
    let fits = |v: f64, n: usize| v >= -0.5 && v <= n as f64 - 0.5;
    if h == 0 || w == 0 || !fits(p0.0, h) || !fits(p1.0, h) || !fits(p0.1, w) || !fits(p1.1, w) {
        return Err(DeblurError::dim(format!(
            "motion PSF of length {} at {} deg does not fit a {h}x{w} grid",
            spec.length, spec.angle_deg
        )));
    }
    let mut data = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let lo = (r as f64 - 0.5, c as f64 - 0.5);
            let hi = (r as f64 + 0.5, c as f64 + 0.5);
            data[r * w + c] = segment_length_in_box(p0, p1, lo, hi);
        }
    }
    let total: f64 = data.iter().sum();
    data.iter_mut().for_each(|v| *v /= total);
    Ok(Image::from_raw(h, w, data))
}

/// Smallest odd `(rows, cols)` grid whose centre pixel carries the segment of
/// [`synth_motion_psf`] with every touched pixel inside.
pub fn motion_psf_extent(spec: &MotionPsfSpec) -> (usize, usize) {
    let theta = spec.angle_deg.to_radians();
    let half = |d: f64| (d.abs() - 0.5).ceil().max(0.0) as usize;
    let hr = half(theta.sin() * spec.length / 2.0);
    let hc = half(theta.cos() * spec.length / 2.0);
    (2 * hr + 1, 2 * hc + 1)
}

/// Truncated isotropic Gaussian on a `(2r+1)²` window centred at `(h/2, w/2)`.
pub fn synth_gaussian_psf(spec: &GaussianPsfSpec, grid: (usize, usize)) -> Result<Image> {
    if spec.radius < 1 || !(spec.sigma > 0.0) {
        return Err(DeblurError::Domain(format!(
            "gaussian PSF needs radius >= 1 and sigma > 0, got {} / {}",
            spec.radius, spec.sigma
        )));
    }
    let (h, w) = grid;
    let size = 2 * spec.radius + 1;
    if size > h || size > w {
        return Err(DeblurError::dim(format!("gaussian window {size} exceeds the {h}x{w} grid")));
    }
    let (cr, cc) = ((h / 2) as isize, (w / 2) as isize);
    let rad = spec.radius as isize;
    let two_s2 = 2.0 * spec.sigma * spec.sigma;
    let mut data = vec![0.0; h * w];
    for dr in -rad..=rad {
        for dc in -rad..=rad {
            let v = (-((dr * dr + dc * dc) as f64) / two_s2).exp();
            data[((cr + dr) as usize) * w + (cc + dc) as usize] = v;
        }
    }
    let total: f64 = data.iter().sum();
    data.iter_mut().for_each(|v| *v /= total);
    Ok(Image::from_raw(h, w, data))
}

/// Places a centred kernel on the image grid with its centre on the origin.
pub fn pad_kernel(kernel: &Image, grid: (usize, usize)) -> Result<Image> {
    let (h, w) = grid;
    let (kh, kw) = kernel.dims();
    if kh > h || kw > w {
        return Err(DeblurError::dim(format!("kernel {kh}x{kw} larger than image {h}x{w}")));
    }
    let (ch, cw) = ((kh / 2) as isize, (kw / 2) as isize);
    let mut data = vec![0.0; h * w];
    for r in 0..kh {
        for c in 0..kw {
            let gr = (r as isize - ch).rem_euclid(h as isize) as usize;
            let gc = (c as isize - cw).rem_euclid(w as isize) as usize;
            data[gr * w + gc] += kernel.get(r, c);
        }
    }
    Ok(Image::from_raw(h, w, data))
}

/// Circular convolution `x ⊛ k` plus seeded white Gaussian noise.
///
/// `k` may be smaller than `x`; its centre pixel `(kh/2, kw/2)` is the origin.
pub fn blur(x: &Image, k: &Image, noise_sigma: f64, seed: u64) -> Result<Image> {
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(DeblurError::Domain(format!("noise sigma must be >= 0, got {noise_sigma}")));
    }
    let (h, w) = x.dims();
    let padded = pad_kernel(k, (h, w))?;
    let plan = Fft2Plan::new(h, w)?;
    let xs = plan.forward_real(x.data());
    let mut ks = plan.forward_real(padded.data());
    let scale = ((h * w) as f64).sqrt();
    for (a, b) in ks.iter_mut().zip(&xs) {
        *a = *a * b * scale;
    }
    plan.inverse(&mut ks);
    let mut data: Vec<f64> = ks.into_iter().map(|v| v.re).collect();
    if noise_sigma > 0.0 {
        let normal = Normal::new(0.0, noise_sigma).expect("validated sigma");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in data.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    Image::new(h, w, data)
}

/// `10 log10(‖x‖² / ‖x − x_rec‖²)`, capped at [`METRIC_CAP_DB`].
pub fn snr(x: &Image, x_rec: &Image) -> Result<f64> {
    let err = x.dist_sq(x_rec)?;
    let signal = x.norm_sq();
    if signal == 0.0 {
        return Err(DeblurError::Domain("SNR of a zero reference image".into()));
    }
    Ok(capped_db(signal, err))
}

/// `10 log10(‖y − x‖² / ‖x_rec − x‖²)`, capped at [`METRIC_CAP_DB`].
pub fn isnr(y: &Image, x: &Image, x_rec: &Image) -> Result<f64> {
    let num = y.dist_sq(x)?;
    let den = x_rec.dist_sq(x)?;
    if num == 0.0 {
        return Err(DeblurError::Domain("ISNR undefined: observation equals the reference".into()));
    }
    Ok(capped_db(num, den))
}

fn capped_db(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        return METRIC_CAP_DB;
    }
    (10.0 * (num / den).log10()).min(METRIC_CAP_DB)
}

pub fn norm_nuclear(x: &DMatrix<f64>) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.clone().singular_values().iter().sum()
}

/// Sum of row norms.
pub fn norm_21(x: &DMatrix<f64>) -> f64 {
    x.row_iter().map(|r| r.norm()).sum()
}

/// Sum of column norms.
pub fn norm_12(x: &DMatrix<f64>) -> f64 {
    x.column_iter().map(|c| c.norm()).sum()
}

/// Largest row norm; the dual of [`norm_21`].
pub fn norm_2inf(x: &DMatrix<f64>) -> f64 {
    x.row_iter().map(|r| r.norm()).fold(0.0, f64::max)
}

/// Serializes a kernel as `psf <h> <w>` followed by one line per row.
pub fn psf_to_text(k: &Image) -> String {
    let mut out = format!("psf {} {}\n", k.height(), k.width());
    for r in 0..k.height() {
        let row: Vec<String> = (0..k.width()).map(|c| format!("{:.16e}", k.get(r, c))).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

pub fn psf_from_text(text: &str) -> Result<Image> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| DeblurError::Parse("empty PSF file".into()))?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    let (h, w) = match parts.as_slice() {
        ["psf", h, w] => (
            h.parse::<usize>().map_err(|e| DeblurError::Parse(format!("bad height: {e}")))?,
            w.parse::<usize>().map_err(|e| DeblurError::Parse(format!("bad width: {e}")))?,
        ),
        _ => return Err(DeblurError::Parse(format!("bad PSF header {header:?}"))),
    };
    let mut data = Vec::with_capacity(h * w);
    for line in lines {
        for tok in line.split_whitespace() {
            data.push(
                tok.parse::<f64>()
                    .map_err(|e| DeblurError::Parse(format!("bad PSF value {tok:?}: {e}")))?,
            );
        }
    }
    Image::new(h, w, data)
}

/// Piecewise-constant test scene made of overlapping rectangles aligned to
/// `block`-pixel cells, so it is sparse in the Haar basis.
pub fn block_scene(height: usize, width: usize, block: usize, rects: usize, seed: u64) -> Result<Image> {
    if block == 0 || !height.is_multiple_of(block) || !width.is_multiple_of(block) {
        return Err(DeblurError::dim(format!("block {block} does not tile {height}x{width}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (bh, bw) = (height / block, width / block);
    let mut cells = vec![0.35 + 0.3 * rng.random::<f64>(); bh * bw];
    for _ in 0..rects {
        let r0 = rng.random_range(0..bh);
        let c0 = rng.random_range(0..bw);
        let r1 = rng.random_range(r0 + 1..=bh.min(r0 + bh / 2 + 1));
        let c1 = rng.random_range(c0 + 1..=bw.min(c0 + bw / 2 + 1));
        let v = rng.random::<f64>();
        for r in r0..r1 {
            for c in c0..c1 {
                cells[r * bw + c] = v;
            }
        }
    }
    Image::from_fn(height, width, |r, c| cells[(r / block) * bw + c / block])
}
