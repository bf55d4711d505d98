//! Unitary 2D FFT, orthonormal 2D Haar wavelet, and the kernel/image subspace bases.
//!
//! Both transforms are orthonormal, so Parseval holds in either direction and
//! adjoints are plain inverses. Convolution is circular throughout.

use std::collections::HashSet;
use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{DeblurError, Result};
use crate::image::{Image, SpectralField};

/// Relative imaginary residual above which an inverse transform is rejected.
pub const SYMMETRY_TOLERANCE: f64 = 1e-10;

/// Cached row/column FFT plans for one grid size.
#[derive(Clone)]
pub struct Fft2Plan {
    height: usize,
    width: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Fft2Plan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Fft2Plan")
            .field("height", &self.height)
            .field("width", &self.width)
            .finish()
    }
}

impl Fft2Plan {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(DeblurError::dim(format!("zero-sized FFT grid {height}x{width}")));
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            height,
            width,
            row_fwd: planner.plan_fft_forward(width),
            row_inv: planner.plan_fft_inverse(width),
            col_fwd: planner.plan_fft_forward(height),
            col_inv: planner.plan_fft_inverse(height),
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// In-place unitary 2D DFT of a row-major buffer.
    pub fn forward(&self, buf: &mut [Complex64]) {
        self.run(buf, false);
    }

    /// In-place unitary inverse 2D DFT of a row-major buffer.
    pub fn inverse(&self, buf: &mut [Complex64]) {
        self.run(buf, true);
    }

    fn run(&self, buf: &mut [Complex64], inverse: bool) {
        let (h, w) = (self.height, self.width);
        assert_eq!(buf.len(), h * w, "buffer does not match the FFT grid");
        let (row, col) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        if w > 1 {
            row.process(buf);
        }
        if h > 1 {
            let mut t = vec![Complex64::new(0.0, 0.0); h * w];
            for r in 0..h {
                for c in 0..w {
                    t[c * h + r] = buf[r * w + c];
                }
            }
            col.process(&mut t);
            for r in 0..h {
                for c in 0..w {
                    buf[r * w + c] = t[c * h + r];
                }
            }
        }
        let scale = 1.0 / ((h * w) as f64).sqrt();
        for v in buf.iter_mut() {
            *v *= scale;
        }
    }

    /// Unitary DFT of a real image on this grid.
    pub fn forward_real(&self, data: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward(&mut buf);
        buf
    }
}

/// Unitary 2D DFT (scaled by `1/sqrt(L)`), flattened row-major.
pub fn fft2(img: &Image) -> Result<SpectralField> {
    let (h, w) = img.dims();
    let plan = Fft2Plan::new(h, w)?;
    SpectralField::new(h, w, plan.forward_real(img.data()))
}

/// Inverse of [`fft2`]. Rejects spectra whose inverse is not real.
pub fn ifft2(spec: &SpectralField) -> Result<Image> {
    let (h, w) = spec.dims();
    let plan = Fft2Plan::new(h, w)?;
    let mut buf = spec.data().to_vec();
    plan.inverse(&mut buf);
    let imag = buf.iter().map(|v| v.im * v.im).sum::<f64>().sqrt();
    let norm = spec.norm();
    if imag > SYMMETRY_TOLERANCE * norm.max(f64::MIN_POSITIVE) {
        return Err(DeblurError::Symmetry { residual: imag, norm });
    }
    Image::new(h, w, buf.into_iter().map(|v| v.re).collect())
}

/// Default Haar depth: `floor(log2(min(h, w)))`, further capped so that
/// `2^depth` divides both sides.
pub fn default_haar_depth(height: usize, width: usize) -> usize {
    let min = height.min(width).max(1);
    let log2 = (usize::BITS - 1 - min.leading_zeros()) as usize;
    log2.min(height.trailing_zeros() as usize)
        .min(width.trailing_zeros() as usize)
}

fn check_depth(height: usize, width: usize, depth: usize) -> Result<()> {
    let step = 1usize.checked_shl(depth as u32).unwrap_or(0);
    if height == 0 || width == 0 || step == 0 || !height.is_multiple_of(step) || !width.is_multiple_of(step) {
        return Err(DeblurError::Depth { depth, height, width });
    }
    Ok(())
}

const INV_SQRT2: f64 = std::f64::consts::FRAC_1_SQRT_2;

fn haar_step(data: &mut [f64], scratch: &mut [f64], offset: usize, stride: usize, n: usize) {
    let half = n / 2;
    for i in 0..half {
        let a = data[offset + 2 * i * stride];
        let b = data[offset + (2 * i + 1) * stride];
        scratch[i] = (a + b) * INV_SQRT2;
        scratch[half + i] = (a - b) * INV_SQRT2;
    }
    for (i, v) in scratch[..n].iter().enumerate() {
        data[offset + i * stride] = *v;
    }
}

fn haar_unstep(data: &mut [f64], scratch: &mut [f64], offset: usize, stride: usize, n: usize) {
    let half = n / 2;
    for i in 0..half {
        let a = data[offset + i * stride];
        let d = data[offset + (half + i) * stride];
        scratch[2 * i] = (a + d) * INV_SQRT2;
        scratch[2 * i + 1] = (a - d) * INV_SQRT2;
    }
    for (i, v) in scratch[..n].iter().enumerate() {
        data[offset + i * stride] = *v;
    }
}

/// Orthonormal 2D Haar analysis in the standard pyramid layout: the coarsest
/// approximation block sits in the top-left corner (index 0 for full depth).
pub fn haar_analysis(img: &Image, depth: usize) -> Result<Vec<f64>> {
    let (h, w) = img.dims();
    check_depth(h, w, depth)?;
    let mut data = img.data().to_vec();
    haar_forward_in_place(&mut data, h, w, depth);
    Ok(data)
}

pub(crate) fn haar_forward_in_place(data: &mut [f64], h: usize, w: usize, depth: usize) {
    let mut scratch = vec![0.0; h.max(w)];
    for level in 0..depth {
        let (ch, cw) = (h >> level, w >> level);
        for r in 0..ch {
            haar_step(data, &mut scratch, r * w, 1, cw);
        }
        for c in 0..cw {
            haar_step(data, &mut scratch, c, w, ch);
        }
    }
}

/// Inverse of [`haar_analysis`].
pub fn haar_synthesis(coeffs: &[f64], height: usize, width: usize, depth: usize) -> Result<Image> {
    check_depth(height, width, depth)?;
    if coeffs.len() != height * width {
        return Err(DeblurError::dim(format!(
            "{} coefficients for a {height}x{width} grid",
            coeffs.len()
        )));
    }
    let mut data = coeffs.to_vec();
    haar_inverse_in_place(&mut data, height, width, depth);
    Image::new(height, width, data)
}

pub(crate) fn haar_inverse_in_place(data: &mut [f64], h: usize, w: usize, depth: usize) {
    let mut scratch = vec![0.0; h.max(w)];
    for level in (0..depth).rev() {
        let (ch, cw) = (h >> level, w >> level);
        for c in 0..cw {
            haar_unstep(data, &mut scratch, c, w, ch);
        }
        for r in 0..ch {
            haar_unstep(data, &mut scratch, r * w, 1, cw);
        }
    }
}

fn check_unique(indices: &[usize], len: usize, what: &str) -> Result<()> {
    if indices.is_empty() {
        return Err(DeblurError::dim(format!("{what} basis is empty")));
    }
    let mut seen = HashSet::with_capacity(indices.len());
    for &i in indices {
        if i >= len {
            return Err(DeblurError::dim(format!("{what} index {i} outside grid of {len}")));
        }
        if !seen.insert(i) {
            return Err(DeblurError::dim(format!("duplicate {what} index {i}")));
        }
    }
    Ok(())
}

/// Column selection of the identity on the pixel grid: the kernel subspace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KernelBasis {
    height: usize,
    width: usize,
    indices: Vec<usize>,
}

impl KernelBasis {
    pub fn new(height: usize, width: usize, indices: Vec<usize>) -> Result<Self> {
        check_unique(&indices, height * width, "kernel")?;
        Ok(Self { height, width, indices })
    }

    /// Basis for the pixels `selected` (row-major indices into a `box_h x box_w`
    /// bounding box) when the box centre `(box_h/2, box_w/2)` is placed on the
    /// grid origin and the box wraps around the grid edges.
    pub fn from_box(
        height: usize,
        width: usize,
        box_h: usize,
        box_w: usize,
        selected: &[usize],
    ) -> Result<Self> {
        if box_h == 0 || box_w == 0 || box_h > height || box_w > width {
            return Err(DeblurError::dim(format!(
                "bounding box {box_h}x{box_w} does not fit the {height}x{width} grid"
            )));
        }
        let (ch, cw) = ((box_h / 2) as isize, (box_w / 2) as isize);
        let mut indices = Vec::with_capacity(selected.len());
        for &s in selected {
            if s >= box_h * box_w {
                return Err(DeblurError::dim(format!("box index {s} outside {box_h}x{box_w}")));
            }
            let r = ((s / box_w) as isize - ch).rem_euclid(height as isize) as usize;
            let c = ((s % box_w) as isize - cw).rem_euclid(width as isize) as usize;
            indices.push(r * width + c);
        }
        Self::new(height, width, indices)
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Number of basis vectors.
    pub fn dim(&self) -> usize {
        self.indices.len()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// `B h`: scatters `h` onto the grid.
    pub fn embed(&self, coeffs: &[f64]) -> Result<Image> {
        if coeffs.len() != self.indices.len() {
            return Err(DeblurError::dim(format!(
                "kernel basis has {} vectors, got {} coefficients",
                self.indices.len(),
                coeffs.len()
            )));
        }
        let mut data = vec![0.0; self.height * self.width];
        for (&i, &v) in self.indices.iter().zip(coeffs) {
            data[i] = v;
        }
        Image::new(self.height, self.width, data)
    }

    /// `Bᵀ x`: gathers the basis pixels.
    pub fn extract(&self, img: &[f64]) -> Vec<f64> {
        self.indices.iter().map(|&i| img[i]).collect()
    }
}

/// Column selection of the inverse Haar transform: the image subspace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageBasis {
    height: usize,
    width: usize,
    depth: usize,
    indices: Vec<usize>,
}

impl ImageBasis {
    pub fn new(height: usize, width: usize, depth: usize, indices: Vec<usize>) -> Result<Self> {
        check_depth(height, width, depth)?;
        check_unique(&indices, height * width, "image")?;
        Ok(Self { height, width, depth, indices })
    }

    /// All `L` Haar coefficients, in index order.
    pub fn full(height: usize, width: usize, depth: usize) -> Result<Self> {
        Self::new(height, width, depth, (0..height * width).collect())
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn dim(&self) -> usize {
        self.indices.len()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// `C m`: Haar synthesis with non-selected coefficients set to zero.
    pub fn embed(&self, coeffs: &[f64]) -> Result<Image> {
        if coeffs.len() != self.indices.len() {
            return Err(DeblurError::dim(format!(
                "image basis has {} vectors, got {} coefficients",
                self.indices.len(),
                coeffs.len()
            )));
        }
        let mut data = vec![0.0; self.height * self.width];
        for (&i, &v) in self.indices.iter().zip(coeffs) {
            data[i] = v;
        }
        haar_inverse_in_place(&mut data, self.height, self.width, self.depth);
        Image::new(self.height, self.width, data)
    }

    /// `Cᵀ x`: Haar analysis restricted to the selected coefficients.
    pub fn extract(&self, img: &[f64]) -> Vec<f64> {
        let mut data = img.to_vec();
        haar_forward_in_place(&mut data, self.height, self.width, self.depth);
        self.indices.iter().map(|&i| data[i]).collect()
    }
}

/// `B h` for a [`KernelBasis`].
pub fn kernel_embed(basis: &KernelBasis, coeffs: &[f64]) -> Result<Image> {
    basis.embed(coeffs)
}

/// `C m` for an [`ImageBasis`].
pub fn image_embed(basis: &ImageBasis, coeffs: &[f64]) -> Result<Image> {
    basis.embed(coeffs)
}
