//! Real grayscale images and their spectra.

use rustfft::num_complex::Complex64;

use crate::error::{DeblurError, Result};

/// A real-valued 2D grayscale array stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(DeblurError::dim(format!("zero-sized image {height}x{width}")));
        }
        if data.len() != height * width {
            return Err(DeblurError::dim(format!(
                "{height}x{width} image needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(DeblurError::Domain(format!("non-finite pixel at index {i}")));
        }
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![0.0; height * width])
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self::new(height, width, data)
    }

    /// Builds an image without the finiteness scan. Callers guarantee the invariants.
    pub(crate) fn from_raw(height: usize, width: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), height * width);
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Number of pixels.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Squared Euclidean distance to another image of the same size.
    pub fn dist_sq(&self, other: &Image) -> Result<f64> {
        self.check_same_dims(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum())
    }

    pub fn check_same_dims(&self, other: &Image) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(DeblurError::dim(format!(
                "image sizes differ: {:?} vs {:?}",
                self.dims(),
                other.dims()
            )));
        }
        Ok(())
    }

    pub fn scaled(&self, factor: f64) -> Image {
        Image::from_raw(self.height, self.width, self.data.iter().map(|v| v * factor).collect())
    }

    /// Cyclic shift: output pixel `(r, c)` takes input pixel `(r - dr, c - dc)` modulo the grid.
    pub fn circshift(&self, dr: isize, dc: isize) -> Image {
        let (h, w) = (self.height as isize, self.width as isize);
        let mut out = vec![0.0; self.data.len()];
        for r in 0..h {
            let sr = (r - dr).rem_euclid(h);
            for c in 0..w {
                let sc = (c - dc).rem_euclid(w);
                out[(r * w + c) as usize] = self.data[(sr * w + sc) as usize];
            }
        }
        Image::from_raw(self.height, self.width, out)
    }

    /// Clamps every pixel to `[0, 1]`.
    pub fn clamped_unit(&self) -> Image {
        Image::from_raw(self.height, self.width, self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect())
    }
}

/// The 2D DFT of a real signal, flattened row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    height: usize,
    width: usize,
    data: Vec<Complex64>,
}

impl SpectralField {
    pub fn new(height: usize, width: usize, data: Vec<Complex64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(DeblurError::dim(format!("zero-sized spectrum {height}x{width}")));
        }
        if data.len() != height * width {
            return Err(DeblurError::dim(format!(
                "{height}x{width} spectrum needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![Complex64::new(0.0, 0.0); height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Largest deviation from the conjugate symmetry `F[-k] = conj(F[k])`.
    pub fn symmetry_residual(&self) -> f64 {
        let (h, w) = (self.height, self.width);
        let mut worst = 0.0f64;
        for r in 0..h {
            for c in 0..w {
                let mirror = ((h - r) % h) * w + (w - c) % w;
                let d = self.data[r * w + c] - self.data[mirror].conj();
                worst = worst.max(d.norm());
            }
        }
        worst
    }
}
