//! Matrix-free lifted measurement operator.
//!
//! For a lifted matrix `X = Z Hᵀ` (`Z` is `K'×r` on the kernel side, `H` is
//! `N×r` on the image side) the operator returns the unitary spectrum of the
//! circular convolution of the kernel and image it describes:
//!
//! ```text
//! A(Z Hᵀ)_l = sqrt(L) · Σ_j fft2(B Z[:,j])_l · fft2(C H[:,j])_l
//! ```
//!
//! The `sqrt(L)` factor makes `A(h mᵀ) = fft2(Bh ⊛ Cm)` under the unitary FFT.
//! Complex vectors are paired with the real inner product `Re(uᴴv)`, so the
//! adjoint maps back to real `K'×N` matrices.

use nalgebra::DMatrix;
use rustfft::num_complex::Complex64;

use crate::error::{DeblurError, Result};
use crate::image::SpectralField;
use crate::transforms::{haar_forward_in_place, Fft2Plan, ImageBasis, KernelBasis};

/// Thin factors of the lifted matrix `X = left · rightᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPair {
    /// Kernel-side factor, `K' × r`.
    pub left: DMatrix<f64>,
    /// Image-side factor, `N × r`.
    pub right: DMatrix<f64>,
}

impl FactorPair {
    pub fn new(left: DMatrix<f64>, right: DMatrix<f64>) -> Result<Self> {
        if left.ncols() != right.ncols() || left.ncols() == 0 {
            return Err(DeblurError::dim(format!(
                "factor ranks differ or are zero: {} vs {}",
                left.ncols(),
                right.ncols()
            )));
        }
        if left.iter().chain(right.iter()).any(|v| !v.is_finite()) {
            return Err(DeblurError::Domain("non-finite factor entry".into()));
        }
        Ok(Self { left, right })
    }

    pub fn zeros(k: usize, n: usize, rank: usize) -> Self {
        Self {
            left: DMatrix::zeros(k, rank),
            right: DMatrix::zeros(n, rank),
        }
    }

    pub fn rank_budget(&self) -> usize {
        self.left.ncols()
    }

    /// Dense `left · rightᵀ`. Only for small problems and tests.
    pub fn product(&self) -> DMatrix<f64> {
        &self.left * self.right.transpose()
    }

    /// Flattens into `[left (column-major), right (column-major)]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.left.len() + self.right.len());
        v.extend_from_slice(self.left.as_slice());
        v.extend_from_slice(self.right.as_slice());
        v
    }

    /// Inverse of [`FactorPair::to_vec`] for the given shapes.
    pub fn from_slice(k: usize, n: usize, rank: usize, v: &[f64]) -> Self {
        let split = k * rank;
        Self {
            left: DMatrix::from_column_slice(k, rank, &v[..split]),
            right: DMatrix::from_column_slice(n, rank, &v[split..split + n * rank]),
        }
    }

    /// `‖leftᵀ left − rightᵀ right‖_F`, zero at balanced factorizations.
    pub fn imbalance(&self) -> f64 {
        let gz = self.left.transpose() * &self.left;
        let gh = self.right.transpose() * &self.right;
        (gz - gh).norm()
    }

    /// `‖e_iᵀ Z Hᵀ‖₂` for every row, from the `r×r` Gram matrix of `H`.
    pub fn row_norms(&self) -> Vec<f64> {
        group_norms(&self.left, &self.right)
    }

    /// `‖Z Hᵀ e_j‖₂` for every column.
    pub fn col_norms(&self) -> Vec<f64> {
        group_norms(&self.right, &self.left)
    }
}

/// Row norms of `a bᵀ`, i.e. `sqrt(a_i (bᵀb) a_iᵀ)`.
fn group_norms(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<f64> {
    let gram = b.transpose() * b;
    let ag = a * &gram;
    (0..a.nrows())
        .map(|i| ag.row(i).dot(&a.row(i)).max(0.0).sqrt())
        .collect()
}

/// The measurement side of the lifted program.
#[derive(Debug, Clone)]
pub struct LiftedProblem {
    kernel_basis: KernelBasis,
    image_basis: ImageBasis,
    y_hat: SpectralField,
    lambda: f64,
    plan: Fft2Plan,
}

/// Per-column spectra of the kernel and image a factor pair describes.
pub(crate) struct FactorSpectra {
    pub kernel: Vec<Vec<Complex64>>,
    pub image: Vec<Vec<Complex64>>,
}

impl LiftedProblem {
    pub fn new(
        kernel_basis: KernelBasis,
        image_basis: ImageBasis,
        y_hat: SpectralField,
        lambda: f64,
    ) -> Result<Self> {
        let grid = kernel_basis.grid();
        if image_basis.grid() != grid || y_hat.dims() != grid {
            return Err(DeblurError::dim(format!(
                "grid mismatch: kernel {:?}, image {:?}, observation {:?}",
                grid,
                image_basis.grid(),
                y_hat.dims()
            )));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(DeblurError::Config(format!("lambda must be non-negative, got {lambda}")));
        }
        let residual = y_hat.symmetry_residual();
        if residual > 1e-9 * y_hat.norm().max(1.0) {
            return Err(DeblurError::Symmetry { residual, norm: y_hat.norm() });
        }
        let plan = Fft2Plan::new(grid.0, grid.1)?;
        Ok(Self { kernel_basis, image_basis, y_hat, lambda, plan })
    }

    pub fn kernel_basis(&self) -> &KernelBasis {
        &self.kernel_basis
    }

    pub fn image_basis(&self) -> &ImageBasis {
        &self.image_basis
    }

    pub fn y_hat(&self) -> &SpectralField {
        &self.y_hat
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// `(K', N, L)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.kernel_basis.dim(), self.image_basis.dim(), self.plan.len())
    }

    pub fn with_lambda(mut self, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(DeblurError::Config(format!("lambda must be non-negative, got {lambda}")));
        }
        self.lambda = lambda;
        Ok(self)
    }

    fn sqrt_len(&self) -> f64 {
        (self.plan.len() as f64).sqrt()
    }

    pub(crate) fn check_factors(&self, f: &FactorPair) -> Result<()> {
        let (k, n, _) = self.dims();
        if f.left.nrows() != k || f.right.nrows() != n || f.left.ncols() != f.right.ncols() {
            return Err(DeblurError::dim(format!(
                "factors {}x{} / {}x{} do not match K'={k}, N={n}",
                f.left.nrows(),
                f.left.ncols(),
                f.right.nrows(),
                f.right.ncols()
            )));
        }
        Ok(())
    }

    fn check_alpha(&self, alpha: &[Complex64]) -> Result<()> {
        if alpha.len() != self.plan.len() {
            return Err(DeblurError::dim(format!(
                "multiplier has length {}, expected {}",
                alpha.len(),
                self.plan.len()
            )));
        }
        Ok(())
    }

    fn kernel_spectrum(&self, coeffs: &[f64]) -> Vec<Complex64> {
        let mut buf = vec![Complex64::new(0.0, 0.0); self.plan.len()];
        for (&i, &v) in self.kernel_basis.indices().iter().zip(coeffs) {
            buf[i] = Complex64::new(v, 0.0);
        }
        self.plan.forward(&mut buf);
        buf
    }

    fn image_spectrum(&self, coeffs: &[f64]) -> Vec<Complex64> {
        let img = self
            .image_basis
            .embed(coeffs)
            .expect("image basis length checked by caller");
        self.plan.forward_real(img.data())
    }

    pub(crate) fn spectra(&self, f: &FactorPair) -> FactorSpectra {
        let r = f.rank_budget();
        FactorSpectra {
            kernel: (0..r)
                .map(|j| self.kernel_spectrum(f.left.column(j).as_slice()))
                .collect(),
            image: (0..r)
                .map(|j| self.image_spectrum(f.right.column(j).as_slice()))
                .collect(),
        }
    }

    pub(crate) fn apply_spectra(&self, s: &FactorSpectra) -> Vec<Complex64> {
        let scale = self.sqrt_len();
        let mut out = vec![Complex64::new(0.0, 0.0); self.plan.len()];
        for (k, x) in s.kernel.iter().zip(&s.image) {
            for ((o, a), b) in out.iter_mut().zip(k).zip(x) {
                *o += a * b * scale;
            }
        }
        out
    }

    /// `A(Z Hᵀ)` in `O(r L log L)`.
    pub fn apply(&self, f: &FactorPair) -> Result<Vec<Complex64>> {
        self.check_factors(f)?;
        Ok(self.apply_spectra(&self.spectra(f)))
    }

    /// `A(Z Hᵀ) − ŷ`.
    pub fn residual(&self, f: &FactorPair) -> Result<Vec<Complex64>> {
        let mut out = self.apply(f)?;
        for (o, y) in out.iter_mut().zip(self.y_hat.data()) {
            *o -= y;
        }
        Ok(out)
    }

    /// `Re F(sqrt(L) · conj(α) ⊙ spectrum)`, the shared core of both adjoint products.
    fn adjoint_field(&self, alpha: &[Complex64], spectrum: &[Complex64]) -> Vec<f64> {
        let scale = self.sqrt_len();
        let mut buf: Vec<Complex64> = alpha
            .iter()
            .zip(spectrum)
            .map(|(a, s)| a.conj() * s * scale)
            .collect();
        self.plan.forward(&mut buf);
        buf.into_iter().map(|v| v.re).collect()
    }

    pub(crate) fn adjoint_times_right_spectra(
        &self,
        alpha: &[Complex64],
        image_spectra: &[Vec<Complex64>],
    ) -> DMatrix<f64> {
        let k = self.kernel_basis.dim();
        let mut out = DMatrix::zeros(k, image_spectra.len());
        for (j, spec) in image_spectra.iter().enumerate() {
            let field = self.adjoint_field(alpha, spec);
            for (i, &p) in self.kernel_basis.indices().iter().enumerate() {
                out[(i, j)] = field[p];
            }
        }
        out
    }

    pub(crate) fn adjoint_times_left_spectra(
        &self,
        alpha: &[Complex64],
        kernel_spectra: &[Vec<Complex64>],
    ) -> DMatrix<f64> {
        let (h, w) = self.image_basis.grid();
        let depth = self.image_basis.depth();
        let mut out = DMatrix::zeros(self.image_basis.dim(), kernel_spectra.len());
        for (j, spec) in kernel_spectra.iter().enumerate() {
            let mut field = self.adjoint_field(alpha, spec);
            haar_forward_in_place(&mut field, h, w, depth);
            for (i, &p) in self.image_basis.indices().iter().enumerate() {
                out[(i, j)] = field[p];
            }
        }
        out
    }

    /// `A*(α) · H`, a `K'×r` real matrix, without forming `A*(α)`.
    pub fn adjoint_times_right(&self, alpha: &[Complex64], right: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_alpha(alpha)?;
        if right.nrows() != self.image_basis.dim() {
            return Err(DeblurError::dim(format!(
                "image factor has {} rows, expected {}",
                right.nrows(),
                self.image_basis.dim()
            )));
        }
        let spectra: Vec<_> = (0..right.ncols())
            .map(|j| self.image_spectrum(right.column(j).as_slice()))
            .collect();
        Ok(self.adjoint_times_right_spectra(alpha, &spectra))
    }

    /// `A*(α)ᵀ · Z`, an `N×r` real matrix.
    pub fn adjoint_times_left(&self, alpha: &[Complex64], left: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_alpha(alpha)?;
        if left.nrows() != self.kernel_basis.dim() {
            return Err(DeblurError::dim(format!(
                "kernel factor has {} rows, expected {}",
                left.nrows(),
                self.kernel_basis.dim()
            )));
        }
        let spectra: Vec<_> = (0..left.ncols())
            .map(|j| self.kernel_spectrum(left.column(j).as_slice()))
            .collect();
        Ok(self.adjoint_times_left_spectra(alpha, &spectra))
    }
}

/// `Re(uᴴ v)`.
pub fn real_inner(u: &[Complex64], v: &[Complex64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a.re * b.re + a.im * b.im).sum()
}

pub fn complex_norm_sq(u: &[Complex64]) -> f64 {
    u.iter().map(|v| v.norm_sqr()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Image;
    use crate::transforms::fft2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    /// Dense unitary DFT matrix.
    fn dft_matrix(h: usize, w: usize) -> DMatrix<Complex64> {
        let l = h * w;
        let s = 1.0 / (l as f64).sqrt();
        DMatrix::from_fn(l, l, |a, b| {
            let (u, v, r, c) = (a / w, a % w, b / w, b % w);
            let phase = -2.0 * PI * ((u * r) as f64 / h as f64 + (v * c) as f64 / w as f64);
            Complex64::from_polar(s, phase)
        })
    }

    /// Explicit `L×K'` and `L×N` real basis matrices.
    fn dense_bases(p: &LiftedProblem) -> (DMatrix<f64>, DMatrix<f64>) {
        let (k, n, l) = p.dims();
        let mut b = DMatrix::zeros(l, k);
        for (j, &i) in p.kernel_basis().indices().iter().enumerate() {
            b[(i, j)] = 1.0;
        }
        let mut c = DMatrix::zeros(l, n);
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            let col = p.image_basis().embed(&e).unwrap();
            for (i, v) in col.data().iter().enumerate() {
                c[(i, j)] = *v;
            }
        }
        (b, c)
    }

    /// `Tr(A_lᴴ X) = b̂_lᴴ X ĉ_l` with `b̂_l = sqrt(L) conj((FB)_{l,:})ᵀ`, `ĉ_l = (FC)_{l,:}ᵀ`.
    fn dense_apply(p: &LiftedProblem, x: &DMatrix<f64>) -> Vec<Complex64> {
        let (h, w) = p.kernel_basis().grid();
        let (_, _, l) = p.dims();
        let f = dft_matrix(h, w);
        let (b, c) = dense_bases(p);
        let fb = &f * b.map(|v| Complex64::new(v, 0.0));
        let fc = &f * c.map(|v| Complex64::new(v, 0.0));
        let sl = (l as f64).sqrt();
        let xc = x.map(|v| Complex64::new(v, 0.0));
        (0..l)
            .map(|row| {
                let b_hat = fb.row(row).transpose().map(|v| v.conj() * sl);
                let c_hat = fc.row(row).transpose();
                let a = &b_hat * c_hat.adjoint();
                (a.adjoint() * &xc).trace()
            })
            .collect()
    }

    /// Dense real adjoint, entry by entry: `A*(α)_ij = ⟨A(E_ij), α⟩`.
    fn dense_adjoint(p: &LiftedProblem, alpha: &[Complex64]) -> DMatrix<f64> {
        let (k, n, _) = p.dims();
        let mut out = DMatrix::zeros(k, n);
        for i in 0..k {
            for j in 0..n {
                let mut e = DMatrix::zeros(k, n);
                e[(i, j)] = 1.0;
                let col = dense_apply(p, &e);
                out[(i, j)] = real_inner(&col, alpha);
            }
        }
        out
    }

    fn random_problem(rng: &mut ChaCha8Rng, h: usize, w: usize, k: usize, n: usize) -> LiftedProblem {
        let l = h * w;
        let mut kidx: Vec<usize> = (0..l).collect();
        let mut nidx: Vec<usize> = (0..l).collect();
        shuffle(&mut kidx, rng);
        shuffle(&mut nidx, rng);
        let depth = crate::transforms::default_haar_depth(h, w);
        let kb = KernelBasis::new(h, w, kidx[..k].to_vec()).unwrap();
        let ib = ImageBasis::new(h, w, depth, nidx[..n].to_vec()).unwrap();
        let y = Image::from_fn(h, w, |_, _| rng.random::<f64>()).unwrap();
        LiftedProblem::new(kb, ib, fft2(&y).unwrap(), 0.5).unwrap()
    }

    fn shuffle(v: &mut [usize], rng: &mut ChaCha8Rng) {
        for i in (1..v.len()).rev() {
            let j = rng.random_range(0..=i);
            v.swap(i, j);
        }
    }

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random::<f64>() * 2.0 - 1.0)
    }

    fn random_alpha(rng: &mut ChaCha8Rng, l: usize) -> Vec<Complex64> {
        (0..l)
            .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect()
    }

    #[test]
    fn apply_zero_factor_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_problem(&mut rng, 4, 4, 3, 4);
        let f = FactorPair::new(DMatrix::zeros(3, 2), random_matrix(&mut rng, 4, 2)).unwrap();
        assert!(p.apply(&f).unwrap().iter().all(|v| v.norm() == 0.0));
        let r = p.residual(&f).unwrap();
        for (a, b) in r.iter().zip(p.y_hat().data()) {
            assert_eq!(*a, -b);
        }
    }

    #[test]
    fn apply_delta_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (h, w) = (4, 4);
        let kb = KernelBasis::new(h, w, vec![0, 5, 6]).unwrap();
        let ib = ImageBasis::full(h, w, 2).unwrap();
        let p = LiftedProblem::new(kb, ib.clone(), SpectralField::zeros(h, w).unwrap(), 1.0).unwrap();
        let m: Vec<f64> = (0..16).map(|_| rng.random::<f64>()).collect();
        let f = FactorPair::new(
            DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]),
            DMatrix::from_column_slice(16, 1, &m),
        )
        .unwrap();
        let out = p.apply(&f).unwrap();
        // fft2 of the unit pixel at the origin has constant modulus 1/sqrt(L)
        let delta = fft2(&KernelBasis::new(h, w, vec![0]).unwrap().embed(&[1.0]).unwrap()).unwrap();
        assert!(delta.data().iter().all(|v| (v.norm() - 0.25).abs() < 1e-12));
        let x_hat = fft2(&ib.embed(&m).unwrap()).unwrap();
        for (o, x) in out.iter().zip(x_hat.data()) {
            assert!((o - x).norm() < 1e-12);
        }
    }

    #[test]
    fn apply_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_problem(&mut rng, 4, 4, 3, 4);
        let f = FactorPair::new(random_matrix(&mut rng, 3, 2), random_matrix(&mut rng, 4, 2)).unwrap();
        let fast = p.apply(&f).unwrap();
        let dense = dense_apply(&p, &f.product());
        let scale = complex_norm_sq(&dense).sqrt();
        for (a, b) in fast.iter().zip(&dense) {
            assert!((a - b).norm() <= 1e-9 * scale);
        }
    }

    #[test]
    fn residual_is_apply_minus_observation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = random_problem(&mut rng, 4, 8, 5, 6);
        let f = FactorPair::new(random_matrix(&mut rng, 5, 3), random_matrix(&mut rng, 6, 3)).unwrap();
        let a = p.apply(&f).unwrap();
        let r = p.residual(&f).unwrap();
        for l in 0..a.len() {
            assert_eq!(r[l], a[l] - p.y_hat().data()[l]);
        }
        // an exactly reproduced observation leaves no residual
        let exact = LiftedProblem::new(
            p.kernel_basis().clone(),
            p.image_basis().clone(),
            SpectralField::new(4, 8, a).unwrap(),
            1.0,
        )
        .unwrap();
        assert!(complex_norm_sq(&exact.residual(&f).unwrap()).sqrt() < 1e-12);
    }

    #[test]
    fn adjoint_zero_alpha() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_problem(&mut rng, 4, 4, 3, 4);
        let zero = vec![Complex64::new(0.0, 0.0); 16];
        assert_eq!(p.adjoint_times_right(&zero, &random_matrix(&mut rng, 4, 2)).unwrap().norm(), 0.0);
        assert_eq!(p.adjoint_times_left(&zero, &random_matrix(&mut rng, 3, 2)).unwrap().norm(), 0.0);
    }

    #[test]
    fn adjoint_matches_dense_and_identity_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = random_problem(&mut rng, 4, 4, 3, 4);
        let f = FactorPair::new(random_matrix(&mut rng, 3, 2), random_matrix(&mut rng, 4, 2)).unwrap();
        let alpha = random_alpha(&mut rng, 16);
        let dense = dense_adjoint(&p, &alpha);
        let ah = p.adjoint_times_right(&alpha, &f.right).unwrap();
        let az = p.adjoint_times_left(&alpha, &f.left).unwrap();
        assert!((&ah - &dense * &f.right).norm() < 1e-10);
        assert!((&az - dense.transpose() * &f.left).norm() < 1e-10);

        let lhs = real_inner(&p.apply(&f).unwrap(), &alpha);
        let rhs = f.product().component_mul(&dense).sum();
        let scale = f.product().norm() * complex_norm_sq(&alpha).sqrt();
        assert!((lhs - rhs).abs() <= 1e-10 * scale);
    }

    #[test]
    fn adjoint_single_frequency() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = random_problem(&mut rng, 4, 4, 3, 4);
        let right = random_matrix(&mut rng, 4, 2);
        for l in [0usize, 3, 9] {
            let mut alpha = vec![Complex64::new(0.0, 0.0); 16];
            alpha[l] = Complex64::new(1.0, 0.0);
            let dense = dense_adjoint(&p, &alpha);
            let fast = p.adjoint_times_right(&alpha, &right).unwrap();
            assert!((fast - &dense * &right).norm() < 1e-10);
        }
    }

    #[test]
    fn adjoint_transpose_symmetry_on_square_instance() {
        // kernel basis equal to the pixel grid and image basis equal to all Haar
        // coefficients of depth 0 (the identity) makes B = C, so A*(α) is symmetric.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (h, w) = (4, 4);
        let kb = KernelBasis::new(h, w, (0..16).collect()).unwrap();
        let ib = ImageBasis::full(h, w, 0).unwrap();
        let p = LiftedProblem::new(kb, ib, SpectralField::zeros(h, w).unwrap(), 1.0).unwrap();
        let alpha = random_alpha(&mut rng, 16);
        let m = random_matrix(&mut rng, 16, 2);
        let a = p.adjoint_times_right(&alpha, &m).unwrap();
        let b = p.adjoint_times_left(&alpha, &m).unwrap();
        assert!((a - b).norm() < 1e-10);
    }

    #[test]
    fn full_basis_matches_circular_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (h, w) = (8, 8);
        let kb = KernelBasis::new(h, w, (0..64).collect()).unwrap();
        let ib = ImageBasis::full(h, w, 3).unwrap();
        let p = LiftedProblem::new(kb.clone(), ib.clone(), SpectralField::zeros(h, w).unwrap(), 1.0).unwrap();
        let hv: Vec<f64> = (0..64).map(|_| rng.random::<f64>()).collect();
        let mv: Vec<f64> = (0..64).map(|_| rng.random::<f64>()).collect();
        let k = kb.embed(&hv).unwrap();
        let x = ib.embed(&mv).unwrap();
        let conv = Image::from_fn(h, w, |r, c| {
            let mut acc = 0.0;
            for a in 0..h {
                for b in 0..w {
                    acc += k.get(a, b) * x.get((r + h - a) % h, (c + w - b) % w);
                }
            }
            acc
        })
        .unwrap();
        let expected = fft2(&conv).unwrap();
        let f = FactorPair::new(
            DMatrix::from_column_slice(64, 1, &hv),
            DMatrix::from_column_slice(64, 1, &mv),
        )
        .unwrap();
        let got = p.apply(&f).unwrap();
        let scale = expected.norm();
        for (a, b) in got.iter().zip(expected.data()) {
            assert!((a - b).norm() <= 1e-9 * scale);
        }
    }

    #[test]
    fn apply_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let p = random_problem(&mut rng, 4, 8, 4, 5);
        let z1 = random_matrix(&mut rng, 4, 1);
        let z2 = random_matrix(&mut rng, 4, 1);
        let hm = random_matrix(&mut rng, 5, 1);
        let stacked = FactorPair::new(
            DMatrix::from_columns(&[z1.column(0), z2.column(0)]),
            DMatrix::from_columns(&[hm.column(0), hm.column(0)]),
        )
        .unwrap();
        let a1 = p.apply(&FactorPair::new(z1.clone(), hm.clone()).unwrap()).unwrap();
        let a2 = p.apply(&FactorPair::new(z2, hm.clone()).unwrap()).unwrap();
        let sum = p.apply(&stacked).unwrap();
        for l in 0..sum.len() {
            assert!((sum[l] - a1[l] - a2[l]).norm() < 1e-12);
        }
        let scaled = p.apply(&FactorPair::new(z1 * 2.5, hm).unwrap()).unwrap();
        for l in 0..sum.len() {
            assert!((scaled[l] - a1[l] * 2.5).norm() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = random_problem(&mut rng, 4, 4, 3, 4);
        let bad = FactorPair::zeros(2, 4, 1);
        assert!(p.apply(&bad).is_err());
        assert!(p.adjoint_times_right(&[Complex64::new(0.0, 0.0); 3], &DMatrix::zeros(4, 1)).is_err());
    }

    #[test]
    fn group_norms_match_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let f = FactorPair::new(random_matrix(&mut rng, 5, 3), random_matrix(&mut rng, 7, 3)).unwrap();
        let x = f.product();
        for (i, n) in f.row_norms().iter().enumerate() {
            assert!((n - x.row(i).norm()).abs() < 1e-12);
        }
        for (j, n) in f.col_norms().iter().enumerate() {
            assert!((n - x.column(j).norm()).abs() < 1e-12);
        }
    }
}
