//! Linear algebra with block-circulant-with-circulant-blocks (BCCB) matrices.
//!
//! A BCCB matrix `C` with first column `c` is diagonalized by the 2-D DFT.
//! With `W` the unnormalized forward transform and `W⁻¹ = W*/N`:
//!
//! * eigenvalues `λ = W c` (so the identity has `λ ≡ 1`),
//! * `C x = W⁻¹(λ ⊙ W x)`,
//! * `x'C⁻¹x = (1/N) Σ |W x|²_k / λ_k`,
//! * `Z = N^{-1/2} W(√λ ⊙ ε)` colors complex white noise into two
//!   independent `N(0, C)` fields (real and imaginary parts).

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{check_len, Error, Result};
use crate::lattice::ObservationMask;

/// Relative tolerance on the imaginary part of the transformed base vector.
pub const REALNESS_TOL: f64 = 1e-8;

/// Planned 2-D transforms for one grid shape. Plans are cached process-wide
/// and shared; each call allocates its own scratch, so concurrent use is safe.
pub struct Fft2 {
    n1: usize,
    n2: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    pub fn get(n1: usize, n2: usize) -> Arc<Fft2> {
        static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Arc<Fft2>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut map = cache.lock().unwrap_or_else(|e| e.into_inner());
        map.entry((n1, n2))
            .or_insert_with(|| {
                let mut planner = FftPlanner::new();
                Arc::new(Fft2 {
                    n1,
                    n2,
                    row_fwd: planner.plan_fft_forward(n2),
                    row_inv: planner.plan_fft_inverse(n2),
                    col_fwd: planner.plan_fft_forward(n1),
                    col_inv: planner.plan_fft_inverse(n1),
                })
            })
            .clone()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n1, self.n2)
    }

    pub fn len(&self) -> usize {
        self.n1 * self.n2
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn run(&self, data: &mut [Complex64], rows: &Arc<dyn Fft<f64>>, cols: &Arc<dyn Fft<f64>>) {
        assert_eq!(data.len(), self.len(), "FFT buffer length");
        let scratch_len = rows
            .get_inplace_scratch_len()
            .max(cols.get_inplace_scratch_len());
        let mut scratch = vec![Complex64::default(); scratch_len];
        rows.process_with_scratch(data, &mut scratch);
        let mut t = vec![Complex64::default(); data.len()];
        transpose(data, &mut t, self.n1, self.n2);
        cols.process_with_scratch(&mut t, &mut scratch);
        transpose(&t, data, self.n2, self.n1);
    }

    /// Unnormalized forward transform in place.
    pub fn forward(&self, data: &mut [Complex64]) {
        self.run(data, &self.row_fwd, &self.col_fwd);
    }

    /// Inverse transform in place, including the `1/N` factor.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.run(data, &self.row_inv, &self.col_inv);
        let scale = 1.0 / self.len() as f64;
        for v in data.iter_mut() {
            *v *= scale;
        }
    }

    pub fn forward_real(&self, x: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward(&mut buf);
        buf
    }
}

fn transpose(src: &[Complex64], dst: &mut [Complex64], rows: usize, cols: usize) {
    const B: usize = 32;
    for ib in (0..rows).step_by(B) {
        for jb in (0..cols).step_by(B) {
            for i in ib..(ib + B).min(rows) {
                for j in jb..(jb + B).min(cols) {
                    dst[j * rows + i] = src[i * cols + j];
                }
            }
        }
    }
}

/// Eigenvalues of a symmetric BCCB matrix together with the transforms
/// needed to apply functions of it.
#[derive(Clone)]
pub struct EigenSpectrum {
    values: Vec<f64>,
    min_eig: f64,
    fft: Arc<Fft2>,
}

impl std::fmt::Debug for EigenSpectrum {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EigenSpectrum")
            .field("shape", &self.fft.shape())
            .field("min_eig", &self.min_eig)
            .finish()
    }
}

impl EigenSpectrum {
    /// Transforms the base vector `c`. Fails when the transform is not real,
    /// which means `c` lacked the reflection symmetry of a BCCB first column.
    /// Negative eigenvalues are recorded, not rejected.
    pub fn new(c: &[f64], shape: (usize, usize)) -> Result<Self> {
        check_len(shape.0 * shape.1, c.len())?;
        let fft = Fft2::get(shape.0, shape.1);
        let t = fft.forward_real(c);
        let max_abs = t.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let max_im = t.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
        if max_abs > 0.0 && max_im > REALNESS_TOL * max_abs {
            return Err(Error::NonSymmetricBase {
                residue: max_im / max_abs,
            });
        }
        let values: Vec<f64> = t.iter().map(|z| z.re).collect();
        Ok(Self::from_values(values, fft))
    }

    fn from_values(values: Vec<f64>, fft: Arc<Fft2>) -> Self {
        let min_eig = values.iter().copied().fold(f64::INFINITY, f64::min);
        Self {
            values,
            min_eig,
            fft,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.fft.shape()
    }

    pub fn fft(&self) -> &Arc<Fft2> {
        &self.fft
    }

    pub fn min_eig(&self) -> f64 {
        self.min_eig
    }

    pub fn is_positive(&self) -> bool {
        self.min_eig > 0.0
    }

    pub fn require_positive(&self) -> Result<()> {
        if self.is_positive() {
            Ok(())
        } else {
            Err(Error::NegativeEigenvalue {
                min_eig: self.min_eig,
            })
        }
    }

    fn require_nonnegative(&self) -> Result<()> {
        if self.min_eig >= 0.0 {
            Ok(())
        } else {
            Err(Error::NegativeEigenvalue {
                min_eig: self.min_eig,
            })
        }
    }

    /// Eigenvalue at zero frequency, `Σ c`. `1'C⁻¹1 = N / λ₀`.
    pub fn zero_frequency(&self) -> f64 {
        self.values[0]
    }

    /// `g(C) x` for real `x` and a real function `g` of the eigenvalues.
    pub fn apply_spectral(&self, x: &[f64], g: impl Fn(f64) -> f64) -> Result<Vec<f64>> {
        check_len(self.len(), x.len())?;
        let mut buf = self.fft.forward_real(x);
        for (z, &l) in buf.iter_mut().zip(&self.values) {
            *z *= g(l);
        }
        self.fft.inverse(&mut buf);
        Ok(buf.into_iter().map(|z| z.re).collect())
    }

    /// `(g(C) x, g(C) y)` from a single complex transform pair.
    pub fn apply_spectral_pair(
        &self,
        x: &[f64],
        y: &[f64],
        g: impl Fn(f64) -> f64,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        check_len(self.len(), x.len())?;
        check_len(self.len(), y.len())?;
        let mut buf: Vec<Complex64> = x
            .iter()
            .zip(y)
            .map(|(&a, &b)| Complex64::new(a, b))
            .collect();
        self.fft.forward(&mut buf);
        for (z, &l) in buf.iter_mut().zip(&self.values) {
            *z *= g(l);
        }
        self.fft.inverse(&mut buf);
        Ok(buf.into_iter().map(|z| (z.re, z.im)).unzip())
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.apply_spectral(x, |l| l)
    }

    /// `C⁻¹ x`.
    pub fn solve(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.require_positive()?;
        self.apply_spectral(x, |l| 1.0 / l)
    }

    /// `N^{-1/2} W(√λ ⊙ ε)`.
    pub fn color(&self, eps: &[Complex64]) -> Result<Vec<Complex64>> {
        check_len(self.len(), eps.len())?;
        self.require_nonnegative()?;
        let scale = 1.0 / (self.len() as f64).sqrt();
        let mut buf: Vec<Complex64> = eps
            .iter()
            .zip(&self.values)
            .map(|(&e, &l)| e * (l.sqrt() * scale))
            .collect();
        self.fft.forward(&mut buf);
        Ok(buf)
    }

    /// Inverse of [`color`](Self::color): `Λ^{-1/2} N^{1/2} W⁻¹ z`.
    pub fn whiten(&self, z: &[Complex64]) -> Result<Vec<Complex64>> {
        check_len(self.len(), z.len())?;
        self.require_positive()?;
        let mut buf = z.to_vec();
        self.fft.inverse(&mut buf);
        let scale = (self.len() as f64).sqrt();
        for (v, &l) in buf.iter_mut().zip(&self.values) {
            *v *= scale / l.sqrt();
        }
        Ok(buf)
    }

    /// `|W x|²_k / N`, the power spectrum for which `x'C⁻¹x = Σ_k P_k / λ_k`.
    pub fn power(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.len(), x.len())?;
        Ok(power_spectrum(&self.fft, x))
    }

    /// `x'C⁻¹x`.
    pub fn inv_quad_form(&self, x: &[f64]) -> Result<f64> {
        self.require_positive()?;
        let p = self.power(x)?;
        Ok(weighted_power(&p, &self.values))
    }

    /// `ln det C = Σ ln λ_k`.
    pub fn logdet(&self) -> Result<f64> {
        self.require_positive()?;
        Ok(self.values.iter().map(|l| l.ln()).sum())
    }

    /// `(C_oo x_o, C_uo x_o)` from a zero-padded product.
    pub fn partitioned_matvec(
        &self,
        mask: &ObservationMask,
        x_o: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        check_len(mask.n(), x_o.len())?;
        check_len(self.len(), mask.total())?;
        let full = self.matvec(&mask.scatter(x_o))?;
        Ok((mask.gather_observed(&full), mask.gather_unobserved(&full)))
    }
}

pub fn power_spectrum(fft: &Fft2, x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    fft.forward_real(x)
        .into_iter()
        .map(|z| z.norm_sqr() / n)
        .collect()
}

/// `Σ_k P_k / λ_k`.
pub fn weighted_power(p: &[f64], lambda: &[f64]) -> f64 {
    p.iter().zip(lambda).map(|(p, l)| p / l).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity(n1: usize, n2: usize) -> Vec<f64> {
        let mut c = vec![0.0; n1 * n2];
        c[0] = 1.0;
        c
    }

    #[test]
    fn identity_and_constant() {
        let s = EigenSpectrum::new(&identity(4, 6), (4, 6)).unwrap();
        assert!(s.values().iter().all(|&l| (l - 1.0).abs() < 1e-14));
        assert_eq!(s.logdet().unwrap(), 0.0);
        let x: Vec<f64> = (0..24).map(|k| k as f64 - 3.0).collect();
        let y = s.matvec(&x).unwrap();
        assert!(x.iter().zip(&y).all(|(a, b)| (a - b).abs() < 1e-12));
        let q = s.inv_quad_form(&x).unwrap();
        let norm2: f64 = x.iter().map(|v| v * v).sum();
        assert!((q - norm2).abs() < 1e-10 * norm2);

        let s = EigenSpectrum::new(&[2.5; 16], (4, 4)).unwrap();
        assert!((s.values()[0] - 40.0).abs() < 1e-12);
        assert!(s.values()[1..].iter().all(|l| l.abs() < 1e-12));
    }

    #[test]
    fn rejects_asymmetric_base() {
        let mut c = identity(4, 4);
        c[1] = 0.5;
        assert!(matches!(
            EigenSpectrum::new(&c, (4, 4)),
            Err(Error::NonSymmetricBase { .. })
        ));
        assert!(matches!(
            EigenSpectrum::new(&c, (4, 5)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn negative_spectrum_is_flagged() {
        let mut c = identity(4, 4);
        c[1] = 0.9;
        c[3] = 0.9;
        let s = EigenSpectrum::new(&c, (4, 4)).unwrap();
        assert!(!s.is_positive());
        assert!(matches!(s.logdet(), Err(Error::NegativeEigenvalue { .. })));
        assert!(s.matvec(&[1.0; 16]).is_ok());
    }

    #[test]
    fn color_zero_is_zero() {
        let s = EigenSpectrum::new(&identity(4, 4), (4, 4)).unwrap();
        let z = s.color(&[Complex64::default(); 16]).unwrap();
        assert!(z.iter().all(|v| v.norm() == 0.0));
    }
}
