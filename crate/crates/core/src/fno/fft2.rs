//! Pruned 2D transforms between a real field and its retained Fourier modes.
//!
//! Conventions: the forward transform is unnormalized, the inverse carries
//! 1/(n0·n1). Retained modes live on the half set
//!   kx ∈ [0, m0) ∪ (n0-m0, n0),  ky ∈ [0, m1),
//! which is mirror-closed in kx. The inverse scatter writes each coefficient
//! and its conjugate at the mirrored bin, so the reconstructed spectrum is
//! Hermitian and the output field is real to rounding error.
//!
//! Adjoint identities used by the backward pass (M = n0·n1):
//!   adjoint(fwd_gather)  = (M/2) · inv_scatter
//!   adjoint(inv_scatter) = (2/M) · fwd_gather
//! Both are exercised against finite differences in the gradient tests.

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

pub struct Fft2 {
    pub n0: usize,
    pub n1: usize,
    pub m0: usize,
    pub m1: usize,
    /// Retained kx bins: the low block [0, m0) then the mirrored high block.
    kx_list: Vec<usize>,
    fwd0: Arc<dyn Fft<f64>>,
    inv0: Arc<dyn Fft<f64>>,
    fwd1: Arc<dyn Fft<f64>>,
    inv1: Arc<dyn Fft<f64>>,
}

/// Reusable buffers for the transforms.
pub struct FftScratch {
    rows: Vec<Complex64>,
    col: Vec<Complex64>,
    work: Vec<Complex64>,
}

impl Fft2 {
    /// Panics if the mode counts exceed the Nyquist limit; callers validate
    /// configs first.
    pub fn new(n0: usize, n1: usize, m0: usize, m1: usize) -> Self {
        assert!(m0 >= 1 && m1 >= 1, "need at least one mode per dimension");
        assert!(2 * m0 - 1 <= n0, "kx modes exceed grid extent");
        assert!(2 * m1 - 1 <= n1, "ky modes exceed grid extent");
        let mut planner = FftPlanner::new();
        let mut kx_list: Vec<usize> = (0..m0).collect();
        kx_list.extend(n0 - m0 + 1..n0);
        Self {
            kx_list,
            fwd0: planner.plan_fft_forward(n0),
            inv0: planner.plan_fft_inverse(n0),
            fwd1: planner.plan_fft_forward(n1),
            inv1: planner.plan_fft_inverse(n1),
            n0,
            n1,
            m0,
            m1,
        }
    }

    /// Number of retained (kx, ky) slots.
    pub fn n_slots(&self) -> usize {
        self.kx_list.len() * self.m1
    }

    pub fn kx_count(&self) -> usize {
        self.kx_list.len()
    }

    pub fn make_scratch(&self) -> FftScratch {
        let work_len = self
            .fwd0
            .get_inplace_scratch_len()
            .max(self.inv0.get_inplace_scratch_len())
            .max(self.fwd1.get_inplace_scratch_len())
            .max(self.inv1.get_inplace_scratch_len());
        FftScratch {
            rows: vec![Complex64::default(); self.n0 * self.n1],
            col: vec![Complex64::default(); self.n0],
            work: vec![Complex64::default(); work_len],
        }
    }

    /// Unnormalized FFT2 of a real field, gathered on the retained slots.
    /// `out` is indexed slot = kxi * m1 + ky.
    pub fn fwd_gather(&self, input: &[f64], s: &mut FftScratch, out: &mut [Complex64]) {
        debug_assert_eq!(input.len(), self.n0 * self.n1);
        debug_assert_eq!(out.len(), self.n_slots());
        for (row, chunk) in s.rows.chunks_exact_mut(self.n1).enumerate() {
            let src = &input[row * self.n1..(row + 1) * self.n1];
            for (c, &v) in chunk.iter_mut().zip(src.iter()) {
                *c = Complex64::new(v, 0.0);
            }
            self.fwd1.process_with_scratch(chunk, &mut s.work);
        }
        for ky in 0..self.m1 {
            for (c, row) in s.col.iter_mut().zip(s.rows.chunks_exact(self.n1)) {
                *c = row[ky];
            }
            self.fwd0.process_with_scratch(&mut s.col, &mut s.work);
            for (kxi, &kx) in self.kx_list.iter().enumerate() {
                out[kxi * self.m1 + ky] = s.col[kx];
            }
        }
    }

    fn scatter_hermitian(&self, coeffs: &[Complex64], s: &mut FftScratch) {
        s.rows.fill(Complex64::default());
        for (kxi, &kx) in self.kx_list.iter().enumerate() {
            for ky in 0..self.m1 {
                let g = coeffs[kxi * self.m1 + ky];
                s.rows[kx * self.n1 + ky] += g;
                let mkx = if kx == 0 { 0 } else { self.n0 - kx };
                let mky = if ky == 0 { 0 } else { self.n1 - ky };
                s.rows[mkx * self.n1 + mky] += g.conj();
            }
        }
    }

    fn inv_transform(&self, s: &mut FftScratch) {
        // Only columns [0, m1) ∪ (n1-m1, n1) hold energy after the scatter.
        for ky in (0..self.m1).chain(self.n1 - self.m1 + 1..self.n1) {
            for (c, row) in s.col.iter_mut().zip(s.rows.chunks_exact(self.n1)) {
                *c = row[ky];
            }
            self.inv0.process_with_scratch(&mut s.col, &mut s.work);
            for (row, &c) in s.rows.chunks_exact_mut(self.n1).zip(s.col.iter()) {
                row[ky] = c;
            }
        }
        for chunk in s.rows.chunks_exact_mut(self.n1) {
            self.inv1.process_with_scratch(chunk, &mut s.work);
        }
    }

    /// Hermitian scatter of retained coefficients, normalized inverse FFT2,
    /// real part.
    pub fn inv_scatter(&self, coeffs: &[Complex64], s: &mut FftScratch, out: &mut [f64]) {
        debug_assert_eq!(coeffs.len(), self.n_slots());
        debug_assert_eq!(out.len(), self.n0 * self.n1);
        self.scatter_hermitian(coeffs, s);
        self.inv_transform(s);
        let norm = 1.0 / (self.n0 * self.n1) as f64;
        for (o, c) in out.iter_mut().zip(s.rows.iter()) {
            *o = c.re * norm;
        }
    }

    /// Largest |Im| left by the inverse relative to the largest |Re|;
    /// Hermitian symmetry keeps this at rounding level.
    pub fn imag_residue(&self, coeffs: &[Complex64], s: &mut FftScratch) -> f64 {
        self.scatter_hermitian(coeffs, s);
        self.inv_transform(s);
        let mut max_re = 0.0f64;
        let mut max_im = 0.0f64;
        for c in s.rows.iter() {
            max_re = max_re.max(c.re.abs());
            max_im = max_im.max(c.im.abs());
        }
        if max_re == 0.0 {
            max_im
        } else {
            max_im / max_re
        }
    }
}
