//! Two-dimensional discrete Fourier transforms.
//!
//! Convention: the forward transform is unnormalized and the inverse applies
//! `1 / (rows * cols)`, so `ifft2(fft2(f)) == f`. Power-of-two lengths use an
//! iterative radix-2 kernel; other lengths go through Bluestein's chirp-z
//! reformulation on a padded power-of-two kernel.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

use crate::field::{ComplexField, RealField};

#[derive(Debug, Clone)]
struct Radix2 {
    n: usize,
    twiddles: Vec<Complex64>,
}

impl Radix2 {
    fn new(n: usize) -> Self {
        debug_assert!(n.is_power_of_two());
        let twiddles = (0..n / 2)
            .map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 / n as f64))
            .collect();
        Self { n, twiddles }
    }

    /// In-place forward transform (negative exponent).
    fn forward(&self, buf: &mut [Complex64]) {
        let n = self.n;
        if n <= 1 {
            return;
        }
        let bits = n.trailing_zeros();
        for i in 0..n {
            let j = i.reverse_bits() >> (usize::BITS - bits);
            if j > i {
                buf.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= n {
            let half = len / 2;
            let step = n / len;
            for start in (0..n).step_by(len) {
                for k in 0..half {
                    let w = self.twiddles[k * step];
                    let a = buf[start + k];
                    let b = buf[start + k + half] * w;
                    buf[start + k] = a + b;
                    buf[start + k + half] = a - b;
                }
            }
            len <<= 1;
        }
    }
}

#[derive(Debug, Clone)]
struct Bluestein {
    n: usize,
    inner: Radix2,
    chirp: Vec<Complex64>,
    kernel_spectrum: Vec<Complex64>,
}

impl Bluestein {
    fn new(n: usize) -> Self {
        let m = (2 * n - 1).next_power_of_two();
        let inner = Radix2::new(m);
        // k^2 mod 2n keeps the chirp argument small and exact
        let chirp: Vec<Complex64> = (0..n)
            .map(|k| {
                let k2 = (k * k) % (2 * n);
                Complex64::from_polar(1.0, -PI * k2 as f64 / n as f64)
            })
            .collect();
        let mut kernel = vec![Complex64::new(0.0, 0.0); m];
        kernel[0] = chirp[0].conj();
        for k in 1..n {
            kernel[k] = chirp[k].conj();
            kernel[m - k] = chirp[k].conj();
        }
        inner.forward(&mut kernel);
        Self {
            n,
            inner,
            chirp,
            kernel_spectrum: kernel,
        }
    }

    fn forward(&self, buf: &mut [Complex64], scratch: &mut Vec<Complex64>) {
        let m = self.inner.n;
        scratch.clear();
        scratch.resize(m, Complex64::new(0.0, 0.0));
        for k in 0..self.n {
            scratch[k] = buf[k] * self.chirp[k];
        }
        self.inner.forward(scratch);
        for (a, b) in scratch.iter_mut().zip(&self.kernel_spectrum) {
            *a *= *b;
        }
        // inverse via conjugation
        for a in scratch.iter_mut() {
            *a = a.conj();
        }
        self.inner.forward(scratch);
        let inv_m = 1.0 / m as f64;
        for k in 0..self.n {
            buf[k] = scratch[k].conj() * inv_m * self.chirp[k];
        }
    }
}

#[derive(Debug, Clone)]
enum Kernel {
    Radix2(Radix2),
    Bluestein(Bluestein),
}

/// A reusable one-dimensional transform of fixed length.
#[derive(Debug, Clone)]
pub struct Fft1 {
    kernel: Kernel,
}

impl Fft1 {
    pub fn new(n: usize) -> Self {
        let kernel = if n.is_power_of_two() {
            Kernel::Radix2(Radix2::new(n))
        } else {
            Kernel::Bluestein(Bluestein::new(n))
        };
        Self { kernel }
    }

    pub fn len(&self) -> usize {
        match &self.kernel {
            Kernel::Radix2(k) => k.n,
            Kernel::Bluestein(k) => k.n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn forward_with(&self, buf: &mut [Complex64], scratch: &mut Vec<Complex64>) {
        match &self.kernel {
            Kernel::Radix2(k) => k.forward(buf),
            Kernel::Bluestein(k) => k.forward(buf, scratch),
        }
    }

    /// Unnormalized forward transform in place.
    pub fn forward(&self, buf: &mut [Complex64]) {
        let mut scratch = Vec::new();
        self.forward_with(buf, &mut scratch);
    }
}

/// A reusable plan for `rows x cols` planes.
#[derive(Debug, Clone)]
pub struct Fft2 {
    rows: usize,
    cols: usize,
    row_fft: Fft1,
    col_fft: Fft1,
}

impl Fft2 {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            row_fft: Fft1::new(cols),
            col_fft: Fft1::new(rows),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    fn transform(&self, plane: &mut [Complex64], inverse: bool) {
        debug_assert_eq!(plane.len(), self.rows * self.cols);
        if inverse {
            for z in plane.iter_mut() {
                *z = z.conj();
            }
        }
        let mut scratch = Vec::new();
        for row in plane.chunks_exact_mut(self.cols) {
            self.row_fft.forward_with(row, &mut scratch);
        }
        let mut column = vec![Complex64::new(0.0, 0.0); self.rows];
        for c in 0..self.cols {
            for (r, v) in column.iter_mut().enumerate() {
                *v = plane[r * self.cols + c];
            }
            self.col_fft.forward_with(&mut column, &mut scratch);
            for (r, v) in column.iter().enumerate() {
                plane[r * self.cols + c] = *v;
            }
        }
        if inverse {
            let norm = 1.0 / (self.rows * self.cols) as f64;
            for z in plane.iter_mut() {
                *z = z.conj() * norm;
            }
        }
    }

    /// Unnormalized forward transform of one plane, in place.
    pub fn forward(&self, plane: &mut [Complex64]) {
        self.transform(plane, false);
    }

    /// Inverse transform of one plane with `1 / (rows * cols)`, in place.
    pub fn inverse(&self, plane: &mut [Complex64]) {
        self.transform(plane, true);
    }
}

/// Forward transform of every slice.
pub fn fft2(f: &ComplexField) -> ComplexField {
    let sh = f.shape();
    let plan = Fft2::new(sh.rows, sh.cols);
    let mut out = f.clone();
    for s in 0..sh.slices {
        plan.forward(out.slice_mut(s));
    }
    out
}

/// Inverse transform of every slice.
pub fn ifft2(f: &ComplexField) -> ComplexField {
    let sh = f.shape();
    let plan = Fft2::new(sh.rows, sh.cols);
    let mut out = f.clone();
    for s in 0..sh.slices {
        plan.inverse(out.slice_mut(s));
    }
    out
}

/// Sample frequencies in cycles per unit of `spacing`, numpy order.
pub fn fftfreq(n: usize, spacing: f64) -> Vec<f64> {
    let denom = n as f64 * spacing;
    (0..n)
        .map(|i| {
            let k = if i < n.div_ceil(2) {
                i as isize
            } else {
                i as isize - n as isize
            };
            k as f64 / denom
        })
        .collect()
}

fn roll_plane<T: Copy>(src: &[T], rows: usize, cols: usize, dr: usize, dc: usize) -> Vec<T> {
    let mut out = src.to_vec();
    for r in 0..rows {
        for c in 0..cols {
            out[((r + dr) % rows) * cols + (c + dc) % cols] = src[r * cols + c];
        }
    }
    out
}

/// Moves the zero-frequency bin to `(rows/2, cols/2)` in every slice.
pub fn fftshift<T: Copy>(f: &crate::field::Field<T>) -> crate::field::Field<T> {
    let sh = f.shape();
    let mut out = f.clone();
    for s in 0..sh.slices {
        let rolled = roll_plane(f.slice(s), sh.rows, sh.cols, sh.rows / 2, sh.cols / 2);
        out.slice_mut(s).copy_from_slice(&rolled);
    }
    out
}

/// Inverse of [`fftshift`] (differs from it for odd lengths).
pub fn ifftshift<T: Copy>(f: &crate::field::Field<T>) -> crate::field::Field<T> {
    let sh = f.shape();
    let mut out = f.clone();
    for s in 0..sh.slices {
        let rolled = roll_plane(
            f.slice(s),
            sh.rows,
            sh.cols,
            sh.rows - sh.rows / 2,
            sh.cols - sh.cols / 2,
        );
        out.slice_mut(s).copy_from_slice(&rolled);
    }
    out
}

/// Power spectrum `|fft2(f)|^2` of a real field.
pub fn power_spectrum(f: &RealField) -> RealField {
    fft2(&f.map(|v| Complex64::new(v, 0.0))).map(|z| z.norm_sqr())
}
