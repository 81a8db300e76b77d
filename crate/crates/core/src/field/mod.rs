//! Slice-major, row-major field containers.
//!
//! A field is a stack of `slices` planes of `rows x cols` samples. Complex
//! fields hold transmission functions; real fields hold amplitudes, phases,
//! weights and masks.

mod kernels;

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;
#[allow(unused_imports)] // inherent when std is linked (e.g. by dev-dependencies)
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use kernels::{
    box_mean, central_gradient, divergence, forward_diff_reflective, gaussian3x3, laplacian,
    wrap_phase, wrap_scalar,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub slices: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Shape {
    /// Validated constructor: at least one slice and at least 2x2 planes.
    pub fn new(slices: usize, rows: usize, cols: usize) -> Result<Self> {
        let invalid = |reason| Error::InvalidShape {
            slices,
            rows,
            cols,
            reason,
        };
        if slices == 0 {
            return Err(invalid("at least one slice is required"));
        }
        if rows < 2 || cols < 2 {
            return Err(invalid("planes must be at least 2x2"));
        }
        Ok(Self { slices, rows, cols })
    }

    pub fn plane_len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn len(&self) -> usize {
        self.slices * self.plane_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, s: usize, r: usize, c: usize) -> usize {
        (s * self.rows + r) * self.cols + c
    }

    pub fn with_slices(&self, slices: usize) -> Self {
        Self { slices, ..*self }
    }
}

/// Axis selector for difference operators. `X` runs along columns, `Y`
/// along rows and `Z` across slices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Field<T> {
    shape: Shape,
    data: Vec<T>,
}

pub type ComplexField = Field<Complex64>;
pub type RealField = Field<f64>;

impl<T: Copy> Field<T> {
    pub fn filled(shape: Shape, value: T) -> Self {
        Self {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::BufferLength {
                expected: shape.len(),
                actual: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    /// Builds a field by evaluating `f(slice, row, col)` at every sample.
    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for s in 0..shape.slices {
            for r in 0..shape.rows {
                for c in 0..shape.cols {
                    data.push(f(s, r, c));
                }
            }
        }
        Self { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, s: usize, r: usize, c: usize) -> T {
        self.data[self.shape.index(s, r, c)]
    }

    pub fn set(&mut self, s: usize, r: usize, c: usize, value: T) {
        let i = self.shape.index(s, r, c);
        self.data[i] = value;
    }

    pub fn slice(&self, s: usize) -> &[T] {
        let n = self.shape.plane_len();
        &self.data[s * n..(s + 1) * n]
    }

    pub fn slice_mut(&mut self, s: usize) -> &mut [T] {
        let n = self.shape.plane_len();
        &mut self.data[s * n..(s + 1) * n]
    }

    /// Copies one slice out as a single-slice field.
    pub fn plane(&self, s: usize) -> Self {
        Self {
            shape: self.shape.with_slices(1),
            data: self.slice(s).to_vec(),
        }
    }

    /// Stacks equally shaped single- or multi-slice fields along the slice axis.
    pub fn stack(parts: &[Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("cannot stack zero fields".into()))?;
        let mut data = Vec::new();
        let mut slices = 0;
        for p in parts {
            if p.shape.rows != first.shape.rows || p.shape.cols != first.shape.cols {
                return Err(Error::ShapeMismatch {
                    expected: first.shape,
                    actual: p.shape,
                });
            }
            slices += p.shape.slices;
            data.extend_from_slice(&p.data);
        }
        Ok(Self {
            shape: first.shape.with_slices(slices),
            data,
        })
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Field<U> {
        Field {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map<U: Copy, V: Copy>(
        &self,
        other: &Field<U>,
        f: impl Fn(T, U) -> V,
    ) -> Result<Field<V>> {
        self.ensure_same_shape(other.shape)?;
        Ok(Field {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn ensure_same_shape(&self, other: Shape) -> Result<()> {
        if self.shape != other {
            return Err(Error::ShapeMismatch {
                expected: self.shape,
                actual: other,
            });
        }
        Ok(())
    }
}

impl RealField {
    pub fn zeros(shape: Shape) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    /// Population variance over every sample.
    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.data.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / self.data.len() as f64
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl ComplexField {
    pub fn zeros(shape: Shape) -> Self {
        Self::filled(shape, Complex64::new(0.0, 0.0))
    }

    pub fn ones(shape: Shape) -> Self {
        Self::filled(shape, Complex64::new(1.0, 0.0))
    }

    pub fn from_polar(amplitude: &RealField, phase: &RealField) -> Result<Self> {
        amplitude.zip_map(phase, Complex64::from_polar)
    }

    pub fn amplitude(&self) -> RealField {
        self.map(|z| z.norm())
    }

    pub fn phase(&self) -> RealField {
        self.map(|z| z.arg())
    }

    pub fn real(&self) -> RealField {
        self.map(|z| z.re)
    }

    pub fn imag(&self) -> RealField {
        self.map(|z| z.im)
    }

    /// Sum of squared magnitudes.
    pub fn energy(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Per-slice L2 norms.
    pub fn slice_norms(&self) -> Vec<f64> {
        (0..self.shape.slices)
            .map(|s| self.slice(s).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt())
            .collect()
    }

    /// Real inner product `Re <a, b>`, the pairing under which complex
    /// gradients of real energies are expressed.
    pub fn real_dot(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.re * b.re + a.im * b.im)
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Replaces NaN and infinite components by zero.
    pub fn nan_to_zero(&mut self) {
        for z in &mut self.data {
            if !z.re.is_finite() {
                z.re = 0.0;
            }
            if !z.im.is_finite() {
                z.im = 0.0;
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        for z in &mut self.data {
            *z *= k;
        }
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.ensure_same_shape(other.shape)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
        Ok(())
    }
}
