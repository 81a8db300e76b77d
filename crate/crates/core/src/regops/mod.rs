//! Regularization operators and the per-reconstruction state they thread.
//!
//! Operators fall into three families: gradient producers and an optimizer
//! for multislice objects ([`multislice`]), amplitude/phase denoising loops
//! with notch filtering ([`ic`]), and a polar signal-processing chain
//! ([`apoferritin`]). Gradient producers return the gradient of a real
//! energy with respect to the real and imaginary parts, packed as a complex
//! field.

pub mod apoferritin;
pub mod ic;
pub mod multislice;

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::field::{ComplexField, RealField, Shape};

pub use apoferritin::{
    guided_filter_cascade, itoh_unwrap_2d, l2_anchor_blend, perona_malik_diffuse,
    soft_huber_shrink, ShrinkParams,
};
pub use ic::{
    aniso_huber_amp_loop, apply_notch, build_notch_mask, complex_tv_steps,
    phase_weighted_tv_loop, softplus_amplitude, structure_tensor_orientation, AmpLoopParams,
    AmpLoopReport, PhaseLoopParams,
};
pub use multislice::{
    adam_learning_rate, charbonnier_tv3d_energy, charbonnier_tv3d_grad, complex_adam_step,
    contrast_tv_weight, gradient_exclusion_energy, gradient_exclusion_grad,
    gram_orthogonality_energy, gram_orthogonality_grad, robust_clamp, slice_l2_renorm,
    spectral_mask_energy, spectral_mask_grad, AdamParams, ContrastWeight, SpectralParams,
};

/// Key for cached Butterworth masks: `(rows, cols, f_cut bits, order)`.
pub type MaskKey = (usize, usize, u64, u32);

/// Mutable state owned by one reconstruction job.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RegState {
    /// Regularizer invocations so far.
    pub iter_count: u64,
    pub adam_m: Option<ComplexField>,
    pub adam_v: Option<RealField>,
    pub adam_t: u64,
    /// `(low, high)` Butterworth masks.
    pub freq_cache: BTreeMap<MaskKey, (RealField, RealField)>,
    pub notch_mask: Option<RealField>,
    /// Row-major `k x S` projection.
    pub rand_proj: Option<(usize, usize, Vec<f64>)>,
    pub support_mask: Option<RealField>,
    /// Seed for lazily sampled state (projection matrix).
    pub seed: u64,
    /// Global amplitude variance recorded by the shrinkage step for the
    /// guided filter of the same invocation.
    pub glob_var: Option<f64>,
    shape: Option<Shape>,
}

impl RegState {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn with_support(mut self, mask: RealField) -> Self {
        self.support_mask = Some(mask);
        self
    }

    /// Drops shape-dependent caches and moments when the object shape
    /// changes.
    pub fn ensure_shape(&mut self, shape: Shape) {
        if self.shape != Some(shape) {
            self.adam_m = None;
            self.adam_v = None;
            self.adam_t = 0;
            self.notch_mask = None;
            self.rand_proj = None;
            self.freq_cache.clear();
            self.shape = Some(shape);
        }
    }

    pub fn shape(&self) -> Option<Shape> {
        self.shape
    }
}
