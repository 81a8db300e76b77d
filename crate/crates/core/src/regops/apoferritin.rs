//! Polar signal-processing chain: amplitude shrinkage and guided filtering,
//! phase unwrapping and edge-preserving diffusion, and an L2 anchor.

use alloc::vec::Vec;

use num_complex::Complex64;
#[allow(unused_imports)] // inherent when std is linked (e.g. by dev-dependencies)
use num_traits::Float;

use crate::error::Result;
use crate::field::{box_mean, gaussian3x3, wrap_scalar, ComplexField, RealField};

const EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShrinkParams {
    pub k_min: f64,
    pub k_max: f64,
    pub var_center: f64,
    pub var_gain: f64,
}

impl Default for ShrinkParams {
    fn default() -> Self {
        Self {
            k_min: 0.07,
            k_max: 0.2,
            var_center: 0.02,
            var_gain: 25.0,
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Threshold of the soft-Huber shrinkage for a given global variance.
pub fn shrink_threshold(glob_var: f64, p: &ShrinkParams) -> f64 {
    p.k_min + (p.k_max - p.k_min) * sigmoid((glob_var - p.var_center) * p.var_gain)
}

/// Pulls amplitudes toward 1: `1 + d * k / (|d| + k + eps)` with `d = amp - 1`.
/// Returns the shrunk amplitude and the population variance of the input,
/// which gates the threshold `k`.
pub fn soft_huber_shrink(amp: &RealField, p: &ShrinkParams) -> (RealField, f64) {
    let glob_var = amp.variance();
    let k = shrink_threshold(glob_var, p);
    let out = amp.map(|a| {
        let d = a - 1.0;
        1.0 + d * (k / (d.abs() + k + EPS))
    });
    (out, glob_var)
}

/// Two variance-weighted blends with box means at `radius1` then `radius2`,
/// followed by a 3x3 Gaussian pass when `glob_var` exceeds the threshold.
/// Box means are zero padded, so pixels within `r` of the border see a
/// darkened mean.
pub fn guided_filter_cascade(
    amp: &RealField,
    radius1: usize,
    radius2: usize,
    glob_var: f64,
    gauss_var_threshold: f64,
) -> RealField {
    let mut a = amp.clone();
    for r in [radius1, radius2] {
        let mean = box_mean(&a, r);
        let dev = a.zip_map(&mean, |x, m| (x - m) * (x - m)).expect("same shape");
        let var = box_mean(&dev, r);
        let mut next = a.clone();
        for ((o, m), v) in next.data_mut().iter_mut().zip(mean.data()).zip(var.data()) {
            let w = 1.0 / (v + EPS);
            *o = (m + w * *o) / (1.0 + w);
        }
        a = next;
    }
    if glob_var > gauss_var_threshold {
        a = gaussian3x3(&a);
    }
    a
}

/// Rewraps a difference into `(-pi, pi]`.
fn rewrap_diff(d: f64) -> f64 {
    -wrap_scalar(-d)
}

/// Row-then-column Itoh unwrapping per slice, followed by removal of each
/// slice's mean. Rows are integrated from column 0 using rewrapped
/// neighbor differences; columns are then integrated from row 0 the same way.
pub fn itoh_unwrap_2d(phi: &RealField) -> RealField {
    let sh = phi.shape();
    let (h, w) = (sh.rows, sh.cols);
    let mut out = phi.clone();
    for s in 0..sh.slices {
        let src: Vec<f64> = phi.slice(s).to_vec();
        let u = out.slice_mut(s);
        for r in 0..h {
            for c in 1..w {
                let d = rewrap_diff(src[r * w + c] - src[r * w + c - 1]);
                u[r * w + c] = u[r * w + c - 1] + d;
            }
        }
        let rows_done: Vec<f64> = u.to_vec();
        for r in 1..h {
            for c in 0..w {
                let d = rewrap_diff(rows_done[r * w + c] - rows_done[(r - 1) * w + c]);
                u[r * w + c] = u[(r - 1) * w + c] + d;
            }
        }
        let mean = u.iter().sum::<f64>() / u.len() as f64;
        for v in u.iter_mut() {
            *v -= mean;
        }
    }
    out
}

/// Explicit Perona-Malik diffusion `u <- u + step * div(c grad u)` with
/// `c = 1 / (1 + |grad u|^2 / lam^2 + 1e-6)`, on a periodic grid with
/// forward-difference gradient and its negative adjoint as divergence.
/// Each slice's sum is conserved up to rounding.
pub fn perona_malik_diffuse(phi: &RealField, lam_pm: f64, step: f64, iters: usize) -> RealField {
    let sh = phi.shape();
    let (h, w) = (sh.rows, sh.cols);
    let mut u = phi.clone();
    let n = h * w;
    let mut px = alloc::vec![0.0; n];
    let mut py = alloc::vec![0.0; n];
    for _ in 0..iters {
        for s in 0..sh.slices {
            let p = u.slice_mut(s);
            for r in 0..h {
                for c in 0..w {
                    let i = r * w + c;
                    let gx = p[r * w + (c + 1) % w] - p[i];
                    let gy = p[((r + 1) % h) * w + c] - p[i];
                    let cond = 1.0 / (1.0 + (gx * gx + gy * gy) / (lam_pm * lam_pm) + EPS);
                    px[i] = cond * gx;
                    py[i] = cond * gy;
                }
            }
            for r in 0..h {
                for c in 0..w {
                    let i = r * w + c;
                    let div = px[i] - px[r * w + (c + w - 1) % w] + py[i]
                        - py[((r + h - 1) % h) * w + c];
                    p[i] += step * div;
                }
            }
        }
    }
    u
}

/// `alpha * z_orig + (1 - alpha) * z_reg`, evaluated as
/// `z_reg + alpha * (z_orig - z_reg)` so equal inputs pass through exactly.
/// The endpoints return a copy of the selected input.
pub fn l2_anchor_blend(z_reg: &ComplexField, z_orig: &ComplexField, alpha: f64) -> Result<ComplexField> {
    z_reg.ensure_same_shape(z_orig.shape())?;
    if alpha == 1.0 {
        return Ok(z_orig.clone());
    }
    if alpha == 0.0 {
        return Ok(z_reg.clone());
    }
    z_reg.zip_map(z_orig, |r, o: Complex64| r + (o - r) * alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Shape;
    use core::f64::consts::PI;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(shape: Shape, seed: u64, scale: f64) -> RealField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RealField::from_fn(shape, |_, _, _| scale * rng.random_range(-0.5..0.5))
    }

    #[test]
    fn shrink_examples() {
        let p = ShrinkParams::default();
        assert!((shrink_threshold(0.02, &p) - 0.135).abs() < 1e-15);
        let sh = Shape::new(1, 4, 4).unwrap();
        let (out, v) = soft_huber_shrink(&RealField::filled(sh, 1.0), &p);
        assert_eq!(v, 0.0);
        assert!(out.data().iter().all(|&x| x == 1.0));
        let big = RealField::from_fn(Shape::new(1, 2, 2).unwrap(), |_, _, c| if c == 0 { 1e9 } else { -1e9 });
        let (out, v) = soft_huber_shrink(&big, &p);
        let k = shrink_threshold(v, &p);
        assert!((out.data()[0] - (1.0 + k)).abs() < 1e-6);
        assert!((out.data()[1] - (1.0 - k)).abs() < 1e-6);
    }

    #[test]
    fn guided_constant_interior_and_gate() {
        let sh = Shape::new(1, 12, 12).unwrap();
        let c = RealField::filled(sh, 0.7);
        let out = guided_filter_cascade(&c, 1, 2, 0.0, 0.1);
        for r in 3..9 {
            for col in 3..9 {
                assert!((out.get(0, r, col) - 0.7).abs() < 1e-12);
            }
        }
        let x = noise(sh, 3, 0.4);
        let two = guided_filter_cascade(&x, 1, 2, 0.05, 0.1);
        let again = guided_filter_cascade(&x, 1, 2, 0.05, 0.1);
        assert_eq!(two, again);
        let three = guided_filter_cascade(&x, 1, 2, 0.5, 0.1);
        assert_eq!(three, gaussian3x3(&two));
    }

    #[test]
    fn guided_flattens_noisy_region_more_than_clean_edge() {
        // top half: strong noise around 1; bottom half: clean step 1 -> 2
        let sh = Shape::new(1, 32, 32).unwrap();
        let n = noise(sh, 9, 2.0);
        let img = RealField::from_fn(sh, |_, r, c| {
            if r < 16 {
                1.0 + n.get(0, r, c)
            } else if c < 16 {
                1.0
            } else {
                2.0
            }
        });
        let out = guided_filter_cascade(&img, 1, 2, 0.0, 0.1);
        let region = |f: &RealField| -> Vec<f64> {
            let mut v = Vec::new();
            for r in 3..12 {
                for c in 3..29 {
                    v.push(f.get(0, r, c));
                }
            }
            v
        };
        let var = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64
        };
        let (vin, vout) = (region(&img), region(&out));
        assert!(var(&vout) < 0.5 * var(&vin));
        let flat_shift = vin.iter().zip(&vout).map(|(a, b)| (a - b).abs()).sum::<f64>() / vin.len() as f64;
        let edge_shift = (out.get(0, 24, 16) - img.get(0, 24, 16)).abs();
        assert!(edge_shift < flat_shift, "{edge_shift} vs {flat_shift}");
    }

    #[test]
    fn itoh_recovers_wrapped_ramp() {
        let sh = Shape::new(2, 16, 24).unwrap();
        let truth = RealField::from_fn(sh, |s, r, c| 0.9 * c as f64 + 0.6 * r as f64 - 0.3 * s as f64);
        let wrapped = truth.map(wrap_scalar);
        let un = itoh_unwrap_2d(&wrapped);
        for s in 0..2 {
            let t = truth.slice(s);
            let m = t.iter().sum::<f64>() / t.len() as f64;
            for (a, b) in un.slice(s).iter().zip(t) {
                assert!((a - (b - m)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn itoh_smooth_input_is_mean_removed() {
        let sh = Shape::new(1, 8, 8).unwrap();
        let phi = RealField::from_fn(sh, |_, r, c| 0.3 * ((r * c) as f64 * 0.1).sin());
        let un = itoh_unwrap_2d(&phi);
        let m = phi.mean();
        for (a, b) in un.data().iter().zip(phi.data()) {
            assert!((a - (b - m)).abs() < 1e-12);
        }
    }

    #[test]
    fn itoh_row_differences_match_rewrapped_input() {
        let sh = Shape::new(1, 6, 10).unwrap();
        let phi = noise(sh, 4, 2.0 * PI);
        let un = itoh_unwrap_2d(&phi);
        for c in 1..10 {
            let d_out = un.get(0, 0, c) - un.get(0, 0, c - 1);
            let d_in = rewrap_diff(phi.get(0, 0, c) - phi.get(0, 0, c - 1));
            assert!((d_out - d_in).abs() < 1e-9);
        }
    }

    #[test]
    fn perona_malik_conserves_mean_and_smooths() {
        let sh = Shape::new(2, 16, 16).unwrap();
        let x = noise(sh, 5, 0.2);
        let y = perona_malik_diffuse(&x, 0.1, 0.1, 5);
        for s in 0..2 {
            let a: f64 = x.slice(s).iter().sum();
            let b: f64 = y.slice(s).iter().sum();
            assert!((a - b).abs() / 256.0 < 1e-12);
        }
        assert!(y.variance() < x.variance());
        let c = RealField::filled(sh, 0.4);
        assert_eq!(perona_malik_diffuse(&c, 0.1, 0.1, 5), c);
    }

    #[test]
    fn anchor_examples() {
        let sh = Shape::new(1, 2, 2).unwrap();
        let z0 = ComplexField::zeros(sh);
        let z1 = ComplexField::ones(sh);
        let out = l2_anchor_blend(&z1, &z0, 0.1).unwrap();
        assert!((out.data()[0].re - 0.9).abs() < 1e-15);
        assert_eq!(l2_anchor_blend(&z1, &z0, 1.0).unwrap(), z0);
        assert_eq!(l2_anchor_blend(&z1, &z1, 0.3).unwrap(), z1);
    }
}
