//! Shared differential, filtering and phase kernels. All operators use unit
//! grid spacing.

use alloc::vec;
use core::f64::consts::{PI, TAU};
use core::ops::Sub;

use num_traits::Zero;

use super::{Axis, Field, RealField};

/// `d[i] = f[i] - f[i+1]` along `axis`, with the last element replicated so
/// the final difference is zero. Along `Z` a single-slice field yields zeros.
pub fn forward_diff_reflective<T>(f: &Field<T>, axis: Axis) -> Field<T>
where
    T: Copy + Sub<Output = T> + Zero,
{
    let sh = f.shape();
    let src = f.data();
    let mut out = Field::filled(sh, T::zero());
    let dst = out.data_mut();
    match axis {
        Axis::X => {
            for line in 0..sh.slices * sh.rows {
                let base = line * sh.cols;
                for c in 0..sh.cols - 1 {
                    dst[base + c] = src[base + c] - src[base + c + 1];
                }
            }
        }
        Axis::Y => {
            let n = sh.plane_len();
            for s in 0..sh.slices {
                for r in 0..sh.rows - 1 {
                    let a = s * n + r * sh.cols;
                    for c in 0..sh.cols {
                        dst[a + c] = src[a + c] - src[a + c + sh.cols];
                    }
                }
            }
        }
        Axis::Z => {
            let n = sh.plane_len();
            for i in 0..(sh.slices.saturating_sub(1)) * n {
                dst[i] = src[i] - src[i + n];
            }
        }
    }
    out
}

/// Central differences in the interior, one-sided at the two ends of a line.
fn gradient_line(src: &[f64], stride: usize, len: usize, dst: &mut [f64]) {
    dst[0] = src[stride] - src[0];
    for i in 1..len - 1 {
        dst[i * stride] = 0.5 * (src[(i + 1) * stride] - src[(i - 1) * stride]);
    }
    dst[(len - 1) * stride] = src[(len - 1) * stride] - src[(len - 2) * stride];
}

/// Adjoint-divergence along one line: writes `-G^T p` where `G` is the
/// stencil of [`gradient_line`].
fn neg_adjoint_line(p: &[f64], stride: usize, len: usize, dst: &mut [f64]) {
    let mut acc = vec![0.0; len];
    acc[0] += p[0];
    acc[1] -= p[0];
    for i in 1..len - 1 {
        let v = 0.5 * p[i * stride];
        acc[i + 1] -= v;
        acc[i - 1] += v;
    }
    let last = p[(len - 1) * stride];
    acc[len - 1] -= last;
    acc[len - 2] += last;
    for (i, a) in acc.into_iter().enumerate() {
        dst[i * stride] += a;
    }
}

/// Central-difference gradient `(gx, gy)` of every slice.
pub fn central_gradient(f: &RealField) -> (RealField, RealField) {
    let sh = f.shape();
    let mut gx = RealField::zeros(sh);
    let mut gy = RealField::zeros(sh);
    for s in 0..sh.slices {
        let src = f.slice(s);
        let dx = gx.slice_mut(s);
        for r in 0..sh.rows {
            let o = r * sh.cols;
            gradient_line(&src[o..], 1, sh.cols, &mut dx[o..]);
        }
        let dy = gy.slice_mut(s);
        for c in 0..sh.cols {
            gradient_line(&src[c..], sh.cols, sh.rows, &mut dy[c..]);
        }
    }
    (gx, gy)
}

/// Discrete divergence, the negative adjoint of [`central_gradient`]:
/// `<grad u, p> = -<u, div p>`.
pub fn divergence(px: &RealField, py: &RealField) -> RealField {
    let sh = px.shape();
    debug_assert_eq!(sh, py.shape());
    let mut out = RealField::zeros(sh);
    for s in 0..sh.slices {
        let dst = out.slice_mut(s);
        let ax = px.slice(s);
        for r in 0..sh.rows {
            let o = r * sh.cols;
            neg_adjoint_line(&ax[o..], 1, sh.cols, &mut dst[o..]);
        }
        let ay = py.slice(s);
        for c in 0..sh.cols {
            neg_adjoint_line(&ay[c..], sh.cols, sh.rows, &mut dst[c..]);
        }
    }
    out
}

/// `div(grad u)`; negative semidefinite.
pub fn laplacian(u: &RealField) -> RealField {
    let (gx, gy) = central_gradient(u);
    divergence(&gx, &gy)
}

/// Mean over a `(2r+1)^2` window with zero padding, normalized by the full
/// window size.
pub fn box_mean(f: &RealField, r: usize) -> RealField {
    if r == 0 {
        return f.clone();
    }
    let sh = f.shape();
    let (h, w) = (sh.rows, sh.cols);
    let norm = ((2 * r + 1) * (2 * r + 1)) as f64;
    let mut out = RealField::zeros(sh);
    let mut integral = vec![0.0; (h + 1) * (w + 1)];
    for s in 0..sh.slices {
        let src = f.slice(s);
        for i in 0..h {
            let mut row = 0.0;
            for j in 0..w {
                row += src[i * w + j];
                integral[(i + 1) * (w + 1) + j + 1] = integral[i * (w + 1) + j + 1] + row;
            }
        }
        let dst = out.slice_mut(s);
        for i in 0..h {
            let r0 = i.saturating_sub(r);
            let r1 = (i + r + 1).min(h);
            for j in 0..w {
                let c0 = j.saturating_sub(r);
                let c1 = (j + r + 1).min(w);
                let total = integral[r1 * (w + 1) + c1] - integral[r0 * (w + 1) + c1]
                    - integral[r1 * (w + 1) + c0]
                    + integral[r0 * (w + 1) + c0];
                dst[i * w + j] = total / norm;
            }
        }
    }
    out
}

const GAUSS3: [[f64; 3]; 3] = [[1.0, 2.0, 1.0], [2.0, 4.0, 2.0], [1.0, 2.0, 1.0]];

/// 3x3 binomial smoothing `[[1,2,1],[2,4,2],[1,2,1]] / 16`, zero padded.
pub fn gaussian3x3(f: &RealField) -> RealField {
    let sh = f.shape();
    let (h, w) = (sh.rows as isize, sh.cols as isize);
    let mut out = RealField::zeros(sh);
    for s in 0..sh.slices {
        let src = f.slice(s);
        let dst = out.slice_mut(s);
        for i in 0..h {
            for j in 0..w {
                let mut acc = 0.0;
                for (di, krow) in GAUSS3.iter().enumerate() {
                    let y = i + di as isize - 1;
                    if y < 0 || y >= h {
                        continue;
                    }
                    for (dj, k) in krow.iter().enumerate() {
                        let x = j + dj as isize - 1;
                        if x < 0 || x >= w {
                            continue;
                        }
                        acc += k * src[(y * w + x) as usize];
                    }
                }
                dst[(i * w + j) as usize] = acc / 16.0;
            }
        }
    }
    out
}

/// Wraps an angle into `[-pi, pi)`. Values already in range are returned
/// untouched, which makes wrapping bitwise idempotent.
pub fn wrap_scalar(x: f64) -> f64 {
    if (-PI..PI).contains(&x) {
        return x;
    }
    let mut y = (x + PI) % TAU;
    if y < 0.0 {
        y += TAU;
    }
    if y >= TAU {
        y -= TAU;
    }
    let out = y - PI;
    if out >= PI {
        -PI
    } else {
        out
    }
}

pub fn wrap_phase(f: &RealField) -> RealField {
    f.map(wrap_scalar)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{ComplexField, Shape};
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_real(shape: Shape, seed: u64) -> RealField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RealField::from_fn(shape, |_, _, _| rng.random_range(-1.0..1.0))
    }

    // Scalar-loop oracle for the central-difference stencil.
    fn oracle_gradient(f: &RealField) -> (RealField, RealField) {
        let sh = f.shape();
        let at = |s, r, c| f.get(s, r, c);
        let gx = RealField::from_fn(sh, |s, r, c| {
            if c == 0 {
                at(s, r, 1) - at(s, r, 0)
            } else if c == sh.cols - 1 {
                at(s, r, c) - at(s, r, c - 1)
            } else {
                (at(s, r, c + 1) - at(s, r, c - 1)) / 2.0
            }
        });
        let gy = RealField::from_fn(sh, |s, r, c| {
            if r == 0 {
                at(s, 1, c) - at(s, 0, c)
            } else if r == sh.rows - 1 {
                at(s, r, c) - at(s, r - 1, c)
            } else {
                (at(s, r + 1, c) - at(s, r - 1, c)) / 2.0
            }
        });
        (gx, gy)
    }

    #[test]
    fn forward_diff_constant_is_zero() {
        let sh = Shape::new(3, 4, 5).unwrap();
        let f = ComplexField::filled(sh, Complex64::new(0.3, -2.0));
        for axis in [Axis::X, Axis::Y, Axis::Z] {
            let d = forward_diff_reflective(&f, axis);
            assert!(d.data().iter().all(|z| z.norm() == 0.0));
        }
    }

    #[test]
    fn forward_diff_single_slice_z_is_zero() {
        let sh = Shape::new(1, 4, 4).unwrap();
        let f = random_real(sh, 1);
        let d = forward_diff_reflective(&f, Axis::Z);
        assert!(d.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_diff_ramp() {
        let sh = Shape::new(1, 3, 6).unwrap();
        let step = 0.7;
        let f = RealField::from_fn(sh, |_, _, c| step * c as f64);
        let d = forward_diff_reflective(&f, Axis::X);
        for r in 0..3 {
            for c in 0..6 {
                // oracle: f[c] - f[c+1] with the last sample replicated
                let next = if c + 1 < 6 { step * (c + 1) as f64 } else { step * c as f64 };
                let expected = step * c as f64 - next;
                assert!((d.get(0, r, c) - expected).abs() < 1e-15);
            }
            assert_eq!(d.get(0, r, 5), 0.0);
        }
    }

    #[test]
    fn forward_diff_telescopes() {
        let sh = Shape::new(2, 5, 7).unwrap();
        let f = random_real(sh, 9);
        let dx = forward_diff_reflective(&f, Axis::X);
        let dy = forward_diff_reflective(&f, Axis::Y);
        for s in 0..2 {
            for r in 0..5 {
                let total: f64 = (0..7).map(|c| dx.get(s, r, c)).sum();
                assert!((total - (f.get(s, r, 0) - f.get(s, r, 6))).abs() < 1e-12);
            }
            for c in 0..7 {
                let total: f64 = (0..5).map(|r| dy.get(s, r, c)).sum();
                assert!((total - (f.get(s, 0, c) - f.get(s, 4, c))).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn central_gradient_linear_and_constant() {
        let sh = Shape::new(1, 5, 6).unwrap();
        let (gx, gy) = central_gradient(&RealField::filled(sh, 2.5));
        assert!(gx.data().iter().chain(gy.data()).all(|&v| v == 0.0));
        let (gx, gy) = central_gradient(&RealField::from_fn(sh, |_, _, c| c as f64));
        assert!(gx.data().iter().all(|&v| (v - 1.0).abs() < 1e-15));
        assert!(gy.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn central_gradient_matches_oracle() {
        let sh = Shape::new(2, 5, 5).unwrap();
        let f = random_real(sh, 4);
        let (gx, gy) = central_gradient(&f);
        let (ox, oy) = oracle_gradient(&f);
        for i in 0..sh.len() {
            assert!((gx.data()[i] - ox.data()[i]).abs() < 1e-15);
            assert!((gy.data()[i] - oy.data()[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn divergence_of_zero_and_constants() {
        let sh = Shape::new(1, 6, 6).unwrap();
        let z = RealField::zeros(sh);
        assert!(divergence(&z, &z).data().iter().all(|&v| v == 0.0));
        let c = RealField::filled(sh, 1.7);
        let d = divergence(&c, &c);
        for r in 2..4 {
            for col in 2..4 {
                assert!(d.get(0, r, col).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn divergence_is_negative_adjoint() {
        for (h, w, seed) in [(2, 2, 1), (6, 6, 2), (3, 7, 3), (16, 16, 4), (16, 9, 5)] {
            let sh = Shape::new(1, h, w).unwrap();
            let u = random_real(sh, seed);
            let px = random_real(sh, seed + 100);
            let py = random_real(sh, seed + 200);
            let (gx, gy) = central_gradient(&u);
            // brute-force inner products
            let mut lhs = 0.0;
            for i in 0..sh.len() {
                lhs += gx.data()[i] * px.data()[i] + gy.data()[i] * py.data()[i];
            }
            let div = divergence(&px, &py);
            let mut rhs = 0.0;
            for i in 0..sh.len() {
                rhs += u.data()[i] * div.data()[i];
            }
            let norm_u = u.dot(&u).sqrt();
            let norm_p = (px.dot(&px) + py.dot(&py)).sqrt();
            assert!((lhs + rhs).abs() / (norm_u * norm_p) < 1e-10, "{h}x{w}");
        }
    }

    #[test]
    fn box_mean_identity_constant_and_oracle() {
        let sh = Shape::new(1, 5, 5).unwrap();
        let f = random_real(sh, 11);
        assert_eq!(box_mean(&f, 0), f);
        let c = box_mean(&RealField::filled(sh, 3.0), 1);
        assert!((c.get(0, 2, 2) - 3.0).abs() < 1e-14);
        let b = box_mean(&f, 1);
        for r in 0..5isize {
            for col in 0..5isize {
                let mut acc = 0.0;
                for dr in -1..=1 {
                    for dc in -1..=1 {
                        let (y, x) = (r + dr, col + dc);
                        if (0..5).contains(&y) && (0..5).contains(&x) {
                            acc += f.get(0, y as usize, x as usize);
                        }
                    }
                }
                assert!((b.get(0, r as usize, col as usize) - acc / 9.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn gaussian_center_weight_and_oracle() {
        let sh = Shape::new(1, 5, 5).unwrap();
        let mut delta = RealField::zeros(sh);
        delta.set(0, 2, 2, 1.0);
        assert_eq!(gaussian3x3(&delta).get(0, 2, 2), 0.25);
        let c = gaussian3x3(&RealField::filled(sh, 2.0));
        assert!((c.get(0, 2, 2) - 2.0).abs() < 1e-15);
        let f = random_real(Shape::new(2, 6, 7).unwrap(), 12);
        let g = gaussian3x3(&f);
        let k = [[1.0, 2.0, 1.0], [2.0, 4.0, 2.0], [1.0, 2.0, 1.0]];
        for s in 0..2 {
            for r in 0..6isize {
                for c in 0..7isize {
                    let mut acc = 0.0;
                    for dr in -1..=1isize {
                        for dc in -1..=1isize {
                            let (y, x) = (r + dr, c + dc);
                            if (0..6).contains(&y) && (0..7).contains(&x) {
                                acc += k[(dr + 1) as usize][(dc + 1) as usize]
                                    * f.get(s, y as usize, x as usize);
                            }
                        }
                    }
                    assert!((g.get(s, r as usize, c as usize) - acc / 16.0).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn wrap_examples() {
        assert_eq!(wrap_scalar(0.0), 0.0);
        assert_eq!(wrap_scalar(PI), -PI);
        // oracle: 3pi/2 + pi = 5pi/2 -> mod 2pi = pi/2 -> minus pi
        assert!((wrap_scalar(1.5 * PI) - (-0.5 * PI)).abs() < 1e-15);
        assert!((wrap_scalar(-7.0) - (-7.0 + TAU)).abs() < 1e-12);
    }

    #[test]
    fn wrap_is_idempotent_and_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let x: f64 = rng.random_range(-50.0..50.0);
            let w = wrap_scalar(x);
            assert!((-PI..PI).contains(&w));
            assert_eq!(wrap_scalar(w).to_bits(), w.to_bits());
        }
        for x in [PI, -PI, TAU, -TAU, 3.0 * PI, 1e-300, -1e-300, 100.0 * PI] {
            let w = wrap_scalar(x);
            assert!((-PI..PI).contains(&w), "{x}");
            assert_eq!(wrap_scalar(w).to_bits(), w.to_bits());
        }
    }
}
