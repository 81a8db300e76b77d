//! Amplitude and phase denoising loops, complex TV and notch filtering.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;
#[allow(unused_imports)] // inherent when std is linked (e.g. by dev-dependencies)
use num_traits::Float;

use crate::error::{Error, Result};
use crate::fft::{fft2, fftshift, ifft2, ifftshift};
use crate::field::{
    central_gradient, divergence, gaussian3x3, laplacian, wrap_scalar, ComplexField, RealField,
};

const EPS: f64 = 1e-12;

/// Unit edge-orientation field `(cos t, sin t)` with
/// `t = atan2(2 J12, J11 - J22) / 2` from the smoothed structure tensor.
pub fn structure_tensor_orientation(a: &RealField) -> (RealField, RealField) {
    let (gx, gy) = central_gradient(a);
    let j11 = gaussian3x3(&gx.zip_map(&gx, |p, q| p * q).expect("same shape"));
    let j22 = gaussian3x3(&gy.zip_map(&gy, |p, q| p * q).expect("same shape"));
    let j12 = gaussian3x3(&gx.zip_map(&gy, |p, q| p * q).expect("same shape"));
    let theta: Vec<f64> = j11
        .data()
        .iter()
        .zip(j22.data())
        .zip(j12.data())
        .map(|((a, b), c)| 0.5 * (2.0 * c).atan2(a - b + EPS))
        .collect();
    let sh = a.shape();
    let vx = RealField::from_vec(sh, theta.iter().map(|t| t.cos()).collect()).expect("len");
    let vy = RealField::from_vec(sh, theta.iter().map(|t| t.sin()).collect()).expect("len");
    (vx, vy)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmpLoopParams {
    pub lam_tv: f64,
    pub lam_tgv2: f64,
    pub anisotropy: f64,
    pub tau0: f64,
    pub huber_eps0: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub orient_every: usize,
}

impl Default for AmpLoopParams {
    fn default() -> Self {
        Self {
            lam_tv: 3e-3,
            lam_tgv2: 1e-3,
            anisotropy: 4.0,
            tau0: 0.24,
            huber_eps0: 1e-3,
            tol: 5e-4,
            max_iter: 25,
            orient_every: 5,
        }
    }
}

/// One Barzilai-Borwein trial: energies before and after the candidate step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BbTrial {
    pub iteration: usize,
    pub tau_bb: f64,
    pub energy_old: f64,
    pub energy_new: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmpLoopReport {
    pub amp: RealField,
    pub iterations: usize,
    pub trials: Vec<BbTrial>,
}

fn mean_abs(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum::<f64>() / v.len() as f64
}

/// `lam_tv * mean|grad a| + lam_tgv2 * mean|lap a|`.
pub fn amp_energy(a: &RealField, lam_tv: f64, lam_tgv2: f64) -> f64 {
    let (gx, gy) = central_gradient(a);
    let tv = gx
        .data()
        .iter()
        .zip(gy.data())
        .map(|(x, y)| (x * x + y * y + EPS).sqrt())
        .sum::<f64>()
        / gx.data().len() as f64;
    lam_tv * tv + lam_tgv2 * mean_abs(laplacian(a).data())
}

/// Structure-tensor-guided anisotropic Huber-TV on the amplitude.
///
/// Each iteration steps along `lam_tv * div(p) - lam_tgv2 * lap(a)`, where
/// `p` penalizes gradient components across the local edge direction
/// `anisotropy` times more than along it. The step size for the next
/// iteration becomes the Barzilai-Borwein estimate only when a trial step
/// with it lowers the energy. The output is clamped at zero.
pub fn aniso_huber_amp_loop(
    amp: &RealField,
    support: Option<&RealField>,
    p: &AmpLoopParams,
) -> Result<AmpLoopReport> {
    if let Some(m) = support {
        amp.ensure_same_shape(m.shape())?;
    }
    let mut a = amp.clone();
    let mut tau = p.tau0;
    let mut huber = p.huber_eps0;
    let mut prev: Option<(RealField, RealField)> = None;
    let (mut vx, mut vy) = structure_tensor_orientation(&a);
    let mut trials = Vec::new();
    let mut iterations = 0;
    for it in 0..p.max_iter {
        iterations = it + 1;
        if p.orient_every > 0 && it % p.orient_every == 0 {
            (vx, vy) = structure_tensor_orientation(&a);
        }
        let (gx, gy) = central_gradient(&a);
        let n = gx.data().len();
        let mut px = vec![0.0; n];
        let mut py = vec![0.0; n];
        for i in 0..n {
            let (x, y) = (gx.data()[i], gy.data()[i]);
            let (cx, cy) = (vx.data()[i], vy.data()[i]);
            let g_norm = (x * x + y * y + EPS).sqrt();
            let par = cx * x + cy * y;
            let perp = -cy * x + cx * y;
            let alpha = perp.abs() / (par.abs() + perp.abs() + EPS);
            let coeff = 1.0 + (p.anisotropy - 1.0) * alpha;
            let den = coeff * g_norm + huber;
            px[i] = x / den;
            py[i] = y / den;
        }
        let sh = a.shape();
        let div = divergence(
            &RealField::from_vec(sh, px).expect("len"),
            &RealField::from_vec(sh, py).expect("len"),
        );
        let lap = laplacian(&a);
        let upd = div.zip_map(&lap, |d, l| p.lam_tv * d - p.lam_tgv2 * l)?;
        let amp_new = a.zip_map(&upd, |x, u| x + tau * u)?;

        if let Some((amp_prev, upd_prev)) = &prev {
            let s = amp_new.zip_map(amp_prev, |x, y| x - y)?;
            let y = upd.zip_map(upd_prev, |x, y| x - y)?;
            let sy = s.dot(&y);
            let yy = y.dot(&y) + EPS;
            let tau_bb = (sy / yy).clamp(1e-4, 0.25);
            let energy_old = amp_energy(&a, p.lam_tv, p.lam_tgv2);
            let trial = a.zip_map(&upd, |x, u| x + tau_bb * u)?;
            let energy_new = amp_energy(&trial, p.lam_tv, p.lam_tgv2);
            let accepted = energy_new < energy_old;
            if accepted {
                tau = tau_bb;
            }
            trials.push(BbTrial {
                iteration: it,
                tau_bb,
                energy_old,
                energy_new,
                accepted,
            });
        }

        let mean_upd = mean_abs(upd.data());
        prev = Some((core::mem::replace(&mut a, amp_new), upd));
        if let Some(m) = support {
            a = a.zip_map(m, |x, s| x * s)?;
        }
        if (it + 1) % 4 == 0 {
            huber *= 0.9;
        }
        if !a.is_finite() {
            return Err(Error::NonFinite("anisotropic amplitude loop".into()));
        }
        let rel = mean_upd / (mean_abs(a.data()) + EPS);
        if rel < p.tol {
            break;
        }
    }
    Ok(AmpLoopReport {
        amp: a.map(|v| v.max(0.0)),
        iterations,
        trials,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseLoopParams {
    pub lam_phi: f64,
    pub max_iter: usize,
    pub tau: f64,
    pub huber_eps0: f64,
    pub tol: f64,
}

impl Default for PhaseLoopParams {
    fn default() -> Self {
        Self {
            lam_phi: 8e-4,
            max_iter: 15,
            tau: 0.24,
            huber_eps0: 1e-3,
            tol: 5e-4,
        }
    }
}

/// Amplitude-weighted Huber-TV flow on the phase, wrapped to `[-pi, pi)`
/// after every iteration. The weight `lam_phi / (amp + 1e-6)` smooths weak
/// (low-amplitude) regions hardest. Stops early when the mean change
/// between iterates falls below `tol` relative to the mean phase magnitude.
pub fn phase_weighted_tv_loop(phi: &RealField, amp: &RealField, p: &PhaseLoopParams) -> Result<RealField> {
    phi.ensure_same_shape(amp.shape())?;
    let w: Vec<f64> = amp.data().iter().map(|a| p.lam_phi / (a + 1e-6)).collect();
    let mut ph = phi.clone();
    let mut huber = p.huber_eps0;
    let sh = phi.shape();
    for it in 0..p.max_iter {
        let (gx, gy) = central_gradient(&ph);
        let n = gx.data().len();
        let mut qx = vec![0.0; n];
        let mut qy = vec![0.0; n];
        for i in 0..n {
            let (x, y) = (gx.data()[i], gy.data()[i]);
            let norm = (x * x + y * y + EPS).sqrt();
            qx[i] = w[i] * x / (norm + huber);
            qy[i] = w[i] * y / (norm + huber);
        }
        let div = divergence(
            &RealField::from_vec(sh, qx).expect("len"),
            &RealField::from_vec(sh, qy).expect("len"),
        );
        let mut change = 0.0;
        let mut mag = 0.0;
        for (v, d) in ph.data_mut().iter_mut().zip(div.data()) {
            let step = p.tau * d;
            change += step.abs();
            *v = wrap_scalar(*v + step);
            mag += v.abs();
        }
        if !ph.is_finite() {
            return Err(Error::NonFinite("phase TV loop".into()));
        }
        if (it + 1) % 4 == 0 {
            huber *= 0.9;
        }
        if change / (mag + EPS * n as f64) < p.tol {
            break;
        }
    }
    Ok(ph)
}

fn tv_channel(u: &RealField, lam: f64, tau: f64) -> RealField {
    let (gx, gy) = central_gradient(u);
    let norm: Vec<f64> = gx
        .data()
        .iter()
        .zip(gy.data())
        .map(|(x, y)| (x * x + y * y + EPS).sqrt() + EPS)
        .collect();
    let sh = u.shape();
    let px = RealField::from_vec(sh, gx.data().iter().zip(&norm).map(|(x, n)| x / n).collect())
        .expect("len");
    let py = RealField::from_vec(sh, gy.data().iter().zip(&norm).map(|(y, n)| y / n).collect())
        .expect("len");
    let div = divergence(&px, &py);
    u.zip_map(&div, |v, d| v + tau * lam * d).expect("same shape")
}

/// Channel-wise TV flow on the real and imaginary parts.
pub fn complex_tv_steps(z: &ComplexField, lam_cplx: f64, iters: usize, tau: f64) -> ComplexField {
    let mut re = z.real();
    let mut im = z.imag();
    for _ in 0..iters {
        re = tv_channel(&re, lam_cplx, tau);
        im = tv_channel(&im, lam_cplx, tau);
    }
    re.zip_map(&im, Complex64::new).expect("same shape")
}

/// Multiplicative notch-rejection mask in shifted spectral coordinates.
///
/// The power spectrum of `a` (a single plane) is shifted, its 3x3 DC
/// neighborhood zeroed, and the `k` strongest bins (ties broken by index)
/// that exceed ten times the mean power each multiply the mask by `1 - g`
/// for a Gaussian `g` of width `sigma_frac * min(H, W)`, once at the peak
/// and once rolled by `(H/2, W/2)`. The DC bin is always kept at 1.
pub fn build_notch_mask(a: &RealField, k: usize, sigma_frac: f64) -> Result<RealField> {
    let sh = a.shape();
    let (h, w) = (sh.rows, sh.cols);
    if sh.slices != 1 || h < 8 || w < 8 {
        return Err(Error::InvalidArgument(format!(
            "notch detection needs one plane of at least 8x8, got {}x{h}x{w}",
            sh.slices
        )));
    }
    let spec = fftshift(&fft2(&a.map(|v| Complex64::new(v, 0.0))));
    let mut power: Vec<f64> = spec.data().iter().map(|z| z.norm_sqr()).collect();
    for r in h / 2 - 1..h / 2 + 2 {
        for c in w / 2 - 1..w / 2 + 2 {
            power[r * w + c] = 0.0;
        }
    }
    let mut order: Vec<usize> = (0..power.len()).collect();
    order.sort_by(|&i, &j| power[j].total_cmp(&power[i]).then(i.cmp(&j)));
    let thresh = power.iter().sum::<f64>() / power.len() as f64 * 10.0;
    let sigma = sigma_frac * h.min(w) as f64;
    let mut mask = RealField::filled(sh, 1.0);
    for &idx in order.iter().take(k) {
        if power[idx] < thresh || !(power[idx] > 0.0) {
            continue;
        }
        let (y0, x0) = (idx / w, idx % w);
        let m = mask.data_mut();
        for r in 0..h {
            for c in 0..w {
                let d0 = (r as f64 - y0 as f64).powi(2) + (c as f64 - x0 as f64).powi(2);
                let g0 = (-0.5 * d0 / (sigma * sigma)).exp();
                let g1 = rolled_gaussian(r, c, y0, x0, h, w, sigma);
                m[r * w + c] *= (1.0 - g0) * (1.0 - g1);
            }
        }
    }
    mask.set(0, h / 2, w / 2, 1.0);
    Ok(mask)
}

/// Value at `(r, c)` of the Gaussian centered at `(y0, x0)` after a circular
/// roll by `(H/2, W/2)`.
fn rolled_gaussian(r: usize, c: usize, y0: usize, x0: usize, h: usize, w: usize, sigma: f64) -> f64 {
    // roll moves the sample at (r - H/2, c - W/2) to (r, c)
    let sr = (r + h - h / 2) % h;
    let sc = (c + w - w / 2) % w;
    let d2 = (sr as f64 - y0 as f64).powi(2) + (sc as f64 - x0 as f64).powi(2);
    (-0.5 * d2 / (sigma * sigma)).exp()
}

/// Multiplies the shifted spectrum of every slice by `1 - lam_fft * mask`.
pub fn apply_notch(z: &ComplexField, mask: &RealField, lam_fft: f64) -> Result<ComplexField> {
    let sh = z.shape();
    let msh = mask.shape();
    if msh.slices != 1 || msh.rows != sh.rows || msh.cols != sh.cols {
        return Err(Error::ShapeMismatch {
            expected: sh.with_slices(1),
            actual: msh,
        });
    }
    if lam_fft == 0.0 {
        return Ok(z.clone());
    }
    let mut spec = fftshift(&fft2(z));
    for s in 0..sh.slices {
        for (v, m) in spec.slice_mut(s).iter_mut().zip(mask.data()) {
            *v *= 1.0 - lam_fft * m;
        }
    }
    Ok(ifft2(&ifftshift(&spec)))
}

/// `log(1 + exp(beta x)) / beta`, linear above `beta x > 20`.
fn softplus(x: f64, beta: f64) -> f64 {
    let bx = beta * x;
    if bx > 20.0 {
        x
    } else {
        bx.exp().ln_1p() / beta
    }
}

/// Replaces `|z|` by `softplus(|z|; beta)` with `beta = 1 / (amp_std + 1e-6)`,
/// keeping the phase. Samples where softplus is the identity are returned
/// untouched.
pub fn softplus_amplitude(z: &ComplexField, amp_std: f64) -> ComplexField {
    let beta = 1.0 / (amp_std + 1e-6);
    z.map(|v| {
        let a = v.norm();
        let s = softplus(a, beta);
        if s == a {
            v
        } else {
            Complex64::from_polar(s, v.arg())
        }
    })
}

/// Population standard deviation of `|z|` over all samples.
pub fn amplitude_std(z: &ComplexField) -> f64 {
    z.amplitude().variance().sqrt()
}
