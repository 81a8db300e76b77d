//! Multislice components: contrast-adaptive weights, gradient producers,
//! robust clamping, complex Adam and per-slice renormalization.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;
#[allow(unused_imports)] // inherent when std is linked (e.g. by dev-dependencies)
use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::RegState;
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::fft::{fftfreq, Fft2};
use crate::field::{forward_diff_reflective, Axis, ComplexField, RealField, Shape};
use crate::stats;

const EPS: f64 = 1e-8;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Per-slice contrast statistics and the resulting TV weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastWeight {
    /// Mean gradient magnitude per slice, clipped to `[p5, p95]`.
    pub g_clamp: Vec<f64>,
    /// TV weight per slice.
    pub weight: Vec<f64>,
}

impl ContrastWeight {
    /// Slices whose contrast falls below the mean contrast.
    pub fn is_low(&self) -> Vec<bool> {
        let mean = stats::mean(&self.g_clamp);
        self.g_clamp.iter().map(|&g| g < mean).collect()
    }
}

/// Blends a reciprocal and a logistic contrast map into a per-slice TV
/// weight. A single slice has no spread, so its standard deviation is the
/// floor `eps` and the weight is `0.75 * lam_tv0`.
pub fn contrast_tv_weight(x: &ComplexField, lam_tv0: f64, k_logistic: f64) -> ContrastWeight {
    let sh = x.shape();
    let dx = forward_diff_reflective(x, Axis::X);
    let dy = forward_diff_reflective(x, Axis::Y);
    let n = sh.plane_len() as f64;
    let g: Vec<f64> = (0..sh.slices)
        .map(|s| {
            let sum: f64 = dx
                .slice(s)
                .iter()
                .zip(dy.slice(s))
                .map(|(a, b)| a.norm() + b.norm())
                .sum();
            sum / n + EPS
        })
        .collect();
    let p5 = stats::percentile(&g, 5.0);
    let p95 = stats::percentile(&g, 95.0);
    let g_clamp: Vec<f64> = g.iter().map(|v| v.clamp(p5, p95)).collect();
    let mu = stats::mean(&g_clamp);
    let sig = stats::std_unbiased(&g_clamp).max(EPS);
    let weight = g_clamp
        .iter()
        .map(|&gc| {
            let w_rcp = (mu / gc).clamp(0.5, 2.0);
            let w_log = sigmoid(k_logistic * (mu - gc) / sig);
            lam_tv0 * 0.5 * (w_rcp + w_log)
        })
        .collect();
    ContrastWeight { g_clamp, weight }
}

/// Shared pass for the Charbonnier energy and gradient.
fn charbonnier_pass(
    x: &ComplexField,
    weight: &[f64],
    lam_depth: f64,
    d_char: f64,
    mut grad: Option<&mut ComplexField>,
) -> f64 {
    let sh = x.shape();
    let dx = forward_diff_reflective(x, Axis::X);
    let dy = forward_diff_reflective(x, Axis::Y);
    let dz = forward_diff_reflective(x, Axis::Z);
    let (n, w) = (sh.plane_len(), sh.cols);
    let l2 = lam_depth * lam_depth;
    let mut energy = 0.0;
    for s in 0..sh.slices {
        let ws = weight[s];
        for k in 0..n {
            let i = s * n + k;
            let (a, b, c) = (dx.data()[i], dy.data()[i], dz.data()[i]);
            let denom =
                (a.norm_sqr() + b.norm_sqr() + l2 * c.norm_sqr() + d_char * d_char).sqrt();
            energy += ws * denom;
            if let Some(g) = grad.as_deref_mut() {
                let g = g.data_mut();
                let f = ws / denom;
                let (r, col) = (k / w, k % w);
                if col + 1 < w {
                    g[i] += a * f;
                    g[i + 1] -= a * f;
                }
                if r + 1 < sh.rows {
                    g[i] += b * f;
                    g[i + w] -= b * f;
                }
                if s + 1 < sh.slices {
                    g[i] += c * (f * l2);
                    g[i + n] -= c * (f * l2);
                }
            }
        }
    }
    energy
}

/// `sum_s w_s sum sqrt(|dx|^2 + |dy|^2 + lam_depth^2 |dz|^2 + d_char^2)`.
pub fn charbonnier_tv3d_energy(x: &ComplexField, weight: &[f64], lam_depth: f64, d_char: f64) -> f64 {
    charbonnier_pass(x, weight, lam_depth, d_char, None)
}

/// Gradient of [`charbonnier_tv3d_energy`] with the weights held fixed.
pub fn charbonnier_tv3d_grad(
    x: &ComplexField,
    weight: &[f64],
    lam_depth: f64,
    d_char: f64,
) -> ComplexField {
    let mut g = ComplexField::zeros(x.shape());
    charbonnier_pass(x, weight, lam_depth, d_char, Some(&mut g));
    g
}

/// Per-slice smoothed gradient magnitudes `g_s = sqrt(|dx|^2+|dy|^2+d^2) - d`
/// together with the differences.
fn exclusion_terms(x: &ComplexField, d_char: f64) -> (ComplexField, ComplexField, Vec<f64>, Vec<f64>) {
    let dx = forward_diff_reflective(x, Axis::X);
    let dy = forward_diff_reflective(x, Axis::Y);
    let root: Vec<f64> = dx
        .data()
        .iter()
        .zip(dy.data())
        .map(|(a, b)| (a.norm_sqr() + b.norm_sqr() + d_char * d_char).sqrt())
        .collect();
    let g = root.iter().map(|r| r - d_char).collect();
    (dx, dy, root, g)
}

/// `lam * sum_p sum_{s<t} g_s g_t`: large where several slices have edges at
/// the same pixel.
pub fn gradient_exclusion_energy(x: &ComplexField, lam_excl: f64, d_char: f64) -> f64 {
    let sh = x.shape();
    if sh.slices < 2 || lam_excl == 0.0 {
        return 0.0;
    }
    let (_, _, _, g) = exclusion_terms(x, d_char);
    let n = sh.plane_len();
    let mut e = 0.0;
    for k in 0..n {
        let mut sum = 0.0;
        let mut sq = 0.0;
        for s in 0..sh.slices {
            let v = g[s * n + k];
            sum += v;
            sq += v * v;
        }
        e += 0.5 * (sum * sum - sq);
    }
    lam_excl * e
}

/// Gradient of [`gradient_exclusion_energy`]: each slice's differences are
/// weighted by `lam * share / sqrt(|dx|^2+|dy|^2+d^2)`, where `share` is the
/// summed edge magnitude of the other slices.
pub fn gradient_exclusion_grad(x: &ComplexField, lam_excl: f64, d_char: f64) -> ComplexField {
    let sh = x.shape();
    let mut out = ComplexField::zeros(sh);
    if sh.slices < 2 || lam_excl == 0.0 {
        return out;
    }
    let (dx, dy, root, g) = exclusion_terms(x, d_char);
    let (n, w) = (sh.plane_len(), sh.cols);
    let o = out.data_mut();
    for k in 0..n {
        let total: f64 = (0..sh.slices).map(|s| g[s * n + k]).sum();
        for s in 0..sh.slices {
            let i = s * n + k;
            let wt = lam_excl * (total - g[i]) / root[i];
            let (r, c) = (k / w, k % w);
            if c + 1 < w {
                let v = dx.data()[i] * wt;
                o[i] += v;
                o[i + 1] -= v;
            }
            if r + 1 < sh.rows {
                let v = dy.data()[i] * wt;
                o[i] += v;
                o[i + w] -= v;
            }
        }
    }
    out
}

/// Hermitian slice Gram matrix `G_ij = sum conj(x_i) x_j` with zero diagonal.
fn offdiag_gram(x: &ComplexField) -> Vec<Complex64> {
    let s_count = x.shape().slices;
    let mut g = vec![Complex64::new(0.0, 0.0); s_count * s_count];
    for i in 0..s_count {
        for j in 0..s_count {
            if i != j {
                g[i * s_count + j] = x
                    .slice(i)
                    .iter()
                    .zip(x.slice(j))
                    .map(|(a, b)| a.conj() * b)
                    .sum();
            }
        }
    }
    g
}

/// `lam * ||offdiag(G)||_F`.
pub fn gram_orthogonality_energy(x: &ComplexField, lam_corr: f64) -> f64 {
    let g = offdiag_gram(x);
    lam_corr * g.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn projection(state: &mut RegState, k: usize, s_count: usize) -> Vec<f64> {
    match &state.rand_proj {
        Some((pk, ps, r)) if *pk == k && *ps == s_count => r.clone(),
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(state.seed, &[0x6A4]));
            let r: Vec<f64> = (0..k * s_count).map(|_| StandardNormal.sample(&mut rng)).collect();
            state.rand_proj = Some((k, s_count, r.clone()));
            r
        }
    }
}

/// Gram-orthogonality gradient.
///
/// Up to 32 slices this is the exact gradient of
/// [`gram_orthogonality_energy`], `(2 lam / ||G||) * G^T x`. Beyond that a
/// cached random `k x S` projection `R` with `k = clamp(S/4, 8, 32)` gives
/// the surrogate `(2 lam / ||X Y^T||) * (X Y^T) Y` with `Y = R X`.
pub fn gram_orthogonality_grad(x: &ComplexField, lam_corr: f64, state: &mut RegState) -> ComplexField {
    let sh = x.shape();
    let s_count = sh.slices;
    let n = sh.plane_len();
    let mut out = ComplexField::zeros(sh);
    if s_count < 2 {
        return out;
    }
    if s_count <= 32 {
        let g = offdiag_gram(x);
        let frob = g.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt() + EPS;
        let scale = 2.0 * lam_corr / frob;
        let o = out.data_mut();
        for k in 0..s_count {
            for j in 0..s_count {
                let gjk = g[j * s_count + k] * scale;
                if gjk == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for (dst, src) in o[k * n..(k + 1) * n].iter_mut().zip(x.slice(j)) {
                    *dst += gjk * src;
                }
            }
        }
        return out;
    }
    let k = (s_count / 4).clamp(8, 32);
    let r = projection(state, k, s_count);
    let mut y = vec![Complex64::new(0.0, 0.0); k * n];
    for a in 0..k {
        for s in 0..s_count {
            let rv = r[a * s_count + s];
            for (dst, src) in y[a * n..(a + 1) * n].iter_mut().zip(x.slice(s)) {
                *dst += src * rv;
            }
        }
    }
    let mut gk = vec![Complex64::new(0.0, 0.0); s_count * k];
    for s in 0..s_count {
        for a in 0..k {
            gk[s * k + a] = x.slice(s).iter().zip(&y[a * n..(a + 1) * n]).map(|(p, q)| p * q).sum();
        }
    }
    let frob = gk.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt() + EPS;
    let scale = 2.0 * lam_corr / frob;
    let o = out.data_mut();
    for s in 0..s_count {
        for a in 0..k {
            let c = gk[s * k + a] * scale;
            for (dst, src) in o[s * n..(s + 1) * n].iter_mut().zip(&y[a * n..(a + 1) * n]) {
                *dst += c * src;
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralParams {
    pub lam_spec0: f64,
    pub f_cut: f64,
    pub order: u32,
}

/// Cached `(low, high)` Butterworth masks for an `H x W` plane.
fn butterworth(state: &mut RegState, rows: usize, cols: usize, f_cut: f64, order: u32) -> (RealField, RealField) {
    let key = (rows, cols, f_cut.to_bits(), order);
    if let Some(m) = state.freq_cache.get(&key) {
        return m.clone();
    }
    let fy = fftfreq(rows, 1.0);
    let fx = fftfreq(cols, 1.0);
    let shape = Shape::new(1, rows, cols).expect("valid plane");
    let low = RealField::from_fn(shape, |_, r, c| {
        let fr = (fx[c] * fx[c] + fy[r] * fy[r]).sqrt() + EPS;
        1.0 / (1.0 + (fr / f_cut).powi(order as i32))
    });
    let high = low.map(|v| 1.0 - v);
    state.freq_cache.insert(key, (low.clone(), high.clone()));
    (low, high)
}

/// Annealed strength `lam0 * exp(-max(0, it - 5) / 20)`.
pub fn spectral_strength(lam_spec0: f64, iter: f64) -> f64 {
    lam_spec0 * (-(iter - 5.0).max(0.0) / 20.0).exp()
}

/// Applies the per-slice mask: high-pass for low-contrast slices, low-pass
/// otherwise.
fn masked(x: &ComplexField, p: SpectralParams, is_low: &[bool], state: &mut RegState) -> ComplexField {
    let sh = x.shape();
    let (low, high) = butterworth(state, sh.rows, sh.cols, p.f_cut, p.order);
    let plan = Fft2::new(sh.rows, sh.cols);
    let mut out = x.clone();
    for s in 0..sh.slices {
        let m = if is_low[s] { high.data() } else { low.data() };
        let plane = out.slice_mut(s);
        plan.forward(plane);
        for (z, w) in plane.iter_mut().zip(m) {
            *z *= *w;
        }
        plan.inverse(plane);
    }
    out
}

/// `(lam_spec / 2) * Re <x, A x>` where `A` is the per-slice mask filter.
pub fn spectral_mask_energy(
    x: &ComplexField,
    p: SpectralParams,
    is_low: &[bool],
    iter: f64,
    state: &mut RegState,
) -> f64 {
    let lam = spectral_strength(p.lam_spec0, iter);
    0.5 * lam * x.real_dot(&masked(x, p, is_low, state))
}

/// `lam_spec * ifft2(mask * fft2(x))`, zero once the annealed strength drops
/// below `1e-6`.
pub fn spectral_mask_grad(
    x: &ComplexField,
    p: SpectralParams,
    is_low: &[bool],
    iter: f64,
    state: &mut RegState,
) -> ComplexField {
    let lam = spectral_strength(p.lam_spec0, iter);
    if lam < 1e-6 {
        return ComplexField::zeros(x.shape());
    }
    let mut g = masked(x, p, is_low, state);
    g.scale(lam);
    g
}

/// Two-stage clamp: elementwise at `4 * median|g|`, then per slice at four
/// times the median slice norm. Non-finite entries are zeroed first.
pub fn robust_clamp(g: &ComplexField) -> ComplexField {
    let mut out = g.clone();
    out.nan_to_zero();
    let mags: Vec<f64> = out.data().iter().map(|z| z.norm()).collect();
    let med = stats::median(&mags) + EPS;
    for (z, m) in out.data_mut().iter_mut().zip(&mags) {
        let f = (4.0 * med / (m + EPS)).min(1.0);
        *z *= f;
    }
    let norms: Vec<f64> = out.slice_norms().iter().map(|n| n + EPS).collect();
    let thr = 4.0 * stats::median(&norms);
    for (s, n) in norms.iter().enumerate() {
        let f = (thr / n).min(1.0);
        for z in out.slice_mut(s) {
            *z *= f;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub lr_base: f64,
    pub warmup: f64,
    pub decay: f64,
    pub cos_start: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub step_clamp: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            lr_base: 2.4e-2,
            warmup: 5.0,
            decay: 0.990,
            cos_start: 120.0,
            beta1: 0.9,
            beta2: 0.999,
            step_clamp: 0.08,
        }
    }
}

/// Linear warm-up, exponential decay, then a cosine tail after `cos_start`.
pub fn adam_learning_rate(it: f64, p: &AdamParams) -> f64 {
    if it <= p.warmup {
        return if p.warmup > 0.0 { p.lr_base * it / p.warmup } else { p.lr_base };
    }
    let mut lr = p.lr_base * p.decay.powf(it - p.warmup);
    if it > p.cos_start {
        let cos_fac = 0.5 * (1.0 + (PI * (it - p.cos_start) / p.cos_start).cos());
        lr *= cos_fac.max(0.0);
    }
    lr
}

/// One complex Adam step on `x` with gradient `g`, learning rate from the
/// schedule at iteration `it`. Moments live in `state`.
pub fn complex_adam_step(
    x: &ComplexField,
    g: &ComplexField,
    state: &mut RegState,
    p: &AdamParams,
    it: f64,
) -> Result<ComplexField> {
    x.ensure_same_shape(g.shape())?;
    let sh = x.shape();
    let m = state.adam_m.get_or_insert_with(|| ComplexField::zeros(sh));
    m.ensure_same_shape(sh)?;
    let v = state.adam_v.get_or_insert_with(|| RealField::zeros(sh));
    v.ensure_same_shape(sh)
        .map_err(|_| Error::InvalidArgument(format!("Adam state shaped {:?}", v.shape())))?;
    state.adam_t += 1;
    let t = state.adam_t as i32;
    let bc1 = 1.0 - p.beta1.powi(t);
    let bc2 = 1.0 - p.beta2.powi(t);
    let lr = adam_learning_rate(it, p);
    let mut out = x.clone();
    let md = m.data_mut();
    let vd = v.data_mut();
    for (i, z) in out.data_mut().iter_mut().enumerate() {
        let gi = g.data()[i];
        md[i] = md[i] * p.beta1 + gi * (1.0 - p.beta1);
        vd[i] = p.beta2 * vd[i] + (1.0 - p.beta2) * gi.norm_sqr();
        let m_hat = md[i] / bc1;
        let v_hat = vd[i] / bc2;
        let step = m_hat * (lr / (v_hat.sqrt() + EPS));
        let step = Complex64::new(
            step.re.clamp(-p.step_clamp, p.step_clamp),
            step.im.clamp(-p.step_clamp, p.step_clamp),
        );
        *z -= step;
    }
    Ok(out)
}

/// Rescales each slice of `x_new` to the L2 norm of the same slice of
/// `x_old`, with both norms floored at `1e-8`.
pub fn slice_l2_renorm(x_new: &ComplexField, x_old: &ComplexField) -> Result<ComplexField> {
    x_new.ensure_same_shape(x_old.shape())?;
    let old = x_old.slice_norms();
    let new = x_new.slice_norms();
    let mut out = x_new.clone();
    for s in 0..out.shape().slices {
        let f = old[s].max(EPS) / new[s].max(EPS);
        for z in out.slice_mut(s) {
            *z *= f;
        }
    }
    out.nan_to_zero();
    Ok(out)
}
