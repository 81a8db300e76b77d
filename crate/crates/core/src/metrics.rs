//! Image-quality metrics, per-layer aggregation and tier classification.

use alloc::string::String;
use alloc::vec::Vec;
use alloc::{format, vec};

use num_complex::Complex64;
#[allow(unused_imports)] // inherent when std is linked (e.g. by dev-dependencies)
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{ComplexField, RealField};
use crate::stats;

const K1: f64 = 0.01;
const K2: f64 = 0.03;
const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const PSNR_CAP: f64 = 99.0;
const RANGE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerMetrics {
    pub ssim: f64,
    pub psnr_db: f64,
    pub rmse: f64,
    pub mae: f64,
}

fn single_plane(a: &RealField, b: &RealField) -> Result<(usize, usize)> {
    a.ensure_same_shape(b.shape())?;
    let sh = a.shape();
    if sh.slices != 1 {
        return Err(Error::InvalidArgument(format!(
            "metric expects a single plane, got {} slices",
            sh.slices
        )));
    }
    Ok((sh.rows, sh.cols))
}

fn gaussian_taps(n: usize) -> Vec<f64> {
    let c = (n / 2) as f64;
    let taps: Vec<f64> = (0..n)
        .map(|i| (-(i as f64 - c).powi(2) / (2.0 * SIGMA * SIGMA)).exp())
        .collect();
    let s: f64 = taps.iter().sum();
    taps.iter().map(|t| t / s).collect()
}

/// Separable "valid" correlation with a symmetric kernel.
fn filter_valid(x: &[f64], rows: usize, cols: usize, taps: &[f64]) -> Vec<f64> {
    let n = taps.len();
    let (vr, vc) = (rows - n + 1, cols - n + 1);
    let mut tmp = vec![0.0; rows * vc];
    for r in 0..rows {
        for c in 0..vc {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                acc += t * x[r * cols + c + k];
            }
            tmp[r * vc + c] = acc;
        }
    }
    let mut out = vec![0.0; vr * vc];
    for r in 0..vr {
        for c in 0..vc {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                acc += t * tmp[(r + k) * vc + c];
            }
            out[r * vc + c] = acc;
        }
    }
    out
}

fn data_range(b: &[f64]) -> f64 {
    let (lo, hi) = b
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    (hi - lo).max(RANGE_FLOOR)
}

/// SSIM with an explicit data range.
///
/// Gaussian 11x11 window (sigma 1.5), mean over valid windows. Planes
/// smaller than the window use the largest odd window that fits.
pub fn ssim_with_range(a: &RealField, b: &RealField, range: f64) -> Result<f64> {
    let (rows, cols) = single_plane(a, b)?;
    let mut n = WINDOW.min(rows).min(cols);
    if n % 2 == 0 {
        n -= 1;
    }
    let taps = gaussian_taps(n);
    let (x, y) = (a.data(), b.data());
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(p, q)| p * q).collect();
    let mu_x = filter_valid(x, rows, cols, &taps);
    let mu_y = filter_valid(y, rows, cols, &taps);
    let e_xx = filter_valid(&xx, rows, cols, &taps);
    let e_yy = filter_valid(&yy, rows, cols, &taps);
    let e_xy = filter_valid(&xy, rows, cols, &taps);
    let c1 = (K1 * range).powi(2);
    let c2 = (K2 * range).powi(2);
    let mut total = 0.0;
    for i in 0..mu_x.len() {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let sxx = e_xx[i] - mx * mx;
        let syy = e_yy[i] - my * my;
        let sxy = e_xy[i] - mx * my;
        let num = (2.0 * mx * my + c1) * (2.0 * sxy + c2);
        let den = (mx * mx + my * my + c1) * (sxx + syy + c2);
        total += num / den;
    }
    Ok(total / mu_x.len() as f64)
}

/// SSIM of `a` against reference `b`; data range from `b`.
pub fn ssim(a: &RealField, b: &RealField) -> Result<f64> {
    single_plane(a, b)?;
    ssim_with_range(a, b, data_range(b.data()))
}

/// `(psnr_db, rmse, mae)` of `a` against reference `b`.
pub fn psnr_rmse_mae(a: &RealField, b: &RealField) -> Result<(f64, f64, f64)> {
    a.ensure_same_shape(b.shape())?;
    let n = a.data().len() as f64;
    let mut se = 0.0;
    let mut ae = 0.0;
    for (p, q) in a.data().iter().zip(b.data()) {
        let d = p - q;
        se += d * d;
        ae += d.abs();
    }
    let rmse = (se / n).sqrt();
    let mae = ae / n;
    let range = data_range(b.data());
    let psnr = if rmse < range * 10f64.powf(-PSNR_CAP / 20.0) {
        PSNR_CAP
    } else {
        (20.0 * (range / rmse).log10()).min(PSNR_CAP)
    };
    Ok((psnr, rmse, mae))
}

/// Phase of slice `s` of `obj` aligned to `reference`: the global phase
/// factor `arg sum(obj * conj(ref))` is removed, then the residual mean
/// offset.
pub fn aligned_phase(obj: &ComplexField, reference: &ComplexField, s: usize) -> Result<(RealField, RealField)> {
    obj.ensure_same_shape(reference.shape())?;
    let a = obj.plane(s);
    let b = reference.plane(s);
    let corr: Complex64 = a.data().iter().zip(b.data()).map(|(x, y)| x * y.conj()).sum();
    let rot = if corr.norm() > 0.0 {
        Complex64::from_polar(1.0, -corr.arg())
    } else {
        Complex64::new(1.0, 0.0)
    };
    let pa = a.map(|z| (z * rot).arg());
    let pb = b.phase();
    let offset = pa.mean() - pb.mean();
    Ok((pa.map(|v| v - offset), pb))
}

/// Phase-channel metrics for every slice.
pub fn layer_metrics(obj: &ComplexField, reference: &ComplexField) -> Result<Vec<LayerMetrics>> {
    (0..obj.shape().slices)
        .map(|s| {
            let (pa, pb) = aligned_phase(obj, reference, s)?;
            let (psnr_db, rmse, mae) = psnr_rmse_mae(&pa, &pb)?;
            Ok(LayerMetrics {
                ssim: ssim(&pa, &pb)?,
                psnr_db,
                rmse,
                mae,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Mean,
    Median,
    Min,
    /// Linear-interpolated percentile in `[0, 100]`.
    Percentile(f64),
}

impl Aggregation {
    pub fn apply(&self, values: &[f64]) -> Result<f64> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("no layers to aggregate".into()));
        }
        Ok(match *self {
            Aggregation::Mean => stats::mean(values),
            Aggregation::Median => stats::median(values),
            Aggregation::Min => values.iter().copied().fold(f64::INFINITY, f64::min),
            Aggregation::Percentile(p) => {
                if !(0.0..=100.0).contains(&p) {
                    return Err(Error::InvalidArgument(format!("percentile {p} outside [0, 100]")));
                }
                stats::percentile(values, p)
            }
        })
    }
}

/// Applies `strategy` to each metric independently.
pub fn aggregate_layers(per_layer: &[LayerMetrics], strategy: Aggregation) -> Result<LayerMetrics> {
    let pick = |f: fn(&LayerMetrics) -> f64| -> Result<f64> {
        let v: Vec<f64> = per_layer.iter().map(f).collect();
        strategy.apply(&v)
    };
    Ok(LayerMetrics {
        ssim: pick(|m| m.ssim)?,
        psnr_db: pick(|m| m.psnr_db)?,
        rmse: pick(|m| m.rmse)?,
        mae: pick(|m| m.mae)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Poor,
    Moderate,
    Good,
    Excellent,
}

impl Tier {
    pub const ALL: [Tier; 4] = [Tier::Excellent, Tier::Good, Tier::Moderate, Tier::Poor];

    /// Good or better.
    pub fn is_successful(&self) -> bool {
        *self >= Tier::Good
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Tier::Poor => "poor",
            Tier::Moderate => "moderate",
            Tier::Good => "good",
            Tier::Excellent => "excellent",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierPolicy {
    pub metric: String,
    pub excellent: f64,
    pub good: f64,
    pub moderate: f64,
}

impl Default for TierPolicy {
    fn default() -> Self {
        Self {
            metric: "ssim".into(),
            excellent: 0.90,
            good: 0.80,
            moderate: 0.60,
        }
    }
}

impl TierPolicy {
    pub fn validate(&self) -> Result<()> {
        let ok = 0.0 < self.moderate
            && self.moderate < self.good
            && self.good < self.excellent
            && self.excellent < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "tier thresholds must be strictly decreasing inside (0, 1): {} > {} > {}",
                self.excellent, self.good, self.moderate
            )))
        }
    }

    pub fn classify(&self, score: f64) -> Tier {
        if score >= self.excellent {
            Tier::Excellent
        } else if score >= self.good {
            Tier::Good
        } else if score >= self.moderate {
            Tier::Moderate
        } else {
            Tier::Poor
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    GroundTruth,
    Human,
    Vlm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub strategy: Aggregation,
    pub values: LayerMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub mode: EvalMode,
    #[serde(default)]
    pub per_layer: Vec<LayerMetrics>,
    #[serde(default)]
    pub aggregate: Option<Aggregate>,
    pub score: f64,
    pub tier: Tier,
    #[serde(default)]
    pub feedback: Option<String>,
    #[serde(default)]
    pub suggestions: Option<String>,
}

impl EvalResult {
    /// Result for an externally scored candidate (human or vision model).
    pub fn from_score(
        mode: EvalMode,
        score: f64,
        feedback: Option<String>,
        suggestions: Option<String>,
        policy: &TierPolicy,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::InvalidArgument(format!("score {score} outside [0, 1]")));
        }
        Ok(Self {
            mode,
            per_layer: Vec::new(),
            aggregate: None,
            score,
            tier: policy.classify(score),
            feedback,
            suggestions,
        })
    }
}

/// Per-layer phase metrics against the reference, aggregated; the score is
/// the aggregate SSIM clamped to `[0, 1]`.
pub fn evaluate_ground_truth(
    obj: &ComplexField,
    reference: Option<&ComplexField>,
    strategy: Aggregation,
    policy: &TierPolicy,
) -> Result<EvalResult> {
    let reference = reference.ok_or(Error::MissingReference)?;
    let per_layer = layer_metrics(obj, reference)?;
    let values = aggregate_layers(&per_layer, strategy)?;
    let score = if values.ssim.is_finite() {
        values.ssim.clamp(0.0, 1.0)
    } else {
        0.0
    };
    Ok(EvalResult {
        mode: EvalMode::GroundTruth,
        per_layer,
        aggregate: Some(Aggregate { strategy, values }),
        score,
        tier: policy.classify(score),
        feedback: None,
        suggestions: None,
    })
}
