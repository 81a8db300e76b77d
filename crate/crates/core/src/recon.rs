//! Extended-PIE reconstruction with multislice propagation and a per-epoch
//! regularization hook.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;
use alloc::{format, vec};
use core::f64::consts::PI;

use num_complex::Complex64;
#[allow(unused_imports)] // inherent when std is linked (e.g. by dev-dependencies)
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{fftfreq, Fft2};
use crate::field::{gaussian3x3, ComplexField, RealField};
use crate::metrics::{layer_metrics, LayerMetrics};
use crate::sim::{extract_view, Dataset};

/// Angular-spectrum propagator over a fixed distance for one window size.
#[derive(Debug, Clone)]
pub struct Propagator {
    plan: Fft2,
    transfer: Vec<Complex64>,
    identity: bool,
}

impl Propagator {
    pub fn new(rows: usize, cols: usize, dz: f64, wavelength: f64, pixel_size: f64) -> Result<Self> {
        if !(wavelength > 0.0) || !(pixel_size > 0.0) {
            return Err(Error::InvalidArgument(
                "wavelength and pixel size must be positive".into(),
            ));
        }
        if !dz.is_finite() {
            return Err(Error::InvalidArgument(format!("propagation distance {dz}")));
        }
        let fy = fftfreq(rows, pixel_size);
        let fx = fftfreq(cols, pixel_size);
        let k2 = 1.0 / (wavelength * wavelength);
        let mut transfer = Vec::with_capacity(rows * cols);
        for &v in &fy {
            for &u in &fx {
                let arg = k2 - u * u - v * v;
                transfer.push(if arg > 0.0 {
                    Complex64::from_polar(1.0, 2.0 * PI * dz * arg.sqrt())
                } else {
                    Complex64::new(0.0, 0.0)
                });
            }
        }
        Ok(Self {
            plan: Fft2::new(rows, cols),
            transfer,
            identity: dz == 0.0,
        })
    }

    /// Propagates one plane in place.
    pub fn apply(&self, wave: &mut [Complex64]) {
        self.run(wave, false);
    }

    /// Propagates back over the same distance (conjugate transfer).
    pub fn apply_inverse(&self, wave: &mut [Complex64]) {
        self.run(wave, true);
    }

    fn run(&self, wave: &mut [Complex64], inverse: bool) {
        if self.identity {
            return;
        }
        self.plan.forward(wave);
        for (w, h) in wave.iter_mut().zip(&self.transfer) {
            *w *= if inverse { h.conj() } else { *h };
        }
        self.plan.inverse(wave);
    }
}

/// Propagates every slice of `wave` by `dz`.
pub fn angular_spectrum_propagate(
    wave: &ComplexField,
    dz: f64,
    wavelength: f64,
    pixel_size: f64,
) -> Result<ComplexField> {
    let sh = wave.shape();
    let p = Propagator::new(sh.rows, sh.cols, dz, wavelength, pixel_size)?;
    let mut out = wave.clone();
    for s in 0..sh.slices {
        p.apply(out.slice_mut(s));
    }
    Ok(out)
}

fn default_regularize_every() -> usize {
    1
}

fn default_step() -> f64 {
    1.0
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconConfig {
    pub epochs: usize,
    #[serde(default = "default_step")]
    pub object_step: f64,
    #[serde(default = "default_step")]
    pub probe_step: f64,
    #[serde(default)]
    pub probe_refine: bool,
    #[serde(default = "default_regularize_every")]
    pub regularize_every: usize,
    #[serde(default)]
    pub rng_seed: u64,
    /// Record per-epoch metrics against the reference when one exists.
    #[serde(default = "default_true")]
    pub track_metrics: bool,
}

impl ReconConfig {
    pub fn new(epochs: usize) -> Self {
        Self {
            epochs,
            object_step: 1.0,
            probe_step: 1.0,
            probe_refine: false,
            regularize_every: 1,
            rng_seed: 0,
            track_metrics: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be at least 1".into()));
        }
        if !(self.object_step > 0.0 && self.object_step <= 2.0) {
            return Err(Error::InvalidArgument(format!(
                "object_step {} outside (0, 2]",
                self.object_step
            )));
        }
        if !(self.probe_step > 0.0 && self.probe_step <= 2.0) {
            return Err(Error::InvalidArgument(format!(
                "probe_step {} outside (0, 2]",
                self.probe_step
            )));
        }
        if self.regularize_every == 0 {
            return Err(Error::InvalidArgument("regularize_every must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReconTrace {
    /// Amplitude residual `sum (sqrt(I) - |model|)^2` per epoch.
    pub loss: Vec<f64>,
    /// `[epoch][slice]` metrics; empty without a reference.
    pub layers: Vec<Vec<LayerMetrics>>,
    pub regularizer_calls: usize,
    pub pipeline_id: Option<String>,
}

impl ReconTrace {
    /// Mean-over-slices SSIM per epoch.
    pub fn mean_ssim(&self) -> Vec<f64> {
        self.layers
            .iter()
            .map(|l| l.iter().map(|m| m.ssim).sum::<f64>() / l.len() as f64)
            .collect()
    }
}

/// Per-epoch hook applied to the object estimate.
pub trait Regularizer {
    fn regularize(&mut self, obj: &ComplexField) -> Result<ComplexField>;

    fn id(&self) -> Option<String> {
        None
    }
}

/// Precomputed per-dataset solver resources.
pub struct Engine<'a> {
    dataset: &'a Dataset,
    plan: Fft2,
    propagator: Option<Propagator>,
    /// `sqrt(I / intensity_scale)` per position.
    amplitudes: Vec<f64>,
    positions: Vec<(usize, usize)>,
}

impl<'a> Engine<'a> {
    pub fn new(dataset: &'a Dataset) -> Result<Self> {
        let (hp, wp) = (dataset.probe.rows(), dataset.probe.cols());
        let osh = dataset.object_shape;
        dataset.scan.validate((osh.rows, osh.cols), (hp, wp))?;
        let psh = dataset.patterns.shape();
        if psh.rows != hp || psh.cols != wp || psh.slices != dataset.scan.len() {
            return Err(Error::InvalidArgument(format!(
                "patterns {}x{}x{} inconsistent with {} positions and a {hp}x{wp} probe",
                psh.slices,
                psh.rows,
                psh.cols,
                dataset.scan.len()
            )));
        }
        let propagator = if osh.slices > 1 {
            Some(Propagator::new(
                hp,
                wp,
                dataset.slice_spacing,
                dataset.probe.wavelength,
                dataset.probe.pixel_size,
            )?)
        } else {
            None
        };
        let k = dataset.intensity_scale;
        if !(k > 0.0) {
            return Err(Error::InvalidArgument(format!("intensity scale {k}")));
        }
        let amplitudes = dataset
            .patterns
            .data()
            .iter()
            .map(|&i| (i.max(0.0) / k).sqrt())
            .collect();
        Ok(Self {
            dataset,
            plan: Fft2::new(hp, wp),
            propagator,
            amplitudes,
            positions: dataset.scan.pixel_positions(),
        })
    }

    /// Initial probe: the dataset probe, blurred when it is refined.
    pub fn initial_probe(&self, cfg: &ReconConfig) -> ComplexField {
        let p = &self.dataset.probe.values;
        if cfg.probe_refine {
            let re = gaussian3x3(&p.real());
            let im = gaussian3x3(&p.imag());
            re.zip_map(&im, Complex64::new).expect("same shape")
        } else {
            p.clone()
        }
    }

    /// One pass over all positions in a seeded random order. Returns the
    /// amplitude-residual loss accumulated before each update.
    pub fn epoch(
        &self,
        obj: &mut ComplexField,
        probe: &mut ComplexField,
        cfg: &ReconConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<f64> {
        let psh = probe.shape();
        let (hp, wp) = (psh.rows, psh.cols);
        let n = hp * wp;
        let slices = obj.shape().slices;
        let ocols = obj.shape().cols;
        let mut order: Vec<usize> = (0..self.positions.len()).collect();
        order.shuffle(rng);

        let zero = Complex64::new(0.0, 0.0);
        let mut views = vec![vec![zero; n]; slices];
        let mut incident = vec![vec![zero; n]; slices];
        let mut exits = vec![vec![zero; n]; slices];
        let mut wave = vec![zero; n];
        let mut delta = vec![zero; n];
        let mut loss = 0.0;

        for &j in &order {
            let (r0, c0) = self.positions[j];
            incident[0].copy_from_slice(probe.data());
            for s in 0..slices {
                extract_view(obj, s, r0, c0, &mut views[s], hp, wp);
                for k in 0..n {
                    exits[s][k] = incident[s][k] * views[s][k];
                }
                if s + 1 < slices {
                    incident[s + 1].copy_from_slice(&exits[s]);
                    if let Some(p) = &self.propagator {
                        p.apply(&mut incident[s + 1]);
                    }
                }
            }

            // Fourier magnitude projection of the exit wave
            wave.copy_from_slice(&exits[slices - 1]);
            self.plan.forward(&mut wave);
            let amps = &self.amplitudes[j * n..(j + 1) * n];
            for (z, &a) in wave.iter_mut().zip(amps) {
                let m = z.norm();
                loss += (a - m) * (a - m);
                *z = if m > 0.0 { *z * (a / m) } else { Complex64::new(a, 0.0) };
            }
            self.plan.inverse(&mut wave);
            for k in 0..n {
                delta[k] = wave[k] - exits[slices - 1][k];
            }

            for s in (0..slices).rev() {
                let inc_max = incident[s].iter().fold(0.0f64, |m, z| m.max(z.norm_sqr()));
                let view_max = views[s].iter().fold(0.0f64, |m, z| m.max(z.norm_sqr()));
                let plane = obj.slice_mut(s);
                if inc_max > 0.0 {
                    let a = cfg.object_step / inc_max;
                    for r in 0..hp {
                        let row = (r0 + r) * ocols + c0;
                        for c in 0..wp {
                            let k = r * wp + c;
                            plane[row + c] += a * incident[s][k].conj() * delta[k];
                        }
                    }
                }
                let refine = s > 0 || cfg.probe_refine;
                if !refine || view_max == 0.0 {
                    continue;
                }
                let b = if s > 0 { 1.0 } else { cfg.probe_step } / view_max;
                for k in 0..n {
                    wave[k] = incident[s][k] + b * views[s][k].conj() * delta[k];
                }
                if s > 0 {
                    if let Some(p) = &self.propagator {
                        p.apply_inverse(&mut wave);
                    }
                    for k in 0..n {
                        delta[k] = wave[k] - exits[s - 1][k];
                    }
                } else {
                    probe.data_mut().copy_from_slice(&wave);
                }
            }
        }
        if !loss.is_finite() || !obj.is_finite() || !probe.is_finite() {
            return Err(Error::NonFinite("ePIE update".into()));
        }
        Ok(loss)
    }
}

/// One ePIE epoch over `dataset`; see [`Engine::epoch`].
pub fn epie_epoch(
    obj: &mut ComplexField,
    probe: &mut ComplexField,
    dataset: &Dataset,
    cfg: &ReconConfig,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    Engine::new(dataset)?.epoch(obj, probe, cfg, rng)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub object: ComplexField,
    pub probe: ComplexField,
    pub trace: ReconTrace,
}

/// Runs `cfg.epochs` epochs from a flat object, invoking `regularizer` at
/// the end of every epoch with `epoch % regularize_every == 0`.
pub fn reconstruct(
    dataset: &Dataset,
    cfg: &ReconConfig,
    mut regularizer: Option<&mut dyn Regularizer>,
) -> Result<Reconstruction> {
    cfg.validate()?;
    let engine = Engine::new(dataset)?;
    let mut obj = ComplexField::ones(dataset.object_shape);
    let mut probe = engine.initial_probe(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut trace = ReconTrace {
        pipeline_id: regularizer.as_ref().and_then(|r| r.id()),
        ..ReconTrace::default()
    };
    for epoch in 0..cfg.epochs {
        let loss = engine.epoch(&mut obj, &mut probe, cfg, &mut rng)?;
        trace.loss.push(loss);
        if let Some(reg) = regularizer.as_deref_mut() {
            if epoch % cfg.regularize_every == 0 {
                obj = reg.regularize(&obj)?;
                trace.regularizer_calls += 1;
                if !obj.is_finite() {
                    return Err(Error::NonFinite(format!("regularizer output at epoch {epoch}")));
                }
            }
        }
        if cfg.track_metrics {
            if let Some(reference) = &dataset.reference {
                trace.layers.push(layer_metrics(&obj, reference)?);
            }
        }
    }
    Ok(Reconstruction {
        object: obj,
        probe,
        trace,
    })
}

/// Boxed closure adapter for ad-hoc hooks.
pub struct FnRegularizer(pub Box<dyn FnMut(&ComplexField) -> Result<ComplexField>>);

impl Regularizer for FnRegularizer {
    fn regularize(&mut self, obj: &ComplexField) -> Result<ComplexField> {
        (self.0)(obj)
    }
}

/// Probe intensity summed over all scan windows, in object coordinates.
pub fn illumination_mask(dataset: &Dataset) -> RealField {
    let osh = dataset.object_shape.with_slices(1);
    let mut m = RealField::zeros(osh);
    let (hp, wp) = (dataset.probe.rows(), dataset.probe.cols());
    let pint: Vec<f64> = dataset.probe.values.data().iter().map(|z| z.norm_sqr()).collect();
    for (r0, c0) in dataset.scan.pixel_positions() {
        for r in 0..hp {
            for c in 0..wp {
                let v = m.get(0, r0 + r, c0 + c) + pint[r * wp + c];
                m.set(0, r0 + r, c0 + c, v);
            }
        }
    }
    m
}
