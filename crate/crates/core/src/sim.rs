//! Synthetic phantoms, probes, scan grids and the diffraction forward model.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use alloc::{format, vec};
use core::f64::consts::PI;
use core::fmt;
use core::str::FromStr;

use num_complex::Complex64;
#[allow(unused_imports)] // inherent when std is linked (e.g. by dev-dependencies)
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::derive_seed;
use crate::error::{Error, Result};
use crate::fft::Fft2;
use crate::field::{ComplexField, RealField, Shape};
use crate::recon::Propagator;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Archetype {
    Ic,
    Multislice,
    Apoferritin,
}

impl Archetype {
    pub const ALL: [Archetype; 3] = [Archetype::Ic, Archetype::Multislice, Archetype::Apoferritin];

    pub fn as_str(&self) -> &'static str {
        match self {
            Archetype::Ic => "ic",
            Archetype::Multislice => "multislice",
            Archetype::Apoferritin => "apoferritin",
        }
    }

    /// Slice count the phantom generator requires.
    pub fn slices(&self) -> usize {
        match self {
            Archetype::Multislice => 2,
            _ => 1,
        }
    }

    /// Short description of the imaging scenario, used as generation context.
    pub fn description(&self) -> &'static str {
        match self {
            Archetype::Ic => {
                "X-ray ptychography of an integrated circuit: periodic metal lines, \
                 coarse raster scan with large step, periodic grid artifacts expected"
            }
            Archetype::Multislice => {
                "Two-slice multislice electron ptychography: slice 1 smooth and low \
                 contrast, slice 2 sharp and high contrast, inter-slice crosstalk expected"
            }
            Archetype::Apoferritin => {
                "Cryo electron ptychography of protein shells: weak phase rings on a flat \
                 background, low dose with severe noise and reduced resolution"
            }
        }
    }
}

impl fmt::Display for Archetype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Archetype {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ic" => Ok(Archetype::Ic),
            "multislice" => Ok(Archetype::Multislice),
            "apoferritin" => Ok(Archetype::Apoferritin),
            other => Err(Error::InvalidArgument(format!("unknown archetype `{other}`"))),
        }
    }
}

/// Smooth taper that is 1 in the interior and falls to 0 over `margin`
/// pixels at each border, so unscanned edges carry no structure.
fn edge_taper(r: usize, c: usize, h: usize, w: usize, margin: f64) -> f64 {
    let ramp = |i: usize, n: usize| {
        let d = (i as f64).min((n - 1 - i) as f64);
        if d >= margin {
            1.0
        } else {
            0.5 - 0.5 * (PI * d / margin).cos()
        }
    };
    ramp(r, h) * ramp(c, w)
}

/// Builds a transmission slice from a feature map `f` in `[-1, 1]`: phase
/// `phase_scale * f`, amplitude `1 - 0.2 * |f|`.
fn transmission(feature: &[f64], phase_scale: f64) -> Vec<Complex64> {
    feature
        .iter()
        .map(|&f| {
            let f = f.clamp(-1.0, 1.0);
            Complex64::from_polar(1.0 - 0.2 * f.abs(), phase_scale * f)
        })
        .collect()
}

fn ic_features(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let period = [6usize, 8][rng.random_range(0..2)];
    let width = period / 2;
    let off_r = rng.random_range(0..period);
    let off_c = rng.random_range(0..period);
    // quadrant layout: lines change orientation across a seeded split
    let split_r = h / 2 + rng.random_range(0..h / 8);
    let split_c = w / 2 + rng.random_range(0..w / 8);
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let vertical = (r < split_r) == (c < split_c);
            let on = if vertical {
                (c + off_c) % period < width
            } else {
                (r + off_r) % period < width
            };
            out[r * w + c] = if on { 1.0 } else { 0.0 };
        }
    }
    out
}

fn blob_features(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let count = 7;
    let blobs: Vec<(f64, f64, f64, f64)> = (0..count)
        .map(|_| {
            (
                rng.random_range(0.2..0.8) * h as f64,
                rng.random_range(0.2..0.8) * w as f64,
                rng.random_range(0.06..0.12) * h.min(w) as f64,
                rng.random_range(-1.0..1.0),
            )
        })
        .collect();
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let mut v = 0.0;
            for &(br, bc, s, a) in &blobs {
                let d2 = (r as f64 - br).powi(2) + (c as f64 - bc).powi(2);
                v += a * (-d2 / (2.0 * s * s)).exp();
            }
            out[r * w + c] = v;
        }
    }
    out
}

fn bar_features(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let period = rng.random_range(12..17) as f64;
    let width = period * 0.4;
    let offset = rng.random_range(0.0..period);
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let u = (r as f64 + c as f64 + offset) % period;
            out[r * w + c] = if u < width { 1.0 } else { -0.25 };
        }
    }
    out
}

fn ring_features(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut centers: Vec<(f64, f64, f64)> = Vec::new();
    let target = (h * w) / 400 + 2;
    let mut tries = 0;
    while centers.len() < target && tries < 500 {
        tries += 1;
        let rad = rng.random_range(3.0..6.0);
        let cr = rng.random_range(0.15..0.85) * h as f64;
        let cc = rng.random_range(0.15..0.85) * w as f64;
        let clear = centers.iter().all(|&(r0, c0, q)| {
            ((r0 - cr).powi(2) + (c0 - cc).powi(2)).sqrt() > rad + q + 3.0
        });
        if clear {
            centers.push((cr, cc, rad));
        }
    }
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let mut v: f64 = 0.0;
            for &(cr, cc, rad) in &centers {
                let d = ((r as f64 - cr).powi(2) + (c as f64 - cc).powi(2)).sqrt();
                v = v.max((-(d - rad).powi(2) / (2.0 * 0.8 * 0.8)).exp());
            }
            out[r * w + c] = v;
        }
    }
    out
}

/// Deterministic synthetic object for one of the three archetypes.
///
/// Amplitude stays in `[0.8, 1]` and phase magnitude at or below 1 rad.
pub fn make_phantom(archetype: Archetype, shape: Shape, seed: u64) -> Result<ComplexField> {
    if shape.slices != archetype.slices() {
        return Err(Error::InvalidArgument(format!(
            "{archetype} phantom needs {} slice(s), got {}",
            archetype.slices(),
            shape.slices
        )));
    }
    let (h, w) = (shape.rows, shape.cols);
    if !(32..=256).contains(&h) || !(32..=256).contains(&w) {
        return Err(Error::InvalidShape {
            slices: shape.slices,
            rows: h,
            cols: w,
            reason: "phantom planes must be between 32 and 256 pixels",
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[archetype as u64]));
    let planes: Vec<(Vec<f64>, f64)> = match archetype {
        Archetype::Ic => vec![(ic_features(h, w, &mut rng), 0.8)],
        Archetype::Multislice => {
            let smooth = blob_features(h, w, &mut rng);
            let peak = smooth.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
            let smooth: Vec<f64> = smooth.iter().map(|v| v / peak).collect();
            vec![(smooth, 0.25), (bar_features(h, w, &mut rng), 0.9)]
        }
        Archetype::Apoferritin => vec![(ring_features(h, w, &mut rng), 0.5)],
    };
    let margin = (h.min(w) / 8) as f64;
    let mut data = Vec::with_capacity(shape.len());
    for (feature, scale) in planes {
        let tapered: Vec<f64> = feature
            .iter()
            .enumerate()
            .map(|(i, f)| f * edge_taper(i / w, i % w, h, w, margin))
            .collect();
        data.extend(transmission(&tapered, scale));
    }
    ComplexField::from_vec(shape, data)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProbeKind {
    /// Flat disk with a raised-cosine edge two pixels wide.
    Disk { radius: f64 },
    Gaussian { sigma: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub values: ComplexField,
    pub pixel_size: f64,
    pub wavelength: f64,
}

impl Probe {
    pub fn rows(&self) -> usize {
        self.values.shape().rows
    }

    pub fn cols(&self) -> usize {
        self.values.shape().cols
    }

    /// Equivalent diameter of the region holding intensity above 1% of peak.
    pub fn extent(&self) -> f64 {
        let peak = self.values.data().iter().fold(0.0f64, |m, z| m.max(z.norm_sqr()));
        let area = self
            .values
            .data()
            .iter()
            .filter(|z| z.norm_sqr() > 1e-2 * peak)
            .count() as f64;
        2.0 * (area / PI).sqrt()
    }

    /// Multiplies by a quadratic phase `curvature * r^2` (r in pixels from
    /// the probe center), a defocus that spreads the diffraction pattern.
    pub fn with_defocus(mut self, curvature: f64) -> Self {
        let (h, w) = (self.rows(), self.cols());
        let (cr, cc) = ((h / 2) as f64, (w / 2) as f64);
        for r in 0..h {
            for c in 0..w {
                let d2 = (r as f64 - cr).powi(2) + (c as f64 - cc).powi(2);
                let v = self.values.get(0, r, c) * Complex64::from_polar(1.0, curvature * d2);
                self.values.set(0, r, c, v);
            }
        }
        self
    }
}

/// Unit-energy probe centered at `(H/2, W/2)`.
pub fn make_probe(
    rows: usize,
    cols: usize,
    kind: ProbeKind,
    pixel_size: f64,
    wavelength: f64,
) -> Result<Probe> {
    if rows < 8 || cols < 8 || rows % 2 == 1 || cols % 2 == 1 {
        return Err(Error::InvalidArgument(format!(
            "probe window must be even and at least 8x8, got {rows}x{cols}"
        )));
    }
    if !(pixel_size > 0.0) || !(wavelength > 0.0) {
        return Err(Error::InvalidArgument(
            "pixel size and wavelength must be positive".into(),
        ));
    }
    let (cr, cc) = ((rows / 2) as f64, (cols / 2) as f64);
    let shape = Shape::new(1, rows, cols)?;
    let edge = 2.0;
    let mut values = ComplexField::from_fn(shape, |_, r, c| {
        let d = ((r as f64 - cr).powi(2) + (c as f64 - cc).powi(2)).sqrt();
        let a = match kind {
            ProbeKind::Disk { radius } => {
                if d <= radius - edge {
                    1.0
                } else if d >= radius {
                    0.0
                } else {
                    0.5 + 0.5 * (PI * (d - radius + edge) / edge).cos()
                }
            }
            ProbeKind::Gaussian { sigma } => (-d * d / (2.0 * sigma * sigma)).exp(),
        };
        Complex64::new(a, 0.0)
    });
    let energy = values.energy();
    if !(energy > 0.0) {
        return Err(Error::InvalidArgument("probe has no energy".into()));
    }
    values.scale(1.0 / energy.sqrt());
    Ok(Probe {
        values,
        pixel_size,
        wavelength,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanGrid {
    /// Top-left corners of the probe window, `(row, col)` in pixels.
    pub positions: Vec<(f64, f64)>,
    pub step: f64,
    pub jitter_seed: u64,
    /// `1 - step / probe_extent`.
    pub overlap: f64,
}

impl ScanGrid {
    /// Centered raster with optional uniform jitter up to `jitter` times the
    /// step (at most 0.2).
    pub fn raster(
        object: (usize, usize),
        window: (usize, usize),
        step: f64,
        probe_extent: f64,
        jitter: f64,
        seed: u64,
    ) -> Result<Self> {
        if !(step >= 1.0) {
            return Err(Error::Geometry(format!("scan step {step} below one pixel")));
        }
        if !(0.0..=0.2).contains(&jitter) {
            return Err(Error::Geometry(format!("jitter fraction {jitter} outside [0, 0.2]")));
        }
        if window.0 > object.0 || window.1 > object.1 {
            return Err(Error::Geometry("probe window larger than object".into()));
        }
        let axis = |span: usize| -> Vec<f64> {
            let span = span as f64;
            let n = (span / step).floor() as usize + 1;
            let offset = (span - (n - 1) as f64 * step) / 2.0;
            (0..n).map(|i| offset + i as f64 * step).collect()
        };
        let rows = axis(object.0 - window.0);
        let cols = axis(object.1 - window.1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let max_r = (object.0 - window.0) as f64;
        let max_c = (object.1 - window.1) as f64;
        let mut positions = Vec::with_capacity(rows.len() * cols.len());
        for &r in &rows {
            for &c in &cols {
                let (mut pr, mut pc) = (r, c);
                if jitter > 0.0 {
                    let a = jitter * step;
                    pr = (pr + rng.random_range(-a..=a)).clamp(0.0, max_r);
                    pc = (pc + rng.random_range(-a..=a)).clamp(0.0, max_c);
                }
                positions.push((pr, pc));
            }
        }
        let grid = Self {
            positions,
            step,
            jitter_seed: seed,
            overlap: 1.0 - step / probe_extent,
        };
        grid.validate(object, window)?;
        Ok(grid)
    }

    /// Positions rounded to whole pixels.
    pub fn pixel_positions(&self) -> Vec<(usize, usize)> {
        self.positions
            .iter()
            .map(|&(r, c)| (r.round() as usize, c.round() as usize))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn validate(&self, object: (usize, usize), window: (usize, usize)) -> Result<()> {
        if self.positions.len() < 4 {
            return Err(Error::Geometry(format!(
                "at least 4 scan positions required, got {}",
                self.positions.len()
            )));
        }
        for &(r, c) in &self.positions {
            if !(r.is_finite() && c.is_finite() && r >= -0.5 && c >= -0.5) {
                return Err(Error::Geometry(format!("invalid position ({r}, {c})")));
            }
            let (pr, pc) = (r.round() as usize, c.round() as usize);
            if pr + window.0 > object.0 || pc + window.1 > object.1 {
                return Err(Error::Geometry(format!(
                    "probe window at ({pr}, {pc}) exceeds the {}x{} object",
                    object.0, object.1
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `J x H_p x W_p` intensities.
    pub patterns: RealField,
    pub scan: ScanGrid,
    pub probe: Probe,
    pub object_shape: Shape,
    pub slice_spacing: f64,
    pub reference: Option<ComplexField>,
    pub archetype: Option<Archetype>,
    /// `None` for noiseless data.
    pub photons_per_pattern: Option<f64>,
    /// Factor applied to `|fft2(exit)|^2` before sampling.
    pub intensity_scale: f64,
    pub seed: u64,
}

/// Copies the probe-sized window at `(r0, c0)` of slice `s` into `out`.
pub fn extract_view(obj: &ComplexField, s: usize, r0: usize, c0: usize, out: &mut [Complex64], hp: usize, wp: usize) {
    let w = obj.shape().cols;
    let plane = obj.slice(s);
    for r in 0..hp {
        let src = (r0 + r) * w + c0;
        out[r * wp..(r + 1) * wp].copy_from_slice(&plane[src..src + wp]);
    }
}

/// Exit wave for one position: multiply by each slice in turn, propagating
/// between consecutive slices.
pub fn exit_wave(
    obj: &ComplexField,
    probe: &ComplexField,
    pos: (usize, usize),
    propagator: Option<&Propagator>,
    view: &mut [Complex64],
    out: &mut [Complex64],
) {
    let sh = probe.shape();
    out.copy_from_slice(probe.data());
    for s in 0..obj.shape().slices {
        if s > 0 {
            if let Some(p) = propagator {
                p.apply(out);
            }
        }
        extract_view(obj, s, pos.0, pos.1, view, sh.rows, sh.cols);
        for (o, v) in out.iter_mut().zip(view.iter()) {
            *o *= *v;
        }
    }
}

/// Simulates one diffraction pattern per scan position.
///
/// `photons_per_pattern` of `f64::INFINITY` gives noiseless data with unit
/// intensity scale; otherwise patterns are scaled so their mean total equals
/// the budget and Poisson-sampled with per-position streams.
pub fn simulate_diffraction(
    obj: &ComplexField,
    probe: &Probe,
    scan: &ScanGrid,
    slice_spacing: f64,
    photons_per_pattern: f64,
    seed: u64,
) -> Result<Dataset> {
    if !(photons_per_pattern > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "photon budget must be positive, got {photons_per_pattern}"
        )));
    }
    let osh = obj.shape();
    if !obj.is_finite() {
        return Err(Error::NonFinite("object".into()));
    }
    let (hp, wp) = (probe.rows(), probe.cols());
    scan.validate((osh.rows, osh.cols), (hp, wp))?;
    let propagator = if osh.slices > 1 && slice_spacing != 0.0 {
        Some(Propagator::new(hp, wp, slice_spacing, probe.wavelength, probe.pixel_size)?)
    } else {
        None
    };
    let plan = Fft2::new(hp, wp);
    let n = hp * wp;
    let positions = scan.pixel_positions();
    let j_count = positions.len();
    let mut intensities = Vec::with_capacity(j_count * n);
    let mut view = vec![Complex64::new(0.0, 0.0); n];
    let mut wave = vec![Complex64::new(0.0, 0.0); n];
    for &pos in &positions {
        exit_wave(obj, &probe.values, pos, propagator.as_ref(), &mut view, &mut wave);
        plan.forward(&mut wave);
        intensities.extend(wave.iter().map(|z| z.norm_sqr()));
    }
    let noiseless = photons_per_pattern.is_infinite();
    let scale = if noiseless {
        1.0
    } else {
        let mean_total = intensities.iter().sum::<f64>() / j_count as f64;
        if !(mean_total > 0.0) {
            return Err(Error::InvalidArgument("exit waves carry no intensity".into()));
        }
        photons_per_pattern / mean_total
    };
    if !noiseless {
        for (j, pattern) in intensities.chunks_exact_mut(n).enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[j as u64]));
            for v in pattern.iter_mut() {
                let lam = *v * scale;
                *v = if lam > 0.0 {
                    Poisson::new(lam)
                        .map_err(|e| Error::InvalidArgument(e.to_string()))?
                        .sample(&mut rng)
                } else {
                    0.0
                };
            }
        }
    }
    let patterns = RealField::from_vec(Shape::new(j_count, hp, wp)?, intensities)?;
    Ok(Dataset {
        patterns,
        scan: scan.clone(),
        probe: probe.clone(),
        object_shape: osh,
        slice_spacing: if osh.slices > 1 { slice_spacing } else { 0.0 },
        reference: Some(obj.clone()),
        archetype: None,
        photons_per_pattern: if noiseless { None } else { Some(photons_per_pattern) },
        intensity_scale: scale,
        seed,
    })
}

/// Everything needed to reproduce a simulated dataset for an archetype.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSetup {
    pub archetype: Archetype,
    pub size: usize,
    pub slices: usize,
    pub seed: u64,
    /// `None` for noiseless data.
    pub photons: Option<f64>,
    pub probe_size: usize,
    pub probe: ProbeKind,
    /// Quadratic probe phase in radians per squared pixel.
    pub defocus: f64,
    pub step: f64,
    pub jitter: f64,
    pub pixel_size: f64,
    pub wavelength: f64,
    /// Slice separation; `None` picks a Fresnel number of one over the probe
    /// radius.
    pub slice_spacing: Option<f64>,
}

impl SimSetup {
    /// Desk-scale defaults: a 32-pixel probe window over the object, coarse
    /// scan for `ic`, low dose for `apoferritin`, noiseless `multislice`.
    pub fn for_archetype(archetype: Archetype, size: usize, seed: u64) -> Self {
        let radius = 10.0;
        let (step, photons) = match archetype {
            Archetype::Ic => (12.0, None),
            Archetype::Multislice => (6.0, None),
            Archetype::Apoferritin => (6.0, Some(2e4)),
        };
        Self {
            archetype,
            size,
            slices: archetype.slices(),
            seed,
            photons,
            probe_size: 32,
            probe: ProbeKind::Disk { radius },
            defocus: 0.02,
            step,
            jitter: 0.1,
            pixel_size: 1.0,
            wavelength: 1.0,
            slice_spacing: None,
        }
    }

    pub fn probe_radius(&self) -> f64 {
        match self.probe {
            ProbeKind::Disk { radius } => radius,
            ProbeKind::Gaussian { sigma } => 2.0 * sigma,
        }
    }

    /// Slice separation in length units: explicit, or `a^2 / lambda` for
    /// probe radius `a` (Fresnel number one).
    pub fn resolved_slice_spacing(&self) -> f64 {
        if self.slices < 2 {
            return 0.0;
        }
        self.slice_spacing.unwrap_or_else(|| {
            let a = self.probe_radius() * self.pixel_size;
            a * a / self.wavelength
        })
    }

    pub fn build(&self) -> Result<Dataset> {
        let shape = Shape::new(self.slices, self.size, self.size)?;
        let obj = make_phantom(self.archetype, shape, self.seed)?;
        let probe = make_probe(
            self.probe_size,
            self.probe_size,
            self.probe,
            self.pixel_size,
            self.wavelength,
        )?
        .with_defocus(self.defocus);
        let scan = ScanGrid::raster(
            (self.size, self.size),
            (self.probe_size, self.probe_size),
            self.step,
            probe.extent(),
            self.jitter,
            derive_seed(self.seed, &[0x5CA4]),
        )?;
        let mut ds = simulate_diffraction(
            &obj,
            &probe,
            &scan,
            self.resolved_slice_spacing(),
            self.photons.unwrap_or(f64::INFINITY),
            derive_seed(self.seed, &[0x4015E]),
        )?;
        ds.archetype = Some(self.archetype);
        Ok(ds)
    }
}

impl fmt::Display for SimSetup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let photons: String = match self.photons {
            Some(p) => format!("{p}"),
            None => "inf".into(),
        };
        write!(
            f,
            "{} {}x{}x{} seed={} photons={} step={}",
            self.archetype, self.slices, self.size, self.size, self.seed, photons, self.step
        )
    }
}
