//! On-disk formats.
//!
//! Fields are stored as `.ptyf` files: the line `PTYF1`, one line of JSON
//! header (`{"kind":"real"|"complex","slices":S,"rows":H,"cols":W}`), then
//! little-endian `f64` samples in slice-major row-major order (complex
//! fields interleave re, im). A dataset directory holds `dataset.json`
//! plus `patterns.ptyf`, `probe.ptyf` and, when known, `reference.ptyf`.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use ptylab_core::evolution::{AlgorithmRecord, DiscoveryState};
use ptylab_core::sim::{Archetype, Dataset, Probe, ScanGrid};
use ptylab_core::{stats, Complex64, ComplexField, RealField, Shape};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, AppResult};

const MAGIC: &str = "PTYF1";

#[derive(Debug, Serialize, Deserialize)]
struct FieldHeader {
    kind: String,
    slices: usize,
    rows: usize,
    cols: usize,
}

fn write_field(path: &Path, kind: &str, shape: Shape, samples: impl Iterator<Item = f64>) -> AppResult<()> {
    let header = FieldHeader {
        kind: kind.into(),
        slices: shape.slices,
        rows: shape.rows,
        cols: shape.cols,
    };
    let mut buf = Vec::new();
    writeln!(buf, "{MAGIC}")?;
    writeln!(buf, "{}", serde_json::to_string(&header)?)?;
    for v in samples {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| AppError::io(path, e))
}

fn read_field(path: &Path, kind: &str) -> AppResult<(Shape, Vec<f64>)> {
    let file = fs::File::open(path).map_err(|e| AppError::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut line = String::new();
    r.read_line(&mut line)?;
    if line.trim_end() != MAGIC {
        return Err(AppError::Format(format!("{}: not a field file", path.display())));
    }
    line.clear();
    r.read_line(&mut line)?;
    let h: FieldHeader = serde_json::from_str(&line)
        .map_err(|e| AppError::Format(format!("{}: bad header: {e}", path.display())))?;
    if h.kind != kind {
        return Err(AppError::Format(format!("{}: expected {kind} field, found {}", path.display(), h.kind)));
    }
    let shape = Shape::new(h.slices, h.rows, h.cols)?;
    let per = if kind == "complex" { 2 } else { 1 };
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != shape.len() * per * 8 {
        return Err(AppError::Format(format!(
            "{}: expected {} samples, found {} bytes",
            path.display(),
            shape.len() * per,
            bytes.len()
        )));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((shape, values))
}

pub fn write_real(path: &Path, f: &RealField) -> AppResult<()> {
    write_field(path, "real", f.shape(), f.data().iter().copied())
}

pub fn read_real(path: &Path) -> AppResult<RealField> {
    let (shape, v) = read_field(path, "real")?;
    Ok(RealField::from_vec(shape, v)?)
}

pub fn write_complex(path: &Path, f: &ComplexField) -> AppResult<()> {
    write_field(path, "complex", f.shape(), f.data().iter().flat_map(|z| [z.re, z.im]))
}

pub fn read_complex(path: &Path) -> AppResult<ComplexField> {
    let (shape, v) = read_field(path, "complex")?;
    let data = v.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect();
    Ok(ComplexField::from_vec(shape, data)?)
}

/// Scalar metadata of a dataset; arrays live in sibling field files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub archetype: Option<Archetype>,
    pub object_shape: Shape,
    pub scan: ScanGrid,
    pub pixel_size: f64,
    pub wavelength: f64,
    pub slice_spacing: f64,
    pub photons_per_pattern: Option<f64>,
    pub intensity_scale: f64,
    pub seed: u64,
}

pub fn save_dataset(dir: &Path, ds: &Dataset) -> AppResult<()> {
    fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    let meta = DatasetMeta {
        archetype: ds.archetype,
        object_shape: ds.object_shape,
        scan: ds.scan.clone(),
        pixel_size: ds.probe.pixel_size,
        wavelength: ds.probe.wavelength,
        slice_spacing: ds.slice_spacing,
        photons_per_pattern: ds.photons_per_pattern,
        intensity_scale: ds.intensity_scale,
        seed: ds.seed,
    };
    write_json(&dir.join("dataset.json"), &meta)?;
    write_real(&dir.join("patterns.ptyf"), &ds.patterns)?;
    write_complex(&dir.join("probe.ptyf"), &ds.probe.values)?;
    if let Some(r) = &ds.reference {
        write_complex(&dir.join("reference.ptyf"), r)?;
    }
    Ok(())
}

pub fn load_dataset(dir: &Path) -> AppResult<Dataset> {
    let meta: DatasetMeta = read_json(&dir.join("dataset.json"))?;
    let reference_path = dir.join("reference.ptyf");
    let reference = if reference_path.exists() {
        Some(read_complex(&reference_path)?)
    } else {
        None
    };
    Ok(Dataset {
        patterns: read_real(&dir.join("patterns.ptyf"))?,
        scan: meta.scan,
        probe: Probe {
            values: read_complex(&dir.join("probe.ptyf"))?,
            pixel_size: meta.pixel_size,
            wavelength: meta.wavelength,
        },
        object_shape: meta.object_shape,
        slice_spacing: meta.slice_spacing,
        reference,
        archetype: meta.archetype,
        photons_per_pattern: meta.photons_per_pattern,
        intensity_scale: meta.intensity_scale,
        seed: meta.seed,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> AppResult<()> {
    let text = serde_json::to_string_pretty(value)?;
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> AppResult<T> {
    let text = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| AppError::Format(format!("{}: {e}", path.display())))
}

/// Writes through a temporary sibling and renames, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> AppResult<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| AppError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| AppError::io(path, e))
}

pub fn history_line(record: &AlgorithmRecord) -> String {
    serde_json::to_string(record).expect("record serializes")
}

pub fn append_history(path: &Path, record: &AlgorithmRecord) -> AppResult<()> {
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| AppError::io(path, e))?;
    writeln!(f, "{}", history_line(record))?;
    Ok(())
}

pub fn write_history(path: &Path, records: &[AlgorithmRecord]) -> AppResult<()> {
    let mut text = String::new();
    for r in records {
        text.push_str(&history_line(r));
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}

pub fn read_history(path: &Path) -> AppResult<Vec<AlgorithmRecord>> {
    let text = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| AppError::Format(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

pub fn checkpoint_path(dir: &Path, generation: u64) -> PathBuf {
    dir.join(format!("checkpoint-{generation}.json"))
}

pub fn write_checkpoint(dir: &Path, state: &DiscoveryState) -> AppResult<PathBuf> {
    let path = checkpoint_path(dir, state.next_generation);
    write_atomic(&path, state.to_json().as_bytes())?;
    Ok(path)
}

/// The checkpoint with the highest generation number, if any.
pub fn latest_checkpoint(dir: &Path) -> AppResult<Option<PathBuf>> {
    if !dir.exists() {
        return Ok(None);
    }
    let mut best: Option<(u64, PathBuf)> = None;
    for entry in fs::read_dir(dir).map_err(|e| AppError::io(dir, e))? {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
        let Some(g) = name
            .strip_prefix("checkpoint-")
            .and_then(|r| r.strip_suffix(".json"))
            .and_then(|n| n.parse::<u64>().ok())
        else {
            continue;
        };
        if best.as_ref().is_none_or(|(b, _)| g > *b) {
            best = Some((g, path));
        }
    }
    Ok(best.map(|(_, p)| p))
}

pub fn read_checkpoint(path: &Path, expected_hash: &str) -> AppResult<DiscoveryState> {
    let text = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    DiscoveryState::from_json(&text, expected_hash)
        .map_err(|e| AppError::Checkpoint(format!("{}: {e}", path.display())))
}

/// Lower and upper display percentiles.
pub const PNG_WINDOW: (f64, f64) = (1.0, 99.0);

/// 8-bit grayscale PNG of one phase plane, linearly mapped from its
/// `[p1, p99]` window. The window is recorded in a `tEXt` chunk.
pub fn phase_png(obj: &ComplexField, slice: usize) -> AppResult<Vec<u8>> {
    let sh = obj.shape();
    if slice >= sh.slices {
        return Err(AppError::NotFound(format!("layer {slice} of {}", sh.slices)));
    }
    let phase: Vec<f64> = obj.slice(slice).iter().map(|z| z.arg()).collect();
    let lo = stats::percentile(&phase, PNG_WINDOW.0);
    let hi = stats::percentile(&phase, PNG_WINDOW.1);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let pixels: Vec<u8> = phase
        .iter()
        .map(|&p| (((p - lo) / span).clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, sh.cols as u32, sh.rows as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        enc.add_text_chunk(
            "window".into(),
            format!("phase p{}={lo:.6} p{}={hi:.6}", PNG_WINDOW.0, PNG_WINDOW.1),
        )
        .map_err(|e| AppError::Format(e.to_string()))?;
        let mut w = enc.write_header().map_err(|e| AppError::Format(e.to_string()))?;
        w.write_image_data(&pixels).map_err(|e| AppError::Format(e.to_string()))?;
    }
    Ok(out)
}
