//! Declarative regularizer pipelines: an operator registry, the
//! `PipelineSpec` genome with its canonical JSON form and content id,
//! validation, and the executor that threads a [`RegState`].

use alloc::borrow::ToOwned;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

#[allow(unused_imports)] // inherent when std is linked (e.g. by dev-dependencies)
use num_traits::Float;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::field::{ComplexField, RealField};
use crate::recon::Regularizer;
use crate::regops::{self, ContrastWeight, RegState};

/// Longest allowed operator list.
pub const MAX_OPS: usize = 24;
/// Allowed range of the spec-level schedule stretch.
pub const EPOCH_SCALE_RANGE: (f64, f64) = (0.01, 100.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamScale {
    Linear,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Real,
    Int,
    /// Even integer.
    EvenInt,
    Bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ParamSchema {
    pub name: &'static str,
    pub default: f64,
    pub min: f64,
    pub max: f64,
    pub scale: ParamScale,
    pub kind: ParamKind,
}

impl ParamSchema {
    /// Log-scale real parameter bounded two decades either side of `default`.
    const fn log(name: &'static str, default: f64) -> Self {
        Self {
            name,
            default,
            min: default / 100.0,
            max: default * 100.0,
            scale: ParamScale::Log,
            kind: ParamKind::Real,
        }
    }

    const fn lin(name: &'static str, default: f64, min: f64, max: f64) -> Self {
        Self {
            name,
            default,
            min,
            max,
            scale: ParamScale::Linear,
            kind: ParamKind::Real,
        }
    }

    const fn int(name: &'static str, default: f64, min: f64, max: f64) -> Self {
        Self {
            kind: ParamKind::Int,
            ..Self::lin(name, default, min, max)
        }
    }

    const fn flag(name: &'static str, default: bool) -> Self {
        Self {
            kind: ParamKind::Bool,
            ..Self::lin(name, if default { 1.0 } else { 0.0 }, 0.0, 1.0)
        }
    }

    pub fn default_value(&self) -> ParamValue {
        match self.kind {
            ParamKind::Bool => ParamValue::Bool(self.default != 0.0),
            _ => ParamValue::Num(self.default),
        }
    }
}

/// How an operator participates in a pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpClass {
    /// Computes statistics consumed by later ops; leaves the object alone.
    Analysis,
    /// Adds to the pending gradient.
    GradientProducer,
    /// Rewrites the pending gradient.
    GradientModifier,
    /// Consumes the pending gradient to update the object.
    StepApplier,
    /// Rewrites the working object directly.
    FieldTransform,
    /// Runs after everything else, relative to the invocation's input.
    PostNormalizer,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OperatorEntry {
    pub name: &'static str,
    pub class: OpClass,
    pub params: &'static [ParamSchema],
    /// `RegState` fields the operator reads or writes.
    pub state: &'static [&'static str],
    pub summary: &'static str,
}

impl OperatorEntry {
    pub fn param(&self, name: &str) -> Option<&'static ParamSchema> {
        self.params.iter().find(|p| p.name == name)
    }
}

const CONTRAST: &[ParamSchema] = &[
    ParamSchema::log("lam_tv0", 3.9e-3),
    ParamSchema::log("k_logistic", 1.2),
];
const CHARBONNIER: &[ParamSchema] = &[
    ParamSchema::log("lam_depth", 6.8e-3),
    ParamSchema::log("d_char", 3.3e-2),
];
const EXCLUSION: &[ParamSchema] = &[
    ParamSchema::log("lam_excl", 1.9e-3),
    ParamSchema::log("d_char", 3.3e-2),
];
const GRAM: &[ParamSchema] = &[ParamSchema::log("lam_corr", 2.9e-3)];
const SPECTRAL: &[ParamSchema] = &[
    ParamSchema::log("lam_spec0", 1.4e-3),
    ParamSchema::lin("f_cut", 0.18, 0.01, 0.5),
    ParamSchema {
        kind: ParamKind::EvenInt,
        ..ParamSchema::lin("order", 6.0, 2.0, 12.0)
    },
];
const ADAM: &[ParamSchema] = &[
    ParamSchema::log("lr_base", 2.4e-2),
    ParamSchema::lin("warmup", 5.0, 0.0, 50.0),
    ParamSchema::lin("decay", 0.99, 0.9, 1.0),
    ParamSchema::lin("cos_start", 120.0, 10.0, 1000.0),
    ParamSchema::lin("beta1", 0.9, 0.5, 0.999),
    ParamSchema::lin("beta2", 0.999, 0.9, 0.99999),
    ParamSchema::log("step_clamp", 0.08),
];
const NOTCH_MASK: &[ParamSchema] = &[
    ParamSchema::int("k", 8.0, 1.0, 32.0),
    ParamSchema::log("sigma_frac", 0.01),
];
const ANISO: &[ParamSchema] = &[
    ParamSchema::log("lam_tv", 3e-3),
    ParamSchema::log("lam_tgv2", 1e-3),
    ParamSchema::lin("anisotropy", 4.0, 1.0, 16.0),
    ParamSchema::lin("tau0", 0.24, 0.01, 0.5),
    ParamSchema::log("huber_eps0", 1e-3),
    ParamSchema::log("tol", 5e-4),
    ParamSchema::int("max_iter", 25.0, 1.0, 100.0),
    ParamSchema::int("orient_every", 5.0, 1.0, 25.0),
    ParamSchema::flag("use_support", false),
];
const PHASE_TV: &[ParamSchema] = &[
    ParamSchema::log("lam_phi", 8e-4),
    ParamSchema::int("max_iter", 15.0, 1.0, 100.0),
    ParamSchema::lin("tau", 0.24, 0.01, 0.5),
    ParamSchema::log("huber_eps0", 1e-3),
    ParamSchema::log("tol", 5e-4),
];
const COMPLEX_TV: &[ParamSchema] = &[
    ParamSchema::log("lam_cplx", 5e-4),
    ParamSchema::int("iters", 2.0, 1.0, 20.0),
    ParamSchema::lin("tau", 0.24, 0.01, 0.5),
];
const APPLY_NOTCH: &[ParamSchema] = &[ParamSchema::log("lam_fft", 2e-3)];
const SOFTPLUS: &[ParamSchema] = &[ParamSchema::flag("use_support", false)];
const SHRINK: &[ParamSchema] = &[
    ParamSchema::log("k_min", 0.07),
    ParamSchema::log("k_max", 0.2),
    ParamSchema::log("var_center", 0.02),
    ParamSchema::log("var_gain", 25.0),
];
const GUIDED: &[ParamSchema] = &[
    ParamSchema::int("radius1", 1.0, 1.0, 8.0),
    ParamSchema::int("radius2", 2.0, 1.0, 8.0),
    ParamSchema::log("gauss_var_threshold", 0.1),
];
const PERONA: &[ParamSchema] = &[
    ParamSchema::log("lam_pm", 0.1),
    ParamSchema::lin("step", 0.1, 0.01, 0.25),
    ParamSchema::int("iters", 5.0, 1.0, 50.0),
];
const ANCHOR: &[ParamSchema] = &[ParamSchema::lin("alpha", 0.1, 0.0, 1.0)];

static REGISTRY: [OperatorEntry; 19] = [
    OperatorEntry {
        name: "contrast_tv_weight",
        class: OpClass::Analysis,
        params: CONTRAST,
        state: &[],
        summary: "per-slice TV weight from reciprocal and logistic contrast maps",
    },
    OperatorEntry {
        name: "charbonnier_tv3d",
        class: OpClass::GradientProducer,
        params: CHARBONNIER,
        state: &[],
        summary: "contrast-weighted 3-D Charbonnier total variation",
    },
    OperatorEntry {
        name: "gradient_exclusion",
        class: OpClass::GradientProducer,
        params: EXCLUSION,
        state: &[],
        summary: "penalty on edges shared across slices",
    },
    OperatorEntry {
        name: "gram_orthogonality",
        class: OpClass::GradientProducer,
        params: GRAM,
        state: &["rand_proj"],
        summary: "off-diagonal slice Gram penalty",
    },
    OperatorEntry {
        name: "spectral_mask",
        class: OpClass::GradientProducer,
        params: SPECTRAL,
        state: &["freq_cache", "iter_count"],
        summary: "complementary Butterworth masks by slice contrast",
    },
    OperatorEntry {
        name: "robust_clamp",
        class: OpClass::GradientModifier,
        params: &[],
        state: &[],
        summary: "median element clamp then per-slice norm clamp",
    },
    OperatorEntry {
        name: "complex_adam",
        class: OpClass::StepApplier,
        params: ADAM,
        state: &["adam_m", "adam_v", "adam_t", "iter_count"],
        summary: "complex Adam step with warm-up, decay and cosine tail",
    },
    OperatorEntry {
        name: "slice_l2_renorm",
        class: OpClass::PostNormalizer,
        params: &[],
        state: &[],
        summary: "restore per-slice L2 norms of the input",
    },
    OperatorEntry {
        name: "build_notch_mask",
        class: OpClass::Analysis,
        params: NOTCH_MASK,
        state: &["notch_mask"],
        summary: "detect periodic peaks in the first slice's amplitude spectrum",
    },
    OperatorEntry {
        name: "aniso_huber_amp",
        class: OpClass::FieldTransform,
        params: ANISO,
        state: &["support_mask"],
        summary: "structure-tensor anisotropic Huber-TV on the amplitude",
    },
    OperatorEntry {
        name: "phase_weighted_tv",
        class: OpClass::FieldTransform,
        params: PHASE_TV,
        state: &[],
        summary: "amplitude-weighted Huber-TV on the phase",
    },
    OperatorEntry {
        name: "complex_tv",
        class: OpClass::FieldTransform,
        params: COMPLEX_TV,
        state: &[],
        summary: "TV flow on real and imaginary parts",
    },
    OperatorEntry {
        name: "apply_notch",
        class: OpClass::FieldTransform,
        params: APPLY_NOTCH,
        state: &["notch_mask"],
        summary: "multiply the shifted spectrum by 1 - lam * mask",
    },
    OperatorEntry {
        name: "softplus_amplitude",
        class: OpClass::FieldTransform,
        params: SOFTPLUS,
        state: &["support_mask"],
        summary: "softplus activation on the amplitude",
    },
    OperatorEntry {
        name: "soft_huber_shrink",
        class: OpClass::FieldTransform,
        params: SHRINK,
        state: &["glob_var"],
        summary: "variance-gated soft-Huber shrinkage of the amplitude toward 1",
    },
    OperatorEntry {
        name: "guided_filter_cascade",
        class: OpClass::FieldTransform,
        params: GUIDED,
        state: &["glob_var"],
        summary: "two variance-weighted box-mean blends on the amplitude",
    },
    OperatorEntry {
        name: "itoh_unwrap",
        class: OpClass::FieldTransform,
        params: &[],
        state: &[],
        summary: "row-then-column phase unwrapping with mean removal",
    },
    OperatorEntry {
        name: "perona_malik",
        class: OpClass::FieldTransform,
        params: PERONA,
        state: &[],
        summary: "Perona-Malik diffusion of the phase",
    },
    OperatorEntry {
        name: "l2_anchor_blend",
        class: OpClass::FieldTransform,
        params: ANCHOR,
        state: &[],
        summary: "blend with the invocation's input object",
    },
];

pub fn registry() -> &'static [OperatorEntry] {
    &REGISTRY
}

pub fn lookup(name: &str) -> Option<&'static OperatorEntry> {
    REGISTRY.iter().find(|e| e.name == name)
}

/// A parameter value: numbers (integers included) or flags.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Bool(bool),
    Num(f64),
}

impl ParamValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Self::Num(v) => Some(*v),
            Self::Bool(_) => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Self::Bool(b) => Some(*b),
            Self::Num(_) => None,
        }
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Bool(b) => write!(f, "{b}"),
            Self::Num(v) => write!(f, "{v}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpSpec {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, ParamValue>,
}

impl OpSpec {
    pub fn new(name: &str) -> Self {
        Self {
            name: name.to_owned(),
            params: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.to_owned(), ParamValue::Num(value));
        self
    }

    pub fn with_flag(mut self, key: &str, value: bool) -> Self {
        self.params.insert(key.to_owned(), ParamValue::Bool(value));
        self
    }

    /// Explicit value or the registry default. Unknown ops or params yield
    /// `None`.
    pub fn value(&self, key: &str) -> Option<ParamValue> {
        if let Some(v) = self.params.get(key) {
            return Some(*v);
        }
        lookup(&self.name)?.param(key).map(|p| p.default_value())
    }

    fn num(&self, key: &str) -> f64 {
        self.value(key)
            .and_then(|v| v.as_f64())
            .expect("validated numeric parameter")
    }

    fn flag(&self, key: &str) -> bool {
        self.value(key)
            .and_then(|v| v.as_bool())
            .expect("validated flag parameter")
    }
}

/// An ordered operator list with free-text description. The id is derived
/// from content, never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineSpec {
    pub ops: Vec<OpSpec>,
    pub description: String,
    /// Multiplies the invocation counter seen by iteration-scheduled ops.
    pub epoch_scale: f64,
}

fn is_one(v: &f64) -> bool {
    *v == 1.0
}

fn one() -> f64 {
    1.0
}

/// Field order is alphabetical so the canonical JSON has sorted keys.
#[derive(Serialize, Deserialize)]
struct SpecDoc {
    description: String,
    #[serde(default = "one", skip_serializing_if = "is_one")]
    epoch_scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    ops: Vec<OpSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    technique_tags: Option<Vec<String>>,
}

impl PipelineSpec {
    pub fn new(ops: Vec<OpSpec>, description: impl Into<String>) -> Self {
        Self {
            ops,
            description: description.into(),
            epoch_scale: 1.0,
        }
    }

    pub fn with_epoch_scale(mut self, scale: f64) -> Self {
        self.epoch_scale = scale;
        self
    }

    fn doc(&self, annotated: bool) -> SpecDoc {
        SpecDoc {
            description: self.description.clone(),
            epoch_scale: self.epoch_scale,
            id: annotated.then(|| self.id()),
            ops: self.ops.clone(),
            technique_tags: annotated.then(|| self.technique_tags()),
        }
    }

    /// Sorted-key JSON without id or tags; the hashing input.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(&self.doc(false)).expect("spec serializes")
    }

    /// First 8 hex digits of the SHA-256 of [`Self::canonical_json`].
    pub fn id(&self) -> String {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        digest.iter().take(4).map(|b| format!("{b:02x}")).collect()
    }

    /// Distinct operator names in first-use order.
    pub fn technique_tags(&self) -> Vec<String> {
        let mut tags: Vec<String> = Vec::new();
        for op in &self.ops {
            if !tags.contains(&op.name) {
                tags.push(op.name.clone());
            }
        }
        tags
    }

    /// Canonical JSON plus `id` and `technique_tags`, for storage.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.doc(true)).expect("spec serializes")
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(&self.doc(true)).expect("spec serializes")
    }

    /// Parses either form. A stored id or tag list must match the content.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: SpecDoc = serde_json::from_str(text)
            .map_err(|e| Error::InvalidArgument(format!("pipeline spec: {e}")))?;
        Self::from_doc(doc)
    }

    fn from_doc(doc: SpecDoc) -> Result<Self> {
        let spec = Self {
            ops: doc.ops,
            description: doc.description,
            epoch_scale: doc.epoch_scale,
        };
        if let Some(id) = doc.id {
            if id != spec.id() {
                return Err(Error::InvalidArgument(format!(
                    "pipeline id {id} does not match content hash {}",
                    spec.id()
                )));
            }
        }
        if let Some(tags) = doc.technique_tags {
            if tags != spec.technique_tags() {
                return Err(Error::InvalidArgument("technique tags do not match ops".into()));
            }
        }
        Ok(spec)
    }

    /// Number of explicit plus default parameters across all ops.
    pub fn param_count(&self) -> usize {
        self.ops
            .iter()
            .map(|o| lookup(&o.name).map_or(o.params.len(), |e| e.params.len()))
            .sum()
    }
}

impl Serialize for PipelineSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> core::result::Result<S::Ok, S::Error> {
        self.doc(true).serialize(s)
    }
}

impl<'de> Deserialize<'de> for PipelineSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> core::result::Result<Self, D::Error> {
        Self::from_doc(SpecDoc::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

/// One reason a spec is rejected.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    /// Offending op, or `None` for spec-level problems.
    pub op_index: Option<usize>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.op_index {
            Some(i) => write!(f, "op {i}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

fn violation(op_index: Option<usize>, message: impl Into<String>) -> Violation {
    Violation {
        op_index,
        message: message.into(),
    }
}

/// Checks registry membership, parameter types and bounds, and composition.
/// An empty list means the spec is valid.
pub fn validate(spec: &PipelineSpec) -> Vec<Violation> {
    let mut out = Vec::new();
    if spec.ops.is_empty() || spec.ops.len() > MAX_OPS {
        out.push(violation(
            None,
            format!("pipeline must have 1..={MAX_OPS} ops, has {}", spec.ops.len()),
        ));
    }
    let (lo, hi) = EPOCH_SCALE_RANGE;
    if !(spec.epoch_scale >= lo && spec.epoch_scale <= hi) {
        out.push(violation(
            None,
            format!("epoch_scale {} outside [{lo}, {hi}]", spec.epoch_scale),
        ));
    }

    let mut pending_gradient = false;
    let mut steppers = 0;
    let mut seen_post = false;
    for (i, op) in spec.ops.iter().enumerate() {
        let Some(entry) = lookup(&op.name) else {
            out.push(violation(Some(i), format!("unknown operator '{}'", op.name)));
            continue;
        };
        for (key, value) in &op.params {
            let Some(schema) = entry.param(key) else {
                out.push(violation(Some(i), format!("unknown parameter '{key}' for {}", op.name)));
                continue;
            };
            match (schema.kind, value) {
                (ParamKind::Bool, ParamValue::Bool(_)) => {}
                (ParamKind::Bool, ParamValue::Num(_)) => {
                    out.push(violation(Some(i), format!("parameter '{key}' must be a boolean")));
                }
                (_, ParamValue::Bool(_)) => {
                    out.push(violation(Some(i), format!("parameter '{key}' must be a number")));
                }
                (kind, ParamValue::Num(v)) => {
                    let v = *v;
                    if !(v >= schema.min && v <= schema.max) {
                        out.push(violation(
                            Some(i),
                            format!(
                                "param out of bounds: '{key}' = {v} not in [{}, {}]",
                                schema.min, schema.max
                            ),
                        ));
                    } else if matches!(kind, ParamKind::Int | ParamKind::EvenInt) && v.fract() != 0.0 {
                        out.push(violation(Some(i), format!("parameter '{key}' must be an integer")));
                    } else if kind == ParamKind::EvenInt && (v as i64) % 2 != 0 {
                        out.push(violation(Some(i), format!("parameter '{key}' must be even")));
                    }
                }
            }
        }
        if op.name == "soft_huber_shrink" {
            if let (Some(ParamValue::Num(a)), Some(ParamValue::Num(b))) = (op.value("k_min"), op.value("k_max")) {
                if a > b {
                    out.push(violation(Some(i), "k_min must not exceed k_max"));
                }
            }
        }

        if seen_post && entry.class != OpClass::PostNormalizer {
            out.push(violation(Some(i), "post-normalizers must come last"));
        }
        match entry.class {
            OpClass::GradientProducer => pending_gradient = true,
            OpClass::GradientModifier if !pending_gradient => {
                out.push(violation(Some(i), format!("{} has no gradient to modify", op.name)));
            }
            OpClass::StepApplier => {
                steppers += 1;
                if steppers > 1 {
                    out.push(violation(Some(i), "at most one step-applier is allowed"));
                }
                if !pending_gradient {
                    out.push(violation(Some(i), format!("{} has no gradient to apply", op.name)));
                }
                pending_gradient = false;
            }
            OpClass::PostNormalizer => seen_post = true,
            _ => {}
        }
    }
    if pending_gradient {
        out.push(violation(
            None,
            "gradient-producing ops must be followed by a step-applier",
        ));
    }
    out
}

/// Working object in the representation the last op left it in.
enum Work {
    Complex(ComplexField),
    Polar { amp: RealField, phase: RealField },
}

impl Work {
    fn complex(&mut self) -> &mut ComplexField {
        if let Work::Polar { amp, phase } = self {
            let z = ComplexField::from_polar(amp, phase).expect("same shape");
            *self = Work::Complex(z);
        }
        match self {
            Work::Complex(z) => z,
            Work::Polar { .. } => unreachable!(),
        }
    }

    fn polar(&mut self) -> (&mut RealField, &mut RealField) {
        if let Work::Complex(z) = self {
            let (amp, phase) = (z.amplitude(), z.phase());
            *self = Work::Polar { amp, phase };
        }
        match self {
            Work::Polar { amp, phase } => (amp, phase),
            Work::Complex(_) => unreachable!(),
        }
    }

    fn into_complex(mut self) -> ComplexField {
        self.complex();
        match self {
            Work::Complex(z) => z,
            Work::Polar { .. } => unreachable!(),
        }
    }
}

/// Applies `f` to every slice of `x` as a single-plane field and restacks.
fn per_slice(x: &RealField, f: impl Fn(&RealField) -> Result<RealField>) -> Result<RealField> {
    let planes: Result<Vec<RealField>> = (0..x.shape().slices).map(|s| f(&x.plane(s))).collect();
    RealField::stack(&planes?)
}

/// Scratch shared by ops within one invocation.
struct Scratch {
    contrast: Option<ContrastWeight>,
    gradient: Option<ComplexField>,
}

/// Effective iteration for scheduled ops.
fn effective_iteration(spec: &PipelineSpec, state: &RegState) -> f64 {
    state.iter_count as f64 * spec.epoch_scale
}

fn default_contrast(x: &ComplexField) -> ContrastWeight {
    let e = lookup("contrast_tv_weight").expect("registered");
    regops::contrast_tv_weight(x, e.params[0].default, e.params[1].default)
}

fn add_gradient(scratch: &mut Scratch, g: ComplexField) -> Result<()> {
    match &mut scratch.gradient {
        Some(acc) => acc.add_assign(&g),
        None => {
            scratch.gradient = Some(g);
            Ok(())
        }
    }
}

fn run_op(
    op: &OpSpec,
    class: OpClass,
    work: &mut Work,
    input: &ComplexField,
    state: &mut RegState,
    scratch: &mut Scratch,
    it: f64,
) -> Result<()> {
    match op.name.as_str() {
        "contrast_tv_weight" => {
            scratch.contrast = Some(regops::contrast_tv_weight(
                work.complex(),
                op.num("lam_tv0"),
                op.num("k_logistic"),
            ));
        }
        "charbonnier_tv3d" => {
            let x = work.complex();
            let cw = scratch.contrast.get_or_insert_with(|| default_contrast(x)).clone();
            let g = regops::charbonnier_tv3d_grad(x, &cw.weight, op.num("lam_depth"), op.num("d_char"));
            add_gradient(scratch, g)?;
        }
        "gradient_exclusion" => {
            let g = regops::gradient_exclusion_grad(work.complex(), op.num("lam_excl"), op.num("d_char"));
            add_gradient(scratch, g)?;
        }
        "gram_orthogonality" => {
            let g = regops::gram_orthogonality_grad(work.complex(), op.num("lam_corr"), state);
            add_gradient(scratch, g)?;
        }
        "spectral_mask" => {
            let x = work.complex();
            let cw = scratch.contrast.get_or_insert_with(|| default_contrast(x)).clone();
            let p = regops::SpectralParams {
                lam_spec0: op.num("lam_spec0"),
                f_cut: op.num("f_cut"),
                order: op.num("order") as u32,
            };
            let g = regops::spectral_mask_grad(x, p, &cw.is_low(), it, state);
            add_gradient(scratch, g)?;
        }
        "robust_clamp" => {
            if let Some(g) = scratch.gradient.take() {
                scratch.gradient = Some(regops::robust_clamp(&g));
            }
        }
        "complex_adam" => {
            let p = regops::AdamParams {
                lr_base: op.num("lr_base"),
                warmup: op.num("warmup"),
                decay: op.num("decay"),
                cos_start: op.num("cos_start"),
                beta1: op.num("beta1"),
                beta2: op.num("beta2"),
                step_clamp: op.num("step_clamp"),
            };
            let x = work.complex();
            let g = scratch
                .gradient
                .take()
                .unwrap_or_else(|| ComplexField::zeros(x.shape()));
            *x = regops::complex_adam_step(x, &g, state, &p, it)?;
        }
        "slice_l2_renorm" => {
            let x = work.complex();
            *x = regops::slice_l2_renorm(x, input)?;
        }
        "build_notch_mask" => {
            let (amp, _) = work.polar();
            let mask = regops::build_notch_mask(&amp.plane(0), op.num("k") as usize, op.num("sigma_frac"))?;
            state.notch_mask = Some(mask);
        }
        "aniso_huber_amp" => {
            let p = regops::AmpLoopParams {
                lam_tv: op.num("lam_tv"),
                lam_tgv2: op.num("lam_tgv2"),
                anisotropy: op.num("anisotropy"),
                tau0: op.num("tau0"),
                huber_eps0: op.num("huber_eps0"),
                tol: op.num("tol"),
                max_iter: op.num("max_iter") as usize,
                orient_every: op.num("orient_every") as usize,
            };
            let support = if op.flag("use_support") {
                state.support_mask.clone()
            } else {
                None
            };
            let (amp, _) = work.polar();
            *amp = per_slice(amp, |a| {
                let m = support.as_ref().map(|m| {
                    if m.shape().slices == 1 {
                        m.clone()
                    } else {
                        m.plane(0)
                    }
                });
                regops::aniso_huber_amp_loop(a, m.as_ref(), &p).map(|r| r.amp)
            })?;
        }
        "phase_weighted_tv" => {
            let p = regops::PhaseLoopParams {
                lam_phi: op.num("lam_phi"),
                max_iter: op.num("max_iter") as usize,
                tau: op.num("tau"),
                huber_eps0: op.num("huber_eps0"),
                tol: op.num("tol"),
            };
            let (amp, phase) = work.polar();
            *phase = regops::phase_weighted_tv_loop(phase, amp, &p)?;
        }
        "complex_tv" => {
            let x = work.complex();
            *x = regops::complex_tv_steps(x, op.num("lam_cplx"), op.num("iters") as usize, op.num("tau"));
        }
        "apply_notch" => {
            if state.notch_mask.is_none() {
                let e = lookup("build_notch_mask").expect("registered");
                let (amp, _) = work.polar();
                state.notch_mask = Some(regops::build_notch_mask(
                    &amp.plane(0),
                    e.params[0].default as usize,
                    e.params[1].default,
                )?);
            }
            let mask = state.notch_mask.clone().expect("just built");
            let x = work.complex();
            *x = regops::apply_notch(x, &mask, op.num("lam_fft"))?;
        }
        "softplus_amplitude" => {
            let x = work.complex();
            let std = regops::ic::amplitude_std(x);
            let mut z = regops::softplus_amplitude(x, std);
            if op.flag("use_support") {
                if let Some(m) = &state.support_mask {
                    apply_support(&mut z, m)?;
                }
            }
            *x = z;
        }
        "soft_huber_shrink" => {
            let p = regops::ShrinkParams {
                k_min: op.num("k_min"),
                k_max: op.num("k_max"),
                var_center: op.num("var_center"),
                var_gain: op.num("var_gain"),
            };
            let (amp, _) = work.polar();
            let (out, glob_var) = regops::soft_huber_shrink(amp, &p);
            *amp = out;
            state.glob_var = Some(glob_var);
        }
        "guided_filter_cascade" => {
            let (amp, _) = work.polar();
            let glob_var = state.glob_var.unwrap_or_else(|| amp.variance());
            *amp = regops::guided_filter_cascade(
                amp,
                op.num("radius1") as usize,
                op.num("radius2") as usize,
                glob_var,
                op.num("gauss_var_threshold"),
            );
        }
        "itoh_unwrap" => {
            let (_, phase) = work.polar();
            *phase = regops::itoh_unwrap_2d(phase);
        }
        "perona_malik" => {
            let (_, phase) = work.polar();
            *phase = regops::perona_malik_diffuse(phase, op.num("lam_pm"), op.num("step"), op.num("iters") as usize);
        }
        "l2_anchor_blend" => {
            let x = work.complex();
            *x = regops::l2_anchor_blend(x, input, op.num("alpha"))?;
        }
        other => {
            return Err(Error::InvalidArgument(format!(
                "operator '{other}' ({class:?}) has no executor"
            )))
        }
    }
    Ok(())
}

/// Multiplies every slice by a one-slice mask, or slice-wise by a stack.
fn apply_support(z: &mut ComplexField, m: &RealField) -> Result<()> {
    let sh = z.shape();
    let ms = m.shape();
    if ms.rows != sh.rows || ms.cols != sh.cols || (ms.slices != 1 && ms.slices != sh.slices) {
        return Err(Error::ShapeMismatch {
            expected: sh,
            actual: ms,
        });
    }
    for s in 0..sh.slices {
        let mp = if ms.slices == 1 { m.slice(0) } else { m.slice(s) };
        for (v, w) in z.slice_mut(s).iter_mut().zip(mp) {
            *v *= *w;
        }
    }
    Ok(())
}

/// Runs a validated spec on `obj`, threading `state`.
///
/// Increments `state.iter_count` first, so the first call sees iteration 1.
/// Fails on an invalid spec, or with [`Error::Operator`] when an op errors or
/// produces non-finite values.
pub fn execute(spec: &PipelineSpec, obj: &ComplexField, state: &mut RegState) -> Result<ComplexField> {
    let violations = validate(spec);
    if let Some(v) = violations.first() {
        return Err(Error::InvalidArgument(format!(
            "invalid pipeline {}: {v}",
            spec.id()
        )));
    }
    if !obj.is_finite() {
        return Err(Error::NonFinite("pipeline input".into()));
    }
    state.ensure_shape(obj.shape());
    state.iter_count += 1;
    state.glob_var = None;
    let it = effective_iteration(spec, state);
    let mut work = Work::Complex(obj.clone());
    let mut scratch = Scratch {
        contrast: None,
        gradient: None,
    };
    for (index, op) in spec.ops.iter().enumerate() {
        let class = lookup(&op.name).expect("validated").class;
        let wrap = |e: Error| Error::Operator {
            index,
            op: op.name.clone(),
            message: e.to_string(),
        };
        run_op(op, class, &mut work, obj, state, &mut scratch, it).map_err(wrap)?;
        let finite = match &work {
            Work::Complex(z) => z.is_finite(),
            Work::Polar { amp, phase } => amp.is_finite() && phase.is_finite(),
        };
        if !finite {
            return Err(wrap(Error::NonFinite("operator output".into())));
        }
    }
    Ok(work.into_complex())
}

/// The three reference regularizers with their published hyper-parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalSpecs {
    pub multislice: PipelineSpec,
    pub ic: PipelineSpec,
    pub apoferritin: PipelineSpec,
}

impl CanonicalSpecs {
    pub fn for_archetype(&self, a: crate::sim::Archetype) -> &PipelineSpec {
        match a {
            crate::sim::Archetype::Multislice => &self.multislice,
            crate::sim::Archetype::Ic => &self.ic,
            crate::sim::Archetype::Apoferritin => &self.apoferritin,
        }
    }
}

/// Every registry parameter set explicitly to its default.
fn full(name: &str) -> OpSpec {
    let entry = lookup(name).expect("registered");
    let mut op = OpSpec::new(name);
    for p in entry.params {
        op.params.insert(p.name.to_string(), p.default_value());
    }
    op
}

pub fn canonical_specs() -> CanonicalSpecs {
    let multislice = PipelineSpec::new(
        [
            "contrast_tv_weight",
            "charbonnier_tv3d",
            "gradient_exclusion",
            "gram_orthogonality",
            "spectral_mask",
            "robust_clamp",
            "complex_adam",
            "slice_l2_renorm",
        ]
        .iter()
        .map(|n| full(n))
        .collect(),
        "multislice reference: contrast-weighted Charbonnier TV, slice exclusion, Gram \
         orthogonality and complementary spectral masks under complex Adam",
    );
    let ic = PipelineSpec::new(
        [
            "build_notch_mask",
            "aniso_huber_amp",
            "phase_weighted_tv",
            "complex_tv",
            "apply_notch",
            "softplus_amplitude",
        ]
        .iter()
        .map(|n| full(n))
        .collect(),
        "integrated-circuit reference: anisotropic amplitude TV, weighted phase TV, \
         complex TV and notch filtering",
    );
    let apoferritin = PipelineSpec::new(
        [
            "soft_huber_shrink",
            "guided_filter_cascade",
            "itoh_unwrap",
            "perona_malik",
            "l2_anchor_blend",
        ]
        .iter()
        .map(|n| full(n))
        .collect(),
        "apoferritin reference: shrinkage, guided filtering, unwrapping, diffusion and \
         an L2 anchor",
    );
    CanonicalSpecs {
        multislice,
        ic,
        apoferritin,
    }
}

/// A spec bound to its own [`RegState`], usable as a reconstruction hook.
#[derive(Debug, Clone)]
pub struct PipelineRunner {
    spec: PipelineSpec,
    id: String,
    state: RegState,
}

impl PipelineRunner {
    /// Fails when the spec does not validate.
    pub fn new(spec: PipelineSpec, seed: u64) -> Result<Self> {
        if let Some(v) = validate(&spec).first() {
            return Err(Error::InvalidArgument(format!("invalid pipeline: {v}")));
        }
        let id = spec.id();
        Ok(Self {
            spec,
            id,
            state: RegState::new(seed),
        })
    }

    pub fn with_support(mut self, mask: RealField) -> Self {
        self.state.support_mask = Some(mask);
        self
    }

    pub fn spec(&self) -> &PipelineSpec {
        &self.spec
    }

    pub fn state(&self) -> &RegState {
        &self.state
    }
}

impl Regularizer for PipelineRunner {
    fn regularize(&mut self, obj: &ComplexField) -> Result<ComplexField> {
        execute(&self.spec, obj, &mut self.state)
    }

    fn id(&self) -> Option<String> {
        Some(self.id.clone())
    }
}
