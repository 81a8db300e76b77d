//! Deterministic spec generation: archetype templates with random
//! parameters, tuning, crossover and mutation. Every function is a pure
//! function of its inputs and seed, and every output validates.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

#[allow(unused_imports)] // inherent when std is linked (e.g. by dev-dependencies)
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::discovery::{Correction, GenerationContext, ParentInfo, ProposalError, SpecBackend};
use crate::error::{Error, Result};
use crate::evolution::ActionChoice;
use crate::pipeline::{lookup, validate, OpClass, OpSpec, ParamKind, ParamScale, ParamSchema, ParamValue, PipelineSpec};
use crate::sim::Archetype;

/// Operators each archetype's templates and insertions draw from.
pub fn family(archetype: Archetype) -> &'static [&'static str] {
    match archetype {
        Archetype::Multislice => &[
            "contrast_tv_weight",
            "charbonnier_tv3d",
            "gradient_exclusion",
            "gram_orthogonality",
            "spectral_mask",
            "robust_clamp",
            "complex_adam",
            "slice_l2_renorm",
        ],
        Archetype::Ic => &[
            "build_notch_mask",
            "aniso_huber_amp",
            "phase_weighted_tv",
            "complex_tv",
            "apply_notch",
            "softplus_amplitude",
        ],
        Archetype::Apoferritin => &[
            "soft_huber_shrink",
            "guided_filter_cascade",
            "itoh_unwrap",
            "perona_malik",
            "l2_anchor_blend",
        ],
    }
}

/// Multiplicative noise used by tuning and the perturb branch of mutation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TuneNoise {
    /// Standard deviation of the log-normal factor on log-scale params.
    pub log_sigma: f64,
    /// Half-width of the uniform relative change on linear params.
    pub linear_frac: f64,
}

impl TuneNoise {
    pub const ZERO: Self = Self {
        log_sigma: 0.0,
        linear_frac: 0.0,
    };
}

impl Default for TuneNoise {
    fn default() -> Self {
        Self {
            log_sigma: 0.25,
            linear_frac: 0.10,
        }
    }
}

fn snap(schema: &ParamSchema, v: f64) -> f64 {
    let v = v.clamp(schema.min, schema.max);
    match schema.kind {
        ParamKind::Int => v.round().clamp(schema.min, schema.max),
        ParamKind::EvenInt => {
            let e = (v / 2.0).round() * 2.0;
            if e > schema.max {
                e - 2.0
            } else if e < schema.min {
                e + 2.0
            } else {
                e
            }
        }
        _ => v,
    }
}

fn sample(schema: &ParamSchema, rng: &mut ChaCha8Rng) -> ParamValue {
    match (schema.kind, schema.scale) {
        (ParamKind::Bool, _) => ParamValue::Bool(rng.random_bool(0.5)),
        (ParamKind::Int, _) => ParamValue::Num(rng.random_range(schema.min as i64..=schema.max as i64) as f64),
        (ParamKind::EvenInt, _) => {
            let lo = (schema.min / 2.0).ceil() as i64;
            let hi = (schema.max / 2.0).floor() as i64;
            ParamValue::Num((2 * rng.random_range(lo..=hi)) as f64)
        }
        (ParamKind::Real, ParamScale::Log) => {
            let u = rng.random_range(schema.min.ln()..=schema.max.ln());
            ParamValue::Num(snap(schema, u.exp()))
        }
        (ParamKind::Real, ParamScale::Linear) => ParamValue::Num(rng.random_range(schema.min..=schema.max)),
    }
}

fn sampled_op(name: &str, rng: &mut ChaCha8Rng) -> OpSpec {
    let entry = lookup(name).expect("family op is registered");
    let mut op = OpSpec::new(name);
    for p in entry.params {
        op.params.insert(p.name.to_string(), sample(p, rng));
    }
    order_shrink_bounds(&mut op);
    op
}

fn default_op(name: &str) -> OpSpec {
    let entry = lookup(name).expect("family op is registered");
    let mut op = OpSpec::new(name);
    for p in entry.params {
        op.params.insert(p.name.to_string(), p.default_value());
    }
    op
}

/// Keeps `k_min <= k_max` for the shrinkage op.
fn order_shrink_bounds(op: &mut OpSpec) {
    if op.name != "soft_huber_shrink" {
        return;
    }
    let (Some(a), Some(b)) = (
        op.value("k_min").and_then(|v| v.as_f64()),
        op.value("k_max").and_then(|v| v.as_f64()),
    ) else {
        return;
    };
    if a > b {
        op.params.insert("k_min".into(), ParamValue::Num(b));
        op.params.insert("k_max".into(), ParamValue::Num(a));
    }
}

fn template_ops(archetype: Archetype, rng: &mut ChaCha8Rng) -> Vec<&'static str> {
    let mut pick = |p: f64| rng.random_bool(p);
    let mut ops: Vec<&'static str> = Vec::new();
    match archetype {
        Archetype::Multislice => {
            if pick(0.5) {
                ops.push("contrast_tv_weight");
            }
            let producers = ["charbonnier_tv3d", "gradient_exclusion", "gram_orthogonality", "spectral_mask"];
            let mut chosen: Vec<&'static str> = producers.iter().copied().filter(|_| pick(0.5)).collect();
            if chosen.is_empty() {
                chosen.push(producers[rng.random_range(0..producers.len())]);
            }
            ops.extend(chosen);
            if rng.random_bool(0.5) {
                ops.push("robust_clamp");
            }
            ops.push("complex_adam");
            ops.push("slice_l2_renorm");
        }
        Archetype::Ic => {
            let notch = pick(0.5);
            if notch {
                ops.push("build_notch_mask");
            }
            let core = ["aniso_huber_amp", "phase_weighted_tv", "complex_tv"];
            let mut chosen: Vec<&'static str> = core.iter().copied().filter(|_| pick(0.5)).collect();
            if chosen.is_empty() {
                chosen.push(core[rng.random_range(0..core.len())]);
            }
            ops.extend(chosen);
            if notch {
                ops.push("apply_notch");
            }
            if rng.random_bool(0.5) {
                ops.push("softplus_amplitude");
            }
        }
        Archetype::Apoferritin => {
            let all = ["soft_huber_shrink", "guided_filter_cascade", "itoh_unwrap", "perona_malik"];
            let mut chosen: Vec<&'static str> = all.iter().copied().filter(|_| pick(0.5)).collect();
            if chosen.is_empty() {
                chosen.push(all[rng.random_range(0..all.len())]);
            }
            ops.extend(chosen);
            if rng.random_bool(0.5) {
                ops.push("l2_anchor_blend");
            }
        }
    }
    ops
}

/// A fresh spec from the archetype's template family.
pub fn scripted_generate(archetype: Archetype, seed: u64) -> PipelineSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names = template_ops(archetype, &mut rng);
    let ops: Vec<OpSpec> = names.iter().map(|n| sampled_op(n, &mut rng)).collect();
    let spec = PipelineSpec::new(ops, format!("{} template: {}", archetype.as_str(), names.join(" > ")));
    debug_assert!(validate(&spec).is_empty(), "template produced an invalid spec");
    spec
}

fn perturb(spec: &PipelineSpec, noise: TuneNoise, rng: &mut ChaCha8Rng) -> PipelineSpec {
    let mut out = spec.clone();
    for op in &mut out.ops {
        let Some(entry) = lookup(&op.name) else { continue };
        for p in entry.params {
            if p.kind == ParamKind::Bool {
                continue;
            }
            let Some(v) = op.value(p.name).and_then(|v| v.as_f64()) else { continue };
            let factor = match p.scale {
                ParamScale::Log => {
                    let n: f64 = StandardNormal.sample(rng);
                    (noise.log_sigma * n).exp()
                }
                ParamScale::Linear => 1.0 + noise.linear_frac * rng.random_range(-1.0..=1.0),
            };
            let nv = snap(p, v * factor);
            if nv != v {
                op.params.insert(p.name.to_string(), ParamValue::Num(nv));
            }
        }
        if op.name == "soft_huber_shrink" {
            let a = op.value("k_min").and_then(|v| v.as_f64());
            let b = op.value("k_max").and_then(|v| v.as_f64());
            if let (Some(a), Some(b)) = (a, b) {
                if a > b {
                    op.params.insert("k_min".into(), ParamValue::Num(b));
                }
            }
        }
    }
    out
}

/// Same op list, parameters jittered within registry bounds.
pub fn scripted_tune(parent: &PipelineSpec, seed: u64, noise: TuneNoise) -> PipelineSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    perturb(parent, noise, &mut rng)
}

fn mean_param(schema: Option<&ParamSchema>, a: ParamValue, b: ParamValue) -> ParamValue {
    match (a, b) {
        (ParamValue::Num(x), ParamValue::Num(y)) => {
            let m = if x == y {
                x
            } else if x > 0.0 && y > 0.0 {
                (x * y).sqrt()
            } else {
                0.5 * (x + y)
            };
            ParamValue::Num(schema.map_or(m, |s| snap(s, m)))
        }
        _ => a,
    }
}

fn class_of(op: &OpSpec) -> Option<OpClass> {
    lookup(&op.name).map(|e| e.class)
}

/// Merges two parents. The higher-scoring parent's order and step-applier
/// win; ops from the other parent are placed after their predecessor there.
pub fn scripted_crossover(p1: &ParentInfo, p2: &ParentInfo) -> PipelineSpec {
    let (a, b) = if p1.score >= p2.score { (&p1.spec, &p2.spec) } else { (&p2.spec, &p1.spec) };
    let mut merged: Vec<OpSpec> = Vec::new();
    for op in &a.ops {
        if !merged.iter().any(|m| m.name == op.name) {
            merged.push(op.clone());
        }
    }
    let mut prev: Option<&str> = None;
    for op in &b.ops {
        if let Some(m) = merged.iter_mut().find(|m| m.name == op.name) {
            let entry = lookup(&op.name);
            let keys: alloc::collections::BTreeSet<String> =
                m.params.keys().chain(op.params.keys()).cloned().collect();
            for k in keys {
                if let (Some(x), Some(y)) = (m.value(&k), op.value(&k)) {
                    let schema = entry.and_then(|e| e.param(&k));
                    m.params.insert(k, mean_param(schema, x, y));
                }
            }
        } else {
            let at = prev
                .and_then(|p| merged.iter().position(|m| m.name == p))
                .map_or(0, |i| i + 1);
            merged.insert(at, op.clone());
        }
        prev = Some(op.name.as_str());
    }

    // Exactly one step-applier, the preferred parent's when it has one.
    let stepper = a
        .ops
        .iter()
        .chain(&b.ops)
        .find(|o| class_of(o) == Some(OpClass::StepApplier))
        .map(|o| o.name.clone());
    let mut stepper_op = None;
    merged.retain(|o| {
        if class_of(o) != Some(OpClass::StepApplier) {
            return true;
        }
        if Some(&o.name) == stepper.as_ref() && stepper_op.is_none() {
            stepper_op = Some(o.clone());
        }
        false
    });
    let mut post: Vec<OpSpec> = Vec::new();
    merged.retain(|o| {
        let is_post = class_of(o) == Some(OpClass::PostNormalizer);
        if is_post {
            post.push(o.clone());
        }
        !is_post
    });
    if let Some(s) = stepper_op {
        let last_grad = merged
            .iter()
            .rposition(|o| matches!(class_of(o), Some(OpClass::GradientProducer | OpClass::GradientModifier)));
        if let Some(i) = last_grad {
            merged.insert(i + 1, s);
        }
    }
    merged.extend(post);

    let scale = if a.epoch_scale == b.epoch_scale {
        a.epoch_scale
    } else {
        (a.epoch_scale * b.epoch_scale).sqrt()
    };
    let child = PipelineSpec {
        ops: merged,
        description: a.description.clone(),
        epoch_scale: scale,
    };
    if validate(&child).is_empty() {
        child
    } else {
        a.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MutationKind {
    Perturb,
    Insert,
    Delete,
}

/// Perturbs (p = 0.5), inserts a family op (0.25) or deletes an op (0.25).
/// Structural branches that cannot produce a valid spec fall back to
/// perturbation.
pub fn scripted_mutate(parent: &PipelineSpec, archetype: Archetype, seed: u64) -> (PipelineSpec, MutationKind) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u: f64 = rng.random_range(0.0..1.0);
    if (0.5..0.75).contains(&u) {
        let mut pool: Vec<&str> = family(archetype)
            .iter()
            .copied()
            .filter(|n| !parent.ops.iter().any(|o| o.name == *n))
            .collect();
        pool.shuffle(&mut rng);
        for name in pool {
            let mut positions: Vec<usize> = (0..=parent.ops.len()).collect();
            positions.shuffle(&mut rng);
            for at in positions {
                let mut child = parent.clone();
                child.ops.insert(at, default_op(name));
                if validate(&child).is_empty() {
                    return (child, MutationKind::Insert);
                }
            }
        }
    } else if u >= 0.75 && parent.ops.len() > 1 {
        let mut idx: Vec<usize> = (0..parent.ops.len()).collect();
        idx.shuffle(&mut rng);
        for i in idx {
            let mut child = parent.clone();
            child.ops.remove(i);
            if validate(&child).is_empty() {
                return (child, MutationKind::Delete);
            }
        }
    }
    (perturb(parent, TuneNoise::default(), &mut rng), MutationKind::Perturb)
}

/// Backend that answers every action with the scripted operators.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ScriptedBackend {
    pub noise: TuneNoise,
}

fn arity(ctx: &GenerationContext, n: usize) -> Result<&[ParentInfo]> {
    if ctx.parents.len() == n {
        Ok(&ctx.parents)
    } else {
        Err(Error::InvalidArgument(format!(
            "action needs {n} parent(s), context has {}",
            ctx.parents.len()
        )))
    }
}

impl ScriptedBackend {
    pub fn respond(&self, ctx: &GenerationContext) -> Result<PipelineSpec> {
        Ok(match &ctx.action {
            ActionChoice::Generate => scripted_generate(ctx.archetype, ctx.seed),
            ActionChoice::Tune { .. } => scripted_tune(&arity(ctx, 1)?[0].spec, ctx.seed, self.noise),
            ActionChoice::Crossover { .. } => {
                let p = arity(ctx, 2)?;
                scripted_crossover(&p[0], &p[1])
            }
            ActionChoice::Mutate { .. } => scripted_mutate(&arity(ctx, 1)?[0].spec, ctx.archetype, ctx.seed).0,
        })
    }
}

impl SpecBackend for ScriptedBackend {
    fn propose(
        &mut self,
        ctx: &GenerationContext,
        _corrections: &[Correction],
    ) -> core::result::Result<PipelineSpec, ProposalError> {
        self.respond(ctx).map_err(|e| ProposalError::Invalid {
            response: String::new(),
            message: e.to_string(),
        })
    }
}
