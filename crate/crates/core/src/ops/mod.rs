//! Named, typed image operations selected by a matcher.
//!
//! Ops are plugins of kind `op` whose provider is an [`OpCandidate`]. A
//! request names an op (fully, or by its trailing name segments) and carries
//! argument values; [`match_op`] scores every candidate with that name and
//! returns the best fit, ranked lexicographically by
//!
//! 1. the number of parameters that need a converter,
//! 2. the total type distance (exact 0, a generic image parameter given a
//!    concretely backed image 1, lossless numeric widening 1, `any` 2),
//! 3. descending plugin priority,
//! 4. registration order.
//!
//! Candidates that tie on the first three keys but declare different
//! parameter types are reported as ambiguous.

mod eval;
mod filter;
mod map;
mod math;
mod stats;

use std::fmt;
use std::sync::Arc;

pub use eval::{eval, eval_script, Bindings, Script};
pub use filter::{gauss_along_axis, gaussian_kernel, mirror_index};
pub use map::map_image;
pub use math::{add_constant_array_inplace, add_constant_array_inplace_mt, add_constant_generic, add_constant_planar};

use crate::container::{Context, PluginKind, PluginMetadata};
use crate::convert::{best_converter, Converter};
use crate::error::{Error, Result};
use crate::ndimage::Backing;
use crate::value::{Value, ValueType};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpKind {
    Computer,
    Function,
    Inplace,
    HybridCF,
    HybridCI,
    HybridCFI,
}

impl OpKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OpKind::Computer => "COMPUTER",
            OpKind::Function => "FUNCTION",
            OpKind::Inplace => "INPLACE",
            OpKind::HybridCF => "HYBRID_CF",
            OpKind::HybridCI => "HYBRID_CI",
            OpKind::HybridCFI => "HYBRID_CFI",
        }
    }

    pub fn has_compute(self) -> bool {
        !matches!(self, OpKind::Function | OpKind::Inplace)
    }

    pub fn has_calculate(self) -> bool {
        matches!(self, OpKind::Function | OpKind::HybridCF | OpKind::HybridCFI)
    }

    pub fn has_mutate(self) -> bool {
        matches!(self, OpKind::Inplace | OpKind::HybridCI | OpKind::HybridCFI)
    }

    /// Whether a candidate of this kind can serve a request for `wanted`.
    pub fn serves(self, wanted: OpKind) -> bool {
        match wanted {
            OpKind::Computer => self.has_compute(),
            OpKind::Function => self.has_calculate(),
            OpKind::Inplace => self.has_mutate(),
            other => self == other,
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Declared type of one op parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamType {
    Is(ValueType),
    /// An image with one particular backing.
    ImageBacked(Backing),
    Any,
}

impl fmt::Display for ParamType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamType::Is(t) => write!(f, "{t}"),
            ParamType::ImageBacked(b) => write!(f, "image[{}]", b.name()),
            ParamType::Any => f.write_str("any"),
        }
    }
}

impl From<ValueType> for ParamType {
    fn from(t: ValueType) -> Self {
        ParamType::Is(t)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OpSignature {
    pub name: String,
    pub params: Vec<ParamType>,
    pub output: ValueType,
}

impl OpSignature {
    /// `[a-z][a-zA-Z0-9]*` segments joined by dots, at least two of them.
    pub fn is_valid_name(name: &str) -> bool {
        let segments: Vec<&str> = name.split('.').collect();
        segments.len() >= 2
            && segments.iter().all(|s| {
                let mut chars = s.chars();
                chars.next().is_some_and(|c| c.is_ascii_lowercase()) && chars.all(|c| c.is_ascii_alphanumeric())
            })
    }

    /// Whether a request for `requested` names this op: an exact match, or
    /// a match of the trailing dot-separated segments.
    pub fn answers_to(&self, requested: &str) -> bool {
        self.name == requested
            || (self.name.len() > requested.len()
                && self.name.ends_with(requested)
                && self.name.as_bytes()[self.name.len() - requested.len() - 1] == b'.')
    }

    pub fn params_string(&self) -> String {
        let params: Vec<String> = self.params.iter().map(|p| p.to_string()).collect();
        format!("({})", params.join(", "))
    }
}

impl fmt::Display for OpSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{} -> {}", self.name, self.params_string(), self.output)
    }
}

pub type CalculateFn = Arc<dyn Fn(&Context, &[Value]) -> Result<Value> + Send + Sync>;
pub type CreateFn = Arc<dyn Fn(&Context, &[Value]) -> Result<Value> + Send + Sync>;
pub type ComputeFn = Arc<dyn Fn(&Context, &[Value], &mut Value) -> Result<()> + Send + Sync>;
/// Mutates the designated argument; receives the remaining arguments in order.
pub type MutateFn = Arc<dyn Fn(&Context, &mut Value, &[Value]) -> Result<()> + Send + Sync>;

#[derive(Clone, Default)]
struct OpBody {
    calculate: Option<CalculateFn>,
    create: Option<CreateFn>,
    compute: Option<ComputeFn>,
    mutate: Option<MutateFn>,
}

/// One registered implementation of an op.
#[derive(Clone)]
pub struct OpCandidate {
    pub id: String,
    pub signature: OpSignature,
    pub kind: OpKind,
    /// Number of primary inputs (0 to 2); further parameters are options
    /// such as a sigma or a constant.
    pub arity: usize,
    /// Index of the argument an inplace entry point mutates.
    pub mutable_index: Option<usize>,
    /// Copied from the plugin metadata when resolved.
    pub priority: i32,
    pub registration_seq: u64,
    body: OpBody,
}

impl fmt::Debug for OpCandidate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} [{} {}]", self.id, self.signature, self.kind)
    }
}

impl OpCandidate {
    fn bare(id: &str, name: &str, params: Vec<ParamType>, output: ValueType, kind: OpKind) -> Self {
        let arity = params.len().min(2);
        Self {
            id: id.to_string(),
            signature: OpSignature {
                name: name.to_string(),
                params,
                output,
            },
            kind,
            arity,
            mutable_index: None,
            priority: 0,
            registration_seq: 0,
            body: OpBody::default(),
        }
    }

    pub fn function(
        id: &str,
        name: &str,
        params: Vec<ParamType>,
        output: ValueType,
        calculate: impl Fn(&Context, &[Value]) -> Result<Value> + Send + Sync + 'static,
    ) -> Self {
        let mut c = Self::bare(id, name, params, output, OpKind::Function);
        c.body.calculate = Some(Arc::new(calculate));
        c
    }

    pub fn computer(
        id: &str,
        name: &str,
        params: Vec<ParamType>,
        output: ValueType,
        create: impl Fn(&Context, &[Value]) -> Result<Value> + Send + Sync + 'static,
        compute: impl Fn(&Context, &[Value], &mut Value) -> Result<()> + Send + Sync + 'static,
    ) -> Self {
        let mut c = Self::bare(id, name, params, output, OpKind::Computer);
        c.body.create = Some(Arc::new(create));
        c.body.compute = Some(Arc::new(compute));
        c
    }

    pub fn inplace(
        id: &str,
        name: &str,
        params: Vec<ParamType>,
        output: ValueType,
        mutable_index: usize,
        mutate: impl Fn(&Context, &mut Value, &[Value]) -> Result<()> + Send + Sync + 'static,
    ) -> Self {
        let mut c = Self::bare(id, name, params, output, OpKind::Inplace);
        c.mutable_index = Some(mutable_index);
        c.body.mutate = Some(Arc::new(mutate));
        c
    }

    /// A hybrid from a computer body. `kind` must be one of the hybrid
    /// kinds; the function entry point allocates through `create` and the
    /// inplace entry point computes into a copy of argument `mutable_index`.
    pub fn hybrid(
        id: &str,
        name: &str,
        params: Vec<ParamType>,
        output: ValueType,
        kind: OpKind,
        create: impl Fn(&Context, &[Value]) -> Result<Value> + Send + Sync + 'static,
        compute: impl Fn(&Context, &[Value], &mut Value) -> Result<()> + Send + Sync + 'static,
    ) -> Self {
        assert!(
            matches!(kind, OpKind::HybridCF | OpKind::HybridCI | OpKind::HybridCFI),
            "hybrid() needs a hybrid kind"
        );
        let mut c = Self::bare(id, name, params, output, kind);
        c.body.create = Some(Arc::new(create));
        c.body.compute = Some(Arc::new(compute));
        if kind.has_mutate() {
            c.mutable_index = Some(0);
        }
        c
    }

    pub fn with_arity(mut self, arity: usize) -> Self {
        self.arity = arity;
        self
    }

    pub fn name(&self) -> &str {
        &self.signature.name
    }

    /// Wraps the candidate as an op plugin. Errors on an invalid name or an
    /// inconsistent arity.
    pub fn into_plugin(self, priority: i32) -> Result<PluginMetadata> {
        if !OpSignature::is_valid_name(&self.signature.name) {
            return Err(Error::op(format!("invalid op name `{}`", self.signature.name)));
        }
        if self.arity > 2 || self.arity > self.signature.params.len() {
            return Err(Error::op(format!("op {} declares arity {}", self.id, self.arity)));
        }
        if let Some(i) = self.mutable_index {
            if i >= self.signature.params.len() {
                return Err(Error::op(format!("op {} mutates missing argument {i}", self.id)));
            }
        }
        let id = self.id.clone();
        let name = self.signature.name.clone();
        Ok(PluginMetadata::new(PluginKind::Op, id, name, priority).with_provider(self))
    }

    /// Function entry point: a fresh output.
    pub fn calculate(&self, ctx: &Context, args: &[Value]) -> Result<Value> {
        if let Some(f) = &self.body.calculate {
            return f(ctx, args);
        }
        match (&self.body.create, &self.body.compute) {
            (Some(create), Some(compute)) if self.kind.has_calculate() || self.kind == OpKind::Computer => {
                let mut out = create(ctx, args)?;
                compute(ctx, args, &mut out)?;
                Ok(out)
            }
            _ => Err(Error::Unsupported(format!("{} has no function entry point", self.id))),
        }
    }

    /// Allocates an output suitable for [`compute`](Self::compute).
    pub fn create_output(&self, ctx: &Context, args: &[Value]) -> Result<Value> {
        match &self.body.create {
            Some(create) => create(ctx, args),
            None => Err(Error::Unsupported(format!("{} has no computer entry point", self.id))),
        }
    }

    /// Computer entry point: fills `out`, leaving the inputs alone.
    pub fn compute(&self, ctx: &Context, args: &[Value], out: &mut Value) -> Result<()> {
        match &self.body.compute {
            Some(compute) => compute(ctx, args, out),
            None => Err(Error::Unsupported(format!("{} has no computer entry point", self.id))),
        }
    }

    /// Inplace entry point: mutates the designated argument and returns it.
    pub fn mutate(&self, ctx: &Context, mut args: Vec<Value>) -> Result<Value> {
        let index = self
            .mutable_index
            .ok_or_else(|| Error::Unsupported(format!("{} has no inplace entry point", self.id)))?;
        let mut target = args.remove(index);
        if let Some(mutate) = &self.body.mutate {
            mutate(ctx, &mut target, &args)?;
            return Ok(target);
        }
        let compute = self
            .body
            .compute
            .as_ref()
            .ok_or_else(|| Error::Unsupported(format!("{} has no inplace entry point", self.id)))?;
        // compute into a private copy of the target, then hand it back
        args.insert(index, target.clone());
        let mut out = deep_copy(&target)?;
        compute(ctx, &args, &mut out)?;
        Ok(out)
    }
}

/// A value whose image payload (if any) is not shared with `v`.
fn deep_copy(v: &Value) -> Result<Value> {
    Ok(match v {
        Value::Image(img) => Value::image(img.try_clone()?),
        other => other.clone(),
    })
}

#[derive(Clone, Debug)]
pub struct OpRequest {
    pub name: String,
    pub args: Vec<Value>,
    pub kind: Option<OpKind>,
}

impl OpRequest {
    pub fn new(name: impl Into<String>, args: Vec<Value>) -> Self {
        Self {
            name: name.into(),
            args,
            kind: None,
        }
    }

    pub fn with_kind(mut self, kind: OpKind) -> Self {
        self.kind = Some(kind);
        self
    }

    fn describe(&self) -> String {
        let types: Vec<String> = self.args.iter().map(describe_arg).collect();
        format!("{}({})", self.name, types.join(", "))
    }
}

fn describe_arg(v: &Value) -> String {
    match v {
        Value::Image(img) => format!("image[{}]", img.backing().name()),
        other => other.value_type().to_string(),
    }
}

/// How one argument reaches its parameter.
#[derive(Clone, Debug)]
enum ArgFit {
    Direct,
    Convert(Converter),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct Score {
    conversions: u32,
    distance: u32,
    neg_priority: i64,
}

fn fit_param(ctx: &Context, param: &ParamType, arg: &Value) -> std::result::Result<(ArgFit, u32, u32), String> {
    match param {
        ParamType::Any => Ok((ArgFit::Direct, 0, 2)),
        ParamType::ImageBacked(backing) => match arg {
            Value::Image(img) if img.backing() == *backing => Ok((ArgFit::Direct, 0, 0)),
            Value::Image(img) => Err(format!("expects {param}, got image[{}]", img.backing().name())),
            Value::Dataset(ds) if ds.image.backing() == *backing => match best_converter(ctx, arg, ValueType::Image) {
                Some(c) => Ok((ArgFit::Convert(c), 1, 0)),
                None => Err(format!("expects {param}, got dataset")),
            },
            other => Err(format!("expects {param}, got {}", describe_arg(other))),
        },
        ParamType::Is(t) => {
            let actual = arg.value_type();
            if actual == *t {
                let distance = u32::from(*t == ValueType::Image);
                return Ok((ArgFit::Direct, 0, distance));
            }
            match best_converter(ctx, arg, *t) {
                Some(c) if c.widening => Ok((ArgFit::Convert(c), 0, 1)),
                Some(c) => {
                    let distance = u32::from(*t == ValueType::Image);
                    Ok((ArgFit::Convert(c), 1, distance))
                }
                None => Err(format!("expects {t}, got {}", describe_arg(arg))),
            }
        }
    }
}

/// A candidate bound to the argument conversions that make it fit.
#[derive(Clone, Debug)]
pub struct MatchedOp {
    pub candidate: Arc<OpCandidate>,
    fits: Vec<ArgFit>,
}

impl MatchedOp {
    pub fn kind(&self) -> OpKind {
        self.candidate.kind
    }

    /// Applies the matched conversions to arguments of the same types.
    pub fn prepare(&self, args: Vec<Value>) -> Result<Vec<Value>> {
        if args.len() != self.fits.len() {
            return Err(Error::op(format!(
                "{} takes {} arguments, got {}",
                self.candidate.id,
                self.fits.len(),
                args.len()
            )));
        }
        args.into_iter()
            .zip(&self.fits)
            .map(|(v, fit)| match fit {
                ArgFit::Direct => Ok(v),
                ArgFit::Convert(c) => c.apply(&v),
            })
            .collect()
    }

    /// Executes with the default entry point for the candidate's kind:
    /// functions return a fresh value, computers fill an engine-allocated
    /// output, inplace ops mutate and return the designated argument.
    pub fn run(&self, ctx: &Context, args: Vec<Value>) -> Result<Value> {
        let args = self.prepare(args)?;
        let c = &self.candidate;
        let checked = ctx.settings().checked_ops;
        let before: Vec<u64> = if checked { args.iter().map(Value::content_hash).collect() } else { Vec::new() };
        let designated = match c.kind {
            OpKind::Inplace => c.mutable_index,
            _ => None,
        };
        let result = match c.kind {
            OpKind::Function | OpKind::HybridCF | OpKind::HybridCFI => c.calculate(ctx, &args)?,
            OpKind::Computer | OpKind::HybridCI => {
                let mut out = c.create_output(ctx, &args)?;
                c.compute(ctx, &args, &mut out)?;
                out
            }
            // checked mode keeps its own handles on the inputs, so the
            // mutated argument is copied on write instead of changed in place
            OpKind::Inplace if checked => c.mutate(ctx, args.clone())?,
            OpKind::Inplace => return c.mutate(ctx, args),
        };
        if checked {
            for (i, (arg, hash)) in args.iter().zip(&before).enumerate() {
                if Some(i) != designated && arg.content_hash() != *hash {
                    return Err(Error::Contract(format!(
                        "{} ({}) modified input argument {i}",
                        c.id, c.kind
                    )));
                }
            }
        }
        Ok(result)
    }

    /// Computer entry point with a caller-supplied output.
    pub fn compute_into(&self, ctx: &Context, args: Vec<Value>, out: &mut Value) -> Result<()> {
        let args = self.prepare(args)?;
        self.candidate.compute(ctx, &args, out)
    }
}

/// Every registered op candidate, with priority and registration order
/// taken from the plugin metadata, in resolution order.
pub fn op_candidates(ctx: &Context) -> Vec<Arc<OpCandidate>> {
    ctx.resolve_plugins(PluginKind::Op)
        .iter()
        .filter_map(|p| {
            p.provider::<OpCandidate>().map(|c| {
                let mut c = c.clone();
                c.priority = p.priority;
                c.registration_seq = p.registration_seq;
                Arc::new(c)
            })
        })
        .collect()
}

pub fn match_op(ctx: &Context, request: &OpRequest) -> Result<MatchedOp> {
    let all = op_candidates(ctx);
    let named: Vec<&Arc<OpCandidate>> = all.iter().filter(|c| c.signature.answers_to(&request.name)).collect();
    let mut near_misses = Vec::new();
    let mut viable: Vec<(Score, &Arc<OpCandidate>, Vec<ArgFit>)> = Vec::new();
    for cand in &named {
        if let Some(kind) = request.kind {
            if !cand.kind.serves(kind) {
                near_misses.push(format!("{}: kind {} cannot act as {kind}", cand.signature, cand.kind));
                continue;
            }
        }
        let params = &cand.signature.params;
        if params.len() != request.args.len() {
            near_misses.push(format!(
                "{}: takes {} arguments, got {}",
                cand.signature,
                params.len(),
                request.args.len()
            ));
            continue;
        }
        let mut score = Score {
            conversions: 0,
            distance: 0,
            neg_priority: -(cand.priority as i64),
        };
        let mut fits = Vec::with_capacity(params.len());
        let mut failure = None;
        for (i, (p, a)) in params.iter().zip(&request.args).enumerate() {
            match fit_param(ctx, p, a) {
                Ok((fit, conv, dist)) => {
                    score.conversions += conv;
                    score.distance += dist;
                    fits.push(fit);
                }
                Err(why) => {
                    failure = Some(format!("{}: argument {} {why}", cand.signature, i + 1));
                    break;
                }
            }
        }
        match failure {
            Some(f) => near_misses.push(f),
            None => viable.push((score, cand, fits)),
        }
    }
    if viable.is_empty() {
        if named.is_empty() {
            near_misses = similar_names(&all, &request.name);
        }
        return Err(Error::NoMatch {
            request: request.describe(),
            near_misses,
        });
    }
    let best_score = viable.iter().map(|(s, _, _)| *s).min().unwrap();
    let mut tied: Vec<_> = viable.into_iter().filter(|(s, _, _)| *s == best_score).collect();
    tied.sort_by_key(|(_, c, _)| c.registration_seq);
    let first_params = &tied[0].1.signature.params;
    if tied.iter().any(|(_, c, _)| &c.signature.params != first_params) {
        return Err(Error::Ambiguous {
            request: request.describe(),
            candidates: tied.iter().map(|(_, c, _)| format!("{} {}", c.id, c.signature)).collect(),
        });
    }
    let (_, cand, fits) = tied.swap_remove(0);
    Ok(MatchedOp {
        candidate: cand.clone(),
        fits,
    })
}

fn similar_names(all: &[Arc<OpCandidate>], requested: &str) -> Vec<String> {
    let mut names: Vec<&str> = all
        .iter()
        .map(|c| c.name())
        .filter(|n| {
            let last = n.rsplit('.').next().unwrap_or(n);
            strsim::levenshtein(n, requested) <= 2 || strsim::levenshtein(last, requested) <= 2
        })
        .collect();
    names.sort_unstable();
    names.dedup();
    names.into_iter().map(|n| format!("did you mean {n}?")).collect()
}

/// Matches and runs in one step.
pub fn run(ctx: &Context, name: &str, args: Vec<Value>) -> Result<Value> {
    let matched = match_op(ctx, &OpRequest::new(name, args.clone()))?;
    matched.run(ctx, args)
}

/// `ops list` rows: `name<TAB>kind<TAB>arity<TAB>signature<TAB>priority`,
/// sorted by name (then by registration order).
pub fn list_ops(ctx: &Context) -> Vec<String> {
    let mut cands = op_candidates(ctx);
    cands.sort_by(|a, b| a.name().cmp(b.name()).then(a.registration_seq.cmp(&b.registration_seq)));
    cands
        .iter()
        .map(|c| {
            format!(
                "{}\t{}\t{}\t{} -> {}\t{}",
                c.name(),
                c.kind,
                c.arity,
                c.signature.params_string(),
                c.signature.output,
                c.priority
            )
        })
        .collect()
}

/// Every built-in op plugin.
pub fn builtin_ops() -> Vec<PluginMetadata> {
    let mut out = Vec::new();
    out.extend(math::plugins());
    out.extend(filter::plugins());
    out.extend(stats::plugins());
    out.extend(map::plugins());
    out
}

pub(crate) fn arg_image(args: &[Value], i: usize) -> Result<&Arc<crate::ndimage::NDImage>> {
    args.get(i)
        .and_then(Value::as_image)
        .ok_or_else(|| Error::op(format!("argument {} is not an image", i + 1)))
}

pub(crate) fn arg_f64(args: &[Value], i: usize) -> Result<f64> {
    args.get(i)
        .and_then(Value::as_f64)
        .ok_or_else(|| Error::op(format!("argument {} is not a number", i + 1)))
}

pub(crate) fn arg_str(args: &[Value], i: usize) -> Result<&str> {
    args.get(i)
        .and_then(Value::as_str)
        .ok_or_else(|| Error::op(format!("argument {} is not a string", i + 1)))
}
