//! Typed parameterized modules.
//!
//! A [`ModuleSpec`] declares ordered input and output parameters and carries
//! a body: either an expression program (parsed from `#@` headers plus
//! script text, files with the `.sjm` extension) or a built-in command
//! registered as a [`PluginKind::Command`] plugin.
//!
//! [`run_module`] drives the full chain. Preprocessors run in priority
//! order and resolve inputs; the body runs; postprocessors display outputs
//! and remember inputs for next time. All chain members are ordinary
//! plugins, so a context may add its own.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use crate::container::{Context, Event, PluginKind, PluginMetadata};
use crate::convert;
use crate::error::{Error, Result};
use crate::io::{self, Location};
use crate::ops::{self, Bindings, Script};
use crate::value::{Value, ValueType};

/// File extension of header-annotated scripts.
pub const SCRIPT_EXTENSION: &str = "sjm";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Input,
    Output,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub direction: Direction,
    pub semantic_type: ValueType,
    pub required: bool,
    /// Literal applied when nothing else resolves the input.
    pub default: Option<String>,
}

impl ParamSpec {
    pub fn input(name: impl Into<String>, semantic_type: ValueType) -> Self {
        Self {
            name: name.into(),
            direction: Direction::Input,
            semantic_type,
            required: true,
            default: None,
        }
    }

    pub fn output(name: impl Into<String>, semantic_type: ValueType) -> Self {
        Self {
            direction: Direction::Output,
            ..Self::input(name, semantic_type)
        }
    }

    pub fn optional(mut self) -> Self {
        self.required = false;
        self
    }

    pub fn with_default(mut self, literal: impl Into<String>) -> Self {
        self.default = Some(literal.into());
        self
    }

    pub fn is_input(&self) -> bool {
        self.direction == Direction::Input
    }
}

/// Body of a built-in command: declared inputs in, declared outputs out.
pub type CommandFn = Arc<dyn Fn(&Context, &BTreeMap<String, Value>) -> Result<BTreeMap<String, Value>> + Send + Sync>;

#[derive(Clone)]
pub enum ModuleBody {
    Script(Script),
    Command(CommandFn),
}

#[derive(Clone)]
pub struct ModuleSpec {
    pub name: String,
    pub params: Vec<ParamSpec>,
    pub body: ModuleBody,
}

impl fmt::Debug for ModuleSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let body = match &self.body {
            ModuleBody::Script(_) => "script",
            ModuleBody::Command(_) => "command",
        };
        f.debug_struct("ModuleSpec")
            .field("name", &self.name)
            .field("params", &self.params)
            .field("body", &body)
            .finish()
    }
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Maps a header type token to its semantic type.
pub fn type_token(token: &str) -> Option<ValueType> {
    Some(match token {
        "String" => ValueType::String,
        "int" => ValueType::Int64,
        "double" => ValueType::Float64,
        "boolean" => ValueType::Boolean,
        "Dataset" => ValueType::Dataset,
        "Img" => ValueType::Image,
        "File" => ValueType::FilePath,
        _ => return None,
    })
}

impl ModuleSpec {
    /// Builds a command module, checking parameter names.
    pub fn command(
        name: impl Into<String>,
        params: Vec<ParamSpec>,
        body: impl Fn(&Context, &BTreeMap<String, Value>) -> Result<BTreeMap<String, Value>> + Send + Sync + 'static,
    ) -> Result<Self> {
        let spec = Self {
            name: name.into(),
            params,
            body: ModuleBody::Command(Arc::new(body)),
        };
        spec.check_params()?;
        Ok(spec)
    }

    fn check_params(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for p in &self.params {
            if !is_identifier(&p.name) {
                return Err(Error::Header { line: 0, message: format!("invalid parameter name `{}`", p.name) });
            }
            if !seen.insert(p.name.as_str()) {
                return Err(Error::Header { line: 0, message: format!("duplicate parameter `{}`", p.name) });
            }
        }
        Ok(())
    }

    /// Parses `#@INPUT <Type> <name>` and `#@OUTPUT <Type> <name>` headers.
    /// An input header may end in `= <literal>` to declare a default. The
    /// whole text is the body; header lines are comments to the evaluator.
    pub fn parse(name: impl Into<String>, text: &str) -> Result<Self> {
        let mut params: Vec<ParamSpec> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let Some(rest) = raw.trim_start().strip_prefix("#@") else {
                continue;
            };
            let header = |message: String| Error::Header { line, message };
            let (decl, default) = match rest.split_once('=') {
                Some((d, v)) => (d, Some(v.trim().to_string())),
                None => (rest, None),
            };
            let tokens: Vec<&str> = decl.split_whitespace().collect();
            let [direction, ty, pname] = tokens[..] else {
                return Err(header(format!("expected `#@INPUT|OUTPUT <Type> <name>`, found `{}`", raw.trim())));
            };
            let direction = match direction {
                "INPUT" => Direction::Input,
                "OUTPUT" => Direction::Output,
                other => return Err(header(format!("unknown direction `{other}`"))),
            };
            let semantic_type = type_token(ty).ok_or_else(|| header(format!("unknown type `{ty}`")))?;
            if !is_identifier(pname) {
                return Err(header(format!("invalid parameter name `{pname}`")));
            }
            if params.iter().any(|p| p.name == pname) {
                return Err(header(format!("duplicate parameter `{pname}`")));
            }
            if let Some(d) = &default {
                if direction == Direction::Output {
                    return Err(header(format!("output `{pname}` cannot have a default")));
                }
                if semantic_type.is_image_like() {
                    return Err(header(format!("`{pname}` is {semantic_type}; defaults are for plain values")));
                }
                parse_plain_literal(semantic_type, d)
                    .ok_or_else(|| header(format!("default `{d}` is not a valid {semantic_type}")))?;
            }
            params.push(ParamSpec {
                name: pname.to_string(),
                direction,
                semantic_type,
                required: true,
                default,
            });
        }
        let script = Script::parse(text)?;
        for assigned in script.assigned_names() {
            match params.iter().find(|p| p.name == assigned) {
                Some(p) if !p.is_input() => {}
                Some(_) => {
                    return Err(Error::Header { line: 0, message: format!("script assigns input `{assigned}`") });
                }
                None => {
                    return Err(Error::Header {
                        line: 0,
                        message: format!("script assigns `{assigned}`, which is not a declared output"),
                    });
                }
            }
        }
        Ok(Self {
            name: name.into(),
            params,
            body: ModuleBody::Script(script),
        })
    }

    /// Reads a script file; the module is named after the file stem.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path)?;
        let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        Self::parse(name, &text)
    }

    pub fn param(&self, name: &str) -> Option<&ParamSpec> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn inputs(&self) -> impl Iterator<Item = &ParamSpec> {
        self.params.iter().filter(|p| p.is_input())
    }

    pub fn outputs(&self) -> impl Iterator<Item = &ParamSpec> {
        self.params.iter().filter(|p| !p.is_input())
    }

    /// Runs the body alone on fully resolved inputs.
    pub fn execute(&self, ctx: &Context, inputs: &BTreeMap<String, Value>) -> Result<BTreeMap<String, Value>> {
        let produced = match &self.body {
            ModuleBody::Command(f) => f(ctx, inputs)?,
            ModuleBody::Script(script) => {
                let mut bindings: Bindings = inputs.clone();
                script.run(ctx, &mut bindings)?;
                self.outputs()
                    .filter_map(|p| bindings.remove(&p.name).map(|v| (p.name.clone(), v)))
                    .collect()
            }
        };
        let mut outputs = BTreeMap::new();
        for p in self.outputs() {
            let v = produced
                .get(&p.name)
                .ok_or_else(|| Error::op(format!("output `{}` was not assigned", p.name)))?;
            outputs.insert(p.name.clone(), convert::convert(ctx, v, p.semantic_type)?);
        }
        Ok(outputs)
    }
}

fn parse_plain_literal(ty: ValueType, text: &str) -> Option<Value> {
    Some(match ty {
        ValueType::String => Value::Str(text.to_string()),
        ValueType::Int64 => Value::Int64(text.trim().parse().ok()?),
        ValueType::Float64 => Value::Float64(text.trim().parse().ok()?),
        ValueType::Boolean => match text.trim() {
            "true" => Value::Bool(true),
            "false" => Value::Bool(false),
            _ => return None,
        },
        ValueType::FilePath => Value::Path(text.into()),
        _ => return None,
    })
}

/// Converts a textual literal to `param`'s type. Dataset and image
/// parameters read the named file without touching the active dataset.
pub fn parse_literal(ctx: &Context, param: &ParamSpec, text: &str) -> Result<Value> {
    let ty = param.semantic_type;
    if ty.is_image_like() {
        let dataset = io::read_dataset(ctx, &Location::file(text))
            .map_err(|e| Error::harvest(&param.name, format!("cannot open `{text}`: {e}")))?;
        return Ok(match ty {
            ValueType::Image => Value::Image(dataset.image.clone()),
            _ => Value::Dataset(Arc::new(dataset)),
        });
    }
    parse_plain_literal(ty, text)
        .ok_or_else(|| Error::harvest(&param.name, format!("cannot parse `{text}` as {ty}")))
}

/// Parses `key=value` arguments against the declared inputs.
pub fn harvest_from_pairs<S: AsRef<str>>(ctx: &Context, spec: &ModuleSpec, pairs: &[S]) -> Result<BTreeMap<String, Value>> {
    let mut out = BTreeMap::new();
    for pair in pairs {
        let pair = pair.as_ref();
        let (key, literal) = pair
            .split_once('=')
            .ok_or_else(|| Error::harvest(pair, "expected key=value"))?;
        let param = spec
            .param(key)
            .ok_or_else(|| Error::harvest(key, format!("module `{}` has no such parameter", spec.name)))?;
        if !param.is_input() {
            return Err(Error::harvest(key, "is an output and cannot be provided"));
        }
        out.insert(key.to_string(), parse_literal(ctx, param, literal)?);
    }
    Ok(out)
}

/// One execution of a module.
#[derive(Clone, Debug)]
pub struct ModuleInstance {
    pub spec: ModuleSpec,
    /// Values supplied by the caller, consumed by the binder.
    pub provided: BTreeMap<String, Value>,
    pub inputs: BTreeMap<String, Value>,
    pub outputs: BTreeMap<String, Value>,
    pub resolved: BTreeSet<String>,
}

impl ModuleInstance {
    pub fn new(spec: ModuleSpec, provided: BTreeMap<String, Value>) -> Self {
        Self {
            spec,
            provided,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            resolved: BTreeSet::new(),
        }
    }

    pub fn resolve(&mut self, name: &str, value: Value) {
        self.inputs.insert(name.to_string(), value);
        self.resolved.insert(name.to_string());
    }

    pub fn unresolved_inputs(&self) -> Vec<ParamSpec> {
        self.spec.inputs().filter(|p| !self.resolved.contains(&p.name)).cloned().collect()
    }
}

/// A member of the pre- or post-processing chain.
pub trait ModuleProcessor: Send + Sync {
    fn process(&self, ctx: &Context, inst: &mut ModuleInstance) -> Result<()>;
}

impl<F> ModuleProcessor for F
where
    F: Fn(&Context, &mut ModuleInstance) -> Result<()> + Send + Sync,
{
    fn process(&self, ctx: &Context, inst: &mut ModuleInstance) -> Result<()> {
        self(ctx, inst)
    }
}

pub type Processor = Arc<dyn ModuleProcessor>;

pub fn preprocessor_plugin(id: &str, priority: i32, p: impl ModuleProcessor + 'static) -> PluginMetadata {
    PluginMetadata::new(PluginKind::Preprocessor, id, id, priority).with_provider::<Processor>(Arc::new(p))
}

pub fn postprocessor_plugin(id: &str, priority: i32, p: impl ModuleProcessor + 'static) -> PluginMetadata {
    PluginMetadata::new(PluginKind::Postprocessor, id, id, priority).with_provider::<Processor>(Arc::new(p))
}

/// Shows one output value.
#[derive(Clone)]
pub struct Display {
    pub accepts: Arc<dyn Fn(&Value) -> bool + Send + Sync>,
    pub show: Arc<dyn Fn(&Context, &str, &Value) -> Result<()> + Send + Sync>,
}

impl Display {
    pub fn new(
        accepts: impl Fn(&Value) -> bool + Send + Sync + 'static,
        show: impl Fn(&Context, &str, &Value) -> Result<()> + Send + Sync + 'static,
    ) -> Self {
        Self {
            accepts: Arc::new(accepts),
            show: Arc::new(show),
        }
    }

    pub fn into_plugin(self, id: &str, priority: i32) -> PluginMetadata {
        PluginMetadata::new(PluginKind::Display, id, id, priority).with_provider(self)
    }
}

fn show_text(ctx: &Context, name: &str, value: &Value) -> Result<()> {
    ctx.emit_line(&format!("{name} = {}", value.render()))
}

/// Registers `spec` as a runnable command.
pub fn command_plugin(spec: ModuleSpec, priority: i32) -> PluginMetadata {
    PluginMetadata::new(PluginKind::Command, format!("command.{}", spec.name), spec.name.clone(), priority)
        .with_provider(Arc::new(spec))
}

pub fn find_command(ctx: &Context, name: &str) -> Option<Arc<ModuleSpec>> {
    ctx.resolve_plugins(PluginKind::Command)
        .into_iter()
        .filter(|p| p.name == name)
        .find_map(|p| p.provider::<Arc<ModuleSpec>>().cloned())
}

pub fn command_names(ctx: &Context) -> Vec<String> {
    ctx.resolve_plugins(PluginKind::Command).into_iter().map(|p| p.name).collect()
}

/// Loads a `.sjm` script by path or a registered command by name.
pub fn load_module(ctx: &Context, target: &str) -> Result<ModuleSpec> {
    if Path::new(target).extension().is_some_and(|e| e == SCRIPT_EXTENSION) {
        return ModuleSpec::from_file(target);
    }
    find_command(ctx, target)
        .map(|s| (*s).clone())
        .ok_or_else(|| Error::UnknownCommand(target.to_string()))
}

fn preference_key(spec: &ModuleSpec, param: &str) -> String {
    format!("{}.{}", spec.name, param)
}

fn publish(ctx: &Context, what: &str, module: &str) {
    if let Ok(event) = Event::new(["event", "module-event", what]) {
        ctx.publish(&event.with_payload(module.to_string()));
    }
}

fn chain(ctx: &Context, kind: PluginKind) -> Vec<(String, Processor)> {
    ctx.resolve_plugins(kind)
        .into_iter()
        .filter_map(|p| p.provider::<Processor>().cloned().map(|proc| (p.id.clone(), proc)))
        .collect()
}

/// Runs the preprocessors in priority order.
pub fn preprocess_chain(ctx: &Context, inst: &mut ModuleInstance) -> Result<()> {
    for (id, p) in chain(ctx, PluginKind::Preprocessor) {
        log::debug!("module {}: preprocessor {id}", inst.spec.name);
        p.process(ctx, inst)?;
    }
    Ok(())
}

/// Runs the postprocessors in priority order.
pub fn postprocess_chain(ctx: &Context, inst: &mut ModuleInstance) -> Result<()> {
    for (id, p) in chain(ctx, PluginKind::Postprocessor) {
        log::debug!("module {}: postprocessor {id}", inst.spec.name);
        p.process(ctx, inst)?;
    }
    Ok(())
}

/// Executes the full chain and returns the outputs.
pub fn run_module(ctx: &Context, spec: &ModuleSpec, provided: BTreeMap<String, Value>) -> Result<BTreeMap<String, Value>> {
    let mut inst = ModuleInstance::new(spec.clone(), provided);
    publish(ctx, "module-started", &spec.name);
    let result = (|| {
        preprocess_chain(ctx, &mut inst)?;
        inst.outputs = spec.execute(ctx, &inst.inputs).map_err(|e| Error::Module {
            module: spec.name.clone(),
            source: Box::new(e),
        })?;
        postprocess_chain(ctx, &mut inst)
    })();
    match result {
        Ok(()) => {
            publish(ctx, "module-finished", &spec.name);
            Ok(inst.outputs)
        }
        Err(e) => {
            publish(ctx, "module-failed", &spec.name);
            Err(e)
        }
    }
}

fn bind_provided(ctx: &Context, inst: &mut ModuleInstance) -> Result<()> {
    let provided = std::mem::take(&mut inst.provided);
    for (key, value) in provided {
        let param = inst
            .spec
            .param(&key)
            .ok_or_else(|| Error::harvest(&key, format!("module `{}` has no such parameter", inst.spec.name)))?
            .clone();
        if !param.is_input() {
            return Err(Error::harvest(&key, "is an output and cannot be provided"));
        }
        let value = match &value {
            Value::Str(s) if param.semantic_type.is_image_like() => parse_literal(ctx, &param, s)?,
            Value::Path(p) if param.semantic_type.is_image_like() => parse_literal(ctx, &param, &p.to_string_lossy())?,
            _ => convert::convert(ctx, &value, param.semantic_type).map_err(|e| Error::harvest(&key, e.to_string()))?,
        };
        inst.resolve(&key, value);
    }
    Ok(())
}

fn fill_active_image(ctx: &Context, inst: &mut ModuleInstance) -> Result<()> {
    let image_params: Vec<ParamSpec> = inst.spec.inputs().filter(|p| p.semantic_type.is_image_like()).cloned().collect();
    let [param] = &image_params[..] else {
        return Ok(());
    };
    if inst.resolved.contains(&param.name) {
        return Ok(());
    }
    if let Some(active) = ctx.active_dataset() {
        let value = convert::convert(ctx, &Value::Dataset(active), param.semantic_type)?;
        inst.resolve(&param.name, value);
    }
    Ok(())
}

fn fill_last_used(ctx: &Context, inst: &mut ModuleInstance) -> Result<()> {
    for param in inst.unresolved_inputs() {
        if param.semantic_type.is_image_like() {
            continue;
        }
        let remembered = ctx
            .preference(&preference_key(&inst.spec, &param.name))
            .and_then(|text| parse_plain_literal(param.semantic_type, &text));
        let value = remembered.or_else(|| {
            param.default.as_deref().and_then(|d| parse_plain_literal(param.semantic_type, d))
        });
        if let Some(v) = value {
            inst.resolve(&param.name, v);
        }
    }
    Ok(())
}

fn validate(_: &Context, inst: &mut ModuleInstance) -> Result<()> {
    match inst.unresolved_inputs().into_iter().find(|p| p.required) {
        Some(p) => Err(Error::harvest(&p.name, format!("required {} input was not provided", p.semantic_type))),
        None => Ok(()),
    }
}

fn display_outputs(ctx: &Context, inst: &mut ModuleInstance) -> Result<()> {
    let displays: Vec<Display> = ctx
        .resolve_plugins(PluginKind::Display)
        .iter()
        .filter_map(|p| p.provider::<Display>().cloned())
        .collect();
    for param in inst.spec.outputs() {
        let Some(value) = inst.outputs.get(&param.name) else {
            continue;
        };
        match displays.iter().find(|d| (d.accepts)(value)) {
            Some(d) => (d.show)(ctx, &param.name, value)?,
            None => show_text(ctx, &param.name, value)?,
        }
    }
    Ok(())
}

fn remember_inputs(ctx: &Context, inst: &mut ModuleInstance) -> Result<()> {
    for param in inst.spec.inputs() {
        if param.semantic_type.is_image_like() {
            continue;
        }
        if let Some(v) = inst.inputs.get(&param.name) {
            ctx.set_preference(preference_key(&inst.spec, &param.name), v.render())?;
        }
    }
    Ok(())
}

fn eval_command() -> ModuleSpec {
    ModuleSpec::command(
        "ops.eval",
        vec![ParamSpec::input("expr", ValueType::String), ParamSpec::output("result", ValueType::Float64)],
        |ctx, inputs| {
            let expr = inputs.get("expr").and_then(Value::as_str).unwrap_or_default();
            let value = ops::eval(ctx, expr, &Bindings::new())?;
            Ok(BTreeMap::from([("result".to_string(), value)]))
        },
    )
    .expect("built-in command definitions are valid")
}

pub fn builtin_plugins() -> Vec<PluginMetadata> {
    vec![
        preprocessor_plugin("preprocessor.provided-values", 300, bind_provided),
        preprocessor_plugin("preprocessor.active-image", 200, fill_active_image),
        preprocessor_plugin("preprocessor.last-used", 100, fill_last_used),
        preprocessor_plugin("preprocessor.validator", -1000, validate),
        postprocessor_plugin("postprocessor.display", 100, display_outputs),
        postprocessor_plugin("postprocessor.last-used", -100, remember_inputs),
        Display::new(|_| true, show_text).into_plugin("display.text", -1000),
        command_plugin(eval_command(), 0),
    ]
}
