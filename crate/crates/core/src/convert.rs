//! Single-hop value conversion through registered converter plugins.

use std::fmt;
use std::sync::Arc;

use crate::container::{Context, PluginKind, PluginMetadata};
use crate::error::{Error, Result};
use crate::ndimage::Dataset;
use crate::value::{Value, ValueType};

pub type ApplyFn = Arc<dyn Fn(&Value) -> Result<Value> + Send + Sync>;
pub type AcceptsFn = Arc<dyn Fn(&Value) -> bool + Send + Sync>;

#[derive(Clone)]
pub struct Converter {
    pub source: ValueType,
    pub target: ValueType,
    pub cost: u32,
    /// Lossless numeric widening; op matching scores these as a type
    /// distance rather than as a conversion.
    pub widening: bool,
    accepts: Option<AcceptsFn>,
    apply: ApplyFn,
}

impl fmt::Debug for Converter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Converter({} -> {}, cost {})", self.source, self.target, self.cost)
    }
}

impl Converter {
    pub fn new(
        source: ValueType,
        target: ValueType,
        apply: impl Fn(&Value) -> Result<Value> + Send + Sync + 'static,
    ) -> Self {
        Self {
            source,
            target,
            cost: 1,
            widening: false,
            accepts: None,
            apply: Arc::new(apply),
        }
    }

    /// Value-dependent acceptance test (e.g. "parses as a number").
    pub fn accepting(mut self, accepts: impl Fn(&Value) -> bool + Send + Sync + 'static) -> Self {
        self.accepts = Some(Arc::new(accepts));
        self
    }

    pub fn with_cost(mut self, cost: u32) -> Self {
        self.cost = cost;
        self
    }

    pub fn widening(mut self) -> Self {
        self.widening = true;
        self
    }

    pub fn supports(&self, value: &Value) -> bool {
        value.value_type() == self.source && self.accepts.as_ref().is_none_or(|f| f(value))
    }

    pub fn apply(&self, value: &Value) -> Result<Value> {
        (self.apply)(value)
    }

    pub fn into_plugin(self, id: impl Into<String>, priority: i32) -> PluginMetadata {
        let id = id.into();
        let name = format!("{}->{}", self.source, self.target);
        PluginMetadata::new(PluginKind::Converter, id, name, priority).with_provider(self)
    }
}

/// The preferred converter for `value` → `target`: lowest cost, then highest
/// priority, then earliest registration.
pub fn best_converter(ctx: &Context, value: &Value, target: ValueType) -> Option<Converter> {
    ctx.resolve_plugins(PluginKind::Converter)
        .iter()
        .filter_map(|p| p.provider::<Converter>().map(|c| (p, c)))
        .filter(|(_, c)| c.target == target && c.supports(value))
        // resolve order already encodes (-priority, seq); min_by_key is stable
        .min_by_key(|(_, c)| c.cost)
        .map(|(_, c)| c.clone())
}

pub fn supports(ctx: &Context, value: &Value, target: ValueType) -> bool {
    value.value_type() == target || best_converter(ctx, value, target).is_some()
}

pub fn convert(ctx: &Context, value: &Value, target: ValueType) -> Result<Value> {
    if value.value_type() == target {
        return Ok(value.clone());
    }
    let converter = best_converter(ctx, value, target).ok_or_else(|| Error::Conversion {
        from: value.value_type().to_string(),
        to: target.to_string(),
    })?;
    converter.apply(value)
}

fn parse_float(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok()
}

fn parse_int(s: &str) -> Option<i64> {
    s.trim().parse::<i64>().ok()
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim() {
        "true" => Some(true),
        "false" => Some(false),
        _ => None,
    }
}

fn str_of(v: &Value) -> &str {
    v.as_str().unwrap_or_default()
}

/// Built-in converters: string parsing, integer and float widening, and the
/// dataset/image wrap pair. No narrowing conversions are provided.
pub fn builtin_converters() -> Vec<PluginMetadata> {
    use ValueType as T;
    let mismatch = |to: ValueType| move |v: &Value| Error::Conversion {
        from: v.value_type().to_string(),
        to: to.to_string(),
    };
    let mut out = vec![
        Converter::new(T::String, T::Float64, move |v| {
            parse_float(str_of(v)).map(Value::Float64).ok_or_else(|| mismatch(T::Float64)(v))
        })
        .accepting(|v| parse_float(str_of(v)).is_some())
        .into_plugin("convert.string-float64", 0),
        Converter::new(T::String, T::Int64, move |v| {
            parse_int(str_of(v)).map(Value::Int64).ok_or_else(|| mismatch(T::Int64)(v))
        })
        .accepting(|v| parse_int(str_of(v)).is_some())
        .into_plugin("convert.string-int64", 0),
        Converter::new(T::String, T::Boolean, move |v| {
            parse_bool(str_of(v)).map(Value::Bool).ok_or_else(|| mismatch(T::Boolean)(v))
        })
        .accepting(|v| parse_bool(str_of(v)).is_some())
        .into_plugin("convert.string-boolean", 0),
        Converter::new(T::Dataset, T::Image, |v| match v {
            Value::Dataset(ds) => Ok(Value::Image(ds.image.clone())),
            other => Err(Error::Conversion {
                from: other.value_type().to_string(),
                to: "image".into(),
            }),
        })
        .into_plugin("convert.dataset-image", 0),
        Converter::new(T::Image, T::Dataset, |v| match v {
            Value::Image(img) => Ok(Value::Dataset(Arc::new(Dataset::new("untitled", img.clone())?))),
            other => Err(Error::Conversion {
                from: other.value_type().to_string(),
                to: "dataset".into(),
            }),
        })
        .into_plugin("convert.image-dataset", 0),
    ];
    let widen: [(T, T, fn(&Value) -> Option<Value>); 5] = [
        (T::Int8, T::Int16, |v| match *v {
            Value::Int8(x) => Some(Value::Int16(x.into())),
            _ => None,
        }),
        (T::Int16, T::Int32, |v| match *v {
            Value::Int16(x) => Some(Value::Int32(x.into())),
            _ => None,
        }),
        (T::Int32, T::Int64, |v| match *v {
            Value::Int32(x) => Some(Value::Int64(x.into())),
            _ => None,
        }),
        (T::Int64, T::Float64, |v| match *v {
            Value::Int64(x) => Some(Value::Float64(x as f64)),
            _ => None,
        }),
        (T::Float32, T::Float64, |v| match *v {
            Value::Float32(x) => Some(Value::Float64(x.into())),
            _ => None,
        }),
    ];
    for (from, to, f) in widen {
        out.push(
            Converter::new(from, to, move |v| f(v).ok_or_else(|| mismatch(to)(v)))
                .widening()
                .into_plugin(format!("convert.{from}-{to}"), 0),
        );
    }
    out
}
