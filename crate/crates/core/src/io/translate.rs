//! Metadata translation between models through registered translators.

use std::fmt;
use std::sync::Arc;

use super::ImageMetadata;
use crate::container::{Context, PluginKind, PluginMetadata};
use crate::error::{Error, Result};

/// The format-neutral metadata model.
pub const GENERIC_MODEL: &str = "generic";

pub type KeyMap = Arc<dyn Fn(&str) -> Option<String> + Send + Sync>;

/// Maps keys of one metadata model onto another. Keys the map rejects are
/// kept under an `unmapped.` prefix.
#[derive(Clone)]
pub struct Translator {
    pub source: String,
    pub target: String,
    map: KeyMap,
}

impl fmt::Debug for Translator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Translator({} -> {})", self.source, self.target)
    }
}

impl Translator {
    pub fn new(
        source: impl Into<String>,
        target: impl Into<String>,
        map: impl Fn(&str) -> Option<String> + Send + Sync + 'static,
    ) -> Self {
        Self {
            source: source.into(),
            target: target.into(),
            map: Arc::new(map),
        }
    }

    pub fn apply(&self, meta: &ImageMetadata) -> ImageMetadata {
        let pairs = meta
            .pairs
            .iter()
            .map(|(k, v)| ((self.map)(k).unwrap_or_else(|| format!("unmapped.{k}")), v.clone()))
            .collect();
        ImageMetadata {
            model: self.target.clone(),
            pairs,
            ..meta.clone()
        }
    }

    pub fn into_plugin(self, priority: i32) -> PluginMetadata {
        let id = format!("translator.{}-{}", self.source, self.target);
        let name = format!("{} -> {}", self.source, self.target);
        PluginMetadata::new(PluginKind::Translator, id, name, priority).with_provider(self)
    }
}

pub fn builtin_translators() -> Vec<PluginMetadata> {
    vec![
        Translator::new("pgm", GENERIC_MODEL, |k| {
            (k.starts_with("comment.") || k == "maxval").then(|| format!("pgm.{k}"))
        })
        .into_plugin(0),
        Translator::new("nchk", GENERIC_MODEL, |k| {
            if k.starts_with("axis.") {
                Some(k.to_string())
            } else {
                (k == "version").then(|| "nchk.version".to_string())
            }
        })
        .into_plugin(0),
    ]
}

pub fn translate(ctx: &Context, meta: &ImageMetadata, target: &str) -> Result<ImageMetadata> {
    if meta.model == target {
        return Ok(meta.clone());
    }
    ctx.resolve_plugins(PluginKind::Translator)
        .iter()
        .filter_map(|p| p.provider::<Translator>())
        .find(|t| t.source == meta.model && t.target == target)
        .map(|t| t.apply(meta))
        .ok_or_else(|| Error::Unsupported(format!("no translator from {} to {target}", meta.model)))
}
