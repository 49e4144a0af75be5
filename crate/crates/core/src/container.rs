//! Application context: plugin index, lazily created services, the event bus
//! and persistent preferences.
//!
//! Every other subsystem plugs into a [`Context`]. Plugins are described by
//! [`PluginMetadata`] and carry an opaque provider (`Arc<dyn Any>`), which the
//! owning subsystem downcasts to its own trait object. Several contexts can
//! coexist in one process without sharing any mutable state.

use std::any::Any;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, OnceLock, RwLock};
use std::time::Instant;

use crate::error::{Error, Result};
use crate::ndimage::Dataset;

/// Opaque factory handle attached to a plugin.
pub type Provider = Arc<dyn Any + Send + Sync>;

/// Constructs a service singleton. Called at most once per context and kind.
pub type ServiceFactory = Arc<dyn Fn(&Context) -> Provider + Send + Sync>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PluginKind {
    Service,
    Op,
    Converter,
    Format,
    Translator,
    Io,
    Preprocessor,
    Postprocessor,
    Display,
    Command,
    ConsoleArgument,
    Uploader,
}

impl PluginKind {
    pub const ALL: [PluginKind; 12] = [
        PluginKind::Service,
        PluginKind::Op,
        PluginKind::Converter,
        PluginKind::Format,
        PluginKind::Translator,
        PluginKind::Io,
        PluginKind::Preprocessor,
        PluginKind::Postprocessor,
        PluginKind::Display,
        PluginKind::Command,
        PluginKind::ConsoleArgument,
        PluginKind::Uploader,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PluginKind::Service => "service",
            PluginKind::Op => "op",
            PluginKind::Converter => "converter",
            PluginKind::Format => "format",
            PluginKind::Translator => "translator",
            PluginKind::Io => "io",
            PluginKind::Preprocessor => "preprocessor",
            PluginKind::Postprocessor => "postprocessor",
            PluginKind::Display => "display",
            PluginKind::Command => "command",
            PluginKind::ConsoleArgument => "console-argument",
            PluginKind::Uploader => "uploader",
        }
    }
}

impl fmt::Display for PluginKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PluginKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        PluginKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown plugin kind `{s}`"))
    }
}

#[derive(Clone)]
pub struct PluginMetadata {
    pub id: String,
    pub kind: PluginKind,
    pub name: String,
    pub priority: i32,
    pub provider: Option<Provider>,
    /// Assigned by the context on registration; any value set by the caller
    /// is overwritten.
    pub registration_seq: u64,
}

impl PluginMetadata {
    pub fn new(kind: PluginKind, id: impl Into<String>, name: impl Into<String>, priority: i32) -> Self {
        Self {
            id: id.into(),
            kind,
            name: name.into(),
            priority,
            provider: None,
            registration_seq: 0,
        }
    }

    pub fn with_provider<T: Any + Send + Sync>(mut self, provider: T) -> Self {
        self.provider = Some(Arc::new(provider));
        self
    }

    /// Downcasts the provider to `T`.
    pub fn provider<T: Any + Send + Sync>(&self) -> Option<&T> {
        self.provider.as_ref().and_then(|p| p.downcast_ref::<T>())
    }
}

impl fmt::Debug for PluginMetadata {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PluginMetadata")
            .field("id", &self.id)
            .field("kind", &self.kind)
            .field("name", &self.name)
            .field("priority", &self.priority)
            .field("registration_seq", &self.registration_seq)
            .field("has_provider", &self.provider.is_some())
            .finish()
    }
}

/// Parses the optional `plugins.txt` manifest: one plugin per line,
/// `kind<TAB>id<TAB>name<TAB>priority`, `#` comments. Entries carry no provider.
pub fn parse_plugin_manifest(text: &str) -> Result<Vec<PluginMetadata>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::PluginManifest {
                line: line_no,
                message: format!("expected 4 tab-separated fields, found {}", fields.len()),
            });
        }
        let kind = fields[0]
            .parse::<PluginKind>()
            .map_err(|message| Error::PluginManifest { line: line_no, message })?;
        let priority = fields[3].trim().parse::<i32>().map_err(|e| Error::PluginManifest {
            line: line_no,
            message: format!("bad priority `{}`: {e}", fields[3]),
        })?;
        out.push(PluginMetadata::new(kind, fields[1], fields[2], priority));
    }
    Ok(out)
}

#[derive(Default)]
struct PluginIndex {
    by_kind: BTreeMap<PluginKind, Vec<PluginMetadata>>,
    ids: HashMap<String, PluginKind>,
    next_seq: u64,
}

impl PluginIndex {
    fn insert(&mut self, mut meta: PluginMetadata) -> Result<()> {
        if let Some(kind) = self.ids.get(&meta.id) {
            return Err(Error::DuplicatePlugin {
                id: meta.id.clone(),
                existing: format!("{kind} `{}`", meta.id),
                rejected: format!("{} `{}`", meta.kind, meta.name),
            });
        }
        self.next_seq += 1;
        meta.registration_seq = self.next_seq;
        self.ids.insert(meta.id.clone(), meta.kind);
        let list = self.by_kind.entry(meta.kind).or_default();
        // Keep each list ordered by (-priority, seq); a new entry has the
        // largest seq so it goes after every entry of equal priority.
        let at = list.partition_point(|p| p.priority >= meta.priority);
        list.insert(at, meta);
        Ok(())
    }
}

/// A published event. `type_path` runs from the root type (`event`) to the
/// most specific one.
#[derive(Clone)]
pub struct Event {
    type_path: Vec<String>,
    pub payload: Option<Provider>,
    pub timestamp: u64,
}

impl Event {
    pub const ROOT: &'static str = "event";

    pub fn new<S: Into<String>>(type_path: impl IntoIterator<Item = S>) -> Result<Self> {
        let type_path: Vec<String> = type_path.into_iter().map(Into::into).collect();
        match type_path.first() {
            None => return Err(Error::InvalidEvent("empty type path".into())),
            Some(root) if root != Self::ROOT => {
                return Err(Error::InvalidEvent(format!(
                    "type path must start with `{}`, found `{root}`",
                    Self::ROOT
                )))
            }
            _ => {}
        }
        Ok(Self {
            type_path,
            payload: None,
            timestamp: monotonic_nanos(),
        })
    }

    pub fn with_payload<T: Any + Send + Sync>(mut self, payload: T) -> Self {
        self.payload = Some(Arc::new(payload));
        self
    }

    pub fn type_path(&self) -> &[String] {
        &self.type_path
    }

    pub fn is_a(&self, type_name: &str) -> bool {
        self.type_path.iter().any(|t| t == type_name)
    }
}

impl fmt::Debug for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Event")
            .field("type_path", &self.type_path)
            .field("timestamp", &self.timestamp)
            .finish()
    }
}

fn monotonic_nanos() -> u64 {
    static START: OnceLock<Instant> = OnceLock::new();
    START.get_or_init(Instant::now).elapsed().as_nanos() as u64
}

pub type EventHandler = Arc<dyn Fn(&Context, &Event) -> std::result::Result<(), String> + Send + Sync>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SubscriptionId(u64);

struct Subscription {
    id: SubscriptionId,
    type_name: String,
    handler: EventHandler,
}

/// Runtime knobs that are not persisted.
#[derive(Clone, Debug)]
pub struct Settings {
    /// Checksum op inputs around every execution and fail on mutation.
    pub checked_ops: bool,
    /// Datasets larger than this many bytes open as cell images when the
    /// format supports block reads.
    pub virtualization_threshold: u64,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            checked_ops: false,
            virtualization_threshold: 64 * 1024 * 1024,
        }
    }
}

#[derive(Default)]
struct Preferences {
    values: BTreeMap<String, String>,
    path: Option<PathBuf>,
}

/// Destination for headless display output; defaults to standard output.
pub type OutputSink = Box<dyn Write + Send>;

pub struct Context {
    plugins: RwLock<PluginIndex>,
    services: Mutex<HashMap<String, Arc<OnceLock<Provider>>>>,
    active_dataset: RwLock<Option<Arc<Dataset>>>,
    preferences: Mutex<Preferences>,
    subscribers: RwLock<Vec<Subscription>>,
    next_subscription: AtomicU64,
    settings: RwLock<Settings>,
    output: Mutex<OutputSink>,
}

impl fmt::Debug for Context {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let index = self.plugins.read().unwrap();
        f.debug_struct("Context")
            .field("plugins", &index.ids.len())
            .finish_non_exhaustive()
    }
}

impl Context {
    /// Creates a context indexing exactly `plugins`, in list order.
    pub fn new(plugins: impl IntoIterator<Item = PluginMetadata>) -> Result<Self> {
        let ctx = Self {
            plugins: RwLock::new(PluginIndex::default()),
            services: Mutex::new(HashMap::new()),
            active_dataset: RwLock::new(None),
            preferences: Mutex::new(Preferences::default()),
            subscribers: RwLock::new(Vec::new()),
            next_subscription: AtomicU64::new(1),
            settings: RwLock::new(Settings::default()),
            output: Mutex::new(Box::new(std::io::stdout())),
        };
        {
            let mut index = ctx.plugins.write().unwrap();
            for meta in plugins {
                index.insert(meta)?;
            }
        }
        Ok(ctx)
    }

    /// Creates a context preloaded with every built-in plugin.
    pub fn with_defaults() -> Self {
        Self::new(crate::defaults::builtin_plugins()).expect("built-in plugin ids are unique")
    }

    pub fn register_plugin(&self, meta: PluginMetadata) -> Result<()> {
        self.plugins.write().unwrap().insert(meta)
    }

    /// Plugins of `kind`, highest priority first, ties in registration order.
    /// The returned list is a snapshot.
    pub fn resolve_plugins(&self, kind: PluginKind) -> Vec<PluginMetadata> {
        self.plugins
            .read()
            .unwrap()
            .by_kind
            .get(&kind)
            .cloned()
            .unwrap_or_default()
    }

    pub fn plugin(&self, id: &str) -> Option<PluginMetadata> {
        let index = self.plugins.read().unwrap();
        let kind = index.ids.get(id)?;
        index.by_kind.get(kind)?.iter().find(|p| p.id == id).cloned()
    }

    pub fn plugin_count(&self) -> usize {
        self.plugins.read().unwrap().ids.len()
    }

    /// Returns the singleton for `service_kind`, instantiating it on first use
    /// from the highest-priority service plugin whose name is `service_kind`.
    pub fn get_service(&self, service_kind: &str) -> Result<Provider> {
        let cell = {
            let mut services = self.services.lock().unwrap();
            services.entry(service_kind.to_string()).or_default().clone()
        };
        if let Some(existing) = cell.get() {
            return Ok(existing.clone());
        }
        let factory = self
            .resolve_plugins(PluginKind::Service)
            .into_iter()
            .filter(|p| p.name == service_kind)
            .find_map(|p| p.provider::<ServiceFactory>().cloned())
            .ok_or_else(|| Error::MissingService(service_kind.to_string()))?;
        // The factory may request other services, so no lock is held here;
        // OnceLock still guarantees a single instantiation.
        Ok(cell.get_or_init(|| factory(self)).clone())
    }

    /// Typed variant of [`Context::get_service`].
    pub fn service<T: Any + Send + Sync>(&self, service_kind: &str) -> Result<Arc<T>> {
        self.get_service(service_kind)?
            .downcast::<T>()
            .map_err(|_| Error::MissingService(format!("{service_kind} (type mismatch)")))
    }

    pub fn subscribe(&self, type_name: impl Into<String>, handler: EventHandler) -> SubscriptionId {
        let id = SubscriptionId(self.next_subscription.fetch_add(1, Ordering::Relaxed));
        self.subscribers.write().unwrap().push(Subscription {
            id,
            type_name: type_name.into(),
            handler,
        });
        id
    }

    pub fn unsubscribe(&self, id: SubscriptionId) -> bool {
        let mut subs = self.subscribers.write().unwrap();
        let before = subs.len();
        subs.retain(|s| s.id != id);
        subs.len() != before
    }

    /// Delivers `event` synchronously, in subscription order, to every
    /// subscriber whose type occurs in the event's type path. Handler errors
    /// and panics are logged and do not stop delivery. Returns the number of
    /// handlers invoked.
    pub fn publish(&self, event: &Event) -> usize {
        let targets: Vec<(String, EventHandler)> = self
            .subscribers
            .read()
            .unwrap()
            .iter()
            .filter(|s| event.is_a(&s.type_name))
            .map(|s| (s.type_name.clone(), s.handler.clone()))
            .collect();
        for (type_name, handler) in &targets {
            match catch_unwind(AssertUnwindSafe(|| handler(self, event))) {
                Ok(Ok(())) => {}
                Ok(Err(msg)) => log::warn!("event handler on `{type_name}` failed: {msg}"),
                Err(_) => log::warn!("event handler on `{type_name}` panicked"),
            }
        }
        targets.len()
    }

    pub fn active_dataset(&self) -> Option<Arc<Dataset>> {
        self.active_dataset.read().unwrap().clone()
    }

    pub fn set_active_dataset(&self, dataset: Option<Arc<Dataset>>) {
        *self.active_dataset.write().unwrap() = dataset;
    }

    pub fn settings(&self) -> Settings {
        self.settings.read().unwrap().clone()
    }

    pub fn update_settings(&self, f: impl FnOnce(&mut Settings)) {
        f(&mut self.settings.write().unwrap());
    }

    pub fn set_output(&self, sink: OutputSink) {
        *self.output.lock().unwrap() = sink;
    }

    /// Writes one line to the display sink.
    pub fn emit_line(&self, line: &str) -> Result<()> {
        let mut out = self.output.lock().unwrap();
        writeln!(out, "{line}")?;
        out.flush()?;
        Ok(())
    }

    pub fn preference(&self, key: &str) -> Option<String> {
        self.preferences.lock().unwrap().values.get(key).cloned()
    }

    pub fn preferences(&self) -> BTreeMap<String, String> {
        self.preferences.lock().unwrap().values.clone()
    }

    /// Stores `key=value`, rewriting the preferences file when one is bound.
    pub fn set_preference(&self, key: impl Into<String>, value: impl Into<String>) -> Result<()> {
        let mut prefs = self.preferences.lock().unwrap();
        prefs.values.insert(key.into(), value.into());
        if let Some(path) = prefs.path.clone() {
            write_preferences(&path, &prefs.values)?;
        }
        Ok(())
    }

    /// Binds the preferences store to `path`, loading it if it exists.
    pub fn bind_preferences_file(&self, path: impl Into<PathBuf>) -> Result<()> {
        let path = path.into();
        let mut prefs = self.preferences.lock().unwrap();
        if path.exists() {
            let text = std::fs::read_to_string(&path)?;
            for line in text.lines() {
                if let Some((k, v)) = line.split_once('=') {
                    prefs.values.insert(k.to_string(), v.to_string());
                }
            }
        }
        prefs.path = Some(path);
        Ok(())
    }
}

fn write_preferences(path: &Path, values: &BTreeMap<String, String>) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir)?;
    for (k, v) in values {
        writeln!(tmp, "{k}={v}")?;
    }
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Registration helper for a service singleton.
pub fn service_plugin(
    id: impl Into<String>,
    service_kind: impl Into<String>,
    priority: i32,
    factory: impl Fn(&Context) -> Provider + Send + Sync + 'static,
) -> PluginMetadata {
    let factory: ServiceFactory = Arc::new(factory);
    PluginMetadata::new(PluginKind::Service, id, service_kind, priority).with_provider(factory)
}

/// Distinct ids across a list; used by callers assembling plugin sets.
pub fn has_unique_ids(plugins: &[PluginMetadata]) -> bool {
    let mut seen = HashSet::new();
    plugins.iter().all(|p| seen.insert(p.id.as_str()))
}
