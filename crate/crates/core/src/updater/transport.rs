//! Transports move files and manifests between an installation and a site.
//! Only the local-directory transport ships; others plug in through
//! [`TransportFactory`] plugins of kind [`PluginKind::Uploader`].

use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::manifest::{FileVersionRecord, SiteManifest, MANIFEST_NAME};
use super::write_atomically;
use crate::container::{Context, PluginKind, PluginMetadata};
use crate::error::{Error, Result};

pub trait Transport: Send + Sync {
    fn describe(&self) -> String;
    /// `None` when the site has no manifest yet.
    fn load_manifest(&self) -> Result<Option<SiteManifest>>;
    fn fetch(&self, path: &str, record: &FileVersionRecord) -> Result<Vec<u8>>;
    fn store(&self, path: &str, bytes: &[u8]) -> Result<()>;
    fn store_manifest(&self, manifest: &SiteManifest) -> Result<()>;
}

/// A site that is a plain directory: files at their relative paths and
/// the manifest at the root.
#[derive(Clone, Debug)]
pub struct LocalDirTransport {
    root: PathBuf,
}

impl LocalDirTransport {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn resolve(&self, path: &str) -> Result<PathBuf> {
        let rel = Path::new(path);
        if rel.is_absolute() || rel.components().any(|c| matches!(c, std::path::Component::ParentDir)) {
            return Err(Error::Transport(format!("path `{path}` escapes the site")));
        }
        Ok(self.root.join(rel))
    }
}

impl Transport for LocalDirTransport {
    fn describe(&self) -> String {
        self.root.display().to_string()
    }

    fn load_manifest(&self) -> Result<Option<SiteManifest>> {
        let path = self.root.join(MANIFEST_NAME);
        match std::fs::read(&path) {
            Ok(bytes) => SiteManifest::from_bytes(&bytes)
                .map(Some)
                .map_err(|e| Error::Manifest(format!("{}: {e}", path.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::Transport(format!("{}: {e}", path.display()))),
        }
    }

    fn fetch(&self, path: &str, _record: &FileVersionRecord) -> Result<Vec<u8>> {
        let full = self.resolve(path)?;
        std::fs::read(&full).map_err(|e| Error::Transport(format!("{}: {e}", full.display())))
    }

    fn store(&self, path: &str, bytes: &[u8]) -> Result<()> {
        let full = self.resolve(path)?;
        write_atomically(&full, bytes).map_err(|e| Error::Transport(format!("{}: {e}", full.display())))
    }

    fn store_manifest(&self, manifest: &SiteManifest) -> Result<()> {
        let full = self.root.join(MANIFEST_NAME);
        write_atomically(&full, &manifest.to_bytes()).map_err(|e| Error::Transport(format!("{}: {e}", full.display())))
    }
}

pub type MakeTransport = Arc<dyn Fn(&str) -> Option<Arc<dyn Transport>> + Send + Sync>;

/// Builds a transport for the site locations it recognizes.
#[derive(Clone)]
pub struct TransportFactory(pub MakeTransport);

fn local_dir(location: &str) -> Option<Arc<dyn Transport>> {
    let path = location.strip_prefix("file://").unwrap_or(location);
    if path.contains("://") {
        return None;
    }
    Some(Arc::new(LocalDirTransport::new(path)))
}

pub fn builtin_plugins() -> Vec<PluginMetadata> {
    vec![PluginMetadata::new(PluginKind::Uploader, "uploader.local-dir", "file", 0)
        .with_provider(TransportFactory(Arc::new(local_dir)))]
}

/// The highest-priority transport accepting `location`.
pub fn transport_for(ctx: &Context, location: &str) -> Result<Arc<dyn Transport>> {
    ctx.resolve_plugins(PluginKind::Uploader)
        .iter()
        .filter_map(|p| p.provider::<TransportFactory>())
        .find_map(|f| (f.0)(location))
        .ok_or_else(|| Error::Transport(format!("no transport handles `{location}`")))
}
