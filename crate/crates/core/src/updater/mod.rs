//! Update sites: manifests with version history, classification of a local
//! installation against one or more sites, and plan/apply/publish.
//!
//! A local file is in one of the states A–D (up to date, old version,
//! locally modified, untracked) or missing. When several sites ship the
//! same path, the earlier site in the list owns it.

mod manifest;
mod transport;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use walkdir::WalkDir;

use crate::error::{Error, Result};

pub use manifest::{checksum, FileEntry, FileVersionRecord, SiteManifest, MANIFEST_NAME};
pub use transport::{builtin_plugins, transport_for, LocalDirTransport, Transport, TransportFactory};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FileState {
    UpToDate,
    OldVersion,
    LocallyModified,
    Untracked,
    Missing,
}

impl FileState {
    pub fn as_str(self) -> &'static str {
        match self {
            FileState::UpToDate => "UP_TO_DATE",
            FileState::OldVersion => "OLD_VERSION",
            FileState::LocallyModified => "LOCALLY_MODIFIED",
            FileState::Untracked => "UNTRACKED",
            FileState::Missing => "MISSING",
        }
    }
}

impl fmt::Display for FileState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LocalFileState {
    /// Relative to the installation root, `/`-separated.
    pub path: String,
    pub state: FileState,
    pub owning_site: Option<String>,
}

/// Result of [`classify`]. Files that could not be read are listed
/// separately and take no part in planning.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Classification {
    pub states: Vec<LocalFileState>,
    pub unreadable: Vec<(String, String)>,
}

impl Classification {
    pub fn state_of(&self, path: &str) -> Option<FileState> {
        self.states.iter().find(|s| s.path == path).map(|s| s.state)
    }
}

/// Owner of each tracked path: the first site listing it.
fn owners(sites: &[SiteManifest]) -> BTreeMap<&str, &SiteManifest> {
    let mut owners = BTreeMap::new();
    for site in sites {
        for path in site.files.keys() {
            owners.entry(path.as_str()).or_insert(site);
        }
    }
    owners
}

fn relative(root: &Path, path: &Path) -> Option<String> {
    let rel = path.strip_prefix(root).ok()?;
    let parts: Vec<String> = rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect();
    Some(parts.join("/"))
}

pub fn classify(local_root: &Path, sites: &[SiteManifest]) -> Classification {
    let owners = owners(sites);
    let mut out = Classification::default();
    for (path, site) in &owners {
        let entry = &site.files[*path];
        let local = local_root.join(path);
        let state = if !local.exists() {
            FileState::Missing
        } else {
            match std::fs::read(&local) {
                Err(e) => {
                    out.unreadable.push((path.to_string(), e.to_string()));
                    continue;
                }
                Ok(bytes) => {
                    let sum = checksum(&bytes);
                    if sum == entry.current.checksum {
                        FileState::UpToDate
                    } else if entry.previous.iter().any(|r| r.checksum == sum) {
                        FileState::OldVersion
                    } else {
                        FileState::LocallyModified
                    }
                }
            }
        };
        out.states.push(LocalFileState {
            path: path.to_string(),
            state,
            owning_site: Some(site.site_name.clone()),
        });
    }
    if local_root.is_dir() {
        for entry in WalkDir::new(local_root).sort_by_file_name() {
            let entry = match entry {
                Ok(e) => e,
                Err(e) => {
                    let path = e.path().and_then(|p| relative(local_root, p)).unwrap_or_default();
                    out.unreadable.push((path, e.to_string()));
                    continue;
                }
            };
            if !entry.file_type().is_file() {
                continue;
            }
            let Some(rel) = relative(local_root, entry.path()) else {
                continue;
            };
            if !owners.contains_key(rel.as_str()) {
                out.states.push(LocalFileState {
                    path: rel,
                    state: FileState::Untracked,
                    owning_site: None,
                });
            }
        }
    }
    out.states.sort_by(|a, b| a.path.cmp(&b.path));
    out
}

#[derive(Clone, Debug, Default)]
pub struct UpdatePolicy {
    pub overwrite_modified: bool,
    /// Restricts the plan to these paths and their dependency closure.
    pub only: Option<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlannedAction {
    pub path: String,
    pub site: String,
    pub target: FileVersionRecord,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct UpdatePlan {
    pub installs: Vec<PlannedAction>,
    pub upgrades: Vec<PlannedAction>,
    pub conflicts: Vec<(String, String)>,
}

impl UpdatePlan {
    pub fn is_empty(&self) -> bool {
        self.installs.is_empty() && self.upgrades.is_empty() && self.conflicts.is_empty()
    }

    pub fn actions(&self) -> impl Iterator<Item = &PlannedAction> {
        self.installs.iter().chain(&self.upgrades)
    }
}

pub fn plan(states: &Classification, sites: &[SiteManifest], policy: &UpdatePolicy) -> UpdatePlan {
    let owners = owners(sites);
    let by_path: BTreeMap<&str, &LocalFileState> = states.states.iter().map(|s| (s.path.as_str(), s)).collect();
    let mut queue: Vec<String> = match &policy.only {
        Some(paths) => paths.clone(),
        None => states
            .states
            .iter()
            .filter(|s| s.owning_site.is_some())
            .map(|s| s.path.clone())
            .collect(),
    };
    let mut visited = BTreeSet::new();
    let mut out = UpdatePlan::default();
    while let Some(path) = queue.pop() {
        if !visited.insert(path.clone()) {
            continue;
        }
        let Some(site) = owners.get(path.as_str()) else {
            out.conflicts.push((path, "not tracked by any site".into()));
            continue;
        };
        let entry = &site.files[&path];
        let action = PlannedAction {
            path: path.clone(),
            site: site.site_name.clone(),
            target: entry.current.clone(),
        };
        let state = by_path.get(path.as_str()).map(|s| s.state);
        let scheduled = match state {
            Some(FileState::Missing) => {
                out.installs.push(action);
                true
            }
            None => {
                out.conflicts.push((path.clone(), "could not be read".into()));
                false
            }
            Some(FileState::OldVersion) => {
                out.upgrades.push(action);
                true
            }
            Some(FileState::LocallyModified) if policy.overwrite_modified => {
                out.upgrades.push(action);
                true
            }
            Some(FileState::LocallyModified) => {
                out.conflicts.push((path.clone(), "locally modified".into()));
                false
            }
            Some(_) => false,
        };
        if scheduled || state == Some(FileState::UpToDate) {
            queue.extend(entry.dependencies.iter().cloned());
        }
    }
    out.installs.sort_by(|a, b| a.path.cmp(&b.path));
    out.upgrades.sort_by(|a, b| a.path.cmp(&b.path));
    out.conflicts.sort();
    out
}

/// A site manifest together with the transport that reaches it.
#[derive(Clone)]
pub struct Site {
    pub manifest: SiteManifest,
    pub transport: Arc<dyn Transport>,
}

impl Site {
    pub fn open(transport: Arc<dyn Transport>) -> Result<Self> {
        let manifest = transport
            .load_manifest()?
            .ok_or_else(|| Error::Manifest(format!("{} has no {MANIFEST_NAME}", transport.describe())))?;
        Ok(Self { manifest, transport })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ApplyReport {
    pub installed: Vec<String>,
    pub upgraded: Vec<String>,
    pub failed: Vec<(String, String)>,
}

impl ApplyReport {
    pub fn succeeded(&self) -> usize {
        self.installed.len() + self.upgraded.len()
    }
}

fn install_one(local_root: &Path, action: &PlannedAction, sites: &[Site]) -> Result<()> {
    let site = sites
        .iter()
        .find(|s| s.manifest.site_name == action.site)
        .ok_or_else(|| Error::Transport(format!("no transport for site `{}`", action.site)))?;
    let bytes = site.transport.fetch(&action.path, &action.target)?;
    let got = checksum(&bytes);
    if got != action.target.checksum || bytes.len() as u64 != action.target.size {
        return Err(Error::Transport(format!(
            "checksum mismatch for {}: expected {}, received {got} ({} bytes)",
            action.path,
            action.target.checksum,
            bytes.len()
        )));
    }
    write_atomically(&local_root.join(&action.path), &bytes)
}

pub(crate) fn write_atomically(target: &Path, bytes: &[u8]) -> Result<()> {
    use std::io::Write;
    let dir = target.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(target).map_err(|e| e.error)?;
    Ok(())
}

/// Fetches, verifies and installs every planned action. A failed action
/// leaves its target untouched and does not stop the others.
pub fn apply(local_root: &Path, plan: &UpdatePlan, sites: &[Site]) -> ApplyReport {
    let mut report = ApplyReport::default();
    for (actions, done) in [(&plan.installs, 0), (&plan.upgrades, 1)] {
        for action in actions {
            match install_one(local_root, action, sites) {
                Ok(()) if done == 0 => report.installed.push(action.path.clone()),
                Ok(()) => report.upgraded.push(action.path.clone()),
                Err(e) => {
                    log::warn!("update of {} failed: {e}", action.path);
                    report.failed.push((action.path.clone(), e.to_string()));
                }
            }
        }
    }
    report
}

/// Uploads `paths` (relative to `local_root`) to the site behind
/// `transport` and records them in its manifest, stamping new versions with
/// `timestamp`. Unchanged files leave the manifest as it was.
pub fn publish_at(
    local_root: &Path,
    paths: &[&str],
    site_name: &str,
    transport: &dyn Transport,
    timestamp: u64,
) -> Result<SiteManifest> {
    let mut manifest = transport.load_manifest()?.unwrap_or_else(|| SiteManifest::new(site_name));
    let mut changed = false;
    for path in paths {
        let bytes = std::fs::read(local_root.join(path)).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(local_root.join(path)),
            _ => e.into(),
        })?;
        let record = FileVersionRecord::of(&bytes, timestamp);
        match manifest.files.get_mut(*path) {
            Some(entry) if entry.current.checksum == record.checksum => continue,
            Some(entry) => {
                entry.previous.retain(|r| r.checksum != record.checksum);
                let old = std::mem::replace(&mut entry.current, record);
                entry.previous.insert(0, old);
            }
            None => {
                manifest.files.insert(path.to_string(), FileEntry::new(record));
            }
        }
        transport.store(path, &bytes)?;
        changed = true;
    }
    if changed {
        transport.store_manifest(&manifest)?;
    }
    Ok(manifest)
}

pub fn publish(local_root: &Path, paths: &[&str], site_name: &str, transport: &dyn Transport) -> Result<SiteManifest> {
    let now = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    publish_at(local_root, paths, site_name, transport, now)
}

/// Declares that `path` depends on `dependencies` and rewrites the
/// manifest.
pub fn set_dependencies(transport: &dyn Transport, path: &str, dependencies: &[&str]) -> Result<SiteManifest> {
    let mut manifest = transport
        .load_manifest()?
        .ok_or_else(|| Error::Manifest(format!("{} has no {MANIFEST_NAME}", transport.describe())))?;
    let entry = manifest
        .files
        .get_mut(path)
        .ok_or_else(|| Error::Manifest(format!("`{path}` is not tracked")))?;
    entry.dependencies = dependencies.iter().map(|d| d.to_string()).collect();
    transport.store_manifest(&manifest)?;
    Ok(manifest)
}
