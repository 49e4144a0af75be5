//! `db.xml.gz`: the gzip-compressed XML manifest at the root of a site.
//!
//! Serialization is byte-stable. Attributes are written in a fixed order,
//! nesting is indented by two spaces, files are sorted by path, and the gzip
//! header carries no name and a zero modification time.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};

use flate2::read::GzDecoder;
use flate2::{Compression, GzBuilder};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_NAME: &str = "db.xml.gz";

/// Lowercase hex SHA-256 of `bytes`.
pub fn checksum(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FileVersionRecord {
    pub checksum: String,
    pub timestamp: u64,
    pub size: u64,
}

impl FileVersionRecord {
    pub fn of(bytes: &[u8], timestamp: u64) -> Self {
        Self {
            checksum: checksum(bytes),
            timestamp,
            size: bytes.len() as u64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FileEntry {
    pub current: FileVersionRecord,
    /// Most recent first.
    pub previous: Vec<FileVersionRecord>,
    pub dependencies: Vec<String>,
}

impl FileEntry {
    pub fn new(current: FileVersionRecord) -> Self {
        Self {
            current,
            previous: Vec::new(),
            dependencies: Vec::new(),
        }
    }

    pub fn knows(&self, checksum: &str) -> bool {
        self.current.checksum == checksum || self.previous.iter().any(|r| r.checksum == checksum)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SiteManifest {
    pub site_name: String,
    pub files: BTreeMap<String, FileEntry>,
}

impl SiteManifest {
    pub fn new(site_name: impl Into<String>) -> Self {
        Self {
            site_name: site_name.into(),
            files: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (path, entry) in &self.files {
            if entry.current.checksum.len() != 64 || !entry.current.checksum.bytes().all(|b| b.is_ascii_hexdigit()) {
                return Err(Error::Manifest(format!("{path}: checksum `{}` is not a SHA-256 digest", entry.current.checksum)));
            }
            let mut seen = std::collections::HashSet::new();
            for r in &entry.previous {
                if r.checksum == entry.current.checksum {
                    return Err(Error::Manifest(format!("{path}: current version also listed as previous")));
                }
                if !seen.insert(&r.checksum) {
                    return Err(Error::Manifest(format!("{path}: duplicate previous checksum {}", r.checksum)));
                }
            }
        }
        Ok(())
    }

    /// The XML document, before compression.
    pub fn to_xml(&self) -> String {
        let mut s = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
        let _ = writeln!(s, "<updatesite name=\"{}\">", escape(&self.site_name));
        let record = |s: &mut String, tag: &str, r: &FileVersionRecord| {
            let _ = writeln!(
                s,
                "    <{tag} checksum=\"{}\" timestamp=\"{}\" size=\"{}\"/>",
                escape(&r.checksum),
                r.timestamp,
                r.size
            );
        };
        for (path, entry) in &self.files {
            let _ = writeln!(s, "  <file path=\"{}\">", escape(path));
            record(&mut s, "current", &entry.current);
            for prev in &entry.previous {
                record(&mut s, "previous", prev);
            }
            for dep in &entry.dependencies {
                let _ = writeln!(s, "    <dependency path=\"{}\"/>", escape(dep));
            }
            s.push_str("  </file>\n");
        }
        s.push_str("</updatesite>\n");
        s
    }

    /// Compressed manifest bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut enc = GzBuilder::new().mtime(0).write(Vec::new(), Compression::default());
        enc.write_all(self.to_xml().as_bytes()).expect("writing to memory");
        enc.finish().expect("writing to memory")
    }

    pub fn from_xml(text: &str) -> Result<Self> {
        let doc = roxmltree::Document::parse(text).map_err(|e| Error::Manifest(format!("XML: {e}")))?;
        let root = doc.root_element();
        let at = |node: roxmltree::Node| {
            let p = doc.text_pos_at(node.range().start);
            format!("{}:{}", p.row, p.col)
        };
        if root.tag_name().name() != "updatesite" {
            return Err(Error::Manifest(format!("{}: root element is <{}>, expected <updatesite>", at(root), root.tag_name().name())));
        }
        let attr = |node: roxmltree::Node, name: &str| -> Result<String> {
            node.attribute(name)
                .map(str::to_string)
                .ok_or_else(|| Error::Manifest(format!("{}: <{}> lacks `{name}`", at(node), node.tag_name().name())))
        };
        let number = |node: roxmltree::Node, name: &str| -> Result<u64> {
            let v = attr(node, name)?;
            v.parse()
                .map_err(|_| Error::Manifest(format!("{}: `{name}` is not an integer: {v}", at(node))))
        };
        let record = |node: roxmltree::Node| -> Result<FileVersionRecord> {
            Ok(FileVersionRecord {
                checksum: attr(node, "checksum")?,
                timestamp: number(node, "timestamp")?,
                size: number(node, "size")?,
            })
        };
        let mut manifest = SiteManifest::new(attr(root, "name")?);
        for file in root.children().filter(|n| n.is_element()) {
            if file.tag_name().name() != "file" {
                return Err(Error::Manifest(format!("{}: unexpected <{}>", at(file), file.tag_name().name())));
            }
            let path = attr(file, "path")?;
            let mut current = None;
            let mut previous = Vec::new();
            let mut dependencies = Vec::new();
            for child in file.children().filter(|n| n.is_element()) {
                match child.tag_name().name() {
                    "current" if current.is_none() => current = Some(record(child)?),
                    "previous" => previous.push(record(child)?),
                    "dependency" => dependencies.push(attr(child, "path")?),
                    other => return Err(Error::Manifest(format!("{}: unexpected <{other}> in <file>", at(child)))),
                }
            }
            let current = current.ok_or_else(|| Error::Manifest(format!("{}: <file> lacks <current>", at(file))))?;
            let entry = FileEntry {
                current,
                previous,
                dependencies,
            };
            if manifest.files.insert(path.clone(), entry).is_some() {
                return Err(Error::Manifest(format!("{}: duplicate file `{path}`", at(file))));
            }
        }
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut text = String::new();
        GzDecoder::new(bytes)
            .read_to_string(&mut text)
            .map_err(|e| Error::Manifest(format!("gzip: {e}")))?;
        Self::from_xml(&text)
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}
