//! Locations, data handles and pluggable image formats.
//!
//! Formats are plugins of kind `format` whose provider is an
//! `Arc<dyn Format>`. Detection prefers a magic-byte match over a suffix
//! match and breaks ties by plugin priority.

mod handle;
mod nchk;
mod pgm;
mod raw;
mod translate;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::{Arc, Mutex};

pub use handle::{resolve_handle, DataHandle, FileHandle, HandleMode, Location, MemoryHandle};
pub use nchk::{NchkFormat, NCHK_MAGIC, NCHK_VERSION};
pub use pgm::PgmFormat;
pub use raw::{open_raw, RawSpec};
pub use translate::{builtin_translators, translate, Translator, GENERIC_MODEL};

pub(crate) use handle::open_handle;

use crate::container::{Context, Event, PluginKind, PluginMetadata};
use crate::error::{Error, Result};
use crate::ndimage::{
    packed_storage_bytes, Axis, BackingSpec, CellGrid, CellOptions, CellSource, Dataset, NDImage, PixelType,
    SampleBuffer, DEFAULT_CACHE_BUDGET, MAX_BUFFER_SAMPLES,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Capabilities {
    pub read: bool,
    pub write: bool,
    pub block_read: bool,
}

#[derive(Clone, Debug)]
pub struct FormatDescriptor {
    pub id: String,
    pub name: String,
    /// Lower-case suffixes without the dot.
    pub suffixes: Vec<String>,
    /// Accepted byte prefixes; any one of them identifies the format.
    pub magic: Vec<Vec<u8>>,
    pub capabilities: Capabilities,
}

impl FormatDescriptor {
    fn matches_magic(&self, head: &[u8]) -> bool {
        self.magic.iter().any(|m| !m.is_empty() && head.starts_with(m))
    }

    fn matches_suffix(&self, suffix: Option<&str>) -> bool {
        suffix.is_some_and(|s| self.suffixes.iter().any(|x| x == s))
    }
}

/// Cell layout of a block-readable file: per-axis cell extent and the
/// absolute byte offset of every cell (plus one trailing end offset).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockLayout {
    pub cell_dims: Vec<usize>,
    pub cell_offsets: Vec<u64>,
}

impl BlockLayout {
    pub fn cell_count(&self) -> usize {
        self.cell_offsets.len() - 1
    }

    pub fn cell_range(&self, index: usize) -> std::ops::Range<u64> {
        self.cell_offsets[index]..self.cell_offsets[index + 1]
    }

    pub fn data_start(&self) -> u64 {
        self.cell_offsets[0]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageMetadata {
    /// Metadata model id: a format id, or [`GENERIC_MODEL`].
    pub model: String,
    pub name: String,
    pub axes: Vec<Axis>,
    pub pixel_type: PixelType,
    pub pairs: BTreeMap<String, String>,
    pub layout: Option<BlockLayout>,
}

impl ImageMetadata {
    pub fn dims(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.length).collect()
    }

    pub fn axis_labels(&self) -> Vec<String> {
        self.axes.iter().map(|a| a.kind.label().to_string()).collect()
    }

    pub fn num_samples(&self) -> u128 {
        self.axes.iter().map(|a| a.length as u128).product()
    }
}

pub trait Format: Send + Sync {
    fn descriptor(&self) -> &FormatDescriptor;

    /// Parses the header and validates the payload size.
    fn parse(&self, handle: &mut dyn DataHandle, name: &str) -> Result<ImageMetadata>;

    /// Reads every sample into a fresh image with the given backing.
    fn read_image(&self, handle: &mut dyn DataHandle, meta: &ImageMetadata, backing: BackingSpec) -> Result<NDImage>;

    /// Errors unless this format can store `image` (optionally as `variant`).
    fn check_writable(&self, image: &NDImage, variant: Option<&str>) -> Result<()>;

    fn write(&self, dataset: &Dataset, handle: &mut dyn DataHandle, variant: Option<&str>) -> Result<()>;

    /// Raw samples of one cell, touching only that cell's bytes.
    fn read_block(&self, _handle: &mut dyn DataHandle, _meta: &ImageMetadata, _index: usize) -> Result<SampleBuffer> {
        Err(Error::Unsupported(format!(
            "format {} does not support block reads",
            self.descriptor().id
        )))
    }
}

impl fmt::Debug for dyn Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Format({})", self.descriptor().id)
    }
}

pub fn format_plugin(format: Arc<dyn Format>, priority: i32) -> PluginMetadata {
    let d = format.descriptor().clone();
    PluginMetadata::new(PluginKind::Format, format!("format.{}", d.id), d.name, priority).with_provider(format)
}

pub fn builtin_formats() -> Vec<PluginMetadata> {
    vec![
        format_plugin(Arc::new(PgmFormat::new()), 0),
        format_plugin(Arc::new(NchkFormat::new()), 0),
    ]
}

/// Registered formats in resolution order.
pub fn formats(ctx: &Context) -> Vec<Arc<dyn Format>> {
    ctx.resolve_plugins(PluginKind::Format)
        .iter()
        .filter_map(|p| p.provider::<Arc<dyn Format>>().cloned())
        .collect()
}

/// Looks up a format by id. `id` may carry a variant after a colon, as in
/// `pgm:ascii`; the variant is returned separately.
pub fn format_by_id(ctx: &Context, id: &str) -> Result<(Arc<dyn Format>, Option<String>)> {
    let (base, variant) = match id.split_once(':') {
        Some((b, v)) => (b, Some(v.to_string())),
        None => (id, None),
    };
    formats(ctx)
        .into_iter()
        .find(|f| f.descriptor().id == base)
        .map(|f| (f, variant))
        .ok_or_else(|| Error::NoFormat(format!("format id `{id}`")))
}

const DETECT_PREFIX: usize = 16;

pub fn detect_format(ctx: &Context, loc: &Location) -> Result<Arc<dyn Format>> {
    let mut handle = open_handle(loc, HandleMode::Read)?;
    let mut head = vec![0u8; DETECT_PREFIX];
    let n = handle.read(&mut head)?;
    head.truncate(n);
    let suffix = loc.suffix();
    let mut best: Option<(u8, Arc<dyn Format>)> = None;
    for format in formats(ctx) {
        let d = format.descriptor();
        if !d.capabilities.read {
            continue;
        }
        let score = if d.matches_magic(&head) {
            2
        } else if d.matches_suffix(suffix.as_deref()) {
            1
        } else {
            0
        };
        // strict comparison keeps the earlier (higher priority) format on ties
        if score > 0 && best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, format));
        }
    }
    best.map(|(_, f)| f).ok_or_else(|| Error::NoFormat(loc.to_string()))
}

/// Detected format and parsed metadata, without reading pixels.
pub fn inspect(ctx: &Context, loc: &Location) -> Result<(Arc<dyn Format>, ImageMetadata)> {
    let format = detect_format(ctx, loc)?;
    let mut handle = open_handle(loc, HandleMode::Read)?;
    let meta = format.parse(handle.as_mut(), &loc.name())?;
    Ok((format, meta))
}

/// Reads a dataset without touching the context's active dataset. Large
/// block-readable files come back CELL-backed and page in on demand.
pub fn read_dataset(ctx: &Context, loc: &Location) -> Result<Dataset> {
    let format = detect_format(ctx, loc)?;
    let mut handle = open_handle(loc, HandleMode::Read)?;
    let meta = format.parse(handle.as_mut(), &loc.name())?;
    let bytes = packed_storage_bytes(meta.pixel_type, u64::try_from(meta.num_samples()).unwrap_or(u64::MAX));
    let threshold = ctx.settings().virtualization_threshold;
    let image = match &meta.layout {
        Some(layout) if format.descriptor().capabilities.block_read && bytes > threshold => {
            let source = Arc::new(BlockSource {
                format: format.clone(),
                handle: Mutex::new(handle),
                meta: meta.clone(),
            });
            let opts = CellOptions {
                cell_dims: Some(layout.cell_dims.clone()),
                cache_budget_bytes: DEFAULT_CACHE_BUDGET,
                spill_directory: None,
            };
            NDImage::create_with_source(meta.pixel_type, meta.axes.clone(), BackingSpec::Cell(opts), Some(source))?
        }
        _ => {
            let backing = if meta.num_samples() <= MAX_BUFFER_SAMPLES as u128 {
                BackingSpec::Array
            } else {
                BackingSpec::Planar
            };
            format.read_image(handle.as_mut(), &meta, backing)?
        }
    };
    Ok(Dataset::new(meta.name.clone(), image)?.with_source(loc.clone()))
}

/// Reads a dataset and makes it the context's active dataset.
pub fn open(ctx: &Context, loc: &Location) -> Result<Arc<Dataset>> {
    let dataset = Arc::new(read_dataset(ctx, loc)?);
    ctx.set_active_dataset(Some(dataset.clone()));
    if let Ok(event) = Event::new(["event", "dataset", "opened"]) {
        ctx.publish(&event.with_payload(dataset.clone()));
    }
    Ok(dataset)
}

pub fn save(ctx: &Context, dataset: &Dataset, loc: &Location, format_id: &str) -> Result<()> {
    let (format, variant) = format_by_id(ctx, format_id)?;
    if !format.descriptor().capabilities.write {
        return Err(Error::Unsupported(format!("format {} is read-only", format.descriptor().id)));
    }
    format.check_writable(&dataset.image, variant.as_deref())?;
    let mut handle = open_handle(loc, HandleMode::Write)?;
    format.write(dataset, handle.as_mut(), variant.as_deref())
}

pub fn read_block(
    format: &dyn Format,
    handle: &mut dyn DataHandle,
    meta: &ImageMetadata,
    index: usize,
) -> Result<SampleBuffer> {
    format.read_block(handle, meta, index)
}

/// Feeds a cell image from a block-readable file.
struct BlockSource {
    format: Arc<dyn Format>,
    handle: Mutex<Box<dyn DataHandle>>,
    meta: ImageMetadata,
}

impl CellSource for BlockSource {
    fn read_cell(&self, index: usize) -> Result<SampleBuffer> {
        let mut handle = self.handle.lock().unwrap();
        let buf = self.format.read_block(handle.as_mut(), &self.meta, index);
        // the read log is only useful for short-lived handles
        handle.clear_read_log();
        buf
    }
}

/// Copies a cell's samples (cell-local row-major order) into `image`.
pub(crate) fn scatter_cell(image: &mut NDImage, grid: &CellGrid, index: usize, buf: &SampleBuffer) -> Result<()> {
    let (min, shape) = grid.cell_bounds(index);
    let mut pos = min.clone();
    let mut i = 0;
    for_each_row(&min, &shape, |row_start| {
        pos.copy_from_slice(row_start);
        for x in 0..shape[0] {
            pos[0] = min[0] + x;
            image.set_raw(&pos, buf.get_raw(i))?;
            i += 1;
        }
        Ok(())
    })
}

/// Collects a cell's samples from `image` in cell-local row-major order.
pub(crate) fn gather_cell(image: &NDImage, grid: &CellGrid, index: usize) -> Result<SampleBuffer> {
    let (min, shape) = grid.cell_bounds(index);
    let mut buf = SampleBuffer::zeroed(image.pixel_type(), shape.iter().product())?;
    let mut pos = min.clone();
    let mut i = 0;
    for_each_row(&min, &shape, |row_start| {
        pos.copy_from_slice(row_start);
        for x in 0..shape[0] {
            pos[0] = min[0] + x;
            buf.set_raw(i, image.get_raw(&pos)?);
            i += 1;
        }
        Ok(())
    })?;
    Ok(buf)
}

/// Calls `f` with the start position of every row (first axis at `min[0]`)
/// of the box `min .. min+shape`, in row-major order.
fn for_each_row(min: &[usize], shape: &[usize], mut f: impl FnMut(&[usize]) -> Result<()>) -> Result<()> {
    let mut pos = min.to_vec();
    loop {
        f(&pos)?;
        let mut d = 1;
        loop {
            if d >= pos.len() {
                return Ok(());
            }
            if pos[d] + 1 < min[d] + shape[d] {
                pos[d] += 1;
                break;
            }
            pos[d] = min[d];
            d += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx() -> Context {
        Context::new(builtin_formats()).unwrap()
    }

    fn write(dir: &std::path::Path, name: &str, bytes: &[u8]) -> Location {
        let p = dir.join(name);
        std::fs::write(&p, bytes).unwrap();
        Location::file(p)
    }

    #[test]
    fn magic_beats_suffix() {
        let dir = tempfile::tempdir().unwrap();
        let c = ctx();
        let pgm = write(dir.path(), "a.pgm", b"P5\n1 1\n255\n\x07");
        assert_eq!(detect_format(&c, &pgm).unwrap().descriptor().id, "pgm");

        let mut img = NDImage::new(PixelType::Uint8, &[2, 2], BackingSpec::Array).unwrap();
        img.set_linear(3, 9.0).unwrap();
        let xyz = Location::file(dir.path().join("a.xyz"));
        save(&c, &Dataset::new("x", img).unwrap(), &xyz, "nchk").unwrap();
        assert_eq!(detect_format(&c, &xyz).unwrap().descriptor().id, "nchk");

        // NCHK bytes under a .pgm name still detect as NCHK
        let disguised = write(dir.path(), "b.pgm", &std::fs::read(dir.path().join("a.xyz")).unwrap());
        assert_eq!(detect_format(&c, &disguised).unwrap().descriptor().id, "nchk");
    }

    #[test]
    fn empty_unknown_file_is_undetectable() {
        let dir = tempfile::tempdir().unwrap();
        let loc = write(dir.path(), "empty.bin", b"");
        assert!(matches!(detect_format(&ctx(), &loc), Err(Error::NoFormat(_))));
    }

    #[test]
    fn open_sets_active_dataset_but_read_does_not() {
        let c = ctx();
        let loc = Location::memory("m.pgm", b"P2\n3 2\n255\n0 1 2\n3 4 5\n".to_vec());
        let ds = read_dataset(&c, &loc).unwrap();
        assert_eq!(ds.image.dims(), &[3, 2]);
        assert!(c.active_dataset().is_none());
        open(&c, &loc).unwrap();
        assert!(c.active_dataset().is_some());
    }

    #[test]
    fn large_block_files_open_as_cells() {
        let c = ctx();
        c.update_settings(|s| s.virtualization_threshold = 1000);
        let mut img = NDImage::new(PixelType::Uint16, &[40, 30], BackingSpec::Array).unwrap();
        for i in 0..1200 {
            img.set_linear(i, (i * 37 % 65536) as f64).unwrap();
        }
        let loc = Location::memory("big.nchk", Vec::new());
        save(&c, &Dataset::new("big", img.try_clone().unwrap()).unwrap(), &loc, "nchk:16x16").unwrap();
        let ds = read_dataset(&c, &loc).unwrap();
        assert_eq!(ds.image.backing(), crate::ndimage::Backing::Cell);
        assert!(ds.image.same_samples(&img).unwrap());
    }

    #[test]
    fn rows_cover_box() {
        let mut starts = Vec::new();
        for_each_row(&[1, 2, 0], &[5, 2, 2], |p| {
            starts.push(p.to_vec());
            Ok(())
        })
        .unwrap();
        assert_eq!(starts, vec![vec![1, 2, 0], vec![1, 3, 0], vec![1, 2, 1], vec![1, 3, 1]]);
    }
}
