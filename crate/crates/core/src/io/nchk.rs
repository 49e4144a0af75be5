//! NCHK: a native chunked container that supports reading single cells.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "NCHK"            4 bytes magic
//! version           u32 (1)
//! pixel type code   u8  (index into PixelType::ALL)
//! ndim              u32
//! per axis:         u64 length, u64 cell length,
//!                   u8 label code (X=0 Y=1 Z=2 TIME=3 CHANNEL=4 other=255),
//!                   u16 label byte length, UTF-8 label
//! cells             row-major cell order; each cell holds its clipped
//!                   samples row-major, bit-packed types padded to a byte
//! crc               u32 CRC-32 of every header byte above
//! ```

use std::collections::BTreeMap;

use super::{
    gather_cell, scatter_cell, BlockLayout, Capabilities, DataHandle, Format, FormatDescriptor, ImageMetadata,
};
use crate::error::{Error, Result};
use crate::ndimage::{
    packed_storage_bytes, Axis, AxisType, Backing, BackingSpec, CellGrid, Dataset, NDImage, PixelType, SampleBuffer,
    DEFAULT_CELL_EXTENT,
};

pub const NCHK_MAGIC: &[u8; 4] = b"NCHK";
pub const NCHK_VERSION: u32 = 1;

const CUSTOM_LABEL: u8 = 255;

pub struct NchkFormat {
    descriptor: FormatDescriptor,
}

impl Default for NchkFormat {
    fn default() -> Self {
        Self::new()
    }
}

impl NchkFormat {
    pub fn new() -> Self {
        Self {
            descriptor: FormatDescriptor {
                id: "nchk".into(),
                name: "Native chunked".into(),
                suffixes: vec!["nchk".into()],
                magic: vec![NCHK_MAGIC.to_vec()],
                capabilities: Capabilities {
                    read: true,
                    write: true,
                    block_read: true,
                },
            },
        }
    }
}

fn malformed(offset: u64, message: impl Into<String>) -> Error {
    Error::Malformed {
        format: "nchk".into(),
        offset,
        message: message.into(),
    }
}

fn label_code(kind: &AxisType) -> u8 {
    match kind {
        AxisType::X => 0,
        AxisType::Y => 1,
        AxisType::Z => 2,
        AxisType::Time => 3,
        AxisType::Channel => 4,
        AxisType::Custom(_) => CUSTOM_LABEL,
    }
}

/// Cell extents written for an image: its own grid when cell-backed,
/// otherwise the default extent along every axis.
fn default_cell_dims(image: &NDImage) -> Vec<usize> {
    match image.cell_store() {
        Some(store) => store.grid().cell_dims().to_vec(),
        None => vec![DEFAULT_CELL_EXTENT; image.ndim()],
    }
}

/// Parses a `WxHx...` cell-extent variant.
fn parse_cell_variant(variant: &str, ndim: usize) -> Result<Vec<usize>> {
    let dims: Vec<usize> = variant
        .split('x')
        .map(|t| t.parse::<usize>().ok().filter(|&n| n > 0))
        .collect::<Option<_>>()
        .ok_or_else(|| Error::Unsupported(format!("nchk variant `{variant}` is not a cell extent like 64x64")))?;
    if dims.len() != ndim {
        return Err(Error::Unsupported(format!(
            "nchk cell extent `{variant}` has {} axes, image has {ndim}",
            dims.len()
        )));
    }
    Ok(dims)
}

fn encode_header(image: &NDImage, cell_dims: &[usize]) -> Result<Vec<u8>> {
    let mut h = Vec::new();
    h.extend_from_slice(NCHK_MAGIC);
    h.extend_from_slice(&NCHK_VERSION.to_le_bytes());
    h.push(image.pixel_type().code());
    h.extend_from_slice(&(image.ndim() as u32).to_le_bytes());
    for (axis, &cell) in image.axes().iter().zip(cell_dims) {
        h.extend_from_slice(&(axis.length as u64).to_le_bytes());
        h.extend_from_slice(&(cell as u64).to_le_bytes());
        h.push(label_code(&axis.kind));
        let label = axis.kind.label().as_bytes();
        let len = u16::try_from(label.len()).map_err(|_| Error::Unsupported("axis label longer than 65535 bytes".into()))?;
        h.extend_from_slice(&len.to_le_bytes());
        h.extend_from_slice(label);
    }
    Ok(h)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(malformed(self.pos as u64, format!("header truncated reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Upper bound on header bytes read before giving up.
const MAX_HEADER: u64 = 1 << 20;

impl Format for NchkFormat {
    fn descriptor(&self) -> &FormatDescriptor {
        &self.descriptor
    }

    fn parse(&self, handle: &mut dyn DataHandle, name: &str) -> Result<ImageMetadata> {
        let file_len = handle.length();
        handle.seek(0)?;
        let head = handle.read_exact_vec(file_len.min(MAX_HEADER) as usize)?;
        let mut r = Reader { bytes: &head, pos: 0 };
        if r.take(4, "magic")? != NCHK_MAGIC {
            return Err(malformed(0, "missing NCHK magic"));
        }
        let version = r.u32("version")?;
        if version != NCHK_VERSION {
            return Err(malformed(4, format!("unsupported version {version}")));
        }
        let code_at = r.pos as u64;
        let code = r.u8("pixel type")?;
        let pixel_type = PixelType::from_code(code).ok_or_else(|| malformed(code_at, format!("unknown pixel type code {code}")))?;
        let ndim_at = r.pos as u64;
        let ndim = r.u32("ndim")? as usize;
        if ndim == 0 || ndim > 64 {
            return Err(malformed(ndim_at, format!("unsupported ndim {ndim}")));
        }
        let mut axes = Vec::with_capacity(ndim);
        let mut cell_dims = Vec::with_capacity(ndim);
        let mut pairs = BTreeMap::new();
        for i in 0..ndim {
            let at = r.pos as u64;
            let length = r.u64("axis length")?;
            let cell = r.u64("cell length")?;
            if length == 0 || cell == 0 {
                return Err(malformed(at, format!("axis {i} has zero length or cell length")));
            }
            let code_at = r.pos as u64;
            let code = r.u8("label code")?;
            let len = r.u16("label length")? as usize;
            let label_at = r.pos as u64;
            let label = std::str::from_utf8(r.take(len, "label")?)
                .map_err(|_| malformed(label_at, "axis label is not UTF-8"))?
                .to_string();
            let kind = AxisType::from_label(&label);
            let expected = label_code(&kind);
            if code != expected {
                return Err(malformed(code_at, format!("label code {code} does not match label `{label}`")));
            }
            pairs.insert(format!("axis.{i}"), label);
            axes.push(Axis::new(kind, length as usize));
            cell_dims.push((cell as usize).min(length as usize));
        }
        let header_len = r.pos;
        let dims: Vec<usize> = axes.iter().map(|a| a.length).collect();
        let grid = CellGrid::new(&dims, &cell_dims)?;
        let mut offsets = Vec::with_capacity(grid.cell_count() + 1);
        let mut off = header_len as u64;
        offsets.push(off);
        for idx in 0..grid.cell_count() {
            off += packed_storage_bytes(pixel_type, grid.cell_len(idx) as u64);
            offsets.push(off);
        }
        let expected_len = off + 4;
        if file_len != expected_len {
            return Err(malformed(
                file_len.min(off),
                format!("file is {file_len} bytes, layout needs {expected_len}"),
            ));
        }
        handle.seek(off)?;
        let stored = u32::from_le_bytes(handle.read_exact_vec(4)?.try_into().unwrap());
        let actual = crc32fast::hash(&head[..header_len]);
        if stored != actual {
            return Err(malformed(off, format!("header CRC {stored:08x} does not match {actual:08x}")));
        }
        pairs.insert("version".into(), version.to_string());
        Ok(ImageMetadata {
            model: "nchk".into(),
            name: name.to_string(),
            axes,
            pixel_type,
            pairs,
            layout: Some(BlockLayout {
                cell_dims,
                cell_offsets: offsets,
            }),
        })
    }

    fn read_image(&self, handle: &mut dyn DataHandle, meta: &ImageMetadata, backing: BackingSpec) -> Result<NDImage> {
        let layout = meta.layout.as_ref().ok_or_else(|| malformed(0, "metadata lacks a cell layout"))?;
        let mut image = NDImage::create(meta.pixel_type, meta.axes.clone(), backing)?;
        let grid = CellGrid::new(&meta.dims(), &layout.cell_dims)?;
        for idx in 0..layout.cell_count() {
            let buf = self.read_block(handle, meta, idx)?;
            scatter_cell(&mut image, &grid, idx, &buf)?;
        }
        Ok(image)
    }

    fn check_writable(&self, image: &NDImage, variant: Option<&str>) -> Result<()> {
        if let Some(v) = variant {
            parse_cell_variant(v, image.ndim())?;
        }
        Ok(())
    }

    fn write(&self, dataset: &Dataset, handle: &mut dyn DataHandle, variant: Option<&str>) -> Result<()> {
        let image = &dataset.image;
        let cell_dims: Vec<usize> = match variant {
            Some(v) => parse_cell_variant(v, image.ndim())?,
            None => default_cell_dims(image),
        }
        .iter()
        .zip(image.dims())
        .map(|(&c, &d)| c.min(d))
        .collect();
        let header = encode_header(image, &cell_dims)?;
        handle.write(&header)?;
        let grid = CellGrid::new(image.dims(), &cell_dims)?;
        let same_grid = image.backing() == Backing::Cell && image.cell_store().is_some_and(|s| *s.grid() == grid);
        for idx in 0..grid.cell_count() {
            let buf = if same_grid {
                image.cell_store().unwrap().read_cell(idx)?
            } else {
                gather_cell(image, &grid, idx)?
            };
            handle.write(buf.as_bytes())?;
        }
        handle.write(&crc32fast::hash(&header).to_le_bytes())
    }

    fn read_block(&self, handle: &mut dyn DataHandle, meta: &ImageMetadata, index: usize) -> Result<SampleBuffer> {
        let layout = meta.layout.as_ref().ok_or_else(|| malformed(0, "metadata lacks a cell layout"))?;
        if index >= layout.cell_count() {
            return Err(Error::Geometry(format!(
                "cell index {index} out of range ({} cells)",
                layout.cell_count()
            )));
        }
        let range = layout.cell_range(index);
        handle.seek(range.start)?;
        let bytes = handle.read_exact_vec((range.end - range.start) as usize)?;
        let grid = CellGrid::new(&meta.dims(), &layout.cell_dims)?;
        SampleBuffer::from_bytes(meta.pixel_type, grid.cell_len(index), bytes)
    }
}
