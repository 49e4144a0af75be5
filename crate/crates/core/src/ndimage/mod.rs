//! N-dimensional typed images with array, planar and cell backings.
//!
//! All backings share one canonical sample order: row-major with the first
//! axis varying fastest. Writes clamp to the pixel type's range; float to
//! integer stores round half away from zero.

mod buffer;
mod cell;
mod pixel;
mod region;

use std::fmt;
use std::hash::Hasher;
use std::path::PathBuf;
use std::sync::Arc;

pub use buffer::SampleBuffer;
pub use cell::{CacheStats, CellGrid, CellSource, CellStore};
pub use pixel::{packed_storage_bytes, PixelType};
pub use region::{MaskFn, Positions, Region};

use crate::error::{Error, Result};
use crate::io::Location;

/// Largest plane (PLANAR) or whole image (ARRAY) held in one buffer.
pub const MAX_BUFFER_SAMPLES: u64 = (1 << 31) - 1;
pub const DEFAULT_CELL_EXTENT: usize = 64;
pub const DEFAULT_CACHE_BUDGET: usize = 64 * 1024 * 1024;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum AxisType {
    X,
    Y,
    Z,
    Time,
    Channel,
    Custom(String),
}

impl AxisType {
    pub fn label(&self) -> &str {
        match self {
            AxisType::X => "X",
            AxisType::Y => "Y",
            AxisType::Z => "Z",
            AxisType::Time => "TIME",
            AxisType::Channel => "CHANNEL",
            AxisType::Custom(s) => s,
        }
    }

    pub fn from_label(label: &str) -> Self {
        match label {
            "X" => AxisType::X,
            "Y" => AxisType::Y,
            "Z" => AxisType::Z,
            "TIME" => AxisType::Time,
            "CHANNEL" => AxisType::Channel,
            other => AxisType::Custom(other.to_string()),
        }
    }

    /// Default labels for an axis index: X, Y, Z, CHANNEL, TIME, then `d<i>`.
    pub fn default_for(index: usize) -> Self {
        match index {
            0 => AxisType::X,
            1 => AxisType::Y,
            2 => AxisType::Z,
            3 => AxisType::Channel,
            4 => AxisType::Time,
            i => AxisType::Custom(format!("d{i}")),
        }
    }

    pub fn is_spatial(&self) -> bool {
        matches!(self, AxisType::X | AxisType::Y | AxisType::Z)
    }
}

impl fmt::Display for AxisType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Axis {
    pub kind: AxisType,
    pub length: usize,
    /// Physical units per sample.
    pub scale: f64,
    pub unit: Option<String>,
}

impl Axis {
    pub fn new(kind: AxisType, length: usize) -> Self {
        Self {
            kind,
            length,
            scale: 1.0,
            unit: None,
        }
    }

    /// Axes with default labels for the given lengths.
    pub fn defaults(dims: &[usize]) -> Vec<Axis> {
        dims.iter().enumerate().map(|(i, &n)| Axis::new(AxisType::default_for(i), n)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Backing {
    Array,
    Planar,
    Cell,
}

impl Backing {
    pub fn name(self) -> &'static str {
        match self {
            Backing::Array => "array",
            Backing::Planar => "planar",
            Backing::Cell => "cell",
        }
    }
}

#[derive(Clone, Debug)]
pub struct CellOptions {
    /// Cell extent per axis; defaults to 64 along every axis.
    pub cell_dims: Option<Vec<usize>>,
    pub cache_budget_bytes: usize,
    /// Spill files go here; a private temporary directory otherwise.
    pub spill_directory: Option<PathBuf>,
}

impl Default for CellOptions {
    fn default() -> Self {
        Self {
            cell_dims: None,
            cache_budget_bytes: DEFAULT_CACHE_BUDGET,
            spill_directory: None,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub enum BackingSpec {
    #[default]
    Array,
    Planar,
    Cell(CellOptions),
}

impl BackingSpec {
    pub fn cell(cell_dims: Vec<usize>, cache_budget_bytes: usize) -> Self {
        BackingSpec::Cell(CellOptions {
            cell_dims: Some(cell_dims),
            cache_budget_bytes,
            spill_directory: None,
        })
    }
}

#[derive(Debug)]
enum Storage {
    Array(SampleBuffer),
    Planar { plane_len: usize, planes: Vec<SampleBuffer> },
    Cell(CellStore),
}

#[derive(Debug)]
pub struct NDImage {
    pixel_type: PixelType,
    axes: Vec<Axis>,
    dims: Vec<usize>,
    total: usize,
    storage: Storage,
}

impl NDImage {
    /// Creates a zero-initialized image. Cell images allocate nothing until
    /// a cell is touched.
    pub fn create(pixel_type: PixelType, axes: Vec<Axis>, backing: BackingSpec) -> Result<Self> {
        Self::create_with_source(pixel_type, axes, backing, None)
    }

    /// Shorthand with default axis labels.
    pub fn new(pixel_type: PixelType, dims: &[usize], backing: BackingSpec) -> Result<Self> {
        Self::create(pixel_type, Axis::defaults(dims), backing)
    }

    /// Cell images whose never-written cells come from `source`.
    pub fn create_with_source(
        pixel_type: PixelType,
        axes: Vec<Axis>,
        backing: BackingSpec,
        source: Option<Arc<dyn CellSource>>,
    ) -> Result<Self> {
        if axes.is_empty() || axes.len() > i32::MAX as usize {
            return Err(Error::Geometry(format!("unsupported dimensionality {}", axes.len())));
        }
        if let Some(a) = axes.iter().find(|a| a.length == 0) {
            return Err(Error::Geometry(format!("axis {} has zero length", a.kind)));
        }
        let dims: Vec<usize> = axes.iter().map(|a| a.length).collect();
        let total_wide: u128 = dims.iter().map(|&d| d as u128).product();
        let total = usize::try_from(total_wide)
            .map_err(|_| Error::Geometry(format!("{total_wide} samples exceed the address space")))?;
        let storage = match backing {
            BackingSpec::Array => {
                if total as u64 > MAX_BUFFER_SAMPLES {
                    return Err(Error::Geometry(format!(
                        "array image of {total} samples exceeds the single-buffer limit of {MAX_BUFFER_SAMPLES}"
                    )));
                }
                Storage::Array(SampleBuffer::zeroed(pixel_type, total)?)
            }
            BackingSpec::Planar => {
                let plane_len = if dims.len() >= 2 { dims[0] as u128 * dims[1] as u128 } else { dims[0] as u128 };
                if plane_len > MAX_BUFFER_SAMPLES as u128 {
                    return Err(Error::Geometry(format!(
                        "plane of {plane_len} samples is too large (limit {MAX_BUFFER_SAMPLES})"
                    )));
                }
                let plane_len = plane_len as usize;
                let planes = (0..total / plane_len)
                    .map(|_| SampleBuffer::zeroed(pixel_type, plane_len))
                    .collect::<Result<Vec<_>>>()?;
                Storage::Planar { plane_len, planes }
            }
            BackingSpec::Cell(opts) => {
                let cell_dims = opts.cell_dims.unwrap_or_else(|| vec![DEFAULT_CELL_EXTENT; dims.len()]);
                let grid = CellGrid::new(&dims, &cell_dims)?;
                Storage::Cell(CellStore::new(
                    pixel_type,
                    grid,
                    opts.cache_budget_bytes,
                    opts.spill_directory,
                    source,
                )?)
            }
        };
        Ok(Self {
            pixel_type,
            axes,
            dims,
            total,
            storage,
        })
    }

    pub fn pixel_type(&self) -> PixelType {
        self.pixel_type
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn axes_mut(&mut self) -> &mut [Axis] {
        &mut self.axes
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn num_samples(&self) -> usize {
        self.total
    }

    pub fn backing(&self) -> Backing {
        match self.storage {
            Storage::Array(_) => Backing::Array,
            Storage::Planar { .. } => Backing::Planar,
            Storage::Cell(_) => Backing::Cell,
        }
    }

    /// Backing description suitable for allocating a similar image.
    pub fn backing_spec(&self) -> BackingSpec {
        match &self.storage {
            Storage::Array(_) => BackingSpec::Array,
            Storage::Planar { .. } => BackingSpec::Planar,
            Storage::Cell(store) => BackingSpec::Cell(CellOptions {
                cell_dims: Some(store.grid().cell_dims().to_vec()),
                cache_budget_bytes: store.budget_bytes(),
                spill_directory: None,
            }),
        }
    }

    /// Zeroed image with the same axes and backing geometry.
    pub fn new_like(&self, pixel_type: PixelType) -> Result<Self> {
        Self::create(pixel_type, self.axes.clone(), self.backing_spec())
    }

    /// Copies all samples into a new image with a different backing.
    pub fn with_backing(&self, backing: BackingSpec) -> Result<Self> {
        let mut out = Self::create(self.pixel_type, self.axes.clone(), backing)?;
        for i in 0..self.total {
            out.set_raw_linear(i, self.get_raw_linear(i)?)?;
        }
        Ok(out)
    }

    pub fn try_clone(&self) -> Result<Self> {
        let storage = match &self.storage {
            Storage::Array(b) => Storage::Array(b.clone()),
            Storage::Planar { plane_len, planes } => Storage::Planar {
                plane_len: *plane_len,
                planes: planes.clone(),
            },
            Storage::Cell(c) => Storage::Cell(c.try_clone()?),
        };
        Ok(Self {
            pixel_type: self.pixel_type,
            axes: self.axes.clone(),
            dims: self.dims.clone(),
            total: self.total,
            storage,
        })
    }

    /// `image 256x256 uint8`
    pub fn describe(&self) -> String {
        format!("image {} {}", self.dims_string(), self.pixel_type)
    }

    pub fn dims_string(&self) -> String {
        self.dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
    }

    fn check_position(&self, pos: &[usize]) -> Result<()> {
        if pos.len() != self.dims.len() || pos.iter().zip(&self.dims).any(|(p, d)| p >= d) {
            return Err(Error::OutOfBounds {
                position: pos.to_vec(),
                dims: self.dims.clone(),
            });
        }
        Ok(())
    }

    #[inline]
    fn linear_of(&self, pos: &[usize]) -> usize {
        let mut idx = 0;
        let mut stride = 1;
        for (p, d) in pos.iter().zip(&self.dims) {
            idx += p * stride;
            stride *= d;
        }
        idx
    }

    /// Position of a canonical linear index.
    pub fn position_of(&self, mut linear: usize) -> Vec<usize> {
        self.dims
            .iter()
            .map(|d| {
                let p = linear % d;
                linear /= d;
                p
            })
            .collect()
    }

    pub fn get_raw(&self, pos: &[usize]) -> Result<u64> {
        self.check_position(pos)?;
        match &self.storage {
            Storage::Array(b) => Ok(b.get_raw(self.linear_of(pos))),
            Storage::Planar { plane_len, planes } => {
                let i = self.linear_of(pos);
                Ok(planes[i / plane_len].get_raw(i % plane_len))
            }
            Storage::Cell(c) => c.get_raw(pos),
        }
    }

    pub fn set_raw(&mut self, pos: &[usize], raw: u64) -> Result<()> {
        self.check_position(pos)?;
        let i = self.linear_of(pos);
        match &mut self.storage {
            Storage::Array(b) => b.set_raw(i, raw),
            Storage::Planar { plane_len, planes } => planes[i / *plane_len].set_raw(i % *plane_len, raw),
            Storage::Cell(c) => c.set_raw(pos, raw)?,
        }
        Ok(())
    }

    pub fn get_raw_linear(&self, i: usize) -> Result<u64> {
        if i >= self.total {
            return Err(Error::OutOfBounds {
                position: vec![i],
                dims: vec![self.total],
            });
        }
        match &self.storage {
            Storage::Array(b) => Ok(b.get_raw(i)),
            Storage::Planar { plane_len, planes } => Ok(planes[i / plane_len].get_raw(i % plane_len)),
            Storage::Cell(c) => c.get_raw(&self.position_of(i)),
        }
    }

    pub fn set_raw_linear(&mut self, i: usize, raw: u64) -> Result<()> {
        if i >= self.total {
            return Err(Error::OutOfBounds {
                position: vec![i],
                dims: vec![self.total],
            });
        }
        let pos = matches!(self.storage, Storage::Cell(_)).then(|| self.position_of(i));
        match &mut self.storage {
            Storage::Array(b) => b.set_raw(i, raw),
            Storage::Planar { plane_len, planes } => planes[i / *plane_len].set_raw(i % *plane_len, raw),
            Storage::Cell(c) => c.set_raw(pos.as_deref().unwrap(), raw)?,
        }
        Ok(())
    }

    pub fn get_sample(&self, pos: &[usize]) -> Result<f64> {
        Ok(self.pixel_type.decode(self.get_raw(pos)?))
    }

    /// Stores `value` clamped to the pixel type's range.
    pub fn set_sample(&mut self, pos: &[usize], value: f64) -> Result<()> {
        let raw = self.pixel_type.encode(value);
        self.set_raw(pos, raw)
    }

    pub fn get_linear(&self, i: usize) -> Result<f64> {
        Ok(self.pixel_type.decode(self.get_raw_linear(i)?))
    }

    pub fn set_linear(&mut self, i: usize, value: f64) -> Result<()> {
        let raw = self.pixel_type.encode(value);
        self.set_raw_linear(i, raw)
    }

    /// Exact integer read; float samples truncate toward zero.
    pub fn get_integer(&self, pos: &[usize]) -> Result<i128> {
        Ok(self.pixel_type.decode_int(self.get_raw(pos)?))
    }

    pub fn set_integer(&mut self, pos: &[usize], value: i128) -> Result<()> {
        let raw = self.pixel_type.encode_int(value);
        self.set_raw(pos, raw)
    }

    /// Visits every in-bounds, mask-accepted sample once in canonical order.
    pub fn cursor(&self, region: Option<&Region>) -> Result<Cursor<'_>> {
        let region = match region {
            Some(r) => {
                r.check_fits(&self.dims)?;
                r.clone()
            }
            None => Region::full(&self.dims),
        };
        Ok(Cursor {
            image: self,
            positions: region.positions(),
        })
    }

    /// Samples in canonical order.
    pub fn to_f64_vec(&self) -> Result<Vec<f64>> {
        match &self.storage {
            Storage::Array(b) => Ok((0..self.total).map(|i| b.get(i)).collect()),
            Storage::Planar { planes, .. } => {
                Ok(planes.iter().flat_map(|p| (0..p.len()).map(move |i| p.get(i))).collect())
            }
            Storage::Cell(_) => (0..self.total).map(|i| self.get_linear(i)).collect(),
        }
    }

    /// Overwrites every sample from canonical-order `values`.
    pub fn fill_from_f64(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.total {
            return Err(Error::Geometry(format!(
                "{} values for an image of {} samples",
                values.len(),
                self.total
            )));
        }
        match &mut self.storage {
            Storage::Array(b) => values.iter().enumerate().for_each(|(i, &v)| b.set(i, v)),
            _ => {
                for (i, &v) in values.iter().enumerate() {
                    self.set_linear(i, v)?;
                }
            }
        }
        Ok(())
    }

    pub fn array_buffer(&self) -> Option<&SampleBuffer> {
        match &self.storage {
            Storage::Array(b) => Some(b),
            _ => None,
        }
    }

    pub fn array_buffer_mut(&mut self) -> Option<&mut SampleBuffer> {
        match &mut self.storage {
            Storage::Array(b) => Some(b),
            _ => None,
        }
    }

    pub fn planes(&self) -> Option<&[SampleBuffer]> {
        match &self.storage {
            Storage::Planar { planes, .. } => Some(planes),
            _ => None,
        }
    }

    pub fn planes_mut(&mut self) -> Option<&mut [SampleBuffer]> {
        match &mut self.storage {
            Storage::Planar { planes, .. } => Some(planes),
            _ => None,
        }
    }

    pub fn cell_store(&self) -> Option<&CellStore> {
        match &self.storage {
            Storage::Cell(c) => Some(c),
            _ => None,
        }
    }

    pub fn cache_stats(&self) -> Result<CacheStats> {
        self.cell_store()
            .map(CellStore::stats)
            .ok_or_else(|| Error::Unsupported(format!("{} image has no cell cache", self.backing().name())))
    }

    /// Feeds every sample's raw bits, in canonical order, to `hasher`.
    pub fn hash_samples<H: Hasher>(&self, hasher: &mut H) {
        hasher.write_u8(self.pixel_type.code());
        for d in &self.dims {
            hasher.write_usize(*d);
        }
        match &self.storage {
            Storage::Array(b) => hasher.write(b.as_bytes()),
            Storage::Planar { planes, .. } => planes.iter().for_each(|p| hasher.write(p.as_bytes())),
            Storage::Cell(_) => {
                for i in 0..self.total {
                    // Unreadable cells hash as a sentinel; checked mode then
                    // reports a mismatch rather than hiding the failure.
                    hasher.write_u64(self.get_raw_linear(i).unwrap_or(u64::MAX));
                }
            }
        }
    }

    /// True when dims, pixel type and every sample agree.
    pub fn same_samples(&self, other: &NDImage) -> Result<bool> {
        if self.dims != other.dims || self.pixel_type != other.pixel_type {
            return Ok(false);
        }
        if let (Some(a), Some(b)) = (self.array_buffer(), other.array_buffer()) {
            return Ok(a.as_bytes() == b.as_bytes());
        }
        for i in 0..self.total {
            if self.get_raw_linear(i)? != other.get_raw_linear(i)? {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

impl Clone for NDImage {
    /// Panics if a cell image's spill files cannot be copied; use
    /// [`NDImage::try_clone`] to handle that case.
    fn clone(&self) -> Self {
        self.try_clone().expect("cloning cell image spill files")
    }
}

pub struct Cursor<'a> {
    image: &'a NDImage,
    positions: Positions,
}

impl Iterator for Cursor<'_> {
    type Item = Result<(Vec<usize>, f64)>;

    fn next(&mut self) -> Option<Self::Item> {
        let pos = self.positions.next()?;
        Some(self.image.get_sample(&pos).map(|v| (pos, v)))
    }
}

/// A named image, optionally tied to where it was read from.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub name: String,
    pub image: Arc<NDImage>,
    pub source: Option<Location>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, image: impl Into<Arc<NDImage>>) -> Result<Self> {
        let image = image.into();
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = image.axes().iter().find(|a| !seen.insert(a.kind.clone())) {
            return Err(Error::Geometry(format!("duplicate axis label {}", dup.kind)));
        }
        Ok(Self {
            name: name.into(),
            image,
            source: None,
        })
    }

    pub fn with_source(mut self, source: Location) -> Self {
        self.source = Some(source);
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_init_array() {
        let img = NDImage::new(PixelType::Uint8, &[4, 4], BackingSpec::Array).unwrap();
        assert_eq!(img.num_samples(), 16);
        assert!(img.cursor(None).unwrap().all(|s| s.unwrap().1 == 0.0));
    }

    #[test]
    fn planar_plane_limit() {
        let err = NDImage::new(PixelType::Uint16, &[50_000, 50_000], BackingSpec::Planar).unwrap_err();
        assert!(err.to_string().contains("too large"), "{err}");
    }

    #[test]
    fn huge_cell_image_is_lazy() {
        let img = NDImage::new(PixelType::Uint16, &[50_000, 50_000], BackingSpec::cell(vec![512, 512], 1 << 20))
            .unwrap();
        assert_eq!(img.cache_stats().unwrap(), CacheStats::default());
        assert_eq!(img.get_sample(&[49_999, 49_999]).unwrap(), 0.0);
    }

    #[test]
    fn clamp_and_round_on_store() {
        let mut img = NDImage::new(PixelType::Uint12, &[2], BackingSpec::Array).unwrap();
        img.set_sample(&[0], 4095.0).unwrap();
        img.set_sample(&[1], 5000.0).unwrap();
        assert_eq!(img.get_sample(&[0]).unwrap(), 4095.0);
        assert_eq!(img.get_sample(&[1]).unwrap(), 4095.0);
        let mut u8img = NDImage::new(PixelType::Uint8, &[1], BackingSpec::Array).unwrap();
        u8img.set_sample(&[0], -1.0).unwrap();
        assert_eq!(u8img.get_sample(&[0]).unwrap(), 0.0);
        let mut i16img = NDImage::new(PixelType::Int16, &[1], BackingSpec::Planar).unwrap();
        i16img.set_sample(&[0], 3.7).unwrap();
        assert_eq!(i16img.get_sample(&[0]).unwrap(), 4.0);
    }

    #[test]
    fn out_of_bounds() {
        let img = NDImage::new(PixelType::Uint8, &[2, 2], BackingSpec::Array).unwrap();
        assert!(matches!(img.get_sample(&[2, 0]), Err(Error::OutOfBounds { .. })));
        assert!(img.get_sample(&[0]).is_err());
    }

    #[test]
    fn stats_on_non_cell_is_error() {
        let img = NDImage::new(PixelType::Uint8, &[2], BackingSpec::Array).unwrap();
        assert!(img.cache_stats().is_err());
    }

    #[test]
    fn touch_one_sample_faults_one_cell() {
        let img = NDImage::new(PixelType::Uint8, &[256, 256], BackingSpec::cell(vec![64, 64], 4096)).unwrap();
        img.get_sample(&[100, 3]).unwrap();
        let s = img.cache_stats().unwrap();
        assert_eq!((s.resident_cells, s.misses, s.hits), (1, 1, 0));
    }

    #[test]
    fn cursor_region_count() {
        let img = NDImage::new(PixelType::Uint8, &[4, 4], BackingSpec::Array).unwrap();
        let r = Region::new(vec![1, 1], vec![2, 2]).unwrap();
        assert_eq!(img.cursor(Some(&r)).unwrap().count(), 4);
        let outside = Region::new(vec![0, 0], vec![4, 0]).unwrap();
        assert!(img.cursor(Some(&outside)).is_err());
    }

    #[test]
    fn duplicate_axis_labels_rejected() {
        let axes = vec![Axis::new(AxisType::X, 2), Axis::new(AxisType::X, 2)];
        let img = NDImage::create(PixelType::Uint8, axes, BackingSpec::Array).unwrap();
        assert!(Dataset::new("d", img).is_err());
    }

    #[test]
    fn exact_integer_access_for_wide_types() {
        let mut img = NDImage::new(PixelType::Uint64, &[1], BackingSpec::Array).unwrap();
        img.set_integer(&[0], u64::MAX as i128 - 1).unwrap();
        assert_eq!(img.get_integer(&[0]).unwrap(), u64::MAX as i128 - 1);
    }
}
