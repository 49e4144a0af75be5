//! Demand-paged block storage for cell images.
//!
//! Cells are faulted in on first access (from a spill file, an external
//! [`CellSource`], or zero-filled) and evicted least-recently-used once the
//! resident bytes exceed the budget. Dirty cells are written to
//! `cell_<linear-index>.bin` in the spill directory before they leave memory.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use super::buffer::SampleBuffer;
use super::pixel::{packed_storage_bytes, PixelType};
use crate::error::{Error, Result};

/// Supplies the initial contents of cells that have never been spilled.
pub trait CellSource: Send + Sync {
    fn read_cell(&self, index: usize) -> Result<SampleBuffer>;
}

/// Cell grid over an image: cells are laid out row-major (first axis fastest)
/// and clipped at the image border.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CellGrid {
    dims: Vec<usize>,
    cell_dims: Vec<usize>,
    grid: Vec<usize>,
}

impl CellGrid {
    pub fn new(dims: &[usize], cell_dims: &[usize]) -> Result<Self> {
        if dims.len() != cell_dims.len() {
            return Err(Error::Geometry(format!(
                "cell dims {cell_dims:?} do not match image rank {}",
                dims.len()
            )));
        }
        if cell_dims.contains(&0) {
            return Err(Error::Geometry("cell dims must be positive".into()));
        }
        let grid = dims.iter().zip(cell_dims).map(|(&d, &c)| d.div_ceil(c)).collect();
        Ok(Self {
            dims: dims.to_vec(),
            cell_dims: cell_dims.to_vec(),
            grid,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn cell_dims(&self) -> &[usize] {
        &self.cell_dims
    }

    /// Number of cells along each axis.
    pub fn grid(&self) -> &[usize] {
        &self.grid
    }

    pub fn cell_count(&self) -> usize {
        self.grid.iter().product()
    }

    /// Cell index and offset inside that cell for an in-bounds position.
    #[inline]
    pub fn locate(&self, pos: &[usize]) -> (usize, usize) {
        let mut cell = 0;
        let mut cell_stride = 1;
        let mut offset = 0;
        let mut offset_stride = 1;
        for d in 0..pos.len() {
            let c = pos[d] / self.cell_dims[d];
            let within = pos[d] % self.cell_dims[d];
            let extent = self.extent_along(d, c);
            cell += c * cell_stride;
            cell_stride *= self.grid[d];
            offset += within * offset_stride;
            offset_stride *= extent;
        }
        (cell, offset)
    }

    fn extent_along(&self, axis: usize, cell_coord: usize) -> usize {
        let start = cell_coord * self.cell_dims[axis];
        self.cell_dims[axis].min(self.dims[axis] - start)
    }

    /// Minimum corner and clipped shape of a cell.
    pub fn cell_bounds(&self, index: usize) -> (Vec<usize>, Vec<usize>) {
        let mut rem = index;
        let mut min = Vec::with_capacity(self.dims.len());
        let mut shape = Vec::with_capacity(self.dims.len());
        for d in 0..self.dims.len() {
            let c = rem % self.grid[d];
            rem /= self.grid[d];
            min.push(c * self.cell_dims[d]);
            shape.push(self.extent_along(d, c));
        }
        (min, shape)
    }

    pub fn cell_len(&self, index: usize) -> usize {
        self.cell_bounds(index).1.iter().product()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CacheStats {
    pub resident_cells: usize,
    pub evictions: u64,
    pub dirty_writebacks: u64,
    pub hits: u64,
    pub misses: u64,
    pub resident_bytes: usize,
    pub peak_resident_bytes: usize,
}

struct Resident {
    buf: SampleBuffer,
    dirty: bool,
    tick: u64,
}

#[derive(Default)]
struct CacheState {
    resident: HashMap<usize, Resident>,
    lru: BTreeMap<u64, usize>,
    tick: u64,
    spilled: HashSet<usize>,
    /// Cell touched by the previous access; repeated access to it is not a
    /// cache lookup and does not count as a hit.
    last: Option<usize>,
    stats: CacheStats,
}

enum SpillDir {
    Owned(tempfile::TempDir),
    Given(PathBuf),
}

impl SpillDir {
    fn path(&self) -> &Path {
        match self {
            SpillDir::Owned(t) => t.path(),
            SpillDir::Given(p) => p,
        }
    }
}

pub struct CellStore {
    pixel_type: PixelType,
    grid: CellGrid,
    budget_bytes: usize,
    spill: SpillDir,
    source: Option<Arc<dyn CellSource>>,
    state: Mutex<CacheState>,
}

impl fmt::Debug for CellStore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CellStore")
            .field("pixel_type", &self.pixel_type)
            .field("grid", &self.grid)
            .field("budget_bytes", &self.budget_bytes)
            .field("spill", &self.spill.path())
            .finish()
    }
}

impl CellStore {
    pub fn new(
        pixel_type: PixelType,
        grid: CellGrid,
        budget_bytes: usize,
        spill_directory: Option<PathBuf>,
        source: Option<Arc<dyn CellSource>>,
    ) -> Result<Self> {
        let spill = match spill_directory {
            Some(dir) => {
                std::fs::create_dir_all(&dir)?;
                SpillDir::Given(dir)
            }
            None => SpillDir::Owned(tempfile::Builder::new().prefix("ndforge-cells-").tempdir()?),
        };
        Ok(Self {
            pixel_type,
            grid,
            budget_bytes,
            spill,
            source,
            state: Mutex::new(CacheState::default()),
        })
    }

    pub fn grid(&self) -> &CellGrid {
        &self.grid
    }

    pub fn budget_bytes(&self) -> usize {
        self.budget_bytes
    }

    pub fn spill_directory(&self) -> &Path {
        self.spill.path()
    }

    pub fn stats(&self) -> CacheStats {
        self.state.lock().unwrap().stats
    }

    fn spill_path(&self, index: usize) -> PathBuf {
        self.spill.path().join(format!("cell_{index}.bin"))
    }

    fn load(&self, state: &CacheState, index: usize) -> Result<SampleBuffer> {
        let len = self.grid.cell_len(index);
        if state.spilled.contains(&index) {
            let bytes = std::fs::read(self.spill_path(index))?;
            return SampleBuffer::from_bytes(self.pixel_type, len, bytes);
        }
        match &self.source {
            Some(src) => {
                let buf = src.read_cell(index)?;
                if buf.len() != len || buf.pixel_type() != self.pixel_type {
                    return Err(Error::Geometry(format!(
                        "cell source returned {} {} samples for cell {index}, expected {len} {}",
                        buf.len(),
                        buf.pixel_type(),
                        self.pixel_type
                    )));
                }
                Ok(buf)
            }
            None => SampleBuffer::zeroed(self.pixel_type, len),
        }
    }

    /// Makes `index` resident and most recently used. `fill` supplies the
    /// contents instead of loading them.
    fn touch(&self, state: &mut CacheState, index: usize, fill: Option<SampleBuffer>) -> Result<()> {
        if state.last == Some(index) && fill.is_none() {
            return Ok(());
        }
        state.tick += 1;
        let tick = state.tick;
        if let Some(res) = state.resident.get_mut(&index) {
            state.stats.hits += 1;
            state.lru.remove(&res.tick);
            res.tick = tick;
            state.lru.insert(tick, index);
            if let Some(buf) = fill {
                res.buf = buf;
                res.dirty = true;
            }
            state.last = Some(index);
            return Ok(());
        }
        state.stats.misses += 1;
        let (buf, dirty) = match fill {
            Some(buf) => (buf, true),
            None => (self.load(state, index)?, false),
        };
        self.make_room(state, buf.byte_len())?;
        state.stats.resident_bytes += buf.byte_len();
        state.stats.peak_resident_bytes = state.stats.peak_resident_bytes.max(state.stats.resident_bytes);
        state.resident.insert(index, Resident { buf, dirty, tick });
        state.lru.insert(tick, index);
        state.last = Some(index);
        state.stats.resident_cells = state.resident.len();
        Ok(())
    }

    /// Evicts least-recently-used cells until `incoming` more bytes fit in
    /// the budget. A single cell larger than the budget is still admitted.
    fn make_room(&self, state: &mut CacheState, incoming: usize) -> Result<()> {
        while state.stats.resident_bytes + incoming > self.budget_bytes {
            let Some((&tick, &victim)) = state.lru.iter().next() else {
                break;
            };
            let res = &state.resident[&victim];
            if res.dirty {
                std::fs::write(self.spill_path(victim), res.buf.as_bytes())?;
                state.spilled.insert(victim);
                state.stats.dirty_writebacks += 1;
            }
            if state.last == Some(victim) {
                state.last = None;
            }
            state.lru.remove(&tick);
            let res = state.resident.remove(&victim).unwrap();
            state.stats.resident_bytes -= res.buf.byte_len();
            state.stats.evictions += 1;
        }
        Ok(())
    }

    pub fn get_raw(&self, pos: &[usize]) -> Result<u64> {
        let (cell, offset) = self.grid.locate(pos);
        let mut state = self.state.lock().unwrap();
        self.touch(&mut state, cell, None)?;
        Ok(state.resident[&cell].buf.get_raw(offset))
    }

    pub fn set_raw(&self, pos: &[usize], raw: u64) -> Result<()> {
        let (cell, offset) = self.grid.locate(pos);
        let mut state = self.state.lock().unwrap();
        self.touch(&mut state, cell, None)?;
        let res = state.resident.get_mut(&cell).unwrap();
        res.buf.set_raw(offset, raw);
        res.dirty = true;
        Ok(())
    }

    /// Runs `f` on a resident cell.
    pub fn with_cell<R>(&self, index: usize, f: impl FnOnce(&SampleBuffer) -> R) -> Result<R> {
        let mut state = self.state.lock().unwrap();
        self.touch(&mut state, index, None)?;
        Ok(f(&state.resident[&index].buf))
    }

    /// Runs `f` on a resident cell and marks it dirty.
    pub fn with_cell_mut<R>(&self, index: usize, f: impl FnOnce(&mut SampleBuffer) -> R) -> Result<R> {
        let mut state = self.state.lock().unwrap();
        self.touch(&mut state, index, None)?;
        let res = state.resident.get_mut(&index).unwrap();
        res.dirty = true;
        Ok(f(&mut res.buf))
    }

    /// Replaces a whole cell without loading its previous contents.
    pub fn replace_cell(&self, index: usize, buf: SampleBuffer) -> Result<()> {
        let len = self.grid.cell_len(index);
        if buf.len() != len || buf.pixel_type() != self.pixel_type {
            return Err(Error::Geometry(format!("replacement for cell {index} has wrong shape")));
        }
        let mut state = self.state.lock().unwrap();
        self.touch(&mut state, index, Some(buf))
    }

    /// Copy of a cell's samples.
    pub fn read_cell(&self, index: usize) -> Result<SampleBuffer> {
        self.with_cell(index, |b| b.clone())
    }

    /// Deep copy with its own spill directory; the external cell source, if
    /// any, is shared.
    pub fn try_clone(&self) -> Result<Self> {
        let copy = CellStore::new(self.pixel_type, self.grid.clone(), self.budget_bytes, None, self.source.clone())?;
        let state = self.state.lock().unwrap();
        let mut new_state = CacheState::default();
        for &idx in &state.spilled {
            std::fs::copy(self.spill_path(idx), copy.spill_path(idx))?;
            new_state.spilled.insert(idx);
        }
        for (&idx, res) in &state.resident {
            new_state.resident.insert(
                idx,
                Resident {
                    buf: res.buf.clone(),
                    dirty: res.dirty,
                    tick: res.tick,
                },
            );
            new_state.lru.insert(res.tick, idx);
            new_state.stats.resident_bytes += res.buf.byte_len();
        }
        new_state.tick = state.tick;
        new_state.stats.resident_cells = new_state.resident.len();
        new_state.stats.peak_resident_bytes = new_state.stats.resident_bytes;
        *copy.state.lock().unwrap() = new_state;
        Ok(copy)
    }

    /// Bytes one full (unclipped) cell occupies.
    pub fn full_cell_bytes(&self) -> u64 {
        packed_storage_bytes(self.pixel_type, self.grid.cell_dims().iter().product::<usize>() as u64)
    }
}

impl Drop for CellStore {
    fn drop(&mut self) {
        if let SpillDir::Given(dir) = &self.spill {
            let state = self.state.get_mut().unwrap_or_else(|e| e.into_inner());
            for &idx in &state.spilled {
                let _ = std::fs::remove_file(dir.join(format!("cell_{idx}.bin")));
            }
        }
    }
}
