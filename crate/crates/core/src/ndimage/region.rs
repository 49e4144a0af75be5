use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

pub type MaskFn = Arc<dyn Fn(&[usize]) -> bool + Send + Sync>;

/// Inclusive box with an optional mask predicate over absolute positions.
#[derive(Clone)]
pub struct Region {
    min: Vec<usize>,
    max: Vec<usize>,
    mask: Option<MaskFn>,
}

impl fmt::Debug for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Region")
            .field("min", &self.min)
            .field("max", &self.max)
            .field("masked", &self.mask.is_some())
            .finish()
    }
}

impl Region {
    pub fn new(min: Vec<usize>, max: Vec<usize>) -> Result<Self> {
        if min.len() != max.len() || min.is_empty() {
            return Err(Error::Geometry(format!("region bounds {min:?}..{max:?} have mismatched rank")));
        }
        if min.iter().zip(&max).any(|(a, b)| a > b) {
            return Err(Error::Geometry(format!("region min {min:?} exceeds max {max:?}")));
        }
        Ok(Self { min, max, mask: None })
    }

    /// The whole extent of an image with `dims`.
    pub fn full(dims: &[usize]) -> Self {
        Self {
            min: vec![0; dims.len()],
            max: dims.iter().map(|d| d - 1).collect(),
            mask: None,
        }
    }

    pub fn with_mask(mut self, mask: impl Fn(&[usize]) -> bool + Send + Sync + 'static) -> Self {
        self.mask = Some(Arc::new(mask));
        self
    }

    pub fn min(&self) -> &[usize] {
        &self.min
    }

    pub fn max(&self) -> &[usize] {
        &self.max
    }

    pub fn is_masked(&self) -> bool {
        self.mask.is_some()
    }

    pub fn box_volume(&self) -> u128 {
        self.min.iter().zip(&self.max).map(|(a, b)| (b - a + 1) as u128).product()
    }

    pub fn contains(&self, pos: &[usize]) -> bool {
        pos.len() == self.min.len()
            && pos.iter().zip(&self.min).zip(&self.max).all(|((p, lo), hi)| p >= lo && p <= hi)
            && self.mask.as_ref().is_none_or(|m| m(pos))
    }

    /// Errors unless the box lies inside an image with `dims`.
    pub fn check_fits(&self, dims: &[usize]) -> Result<()> {
        if self.max.len() != dims.len() || self.max.iter().zip(dims).any(|(m, d)| m >= d) {
            return Err(Error::Geometry(format!(
                "region {:?}..{:?} does not fit dims {dims:?}",
                self.min, self.max
            )));
        }
        Ok(())
    }

    /// Positions in canonical order (first axis fastest), mask applied.
    pub fn positions(&self) -> Positions {
        Positions {
            region: self.clone(),
            next: Some(self.min.clone()),
        }
    }
}

pub struct Positions {
    region: Region,
    next: Option<Vec<usize>>,
}

impl Iterator for Positions {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        loop {
            let current = self.next.take()?;
            let mut succ = current.clone();
            let mut advanced = false;
            for d in 0..succ.len() {
                if succ[d] < self.region.max[d] {
                    succ[d] += 1;
                    advanced = true;
                    break;
                }
                succ[d] = self.region.min[d];
            }
            if advanced {
                self.next = Some(succ);
            }
            match &self.region.mask {
                Some(mask) if !mask(&current) => continue,
                _ => return Some(current),
            }
        }
    }
}
