//! Dynamically typed values passed between modules, converters and ops.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use crate::ndimage::{Dataset, NDImage, Region};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ValueType {
    String,
    Boolean,
    Int8,
    Int16,
    Int32,
    Int64,
    Float32,
    Float64,
    FilePath,
    Dataset,
    Image,
    Region,
}

impl ValueType {
    pub fn as_str(self) -> &'static str {
        match self {
            ValueType::String => "string",
            ValueType::Boolean => "boolean",
            ValueType::Int8 => "int8",
            ValueType::Int16 => "int16",
            ValueType::Int32 => "int32",
            ValueType::Int64 => "int64",
            ValueType::Float32 => "float32",
            ValueType::Float64 => "float64",
            ValueType::FilePath => "file-path",
            ValueType::Dataset => "dataset",
            ValueType::Image => "image",
            ValueType::Region => "region",
        }
    }

    pub fn is_numeric(self) -> bool {
        matches!(
            self,
            ValueType::Int8
                | ValueType::Int16
                | ValueType::Int32
                | ValueType::Int64
                | ValueType::Float32
                | ValueType::Float64
        )
    }

    pub fn is_image_like(self) -> bool {
        matches!(self, ValueType::Dataset | ValueType::Image)
    }
}

impl fmt::Display for ValueType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ValueType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        use ValueType::*;
        [String, Boolean, Int8, Int16, Int32, Int64, Float32, Float64, FilePath, Dataset, Image, Region]
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown value type `{s}`"))
    }
}

/// A runtime value. Images and datasets are shared; in-place mutation goes
/// through [`Value::image_mut`], which copies on write when shared.
#[derive(Clone)]
pub enum Value {
    Str(String),
    Bool(bool),
    Int8(i8),
    Int16(i16),
    Int32(i32),
    Int64(i64),
    Float32(f32),
    Float64(f64),
    Path(PathBuf),
    Dataset(Arc<Dataset>),
    Image(Arc<NDImage>),
    Region(Arc<Region>),
}

impl Value {
    pub fn value_type(&self) -> ValueType {
        match self {
            Value::Str(_) => ValueType::String,
            Value::Bool(_) => ValueType::Boolean,
            Value::Int8(_) => ValueType::Int8,
            Value::Int16(_) => ValueType::Int16,
            Value::Int32(_) => ValueType::Int32,
            Value::Int64(_) => ValueType::Int64,
            Value::Float32(_) => ValueType::Float32,
            Value::Float64(_) => ValueType::Float64,
            Value::Path(_) => ValueType::FilePath,
            Value::Dataset(_) => ValueType::Dataset,
            Value::Image(_) => ValueType::Image,
            Value::Region(_) => ValueType::Region,
        }
    }

    pub fn image(img: NDImage) -> Self {
        Value::Image(Arc::new(img))
    }

    /// Numeric payload as f64, for numeric variants only.
    pub fn as_f64(&self) -> Option<f64> {
        Some(match *self {
            Value::Int8(v) => v as f64,
            Value::Int16(v) => v as f64,
            Value::Int32(v) => v as f64,
            Value::Int64(v) => v as f64,
            Value::Float32(v) => v as f64,
            Value::Float64(v) => v,
            _ => return None,
        })
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_image(&self) -> Option<&Arc<NDImage>> {
        match self {
            Value::Image(img) => Some(img),
            _ => None,
        }
    }

    pub fn as_region(&self) -> Option<&Region> {
        match self {
            Value::Region(r) => Some(r),
            _ => None,
        }
    }

    pub fn image_mut(&mut self) -> Option<&mut NDImage> {
        match self {
            Value::Image(img) => Some(Arc::make_mut(img)),
            _ => None,
        }
    }

    /// Textual rendering used by the headless display and by string
    /// concatenation.
    pub fn render(&self) -> String {
        match self {
            Value::Str(s) => s.clone(),
            Value::Bool(b) => b.to_string(),
            Value::Int8(v) => v.to_string(),
            Value::Int16(v) => v.to_string(),
            Value::Int32(v) => v.to_string(),
            Value::Int64(v) => v.to_string(),
            Value::Float32(v) => v.to_string(),
            Value::Float64(v) => v.to_string(),
            Value::Path(p) => p.display().to_string(),
            Value::Dataset(ds) => ds.image.describe(),
            Value::Image(img) => img.describe(),
            Value::Region(r) => format!("region {:?}..{:?}", r.min(), r.max()),
        }
    }

    /// Stable content hash; images hash every sample's raw bits.
    pub fn content_hash(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        std::mem::discriminant(self).hash(&mut h);
        match self {
            Value::Str(s) => s.hash(&mut h),
            Value::Bool(b) => b.hash(&mut h),
            Value::Int8(v) => v.hash(&mut h),
            Value::Int16(v) => v.hash(&mut h),
            Value::Int32(v) => v.hash(&mut h),
            Value::Int64(v) => v.hash(&mut h),
            Value::Float32(v) => v.to_bits().hash(&mut h),
            Value::Float64(v) => v.to_bits().hash(&mut h),
            Value::Path(p) => p.hash(&mut h),
            Value::Dataset(ds) => ds.image.hash_samples(&mut h),
            Value::Image(img) => img.hash_samples(&mut h),
            Value::Region(r) => {
                r.min().hash(&mut h);
                r.max().hash(&mut h);
            }
        }
        h.finish()
    }
}

impl fmt::Debug for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.value_type(), self.render())
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Str(s.to_string())
    }
}

impl From<String> for Value {
    fn from(s: String) -> Self {
        Value::Str(s)
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Float64(v)
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::Int64(v)
    }
}

impl From<bool> for Value {
    fn from(v: bool) -> Self {
        Value::Bool(v)
    }
}

impl From<NDImage> for Value {
    fn from(img: NDImage) -> Self {
        Value::image(img)
    }
}

impl From<Region> for Value {
    fn from(r: Region) -> Self {
        Value::Region(Arc::new(r))
    }
}
