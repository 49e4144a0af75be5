//! Sidecar-free import of headerless sample data.

use std::str::FromStr;

use super::{open_handle, HandleMode, Location};
use crate::container::Context;
use crate::error::{Error, Result};
use crate::ndimage::{packed_storage_bytes, BackingSpec, Dataset, NDImage, PixelType, SampleBuffer};

/// Layout of a raw file: `dims=WxH[x...] type=<pixel type> [offset=N]`.
/// Samples are stored in canonical order with the in-memory encoding
/// (little-endian, bit-packed types LSB first).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawSpec {
    pub dims: Vec<usize>,
    pub pixel_type: PixelType,
    pub offset: u64,
}

impl FromStr for RawSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |m: String| Error::Unsupported(format!("raw spec: {m}"));
        let mut dims = None;
        let mut pixel_type = None;
        let mut offset = 0;
        for token in s.split_whitespace() {
            let (key, value) = token
                .split_once('=')
                .ok_or_else(|| bad(format!("expected key=value, got `{token}`")))?;
            match key {
                "dims" => {
                    let d: Option<Vec<usize>> = value
                        .split('x')
                        .map(|t| t.parse().ok().filter(|&n: &usize| n > 0))
                        .collect();
                    dims = Some(d.ok_or_else(|| bad(format!("bad dims `{value}`")))?);
                }
                "type" => pixel_type = Some(value.parse::<PixelType>().map_err(bad)?),
                "offset" => offset = value.parse().map_err(|_| bad(format!("bad offset `{value}`")))?,
                other => return Err(bad(format!("unknown key `{other}`"))),
            }
        }
        Ok(RawSpec {
            dims: dims.ok_or_else(|| bad("missing dims".into()))?,
            pixel_type: pixel_type.ok_or_else(|| bad("missing type".into()))?,
            offset,
        })
    }
}

pub fn open_raw(_ctx: &Context, loc: &Location, spec: &RawSpec) -> Result<Dataset> {
    let mut image = NDImage::new(spec.pixel_type, &spec.dims, BackingSpec::Array)?;
    let n = image.num_samples();
    let need = packed_storage_bytes(spec.pixel_type, n as u64);
    let mut handle = open_handle(loc, HandleMode::Read)?;
    if handle.length() < spec.offset + need {
        return Err(Error::Malformed {
            format: "raw".into(),
            offset: handle.length(),
            message: format!("need {need} bytes after offset {}", spec.offset),
        });
    }
    handle.seek(spec.offset)?;
    let bytes = handle.read_exact_vec(need as usize)?;
    let buf = SampleBuffer::from_bytes(spec.pixel_type, n, bytes)?;
    *image.array_buffer_mut().expect("array backing") = buf;
    Ok(Dataset::new(loc.name(), image)?.with_source(loc.clone()))
}
