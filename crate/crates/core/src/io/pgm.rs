//! Netpbm greyscale maps: P2 (ASCII) and P5 (binary).
//!
//! Samples with maxval up to 255 read as uint8; larger maxvals read as
//! uint16 with big-endian sample pairs. Comment lines become `comment.N`
//! metadata entries. Writing produces P5 by default and P2 for the `ascii`
//! variant.

use std::collections::BTreeMap;

use super::{Capabilities, DataHandle, Format, FormatDescriptor, ImageMetadata};
use crate::error::{Error, Result};
use crate::ndimage::{Axis, AxisType, BackingSpec, Dataset, NDImage, PixelType};

pub struct PgmFormat {
    descriptor: FormatDescriptor,
}

impl Default for PgmFormat {
    fn default() -> Self {
        Self::new()
    }
}

impl PgmFormat {
    pub fn new() -> Self {
        Self {
            descriptor: FormatDescriptor {
                id: "pgm".into(),
                name: "Portable Graymap".into(),
                suffixes: vec!["pgm".into(), "pnm".into()],
                magic: vec![b"P2".to_vec(), b"P5".to_vec()],
                capabilities: Capabilities {
                    read: true,
                    write: true,
                    block_read: false,
                },
            },
        }
    }
}

fn malformed(offset: usize, message: impl Into<String>) -> Error {
    Error::Malformed {
        format: "pgm".into(),
        offset: offset as u64,
        message: message.into(),
    }
}

struct Parsed {
    width: usize,
    height: usize,
    maxval: u32,
    comments: Vec<String>,
    samples: Vec<u32>,
}

struct Scanner<'a> {
    bytes: &'a [u8],
    pos: usize,
    comments: Vec<String>,
}

impl Scanner<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b == b'#' {
                let start = self.pos + 1;
                let end = self.bytes[start..]
                    .iter()
                    .position(|&c| c == b'\n' || c == b'\r')
                    .map_or(self.bytes.len(), |i| start + i);
                self.comments
                    .push(String::from_utf8_lossy(&self.bytes[start..end]).trim().to_string());
                self.pos = end;
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    /// Next unsigned decimal token; returns the value and its start offset.
    fn number(&mut self, what: &str) -> Result<(u32, usize)> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(if start >= self.bytes.len() {
                malformed(start, format!("unexpected end of data, expected {what}"))
            } else {
                malformed(start, format!("expected {what}, found byte 0x{:02x}", self.bytes[start]))
            });
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap_or("");
        let value = text.parse::<u32>().map_err(|_| malformed(start, format!("{what} `{text}` is too large")))?;
        Ok((value, start))
    }
}

fn parse(bytes: &[u8]) -> Result<Parsed> {
    let binary = match bytes.get(..2) {
        Some(b"P5") => true,
        Some(b"P2") => false,
        _ => return Err(malformed(0, "missing P2/P5 magic")),
    };
    let mut sc = Scanner {
        bytes,
        pos: 2,
        comments: Vec::new(),
    };
    let (width, at) = sc.number("width")?;
    if width == 0 {
        return Err(malformed(at, "width is zero"));
    }
    let (height, at) = sc.number("height")?;
    if height == 0 {
        return Err(malformed(at, "height is zero"));
    }
    let (maxval, at) = sc.number("maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(malformed(at, format!("maxval {maxval} outside 1..=65535")));
    }
    let (width, height) = (width as usize, height as usize);
    let count = width
        .checked_mul(height)
        .ok_or_else(|| malformed(0, "dimensions overflow"))?;
    let mut samples = Vec::with_capacity(count.min(1 << 24));
    if binary {
        match bytes.get(sc.pos) {
            Some(b) if b.is_ascii_whitespace() => sc.pos += 1,
            _ => return Err(malformed(sc.pos, "expected a single whitespace byte before the raster")),
        }
        let wide = maxval > 255;
        let need = count * if wide { 2 } else { 1 };
        let raster = &bytes[sc.pos..];
        if raster.len() < need {
            return Err(malformed(
                bytes.len(),
                format!("raster truncated: {} of {need} bytes present", raster.len()),
            ));
        }
        for i in 0..count {
            let (v, off) = if wide {
                (u16::from_be_bytes([raster[2 * i], raster[2 * i + 1]]) as u32, sc.pos + 2 * i)
            } else {
                (raster[i] as u32, sc.pos + i)
            };
            if v > maxval {
                return Err(malformed(off, format!("sample {v} exceeds maxval {maxval}")));
            }
            samples.push(v);
        }
    } else {
        for _ in 0..count {
            let (v, at) = sc.number("sample")?;
            if v > maxval {
                return Err(malformed(at, format!("sample {v} exceeds maxval {maxval}")));
            }
            samples.push(v);
        }
    }
    Ok(Parsed {
        width,
        height,
        maxval,
        comments: sc.comments,
        samples,
    })
}

fn metadata(p: &Parsed, name: &str) -> ImageMetadata {
    let mut pairs = BTreeMap::new();
    for (i, c) in p.comments.iter().enumerate() {
        pairs.insert(format!("comment.{i}"), c.clone());
    }
    pairs.insert("maxval".into(), p.maxval.to_string());
    ImageMetadata {
        model: "pgm".into(),
        name: name.to_string(),
        axes: vec![Axis::new(AxisType::X, p.width), Axis::new(AxisType::Y, p.height)],
        pixel_type: if p.maxval > 255 { PixelType::Uint16 } else { PixelType::Uint8 },
        pairs,
        layout: None,
    }
}

impl Format for PgmFormat {
    fn descriptor(&self) -> &FormatDescriptor {
        &self.descriptor
    }

    fn parse(&self, handle: &mut dyn DataHandle, name: &str) -> Result<ImageMetadata> {
        handle.seek(0)?;
        let bytes = handle.read_to_end_vec()?;
        Ok(metadata(&parse(&bytes)?, name))
    }

    fn read_image(&self, handle: &mut dyn DataHandle, meta: &ImageMetadata, backing: BackingSpec) -> Result<NDImage> {
        handle.seek(0)?;
        let bytes = handle.read_to_end_vec()?;
        let parsed = parse(&bytes)?;
        let mut image = NDImage::create(meta.pixel_type, meta.axes.clone(), backing)?;
        for (i, &v) in parsed.samples.iter().enumerate() {
            image.set_raw_linear(i, v as u64)?;
        }
        Ok(image)
    }

    fn check_writable(&self, image: &NDImage, variant: Option<&str>) -> Result<()> {
        if !matches!(variant, None | Some("binary") | Some("ascii")) {
            return Err(Error::Unsupported(format!("unknown pgm variant `{}`", variant.unwrap_or_default())));
        }
        if !matches!(image.pixel_type(), PixelType::Uint8 | PixelType::Uint16) {
            return Err(Error::Unsupported(format!(
                "pgm stores uint8 or uint16 samples, not {}",
                image.pixel_type()
            )));
        }
        if image.ndim() != 2 {
            return Err(Error::Unsupported(format!(
                "pgm stores single-channel 2-D images, not {}-D",
                image.ndim()
            )));
        }
        Ok(())
    }

    fn write(&self, dataset: &Dataset, handle: &mut dyn DataHandle, variant: Option<&str>) -> Result<()> {
        let image = &dataset.image;
        self.check_writable(image, variant)?;
        let (w, h) = (image.dims()[0], image.dims()[1]);
        let wide = image.pixel_type() == PixelType::Uint16;
        let maxval = if wide { 65535 } else { 255 };
        let mut out = Vec::new();
        if variant == Some("ascii") {
            out.extend_from_slice(format!("P2\n{w} {h}\n{maxval}\n").as_bytes());
            for y in 0..h {
                let row: Vec<String> = (0..w)
                    .map(|x| image.get_raw(&[x, y]).map(|v| v.to_string()))
                    .collect::<Result<_>>()?;
                out.extend_from_slice(row.join(" ").as_bytes());
                out.push(b'\n');
            }
        } else {
            out.extend_from_slice(format!("P5\n{w} {h}\n{maxval}\n").as_bytes());
            for i in 0..w * h {
                let v = image.get_raw_linear(i)?;
                if wide {
                    out.extend_from_slice(&(v as u16).to_be_bytes());
                } else {
                    out.push(v as u8);
                }
            }
        }
        handle.write(&out)
    }
}
