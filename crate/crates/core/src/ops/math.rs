//! Arithmetic ops over images and scalars.
//!
//! `math.add` with an image and a constant has four implementations that
//! must agree sample for sample: a generic one using per-sample accessors,
//! one specialized for planar images, an inplace one specialized for array
//! images, and a multithreaded version of the latter.

use super::{arg_f64, arg_image, arg_str, OpCandidate, OpKind, ParamType};
use crate::container::{Context, PluginMetadata};
use crate::error::{Error, Result};
use crate::ndimage::{Backing, BackingSpec, NDImage, PixelType, SampleBuffer};
use crate::value::{Value, ValueType as T};

type BinFn = fn(f64, f64) -> f64;

const IMG: ParamType = ParamType::Is(T::Image);
const F64: ParamType = ParamType::Is(T::Float64);

fn out_image(out: &mut Value) -> Result<&mut NDImage> {
    out.image_mut().ok_or_else(|| Error::op("output is not an image"))
}

fn check_same_dims(a: &NDImage, b: &NDImage) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Geometry(format!(
            "dimension mismatch: {} vs {}",
            a.dims_string(),
            b.dims_string()
        )));
    }
    Ok(())
}

fn create_like_first(_: &Context, args: &[Value]) -> Result<Value> {
    let img = arg_image(args, 0)?;
    Ok(Value::image(img.new_like(img.pixel_type())?))
}

/// `out[i] = f(in[i], c)` through per-sample accessors.
fn constant_into(input: &NDImage, c: f64, out: &mut NDImage, f: BinFn) -> Result<()> {
    check_same_dims(input, out)?;
    for i in 0..input.num_samples() {
        out.set_linear(i, f(input.get_linear(i)?, c))?;
    }
    Ok(())
}

/// `out[i] = f(a[i], b[i], output type)`.
fn zip_into(a: &NDImage, b: &NDImage, out: &mut NDImage, f: impl Fn(f64, f64, PixelType) -> f64) -> Result<()> {
    check_same_dims(a, b)?;
    check_same_dims(a, out)?;
    let pt = out.pixel_type();
    if let (Some(ba), Some(bb), Some(bo)) = (a.array_buffer(), b.array_buffer(), out.array_buffer_mut()) {
        for i in 0..ba.len() {
            bo.set(i, f(ba.get(i), bb.get(i), pt));
        }
        return Ok(());
    }
    for i in 0..a.num_samples() {
        out.set_linear(i, f(a.get_linear(i)?, b.get_linear(i)?, pt))?;
    }
    Ok(())
}

fn unary_into(input: &NDImage, out: &mut NDImage, f: fn(f64) -> f64) -> Result<()> {
    check_same_dims(input, out)?;
    if let (Some(bi), Some(bo)) = (input.array_buffer(), out.array_buffer_mut()) {
        for i in 0..bi.len() {
            bo.set(i, f(bi.get(i)));
        }
        return Ok(());
    }
    for i in 0..input.num_samples() {
        out.set_linear(i, f(input.get_linear(i)?))?;
    }
    Ok(())
}

/// Generic image + constant: allocates a like-backed output and goes
/// through per-sample accessors.
pub fn add_constant_generic(input: &NDImage, c: f64) -> Result<NDImage> {
    let mut out = input.new_like(input.pixel_type())?;
    constant_into(input, c, &mut out, |x, c| x + c)?;
    Ok(out)
}

/// Image + constant for planar images, plane by plane.
pub fn add_constant_planar(input: &NDImage, c: f64) -> Result<NDImage> {
    let planes = input
        .planes()
        .ok_or_else(|| Error::Unsupported("planar add needs a planar image".into()))?;
    let mut out = NDImage::create(input.pixel_type(), input.axes().to_vec(), BackingSpec::Planar)?;
    for (src, dst) in planes.iter().zip(out.planes_mut().expect("planar output")) {
        for i in 0..src.len() {
            dst.set(i, src.get(i) + c);
        }
    }
    Ok(out)
}

fn lut_u8(pt: PixelType, c: f64) -> [u8; 256] {
    let mut lut = [0u8; 256];
    for (v, slot) in lut.iter_mut().enumerate() {
        *slot = pt.encode(v as f64 + c) as u8;
    }
    lut
}

/// Adds `c` to a run of whole byte-aligned samples.
fn add_bytes(pt: PixelType, bytes: &mut [u8], c: f64) {
    let width = (pt.bits() / 8) as usize;
    if pt == PixelType::Uint8 {
        let lut = lut_u8(pt, c);
        for b in bytes {
            *b = lut[*b as usize];
        }
        return;
    }
    for chunk in bytes.chunks_exact_mut(width) {
        let mut raw = [0u8; 8];
        raw[..width].copy_from_slice(chunk);
        let v = pt.decode(u64::from_le_bytes(raw)) + c;
        chunk.copy_from_slice(&pt.encode(v).to_le_bytes()[..width]);
    }
}

fn array_buffer_mut(img: &mut NDImage) -> Result<&mut SampleBuffer> {
    img.array_buffer_mut()
        .ok_or_else(|| Error::Unsupported("array-specialized add needs an array image".into()))
}

/// Image + constant, in place, for array images. uint8 goes through a
/// 256-entry lookup table.
pub fn add_constant_array_inplace(img: &mut NDImage, c: f64) -> Result<()> {
    let buf = array_buffer_mut(img)?;
    let pt = buf.pixel_type();
    if pt.bits() % 8 == 0 {
        add_bytes(pt, buf.as_bytes_mut(), c);
    } else {
        for i in 0..buf.len() {
            let v = buf.get(i);
            buf.set(i, v + c);
        }
    }
    Ok(())
}

/// Multithreaded [`add_constant_array_inplace`]: the buffer is split into
/// contiguous bands, one per thread. Bit-packed types run single-threaded.
pub fn add_constant_array_inplace_mt(img: &mut NDImage, c: f64, threads: usize) -> Result<()> {
    let buf = array_buffer_mut(img)?;
    let pt = buf.pixel_type();
    let threads = threads.max(1);
    if pt.bits() % 8 != 0 || threads == 1 {
        return add_constant_array_inplace(img, c);
    }
    let width = (pt.bits() / 8) as usize;
    let samples_per_band = buf.len().div_ceil(threads).max(1);
    std::thread::scope(|s| {
        for band in buf.as_bytes_mut().chunks_mut(samples_per_band * width) {
            s.spawn(move || add_bytes(pt, band, c));
        }
    });
    Ok(())
}

fn default_threads() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn scalar_fn(id: &str, name: &str, f: BinFn) -> OpCandidate {
    OpCandidate::function(id, name, vec![F64, F64], T::Float64, move |_, args| {
        Ok(Value::Float64(f(arg_f64(args, 0)?, arg_f64(args, 1)?)))
    })
}

fn generic_constant(id: &str, name: &str, f: BinFn, reject_zero: bool) -> OpCandidate {
    OpCandidate::computer(id, name, vec![IMG, F64], T::Image, create_like_first, move |_, args, out| {
        let c = arg_f64(args, 1)?;
        if reject_zero && c == 0.0 {
            return Err(Error::op("division by zero"));
        }
        constant_into(arg_image(args, 0)?, c, out_image(out)?, f)
    })
}

fn elementwise(id: &str, name: &str, f: fn(f64, f64, PixelType) -> f64) -> OpCandidate {
    OpCandidate::hybrid(id, name, vec![IMG, IMG], T::Image, OpKind::HybridCF, create_like_first, move |_, args, out| {
        zip_into(arg_image(args, 0)?, arg_image(args, 1)?, out_image(out)?, f)
    })
    .with_arity(2)
}

fn div_elementwise(x: f64, y: f64, pt: PixelType) -> f64 {
    if y == 0.0 && !pt.is_float() {
        pt.max_value()
    } else {
        x / y
    }
}

fn concat(args: &[Value]) -> Result<Value> {
    Ok(Value::Str(format!("{}{}", args[0].render(), args[1].render())))
}

pub(super) fn plugins() -> Vec<PluginMetadata> {
    let any = ParamType::Any;
    let s = ParamType::Is(T::String);
    let planar = ParamType::ImageBacked(Backing::Planar);
    let array = ParamType::ImageBacked(Backing::Array);
    let candidates: Vec<(OpCandidate, i32)> = vec![
        // math.add
        (generic_constant("math.add.generic", "math.add", |x, c| x + c, false), 0),
        (
            OpCandidate::function("math.add.constant-planar", "math.add", vec![planar, F64], T::Image, |_, args| {
                Ok(Value::image(add_constant_planar(arg_image(args, 0)?, arg_f64(args, 1)?)?))
            }),
            0,
        ),
        (
            OpCandidate::inplace("math.add.array-inplace", "math.add", vec![array, F64], T::Image, 0, |_, target, rest| {
                let c = arg_f64(rest, 0)?;
                add_constant_array_inplace(out_image(target)?, c)
            }),
            10,
        ),
        (
            OpCandidate::inplace("math.add.array-inplace-mt", "math.add", vec![array, F64], T::Image, 0, |_, target, rest| {
                let c = arg_f64(rest, 0)?;
                add_constant_array_inplace_mt(out_image(target)?, c, default_threads())
            }),
            -10,
        ),
        (elementwise("math.add.elementwise", "math.add", |x, y, _| x + y), 0),
        (scalar_fn("math.add.scalar", "math.add", |x, y| x + y), 0),
        (OpCandidate::function("math.add.concat", "math.add", vec![s, any], T::String, |_, a| concat(a)), 1),
        (OpCandidate::function("math.add.concat-right", "math.add", vec![any, s], T::String, |_, a| concat(a)), 0),
        // math.sub, math.mul, math.div
        (generic_constant("math.sub.generic", "math.sub", |x, c| x - c, false), 0),
        (elementwise("math.sub.elementwise", "math.sub", |x, y, _| x - y), 0),
        (scalar_fn("math.sub.scalar", "math.sub", |x, y| x - y), 0),
        (generic_constant("math.mul.generic", "math.mul", |x, c| x * c, false), 0),
        (elementwise("math.mul.elementwise", "math.mul", |x, y, _| x * y), 0),
        (scalar_fn("math.mul.scalar", "math.mul", |x, y| x * y), 0),
        (generic_constant("math.div.generic", "math.div", |x, c| x / c, true), 0),
        (elementwise("math.div.elementwise", "math.div", div_elementwise), 0),
        (
            OpCandidate::function("math.div.scalar", "math.div", vec![F64, F64], T::Float64, |_, args| {
                let d = arg_f64(args, 1)?;
                if d == 0.0 {
                    return Err(Error::op("division by zero"));
                }
                Ok(Value::Float64(arg_f64(args, 0)? / d))
            }),
            0,
        ),
        // unary
        (
            OpCandidate::function("math.neg.scalar", "math.neg", vec![F64], T::Float64, |_, args| {
                Ok(Value::Float64(-arg_f64(args, 0)?))
            }),
            0,
        ),
        (
            OpCandidate::hybrid("math.neg.image", "math.neg", vec![IMG], T::Image, OpKind::HybridCI, create_like_first, |_, args, out| {
                unary_into(arg_image(args, 0)?, out_image(out)?, |x| -x)
            }),
            0,
        ),
        (
            OpCandidate::function("math.sqrt.scalar", "math.sqrt", vec![F64], T::Float64, |_, args| {
                Ok(Value::Float64(arg_f64(args, 0)?.sqrt()))
            }),
            0,
        ),
        (
            OpCandidate::hybrid("math.sqrt.image", "math.sqrt", vec![IMG], T::Image, OpKind::HybridCFI, create_like_first, |_, args, out| {
                unary_into(arg_image(args, 0)?, out_image(out)?, f64::sqrt)
            }),
            0,
        ),
        // creation
        (
            OpCandidate::function("create.img.array", "create.img", vec![s, s], T::Image, |_, args| {
                let dims: Vec<usize> = arg_str(args, 0)?
                    .split('x')
                    .map(|t| t.trim().parse().ok())
                    .collect::<Option<_>>()
                    .ok_or_else(|| Error::op(format!("bad dims `{}`", arg_str(args, 0).unwrap_or_default())))?;
                let pt: PixelType = arg_str(args, 1)?.parse().map_err(Error::op)?;
                Ok(Value::image(NDImage::new(pt, &dims, BackingSpec::Array)?))
            })
            .with_arity(0),
            0,
        ),
    ];
    candidates
        .into_iter()
        .map(|(c, prio)| c.into_plugin(prio).expect("built-in op definitions are valid"))
        .collect()
}
