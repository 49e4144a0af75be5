//! `op.map`: applies a scalar op to every sample of an image.
//!
//! The inner op is matched once against a float64 sample (plus any extra
//! argument) and then reused. Because ops are pure, for integer types of at
//! most 16 bits the op is evaluated once per representable value and
//! applied as a lookup table. Cell images are processed cell by cell, so
//! arbitrarily large images stream through the cache.

use super::{arg_image, arg_str, match_op, MatchedOp, OpCandidate, OpRequest, ParamType};
use crate::container::{Context, PluginMetadata};
use crate::error::{Error, Result};
use crate::ndimage::{Backing, NDImage, PixelType, Region};
use crate::value::{Value, ValueType as T};

struct ScalarOp<'a> {
    ctx: &'a Context,
    matched: MatchedOp,
    extra: Option<Value>,
    pixel_type: PixelType,
    lut: Option<Vec<u64>>,
}

impl<'a> ScalarOp<'a> {
    fn new(ctx: &'a Context, op: &str, extra: Option<Value>, pixel_type: PixelType) -> Result<Self> {
        let mut args = vec![Value::Float64(0.0)];
        args.extend(extra.clone());
        let matched = match_op(ctx, &OpRequest::new(op, args))?;
        let mut s = Self {
            ctx,
            matched,
            extra,
            pixel_type,
            lut: None,
        };
        if !pixel_type.is_float() && pixel_type.bits() <= 16 {
            let lut = (0..1u64 << pixel_type.bits())
                .map(|raw| s.apply_raw_direct(raw))
                .collect::<Result<Vec<_>>>()?;
            s.lut = Some(lut);
        }
        Ok(s)
    }

    fn apply(&self, v: f64) -> Result<f64> {
        let mut args = vec![Value::Float64(v)];
        args.extend(self.extra.clone());
        let out = self.matched.run(self.ctx, args)?;
        out.as_f64()
            .ok_or_else(|| Error::op(format!("{} returned {}, not a number", self.matched.candidate.id, out.value_type())))
    }

    fn apply_raw_direct(&self, raw: u64) -> Result<u64> {
        Ok(self.pixel_type.encode(self.apply(self.pixel_type.decode(raw))?))
    }

    #[inline]
    fn apply_raw(&self, raw: u64) -> Result<u64> {
        match &self.lut {
            Some(lut) => Ok(lut[raw as usize]),
            None => self.apply_raw_direct(raw),
        }
    }
}

/// Maps `op` over `image` (or only over `region`, leaving other samples as
/// they were). The output has the input's pixel type and backing. `threads`
/// splits the work into contiguous bands; the result does not depend on it.
pub fn map_image(
    ctx: &Context,
    image: &NDImage,
    op: &str,
    extra: Option<Value>,
    region: Option<&Region>,
    threads: usize,
) -> Result<NDImage> {
    let f = ScalarOp::new(ctx, op, extra, image.pixel_type())?;
    let threads = threads.max(1);
    if let Some(region) = region {
        region.check_fits(image.dims())?;
        let mut out = image.try_clone()?;
        for pos in region.positions() {
            out.set_raw(&pos, f.apply_raw(image.get_raw(&pos)?)?)?;
        }
        return Ok(out);
    }
    let mut out = image.new_like(image.pixel_type())?;
    if image.backing() == Backing::Cell {
        map_cells(image, &mut out, &f, threads)?;
        return Ok(out);
    }
    let n = image.num_samples();
    let outer = *image.dims().last().unwrap();
    let band_rows = outer.div_ceil(threads);
    let row_len = n / outer;
    let bands: Vec<(usize, usize)> = (0..outer)
        .step_by(band_rows)
        .map(|start| (start * row_len, (start + band_rows).min(outer) * row_len))
        .collect();
    let results: Vec<Result<Vec<u64>>> = if bands.len() == 1 {
        vec![map_band(image, &f, bands[0])]
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = bands.iter().map(|&b| s.spawn({
                let f = &f;
                move || map_band(image, f, b)
            })).collect();
            handles.into_iter().map(|h| h.join().expect("map worker panicked")).collect()
        })
    };
    for (&(start, _), band) in bands.iter().zip(results) {
        for (i, raw) in band?.into_iter().enumerate() {
            out.set_raw_linear(start + i, raw)?;
        }
    }
    Ok(out)
}

fn map_band(image: &NDImage, f: &ScalarOp<'_>, (start, end): (usize, usize)) -> Result<Vec<u64>> {
    (start..end).map(|i| f.apply_raw(image.get_raw_linear(i)?)).collect()
}

fn map_cells(image: &NDImage, out: &mut NDImage, f: &ScalarOp<'_>, threads: usize) -> Result<()> {
    let src = image.cell_store().expect("cell image");
    let dst = out.cell_store().expect("cell output");
    let count = src.grid().cell_count();
    let per_band = count.div_ceil(threads).max(1);
    let work = |range: std::ops::Range<usize>| -> Result<()> {
        for idx in range {
            let mut buf = src.read_cell(idx)?;
            for i in 0..buf.len() {
                buf.set_raw(i, f.apply_raw(buf.get_raw(i))?);
            }
            dst.replace_cell(idx, buf)?;
        }
        Ok(())
    };
    if threads == 1 {
        return work(0..count);
    }
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..count)
            .step_by(per_band)
            .map(|start| {
                let work = &work;
                s.spawn(move || work(start..(start + per_band).min(count)))
            })
            .collect();
        handles.into_iter().try_for_each(|h| h.join().expect("map worker panicked"))
    })
}

fn threads_default() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

pub(super) fn plugins() -> Vec<PluginMetadata> {
    let img = ParamType::Is(T::Image);
    let s = ParamType::Is(T::String);
    let plain = OpCandidate::function("op.map.image", "op.map", vec![img, s], T::Image, |ctx, args| {
        let out = map_image(ctx, arg_image(args, 0)?, arg_str(args, 1)?, None, None, threads_default())?;
        Ok(Value::image(out))
    })
    .with_arity(1);
    let region = OpCandidate::function(
        "op.map.region",
        "op.map",
        vec![img, s, ParamType::Is(T::Region)],
        T::Image,
        |ctx, args| {
            let region = args[2].as_region().ok_or_else(|| Error::op("argument 3 is not a region"))?;
            let out = map_image(ctx, arg_image(args, 0)?, arg_str(args, 1)?, None, Some(region), 1)?;
            Ok(Value::image(out))
        },
    )
    .with_arity(1);
    let extra = OpCandidate::function("op.map.extra", "op.map", vec![img, s, ParamType::Any], T::Image, |ctx, args| {
        let out = map_image(ctx, arg_image(args, 0)?, arg_str(args, 1)?, Some(args[2].clone()), None, threads_default())?;
        Ok(Value::image(out))
    })
    .with_arity(1);
    [plain, region, extra]
        .into_iter()
        .map(|c| c.into_plugin(0).expect("built-in op definitions are valid"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndimage::BackingSpec;
    use crate::ops::run;
    use rand::{Rng, SeedableRng};
    use std::sync::Arc;

    fn random(pt: PixelType, dims: &[usize], seed: u64, backing: BackingSpec) -> NDImage {
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        let mut img = NDImage::new(pt, dims, backing).unwrap();
        for i in 0..img.num_samples() {
            img.set_linear(i, rng.random_range(0.0..pt.max_value().min(1e6))).unwrap();
        }
        img
    }

    #[test]
    fn map_sqrt_equals_sqrt() {
        let ctx = Context::with_defaults();
        for pt in [PixelType::Uint8, PixelType::Float64, PixelType::Uint12] {
            let img = Value::image(random(pt, &[17, 9], 1, BackingSpec::Array));
            let mapped = run(&ctx, "op.map", vec![img.clone(), "math.sqrt".into()]).unwrap();
            let direct = run(&ctx, "math.sqrt", vec![img]).unwrap();
            assert!(mapped.as_image().unwrap().same_samples(direct.as_image().unwrap()).unwrap(), "{pt}");
        }
    }

    #[test]
    fn thread_count_does_not_matter() {
        let ctx = Context::with_defaults();
        let img = random(PixelType::Float32, &[512, 512], 7, BackingSpec::Array);
        let one = map_image(&ctx, &img, "math.sqrt", None, None, 1).unwrap();
        let eight = map_image(&ctx, &img, "math.sqrt", None, None, 8).unwrap();
        assert!(one.same_samples(&eight).unwrap());
        let cells = img.with_backing(BackingSpec::cell(vec![100, 100], 1 << 20)).unwrap();
        let c1 = map_image(&ctx, &cells, "math.sqrt", None, None, 1).unwrap();
        let c8 = map_image(&ctx, &cells, "math.sqrt", None, None, 8).unwrap();
        assert!(c1.same_samples(&c8).unwrap() && c1.same_samples(&one).unwrap());
    }

    #[test]
    fn masked_region_leaves_outside_alone() {
        let ctx = Context::with_defaults();
        let img = random(PixelType::Uint8, &[8, 8], 3, BackingSpec::Array);
        let region = Region::new(vec![2, 2], vec![5, 5]).unwrap().with_mask(|p| (p[0] + p[1]) % 2 == 0);
        let out = run(
            &ctx,
            "op.map",
            vec![Value::image(img.try_clone().unwrap()), "math.sqrt".into(), Value::Region(Arc::new(region.clone()))],
        )
        .unwrap();
        let out = out.as_image().unwrap();
        for y in 0..8 {
            for x in 0..8 {
                let v = img.get_sample(&[x, y]).unwrap();
                let expected = if region.contains(&[x, y]) { PixelType::Uint8.clamp(v.sqrt().round()) } else { v };
                assert_eq!(out.get_sample(&[x, y]).unwrap(), expected, "({x},{y})");
            }
        }
    }

    #[test]
    fn extra_argument_and_inner_no_match() {
        let ctx = Context::with_defaults();
        let img = random(PixelType::Uint8, &[4, 4], 2, BackingSpec::Array);
        let out = run(&ctx, "op.map", vec![Value::image(img.try_clone().unwrap()), "math.add".into(), 3.0.into()]).unwrap();
        let direct = run(&ctx, "math.add", vec![Value::image(img.try_clone().unwrap()), 3.0.into()]).unwrap();
        assert!(out.as_image().unwrap().same_samples(direct.as_image().unwrap()).unwrap());
        assert!(map_image(&ctx, &img, "math.nothing", None, None, 1).is_err());
    }
}
