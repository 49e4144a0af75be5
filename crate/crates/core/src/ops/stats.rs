//! Reductions: `stats.sum`, `stats.size` and `stats.mean`, each over a
//! whole image or a region of it. The mean is composed from the other two
//! through `math.div`.

use super::{arg_image, run, OpCandidate, ParamType};
use crate::container::{Context, PluginMetadata};
use crate::error::{Error, Result};
use crate::ndimage::{NDImage, Region};
use crate::value::{Value, ValueType as T};

fn region_arg(args: &[Value]) -> Result<Option<&Region>> {
    match args.get(1) {
        None => Ok(None),
        Some(v) => v
            .as_region()
            .map(Some)
            .ok_or_else(|| Error::op("argument 2 is not a region")),
    }
}

pub(crate) fn sum(img: &NDImage, region: Option<&Region>) -> Result<f64> {
    if region.is_none() {
        if let Some(buf) = img.array_buffer() {
            return Ok((0..buf.len()).map(|i| buf.get(i)).sum());
        }
    }
    let mut acc = 0.0;
    for sample in img.cursor(region)? {
        acc += sample?.1;
    }
    Ok(acc)
}

pub(crate) fn size(img: &NDImage, region: Option<&Region>) -> Result<f64> {
    Ok(match region {
        None => img.num_samples() as f64,
        Some(r) => {
            r.check_fits(img.dims())?;
            if r.is_masked() {
                r.positions().count() as f64
            } else {
                r.box_volume() as f64
            }
        }
    })
}

fn reduction(id: &str, name: &str, with_region: bool, f: fn(&NDImage, Option<&Region>) -> Result<f64>) -> OpCandidate {
    let mut params = vec![ParamType::Is(T::Image)];
    if with_region {
        params.push(ParamType::Is(T::Region));
    }
    OpCandidate::function(id, name, params, T::Float64, move |_, args| {
        Ok(Value::Float64(f(arg_image(args, 0)?, region_arg(args)?)?))
    })
    .with_arity(1)
}

fn mean(ctx: &Context, args: &[Value]) -> Result<Value> {
    let total = run(ctx, "stats.sum", args.to_vec())?;
    let count = run(ctx, "stats.size", args.to_vec())?;
    run(ctx, "math.div", vec![total, count])
}

pub(super) fn plugins() -> Vec<PluginMetadata> {
    let mut out = Vec::new();
    for (suffix, with_region) in [("image", false), ("region", true)] {
        out.push(reduction(&format!("stats.sum.{suffix}"), "stats.sum", with_region, sum));
        out.push(reduction(&format!("stats.size.{suffix}"), "stats.size", with_region, size));
        let mut params = vec![ParamType::Is(T::Image)];
        if with_region {
            params.push(ParamType::Is(T::Region));
        }
        out.push(OpCandidate::function(&format!("stats.mean.{suffix}"), "stats.mean", params, T::Float64, mean).with_arity(1));
    }
    out.into_iter()
        .map(|c| c.into_plugin(0).expect("built-in op definitions are valid"))
        .collect()
}
