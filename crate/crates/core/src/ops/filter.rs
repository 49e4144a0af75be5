//! Separable Gaussian smoothing and the difference of Gaussians.
//!
//! The kernel radius is `ceil(3σ)` and the weights are normalized to sum to
//! one. Lines are extended by mirroring without repeating the edge sample,
//! so index -1 reads index 1. All arithmetic is in f64; the result is stored
//! in the input's pixel type.

use super::{arg_f64, arg_image, match_op, OpCandidate, OpRequest, ParamType};
use crate::container::{Context, PluginMetadata};
use crate::error::{Error, Result};
use crate::ndimage::NDImage;
use crate::value::{Value, ValueType as T};

/// Normalized weights for offsets `-r..=r`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let mut w: Vec<f64> = (-r..=r)
        .map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= sum);
    w
}

/// Reflects `i` into `0..n` without repeating the edge sample.
pub fn mirror_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m >= n as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

/// Convolves every line along `axis` of canonical-order `data` in place.
pub fn gauss_along_axis(data: &mut [f64], dims: &[usize], axis: usize, sigma: f64) {
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as isize;
    let stride: usize = dims[..axis].iter().product();
    let n = dims[axis];
    let outer = data.len() / (stride * n);
    let mut line = vec![0.0; n];
    for o in 0..outer {
        for s in 0..stride {
            let base = o * stride * n + s;
            for (i, slot) in line.iter_mut().enumerate() {
                *slot = data[base + i * stride];
            }
            for i in 0..n {
                let mut acc = 0.0;
                for (k, w) in kernel.iter().enumerate() {
                    acc += w * line[mirror_index(i as isize + k as isize - r, n)];
                }
                data[base + i * stride] = acc;
            }
        }
    }
}

/// Axis indices to smooth and the sigma for each.
fn axis_sigmas(img: &NDImage, sigmas: &[f64]) -> Result<Vec<(usize, f64)>> {
    if let Some(bad) = sigmas.iter().find(|s| **s <= 0.0 || !s.is_finite()) {
        return Err(Error::op(format!("sigma must be positive, got {bad}")));
    }
    let spatial: Vec<usize> = (0..img.ndim()).filter(|&i| img.axes()[i].kind.is_spatial()).collect();
    if sigmas.len() == 1 {
        if spatial.is_empty() {
            return Err(Error::op("image has no spatial axes to smooth"));
        }
        return Ok(spatial.into_iter().map(|a| (a, sigmas[0])).collect());
    }
    let labels = ["X", "Y", "Z"];
    sigmas
        .iter()
        .zip(labels)
        .map(|(&s, label)| {
            img.axes()
                .iter()
                .position(|a| a.kind.label() == label)
                .map(|a| (a, s))
                .ok_or_else(|| Error::op(format!("image has no {label} axis for sigma {s}")))
        })
        .collect()
}

pub(crate) fn gauss(img: &NDImage, sigmas: &[f64]) -> Result<NDImage> {
    let plan = axis_sigmas(img, sigmas)?;
    let mut data = img.to_f64_vec()?;
    for (axis, sigma) in plan {
        gauss_along_axis(&mut data, img.dims(), axis, sigma);
    }
    let mut out = img.new_like(img.pixel_type())?;
    out.fill_from_f64(&data)?;
    Ok(out)
}

fn gauss_candidate(n_sigmas: usize) -> OpCandidate {
    let mut params = vec![ParamType::Is(T::Image)];
    params.extend(std::iter::repeat_n(ParamType::Is(T::Float64), n_sigmas));
    OpCandidate::function(
        &format!("filter.gauss.sigma{n_sigmas}"),
        "filter.gauss",
        params,
        T::Image,
        move |_, args| {
            let sigmas = (1..=n_sigmas).map(|i| arg_f64(args, i)).collect::<Result<Vec<_>>>()?;
            Ok(Value::image(gauss(arg_image(args, 0)?, &sigmas)?))
        },
    )
    .with_arity(1)
}

/// `sub(gauss(image, σ1), gauss(image, σ2))` through matched inner ops.
fn dog(ctx: &Context, args: &[Value]) -> Result<Value> {
    let image = args[0].clone();
    let (s1, s2) = (args[1].clone(), args[2].clone());
    let g1 = match_op(ctx, &OpRequest::new("filter.gauss", vec![image.clone(), s1.clone()]))?;
    let g2 = match_op(ctx, &OpRequest::new("filter.gauss", vec![image.clone(), s2.clone()]))?;
    let a = g1.run(ctx, vec![image.clone(), s1])?;
    let b = g2.run(ctx, vec![image, s2])?;
    let sub = match_op(ctx, &OpRequest::new("math.sub", vec![a.clone(), b.clone()]))?;
    sub.run(ctx, vec![a, b])
}

pub(super) fn plugins() -> Vec<PluginMetadata> {
    let dog = OpCandidate::function(
        "filter.dog.composed",
        "filter.dog",
        vec![ParamType::Is(T::Image), ParamType::Is(T::Float64), ParamType::Is(T::Float64)],
        T::Image,
        dog,
    )
    .with_arity(1);
    [gauss_candidate(1), gauss_candidate(2), gauss_candidate(3), dog]
        .into_iter()
        .map(|c| c.into_plugin(0).expect("built-in op definitions are valid"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndimage::{BackingSpec, PixelType};
    use crate::ops::run;
    use rand::{Rng, SeedableRng};

    fn random_f64(dims: &[usize], seed: u64) -> NDImage {
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        let mut img = NDImage::new(PixelType::Float64, dims, BackingSpec::Array).unwrap();
        for i in 0..img.num_samples() {
            img.set_linear(i, rng.random_range(-100.0..100.0)).unwrap();
        }
        img
    }

    #[test]
    fn mirror_without_repeat() {
        let got: Vec<usize> = (-3..8).map(|i| mirror_index(i, 5)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 4, 3, 2, 1]);
        assert_eq!(mirror_index(-7, 1), 0);
    }

    #[test]
    fn kernel_shape() {
        let k = gaussian_kernel(2.0);
        assert_eq!(k.len(), 13);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(k[0], k[12]);
    }

    #[test]
    fn constant_image_is_preserved() {
        let mut img = NDImage::new(PixelType::Float64, &[20, 9], BackingSpec::Array).unwrap();
        for i in 0..img.num_samples() {
            img.set_linear(i, 42.5).unwrap();
        }
        let out = gauss(&img, &[1.7]).unwrap();
        for i in 0..out.num_samples() {
            let v = out.get_linear(i).unwrap();
            assert!(((v - 42.5) / 42.5).abs() <= 1e-9, "{v}");
        }
    }

    #[test]
    fn separable_result_matches_direct_2d_convolution() {
        let img = random_f64(&[64, 64], 5);
        let sigma = 1.3;
        let out = gauss(&img, &[sigma]).unwrap();
        // independent oracle: full 2-D kernel as an outer product
        let r = (3.0 * sigma).ceil() as isize;
        let w = |k: isize| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp();
        let norm: f64 = (-r..=r).map(w).sum();
        let reflect = |i: isize, n: isize| {
            let p = 2 * (n - 1);
            let m = i.rem_euclid(p);
            if m >= n { p - m } else { m }
        };
        let mut max_diff: f64 = 0.0;
        for y in 0..64isize {
            for x in 0..64isize {
                let mut acc = 0.0;
                for dy in -r..=r {
                    for dx in -r..=r {
                        let (sx, sy) = (reflect(x + dx, 64), reflect(y + dy, 64));
                        acc += w(dx) * w(dy) / (norm * norm) * img.get_sample(&[sx as usize, sy as usize]).unwrap();
                    }
                }
                max_diff = max_diff.max((acc - out.get_sample(&[x as usize, y as usize]).unwrap()).abs());
            }
        }
        assert!(max_diff <= 1e-9, "{max_diff}");
    }

    #[test]
    fn impulse_response() {
        let mut img = NDImage::new(PixelType::Float64, &[33, 33], BackingSpec::Array).unwrap();
        img.set_sample(&[16, 16], 1.0).unwrap();
        let out = gauss(&img, &[2.0]).unwrap();
        let w0 = 1.0 / (-6..=6).map(|k: i32| (-(k * k) as f64 / 8.0).exp()).sum::<f64>();
        assert!((out.get_sample(&[16, 16]).unwrap() - w0 * w0).abs() < 1e-15);
        for y in 0..33 {
            for x in 0..33 {
                assert_eq!(out.get_sample(&[x, y]).unwrap(), out.get_sample(&[y, x]).unwrap());
            }
        }
    }

    #[test]
    fn dog_identities() {
        let ctx = Context::with_defaults();
        let img = Value::image(random_f64(&[32, 24], 8));
        let d = run(&ctx, "filter.dog", vec![img.clone(), 2.0.into(), 1.0.into()]).unwrap();
        let g2 = run(&ctx, "filter.gauss", vec![img.clone(), 2.0.into()]).unwrap();
        let g1 = run(&ctx, "filter.gauss", vec![img.clone(), 1.0.into()]).unwrap();
        let s = run(&ctx, "math.sub", vec![g2, g1]).unwrap();
        assert!(d.as_image().unwrap().same_samples(s.as_image().unwrap()).unwrap());
        let zero = run(&ctx, "filter.dog", vec![img, 1.5.into(), 1.5.into()]).unwrap();
        assert!(zero.as_image().unwrap().to_f64_vec().unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn anisotropic_and_bad_sigma() {
        let img = random_f64(&[10, 10], 3);
        let only_x = gauss(&img, &[1.0, 1e-3]).unwrap();
        let mut data = img.to_f64_vec().unwrap();
        gauss_along_axis(&mut data, &[10, 10], 0, 1.0);
        gauss_along_axis(&mut data, &[10, 10], 1, 1e-3);
        assert_eq!(only_x.to_f64_vec().unwrap(), data);
        assert!(gauss(&img, &[0.0]).is_err());
        assert!(gauss(&img, &[1.0, 1.0, 1.0]).is_err(), "no Z axis");
    }
}
