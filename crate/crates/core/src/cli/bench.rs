//! The `math.add` benchmark: five ways of adding a constant to a uint8
//! image, timed on the same random input each round.

use std::time::Instant;

use rand::{Rng, SeedableRng};

use crate::error::{Error, Result};
use crate::ndimage::{BackingSpec, NDImage, PixelType, MAX_BUFFER_SAMPLES};
use crate::ops::{add_constant_array_inplace, add_constant_array_inplace_mt, add_constant_generic, add_constant_planar};

pub const VARIANTS: [&str; 5] = ["raw", "generic", "planar", "array-inplace", "array-inplace-mt"];

/// The constant added in every variant.
const ADDEND: u8 = 7;

#[derive(Clone, Debug, PartialEq)]
pub struct BenchOptions {
    pub width: usize,
    pub height: usize,
    pub rounds: usize,
    pub threads: usize,
    pub seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            width: 4096,
            height: 4096,
            rounds: 20,
            threads: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            seed: 0x5eed,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BenchResult {
    /// `(variant, round, millis)` in execution order.
    pub rows: Vec<(&'static str, usize, f64)>,
    pub threads: usize,
}

impl BenchResult {
    pub fn median_millis(&self, variant: &str) -> f64 {
        let mut v: Vec<f64> = self.rows.iter().filter(|r| r.0 == variant).map(|r| r.2).collect();
        v.sort_by(f64::total_cmp);
        match v.len() {
            0 => f64::NAN,
            n if n % 2 == 1 => v[n / 2],
            n => (v[n / 2 - 1] + v[n / 2]) / 2.0,
        }
    }

    /// How many times faster than the generic variant, by median time.
    pub fn fold_vs_generic(&self, variant: &str) -> f64 {
        self.median_millis("generic") / self.median_millis(variant)
    }

    pub fn csv(&self) -> String {
        let mut s = String::from("variant,round,millis\n");
        for (variant, round, ms) in &self.rows {
            s.push_str(&format!("{variant},{round},{ms:.3}\n"));
        }
        s
    }

    pub fn summary(&self) -> Vec<String> {
        VARIANTS
            .iter()
            .map(|v| {
                format!(
                    "# {v}: median {:.3} ms, {:.2}x vs generic",
                    self.median_millis(v),
                    self.fold_vs_generic(v)
                )
            })
            .chain(std::iter::once(format!("# threads: {}", self.threads)))
            .collect()
    }
}

fn allocation_hint(opts: &BenchOptions, e: Error) -> Error {
    Error::Usage(format!(
        "cannot allocate a {}x{} benchmark image ({e}); try a smaller --size",
        opts.width, opts.height
    ))
}

fn random_bytes(n: usize, seed: u64) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    bytes.try_reserve_exact(n).map_err(|_| Error::Allocation { bytes: n })?;
    bytes.resize(n, 0);
    rand::rngs::StdRng::seed_from_u64(seed).fill(&mut bytes[..]);
    Ok(bytes)
}

fn image_from(bytes: &[u8], dims: &[usize], backing: BackingSpec) -> Result<NDImage> {
    let mut img = NDImage::new(PixelType::Uint8, dims, BackingSpec::Array)?;
    img.array_buffer_mut().expect("array backing").as_bytes_mut().copy_from_slice(bytes);
    match backing {
        BackingSpec::Array => Ok(img),
        other => img.with_backing(other),
    }
}

fn raw_add(bytes: &mut [u8]) {
    for b in bytes {
        *b = b.saturating_add(ADDEND);
    }
}

fn bytes_of(img: &NDImage) -> Result<Vec<u8>> {
    match img.array_buffer() {
        Some(buf) => Ok(buf.as_bytes().to_vec()),
        None => Ok(img.to_f64_vec()?.into_iter().map(|v| v as u8).collect()),
    }
}

/// Runs one variant on prepared inputs and returns its output bytes.
struct Inputs {
    bytes: Vec<u8>,
    array: NDImage,
    planar: NDImage,
}

fn run_variant(variant: &str, inputs: &Inputs, threads: usize) -> Result<(f64, Vec<u8>)> {
    let c = ADDEND as f64;
    match variant {
        "raw" => {
            let mut data = inputs.bytes.clone();
            let t = Instant::now();
            raw_add(&mut data);
            let ms = t.elapsed().as_secs_f64() * 1e3;
            Ok((ms, data))
        }
        "generic" => {
            let t = Instant::now();
            let out = add_constant_generic(&inputs.array, c)?;
            let ms = t.elapsed().as_secs_f64() * 1e3;
            Ok((ms, bytes_of(&out)?))
        }
        "planar" => {
            let t = Instant::now();
            let out = add_constant_planar(&inputs.planar, c)?;
            let ms = t.elapsed().as_secs_f64() * 1e3;
            Ok((ms, bytes_of(&out)?))
        }
        "array-inplace" | "array-inplace-mt" => {
            let mut img = inputs.array.try_clone()?;
            let t = Instant::now();
            if variant == "array-inplace" {
                add_constant_array_inplace(&mut img, c)?;
            } else {
                add_constant_array_inplace_mt(&mut img, c, threads)?;
            }
            let ms = t.elapsed().as_secs_f64() * 1e3;
            Ok((ms, bytes_of(&img)?))
        }
        other => Err(Error::Usage(format!("unknown benchmark variant `{other}`"))),
    }
}

/// Checks that every variant produces the same bytes, then times `rounds`
/// rounds of each.
pub fn run_bench(opts: &BenchOptions) -> Result<BenchResult> {
    let n = opts
        .width
        .checked_mul(opts.height)
        .filter(|&n| n > 0 && n as u64 <= MAX_BUFFER_SAMPLES)
        .ok_or_else(|| Error::Usage(format!("--size {}x{} is out of range", opts.width, opts.height)))?;
    let dims = [opts.width, opts.height];
    let prepare = || -> Result<Inputs> {
        let bytes = random_bytes(n, opts.seed)?;
        let array = image_from(&bytes, &dims, BackingSpec::Array)?;
        let planar = image_from(&bytes, &dims, BackingSpec::Planar)?;
        Ok(Inputs { bytes, array, planar })
    };
    let inputs = prepare().map_err(|e| allocation_hint(opts, e))?;

    let mut expected = inputs.bytes.clone();
    raw_add(&mut expected);
    for variant in VARIANTS {
        let (_, out) = run_variant(variant, &inputs, opts.threads)?;
        if out != expected {
            return Err(Error::Contract(format!("benchmark variant {variant} disagrees with the raw loop")));
        }
    }

    let mut rows = Vec::with_capacity(opts.rounds * VARIANTS.len());
    for round in 1..=opts.rounds {
        for variant in VARIANTS {
            let (ms, _) = run_variant(variant, &inputs, opts.threads)?;
            rows.push((variant, round, ms));
        }
    }
    Ok(BenchResult {
        rows,
        threads: opts.threads,
    })
}
