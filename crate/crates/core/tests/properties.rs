//! Randomized invariants checked against brute-force or reference models.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use proptest::prelude::*;

use ndforge::container::service_plugin;
use ndforge::convert;
use ndforge::io::{self, resolve_handle, HandleMode, Location};
use ndforge::modules::{harvest_from_pairs, run_module, ModuleSpec};
use ndforge::ndimage::CellGrid;
use ndforge::ops::{self, map_image};
use ndforge::updater::{self, FileState, FileVersionRecord, SiteManifest};
use ndforge::{BackingSpec, Context, Dataset, Event, NDImage, PixelType, PluginKind, PluginMetadata, Region, Value, ValueType};

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

fn dims_strategy(max_rank: usize, max_extent: usize) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1..=max_extent, 1..=max_rank)
}

fn backings() -> [BackingSpec; 3] {
    [
        BackingSpec::Array,
        BackingSpec::Planar,
        // Tiny cells and a two-cell budget keep the cache busy.
        BackingSpec::Cell(ndforge::ndimage::CellOptions {
            cell_dims: None,
            cache_budget_bytes: 2 * 3 * 3 * 3 * 8,
            spill_directory: None,
        }),
    ]
}

fn cell_spec(rank: usize) -> BackingSpec {
    BackingSpec::cell(vec![3; rank], 2 * 3usize.pow(rank as u32) * 8)
}

fn backed(pixel_type: PixelType, dims: &[usize], spec: &BackingSpec) -> NDImage {
    match spec {
        BackingSpec::Cell(_) => NDImage::new(pixel_type, dims, cell_spec(dims.len())).unwrap(),
        other => NDImage::new(pixel_type, dims, other.clone()).unwrap(),
    }
}

fn ids(ctx: &Context, kind: PluginKind) -> Vec<String> {
    ctx.resolve_plugins(kind).into_iter().map(|p| p.id).collect()
}

proptest! {
    #![proptest_config(config(128))]

    #[test]
    fn resolution_order_is_a_stable_priority_sort(priorities in prop::collection::vec(-5..5i32, 0..=100)) {
        let plugins: Vec<PluginMetadata> = priorities
            .iter()
            .enumerate()
            .map(|(i, &p)| PluginMetadata::new(PluginKind::Translator, format!("order.p{i}"), "probe", p))
            .collect();
        let ctx = Context::new(plugins).unwrap();

        // Brute force: repeatedly pick the highest priority, earliest index.
        let mut remaining: Vec<(usize, i32)> = priorities.iter().copied().enumerate().collect();
        let mut expected = Vec::new();
        while !remaining.is_empty() {
            let best = (0..remaining.len())
                .max_by(|&a, &b| remaining[a].1.cmp(&remaining[b].1).then(remaining[b].0.cmp(&remaining[a].0)))
                .unwrap();
            expected.push(format!("order.p{}", remaining.remove(best).0));
        }
        prop_assert_eq!(ids(&ctx, PluginKind::Translator), expected);
    }

    #[test]
    fn subscribers_receive_exactly_matching_events(
        paths in prop::collection::vec(prop::collection::vec(0..4usize, 0..4), 1..20),
        watched in prop::collection::vec(0..5usize, 1..6),
    ) {
        // Event types are drawn from a small tree: `event` > `tN` > `tN.M` ...
        let type_path = |steps: &[usize]| -> Vec<String> {
            let mut path = vec![Event::ROOT.to_string()];
            let mut name = String::from("t");
            for s in steps {
                name.push_str(&s.to_string());
                path.push(name.clone());
            }
            path
        };
        let all_types: Vec<String> = paths.iter().flat_map(|p| type_path(p)).collect();
        let ctx = Context::new(Vec::new()).unwrap();
        let log: Arc<Mutex<BTreeMap<String, usize>>> = Arc::default();
        let mut subscribed = Vec::new();
        for w in watched {
            let ty = all_types[w % all_types.len()].clone();
            let log = log.clone();
            let key = format!("{}#{}", ty, subscribed.len());
            subscribed.push((key.clone(), ty.clone()));
            ctx.subscribe(ty, Arc::new(move |_, _| {
                *log.lock().unwrap().entry(key.clone()).or_default() += 1;
                Ok(())
            }));
        }
        for p in &paths {
            ctx.publish(&Event::new(type_path(p)).unwrap());
        }
        let got = log.lock().unwrap().clone();
        for (key, ty) in subscribed {
            let expected = paths.iter().filter(|p| type_path(p).contains(&ty)).count();
            prop_assert_eq!(got.get(&key).copied().unwrap_or(0), expected, "subscriber {}", key);
        }
    }

    #[test]
    fn services_are_instantiated_once(calls in 1..50usize) {
        let made = Arc::new(AtomicUsize::new(0));
        let counter = made.clone();
        let ctx = Context::new(vec![service_plugin("svc.counter", "counter", 0, move |_| {
            counter.fetch_add(1, Ordering::SeqCst);
            Arc::new(7u32)
        })])
        .unwrap();
        for _ in 0..calls {
            prop_assert_eq!(*ctx.service::<u32>("counter").unwrap(), 7);
        }
        prop_assert_eq!(made.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn backings_are_observationally_identical(
        dims in dims_strategy(3, 7),
        writes in prop::collection::vec((any::<u32>(), -20.0..300.0f64), 0..60),
    ) {
        let n: usize = dims.iter().product();
        let mut images: Vec<NDImage> = backings().iter().map(|b| backed(PixelType::Uint8, &dims, b)).collect();
        for &(at, v) in &writes {
            let pos = images[0].position_of(at as usize % n);
            for img in &mut images {
                img.set_sample(&pos, v).unwrap();
            }
        }
        let oracle: Vec<(Vec<usize>, f64)> = images[0].cursor(None).unwrap().map(Result::unwrap).collect();
        for img in &images[1..] {
            let seen: Vec<(Vec<usize>, f64)> = img.cursor(None).unwrap().map(Result::unwrap).collect();
            prop_assert_eq!(&seen, &oracle, "{:?} backing", img.backing());
        }
    }

    #[test]
    fn packed_types_round_trip_every_value(
        ty in prop::sample::select(vec![PixelType::Bool1, PixelType::Bit, PixelType::Uint2, PixelType::Uint4, PixelType::Uint12]),
        seed in any::<u64>(),
    ) {
        use rand::{seq::SliceRandom, Rng, SeedableRng};
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        let (lo, hi) = ty.int_range().unwrap();
        let len = 3 * (hi - lo + 1) as usize + 5;
        let mut img = NDImage::new(ty, &[len], BackingSpec::Array).unwrap();
        let mut model = vec![0i128; len];
        let mut slots: Vec<usize> = (0..len).collect();
        slots.shuffle(&mut rng);
        // Interleave each value write with a write to a random neighbour.
        for (v, &slot) in (lo..=hi).zip(&slots) {
            img.set_integer(&[slot], v).unwrap();
            model[slot] = v;
            let other = rng.random_range(0..len);
            let w = rng.random_range(lo..=hi);
            if !slots[..(v - lo + 1) as usize].contains(&other) {
                img.set_integer(&[other], w).unwrap();
                model[other] = w;
            }
        }
        for (i, &want) in model.iter().enumerate() {
            prop_assert_eq!(img.get_integer(&[i]).unwrap(), want, "sample {}", i);
        }
    }

    #[test]
    fn cursor_is_a_bijection_onto_the_region(dims in dims_strategy(3, 6), a in any::<u64>(), b in any::<u64>()) {
        let img = NDImage::new(PixelType::Uint8, &dims, BackingSpec::Array).unwrap();
        let corner = |seed: u64| -> Vec<usize> {
            dims.iter().enumerate().map(|(i, &d)| ((seed >> (i * 8)) as usize) % d).collect()
        };
        let (p, q) = (corner(a), corner(b));
        let min: Vec<usize> = p.iter().zip(&q).map(|(x, y)| *x.min(y)).collect();
        let max: Vec<usize> = p.iter().zip(&q).map(|(x, y)| *x.max(y)).collect();
        let region = Region::new(min.clone(), max.clone()).unwrap();
        let visited: Vec<Vec<usize>> = img.cursor(Some(&region)).unwrap().map(|r| r.unwrap().0).collect();
        let mut expected = Vec::new();
        for linear in 0..img.num_samples() {
            let pos = img.position_of(linear);
            if pos.iter().zip(&min).zip(&max).all(|((x, lo), hi)| lo <= x && x <= hi) {
                expected.push(pos);
            }
        }
        prop_assert_eq!(visited, expected);
    }

    #[test]
    fn clamped_stores_are_idempotent(
        ty in prop::sample::select(vec![PixelType::Uint8, PixelType::Int8, PixelType::Uint12, PixelType::Int16, PixelType::Float32]),
        v in -1.0e6..1.0e6f64,
    ) {
        let mut img = NDImage::new(ty, &[2], BackingSpec::Array).unwrap();
        img.set_sample(&[1], v).unwrap();
        let raw = img.get_raw(&[1]).unwrap();
        let got = img.get_sample(&[1]).unwrap();
        img.set_sample(&[1], got).unwrap();
        prop_assert_eq!(img.get_raw(&[1]).unwrap(), raw);
    }
}

proptest! {
    #![proptest_config(config(48))]

    #[test]
    fn ops_agree_across_backings(dims in dims_strategy(3, 6), seed in any::<u64>(), c in -40.0..40.0f64) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        let n: usize = dims.iter().product();
        let values: Vec<f64> = (0..n).map(|_| rng.random_range(0..=255) as f64).collect();
        let ctx = Context::with_defaults();
        let mut outputs = Vec::new();
        for spec in backings() {
            let mut img = backed(PixelType::Uint8, &dims, &spec);
            img.fill_from_f64(&values).unwrap();
            let img = Value::Image(Arc::new(img));
            let run = |name: &str, args: Vec<Value>| ops::run(&ctx, name, args).unwrap();
            let added = run("math.add", vec![img.clone(), Value::Float64(c)]);
            let blurred = run("filter.gauss", vec![img.clone(), Value::Float64(1.2)]);
            let sum = run("stats.sum", vec![img.clone()]).as_f64().unwrap();
            let mapped = map_image(&ctx, img.as_image().unwrap(), "math.sqrt", None, None, 1).unwrap();
            outputs.push((
                added.as_image().unwrap().to_f64_vec().unwrap(),
                blurred.as_image().unwrap().to_f64_vec().unwrap(),
                sum,
                mapped.to_f64_vec().unwrap(),
            ));
        }
        prop_assert_eq!(&outputs[1], &outputs[0], "planar vs array");
        prop_assert_eq!(&outputs[2], &outputs[0], "cell vs array");
    }

    #[test]
    fn map_does_not_depend_on_thread_count(dims in dims_strategy(3, 9), threads in 2..6usize) {
        let ctx = Context::with_defaults();
        let mut img = NDImage::new(PixelType::Float64, &dims, BackingSpec::Array).unwrap();
        for i in 0..img.num_samples() {
            img.set_linear(i, (i as f64 * 0.37).sin() * 100.0).unwrap();
        }
        let one = map_image(&ctx, &img, "math.sqrt", None, None, 1).unwrap();
        let many = map_image(&ctx, &img, "math.sqrt", None, None, threads).unwrap();
        prop_assert!(one.same_samples(&many).unwrap());
        let direct: Vec<u64> = img.to_f64_vec().unwrap().iter().map(|v| v.sqrt().to_bits()).collect();
        let mapped: Vec<u64> = one.to_f64_vec().unwrap().iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(mapped, direct);
    }

    #[test]
    fn matching_ignores_registration_order(seed in any::<u64>()) {
        use rand::{seq::SliceRandom, SeedableRng};
        let mut plugins = ndforge::defaults::builtin_plugins();
        plugins.shuffle(&mut rand::rngs::StdRng::seed_from_u64(seed));
        let shuffled = Context::new(plugins).unwrap();
        let reference = Context::with_defaults();
        let planar = Arc::new(NDImage::new(PixelType::Uint8, &[4, 4, 2], BackingSpec::Planar).unwrap());
        let array = Arc::new(NDImage::new(PixelType::Float32, &[4, 4], BackingSpec::Array).unwrap());
        let requests = [
            ("math.add", vec![Value::Image(planar.clone()), Value::Float64(2.0)]),
            ("math.add", vec![Value::Image(array.clone()), Value::Image(array.clone())]),
            ("math.add", vec![Value::Image(array.clone()), Value::Float64(2.0)]),
            ("math.add", vec![Value::Float64(1.0), Value::Float64(2.0)]),
            ("filter.gauss", vec![Value::Image(array.clone()), Value::Float64(1.0)]),
            ("stats.mean", vec![Value::Image(planar.clone())]),
        ];
        for (name, args) in requests {
            let request = ops::OpRequest::new(name, args);
            let a = ops::match_op(&reference, &request).unwrap().candidate.id.clone();
            let b = ops::match_op(&shuffled, &request).unwrap().candidate.id.clone();
            prop_assert_eq!(a, b, "{}", name);
        }
    }

    #[test]
    fn conversion_to_own_type_is_identity(
        v in prop_oneof![
            any::<i64>().prop_map(Value::Int64),
            any::<i32>().prop_map(Value::Int32),
            any::<f64>().prop_map(Value::Float64),
            any::<bool>().prop_map(Value::Bool),
            "[a-z0-9 .]{0,12}".prop_map(Value::Str),
        ]
    ) {
        let ctx = Context::with_defaults();
        let out = convert::convert(&ctx, &v, v.value_type()).unwrap();
        prop_assert_eq!(out.value_type(), v.value_type());
        prop_assert_eq!(out.content_hash(), v.content_hash());
    }

    #[test]
    fn float_strings_convert_like_the_standard_parser(x in -1.0e12..1.0e12f64) {
        let ctx = Context::with_defaults();
        let text = x.to_string();
        let out = convert::convert(&ctx, &Value::Str(text.clone()), ValueType::Float64).unwrap();
        prop_assert_eq!(out.as_f64().unwrap().to_bits(), text.parse::<f64>().unwrap().to_bits());
    }

    #[test]
    fn module_runs_are_deterministic_and_harvest_is_pure(name in "[A-Za-z]{1,10}", age in 0..150i64) {
        let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/greet.sjm")).unwrap();
        let spec = ModuleSpec::parse("greet", &text).unwrap();
        let run_once = || {
            let ctx = Context::with_defaults();
            let lines: Arc<Mutex<Vec<u8>>> = Arc::default();
            ctx.set_output(Box::new(SharedSink(lines.clone())));
            let prefs = ctx.preferences();
            let pairs = [format!("name={name}"), format!("age={age}")];
            let provided = harvest_from_pairs(&ctx, &spec, &pairs).unwrap();
            assert_eq!(ctx.preferences(), prefs, "harvesting touched preferences");
            assert!(ctx.active_dataset().is_none());
            let out = run_module(&ctx, &spec, provided).unwrap();
            let text = String::from_utf8(lines.lock().unwrap().clone()).unwrap();
            (out["greeting"].render(), text)
        };
        let (first, shown) = run_once();
        prop_assert_eq!(run_once(), (first.clone(), shown.clone()));
        prop_assert_eq!(&first, &format!("Hello, {name}. You are {age} years old."));
        prop_assert_eq!(shown, format!("greeting = {first}\n"));

        // With everything provided, the chain adds nothing to the body.
        let ctx = Context::with_defaults();
        ctx.set_output(Box::new(std::io::sink()));
        let inputs = BTreeMap::from([("name".to_string(), Value::Str(name.clone())), ("age".to_string(), Value::Int64(age))]);
        let direct = spec.execute(&ctx, &inputs).unwrap();
        prop_assert_eq!(direct["greeting"].render(), first);
    }

    #[test]
    fn nchk_round_trips_and_blocks_assemble(
        dims in dims_strategy(3, 20),
        ty in prop::sample::select(vec![PixelType::Bit, PixelType::Uint8, PixelType::Uint12, PixelType::Int16, PixelType::Float64]),
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        let ctx = Context::with_defaults();
        let mut img = NDImage::new(ty, &dims, BackingSpec::Array).unwrap();
        let (lo, hi) = ty.int_range().map(|(a, b)| (a as f64, b as f64)).unwrap_or((-1e3, 1e3));
        for i in 0..img.num_samples() {
            img.set_linear(i, rng.random_range(lo..=hi)).unwrap();
        }
        let loc = Location::memory("probe.nchk", Vec::new());
        io::save(&ctx, &Dataset::new("probe", img.clone()).unwrap(), &loc, "nchk").unwrap();
        let back = io::read_dataset(&ctx, &loc).unwrap();
        prop_assert!(back.image.same_samples(&img).unwrap());

        let (format, meta) = io::inspect(&ctx, &loc).unwrap();
        prop_assert_eq!(meta.dims(), dims.clone());
        let layout = meta.layout.clone().expect("nchk files are block-readable");
        let grid = CellGrid::new(&dims, &layout.cell_dims).unwrap();
        let mut handle = resolve_handle(&ctx, &loc, HandleMode::Read).unwrap();
        for index in 0..layout.cell_count() {
            let block = io::read_block(format.as_ref(), handle.as_mut(), &meta, index).unwrap();
            let (min, shape) = grid.cell_bounds(index);
            for i in 0..block.len() {
                let mut local = Vec::with_capacity(shape.len());
                let mut rem = i;
                for &s in &shape {
                    local.push(rem % s);
                    rem /= s;
                }
                let pos: Vec<usize> = local.iter().zip(&min).map(|(a, b)| a + b).collect();
                prop_assert_eq!(block.get_raw(i), img.get_raw(&pos).unwrap());
            }
        }
    }

    #[test]
    fn handles_match_a_byte_array_model(ops_list in prop::collection::vec((0..3u8, 0..64u64, prop::collection::vec(any::<u8>(), 0..16)), 1..40)) {
        let ctx = Context::new(Vec::new()).unwrap();
        let tmp = tempfile::TempDir::new().unwrap();
        let file = Location::file(tmp.path().join("h.bin"));
        let memory = Location::memory("h", Vec::new());
        let mut handles = vec![
            resolve_handle(&ctx, &file, HandleMode::ReadWrite).unwrap(),
            resolve_handle(&ctx, &memory, HandleMode::ReadWrite).unwrap(),
        ];
        let mut model: Vec<u8> = Vec::new();
        let mut pos = 0usize;
        for (op, at, data) in ops_list {
            match op {
                0 => {
                    pos = at as usize;
                    for h in &mut handles {
                        h.seek(at).unwrap();
                    }
                }
                1 => {
                    if model.len() < pos + data.len() {
                        model.resize(pos + data.len(), 0);
                    }
                    model[pos..pos + data.len()].copy_from_slice(&data);
                    pos += data.len();
                    for h in &mut handles {
                        h.write(&data).unwrap();
                    }
                }
                _ => {
                    let want = data.len();
                    let end = (pos + want).min(model.len()).max(pos);
                    let expected = model.get(pos..end).unwrap_or(&[]).to_vec();
                    for h in &mut handles {
                        let mut buf = vec![0u8; want];
                        let got = h.read(&mut buf).unwrap();
                        prop_assert_eq!(&buf[..got], &expected[..]);
                    }
                    pos += expected.len();
                }
            }
            for h in &handles {
                prop_assert_eq!(h.length(), model.len() as u64);
                prop_assert_eq!(h.position(), pos as u64);
            }
        }
    }
}

struct SharedSink(Arc<Mutex<Vec<u8>>>);

impl std::io::Write for SharedSink {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.lock().unwrap().extend_from_slice(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

fn digest(i: u8) -> String {
    updater::checksum(&[i])
}

proptest! {
    #![proptest_config(config(64))]

    /// Two sites with identical content: whichever comes first owns the
    /// files, but the states never change.
    #[test]
    fn site_order_changes_only_ownership(contents in prop::collection::vec(0..3u8, 1..8)) {
        let tmp = tempfile::TempDir::new().unwrap();
        let mut site = SiteManifest::new("first");
        for (i, c) in contents.iter().enumerate() {
            let path = format!("f{i}.bin");
            let current = FileVersionRecord::of(&[*c], 10);
            let mut entry = ndforge::updater::FileEntry::new(current);
            entry.previous.push(FileVersionRecord { checksum: digest(9), timestamp: 5, size: 1 });
            site.files.insert(path.clone(), entry);
            // Local copies alternate between current, old and edited.
            let local = match i % 3 {
                0 => vec![*c],
                1 => vec![9],
                _ => vec![200],
            };
            std::fs::write(tmp.path().join(path), local).unwrap();
        }
        let mut twin = site.clone();
        twin.site_name = "second".into();

        let forward = updater::classify(tmp.path(), &[site.clone(), twin.clone()]);
        let backward = updater::classify(tmp.path(), &[twin, site]);
        prop_assert_eq!(forward.states.len(), backward.states.len());
        for (f, b) in forward.states.iter().zip(&backward.states) {
            prop_assert_eq!(&f.path, &b.path);
            prop_assert_eq!(f.state, b.state);
            prop_assert_eq!(f.owning_site.as_deref(), Some("first"));
            prop_assert_eq!(b.owning_site.as_deref(), Some("second"));
        }
        let expected: Vec<FileState> = (0..contents.len())
            .map(|i| [FileState::UpToDate, FileState::OldVersion, FileState::LocallyModified][i % 3])
            .collect();
        // `states` is sorted by path, so compare through the lookup.
        for (i, want) in expected.into_iter().enumerate() {
            prop_assert_eq!(forward.state_of(&format!("f{i}.bin")), Some(want));
        }
    }
}
