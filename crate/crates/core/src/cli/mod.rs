//! Headless command-line front end.
//!
//! Arguments are handled by console-argument plugins: the remaining
//! argument list is offered to each plugin in priority order and the first
//! one that matches consumes a prefix of it, producing an [`Action`]. The
//! built-in plugins provide the subcommands; contexts may register more.
//!
//! Standard output goes through the context's output sink, diagnostics to
//! the supplied error stream. Exit codes: 0 success, 1 runtime error,
//! 2 usage error, 3 unresolved update conflicts.

pub mod bench;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use crate::container::{Context, PluginKind, PluginMetadata};
use crate::error::{Error, Result};
use crate::io::{self, Location, RawSpec};
use crate::modules::{self, harvest_from_pairs, run_module};
use crate::ops;
use crate::updater::{self, Site, UpdatePolicy};

pub use bench::{run_bench, BenchOptions, BenchResult};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CONFLICT: i32 = 3;

pub const SUBCOMMANDS: [&str; 6] = ["run", "update", "bench", "info", "ops", "formats"];

pub const USAGE: &str = "\
usage: ndforge [--checked] <command> [args]

commands:
  run <script.sjm|command> [key=value ...]   run a module headlessly
  update [--root DIR] --site DIR ... [--apply] [--overwrite-modified]
                                             check or apply updates
  bench [--size WxH] [--rounds N] [--threads N] [--csv PATH]
                                             time the math.add variants
  info <file> [--raw 'dims=WxH type=T [offset=N]']
                                             describe an image file
  ops list                                   list registered ops
  formats list                               list registered formats

options:
  --checked    verify op purity contracts while running
  -h, --help   show this text";

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct UpdateArgs {
    pub root: Option<PathBuf>,
    pub sites: Vec<String>,
    pub apply: bool,
    pub overwrite_modified: bool,
}

pub type CustomFn = Arc<dyn Fn(&Context, &mut dyn Write) -> Result<i32> + Send + Sync>;
pub type ConfigureFn = Arc<dyn Fn(&Context) + Send + Sync>;

#[derive(Clone)]
pub enum Action {
    Help,
    Run { target: String, pairs: Vec<String> },
    Update(UpdateArgs),
    Bench { options: BenchOptions, csv: Option<PathBuf> },
    Info { location: String, raw: Option<String> },
    ListOps,
    ListFormats,
    /// Adjusts the context before any other action runs.
    Configure(String, ConfigureFn),
    /// Provided by an external plugin; returns an exit code.
    Custom(String, CustomFn),
}

impl std::fmt::Debug for Action {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Action::Help => f.write_str("Help"),
            Action::Run { target, pairs } => f.debug_struct("Run").field("target", target).field("pairs", pairs).finish(),
            Action::Update(a) => f.debug_tuple("Update").field(a).finish(),
            Action::Bench { options, csv } => f.debug_struct("Bench").field("options", options).field("csv", csv).finish(),
            Action::Info { location, raw } => f.debug_struct("Info").field("location", location).field("raw", raw).finish(),
            Action::ListOps => f.write_str("ListOps"),
            Action::ListFormats => f.write_str("ListFormats"),
            Action::Configure(name, _) => f.debug_tuple("Configure").field(name).finish(),
            Action::Custom(name, _) => f.debug_tuple("Custom").field(name).finish(),
        }
    }
}

pub type MatchFn = Arc<dyn Fn(&[String]) -> bool + Send + Sync>;
/// Consumes a prefix of the arguments, returning how many it took.
pub type ConsumeFn = Arc<dyn Fn(&[String]) -> Result<(usize, Action)> + Send + Sync>;

#[derive(Clone)]
pub struct ConsoleArgument {
    pub matches: MatchFn,
    pub consume: ConsumeFn,
}

impl ConsoleArgument {
    pub fn new(
        matches: impl Fn(&[String]) -> bool + Send + Sync + 'static,
        consume: impl Fn(&[String]) -> Result<(usize, Action)> + Send + Sync + 'static,
    ) -> Self {
        Self {
            matches: Arc::new(matches),
            consume: Arc::new(consume),
        }
    }

    /// Matches when the first argument equals `word`.
    pub fn word(word: &'static str, consume: impl Fn(&[String]) -> Result<(usize, Action)> + Send + Sync + 'static) -> Self {
        Self::new(move |args| args.first().is_some_and(|a| a == word), consume)
    }

    pub fn into_plugin(self, id: &str, priority: i32) -> PluginMetadata {
        PluginMetadata::new(PluginKind::ConsoleArgument, id, id, priority).with_provider(self)
    }
}

fn usage(message: impl Into<String>) -> Error {
    Error::Usage(message.into())
}

fn value_after<'a>(args: &'a [String], i: usize, flag: &str) -> Result<&'a str> {
    args.get(i + 1)
        .map(String::as_str)
        .ok_or_else(|| usage(format!("{flag} needs a value")))
}

fn parse_size(text: &str) -> Result<(usize, usize)> {
    let bad = || usage(format!("--size expects WxH, got `{text}`"));
    let (w, h) = text.split_once('x').ok_or_else(bad)?;
    let w = w.parse().map_err(|_| bad())?;
    let h = h.parse().map_err(|_| bad())?;
    Ok((w, h))
}

fn parse_count(flag: &str, text: &str) -> Result<usize> {
    text.parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| usage(format!("{flag} expects a positive integer, got `{text}`")))
}

fn consume_run(args: &[String]) -> Result<(usize, Action)> {
    let target = args.get(1).ok_or_else(|| usage("run needs a script path or command name"))?;
    let pairs: Vec<String> = args[2..].iter().take_while(|a| a.contains('=') && !a.starts_with('-')).cloned().collect();
    Ok((
        2 + pairs.len(),
        Action::Run {
            target: target.clone(),
            pairs,
        },
    ))
}

fn consume_update(args: &[String]) -> Result<(usize, Action)> {
    let mut u = UpdateArgs::default();
    let mut i = 1;
    while let Some(arg) = args.get(i) {
        match arg.as_str() {
            "--root" => {
                u.root = Some(value_after(args, i, arg)?.into());
                i += 2;
            }
            "--site" => {
                u.sites.push(value_after(args, i, arg)?.to_string());
                i += 2;
            }
            "--apply" => {
                u.apply = true;
                i += 1;
            }
            "--overwrite-modified" => {
                u.overwrite_modified = true;
                i += 1;
            }
            _ => break,
        }
    }
    if u.sites.is_empty() {
        return Err(usage("update needs at least one --site"));
    }
    Ok((i, Action::Update(u)))
}

fn consume_bench(args: &[String]) -> Result<(usize, Action)> {
    let mut options = BenchOptions::default();
    let mut csv = None;
    let mut i = 1;
    while let Some(arg) = args.get(i) {
        match arg.as_str() {
            "--size" => (options.width, options.height) = parse_size(value_after(args, i, arg)?)?,
            "--rounds" => options.rounds = parse_count(arg, value_after(args, i, arg)?)?,
            "--threads" => options.threads = parse_count(arg, value_after(args, i, arg)?)?,
            "--seed" => {
                options.seed = value_after(args, i, arg)?
                    .parse()
                    .map_err(|_| usage("--seed expects an unsigned integer"))?
            }
            "--csv" => csv = Some(PathBuf::from(value_after(args, i, arg)?)),
            _ => break,
        }
        i += 2;
    }
    Ok((i, Action::Bench { options, csv }))
}

fn consume_info(args: &[String]) -> Result<(usize, Action)> {
    let location = args.get(1).ok_or_else(|| usage("info needs a file"))?.clone();
    if args.get(2).is_some_and(|a| a == "--raw") {
        let raw = value_after(args, 2, "--raw")?.to_string();
        return Ok((4, Action::Info { location, raw: Some(raw) }));
    }
    Ok((2, Action::Info { location, raw: None }))
}

fn consume_list(what: &'static str, action: Action) -> impl Fn(&[String]) -> Result<(usize, Action)> {
    move |args| match args.get(1).map(String::as_str) {
        Some("list") => Ok((2, action.clone())),
        _ => Err(usage(format!("expected `{what} list`"))),
    }
}

pub fn builtin_plugins() -> Vec<PluginMetadata> {
    let checked: ConfigureFn = Arc::new(|ctx: &Context| ctx.update_settings(|s| s.checked_ops = true));
    vec![
        ConsoleArgument::new(
            |args| args.first().is_some_and(|a| a == "-h" || a == "--help"),
            |_| Ok((1, Action::Help)),
        )
        .into_plugin("console.help", 100),
        ConsoleArgument::word("--checked", move |_| Ok((1, Action::Configure("checked".into(), checked.clone()))))
            .into_plugin("console.checked", 100),
        ConsoleArgument::word("run", consume_run).into_plugin("console.run", 0),
        ConsoleArgument::word("update", consume_update).into_plugin("console.update", 0),
        ConsoleArgument::word("bench", consume_bench).into_plugin("console.bench", 0),
        ConsoleArgument::word("info", consume_info).into_plugin("console.info", 0),
        ConsoleArgument::word("ops", consume_list("ops", Action::ListOps)).into_plugin("console.ops", 0),
        ConsoleArgument::word("formats", consume_list("formats", Action::ListFormats)).into_plugin("console.formats", 0),
    ]
}

/// Closest candidate within edit distance 2.
pub fn suggest<'a>(word: &str, candidates: impl IntoIterator<Item = &'a str>) -> Option<&'a str> {
    candidates
        .into_iter()
        .map(|c| (strsim::levenshtein(word, c), c))
        .filter(|(d, _)| *d <= 2)
        .min()
        .map(|(_, c)| c)
}

/// Turns `argv` (without the program name) into actions.
pub fn parse_args(ctx: &Context, argv: &[String]) -> Result<Vec<Action>> {
    let handlers: Vec<(String, ConsoleArgument)> = ctx
        .resolve_plugins(PluginKind::ConsoleArgument)
        .into_iter()
        .filter_map(|p| p.provider::<ConsoleArgument>().cloned().map(|c| (p.id, c)))
        .collect();
    let mut rest = argv;
    let mut actions = Vec::new();
    while let Some(first) = rest.first() {
        let Some((id, handler)) = handlers.iter().find(|(_, h)| (h.matches)(rest)) else {
            let hint = suggest(first, SUBCOMMANDS).map(|s| format!("; did you mean `{s}`?")).unwrap_or_default();
            return Err(usage(format!("unknown argument `{first}`{hint}")));
        };
        let (taken, action) = (handler.consume)(rest)?;
        if taken == 0 || taken > rest.len() {
            return Err(Error::Usage(format!("console argument plugin {id} consumed {taken} arguments")));
        }
        log::debug!("{id} consumed {:?}", &rest[..taken]);
        actions.push(action);
        rest = &rest[taken..];
    }
    Ok(actions)
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Usage(_) => EXIT_USAGE,
        _ => EXIT_FAILURE,
    }
}

/// Parses and runs `argv`, returning the process exit code.
pub fn execute<S: AsRef<str>>(ctx: &Context, argv: &[S], err: &mut dyn Write) -> i32 {
    let argv: Vec<String> = argv.iter().map(|s| s.as_ref().to_string()).collect();
    let actions = match parse_args(ctx, &argv) {
        Ok(a) if a.is_empty() => {
            let _ = writeln!(err, "{USAGE}");
            return EXIT_USAGE;
        }
        Ok(a) => a,
        Err(e) => {
            let _ = writeln!(err, "error: {e}\n\n{USAGE}");
            return exit_code(&e);
        }
    };
    let (configure, work): (Vec<Action>, Vec<Action>) =
        actions.into_iter().partition(|a| matches!(a, Action::Configure(..)));
    for action in configure {
        if let Action::Configure(_, f) = action {
            f(ctx);
        }
    }
    let mut code = EXIT_OK;
    for action in work {
        let result = run_action(ctx, &action, err);
        let this = match result {
            Ok(c) => c,
            Err(e) => {
                let _ = writeln!(err, "error: {e}");
                exit_code(&e)
            }
        };
        if this != EXIT_OK {
            code = this;
            break;
        }
    }
    code
}

fn run_action(ctx: &Context, action: &Action, err: &mut dyn Write) -> Result<i32> {
    match action {
        Action::Help => {
            ctx.emit_line(USAGE)?;
            Ok(EXIT_OK)
        }
        Action::Run { target, pairs } => cmd_run(ctx, target, pairs),
        Action::Update(args) => cmd_update(ctx, args, err),
        Action::Bench { options, csv } => cmd_bench(ctx, options, csv.as_deref()),
        Action::Info { location, raw } => cmd_info(ctx, location, raw.as_deref()),
        Action::ListOps => {
            for row in ops::list_ops(ctx) {
                ctx.emit_line(&row)?;
            }
            Ok(EXIT_OK)
        }
        Action::ListFormats => {
            for f in io::formats(ctx) {
                let d = f.descriptor();
                let caps = [("read", d.capabilities.read), ("write", d.capabilities.write), ("block-read", d.capabilities.block_read)]
                    .iter()
                    .filter(|(_, on)| *on)
                    .map(|(n, _)| *n)
                    .collect::<Vec<_>>()
                    .join(",");
                ctx.emit_line(&format!("{}\t{}\t{}\t{caps}", d.id, d.name, d.suffixes.join(",")))?;
            }
            Ok(EXIT_OK)
        }
        Action::Configure(_, f) => {
            f(ctx);
            Ok(EXIT_OK)
        }
        Action::Custom(_, f) => f(ctx, err),
    }
}

pub fn cmd_run(ctx: &Context, target: &str, pairs: &[String]) -> Result<i32> {
    let spec = modules::load_module(ctx, target).map_err(|e| match e {
        Error::UnknownCommand(name) => {
            let names = modules::command_names(ctx);
            match suggest(&name, names.iter().map(String::as_str)) {
                Some(s) => Error::Op(format!("unknown command `{name}`; did you mean `{s}`?")),
                None => Error::UnknownCommand(name),
            }
        }
        other => other,
    })?;
    let provided: BTreeMap<_, _> = harvest_from_pairs(ctx, &spec, pairs)?;
    run_module(ctx, &spec, provided)?;
    Ok(EXIT_OK)
}

pub fn cmd_update(ctx: &Context, args: &UpdateArgs, err: &mut dyn Write) -> Result<i32> {
    let root = args.root.clone().unwrap_or_else(|| PathBuf::from("."));
    let sites: Vec<Site> = args
        .sites
        .iter()
        .map(|loc| Site::open(updater::transport_for(ctx, loc)?))
        .collect::<Result<_>>()?;
    let manifests: Vec<_> = sites.iter().map(|s| s.manifest.clone()).collect();
    let states = updater::classify(&root, &manifests);
    for (path, why) in &states.unreadable {
        let _ = writeln!(err, "warning: cannot read {path}: {why}");
    }
    let policy = UpdatePolicy {
        overwrite_modified: args.overwrite_modified,
        only: None,
    };
    let plan = updater::plan(&states, &manifests, &policy);
    if !args.apply {
        for s in states.states.iter().filter(|s| s.state != updater::FileState::UpToDate) {
            ctx.emit_line(&format!("{}\t{}\t{}", s.state, s.path, s.owning_site.as_deref().unwrap_or("-")))?;
        }
        return Ok(if plan.conflicts.is_empty() { EXIT_OK } else { EXIT_CONFLICT });
    }
    let report = updater::apply(&root, &plan, &sites);
    if !report.installed.is_empty() {
        ctx.emit_line(&format!("installed {}", report.installed.len()))?;
    }
    if !report.upgraded.is_empty() {
        ctx.emit_line(&format!("upgraded {}", report.upgraded.len()))?;
    }
    for (path, why) in &report.failed {
        let _ = writeln!(err, "failed {path}: {why}");
    }
    for (path, why) in &plan.conflicts {
        ctx.emit_line(&format!("CONFLICT\t{path}\t{why}"))?;
    }
    Ok(if !report.failed.is_empty() {
        EXIT_FAILURE
    } else if !plan.conflicts.is_empty() {
        EXIT_CONFLICT
    } else {
        EXIT_OK
    })
}

pub fn cmd_bench(ctx: &Context, options: &BenchOptions, csv: Option<&std::path::Path>) -> Result<i32> {
    let result = run_bench(options)?;
    match csv {
        Some(path) => std::fs::write(path, result.csv())?,
        None => {
            for line in result.csv().lines() {
                ctx.emit_line(line)?;
            }
        }
    }
    for line in result.summary() {
        ctx.emit_line(&line)?;
    }
    Ok(EXIT_OK)
}

pub fn cmd_info(ctx: &Context, location: &str, raw: Option<&str>) -> Result<i32> {
    let loc = Location::file(location);
    let (format, image, pairs) = match raw {
        Some(spec) => {
            let spec: RawSpec = spec.parse()?;
            let ds = io::open_raw(ctx, &loc, &spec)?;
            let axes = ds.image.axes().to_vec();
            ("raw".to_string(), (axes, ds.image.pixel_type()), BTreeMap::new())
        }
        None => {
            let (format, meta) = io::inspect(ctx, &loc)?;
            (format.descriptor().id.clone(), (meta.axes.clone(), meta.pixel_type), meta.pairs)
        }
    };
    let (axes, pixel_type) = image;
    let dims: Vec<String> = axes.iter().map(|a| a.length.to_string()).collect();
    let labels: Vec<&str> = axes.iter().map(|a| a.kind.label()).collect();
    ctx.emit_line(&format!("format={format} dims={} type={pixel_type}", dims.join("x")))?;
    ctx.emit_line(&format!("axes={}", labels.join(",")))?;
    for (k, v) in pairs {
        ctx.emit_line(&format!("{k}={v}"))?;
    }
    Ok(EXIT_OK)
}
