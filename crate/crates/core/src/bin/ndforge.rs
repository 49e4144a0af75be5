use std::path::PathBuf;

use ndforge::{cli, Context};

/// `NDFORGE_PREFS`, else `~/.config/ndforge/preferences`.
fn preferences_path() -> Option<PathBuf> {
    if let Some(p) = std::env::var_os("NDFORGE_PREFS") {
        return Some(p.into());
    }
    let base = std::env::var_os("XDG_CONFIG_HOME")
        .map(PathBuf::from)
        .or_else(|| std::env::var_os("HOME").map(|h| PathBuf::from(h).join(".config")))?;
    Some(base.join("ndforge").join("preferences"))
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let ctx = Context::with_defaults();
    if let Some(path) = preferences_path() {
        if let Some(dir) = path.parent() {
            let _ = std::fs::create_dir_all(dir);
        }
        if let Err(e) = ctx.bind_preferences_file(&path) {
            log::warn!("preferences disabled: {}: {e}", path.display());
        }
    }
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let code = cli::execute(&ctx, &argv, &mut std::io::stderr());
    std::process::exit(code);
}
