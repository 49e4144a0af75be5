//! Fixtures shared by the integration test targets.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ndforge::updater::{self, LocalDirTransport};

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Runs the `ndforge` binary with preferences kept inside `prefs_dir`.
pub fn ndforge(prefs_dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ndforge"))
        .args(args)
        .env("NDFORGE_PREFS", prefs_dir.join("preferences"))
        .env_remove("RUST_LOG")
        .output()
        .expect("ndforge binary runs")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// The four-file updater fixture.
///
/// The site is published in two rounds: `a.txt` and `b.txt` at time 1000,
/// then a new `b.txt` plus `c.txt` at time 2000. The local installation
/// then holds `a.txt` as published (up to date), the first `b.txt` (old
/// version), an edited `c.txt` (locally modified) and `d.txt`, which no
/// site knows (untracked).
pub struct UpdaterFixture {
    pub _tmp: tempfile::TempDir,
    pub site: PathBuf,
    pub local: PathBuf,
}

pub fn write(root: &Path, rel: &str, text: &str) {
    let path = root.join(rel);
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    std::fs::write(path, text).unwrap();
}

pub fn updater_fixture() -> UpdaterFixture {
    let tmp = tempfile::TempDir::new().unwrap();
    let site = tmp.path().join("site");
    let staging = tmp.path().join("staging");
    let local = tmp.path().join("local");
    for dir in [&site, &staging, &local] {
        std::fs::create_dir_all(dir).unwrap();
    }
    let transport = LocalDirTransport::new(&site);

    write(&staging, "a.txt", "alpha 1\n");
    write(&staging, "b.txt", "beta 1\n");
    updater::publish_at(&staging, &["a.txt", "b.txt"], "fixture", &transport, 1000).unwrap();
    write(&staging, "b.txt", "beta 2\n");
    write(&staging, "c.txt", "gamma 1\n");
    updater::publish_at(&staging, &["a.txt", "b.txt", "c.txt"], "fixture", &transport, 2000).unwrap();

    write(&local, "a.txt", "alpha 1\n");
    write(&local, "b.txt", "beta 1\n");
    write(&local, "c.txt", "gamma 1, edited here\n");
    write(&local, "d.txt", "delta\n");
    UpdaterFixture { _tmp: tmp, site, local }
}
