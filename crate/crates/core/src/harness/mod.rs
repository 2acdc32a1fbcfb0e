//! Config-driven experiment orchestration behind the `rr` binary.
//!
//! A study directory looks like:
//!
//! ```text
//! out/
//!   config.json          study config as run
//!   data/seed-S/         generated splits (synthetic sources)
//!   runs/SLUG/seed-S/    run.json, history.json, model.json, group stats
//!   results.csv          one row per completed run
//!   winners.csv          selected grid point per (method, seed)
//!   failures.json        grid points that errored
//!   select/, report/     concordance and result tables
//!   manifest.json        every file above with its size
//! ```
//!
//! Every table is regenerated from the stored `run.json` files, so re-running
//! a command is idempotent.

mod config;
mod report;
mod run;

pub use config::{DatasetSource, ExperimentConfig, MethodGrid};
pub use report::{build_report, cell, cmd_report, cmd_select, MethodSummary, Report, SelectionStudy};
pub use run::{
    load_records, run_dir, run_point, run_study, select_winners, split_paths, FailedPoint, RunRecord, SplitResult,
    StudyData, StudySummary, Winner,
};

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::json;

pub const MANIFEST: &str = "manifest.json";

pub(crate) fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

#[derive(Serialize)]
struct ManifestEntry {
    path: String,
    bytes: u64,
}

#[derive(Serialize)]
struct Manifest {
    format_version: u32,
    files: Vec<ManifestEntry>,
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else if path != root.join(MANIFEST) {
            out.push(path);
        }
    }
    Ok(())
}

/// Rewrite `out/manifest.json` listing every artifact under `out`.
pub fn write_manifest(out: &Path) -> Result<()> {
    let mut files = Vec::new();
    collect_files(out, out, &mut files)?;
    let mut entries: Vec<ManifestEntry> = files
        .iter()
        .map(|p| {
            let bytes = std::fs::metadata(p).map_err(|e| Error::io(p, e))?.len();
            let rel = p.strip_prefix(out).expect("under out");
            let path = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
            Ok(ManifestEntry { path, bytes })
        })
        .collect::<Result<_>>()?;
    entries.sort_by(|a, b| a.path.cmp(&b.path));
    json::write_file(
        &out.join(MANIFEST),
        &Manifest {
            format_version: 1,
            files: entries,
        },
        true,
    )
}

/// Generate the three splits of a synthetic setting into `out`.
pub fn cmd_gen(setting: u32, counts: [usize; 3], q: usize, seed: u64, out: &Path) -> Result<[PathBuf; 3]> {
    if counts.contains(&0) || q == 0 {
        return Err(Error::config("group counts and q must be positive"));
    }
    let data = StudyData::generate(setting, counts, q, seed)?;
    data.write_dir(out)?;
    write_manifest(out)?;
    Ok(split_paths(out))
}
