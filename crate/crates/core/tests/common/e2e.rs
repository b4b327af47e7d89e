use std::path::{Path, PathBuf};

use cmbench::fixture::{write_bundle, Bundle, BundleSpec};
use tempfile::TempDir;

use super::Outcome;

/// The default synthetic bundle written into a fresh temporary directory.
pub fn bundle() -> (TempDir, Bundle) {
    let dir = tempfile::tempdir().unwrap();
    let b = write_bundle(dir.path(), &BundleSpec::default()).unwrap();
    (dir, b)
}

pub fn cli(args: &[&str]) -> i32 {
    cmbench::cli::run(std::iter::once("cmbench").chain(args.iter().copied()))
}

pub fn path(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

/// Runs one evaluation command and returns the CSV it wrote.
pub fn eval_csv(command: &str, manifest: &Path, matches: &Path, workers: usize, out: &Path) -> Result<Vec<u8>, String> {
    let workers = workers.to_string();
    let code = cli(&[
        command,
        "--manifest",
        path(manifest),
        "--matches-dir",
        path(matches),
        "--workers",
        &workers,
        "--out",
        path(out),
    ]);
    if code != 0 {
        return Err(format!("{command} exited with {code}"));
    }
    std::fs::read(out).map_err(|e| e.to_string())
}

pub fn reports(b: &Bundle, workers: usize, out_dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut out = Vec::new();
    for (cmd, manifest) in [
        ("eval-homography", &b.homography_manifest),
        ("eval-pose", &b.pose_manifest),
        ("eval-geo", &b.geo_manifest),
    ] {
        let file: PathBuf = out_dir.join(format!("{cmd}-w{workers}.csv"));
        out.push((cmd.to_string(), eval_csv(cmd, manifest, &b.matches_dir, workers, &file)?));
    }
    Ok(out)
}

pub fn determinism() -> Outcome {
    let (_a, first) = bundle();
    let (_b, second) = bundle();
    let out = tempfile::tempdir().unwrap();
    let runs = (|| -> Result<_, String> {
        let one = reports(&first, 1, &out.path().join("a"))?;
        let again = reports(&second, 1, &out.path().join("b"))?;
        let eight = reports(&first, 8, &out.path().join("c"))?;
        Ok((one, again, eight))
    })();
    match runs {
        Err(e) => Outcome::new(false, e),
        Ok((one, again, eight)) => {
            let nonempty = one.iter().all(|(_, csv)| csv.len() > 100);
            let same_runs = one == again;
            let same_workers = one == eight;
            Outcome::new(
                nonempty && same_runs && same_workers,
                format!(
                    "homography/pose/geo CSVs: identical across runs {same_runs}, across --workers 1 vs 8 {same_workers}"
                ),
            )
        }
    }
}
