//! Homography task end to end: write a synthetic bundle, evaluate every
//! simulated matcher, print the table.

use cmbench::cli::{cmd_eval_homography, report, RunConfig};
use cmbench::fixture::{write_bundle, BundleSpec};
use cmbench::ingest::Task;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let bundle = write_bundle(dir.path(), &BundleSpec::default())?;

    let mut cfg = RunConfig::new(&bundle.homography_manifest, Task::Homography).with_matches(&bundle.matches_dir);
    cfg.workers = 4;
    let rows = cmd_eval_homography(&cfg)?;
    print!("{}", report::to_table(&rows));

    // Missing records count as failures, so the dense matcher, which skips
    // every fourth pair, cannot exceed a 75% success rate.
    let dense = rows.iter().find(|r| r.matcher_id == "sim-dense").expect("dense row");
    assert!(dense.success_rate <= 0.75);
    Ok(())
}
