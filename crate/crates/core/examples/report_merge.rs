//! Two runs over disjoint matcher sets merged into one table, and the
//! fingerprint check that refuses to mix configurations.

use cmbench::cli::report::{merge, read_report, to_table, OutputFormat};
use cmbench::cli::{cmd_eval_homography, report, CliError, RunConfig};
use cmbench::fixture::{write_bundle, BundleSpec, SimMatcher};
use cmbench::ingest::Task;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let mut paths = Vec::new();
    for (name, matchers) in [
        ("a", vec![SimMatcher::new("alpha", "sparse", 200, 0.5, 0.2)]),
        ("b", vec![SimMatcher::new("beta", "dense", 500, 1.0, 0.3)]),
    ] {
        let spec = BundleSpec {
            matchers,
            gate_pairs_per_class: 0,
            ..BundleSpec::default()
        };
        let bundle = write_bundle(&dir.path().join(name), &spec)?;
        let cfg = RunConfig::new(&bundle.homography_manifest, Task::Homography).with_matches(&bundle.matches_dir);
        let path = dir.path().join(format!("{name}.csv"));
        std::fs::write(&path, report::render(&cmd_eval_homography(&cfg)?, OutputFormat::Csv))?;
        paths.push(path);
    }

    let sets = paths.iter().map(|p| read_report(p)).collect::<Result<Vec<_>, _>>()?;
    print!("{}", to_table(&merge(sets.clone(), false)?));

    let mut tampered = sets[1].clone();
    tampered[0].fingerprint.push_str(";edited");
    match merge(vec![sets[0].clone(), tampered], false) {
        Err(CliError::FingerprintMismatch { .. }) => println!("mismatched fingerprints rejected"),
        other => panic!("expected a fingerprint mismatch, got {other:?}"),
    }
    Ok(())
}
