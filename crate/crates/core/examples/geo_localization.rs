//! Thermal-to-satellite localization on the base and hard protocols, plus
//! the per-pair error for a single hand-made annotation.

use cmbench::cli::{cmd_eval_geo, report, RunConfig};
use cmbench::fixture::{geo_annotation, geo_homography, write_bundle, BundleSpec};
use cmbench::ingest::Task;
use cmbench::metrics::geo_error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Satellite points planted 8 px (4 m at 0.5 m/px) right of the truth.
    let h = geo_homography(&mut ChaCha8Rng::seed_from_u64(1), false);
    let ann = geo_annotation("demo", &h, (8.0, 0.0));
    println!("planted error: {:.3} m", geo_error(&h, &ann)?);

    let dir = tempfile::tempdir()?;
    let bundle = write_bundle(dir.path(), &BundleSpec::default())?;
    for task in [Task::Geo, Task::GeoHard] {
        let cfg = RunConfig::new(&bundle.geo_manifest, task).with_matches(&bundle.matches_dir);
        println!("\n[{task}]");
        print!("{}", report::to_table(&cmd_eval_geo(&cfg)?));
    }
    Ok(())
}
