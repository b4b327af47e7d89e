//! Relative pose from one synthetic two-view pair, then the scene-balanced
//! pose table over a bundle.

use cmbench::cli::{cmd_eval_pose, report, RunConfig};
use cmbench::estimate::{estimate_relative_pose, RansacConfig};
use cmbench::fixture::{pose_correspondences, pose_intrinsics, random_pose, write_bundle, BundleSpec, POSE_SIZE};
use cmbench::geometry::{pose_angular_error, rotation_angle_deg};
use cmbench::ingest::Task;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let k = pose_intrinsics();
    let gt = random_pose(&mut rng);
    let matches = pose_correspondences(&mut rng, &gt, &k, &k, POSE_SIZE, 200, 0.5, 0.25);

    let res = estimate_relative_pose(&matches, &k, &k, &RansacConfig::default());
    let est = res.model.expect("pose recovered");
    println!(
        "inliers {}/{}  rotation error {:.3}°  pose error {:.3}°",
        res.inlier_count,
        matches.len(),
        rotation_angle_deg(est.rotation(), gt.rotation()),
        pose_angular_error(&est, &gt)
    );

    let dir = tempfile::tempdir()?;
    let bundle = write_bundle(dir.path(), &BundleSpec::default())?;
    let cfg = RunConfig::new(&bundle.pose_manifest, Task::Pose).with_matches(&bundle.matches_dir);
    print!("{}", report::to_table(&cmd_eval_pose(&cfg)?));
    Ok(())
}
