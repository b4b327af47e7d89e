//! Samples random homographies, shows their parameters and overlap, and
//! writes a manifest the way `cmbench synth-pairs` does.

use cmbench::cli::{cmd_synth_pairs, SynthPairsConfig};
use cmbench::synth::{decompose, sample_homography, HomographySamplerParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let params = HomographySamplerParams::default();
    for seed in 0..5 {
        let pair = sample_homography(seed, 640, 480, &params)?;
        let p = decompose(&pair.ground_truth, 640.0, 480.0).expect("sampled transforms decompose");
        println!(
            "seed {seed}: scale {:.3} rot {:+6.2}° persp ({:+.3}, {:+.3}) shift ({:+.3}, {:+.3})  overlap {:.3}  draws {}",
            p.scale, p.rotation_deg, p.perspective[0], p.perspective[1], p.translation[0], p.translation[1], pair.overlap, pair.draws
        );
    }

    let dir = tempfile::tempdir()?;
    let mut cfg = SynthPairsConfig::new(dir.path().join("pairs.jsonl"), 100);
    cfg.seed = 42;
    let pairs = cmd_synth_pairs(&cfg)?;
    println!("wrote {} pairs to {}", pairs.len(), cfg.out.display());
    Ok(())
}
