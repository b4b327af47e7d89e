//! Renders the four preprocessing branches for one image.
//!
//! Usage: `preprocess_branches [input.png] [out_dir]`. Without arguments a
//! synthetic thermal-like texture is used and results go to a temp dir.

use std::path::PathBuf;

use cmbench::fixture::class_texture;
use cmbench::preprocess::{apply_single, BranchId, GrayImage, PreprocessParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let img = match args.next() {
        Some(p) => GrayImage::open(&PathBuf::from(p))?,
        None => class_texture(3, &mut ChaCha8Rng::seed_from_u64(0), true),
    };
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("cmbench-branches"));
    std::fs::create_dir_all(&out)?;

    let params = PreprocessParams::default();
    for branch in BranchId::ALL {
        let res = apply_single(branch, &img, &params)?;
        let (lo, hi) = res.data().iter().fold((255u8, 0u8), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let path = out.join(format!("{}_{}.png", branch.code(), branch.name()));
        res.save_png(&path)?;
        println!("{:<16} range [{lo:3}, {hi:3}]  -> {}", branch.name(), path.display());
    }
    Ok(())
}
