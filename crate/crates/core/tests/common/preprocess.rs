use cmbench::preprocess::{apply_branch, apply_single, BranchId, GrayImage, PreprocessParams};
use rand::Rng;
use rayon::prelude::*;

use super::{rng, Outcome};

/// Mirror reflection without repeating the edge pixel: -1 -> 0, n -> n-1.
pub fn mirror(mut i: isize, n: usize) -> usize {
    let n = n as isize;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - 1 - i;
        } else {
            return i as usize;
        }
    }
}

fn px(img: &GrayImage, x: isize, y: isize) -> f64 {
    img.data()[mirror(y, img.height()) * img.width() + mirror(x, img.width())] as f64
}

fn byte(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

pub fn random_image(r: &mut impl Rng, w: usize, h: usize) -> GrayImage {
    let smooth = r.random_bool(0.5);
    let (a, b) = (r.random_range(-8.0..8.0), r.random_range(-8.0..8.0));
    GrayImage::from_fn(w, h, |x, y| {
        if smooth {
            byte(128.0 + a * x as f64 + b * y as f64 + r.random_range(-20.0..20.0))
        } else {
            r.random()
        }
    })
}

/// Direct 2-D convolution with the outer-product Gaussian.
pub fn unsharp_oracle(img: &GrayImage, sigma: f64, amount: f64) -> Vec<u8> {
    let rad = (3.0 * sigma).ceil() as isize;
    let g: Vec<f64> = (-rad..=rad).map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = g.iter().sum();
    let mut out = Vec::new();
    for y in 0..img.height() as isize {
        for x in 0..img.width() as isize {
            let mut blur = 0.0;
            for dy in -rad..=rad {
                for dx in -rad..=rad {
                    let wgt = g[(dy + rad) as usize] / norm * (g[(dx + rad) as usize] / norm);
                    blur += wgt * px(img, x + dx, y + dy);
                }
            }
            let p = px(img, x, y);
            out.push(byte(p + amount * (p - blur)));
        }
    }
    out
}

/// Scharr magnitude, then mean and standard deviation computed directly over
/// each window, then min-max rescaling.
pub fn scharr_lcn_oracle(img: &GrayImage, window: usize, eps: f64) -> Vec<u8> {
    let (w, h) = (img.width(), img.height());
    let kx = [[-3.0, 0.0, 3.0], [-10.0, 0.0, 10.0], [-3.0, 0.0, 3.0]];
    let mut mag = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let (mut gx, mut gy) = (0.0, 0.0);
            for j in 0..3 {
                for i in 0..3 {
                    let v = px(img, x + i as isize - 1, y + j as isize - 1);
                    gx += kx[j][i] * v;
                    gy += kx[i][j] * v;
                }
            }
            mag[y as usize * w + x as usize] = (gx * gx + gy * gy).sqrt();
        }
    }
    let half = (window / 2) as isize;
    let mut norm = Vec::with_capacity(w * h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let vals: Vec<f64> = (-half..=half)
                .flat_map(|dy| (-half..=half).map(move |dx| (dx, dy)))
                .map(|(dx, dy)| mag[mirror(y + dy, h) * w + mirror(x + dx, w)])
                .collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            norm.push((mag[y as usize * w + x as usize] - mean) / (std + eps));
        }
    }
    let lo = norm.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = norm.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 1e-12 {
        return vec![128; w * h];
    }
    norm.iter().map(|v| byte((v - lo) / (hi - lo) * 255.0)).collect()
}

pub fn morph_oracle(img: &GrayImage, radius: usize) -> Vec<u8> {
    let r = radius as isize;
    let mut out = Vec::new();
    for y in 0..img.height() as isize {
        for x in 0..img.width() as isize {
            let mut lo = 255.0f64;
            let mut hi = 0.0f64;
            for dy in -r..=r {
                for dx in -r..=r {
                    let v = px(img, x + dx, y + dy);
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
            }
            out.push((hi - lo) as u8);
        }
    }
    out
}

pub fn branch_oracles() -> Outcome {
    let params = PreprocessParams::default();
    let mut r = rng(16);
    let (mut unsharp_bad, mut lcn_worst, mut morph_bad, mut none_bad) = (0, 0i32, 0, 0);
    for _ in 0..200 {
        let img = random_image(&mut r, 16, 16);
        let run = |b| apply_single(b, &img, &params).unwrap();
        if run(BranchId::None) != img {
            none_bad += 1;
        }
        if run(BranchId::Unsharp).data() != unsharp_oracle(&img, params.unsharp_sigma, params.unsharp_amount) {
            unsharp_bad += 1;
        }
        let lcn = run(BranchId::ScharrLcn);
        let oracle = scharr_lcn_oracle(&img, params.lcn_window, params.lcn_epsilon);
        for (a, b) in lcn.data().iter().zip(&oracle) {
            lcn_worst = lcn_worst.max((*a as i32 - *b as i32).abs());
        }
        if run(BranchId::MorphGradient).data() != morph_oracle(&img, params.morph_radius) {
            morph_bad += 1;
        }
    }
    Outcome::new(
        unsharp_bad == 0 && morph_bad == 0 && none_bad == 0 && lcn_worst <= 1,
        format!(
            "200 images 16x16: unsharp mismatches {unsharp_bad}, morph mismatches {morph_bad}, \
             none mismatches {none_bad}, max Scharr+LCN deviation {lcn_worst} level(s)"
        ),
    )
}

pub fn run_in_pool(workers: usize, images: &[(GrayImage, GrayImage)]) -> Vec<Vec<u8>> {
    let params = PreprocessParams::default();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build().unwrap();
    pool.install(|| {
        images
            .par_iter()
            .flat_map_iter(|(ir, vis)| {
                BranchId::ALL.map(|b| {
                    let (a, c) = apply_branch(b, ir, vis, &params).unwrap();
                    [a.data(), c.data()].concat()
                })
            })
            .collect()
    })
}

pub fn worker_reproducibility() -> Outcome {
    let mut r = rng(17);
    let images: Vec<(GrayImage, GrayImage)> = (0..48)
        .map(|_| (random_image(&mut r, 40, 30), random_image(&mut r, 40, 30)))
        .collect();
    let one = run_in_pool(1, &images);
    let eight = run_in_pool(8, &images);
    Outcome::new(one == eight, format!("{} branch outputs identical across 1 and 8 workers: {}", one.len(), one == eight))
}
