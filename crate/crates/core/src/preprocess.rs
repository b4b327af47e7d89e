//! The four enhancement branches of the adaptive front-end.
//!
//! All branches work on 8-bit luminance, use symmetric reflection at the
//! borders (`-1 → 0`, `-2 → 1`, ...), and round half away from zero, so
//! every output is byte-reproducible.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("pixel buffer has {got} bytes, expected {width}x{height}")]
    SizeMismatch { width: usize, height: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("unknown branch code {0}")]
    UnknownBranch(u8),
    #[error("image {path}: {source}")]
    Image {
        path: String,
        #[source]
        source: image::ImageError,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, PreprocessError> {
        if data.len() != width * height {
            return Err(PreprocessError::SizeMismatch {
                width,
                height,
                got: data.len(),
            });
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    /// Pixel at a possibly out-of-range position, reflected into the image.
    pub fn get_reflected(&self, x: isize, y: isize) -> u8 {
        self.get(reflect(x, self.width), reflect(y, self.height))
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Loads PNG or TIFF; color input is reduced with BT.601 weights.
    pub fn open(path: &Path) -> Result<Self, PreprocessError> {
        let img = image::open(path).map_err(|source| PreprocessError::Image {
            path: path.display().to_string(),
            source,
        })?;
        Ok(Self::from_dynamic(&img))
    }

    pub fn from_dynamic(img: &image::DynamicImage) -> Self {
        match img {
            image::DynamicImage::ImageLuma8(g) => Self {
                width: g.width() as usize,
                height: g.height() as usize,
                data: g.as_raw().clone(),
            },
            other => {
                let rgb = other.to_rgb8();
                let data = rgb
                    .pixels()
                    .map(|p| luminance_bt601(p.0[0], p.0[1], p.0[2]))
                    .collect();
                Self {
                    width: rgb.width() as usize,
                    height: rgb.height() as usize,
                    data,
                }
            }
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<(), PreprocessError> {
        let buf = image::GrayImage::from_raw(self.width as u32, self.height as u32, self.data.clone())
            .expect("buffer length checked at construction");
        buf.save_with_format(path, image::ImageFormat::Png)
            .map_err(|source| PreprocessError::Image {
                path: path.display().to_string(),
                source,
            })
    }
}

pub fn luminance_bt601(r: u8, g: u8, b: u8) -> u8 {
    to_byte(0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64)
}

/// Symmetric reflection of an index into `[0, n)`.
pub fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m >= n { period - 1 - m } else { m }) as usize
}

/// Clamps to [0, 255] after rounding half away from zero.
fn to_byte(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum BranchId {
    None = 0,
    Unsharp = 1,
    ScharrLcn = 2,
    MorphGradient = 3,
}

impl BranchId {
    /// All branches in code order, which is also the class order of the gate.
    pub const ALL: [BranchId; 4] = [
        BranchId::None,
        BranchId::Unsharp,
        BranchId::ScharrLcn,
        BranchId::MorphGradient,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_code(code: u8) -> Result<Self, PreprocessError> {
        Self::ALL
            .get(code as usize)
            .copied()
            .ok_or(PreprocessError::UnknownBranch(code))
    }

    pub fn name(self) -> &'static str {
        match self {
            BranchId::None => "none",
            BranchId::Unsharp => "unsharp",
            BranchId::ScharrLcn => "scharr_lcn",
            BranchId::MorphGradient => "morph_gradient",
        }
    }
}

impl TryFrom<u8> for BranchId {
    type Error = PreprocessError;

    fn try_from(code: u8) -> Result<Self, Self::Error> {
        Self::from_code(code)
    }
}

impl From<BranchId> for u8 {
    fn from(b: BranchId) -> u8 {
        b.code()
    }
}

impl fmt::Display for BranchId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessParams {
    pub unsharp_sigma: f64,
    pub unsharp_amount: f64,
    pub lcn_window: usize,
    pub lcn_epsilon: f64,
    pub morph_radius: usize,
}

impl Default for PreprocessParams {
    fn default() -> Self {
        Self {
            unsharp_sigma: 1.5,
            unsharp_amount: 1.0,
            lcn_window: 15,
            lcn_epsilon: 1.0,
            morph_radius: 1,
        }
    }
}

impl PreprocessParams {
    pub fn validate(&self) -> Result<(), PreprocessError> {
        if !(self.unsharp_sigma > 0.0 && self.unsharp_sigma.is_finite()) {
            return Err(PreprocessError::InvalidParameter(format!(
                "unsharp sigma {}",
                self.unsharp_sigma
            )));
        }
        if self.lcn_window < 3 || self.lcn_window % 2 == 0 {
            return Err(PreprocessError::InvalidParameter(format!(
                "LCN window {} must be odd and at least 3",
                self.lcn_window
            )));
        }
        if !(self.lcn_epsilon > 0.0) {
            return Err(PreprocessError::InvalidParameter("LCN epsilon must be positive".into()));
        }
        if self.morph_radius == 0 {
            return Err(PreprocessError::InvalidParameter("morphology radius is zero".into()));
        }
        Ok(())
    }
}

pub fn branch_none(img: &GrayImage) -> GrayImage {
    img.clone()
}

/// Normalized Gaussian taps for offsets `-r..=r`, `r = ceil(3σ)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable Gaussian blur in floating point.
pub fn gaussian_blur(img: &GrayImage, sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (w, h) = (img.width, img.height);
    let mut rows = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            rows[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * img.get(reflect(x as isize + i as isize - r, w), y) as f64)
                .sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * rows[reflect(y as isize + i as isize - r, h) * w + x])
                .sum();
        }
    }
    out
}

/// `img + amount · (img − blur(img))`.
pub fn branch_unsharp(img: &GrayImage, sigma: f64, amount: f64) -> Result<GrayImage, PreprocessError> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(PreprocessError::InvalidParameter(format!("sigma {sigma}")));
    }
    let blur = gaussian_blur(img, sigma);
    let data = img
        .data
        .iter()
        .zip(&blur)
        .map(|(&p, &b)| {
            let p = p as f64;
            to_byte(p + amount * (p - b))
        })
        .collect();
    Ok(GrayImage {
        width: img.width,
        height: img.height,
        data,
    })
}

const SCHARR_X: [[f64; 3]; 3] = [[-3.0, 0.0, 3.0], [-10.0, 0.0, 10.0], [-3.0, 0.0, 3.0]];

/// Scharr gradient magnitude with reflected borders.
pub fn scharr_magnitude(img: &GrayImage) -> Vec<f64> {
    let (w, h) = (img.width, img.height);
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut gx = 0.0;
            let mut gy = 0.0;
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let v = img.get_reflected(x + dx, y + dy) as f64;
                    gx += SCHARR_X[(dy + 1) as usize][(dx + 1) as usize] * v;
                    gy += SCHARR_X[(dx + 1) as usize][(dy + 1) as usize] * v;
                }
            }
            out.push((gx * gx + gy * gy).sqrt());
        }
    }
    out
}

/// Summed-area table over a reflection-padded copy of `values`.
struct PaddedIntegral {
    stride: usize,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
}

impl PaddedIntegral {
    fn new(values: &[f64], w: usize, h: usize, pad: usize) -> Self {
        let pw = w + 2 * pad;
        let ph = h + 2 * pad;
        let stride = pw + 1;
        let mut sum = vec![0.0; stride * (ph + 1)];
        let mut sum_sq = vec![0.0; stride * (ph + 1)];
        for py in 0..ph {
            let sy = reflect(py as isize - pad as isize, h);
            let mut row = 0.0;
            let mut row_sq = 0.0;
            for px in 0..pw {
                let sx = reflect(px as isize - pad as isize, w);
                let v = values[sy * w + sx];
                row += v;
                row_sq += v * v;
                sum[(py + 1) * stride + px + 1] = sum[py * stride + px + 1] + row;
                sum_sq[(py + 1) * stride + px + 1] = sum_sq[py * stride + px + 1] + row_sq;
            }
        }
        Self { stride, sum, sum_sq }
    }

    /// Sums over the padded-coordinate box `[x0, x1) x [y0, y1)`.
    fn box_sums(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> (f64, f64) {
        let at = |t: &[f64], x: usize, y: usize| t[y * self.stride + x];
        let s = at(&self.sum, x1, y1) - at(&self.sum, x0, y1) - at(&self.sum, x1, y0)
            + at(&self.sum, x0, y0);
        let q = at(&self.sum_sq, x1, y1) - at(&self.sum_sq, x0, y1) - at(&self.sum_sq, x1, y0)
            + at(&self.sum_sq, x0, y0);
        (s, q)
    }
}

/// Affine map of the value range onto [0, 255]; a flat input maps to 128.
fn rescale_to_bytes(values: &[f64]) -> Vec<u8> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    if !(range > 1e-12) {
        return vec![128; values.len()];
    }
    values.iter().map(|&v| to_byte((v - lo) / range * 255.0)).collect()
}

/// Scharr gradient magnitude followed by local contrast normalization
/// `(m − mean) / (std + ε)` over a square window, then rescaled to 8 bits.
pub fn branch_scharr_lcn(img: &GrayImage, window: usize, epsilon: f64) -> Result<GrayImage, PreprocessError> {
    if window < 3 || window % 2 == 0 {
        return Err(PreprocessError::InvalidParameter(format!(
            "LCN window {window} must be odd and at least 3"
        )));
    }
    let (w, h) = (img.width, img.height);
    if img.is_empty() {
        return Ok(img.clone());
    }
    let m = scharr_magnitude(img);
    let half = window / 2;
    let integral = PaddedIntegral::new(&m, w, h, half);
    let n = (window * window) as f64;
    let mut normalized = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            // Pixel (x, y) sits at (x + half, y + half) in padded coordinates.
            let (s, q) = integral.box_sums(x, y, x + window, y + window);
            let mean = s / n;
            let var = (q / n - mean * mean).max(0.0);
            normalized.push((m[y * w + x] - mean) / (var.sqrt() + epsilon));
        }
    }
    Ok(GrayImage {
        width: w,
        height: h,
        data: rescale_to_bytes(&normalized),
    })
}

fn window_extreme(img: &GrayImage, radius: usize, take_max: bool) -> Vec<u8> {
    let (w, h) = (img.width, img.height);
    let r = radius as isize;
    let pick = |a: u8, b: u8| if take_max { a.max(b) } else { a.min(b) };
    let init = if take_max { u8::MIN } else { u8::MAX };
    let mut rows = vec![0u8; w * h];
    for y in 0..h {
        for x in 0..w {
            rows[y * w + x] = (-r..=r)
                .map(|d| img.get(reflect(x as isize + d, w), y))
                .fold(init, pick);
        }
    }
    let mut out = vec![0u8; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = (-r..=r)
                .map(|d| rows[reflect(y as isize + d, h) * w + x])
                .fold(init, pick);
        }
    }
    out
}

/// Dilation minus erosion with a `(2r+1)²` square structuring element.
pub fn branch_morph_gradient(img: &GrayImage, radius: usize) -> Result<GrayImage, PreprocessError> {
    if radius == 0 {
        return Err(PreprocessError::InvalidParameter("radius must be at least 1".into()));
    }
    let dilated = window_extreme(img, radius, true);
    let eroded = window_extreme(img, radius, false);
    Ok(GrayImage {
        width: img.width,
        height: img.height,
        data: dilated.iter().zip(&eroded).map(|(d, e)| d - e).collect(),
    })
}

pub fn apply_single(branch: BranchId, img: &GrayImage, params: &PreprocessParams) -> Result<GrayImage, PreprocessError> {
    params.validate()?;
    match branch {
        BranchId::None => Ok(branch_none(img)),
        BranchId::Unsharp => branch_unsharp(img, params.unsharp_sigma, params.unsharp_amount),
        BranchId::ScharrLcn => branch_scharr_lcn(img, params.lcn_window, params.lcn_epsilon),
        BranchId::MorphGradient => branch_morph_gradient(img, params.morph_radius),
    }
}

/// Applies the same branch with the same parameters to both modalities.
pub fn apply_branch(
    branch: BranchId,
    ir: &GrayImage,
    vis: &GrayImage,
    params: &PreprocessParams,
) -> Result<(GrayImage, GrayImage), PreprocessError> {
    Ok((apply_single(branch, ir, params)?, apply_single(branch, vis, params)?))
}
