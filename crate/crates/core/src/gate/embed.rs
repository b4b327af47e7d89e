//! Global image embeddings for the branch selector.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{EmbeddingVector, GateError};
use crate::ingest::{to_jsonl, write_atomic};
use crate::preprocess::GrayImage;

pub const EMBEDDING_SCHEMA: &str = "cmbench.embedding.v1";
pub const BUILTIN_PROVIDER: &str = "builtin-hog8x8";

/// Side length images are resized to before embedding.
pub const EMBED_SIZE: usize = 224;
pub const GRID: usize = 8;
pub const ORIENTATION_BINS: usize = 8;
/// Orientation bins plus luminance mean and standard deviation.
pub const FEATURES_PER_CELL: usize = ORIENTATION_BINS + 2;
pub const BUILTIN_DIM: usize = GRID * GRID * FEATURES_PER_CELL;

pub struct EmbedInput<'a> {
    pub image_id: &'a str,
    pub image: Option<&'a GrayImage>,
}

pub trait EmbeddingProvider: Send + Sync {
    fn id(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed(&self, input: &EmbedInput<'_>) -> Result<EmbeddingVector, GateError>;
}

/// Bilinear resize with pixel-center alignment and clamped borders.
pub fn resize_bilinear(img: &GrayImage, out_w: usize, out_h: usize) -> Vec<f64> {
    let (w, h) = (img.width(), img.height());
    let sx = w as f64 / out_w as f64;
    let sy = h as f64 / out_h as f64;
    let mut out = Vec::with_capacity(out_w * out_h);
    for y in 0..out_h {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let ty = fy - y0 as f64;
        for x in 0..out_w {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let tx = fx - x0 as f64;
            let top = img.get(x0, y0) as f64 * (1.0 - tx) + img.get(x1, y0) as f64 * tx;
            let bottom = img.get(x0, y1) as f64 * (1.0 - tx) + img.get(x1, y1) as f64 * tx;
            out.push(top * (1.0 - ty) + bottom * ty);
        }
    }
    out
}

/// Handcrafted default: on an 8x8 grid over the 224x224 resize, each cell
/// contributes a magnitude-weighted 8-bin gradient orientation histogram
/// (normalized by cell area) followed by the luminance mean and standard
/// deviation.
#[derive(Debug, Clone, Copy, Default)]
pub struct BuiltinProvider;

impl BuiltinProvider {
    pub fn describe(&self, img: &GrayImage) -> Vec<f64> {
        let n = EMBED_SIZE;
        let pix = resize_bilinear(img, n, n);
        let at = |x: isize, y: isize| {
            let xc = x.clamp(0, n as isize - 1) as usize;
            let yc = y.clamp(0, n as isize - 1) as usize;
            pix[yc * n + xc]
        };
        let mut magnitude = vec![0.0; n * n];
        let mut bin = vec![0usize; n * n];
        for y in 0..n as isize {
            for x in 0..n as isize {
                let gx = at(x + 1, y) - at(x - 1, y);
                let gy = at(x, y + 1) - at(x, y - 1);
                let i = y as usize * n + x as usize;
                magnitude[i] = gx.hypot(gy);
                bin[i] = orientation_bin(gy.atan2(gx));
            }
        }

        let cell = n / GRID;
        let area = (cell * cell) as f64;
        let mut out = Vec::with_capacity(BUILTIN_DIM);
        for cy in 0..GRID {
            for cx in 0..GRID {
                let mut hist = [0.0; ORIENTATION_BINS];
                let mut sum = 0.0;
                for y in cy * cell..(cy + 1) * cell {
                    for x in cx * cell..(cx + 1) * cell {
                        let i = y * n + x;
                        if magnitude[i] > 0.0 {
                            hist[bin[i]] += magnitude[i];
                        }
                        sum += pix[i];
                    }
                }
                let mean = sum / area;
                let mut var = 0.0;
                for y in cy * cell..(cy + 1) * cell {
                    for x in cx * cell..(cx + 1) * cell {
                        let d = pix[y * n + x] - mean;
                        var += d * d;
                    }
                }
                out.extend(hist.iter().map(|h| h / area));
                out.push(mean);
                out.push((var / area).sqrt());
            }
        }
        out
    }
}

/// Maps an angle in `[-π, π]` to one of the equal-width bins starting at `-π`.
pub fn orientation_bin(angle: f64) -> usize {
    let width = std::f64::consts::TAU / ORIENTATION_BINS as f64;
    (((angle + std::f64::consts::PI) / width).floor() as usize).min(ORIENTATION_BINS - 1)
}

impl EmbeddingProvider for BuiltinProvider {
    fn id(&self) -> &str {
        BUILTIN_PROVIDER
    }

    fn dim(&self) -> usize {
        BUILTIN_DIM
    }

    fn embed(&self, input: &EmbedInput<'_>) -> Result<EmbeddingVector, GateError> {
        let img = input
            .image
            .ok_or_else(|| GateError::MissingImage(input.image_id.to_string()))?;
        if img.is_empty() {
            return Err(GateError::MissingImage(input.image_id.to_string()));
        }
        EmbeddingVector::new(self.describe(img))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub schema: String,
    pub image_id: String,
    pub provider: String,
    pub dim: usize,
    pub values: Vec<f64>,
}

/// Precomputed embeddings, e.g. exported from a neural backbone.
#[derive(Debug, Clone)]
pub struct ExternalProvider {
    id: String,
    dim: usize,
    vectors: HashMap<String, EmbeddingVector>,
}

impl ExternalProvider {
    pub fn parse(bytes: &[u8], file: &str) -> Result<Self, GateError> {
        let text = std::str::from_utf8(bytes).map_err(|e| GateError::EmbeddingFile {
            file: file.to_string(),
            line: 0,
            message: e.to_string(),
        })?;
        let mut id: Option<String> = None;
        let mut dim: Option<usize> = None;
        let mut vectors = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: String| GateError::EmbeddingFile {
                file: file.to_string(),
                line: i + 1,
                message,
            };
            let rec: EmbeddingRecord = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
            if rec.schema != EMBEDDING_SCHEMA {
                return Err(err(format!("unexpected schema `{}`", rec.schema)));
            }
            if rec.values.len() != rec.dim {
                return Err(GateError::DimensionMismatch {
                    expected: rec.dim,
                    got: rec.values.len(),
                });
            }
            match (&id, dim) {
                (Some(p), Some(d)) => {
                    if *p != rec.provider {
                        return Err(err(format!("mixed providers `{p}` and `{}`", rec.provider)));
                    }
                    if d != rec.dim {
                        return Err(GateError::DimensionMismatch {
                            expected: d,
                            got: rec.dim,
                        });
                    }
                }
                _ => {
                    id = Some(rec.provider.clone());
                    dim = Some(rec.dim);
                }
            }
            let v = EmbeddingVector::new(rec.values).map_err(|e| err(e.to_string()))?;
            if vectors.insert(rec.image_id.clone(), v).is_some() {
                return Err(err(format!("duplicate image id `{}`", rec.image_id)));
            }
        }
        Ok(Self {
            id: id.unwrap_or_else(|| "external".into()),
            dim: dim.unwrap_or(0),
            vectors,
        })
    }

    pub fn load(path: &Path) -> Result<Self, GateError> {
        let bytes = fs::read(path).map_err(|e| GateError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&bytes, &path.display().to_string())
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

impl EmbeddingProvider for ExternalProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, input: &EmbedInput<'_>) -> Result<EmbeddingVector, GateError> {
        self.vectors
            .get(input.image_id)
            .cloned()
            .ok_or_else(|| GateError::UnknownImage(input.image_id.to_string()))
    }
}

pub fn embeddings_to_jsonl(provider: &str, items: &[(String, EmbeddingVector)]) -> String {
    let records: Vec<EmbeddingRecord> = items
        .iter()
        .map(|(id, v)| EmbeddingRecord {
            schema: EMBEDDING_SCHEMA.into(),
            image_id: id.clone(),
            provider: provider.into(),
            dim: v.dim(),
            values: v.values().to_vec(),
        })
        .collect();
    to_jsonl(&records)
}

/// Registered providers addressed by id.
pub struct ProviderRegistry {
    providers: Vec<Box<dyn EmbeddingProvider>>,
}

impl Default for ProviderRegistry {
    fn default() -> Self {
        Self {
            providers: vec![Box::new(BuiltinProvider)],
        }
    }
}

impl ProviderRegistry {
    pub fn register(&mut self, provider: Box<dyn EmbeddingProvider>) {
        self.providers.retain(|p| p.id() != provider.id());
        self.providers.push(provider);
    }

    pub fn get(&self, id: &str) -> Result<&dyn EmbeddingProvider, GateError> {
        self.providers
            .iter()
            .find(|p| p.id() == id)
            .map(|p| p.as_ref())
            .ok_or_else(|| GateError::UnknownProvider(id.to_string()))
    }
}

/// Embeds one image through the named provider.
pub fn embed(registry: &ProviderRegistry, provider: &str, input: &EmbedInput<'_>) -> Result<EmbeddingVector, GateError> {
    let p = registry.get(provider)?;
    let v = p.embed(input)?;
    if v.dim() != p.dim() {
        return Err(GateError::DimensionMismatch {
            expected: p.dim(),
            got: v.dim(),
        });
    }
    Ok(v)
}

/// On-disk cache of computed embeddings keyed by provider and image bytes.
#[derive(Debug, Clone)]
pub struct EmbeddingCache {
    dir: PathBuf,
}

impl EmbeddingCache {
    pub const ENV_VAR: &'static str = "CMBENCH_CACHE_DIR";

    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn from_env() -> Option<Self> {
        std::env::var_os(Self::ENV_VAR)
            .filter(|v| !v.is_empty())
            .map(|v| Self::new(PathBuf::from(v)))
    }

    pub fn key(provider: &str, image: &GrayImage) -> String {
        let mut hasher = Sha256::new();
        hasher.update(provider.as_bytes());
        hasher.update((image.width() as u64).to_le_bytes());
        hasher.update((image.height() as u64).to_le_bytes());
        hasher.update(image.data());
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.jsonl"))
    }

    pub fn get(&self, key: &str) -> Option<EmbeddingVector> {
        let bytes = fs::read(self.path(key)).ok()?;
        let p = ExternalProvider::parse(&bytes, key).ok()?;
        p.vectors.get(key).cloned()
    }

    pub fn put(&self, provider: &str, key: &str, v: &EmbeddingVector) -> Result<(), GateError> {
        let text = embeddings_to_jsonl(provider, &[(key.to_string(), v.clone())]);
        write_atomic(&self.path(key), text.as_bytes()).map_err(|e| GateError::Io(e.to_string()))
    }
}
