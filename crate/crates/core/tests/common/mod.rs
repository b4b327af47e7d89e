//! Independent oracles shared by the integration tests and the acceptance
//! harness. Nothing here calls the code under test to compute an expectation.
#![allow(dead_code)]

pub mod e2e;
pub mod estimation;
pub mod gate;
pub mod ingest;
pub mod metrics;
pub mod preprocess;
pub mod sampler;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

impl Outcome {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }

    /// Conjunction of several sub-checks; details are joined with `; `.
    pub fn all(parts: Vec<Outcome>) -> Self {
        let pass = parts.iter().all(|p| p.pass);
        let detail = parts.into_iter().map(|p| p.detail).collect::<Vec<_>>().join("; ");
        Self { pass, detail }
    }

    #[track_caller]
    pub fn assert(&self) {
        assert!(self.pass, "{}", self.detail);
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
