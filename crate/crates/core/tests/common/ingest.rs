use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use cmbench::gate::embed::{embeddings_to_jsonl, EmbeddingRecord};
use cmbench::gate::{EmbeddingVector, ExternalProvider, GateModel};
use cmbench::ingest::{matches_to_jsonl, parse_geo_annotation, parse_manifest, parse_matches, to_jsonl};
use rand::Rng;

use super::{rng, Outcome};

pub fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden").join(name)
}

pub fn read_golden(name: &str) -> Vec<u8> {
    std::fs::read(golden(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

/// Parses a golden file and serializes it again; `Ok(true)` when the bytes
/// are unchanged.
pub fn round_trip(name: &str) -> Result<bool, String> {
    let bytes = read_golden(name);
    let again = match name {
        "manifest.jsonl" => to_jsonl(&parse_manifest(&bytes, name).map_err(|e| e.to_string())?),
        "matches.jsonl" => {
            let file = parse_matches(&bytes, 2048, name);
            if !file.quarantine.is_empty() {
                return Err(format!("{} record(s) quarantined", file.quarantine.len()));
            }
            matches_to_jsonl(&file.records)
        }
        "geo.jsonl" => parse_geo_annotation(&bytes, name).map_err(|e| e.to_string())?.to_jsonl(),
        "embeddings.jsonl" => {
            ExternalProvider::parse(&bytes, name).map_err(|e| e.to_string())?;
            let text = String::from_utf8(bytes.clone()).map_err(|e| e.to_string())?;
            let records: Vec<EmbeddingRecord> = text
                .lines()
                .map(|l| serde_json::from_str(l).map_err(|e| e.to_string()))
                .collect::<Result<_, _>>()?;
            let provider = records.first().map(|r| r.provider.clone()).unwrap_or_default();
            let items: Vec<(String, EmbeddingVector)> = records
                .into_iter()
                .map(|r| (r.image_id, EmbeddingVector::new(r.values).unwrap()))
                .collect();
            embeddings_to_jsonl(&provider, &items)
        }
        "model.json" => {
            let text = std::str::from_utf8(&bytes).map_err(|e| e.to_string())?;
            GateModel::from_json(text).map_err(|e| e.to_string())?.to_json()
        }
        other => return Err(format!("unknown golden file {other}")),
    };
    Ok(again.as_bytes() == bytes.as_slice())
}

pub const GOLDEN_FILES: [&str; 5] = ["manifest.jsonl", "matches.jsonl", "geo.jsonl", "embeddings.jsonl", "model.json"];

const TOKENS: &[&str] = &[
    "NaN", "Infinity", "-1", "0", "1e999", "-1e999", "null", "true", "\"\"", "{", "}", "[", "]", ",", ":", "\"", "\n",
    "\r\n", "\\u0000", "\u{0}", "\u{feff}", "18446744073709551616", "-0", "[[]]", "{}", "\"kind\":\"pose\"", "\"branch\":9",
];

/// Applies one to four random edits: byte flips, deletions, insertions of
/// random bytes or JSON-ish tokens, truncation, and line duplication or swap.
pub fn mutate(r: &mut impl Rng, seed: &[u8]) -> Vec<u8> {
    let mut b = seed.to_vec();
    for _ in 0..r.random_range(1..=4) {
        let len = b.len().max(1);
        let at = r.random_range(0..len).min(b.len());
        match r.random_range(0..8) {
            0 if !b.is_empty() => {
                let i = r.random_range(0..b.len());
                b[i] ^= 1 << r.random_range(0..8);
            }
            1 if !b.is_empty() => {
                let end = (at + r.random_range(1..16)).min(b.len());
                b.drain(at..end);
            }
            2 => {
                let junk: Vec<u8> = (0..r.random_range(1..8)).map(|_| r.random()).collect();
                b.splice(at..at, junk);
            }
            3 | 4 => {
                let t = TOKENS[r.random_range(0..TOKENS.len())].as_bytes().to_vec();
                b.splice(at..at, t);
            }
            5 => b.truncate(at),
            6 => {
                let lines: Vec<&[u8]> = b.split(|&c| c == b'\n').collect();
                let pick = lines[r.random_range(0..lines.len())].to_vec();
                b.extend_from_slice(b"\n");
                b.extend_from_slice(&pick);
            }
            _ => {
                // Replace a digit run with a token to break numeric fields.
                if let Some(pos) = b.iter().skip(at).position(u8::is_ascii_digit) {
                    let start = at + pos;
                    let end = start + b[start..].iter().take_while(|c| c.is_ascii_digit()).count();
                    let t = TOKENS[r.random_range(0..TOKENS.len())].as_bytes().to_vec();
                    b.splice(start..end, t);
                }
            }
        }
    }
    b
}

/// Feeds mutated golden files to the three loaders; returns the number of
/// panics and the number of inputs each loader accepted.
pub fn fuzz(iterations: usize, seed: u64) -> (usize, [usize; 3]) {
    let seeds = [read_golden("manifest.jsonl"), read_golden("matches.jsonl"), read_golden("geo.jsonl")];
    let mut r = rng(seed);
    let mut panics = 0;
    let mut accepted = [0usize; 3];
    let hook = std::panic::take_hook();
    std::panic::set_hook(Box::new(|_| {}));
    for i in 0..iterations {
        let which = i % 3;
        let input = mutate(&mut r, &seeds[which]);
        let res = catch_unwind(AssertUnwindSafe(|| match which {
            0 => parse_manifest(&input, "fuzz").is_ok(),
            1 => !parse_matches(&input, 2048, "fuzz").records.is_empty(),
            _ => parse_geo_annotation(&input, "fuzz").is_ok(),
        }));
        match res {
            Ok(ok) => accepted[which] += ok as usize,
            Err(_) => panics += 1,
        }
    }
    std::panic::set_hook(hook);
    (panics, accepted)
}

pub fn ingestion_robustness() -> Outcome {
    let (panics, accepted) = fuzz(100_000, 77);
    let trips: Vec<(String, Result<bool, String>)> = GOLDEN_FILES
        .iter()
        .map(|n| (n.to_string(), round_trip(n)))
        .collect();
    let trips_ok = trips.iter().all(|(_, r)| matches!(r, Ok(true)));
    Outcome::new(
        panics == 0 && trips_ok,
        format!(
            "10^5 mutated inputs: {panics} crashes (accepted manifest/matches/geo {accepted:?}); golden round trips {:?}",
            trips.iter().map(|(n, r)| format!("{n}={r:?}")).collect::<Vec<_>>()
        ),
    )
}
