use std::path::Path;

use cmbench::cli::{cmd_gate_eval, cmd_gate_label, EmbeddingSource, GateEvalConfig, GateLabelConfig, RunConfig};
use cmbench::fixture::Bundle;
use cmbench::gate::{
    fuse, label_from_counts, loss_and_grad, train_gate, EmbeddingVector, GateHyper, GateModel, GateSample, Layer,
    BUILTIN_PROVIDER,
};
use cmbench::ingest::{load_matches_dir, parse_manifest, write_matches, Task};
use cmbench::preprocess::BranchId;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{e2e, rng, Outcome};

fn random_layer(r: &mut impl Rng, rows: usize, cols: usize) -> Layer {
    Layer {
        rows,
        cols,
        weights: (0..rows * cols).map(|_| r.random_range(-0.8..0.8)).collect(),
        bias: (0..rows).map(|_| r.random_range(-0.3..0.3)).collect(),
    }
}

fn pre_activation(l: &Layer, x: &[f64]) -> Vec<f64> {
    (0..l.rows)
        .map(|i| l.bias[i] + (0..l.cols).map(|j| l.weights[i * l.cols + j] * x[j]).sum::<f64>())
        .collect()
}

/// Largest relative error between analytic and central-difference
/// gradients. The denominator is floored at 1e-4 so vanishing entries are
/// judged on absolute error instead.
pub fn gradient_check(hidden: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let input = 12;
    let layers = if hidden == 0 {
        vec![random_layer(&mut r, 4, input)]
    } else {
        vec![random_layer(&mut r, hidden, input), random_layer(&mut r, 4, hidden)]
    };
    let mut xs: Vec<Vec<f64>> = Vec::new();
    while xs.len() < 10 {
        let x: Vec<f64> = (0..input).map(|_| r.random_range(-1.5..1.5)).collect();
        // Keep clear of ReLU kinks, where finite differences are meaningless.
        if hidden > 0 && pre_activation(&layers[0], &x).iter().any(|z| z.abs() < 1e-2) {
            continue;
        }
        xs.push(x);
    }
    let ys: Vec<usize> = (0..xs.len()).map(|_| r.random_range(0..4)).collect();
    let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
    let wd = 1e-3;
    let (_, grads) = loss_and_grad(&layers, &refs, &ys, wd);
    let loss_at = |ls: &[Layer]| loss_and_grad(ls, &refs, &ys, wd).0;
    let h = 1e-6;
    let mut worst = 0.0f64;
    for li in 0..layers.len() {
        let n_w = layers[li].weights.len();
        for k in 0..n_w + layers[li].bias.len() {
            let nudge = |delta: f64| {
                let mut ls = layers.clone();
                if k < n_w {
                    ls[li].weights[k] += delta;
                } else {
                    ls[li].bias[k - n_w] += delta;
                }
                loss_at(&ls)
            };
            let numeric = (nudge(h) - nudge(-h)) / (2.0 * h);
            let analytic = if k < n_w {
                grads[li].weights[k]
            } else {
                grads[li].bias[k - n_w]
            };
            let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-4);
            worst = worst.max(rel);
        }
    }
    worst
}

pub fn embedding(values: Vec<f64>) -> EmbeddingVector {
    EmbeddingVector::new(values).unwrap()
}

/// Four Gaussian clusters in embedding space; `labels` decides whether the
/// class identity or an independent random draw becomes the label.
pub fn clustered_samples(seed: u64, per_class: usize, shuffled: bool) -> Vec<GateSample> {
    let dim = 8;
    let mut r = rng(seed);
    let mut centers = rng(99);
    let unit = Normal::new(0.0, 1.0).unwrap();
    let c_ir: Vec<Vec<f64>> = (0..4).map(|_| (0..dim).map(|_| 2.0 * unit.sample(&mut centers)).collect()).collect();
    let c_vis: Vec<Vec<f64>> = (0..4).map(|_| (0..dim).map(|_| 2.0 * unit.sample(&mut centers)).collect()).collect();
    let noise = Normal::new(0.0, 0.5).unwrap();
    let mut out = Vec::new();
    for class in 0..4 {
        for i in 0..per_class {
            let ir = embedding(c_ir[class].iter().map(|c| c + noise.sample(&mut r)).collect());
            let vis = embedding(c_vis[class].iter().map(|c| c + noise.sample(&mut r)).collect());
            let label = if shuffled { r.random_range(0..4) } else { class };
            out.push(GateSample {
                pair_id: format!("c{class}-{i}"),
                descriptor: fuse(&ir, &vis).unwrap(),
                label: BranchId::ALL[label],
                inlier_counts: [0; 4],
            });
        }
    }
    out.shuffle(&mut r);
    out
}

pub fn accuracy(model: &GateModel, samples: &[GateSample]) -> f64 {
    let hits = samples
        .iter()
        .filter(|s| model.predict(&s.descriptor).unwrap().branch == s.label)
        .count();
    hits as f64 / samples.len() as f64
}

pub fn held_out_accuracy(shuffled: bool, hidden_width: usize) -> f64 {
    let train = clustered_samples(1, 80, shuffled);
    let test = clustered_samples(2, 100, shuffled);
    let hyper = GateHyper {
        hidden_width,
        ..GateHyper::default()
    };
    let (model, _) = train_gate(&train, &hyper, "clusters").unwrap();
    accuracy(&model, &test)
}

pub fn identity_gate_gains(bundle: &Bundle) -> Result<Vec<(String, Option<f64>, Option<f64>)>, String> {
    let run = RunConfig::new(&bundle.gate_test_manifest, Task::Homography).with_matches(&bundle.gate_matches_dir);
    let rows = cmd_gate_eval(&GateEvalConfig {
        run,
        embeddings: EmbeddingSource::Builtin,
        models: Vec::new(),
    })
    .map_err(|e| e.to_string())?;
    let mut out = Vec::new();
    for row in &rows {
        for t in [5, 10, 20] {
            out.push((
                format!("{}@{t}", row.matcher_id),
                row.metric(&format!("gain_pct@{t}")),
                row.metric(&format!("baseline_auc@{t}")),
            ));
        }
    }
    Ok(out)
}

pub fn gate_training() -> Outcome {
    let fd_linear = gradient_check(0, 3);
    let fd_hidden = gradient_check(6, 4);
    let separable = held_out_accuracy(false, 0);
    let shuffled = held_out_accuracy(true, 0);
    let (_dir, bundle) = e2e::bundle();
    let identity = identity_gate_gains(&bundle);
    let identity_ok = identity
        .as_ref()
        .is_ok_and(|g| !g.is_empty() && g.iter().all(|(_, gain, base)| *gain == Some(0.0) && base.is_some_and(|b| b > 0.0)));
    let identity_detail = match &identity {
        Ok(g) => format!("identity gain {:?}", g.iter().map(|x| x.1).collect::<Vec<_>>()),
        Err(e) => format!("identity gate failed: {e}"),
    };
    Outcome::new(
        fd_linear <= 1e-5 && fd_hidden <= 1e-5 && separable >= 0.95 && (0.15..=0.35).contains(&shuffled) && identity_ok,
        format!(
            "gradient rel. error {fd_linear:.1e} (linear) / {fd_hidden:.1e} (hidden); held-out accuracy {separable:.3} \
             separable, {shuffled:.3} shuffled; {identity_detail}"
        ),
    )
}

/// Scans branches in code order and keeps the first strictly larger count
/// among successful branches.
pub fn label_oracle(counts: [usize; 4], ok: [bool; 4]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for i in 0..4 {
        if !ok[i] {
            continue;
        }
        match best {
            Some(b) if counts[i] <= counts[b] => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Gate-labels the bundle after deleting every match of its first training
/// pair, which therefore fails on all four branches.
pub fn all_failed_pair_skipped(bundle: &Bundle, work: &Path) -> Result<(String, usize, usize), String> {
    let manifest = std::fs::read(&bundle.gate_train_manifest).map_err(|e| e.to_string())?;
    let victim = parse_manifest(&manifest, "train").map_err(|e| e.to_string())?[0].pair_id.clone();
    let loaded = load_matches_dir(&bundle.gate_matches_dir, 2048).map_err(|e| e.to_string())?;
    let kept: Vec<_> = loaded.records.into_iter().filter(|r| r.pair_id != victim).collect();
    let dir = work.join("matches-minus-one");
    std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    write_matches(&dir.join("gate.jsonl"), &kept).map_err(|e| e.to_string())?;
    let out = work.join("samples.jsonl");
    let res = cmd_gate_label(&GateLabelConfig {
        run: RunConfig::new(&bundle.gate_train_manifest, Task::Homography).with_matches(&dir),
        embeddings: EmbeddingSource::Builtin,
        out: out.clone(),
        skipped_out: None,
    })
    .map_err(|e| e.to_string())?;
    let skip_file = std::fs::read_to_string(work.join("samples.jsonl.skipped.jsonl")).map_err(|e| e.to_string())?;
    let logged = skip_file.lines().filter(|l| l.contains(&format!("\"{victim}\""))).count();
    let labelled = res.records.iter().filter(|r| r.pair_id == victim).count();
    if res.skipped.iter().all(|s| s.pair_id != victim) {
        return Err(format!("{victim} was not reported as skipped"));
    }
    Ok((victim, labelled, logged))
}

pub fn oracle_labeling() -> Outcome {
    let mut r = rng(31);
    let mut disagreements = 0;
    let mut ties = 0;
    for _ in 0..10_000 {
        let counts: [usize; 4] = std::array::from_fn(|_| r.random_range(0..12));
        let ok: [bool; 4] = std::array::from_fn(|_| r.random_bool(0.75));
        let got = label_from_counts(counts, ok).map(BranchId::index);
        if got != label_oracle(counts, ok) {
            disagreements += 1;
        }
        let best = (0..4).filter(|&i| ok[i]).map(|i| counts[i]).max();
        if (0..4).filter(|&i| ok[i] && Some(counts[i]) == best).count() > 1 {
            ties += 1;
        }
    }
    let (_dir, bundle) = e2e::bundle();
    let work = tempfile::tempdir().unwrap();
    let skipped = all_failed_pair_skipped(&bundle, work.path());
    let skip_ok = matches!(skipped, Ok((_, 0, 1)));
    Outcome::new(
        disagreements == 0 && skip_ok,
        format!(
            "10^4 count vectors ({ties} with ties): {disagreements} disagreements; all-failed pair: {}",
            match skipped {
                Ok((id, labelled, logged)) => format!("{id} labelled {labelled} time(s), logged {logged} time(s)"),
                Err(e) => e,
            }
        ),
    )
}

pub const PROVIDER: &str = BUILTIN_PROVIDER;
