//! Adaptive front-end: label pairs by per-branch RANSAC inliers, train the
//! selector, and compare against the unprocessed baseline and the identity
//! gate.

use cmbench::cli::{
    cmd_gate_eval, cmd_gate_label, cmd_gate_train, report, EmbeddingSource, GateEvalConfig, GateLabelConfig,
    GateTrainConfig, RunConfig,
};
use cmbench::fixture::{write_bundle, BundleSpec, GATE_MATCHER};
use cmbench::gate::{GateHyper, BUILTIN_PROVIDER};
use cmbench::ingest::Task;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let bundle = write_bundle(dir.path(), &BundleSpec::default())?;
    let run = |manifest| RunConfig::new(manifest, Task::Homography).with_matches(&bundle.gate_matches_dir);

    let samples = dir.path().join("samples.jsonl");
    let labels = cmd_gate_label(&GateLabelConfig {
        run: run(&bundle.gate_train_manifest),
        embeddings: EmbeddingSource::Builtin,
        out: samples.clone(),
        skipped_out: None,
    })?;
    let mut counts = [0usize; 4];
    for r in &labels.records {
        counts[r.label.index()] += 1;
    }
    println!("labelled {} pairs, per-branch counts {counts:?}, skipped {}", labels.records.len(), labels.skipped.len());

    let model_path = dir.path().join("gate.json");
    let (model, train) = cmd_gate_train(&GateTrainConfig {
        samples,
        out: model_path.clone(),
        hyper: GateHyper::default(),
        matcher: Some(GATE_MATCHER.into()),
        provider: BUILTIN_PROVIDER.into(),
    })?;
    println!(
        "trained {} parameters, loss {:.4} -> {:.4}",
        model.parameter_count(),
        train.initial_loss,
        train.final_loss
    );

    for (name, models) in [("identity gate", vec![]), ("trained gate", vec![model_path])] {
        let rows = cmd_gate_eval(&GateEvalConfig {
            run: run(&bundle.gate_test_manifest),
            embeddings: EmbeddingSource::Builtin,
            models,
        })?;
        println!("\n[{name}]");
        print!("{}", report::to_table(&rows));
    }
    Ok(())
}
