use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use super::report::{merge, read_report, render, to_table, OutputFormat, ReportRow};
use super::{
    cmd_eval_geo, cmd_eval_homography, cmd_eval_pose, cmd_gate_eval, cmd_gate_label, cmd_gate_train, cmd_synth_pairs,
    CliError, EmbeddingSource, GateEvalConfig, GateLabelConfig, GateTrainConfig, RunConfig, SynthPairsConfig, EXIT_OK,
};
use crate::estimate::RansacConfig;
use crate::gate::{GateHyper, BUILTIN_PROVIDER};
use crate::ingest::{write_atomic, Task};

#[derive(Debug, Parser)]
#[command(name = "cmbench", version, about = "Infrared-visible matching benchmark")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Homography estimation on synthetic warps (AUC@5/10/20 px).
    EvalHomography(Common),
    /// Relative pose from the essential matrix (scene-balanced AUC@5/10/20°).
    EvalPose(Common),
    /// Thermal-to-satellite geo-localization (MedErr, SR@3/5/10 m).
    EvalGeo {
        #[command(flatten)]
        common: Common,
        /// Evaluate the hard protocol's pairs.
        #[arg(long)]
        hard: bool,
    },
    /// Label pairs with the branch whose matches keep the most RANSAC inliers.
    GateLabel {
        #[command(flatten)]
        common: Common,
        /// Precomputed embedding file; the built-in descriptor is used otherwise.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        skipped: Option<PathBuf>,
    },
    /// Train a branch selector from labelled samples.
    GateTrain(TrainArgs),
    /// Compare no preprocessing against gate-selected branches.
    GateEval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Gate model file; repeat for per-matcher models. None: identity gate.
        #[arg(long = "model")]
        models: Vec<PathBuf>,
    },
    /// Merge report files and print them as one table.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = OutputFormat::Csv)]
        format: OutputFormat,
        /// Merge reports with different configuration fingerprints.
        #[arg(long)]
        force: bool,
    },
    /// Write a manifest of randomly sampled homography pairs.
    SynthPairs {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = 640)]
        width: u32,
        #[arg(long, default_value_t = 480)]
        height: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "synthetic")]
        dataset_id: String,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub matches_dir: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Csv)]
    pub format: OutputFormat,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 3.0)]
    pub ransac_threshold: f64,
    #[arg(long, default_value_t = 2048)]
    pub max_matches: usize,
    #[arg(long, default_value_t = 640)]
    pub resize_max: u32,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Matcher evaluated even if it has no match files; repeatable.
    #[arg(long = "matcher")]
    pub matchers: Vec<String>,
    /// Comma-separated thresholds overriding the task defaults.
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Vec<f64>,
}

impl Common {
    fn config(&self, task: Task) -> RunConfig {
        let mut cfg = RunConfig::new(&self.manifest, task);
        cfg.matches_dir = self.matches_dir.clone();
        cfg.format = self.format;
        cfg.seed = self.seed;
        cfg.ransac = RansacConfig {
            threshold: self.ransac_threshold,
            ..RansacConfig::default()
        };
        cfg.max_matches = self.max_matches;
        cfg.resize_max = self.resize_max;
        cfg.workers = self.workers;
        cfg.matchers = self.matchers.clone();
        if !self.thresholds.is_empty() {
            cfg.thresholds = self.thresholds.clone();
        }
        cfg
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub samples: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Train on one matcher's samples; all samples otherwise (shared model).
    #[arg(long)]
    pub matcher: Option<String>,
    #[arg(long, default_value = BUILTIN_PROVIDER)]
    pub provider: String,
    #[arg(long, default_value_t = GateHyper::default().learning_rate)]
    pub lr: f64,
    #[arg(long, default_value_t = GateHyper::default().epochs)]
    pub epochs: usize,
    #[arg(long, default_value_t = GateHyper::default().batch_size)]
    pub batch_size: usize,
    /// Hidden layer width; 0 for a linear classifier.
    #[arg(long, default_value_t = 0)]
    pub hidden: usize,
    #[arg(long, default_value_t = GateHyper::default().weight_decay)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn source(embeddings: &Option<PathBuf>) -> EmbeddingSource {
    match embeddings {
        Some(p) => EmbeddingSource::External(p.clone()),
        None => EmbeddingSource::Builtin,
    }
}

fn emit(rows: &[ReportRow], out: &Option<PathBuf>, format: OutputFormat) -> Result<(), CliError> {
    match out {
        Some(path) => {
            write_atomic(path, render(rows, format).as_bytes())?;
            print!("{}", to_table(rows));
        }
        None => print!("{}", render(rows, format)),
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::EvalHomography(c) => emit(&cmd_eval_homography(&c.config(Task::Homography))?, &c.out, c.format),
        Command::EvalPose(c) => emit(&cmd_eval_pose(&c.config(Task::Pose))?, &c.out, c.format),
        Command::EvalGeo { common, hard } => {
            let task = if hard { Task::GeoHard } else { Task::Geo };
            emit(&cmd_eval_geo(&common.config(task))?, &common.out, common.format)
        }
        Command::GateLabel {
            common,
            embeddings,
            skipped,
        } => {
            let out = common
                .out
                .clone()
                .ok_or_else(|| CliError::Config("gate-label needs --out".into()))?;
            let res = cmd_gate_label(&GateLabelConfig {
                run: common.config(Task::Homography),
                embeddings: source(&embeddings),
                out: out.clone(),
                skipped_out: skipped,
            })?;
            println!(
                "{{\"samples\":{},\"skipped\":{},\"out\":{:?}}}",
                res.records.len(),
                res.skipped.len(),
                out.display().to_string()
            );
            Ok(())
        }
        Command::GateTrain(a) => {
            let (model, report) = cmd_gate_train(&GateTrainConfig {
                samples: a.samples,
                out: a.out.clone(),
                hyper: GateHyper {
                    learning_rate: a.lr,
                    epochs: a.epochs,
                    batch_size: a.batch_size,
                    hidden_width: a.hidden,
                    weight_decay: a.weight_decay,
                    seed: a.seed,
                },
                matcher: a.matcher,
                provider: a.provider,
            })?;
            for b in &report.absent_classes {
                eprintln!("warning: no training samples for branch {}", b.name());
            }
            println!(
                "{{\"initial_loss\":{},\"final_loss\":{},\"parameters\":{},\"out\":{:?}}}",
                report.initial_loss,
                report.final_loss,
                model.parameter_count(),
                a.out.display().to_string()
            );
            Ok(())
        }
        Command::GateEval {
            common,
            embeddings,
            models,
        } => {
            let rows = cmd_gate_eval(&GateEvalConfig {
                run: common.config(Task::Homography),
                embeddings: source(&embeddings),
                models,
            })?;
            emit(&rows, &common.out, common.format)
        }
        Command::Report {
            inputs,
            out,
            format,
            force,
        } => {
            let sets = inputs.iter().map(|p| read_report(p)).collect::<Result<Vec<_>, _>>()?;
            let rows = merge(sets, force)?;
            emit(&rows, &out, format)
        }
        Command::SynthPairs {
            out,
            count,
            width,
            height,
            seed,
            dataset_id,
        } => {
            let mut cfg = SynthPairsConfig::new(&out, count);
            cfg.width = width;
            cfg.height = height;
            cfg.seed = seed;
            cfg.dataset_id = dataset_id;
            let pairs = cmd_synth_pairs(&cfg)?;
            println!("{{\"pairs\":{},\"out\":{:?}}}", pairs.len(), out.display().to_string());
            Ok(())
        }
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { super::EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
