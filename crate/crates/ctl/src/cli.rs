//! The `ctl` command line.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use ctl_core::cam::{compute_cam, emit_overlay};
use ctl_core::checkpoint::{ModelCheckpoint, CHECKPOINT_FORMAT_VERSION};
use ctl_core::classifier::{build_downstream, finetune, predict_maps, predict_patch, ClassProbabilities};
use ctl_core::data::ClassLabel;
use ctl_core::gradcheck::{run_suite, GradCheckConfig};
use ctl_core::lbp::{texture_histogram, LbpConfig};
use ctl_core::metrics::{evaluate_run, Task};
use ctl_core::synth::generate_corpus;
use ctl_core::vote::{cross_vote, predict_volume, ModelScorer};
use serde_json::json;

use crate::checkpoint_io::{load_checkpoint, save_checkpoint};
use crate::config::{output_dir, RunConfig};
use crate::dataset::{extract_maps, read_frames, write_corpus, Dataset};
use crate::error::{CtlError, Result};
use crate::pipeline::{pretrain_split, Prepared};
use crate::pnm::{encode_pgm16_unit, read_pgm, write_bytes, write_ppm};
use crate::sweep::{label_fraction_study, lbp_sweep, write_sweep_csv, SweepSettings};
use crate::tables::{read_matrix_csv, read_predictions_csv, read_truth_csv, write_codes_csv, write_histograms_csv, write_matrix_csv, write_predictions_csv, write_table, write_truth_csv};

fn version() -> &'static str {
    static V: std::sync::OnceLock<String> = std::sync::OnceLock::new();
    V.get_or_init(|| format!("{} (checkpoint format {})", env!("CARGO_PKG_VERSION"), CHECKPOINT_FORMAT_VERSION))
}

#[derive(Debug, Parser)]
#[command(name = "ctl", version = version(), about = "Contrastive texture learning on OCT-like patches")]
pub struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for texture extraction.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct LbpArgs {
    #[arg(long = "lbp-p")]
    pub points: Option<u32>,
    #[arg(long = "lbp-r")]
    pub radius: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic corpus.
    GenData {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        patients_per_class: Option<usize>,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        width: Option<usize>,
    },
    /// Export texture maps and histograms for every patch.
    ExtractLbp {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        lbp: LbpArgs,
        /// Also write raw codes as CSV.
        #[arg(long)]
        codes: bool,
    },
    /// Contrastive pretraining on the training split.
    Pretrain {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        lr: Option<f64>,
        #[command(flatten)]
        lbp: LbpArgs,
    },
    /// Supervised five-class training; reports test-split metrics.
    Finetune {
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Pretrained checkpoint path, or `random`.
        #[arg(long)]
        init: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        label_fraction: Option<f64>,
        #[arg(long)]
        freeze_encoder: bool,
        #[arg(long)]
        no_oversample: bool,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[command(flatten)]
        lbp: LbpArgs,
    },
    /// Classify one patch, or write predictions for the test split.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, conflicts_with = "manifest")]
        image: Option<PathBuf>,
        #[arg(long, requires = "out")]
        manifest: Option<PathBuf>,
        /// Output directory for predictions.csv and truth.csv.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Predict every entry instead of the test split.
        #[arg(long)]
        all: bool,
    },
    /// Score a directory of frames into a prediction matrix and vote.
    PredictVolume {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        run: Option<usize>,
        #[arg(long)]
        patch: Option<usize>,
        #[arg(long)]
        stride: Option<usize>,
    },
    /// Cross-shaped vote over a prediction matrix CSV.
    Vote {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        run: Option<usize>,
    },
    /// Metrics report from prediction and truth CSVs.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, value_enum, default_value = "five")]
        task: TaskArg,
    },
    /// Class activation map overlay for one patch.
    Cam {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Class index 0..5; defaults to the predicted class.
        #[arg(long)]
        class: Option<usize>,
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Grid over LBP radius and points.
    SweepLbp {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_values_t = [1.0, 2.0, 4.0])]
        r: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = [8, 16, 32])]
        p: Vec<u32>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        finetune_epochs: Option<usize>,
        #[arg(long, default_value_t = 1)]
        seeds: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Contrastive vs random initialization across label fractions.
    StudyLabels {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_values_t = [0.25, 0.5, 0.75, 1.0])]
        fractions: Vec<f64>,
        #[arg(long, default_value_t = 3)]
        seeds: usize,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of every layer in 64-bit mode.
    Gradcheck {
        #[arg(long)]
        tolerance: Option<f64>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Binary,
    Five,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Binary => Task::Binary,
            TaskArg::Five => Task::FiveClass,
        }
    }
}

/// Parse and run; returns the process exit code.
pub fn main_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{}", json!({ "error": error_kind(&e), "message": e.to_string() }));
            1
        }
    }
}

fn error_kind(e: &CtlError) -> &'static str {
    match e {
        CtlError::Io { .. } => "io",
        CtlError::Core(_) => "invalid_input",
        CtlError::Checkpoint(_) => "checkpoint",
        CtlError::Format { .. } => "format",
        CtlError::Json(_) => "json",
        CtlError::Csv(_) => "csv",
        CtlError::Invalid(_) => "invalid_argument",
    }
}

fn required(flag: Option<PathBuf>, cfg: &mut RunConfig, key: &str) -> Result<PathBuf> {
    let path = match flag {
        Some(p) => p,
        None => cfg.paths.get(key).and_then(|v| v.as_str()).map(PathBuf::from).ok_or_else(|| CtlError::Invalid(format!("missing --{key}")))?,
    };
    cfg.set_path(key, &path);
    Ok(path)
}

fn apply_lbp(lbp: &LbpArgs, cfg: &mut LbpConfig) -> Result<()> {
    if let Some(p) = lbp.points {
        cfg.points = p;
    }
    if let Some(r) = lbp.radius {
        cfg.radius = r;
    }
    cfg.validate()?;
    Ok(())
}

fn set<T>(target: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *target = v;
    }
}

fn print_json(value: &serde_json::Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn load_model(path: &Path) -> Result<(ctl_core::nn::Network<f32>, LbpConfig)> {
    let ck = load_checkpoint(path)?;
    Ok((ck.to_network()?, ck.lbp_config()?))
}

fn prediction_json(p: &ClassProbabilities) -> serde_json::Value {
    json!({
        "probabilities": ClassLabel::ALL.iter().map(|c| (c.name().to_string(), json!(p.p[c.index()]))).collect::<serde_json::Map<_, _>>(),
        "predicted_label": p.predicted_label.name(),
        "high_risk_prob": p.high_risk_prob,
    })
}

fn seeds_from(base: u64, count: usize) -> Result<Vec<u64>> {
    if count == 0 {
        return Err(CtlError::Invalid("--seeds must be at least 1".into()));
    }
    Ok((0..count as u64).map(|i| base.wrapping_add(i)).collect())
}

pub fn run(cli: Cli) -> Result<i32> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    set(&mut cfg.seed, cli.seed);
    set(&mut cfg.jobs, cli.jobs);
    if cfg.jobs == 0 {
        return Err(CtlError::Invalid("--jobs must be at least 1".into()));
    }
    cfg.propagate_seed();
    match cli.command {
        Command::GenData { out, patients_per_class, frames, width } => {
            cfg.subcommand = "gen-data".into();
            let out = required(out, &mut cfg, "out")?;
            set(&mut cfg.corpus.patients_per_class, patients_per_class);
            set(&mut cfg.corpus.frames_per_volume, frames);
            set(&mut cfg.corpus.frame_width, width);
            let corpus = generate_corpus(&cfg.corpus)?;
            write_corpus(&out, &corpus)?;
            cfg.write_resolved(&out)?;
            print_json(&json!({ "out": out, "patches": corpus.patches.len(), "volumes": corpus.volumes.len() }))?;
        }
        Command::ExtractLbp { manifest, out, lbp, codes } => {
            cfg.subcommand = "extract-lbp".into();
            let manifest = required(manifest, &mut cfg, "manifest")?;
            let out = required(out, &mut cfg, "out")?;
            apply_lbp(&lbp, &mut cfg.lbp)?;
            let ds = Dataset::load(&manifest)?;
            let maps = extract_maps(&ds.images, &cfg.lbp, cfg.jobs)?;
            let mut hists = Vec::with_capacity(maps.len());
            for (i, map) in maps.iter().enumerate() {
                let id = ds.sample_id(i);
                write_bytes(&out.join("maps").join(format!("{id}.pgm")), &encode_pgm16_unit(&map.normalized_image()))?;
                if codes {
                    write_codes_csv(&out.join("codes").join(format!("{id}.csv")), map)?;
                }
                hists.push((id, texture_histogram(map)?));
            }
            write_histograms_csv(&out.join("histograms.csv"), &hists)?;
            cfg.write_resolved(&out)?;
            print_json(&json!({ "out": out, "maps": maps.len() }))?;
        }
        Command::Pretrain { manifest, out, epochs, batch, tau, lr, lbp } => {
            cfg.subcommand = "pretrain".into();
            let manifest = required(manifest, &mut cfg, "manifest")?;
            let out = required(out, &mut cfg, "out")?;
            apply_lbp(&lbp, &mut cfg.lbp)?;
            set(&mut cfg.pretrain.epochs, epochs);
            set(&mut cfg.pretrain.batch_size, batch);
            set(&mut cfg.pretrain.temperature, tau);
            set(&mut cfg.pretrain.optimizer.learning_rate, lr);
            cfg.pretrain.validate()?;
            let ds = Dataset::load(&manifest)?;
            let prepared = Prepared::new(&ds, &cfg.lbp, cfg.split_ratio, cfg.seed, cfg.jobs)?;
            let outcome = pretrain_split(&prepared, &cfg.pretrain, &mut |e, l| eprintln!("pretrain epoch {e} loss {l:.6}"))?;
            save_checkpoint(&out, &outcome.checkpoint)?;
            let losses = out.with_extension("losses.csv");
            let rows: Vec<Vec<String>> = outcome.epoch_losses.iter().enumerate().map(|(i, l)| vec![(i + 1).to_string(), l.to_string()]).collect();
            write_table(&losses, &["epoch", "mean_psi"], &rows)?;
            cfg.write_resolved(output_dir(&out, false))?;
            print_json(&json!({ "checkpoint": out, "losses": losses, "epoch_losses": outcome.epoch_losses }))?;
        }
        Command::Finetune { manifest, init, out, label_fraction, freeze_encoder, no_oversample, epochs, batch, lr, lbp } => {
            cfg.subcommand = "finetune".into();
            let manifest = required(manifest, &mut cfg, "manifest")?;
            let out = required(out, &mut cfg, "out")?;
            let init = match init {
                Some(s) => s,
                None => cfg.paths.get("init").and_then(|v| v.as_str()).unwrap_or("random").to_string(),
            };
            cfg.paths.insert("init".into(), json!(init));
            set(&mut cfg.finetune.label_fraction, label_fraction);
            set(&mut cfg.finetune.epochs, epochs);
            set(&mut cfg.finetune.batch_size, batch);
            set(&mut cfg.finetune.optimizer.learning_rate, lr);
            cfg.finetune.freeze_encoder |= freeze_encoder;
            if no_oversample {
                cfg.finetune.oversample = false;
            }
            let checkpoint: Option<ModelCheckpoint> = if init == "random" { None } else { Some(load_checkpoint(Path::new(&init))?) };
            if let Some(ck) = &checkpoint {
                if lbp.points.is_some() || lbp.radius.is_some() {
                    return Err(CtlError::Invalid("LBP parameters come from the checkpoint; drop --lbp-p/--lbp-r".into()));
                }
                cfg.lbp = ck.lbp_config()?;
                cfg.pretrain.encoder = ck.network_spec()?.encoder;
            } else {
                apply_lbp(&lbp, &mut cfg.lbp)?;
            }
            let ds = Dataset::load(&manifest)?;
            let prepared = Prepared::new(&ds, &cfg.lbp, cfg.split_ratio, cfg.seed, cfg.jobs)?;
            let mut network = build_downstream(checkpoint.as_ref(), &cfg.pretrain.encoder, cfg.finetune.seed)?;
            let history = finetune(&mut network, &prepared.train_samples(), &cfg.finetune, &mut |e, l, a| eprintln!("finetune epoch {e} loss {l:.6} train_acc {a:.4}"))?;
            let model = ModelCheckpoint::from_network(&mut network, cfg.seed, &cfg.lbp, None);
            save_checkpoint(&out, &model)?;
            let preds = predict_maps(&mut network, &prepared.test_maps())?;
            let truths = prepared.test_labels();
            let report = json!({
                "model": out,
                "training_size": history.training_size,
                "clamped": history.clamped,
                "epoch_losses": history.epoch_losses,
                "five_class": evaluate_run(&preds, &truths, Task::FiveClass)?,
                "binary": evaluate_run(&preds, &truths, Task::Binary)?,
            });
            let rows: Vec<Vec<String>> =
                history.epoch_losses.iter().zip(&history.epoch_accuracy).enumerate().map(|(i, (l, a))| vec![(i + 1).to_string(), l.to_string(), a.to_string()]).collect();
            write_table(&out.with_extension("history.csv"), &["epoch", "loss", "train_accuracy"], &rows)?;
            write_bytes(&out.with_extension("report.json"), serde_json::to_string_pretty(&report)?.as_bytes())?;
            cfg.write_resolved(output_dir(&out, false))?;
            print_json(&report)?;
        }
        Command::Predict { model, image, manifest, out, all } => {
            let (mut network, lbp) = load_model(&model)?;
            match (image, manifest, out) {
                (Some(image), _, _) => {
                    let p = predict_patch(&mut network, &read_pgm(&image)?, &lbp)?;
                    print_json(&prediction_json(&p))?;
                }
                (None, Some(manifest), Some(out)) => {
                    cfg.subcommand = "predict".into();
                    cfg.lbp = lbp;
                    cfg.set_path("model", &model);
                    cfg.set_path("manifest", &manifest);
                    cfg.set_path("out", &out);
                    let ds = Dataset::load(&manifest)?;
                    let prepared = Prepared::new(&ds, &lbp, cfg.split_ratio, cfg.seed, cfg.jobs)?;
                    let idx = if all { (0..ds.images.len()).collect() } else { prepared.test.clone() };
                    let maps: Vec<_> = idx.iter().map(|&i| prepared.maps[i].clone()).collect();
                    let preds = predict_maps(&mut network, &maps)?;
                    let ids: Vec<String> = idx.iter().map(|&i| prepared.sample_ids[i].clone()).collect();
                    write_predictions_csv(&out.join("predictions.csv"), &ids.iter().cloned().zip(preds).collect::<Vec<_>>())?;
                    write_truth_csv(&out.join("truth.csv"), &ids.into_iter().zip(idx.iter().map(|&i| prepared.labels[i])).collect::<Vec<_>>())?;
                    cfg.write_resolved(&out)?;
                    print_json(&json!({ "out": out, "samples": idx.len() }))?;
                }
                _ => return Err(CtlError::Invalid("predict needs --image, or --manifest with --out".into())),
            }
        }
        Command::PredictVolume { model, frames, out, threshold, run, patch, stride } => {
            cfg.subcommand = "predict-volume".into();
            set(&mut cfg.vote.threshold, threshold);
            set(&mut cfg.vote.run_length, run);
            set(&mut cfg.window.patch_size, patch);
            set(&mut cfg.window.stride, stride);
            cfg.vote.validate()?;
            cfg.set_path("model", &model);
            cfg.set_path("frames", &frames);
            cfg.set_path("out", &out);
            let (mut network, lbp) = load_model(&model)?;
            cfg.lbp = lbp;
            let images = read_frames(&frames)?;
            let volume_id = frames.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "volume".into());
            let mut scorer = ModelScorer { network: &mut network, lbp };
            let (outcome, matrix) = predict_volume(&mut scorer, &volume_id, &images, &cfg.window, &cfg.vote)?;
            write_matrix_csv(&out, &matrix)?;
            cfg.write_resolved(output_dir(&out, false))?;
            print_json(&json!({ "matrix": out, "verdict": if outcome.positive { "POSITIVE" } else { "NEGATIVE" }, "center": outcome.center, "witness": outcome.witness }))?;
        }
        Command::Vote { matrix, threshold, run } => {
            set(&mut cfg.vote.threshold, threshold);
            set(&mut cfg.vote.run_length, run);
            cfg.vote.validate()?;
            let m = read_matrix_csv(&matrix)?;
            let outcome = cross_vote(&m, &cfg.vote);
            print_json(&json!({ "volume_id": m.volume_id, "verdict": if outcome.positive { "POSITIVE" } else { "NEGATIVE" }, "center": outcome.center, "witness": outcome.witness }))?;
        }
        Command::Eval { pred, truth, task } => {
            let preds = read_predictions_csv(&pred)?;
            let truth_map = read_truth_csv(&truth)?;
            let mut probs = Vec::with_capacity(preds.len());
            let mut labels = Vec::with_capacity(preds.len());
            for (id, p) in preds {
                let label = truth_map.get(&id).ok_or_else(|| CtlError::Invalid(format!("no truth label for sample {id}")))?;
                probs.push(p);
                labels.push(*label);
            }
            print_json(&serde_json::to_value(evaluate_run(&probs, &labels, task.into())?)?)?;
        }
        Command::Cam { model, image, class, alpha, out } => {
            let (mut network, lbp) = load_model(&model)?;
            let patch = read_pgm(&image)?;
            let class = match class {
                Some(c) => c,
                None => predict_patch(&mut network, &patch, &lbp)?.predicted_label.index(),
            };
            let map = compute_cam(&mut network, &patch, class, &lbp)?;
            write_ppm(&out, &emit_overlay(&patch, &map, alpha)?)?;
            print_json(&json!({ "out": out, "class_index": class, "class": ClassLabel::from_index(class).map(|c| c.name()) }))?;
        }
        Command::SweepLbp { manifest, r, p, epochs, finetune_epochs, seeds, out } => {
            cfg.subcommand = "sweep-lbp".into();
            let manifest = required(manifest, &mut cfg, "manifest")?;
            let out = required(out, &mut cfg, "out")?;
            set(&mut cfg.pretrain.epochs, epochs);
            set(&mut cfg.finetune.epochs, finetune_epochs);
            let settings = SweepSettings {
                pretrain: cfg.pretrain.clone(),
                finetune: cfg.finetune.clone(),
                seeds: seeds_from(cfg.seed, seeds)?,
                split_ratio: cfg.split_ratio,
                split_seed: cfg.seed,
                jobs: cfg.jobs,
            };
            let ds = Dataset::load(&manifest)?;
            let rows = lbp_sweep(&ds, &r, &p, &settings)?;
            write_sweep_csv(&out, &rows)?;
            cfg.write_resolved(output_dir(&out, false))?;
            print_json(&json!({ "out": out, "rows": rows }))?;
        }
        Command::StudyLabels { manifest, ckpt, fractions, seeds, epochs, out } => {
            cfg.subcommand = "study-labels".into();
            let manifest = required(manifest, &mut cfg, "manifest")?;
            let ckpt = required(ckpt, &mut cfg, "ckpt")?;
            let out = required(out, &mut cfg, "out")?;
            set(&mut cfg.finetune.epochs, epochs);
            let settings = SweepSettings {
                pretrain: cfg.pretrain.clone(),
                finetune: cfg.finetune.clone(),
                seeds: seeds_from(cfg.seed, seeds)?,
                split_ratio: cfg.split_ratio,
                split_seed: cfg.seed,
                jobs: cfg.jobs,
            };
            let ds = Dataset::load(&manifest)?;
            let rows = label_fraction_study(&ds, &load_checkpoint(&ckpt)?, &fractions, &settings)?;
            write_sweep_csv(&out, &rows)?;
            cfg.write_resolved(output_dir(&out, false))?;
            print_json(&json!({ "out": out, "rows": rows }))?;
        }
        Command::Gradcheck { tolerance } => {
            let mut gc = GradCheckConfig { seed: cfg.seed, ..GradCheckConfig::default() };
            set(&mut gc.tolerance, tolerance);
            let reports = run_suite(&gc)?;
            let passed = reports.iter().all(|r| r.passed);
            print_json(&json!({ "passed": passed, "tolerance": gc.tolerance, "layers": reports }))?;
            return Ok(if passed { 0 } else { 1 });
        }
    }
    Ok(0)
}
