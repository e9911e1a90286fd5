//! Stage-per-command pipeline driver. Each command reads its inputs from
//! files, writes its outputs to files, and prints a one-line summary, so
//! every stage can be rerun or replaced independently.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use skelseq_core::benchrun::{default_cells, run_benchmark, BenchSettings};
use skelseq_core::config::PipelineConfig;
use skelseq_core::fusion::{
    fuse_streams, prediction_accuracy, read_prediction_file, write_prediction_file,
};
use skelseq_core::latent::{
    extract_latents, to_classifier_vector, write_feature_file, FeatureRecord,
};
use skelseq_core::lstm::{load_checkpoint, save_checkpoint, train};
use skelseq_core::normalize::{normalize_sequence, read_normalized_file, write_normalized_file};
use skelseq_core::region::{
    load_stream, pool_stream, select_best_region, write_stream, RegionFrameDescriptor,
};
use skelseq_core::skeleton::{read_skeleton_file, write_skeleton_file};
use skelseq_core::svm::{
    predict_scores, read_score_file, save_model, select_c_reg, train_ovr, write_score_file,
};
use skelseq_core::synth::{generate, generate_descriptors};
use skelseq_core::Error;

#[derive(Parser)]
#[command(name = "skelseq", version, about = "Skeleton-sequence action classification pipeline")]
struct Cli {
    /// TOML configuration file; omitted sections use built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the seed of every stage.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker-thread bound; 0 selects the sequential deterministic mode.
    /// Every stage currently runs sequentially regardless.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic skeleton dataset plus region descriptors.
    GenSynth {
        /// Output directory for skeletons.jsonl and regions.desc.
        #[arg(long)]
        out: PathBuf,
    },
    /// View-normalize a skeleton file.
    Normalize {
        /// Skeleton file (one record per line).
        #[arg(long)]
        input: PathBuf,
        /// Normalized-sequence output file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the stacked LSTM on normalized sequences.
    TrainLstm {
        /// Normalized-sequence file.
        #[arg(long)]
        input: PathBuf,
        /// Checkpoint output path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract latent features from a trained checkpoint.
    Extract {
        /// Normalized-sequence file.
        #[arg(long)]
        input: PathBuf,
        /// Checkpoint produced by train-lstm.
        #[arg(long)]
        model: PathBuf,
        /// Feature-file output path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a one-vs-rest linear SVM on a feature file.
    TrainSvm {
        /// Feature file (id label layout dim values).
        #[arg(long)]
        input: PathBuf,
        /// Model output path (JSON).
        #[arg(long)]
        out: PathBuf,
        /// Also write per-sample scores for the inputs.
        #[arg(long)]
        scores: Option<PathBuf>,
    },
    /// Max-min pool per-frame region descriptors over time.
    Pool {
        /// Descriptor file (id region frame dim values).
        #[arg(long)]
        input: PathBuf,
        /// Output path. Without --region: pooled vectors in descriptor
        /// format (frame 0). With --region: a feature file for that
        /// region, labeled from --skeletons.
        #[arg(long)]
        out: PathBuf,
        /// Keep only this region and emit a labeled feature file.
        #[arg(long)]
        region: Option<usize>,
        /// Skeleton file supplying labels (required with --region).
        #[arg(long)]
        skeletons: Option<PathBuf>,
    },
    /// Pick the region with the best cross-validated accuracy.
    SelectRegion {
        /// Descriptor file.
        #[arg(long)]
        input: PathBuf,
        /// Skeleton file supplying labels; only samples listed here are
        /// consulted, so pass the training split.
        #[arg(long)]
        skeletons: PathBuf,
    },
    /// Fuse score files into predictions.
    Fuse {
        /// Two or more score files.
        #[arg(long, required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        /// Prediction output file.
        #[arg(long)]
        out: PathBuf,
        /// Skeleton file supplying true labels for the summary line.
        #[arg(long)]
        skeletons: Option<PathBuf>,
    },
    /// Recount accuracy from a prediction file.
    Evaluate {
        /// Prediction file with labels.
        #[arg(long)]
        input: PathBuf,
    },
    /// Run the full ablation benchmark.
    Benchmark {
        /// Output directory for reports, predictions and checkpoints.
        #[arg(long)]
        out: PathBuf,
        /// Seeds, one benchmark repetition each.
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
    },
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig, Error> {
    let Some(path) = path else {
        return Ok(PipelineConfig::default());
    };
    let text = std::fs::read_to_string(path)?;
    let config: PipelineConfig =
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    config.validate()?;
    Ok(config)
}

fn labels_from_skeletons(path: &Path) -> Result<BTreeMap<String, usize>, Error> {
    Ok(read_skeleton_file(path)?
        .into_iter()
        .map(|s| (s.id, s.label))
        .collect())
}

fn run(cli: Cli) -> Result<(), Error> {
    let mut config = load_config(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        config.synth.seed = seed;
        config.descriptors.seed = seed;
        config.train.seed = seed;
        config.svm.seed = seed;
        config.selection.seed = seed;
    }

    match cli.command {
        Command::GenSynth { out } => {
            std::fs::create_dir_all(&out)?;
            let samples = generate(&config.synth)?;
            let descriptors = generate_descriptors(&samples, &config.descriptors)?;
            write_skeleton_file(&out.join("skeletons.jsonl"), &samples)?;
            write_stream(&out.join("regions.desc"), &descriptors)?;
            println!(
                "gen-synth: {} samples, {} classes, {} descriptor lines -> {}",
                samples.len(),
                config.synth.classes,
                descriptors.len(),
                out.display()
            );
        }
        Command::Normalize { input, out } => {
            let samples = read_skeleton_file(&input)?;
            let mut normalized = Vec::with_capacity(samples.len());
            for s in &samples {
                normalized.push(normalize_sequence(
                    s,
                    &config.normalize.roles,
                    config.normalize.mode,
                    config.normalize.target_frames,
                )?);
            }
            write_normalized_file(&out, &normalized)?;
            println!(
                "normalize: {} sequences at T={} -> {}",
                normalized.len(),
                config.normalize.target_frames,
                out.display()
            );
        }
        Command::TrainLstm { input, out } => {
            let dataset = read_normalized_file(&input)?;
            let (params, log) = train(&dataset, &config.train)?;
            save_checkpoint(&out, &params, &config.train)?;
            let last = log.last().expect("train always logs at least one epoch");
            println!(
                "train-lstm: {} epochs, final loss {:.6}, train accuracy {:.4} -> {}",
                log.len(),
                last.mean_loss,
                last.train_accuracy,
                out.display()
            );
        }
        Command::Extract { input, model, out } => {
            let dataset = read_normalized_file(&input)?;
            let ckpt = load_checkpoint(&model)?;
            let mut records = Vec::with_capacity(dataset.len());
            for seq in &dataset {
                let latents = extract_latents(seq, &ckpt.params)?;
                records.push(FeatureRecord {
                    id: seq.id.clone(),
                    label: seq.label,
                    layout: config.layout.tag().to_string(),
                    vector: to_classifier_vector(&latents, config.layout)?,
                });
            }
            write_feature_file(&out, &records)?;
            println!(
                "extract: {} vectors, layout {}, dim {} -> {}",
                records.len(),
                config.layout.tag(),
                records.first().map_or(0, |r| r.vector.len()),
                out.display()
            );
        }
        Command::TrainSvm { input, out, scores } => {
            let records = skelseq_core::latent::read_feature_file(&input)?;
            if records.is_empty() {
                return Err(Error::Argument("empty feature file".into()));
            }
            let features: Vec<Vec<f64>> = records.iter().map(|r| r.vector.clone()).collect();
            let labels: Vec<usize> = records.iter().map(|r| r.label).collect();
            let c_reg = if config.svm.c_grid.is_empty() {
                config.svm.c_reg
            } else {
                select_c_reg(
                    &features,
                    &labels,
                    &config.svm.c_grid,
                    config.svm.cv_folds,
                    config.svm.epochs,
                    config.svm.seed,
                )?
            };
            let model = train_ovr(&features, &labels, c_reg, config.svm.epochs, config.svm.seed)?;
            save_model(&out, &model)?;
            if let Some(scores_path) = scores {
                let mut out_scores = Vec::with_capacity(records.len());
                for r in &records {
                    out_scores.push(predict_scores(&model, &r.vector, &r.id, "svm")?);
                }
                write_score_file(&scores_path, &out_scores)?;
            }
            let acc = skelseq_core::svm::accuracy(&model, &features, &labels)?;
            println!(
                "train-svm: {} samples, C={c_reg}, train accuracy {:.4} -> {}",
                records.len(),
                acc,
                out.display()
            );
        }
        Command::Pool { input, out, region, skeletons } => {
            let stream = load_stream(&input)?;
            let pooled = pool_stream(&stream)?;
            match region {
                None => {
                    let as_frames: Vec<RegionFrameDescriptor> = pooled
                        .iter()
                        .map(|p| RegionFrameDescriptor {
                            sample_id: p.sample_id.clone(),
                            region: p.region,
                            frame: 0,
                            vector: p.vector.clone(),
                        })
                        .collect();
                    write_stream(&out, &as_frames)?;
                    println!(
                        "pool: {} pooled vectors (dim {}) -> {}",
                        as_frames.len(),
                        2 * stream.dim,
                        out.display()
                    );
                }
                Some(region) => {
                    let skeletons = skeletons.ok_or_else(|| {
                        Error::Argument("--region needs --skeletons for labels".into())
                    })?;
                    let labels = labels_from_skeletons(&skeletons)?;
                    let mut records = Vec::new();
                    for p in pooled.iter().filter(|p| p.region == region) {
                        let label = *labels.get(&p.sample_id).ok_or_else(|| {
                            Error::Alignment(format!("no label for sample {}", p.sample_id))
                        })?;
                        records.push(FeatureRecord {
                            id: p.sample_id.clone(),
                            label,
                            layout: "maxmin".into(),
                            vector: p.vector.clone(),
                        });
                    }
                    if records.is_empty() {
                        return Err(Error::Argument(format!("no descriptors for region {region}")));
                    }
                    write_feature_file(&out, &records)?;
                    println!(
                        "pool: region {region}, {} feature vectors -> {}",
                        records.len(),
                        out.display()
                    );
                }
            }
        }
        Command::SelectRegion { input, skeletons } => {
            let stream = load_stream(&input)?;
            let pooled = pool_stream(&stream)?;
            let labels = labels_from_skeletons(&skeletons)?;
            let selection = select_best_region(&pooled, &labels, &config.selection)?;
            for (region, acc) in &selection.accuracies {
                println!("region {region}: cv accuracy {acc:.4}");
            }
            println!("select-region: chose region {}", selection.chosen);
        }
        Command::Fuse { inputs, out, skeletons } => {
            let mut streams = Vec::with_capacity(inputs.len());
            for path in &inputs {
                streams.push(read_score_file(path)?);
            }
            let labels = match skeletons {
                Some(path) => labels_from_skeletons(&path)?,
                None => BTreeMap::new(),
            };
            let predictions = fuse_streams(&streams, &labels, &config.fusion)?;
            write_prediction_file(&out, &predictions)?;
            match prediction_accuracy(&predictions) {
                Some(acc) => println!(
                    "fuse: {} streams, {} samples, accuracy {acc:.4} -> {}",
                    streams.len(),
                    predictions.len(),
                    out.display()
                ),
                None => println!(
                    "fuse: {} streams, {} samples (unlabeled) -> {}",
                    streams.len(),
                    predictions.len(),
                    out.display()
                ),
            }
        }
        Command::Evaluate { input } => {
            let predictions = read_prediction_file(&input)?;
            let acc = prediction_accuracy(&predictions)
                .ok_or_else(|| Error::Argument("prediction file carries no labels".into()))?;
            let labeled = predictions.iter().filter(|p| p.label.is_some()).count();
            println!("evaluate: {labeled} labeled samples, accuracy {acc:.4}");
        }
        Command::Benchmark { out, seeds } => {
            let settings = BenchSettings {
                synth: config.synth.clone(),
                descriptors: config.descriptors.clone(),
                train: config.train.clone(),
                layout: config.layout,
                svm_c_reg: config.svm.c_reg,
                svm_epochs: config.svm.epochs,
                selection_cv: config.selection,
                fusion: config.fusion.clone(),
                target_t: config.normalize.target_frames,
            };
            let report = run_benchmark(&settings, &default_cells(), &seeds, Some(&out))?;
            print!("{}", skelseq_core::benchrun::format_report(&report));
            println!(
                "benchmark: {} cells x {} seeds in {:.1}s -> {}",
                report.cells.len(),
                report.seeds.len(),
                report.runtime_secs,
                out.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_not_found() {
                ExitCode::from(2)
            } else if matches!(
                e,
                Error::Config(_)
                    | Error::Argument(_)
                    | Error::Parse(_)
                    | Error::Format(_)
                    | Error::Shape(_)
                    | Error::Dimension(_)
            ) {
                ExitCode::from(3)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
