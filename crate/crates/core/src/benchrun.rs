//! Ablation benchmark harness over synthetic data.
//!
//! Runs the full pipeline per (configuration, seed) cell: generate,
//! cross-subject split, normalize, train, classify, and optionally pool
//! regions, select and fuse. Emits a plain-text table plus a
//! line-delimited machine-readable report; all emitted files are a pure
//! function of the configuration and seed.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{fuse_streams, prediction_accuracy, write_prediction_file, FusionConfig, Prediction};
use crate::latent::{extract_latents, to_classifier_vector, FeatureLayout};
use crate::lstm::{save_checkpoint, train, LossMode, LstmParams, TrainConfig};
use crate::normalize::{normalize_sequence, NormalizeMode, NormalizedSequence};
use crate::region::{pool_stream, select_best_region, DescriptorStream, PooledVideoDescriptor, SelectionCvConfig};
use crate::skeleton::{cross_subject_split, SkeletonSequence};
use crate::svm::{predict_scores, train_ovr, ClassScores};
use crate::synth::{generate, generate_descriptors, SynthDescriptorSpec, SynthSpec};

/// What a benchmark cell runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PipelineVariant {
    /// Skeleton stream: LSTM latents → linear SVM.
    SkeletonLstm,
    /// Region stream with cross-validated region selection.
    RegionsSelected,
    /// Region stream forced to concatenate all regions.
    RegionsConcat,
    /// Late fusion of the skeleton stream and the selected region stream.
    Fused,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchCell {
    pub name: String,
    pub variant: PipelineVariant,
    /// Used by SkeletonLstm and Fused.
    pub loss_mode: LossMode,
    /// Latent feature layout override; `None` uses the settings layout.
    #[serde(default)]
    pub layout: Option<FeatureLayout>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellOutcome {
    pub name: String,
    /// (seed, held-out accuracy)
    pub per_seed: Vec<(u64, f64)>,
    pub mean_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub cells: Vec<CellOutcome>,
    pub seeds: Vec<u64>,
    /// Wall-clock seconds; excluded from emitted files so reruns with the
    /// same seed stay byte-identical.
    #[serde(skip)]
    pub runtime_secs: f64,
}

/// Everything a benchmark run needs besides the cells and seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchSettings {
    pub synth: SynthSpec,
    pub descriptors: SynthDescriptorSpec,
    pub train: TrainConfig,
    pub layout: FeatureLayout,
    pub svm_c_reg: f64,
    pub svm_epochs: usize,
    pub selection_cv: SelectionCvConfig,
    pub fusion: FusionConfig,
    pub target_t: usize,
}

impl Default for BenchSettings {
    fn default() -> Self {
        BenchSettings {
            synth: SynthSpec::default(),
            descriptors: SynthDescriptorSpec::default(),
            train: TrainConfig {
                hidden: vec![32, 32, 32],
                epochs: 60,
                dropout: 0.0,
                batch_size: 8,
                ..TrainConfig::default()
            },
            layout: FeatureLayout::FlattenTime,
            svm_c_reg: 1.0,
            svm_epochs: 120,
            selection_cv: SelectionCvConfig::default(),
            fusion: FusionConfig::default(),
            target_t: 0, // 0 = frames_max of the synth spec
        }
    }
}

/// The default cell grid mirroring the three ablation comparisons.
pub fn default_cells() -> Vec<BenchCell> {
    vec![
        BenchCell {
            name: "traditional-lstm".into(),
            variant: PipelineVariant::SkeletonLstm,
            loss_mode: LossMode::ManyToOne,
            // the final-step-loss baseline classifies on its last hidden state
            layout: Some(FeatureLayout::LastStep),
        },
        BenchCell {
            name: "deep-temporal-lstm".into(),
            variant: PipelineVariant::SkeletonLstm,
            loss_mode: LossMode::ManyToMany,
            layout: None,
        },
        BenchCell {
            name: "regions-concat".into(),
            variant: PipelineVariant::RegionsConcat,
            loss_mode: LossMode::ManyToMany,
            layout: None,
        },
        BenchCell {
            name: "regions-selected".into(),
            variant: PipelineVariant::RegionsSelected,
            loss_mode: LossMode::ManyToMany,
            layout: None,
        },
        BenchCell {
            name: "fused".into(),
            variant: PipelineVariant::Fused,
            loss_mode: LossMode::ManyToMany,
            layout: None,
        },
    ]
}

struct SeedContext {
    samples: Vec<SkeletonSequence>,
    normalized: BTreeMap<String, NormalizedSequence>,
    train_ids: BTreeSet<String>,
    test_ids: BTreeSet<String>,
    labels: BTreeMap<String, usize>,
    lstm_by_mode: BTreeMap<String, LstmParams>,
    skeleton_scores_by_mode: BTreeMap<String, Vec<ClassScores>>,
    pooled: Option<Vec<PooledVideoDescriptor>>,
    selected_region: Option<usize>,
    region_scores: Option<Vec<ClassScores>>,
}

fn mode_key(mode: LossMode) -> String {
    match mode {
        LossMode::ManyToMany => "many-to-many".into(),
        LossMode::ManyToOne => "many-to-one".into(),
    }
}

fn svm_scores_on_test(
    features: &BTreeMap<String, Vec<f64>>,
    ctx_labels: &BTreeMap<String, usize>,
    train_ids: &BTreeSet<String>,
    test_ids: &BTreeSet<String>,
    c_reg: f64,
    epochs: usize,
    seed: u64,
    producer: &str,
) -> Result<Vec<ClassScores>> {
    let mut train_x = Vec::new();
    let mut train_y = Vec::new();
    for id in train_ids {
        train_x.push(features[id].clone());
        train_y.push(ctx_labels[id]);
    }
    let model = train_ovr(&train_x, &train_y, c_reg, epochs, seed)?;
    let mut out = Vec::new();
    for id in test_ids {
        out.push(predict_scores(&model, &features[id], id, producer)?);
    }
    Ok(out)
}

fn predictions_from_scores(
    scores: &[ClassScores],
    labels: &BTreeMap<String, usize>,
) -> Vec<Prediction> {
    scores
        .iter()
        .map(|s| Prediction {
            id: s.id.clone(),
            predicted: s.predicted_label(),
            label: labels.get(&s.id).copied(),
            scores: s.scores.clone(),
        })
        .collect()
}

fn build_context(settings: &BenchSettings, seed: u64) -> Result<SeedContext> {
    let synth = SynthSpec { seed, ..settings.synth.clone() };
    let samples = generate(&synth)?;
    let roles = synth.roles();
    let target_t = if settings.target_t > 0 { settings.target_t } else { synth.frames_max };

    let test_subjects: BTreeSet<i64> = BTreeSet::from([synth.subjects as i64]);
    let split = cross_subject_split(&samples, &test_subjects)?;
    let train_ids: BTreeSet<String> = split.train.into_iter().collect();
    let test_ids: BTreeSet<String> = split.test.into_iter().collect();

    let mut normalized = BTreeMap::new();
    let mut labels = BTreeMap::new();
    for s in &samples {
        let norm = normalize_sequence(s, &roles, NormalizeMode::PerFrame, target_t)?;
        labels.insert(s.id.clone(), s.label);
        normalized.insert(s.id.clone(), norm);
    }
    Ok(SeedContext {
        samples,
        normalized,
        train_ids,
        test_ids,
        labels,
        lstm_by_mode: BTreeMap::new(),
        skeleton_scores_by_mode: BTreeMap::new(),
        pooled: None,
        selected_region: None,
        region_scores: None,
    })
}

fn score_key(mode: LossMode, layout: FeatureLayout) -> String {
    format!("{}/{}", mode_key(mode), layout.tag())
}

fn ensure_skeleton_scores(
    ctx: &mut SeedContext,
    settings: &BenchSettings,
    mode: LossMode,
    layout: FeatureLayout,
    seed: u64,
) -> Result<()> {
    let key = score_key(mode, layout);
    if ctx.skeleton_scores_by_mode.contains_key(&key) {
        return Ok(());
    }
    // one LSTM per loss mode; layouts only reshape its latents
    if !ctx.lstm_by_mode.contains_key(&mode_key(mode)) {
        let config = TrainConfig { loss_mode: mode, seed, ..settings.train.clone() };
        let train_set: Vec<NormalizedSequence> =
            ctx.train_ids.iter().map(|id| ctx.normalized[id].clone()).collect();
        let (params, _log) = train(&train_set, &config)?;
        ctx.lstm_by_mode.insert(mode_key(mode), params);
    }
    let params = &ctx.lstm_by_mode[&mode_key(mode)];

    let mut features = BTreeMap::new();
    for (id, seq) in &ctx.normalized {
        let latents = extract_latents(seq, params)?;
        features.insert(id.clone(), to_classifier_vector(&latents, layout)?);
    }
    let scores = svm_scores_on_test(
        &features,
        &ctx.labels,
        &ctx.train_ids,
        &ctx.test_ids,
        settings.svm_c_reg,
        settings.svm_epochs,
        seed,
        &format!("svm-latent-{}", mode_key(mode)),
    )?;
    ctx.skeleton_scores_by_mode.insert(key, scores);
    Ok(())
}

fn ensure_regions(ctx: &mut SeedContext, settings: &BenchSettings, seed: u64) -> Result<()> {
    if ctx.pooled.is_some() {
        return Ok(());
    }
    let dspec = SynthDescriptorSpec { seed, ..settings.descriptors.clone() };
    let descs = generate_descriptors(&ctx.samples, &dspec)?;
    let mut stream = DescriptorStream::default();
    stream.dim = dspec.dim;
    for d in descs {
        stream.groups.entry((d.sample_id.clone(), d.region)).or_default().push(d);
    }
    ctx.pooled = Some(pool_stream(&stream)?);
    Ok(())
}

fn ensure_region_scores(
    ctx: &mut SeedContext,
    settings: &BenchSettings,
    seed: u64,
) -> Result<()> {
    if ctx.region_scores.is_some() {
        return Ok(());
    }
    ensure_regions(ctx, settings, seed)?;
    let pooled = ctx.pooled.as_ref().unwrap();
    // leakage guard: selection sees training labels only
    let train_labels: BTreeMap<String, usize> = ctx
        .labels
        .iter()
        .filter(|(id, _)| ctx.train_ids.contains(*id))
        .map(|(id, &l)| (id.clone(), l))
        .collect();
    let cv = SelectionCvConfig { seed, ..settings.selection_cv };
    let selection = select_best_region(pooled, &train_labels, &cv)?;
    let chosen = selection.chosen;

    let features: BTreeMap<String, Vec<f64>> = pooled
        .iter()
        .filter(|p| p.region == chosen)
        .map(|p| (p.sample_id.clone(), p.vector.clone()))
        .collect();
    let scores = svm_scores_on_test(
        &features,
        &ctx.labels,
        &ctx.train_ids,
        &ctx.test_ids,
        settings.svm_c_reg,
        settings.svm_epochs,
        seed,
        "svm-region-selected",
    )?;
    ctx.selected_region = Some(chosen);
    ctx.region_scores = Some(scores);
    Ok(())
}

fn run_cell(
    ctx: &mut SeedContext,
    settings: &BenchSettings,
    cell: &BenchCell,
    seed: u64,
) -> Result<Vec<Prediction>> {
    let layout = cell.layout.unwrap_or(settings.layout);
    match cell.variant {
        PipelineVariant::SkeletonLstm => {
            ensure_skeleton_scores(ctx, settings, cell.loss_mode, layout, seed)?;
            let scores = &ctx.skeleton_scores_by_mode[&score_key(cell.loss_mode, layout)];
            Ok(predictions_from_scores(scores, &ctx.labels))
        }
        PipelineVariant::RegionsSelected => {
            ensure_region_scores(ctx, settings, seed)?;
            Ok(predictions_from_scores(ctx.region_scores.as_ref().unwrap(), &ctx.labels))
        }
        PipelineVariant::RegionsConcat => {
            ensure_regions(ctx, settings, seed)?;
            let pooled = ctx.pooled.as_ref().unwrap();
            let mut features: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            // regions are pooled in ascending order per sample
            for p in pooled {
                features.entry(p.sample_id.clone()).or_default().extend(p.vector.iter());
            }
            let scores = svm_scores_on_test(
                &features,
                &ctx.labels,
                &ctx.train_ids,
                &ctx.test_ids,
                settings.svm_c_reg,
                settings.svm_epochs,
                seed,
                "svm-region-concat",
            )?;
            Ok(predictions_from_scores(&scores, &ctx.labels))
        }
        PipelineVariant::Fused => {
            ensure_skeleton_scores(ctx, settings, cell.loss_mode, layout, seed)?;
            ensure_region_scores(ctx, settings, seed)?;
            let skeleton = ctx.skeleton_scores_by_mode[&score_key(cell.loss_mode, layout)].clone();
            let region = ctx.region_scores.as_ref().unwrap().clone();
            fuse_streams(&[skeleton, region], &ctx.labels, &settings.fusion)
        }
    }
}

/// Run every (cell, seed) and assemble the report. When `out_dir` is
/// given, per-cell prediction files, checkpoints, `report.txt` and
/// `report.jsonl` are written there.
pub fn run_benchmark(
    settings: &BenchSettings,
    cells: &[BenchCell],
    seeds: &[u64],
    out_dir: Option<&Path>,
) -> Result<BenchmarkReport> {
    if seeds.is_empty() {
        return Err(Error::Argument("need at least one seed".into()));
    }
    if cells.is_empty() {
        return Err(Error::Argument("need at least one cell".into()));
    }
    let started = Instant::now();
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }

    let mut outcomes: Vec<CellOutcome> = cells
        .iter()
        .map(|c| CellOutcome { name: c.name.clone(), per_seed: Vec::new(), mean_accuracy: 0.0 })
        .collect();

    for &seed in seeds {
        let mut ctx = build_context(settings, seed)?;
        for (cell, outcome) in cells.iter().zip(&mut outcomes) {
            let predictions = run_cell(&mut ctx, settings, cell, seed)?;
            let acc = prediction_accuracy(&predictions)
                .ok_or_else(|| Error::Consistency("no labeled predictions".into()))?;
            outcome.per_seed.push((seed, acc));
            if let Some(dir) = out_dir {
                let path = dir.join(format!("{}_seed{}.pred", cell.name, seed));
                write_prediction_file(&path, &predictions)?;
            }
        }
        if let Some(dir) = out_dir {
            for (key, params) in &ctx.lstm_by_mode {
                let config = TrainConfig { seed, ..settings.train.clone() };
                save_checkpoint(&dir.join(format!("lstm_{key}_seed{seed}.ckpt")), params, &config)?;
            }
        }
    }

    for outcome in &mut outcomes {
        outcome.mean_accuracy =
            outcome.per_seed.iter().map(|&(_, a)| a).sum::<f64>() / outcome.per_seed.len() as f64;
    }
    let report = BenchmarkReport {
        cells: outcomes,
        seeds: seeds.to_vec(),
        runtime_secs: started.elapsed().as_secs_f64(),
    };
    if let Some(dir) = out_dir {
        std::fs::write(dir.join("report.txt"), format_report(&report))?;
        let mut jsonl = std::io::BufWriter::new(std::fs::File::create(dir.join("report.jsonl"))?);
        for cell in &report.cells {
            let line = serde_json::to_string(cell)
                .map_err(|e| Error::Format(format!("report serialize: {e}")))?;
            writeln!(jsonl, "{line}")?;
        }
    }
    Ok(report)
}

/// Plain-text table in the two-column method/accuracy layout.
pub fn format_report(report: &BenchmarkReport) -> String {
    let mut out = String::new();
    let width = report.cells.iter().map(|c| c.name.len()).max().unwrap_or(6).max(6);
    out.push_str(&format!("{:<width$}  {:>12}  per-seed [%]\n", "Method", "Accuracy [%]"));
    for cell in &report.cells {
        let per_seed: Vec<String> =
            cell.per_seed.iter().map(|&(_, a)| format!("{:.2}", a * 100.0)).collect();
        out.push_str(&format!(
            "{:<width$}  {:>12.2}  {}\n",
            cell.name,
            cell.mean_accuracy * 100.0,
            per_seed.join(" ")
        ));
    }
    out
}

/// Cells for the loss-mode comparison only (skeleton stream).
pub fn loss_mode_cells() -> Vec<BenchCell> {
    default_cells().into_iter().take(2).collect()
}
