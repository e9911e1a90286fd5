//! Late fusion of per-classifier score streams.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::softmax;
use crate::svm::{argmax, ClassScores};

/// Per-stream scale alignment applied before the weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreNorm {
    Softmax,
    MinMax,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    /// One weight per stream; empty means equal weights.
    pub weights: Vec<f64>,
    pub normalization: ScoreNorm,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig { weights: Vec::new(), normalization: ScoreNorm::Softmax }
    }
}

impl FusionConfig {
    pub fn validate(&self, streams: usize) -> Result<()> {
        if !self.weights.is_empty() {
            if self.weights.len() != streams {
                return Err(Error::Shape(format!(
                    "{} weights for {streams} streams",
                    self.weights.len()
                )));
            }
            if self.weights.iter().any(|&w| w < 0.0) {
                return Err(Error::Config("fusion weights must be ≥ 0".into()));
            }
            if self.weights.iter().sum::<f64>() <= 0.0 {
                return Err(Error::Config("fusion weights must not all be zero".into()));
            }
        }
        Ok(())
    }
}

/// Rescale one score vector. Softmax uses max-subtraction; min-max maps
/// an all-equal vector to the uniform 1/C.
pub fn normalize_scores(s: &ClassScores, mode: ScoreNorm) -> ClassScores {
    let scores = match mode {
        ScoreNorm::None => s.scores.clone(),
        ScoreNorm::Softmax => softmax(&s.scores),
        ScoreNorm::MinMax => {
            let min = s.scores.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = s.scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if max - min <= 0.0 {
                vec![1.0 / s.scores.len() as f64; s.scores.len()]
            } else {
                s.scores.iter().map(|v| (v - min) / (max - min)).collect()
            }
        }
    };
    ClassScores { id: s.id.clone(), producer: s.producer.clone(), scores }
}

/// Weighted sum of normalized streams for one sample. Returns the fused
/// scores and the argmax label (lowest index on ties).
pub fn fuse(streams: &[ClassScores], config: &FusionConfig) -> Result<(ClassScores, usize)> {
    if streams.is_empty() {
        return Err(Error::Argument("fuse: no streams".into()));
    }
    config.validate(streams.len())?;
    let classes = streams[0].scores.len();
    if streams.iter().any(|s| s.scores.len() != classes) {
        return Err(Error::Shape("fuse: class-count mismatch across streams".into()));
    }
    if streams.iter().any(|s| s.id != streams[0].id) {
        return Err(Error::Alignment(format!(
            "fuse: sample ids differ across streams for {}",
            streams[0].id
        )));
    }
    let weights: Vec<f64> = if config.weights.is_empty() {
        vec![1.0; streams.len()]
    } else {
        config.weights.clone()
    };
    let total: f64 = weights.iter().sum();
    let mut fused = vec![0.0; classes];
    for (s, &w) in streams.iter().zip(&weights) {
        let n = normalize_scores(s, config.normalization);
        for (f, v) in fused.iter_mut().zip(&n.scores) {
            *f += w * v / total;
        }
    }
    let label = argmax(&fused);
    Ok((
        ClassScores { id: streams[0].id.clone(), producer: "fused".into(), scores: fused },
        label,
    ))
}

/// One line of a prediction file.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub id: String,
    pub predicted: usize,
    /// True label when known.
    pub label: Option<usize>,
    pub scores: Vec<f64>,
}

/// Fuse every sample across named score streams. Each stream is a list
/// of per-sample scores; samples are matched by id and every stream must
/// cover every sample.
pub fn fuse_streams(
    streams: &[Vec<ClassScores>],
    labels: &BTreeMap<String, usize>,
    config: &FusionConfig,
) -> Result<Vec<Prediction>> {
    if streams.is_empty() {
        return Err(Error::Argument("fuse_streams: no streams".into()));
    }
    let mut by_id: BTreeMap<&String, Vec<&ClassScores>> = BTreeMap::new();
    for stream in streams {
        for s in stream {
            by_id.entry(&s.id).or_default().push(s);
        }
    }
    let mut out = Vec::with_capacity(by_id.len());
    for (id, entries) in by_id {
        if entries.len() != streams.len() {
            return Err(Error::Alignment(format!(
                "sample {id}: present in {} of {} streams",
                entries.len(),
                streams.len()
            )));
        }
        let owned: Vec<ClassScores> = entries.into_iter().cloned().collect();
        let (fused, predicted) = fuse(&owned, config)?;
        out.push(Prediction {
            id: id.clone(),
            predicted,
            label: labels.get(id).copied(),
            scores: fused.scores,
        });
    }
    Ok(out)
}

/// Fraction of labeled predictions that are correct; None when no labels.
pub fn prediction_accuracy(predictions: &[Prediction]) -> Option<f64> {
    let labeled: Vec<&Prediction> = predictions.iter().filter(|p| p.label.is_some()).collect();
    if labeled.is_empty() {
        return None;
    }
    let correct = labeled.iter().filter(|p| p.label == Some(p.predicted)).count();
    Some(correct as f64 / labeled.len() as f64)
}

/// Write predictions: `id predicted label|- s1 .. sC` per line.
pub fn write_prediction_file(path: &Path, predictions: &[Prediction]) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for p in predictions {
        match p.label {
            Some(l) => write!(file, "{} {} {}", p.id, p.predicted, l)?,
            None => write!(file, "{} {} -", p.id, p.predicted)?,
        }
        for v in &p.scores {
            write!(file, " {v}")?;
        }
        writeln!(file)?;
    }
    Ok(())
}

pub fn read_prediction_file(path: &Path) -> Result<Vec<Prediction>> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let loc = || format!("{}:{}", path.display(), n + 1);
        let mut it = line.split_whitespace();
        let id = it
            .next()
            .ok_or_else(|| Error::Format(format!("{}: missing id", loc())))?
            .to_string();
        let predicted: usize = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format(format!("{}: bad predicted label", loc())))?;
        let label_tok = it
            .next()
            .ok_or_else(|| Error::Format(format!("{}: missing label column", loc())))?;
        let label = if label_tok == "-" {
            None
        } else {
            Some(
                label_tok
                    .parse()
                    .map_err(|_| Error::Format(format!("{}: bad label", loc())))?,
            )
        };
        let scores: Vec<f64> = it
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Format(format!("{}: bad score: {e}", loc())))?;
        out.push(Prediction { id, predicted, label, scores });
    }
    Ok(out)
}
