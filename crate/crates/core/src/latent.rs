//! Latent-feature extraction: the top LSTM layer's hidden states over
//! time, reshaped for the linear classifier.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lstm::{forward_sequence, LstmParams};
use crate::normalize::NormalizedSequence;

/// Per-sample matrix of top-layer hidden states, one row per timestep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentFeatureMatrix {
    pub id: String,
    pub subject: i64,
    pub label: usize,
    /// rows[t] has the top layer's hidden dimension.
    pub rows: Vec<Vec<f64>>,
    pub mask: Vec<bool>,
}

impl LatentFeatureMatrix {
    pub fn hidden_dim(&self) -> usize {
        self.rows.first().map_or(0, |r| r.len())
    }
}

/// How the T × H matrix becomes a single classifier vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureLayout {
    /// Concatenate all T rows (padded rows stay zero); dimension T·H.
    FlattenTime,
    /// Mean of the unmasked rows; dimension H.
    MeanOverTime,
    /// Last unmasked row; dimension H.
    LastStep,
}

impl FeatureLayout {
    pub fn tag(&self) -> &'static str {
        match self {
            FeatureLayout::FlattenTime => "flatten-time",
            FeatureLayout::MeanOverTime => "mean-over-time",
            FeatureLayout::LastStep => "last-step",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "flatten-time" => Ok(FeatureLayout::FlattenTime),
            "mean-over-time" => Ok(FeatureLayout::MeanOverTime),
            "last-step" => Ok(FeatureLayout::LastStep),
            other => Err(Error::Format(format!("unknown layout tag {other:?}"))),
        }
    }
}

/// Run the stack in inference mode and keep the top layer's h_t.
pub fn extract_latents(
    seq: &NormalizedSequence,
    params: &LstmParams,
) -> Result<LatentFeatureMatrix> {
    let tape = forward_sequence(seq, params, 0.0, false, 0)?;
    let top = tape.records.len() - 1;
    let rows = tape.records[top].iter().map(|r| r.h.clone()).collect();
    Ok(LatentFeatureMatrix {
        id: seq.id.clone(),
        subject: seq.subject,
        label: seq.label,
        rows,
        mask: seq.mask.clone(),
    })
}

/// Shape the matrix into one feature vector under the chosen layout.
pub fn to_classifier_vector(m: &LatentFeatureMatrix, layout: FeatureLayout) -> Result<Vec<f64>> {
    if m.mask.iter().all(|&b| !b) {
        return Err(Error::EmptySequence(format!("sample {}: all rows masked", m.id)));
    }
    match layout {
        FeatureLayout::FlattenTime => Ok(m.rows.iter().flatten().copied().collect()),
        FeatureLayout::MeanOverTime => {
            let dim = m.hidden_dim();
            let mut acc = vec![0.0; dim];
            let mut count = 0usize;
            for (row, &real) in m.rows.iter().zip(&m.mask) {
                if !real {
                    continue;
                }
                for (a, v) in acc.iter_mut().zip(row) {
                    *a += v;
                }
                count += 1;
            }
            for a in &mut acc {
                *a /= count as f64;
            }
            Ok(acc)
        }
        FeatureLayout::LastStep => {
            let t = m.mask.iter().rposition(|&b| b).unwrap();
            Ok(m.rows[t].clone())
        }
    }
}

/// One labeled feature vector as stored in a feature dump file.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub id: String,
    pub label: usize,
    pub layout: String,
    pub vector: Vec<f64>,
}

/// Write feature vectors: `id label layout dim v1 .. vdim` per line.
pub fn write_feature_file(path: &Path, records: &[FeatureRecord]) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        write!(file, "{} {} {} {}", r.id, r.label, r.layout, r.vector.len())?;
        for v in &r.vector {
            write!(file, " {v}")?;
        }
        writeln!(file)?;
    }
    Ok(())
}

pub fn read_feature_file(path: &Path) -> Result<Vec<FeatureRecord>> {
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
        let label: usize = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format(format!("{}: bad label", loc())))?;
        let layout = it
            .next()
            .ok_or_else(|| Error::Format(format!("{}: missing layout", loc())))?
            .to_string();
        let dim: usize = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format(format!("{}: bad dimension", loc())))?;
        let vector: Vec<f64> = it
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Format(format!("{}: bad value: {e}", loc())))?;
        if vector.len() != dim {
            return Err(Error::Format(format!(
                "{}: declared dim {dim} but found {} values",
                loc(),
                vector.len()
            )));
        }
        if !vector.iter().all(|v| v.is_finite()) {
            return Err(Error::Format(format!("{}: non-finite value", loc())));
        }
        out.push(FeatureRecord { id, label, layout, vector });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lstm::LstmParams;

    fn matrix(rows: Vec<Vec<f64>>, mask: Vec<bool>) -> LatentFeatureMatrix {
        LatentFeatureMatrix { id: "m".into(), subject: 0, label: 0, rows, mask }
    }

    #[test]
    fn flatten_time_concatenates() {
        let m = matrix(vec![vec![1.0, 2.0], vec![3.0, 4.0]], vec![true, true]);
        let v = to_classifier_vector(&m, FeatureLayout::FlattenTime).unwrap();
        assert_eq!(v, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn mean_over_time_averages_unmasked() {
        let m = matrix(vec![vec![1.0, 2.0], vec![3.0, 4.0]], vec![true, true]);
        let v = to_classifier_vector(&m, FeatureLayout::MeanOverTime).unwrap();
        assert_eq!(v, vec![2.0, 3.0]);
    }

    #[test]
    fn last_step_respects_mask() {
        let m = matrix(vec![vec![1.0, 2.0], vec![9.0, 9.0]], vec![true, false]);
        let v = to_classifier_vector(&m, FeatureLayout::LastStep).unwrap();
        assert_eq!(v, vec![1.0, 2.0]);
    }

    #[test]
    fn all_masked_is_error() {
        let m = matrix(vec![vec![0.0]], vec![false]);
        assert!(matches!(
            to_classifier_vector(&m, FeatureLayout::MeanOverTime),
            Err(Error::EmptySequence(_))
        ));
    }

    #[test]
    fn mean_over_time_ignores_padding_amount() {
        let mut m = matrix(vec![vec![1.0], vec![3.0]], vec![true, true]);
        let base = to_classifier_vector(&m, FeatureLayout::MeanOverTime).unwrap();
        m.rows.push(vec![0.0]);
        m.rows.push(vec![0.0]);
        m.mask.extend([false, false]);
        let padded = to_classifier_vector(&m, FeatureLayout::MeanOverTime).unwrap();
        assert_eq!(base, padded);
    }

    fn toy_norm_seq(dim: usize, steps: usize) -> NormalizedSequence {
        NormalizedSequence {
            id: "x".into(),
            subject: 0,
            label: 1,
            vectors: (0..steps)
                .map(|t| (0..dim).map(|d| ((t * dim + d) as f64).sin()).collect())
                .collect(),
            mask: vec![true; steps],
        }
    }

    #[test]
    fn extract_zero_params_all_zero() {
        let mut params = LstmParams::init(4, &[3, 3], 2, 0).unwrap();
        for t in params.tensors_mut() {
            for v in t {
                *v = 0.0;
            }
        }
        let m = extract_latents(&toy_norm_seq(4, 5), &params).unwrap();
        assert_eq!(m.rows.len(), 5);
        assert!(m.rows.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn extract_matches_forward_tape_bit_exactly() {
        let params = LstmParams::init(4, &[3, 8], 2, 3).unwrap();
        let seq = toy_norm_seq(4, 5);
        let m = extract_latents(&seq, &params).unwrap();
        assert_eq!(m.hidden_dim(), 8);
        let tape = crate::lstm::forward_sequence(&seq, &params, 0.0, false, 0).unwrap();
        for (t, row) in m.rows.iter().enumerate() {
            assert_eq!(row, &tape.records[1][t].h);
        }
        // inference determinism
        let m2 = extract_latents(&seq, &params).unwrap();
        assert_eq!(m, m2);
    }

    #[test]
    fn feature_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.features");
        let records = vec![
            FeatureRecord {
                id: "a".into(),
                label: 2,
                layout: "flatten-time".into(),
                vector: vec![1.5, -2.25, 0.0],
            },
            FeatureRecord {
                id: "b".into(),
                label: 0,
                layout: "flatten-time".into(),
                vector: vec![0.125, 3.0, 4.5],
            },
        ];
        write_feature_file(&path, &records).unwrap();
        let back = read_feature_file(&path).unwrap();
        assert_eq!(records, back);
    }

    #[test]
    fn feature_file_dim_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.features");
        std::fs::write(&path, "a 0 flatten-time 3 1.0 2.0\n").unwrap();
        assert!(matches!(read_feature_file(&path), Err(Error::Format(_))));
    }
}
