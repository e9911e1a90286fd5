//! Skeleton dataset parsing, validation, padding and splitting.
//!
//! The canonical on-disk format is line-delimited JSON: one sample per
//! line with fields `id`, `subject`, `label` and `frames` (T × J × 3).
//! JSON has no NaN/Inf literals, so non-finite coordinates cannot round
//! trip; we additionally validate finiteness after parsing.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which joint indices play the anatomical roles needed for view
/// normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointRoleMap {
    pub hip_center: usize,
    pub hip_left: usize,
    pub hip_right: usize,
    pub spine_base: usize,
    pub spine: usize,
    pub joint_count: usize,
}

impl JointRoleMap {
    /// Default layout for 20-joint skeletons (first-generation depth
    /// sensors). Overridable configuration, not ground truth.
    pub fn kinect20() -> Self {
        JointRoleMap {
            hip_center: 0,
            spine_base: 1,
            spine: 2,
            hip_left: 12,
            hip_right: 16,
            joint_count: 20,
        }
    }

    /// Default layout for 25-joint skeletons.
    pub fn kinect25() -> Self {
        JointRoleMap {
            hip_center: 0,
            spine_base: 1,
            spine: 20,
            hip_left: 12,
            hip_right: 16,
            joint_count: 25,
        }
    }

    pub fn role_indices(&self) -> [usize; 5] {
        [self.hip_center, self.hip_left, self.hip_right, self.spine_base, self.spine]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, idx) in [
            ("hip_center", self.hip_center),
            ("hip_left", self.hip_left),
            ("hip_right", self.hip_right),
            ("spine_base", self.spine_base),
            ("spine", self.spine),
        ] {
            if idx >= self.joint_count {
                return Err(Error::Config(format!(
                    "role {name} index {idx} out of range for {} joints",
                    self.joint_count
                )));
            }
        }
        let mut seen = BTreeSet::new();
        for idx in self.role_indices() {
            if !seen.insert(idx) {
                return Err(Error::Config(format!("duplicate role index {idx}")));
            }
        }
        Ok(())
    }
}

/// One recorded sample: T frames of J joints in sensor coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonSequence {
    pub id: String,
    pub subject: i64,
    pub label: usize,
    /// frames[t][j] = (x, y, z)
    pub frames: Vec<Vec<[f64; 3]>>,
}

impl SkeletonSequence {
    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn joint_count(&self) -> usize {
        self.frames.first().map_or(0, |f| f.len())
    }

    fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::Parse(format!("sample {}: no frames", self.id)));
        }
        let j = self.frames[0].len();
        if j == 0 {
            return Err(Error::Parse(format!("sample {}: frame 0 has no joints", self.id)));
        }
        for (t, frame) in self.frames.iter().enumerate() {
            if frame.len() != j {
                return Err(Error::Dimension(format!(
                    "sample {}: frame {t} has {} joints, expected {j}",
                    self.id,
                    frame.len()
                )));
            }
            for (r, joint) in frame.iter().enumerate() {
                if !joint.iter().all(|v| v.is_finite()) {
                    return Err(Error::Parse(format!(
                        "sample {}: non-finite coordinate at frame {t}, joint {r}",
                        self.id
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Cross-subject train/test partition over sample ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// Parse one line of the canonical skeleton format.
pub fn parse_sequence(line: &str) -> Result<SkeletonSequence> {
    let seq: SkeletonSequence = serde_json::from_str(line)
        .map_err(|e| Error::Parse(format!("bad skeleton record: {e}")))?;
    seq.validate()?;
    Ok(seq)
}

/// Serialize one sample to its canonical single-line form.
pub fn serialize_sequence(seq: &SkeletonSequence) -> Result<String> {
    seq.validate()?;
    serde_json::to_string(seq).map_err(|e| Error::Format(format!("serialize: {e}")))
}

/// Check that every role index of `roles` is valid for `seq`.
pub fn validate_roles(seq: &SkeletonSequence, roles: &JointRoleMap) -> Result<()> {
    roles.validate()?;
    let j = seq.joint_count();
    if roles.joint_count != j {
        return Err(Error::Config(format!(
            "role map expects {} joints, sample {} has {j}",
            roles.joint_count, seq.id
        )));
    }
    Ok(())
}

/// Pad with zero vectors (mask false) or keep the first `target_t` frames.
pub fn pad_or_truncate(
    frames: &[Vec<f64>],
    target_t: usize,
) -> Result<(Vec<Vec<f64>>, Vec<bool>)> {
    if target_t == 0 {
        return Err(Error::Argument("target_t must be positive".into()));
    }
    if frames.is_empty() {
        return Err(Error::Argument("pad_or_truncate needs at least one frame".into()));
    }
    let dim = frames[0].len();
    let real = frames.len().min(target_t);
    let mut out = Vec::with_capacity(target_t);
    let mut mask = Vec::with_capacity(target_t);
    for frame in frames.iter().take(real) {
        out.push(frame.clone());
        mask.push(true);
    }
    for _ in real..target_t {
        out.push(vec![0.0; dim]);
        mask.push(false);
    }
    Ok((out, mask))
}

/// Partition samples by subject id.
pub fn cross_subject_split(
    samples: &[SkeletonSequence],
    test_subjects: &BTreeSet<i64>,
) -> Result<DatasetSplit> {
    if test_subjects.is_empty() {
        return Err(Error::Argument("test_subjects must be non-empty".into()));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for s in samples {
        if test_subjects.contains(&s.subject) {
            test.push(s.id.clone());
        } else {
            train.push(s.id.clone());
        }
    }
    if train.is_empty() {
        return Err(Error::Split("train side of the split is empty".into()));
    }
    if test.is_empty() {
        return Err(Error::Split("test side of the split is empty".into()));
    }
    Ok(DatasetSplit { train, test })
}

/// Read a whole skeleton file.
pub fn read_skeleton_file(path: &Path) -> Result<Vec<SkeletonSequence>> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            parse_sequence(&line)
                .map_err(|e| Error::Parse(format!("{}:{}: {e}", path.display(), n + 1)))?,
        );
    }
    Ok(out)
}

/// Write samples in the canonical line format.
pub fn write_skeleton_file(path: &Path, samples: &[SkeletonSequence]) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for s in samples {
        writeln!(file, "{}", serialize_sequence(s)?)?;
    }
    Ok(())
}
