//! View normalization of raw skeletons.
//!
//! Each frame is translated to its hip center, rotated so the hip line
//! lies on the X axis and the spine points toward Y, and scaled by the
//! spine length. The result is invariant to rigid motion and uniform
//! scaling of the input.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{pad_or_truncate, validate_roles, JointRoleMap, SkeletonSequence};

/// Degeneracy threshold for the defining vectors, in meters.
pub const DEGENERACY_EPS: f64 = 1e-8;

/// Per-frame translate/rotate/scale parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodyTransform {
    pub origin: [f64; 3],
    /// Columns are the body axes expressed in sensor coordinates.
    pub rotation: [[f64; 3]; 3],
    pub scale: f64,
}

impl BodyTransform {
    pub fn identity() -> Self {
        BodyTransform {
            origin: [0.0; 3],
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            scale: 1.0,
        }
    }

    /// Map a sensor-space point into normalized body coordinates:
    /// p ↦ Rᵀ (p − origin) / scale.
    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let d = [p[0] - self.origin[0], p[1] - self.origin[1], p[2] - self.origin[2]];
        let r = &self.rotation;
        [
            (r[0][0] * d[0] + r[1][0] * d[1] + r[2][0] * d[2]) / self.scale,
            (r[0][1] * d[0] + r[1][1] * d[1] + r[2][1] * d[2]) / self.scale,
            (r[0][2] * d[0] + r[1][2] * d[1] + r[2][2] * d[2]) / self.scale,
        ]
    }
}

/// Whether the transform is recomputed per frame or taken from frame 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormalizeMode {
    PerFrame,
    FirstFrame,
}

/// Fixed-length frame-vector sequence ready for the LSTM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedSequence {
    pub id: String,
    pub subject: i64,
    pub label: usize,
    /// vectors[t] has dimension 3·J, joint-major (x0,y0,z0,x1,...).
    pub vectors: Vec<Vec<f64>>,
    pub mask: Vec<bool>,
}

impl NormalizedSequence {
    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, |v| v.len())
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn real_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn scale3(v: [f64; 3], s: f64) -> [f64; 3] {
    [v[0] * s, v[1] * s, v[2] * s]
}

/// Build the body transform of one frame.
///
/// X axis: unit(hip_left − hip_right). Y axis: the component of
/// (spine − spine_base) orthogonal to X. Z = X × Y. Scale is the
/// spine_base→spine distance. Degenerate geometry falls back to
/// `fallback` when provided.
pub fn build_body_transform(
    frame: &[[f64; 3]],
    roles: &JointRoleMap,
    fallback: Option<&BodyTransform>,
) -> Result<BodyTransform> {
    let hip_vec = sub(frame[roles.hip_left], frame[roles.hip_right]);
    let spine_vec = sub(frame[roles.spine], frame[roles.spine_base]);
    let hip_norm = norm(hip_vec);
    let spine_norm = norm(spine_vec);

    let degenerate = |msg: &str| -> Result<BodyTransform> {
        match fallback {
            Some(t) => Ok(t.clone()),
            None => Err(Error::DegenerateFrame(msg.into())),
        }
    };

    if hip_norm < DEGENERACY_EPS {
        return degenerate("hip vector has near-zero length");
    }
    if spine_norm < DEGENERACY_EPS {
        return degenerate("spine vector has near-zero length");
    }
    let x = scale3(hip_vec, 1.0 / hip_norm);
    // Gram-Schmidt: remove the X component from the spine direction.
    let proj = dot3(spine_vec, x);
    let y_raw = sub(spine_vec, scale3(x, proj));
    let y_norm = norm(y_raw);
    if y_norm < DEGENERACY_EPS * spine_norm {
        return degenerate("spine vector is parallel to the hip line");
    }
    let y = scale3(y_raw, 1.0 / y_norm);
    let z = cross(x, y);

    Ok(BodyTransform {
        origin: frame[roles.hip_center],
        rotation: [
            [x[0], y[0], z[0]],
            [x[1], y[1], z[1]],
            [x[2], y[2], z[2]],
        ],
        scale: spine_norm,
    })
}

/// Normalize a whole sequence and fix its length to `target_t`.
///
/// Degenerate frames in per-frame mode chain the previous frame's
/// transform; a degenerate first frame uses the identity transform.
pub fn normalize_sequence(
    seq: &SkeletonSequence,
    roles: &JointRoleMap,
    mode: NormalizeMode,
    target_t: usize,
) -> Result<NormalizedSequence> {
    validate_roles(seq, roles)?;

    let mut flat_frames: Vec<Vec<f64>> = Vec::with_capacity(seq.frames.len());
    let mut prev: Option<BodyTransform> = None;
    let identity = BodyTransform::identity();

    for (t, frame) in seq.frames.iter().enumerate() {
        let transform = match mode {
            NormalizeMode::FirstFrame => {
                if t == 0 {
                    let tf = build_body_transform(frame, roles, None).map_err(|e| {
                        Error::DegenerateFrame(format!(
                            "sample {}: first frame: {e}",
                            seq.id
                        ))
                    })?;
                    prev = Some(tf);
                }
                prev.clone().expect("first-frame transform set at t=0")
            }
            NormalizeMode::PerFrame => {
                let fallback = prev.as_ref().unwrap_or(&identity);
                let tf = build_body_transform(frame, roles, Some(fallback))?;
                prev = Some(tf.clone());
                tf
            }
        };
        let mut v = Vec::with_capacity(3 * frame.len());
        for joint in frame {
            let p = transform.apply(*joint);
            v.extend_from_slice(&p);
        }
        flat_frames.push(v);
    }

    let (vectors, mask) = pad_or_truncate(&flat_frames, target_t)?;
    Ok(NormalizedSequence {
        id: seq.id.clone(),
        subject: seq.subject,
        label: seq.label,
        vectors,
        mask,
    })
}

/// Read a normalized-sequence file (line-delimited JSON).
pub fn read_normalized_file(path: &Path) -> Result<Vec<NormalizedSequence>> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let seq: NormalizedSequence = serde_json::from_str(&line).map_err(|e| {
            Error::Parse(format!("{}:{}: {e}", path.display(), n + 1))
        })?;
        out.push(seq);
    }
    Ok(out)
}

pub fn write_normalized_file(path: &Path, seqs: &[NormalizedSequence]) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for s in seqs {
        let line =
            serde_json::to_string(s).map_err(|e| Error::Format(format!("serialize: {e}")))?;
        writeln!(file, "{line}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roles5() -> JointRoleMap {
        JointRoleMap {
            hip_center: 0,
            hip_left: 1,
            hip_right: 2,
            spine_base: 3,
            spine: 4,
            joint_count: 5,
        }
    }

    /// hip_center at origin, hips on X, spine on Y, unit spine length.
    fn canonical_frame() -> Vec<[f64; 3]> {
        vec![
            [0.0, 0.0, 0.0],  // hip_center
            [1.0, 0.0, 0.0],  // hip_left
            [-1.0, 0.0, 0.0], // hip_right
            [0.0, 0.0, 0.0],  // spine_base
            [0.0, 1.0, 0.0],  // spine
        ]
    }

    fn rotate_z90(p: [f64; 3]) -> [f64; 3] {
        [-p[1], p[0], p[2]]
    }

    #[test]
    fn canonical_frame_identity() {
        let tf = build_body_transform(&canonical_frame(), &roles5(), None).unwrap();
        assert_eq!(tf.origin, [0.0, 0.0, 0.0]);
        assert!((tf.scale - 1.0).abs() < 1e-12);
        let id = BodyTransform::identity();
        for (a, b) in tf.rotation.iter().flatten().zip(id.rotation.iter().flatten()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rotated_frame_restored() {
        let frame: Vec<[f64; 3]> = canonical_frame().into_iter().map(rotate_z90).collect();
        let tf = build_body_transform(&frame, &roles5(), None).unwrap();
        for (raw, canon) in frame.iter().zip(canonical_frame()) {
            let p = tf.apply(*raw);
            for k in 0..3 {
                assert!((p[k] - canon[k]).abs() < 1e-9, "{p:?} vs {canon:?}");
            }
        }
    }

    #[test]
    fn degenerate_hips() {
        let mut frame = canonical_frame();
        frame[1] = frame[2]; // hip_left == hip_right
        let err = build_body_transform(&frame, &roles5(), None).unwrap_err();
        assert!(matches!(err, Error::DegenerateFrame(_)));
        // with fallback provided, the fallback is returned
        let id = BodyTransform::identity();
        let tf = build_body_transform(&frame, &roles5(), Some(&id)).unwrap();
        assert_eq!(tf, id);
    }

    fn seq_from_frames(frames: Vec<Vec<[f64; 3]>>) -> SkeletonSequence {
        SkeletonSequence { id: "t".into(), subject: 0, label: 0, frames }
    }

    #[test]
    fn identity_sequence_passthrough() {
        let seq = seq_from_frames(vec![canonical_frame()]);
        let norm =
            normalize_sequence(&seq, &roles5(), NormalizeMode::PerFrame, 1).unwrap();
        let expect: Vec<f64> = canonical_frame().into_iter().flatten().collect();
        for (a, b) in norm.vectors[0].iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn translation_invariance() {
        let base = seq_from_frames(vec![canonical_frame(), canonical_frame()]);
        let shifted = seq_from_frames(
            base.frames
                .iter()
                .map(|f| f.iter().map(|p| [p[0] + 5.0, p[1] - 2.0, p[2] + 3.0]).collect())
                .collect(),
        );
        let a = normalize_sequence(&base, &roles5(), NormalizeMode::PerFrame, 4).unwrap();
        let b = normalize_sequence(&shifted, &roles5(), NormalizeMode::PerFrame, 4).unwrap();
        for (va, vb) in a.vectors.iter().zip(&b.vectors) {
            for (x, y) in va.iter().zip(vb) {
                assert!((x - y).abs() < 1e-9);
            }
        }
        assert_eq!(a.mask, vec![true, true, false, false]);
    }

    #[test]
    fn scale_invariance() {
        let base = seq_from_frames(vec![canonical_frame()]);
        let scaled = seq_from_frames(
            base.frames
                .iter()
                .map(|f| f.iter().map(|p| [p[0] * 3.0, p[1] * 3.0, p[2] * 3.0]).collect())
                .collect(),
        );
        let a = normalize_sequence(&base, &roles5(), NormalizeMode::PerFrame, 1).unwrap();
        let b = normalize_sequence(&scaled, &roles5(), NormalizeMode::PerFrame, 1).unwrap();
        for (x, y) in a.vectors[0].iter().zip(&b.vectors[0]) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn degenerate_first_frame_chains_identity() {
        let mut bad = canonical_frame();
        bad[1] = bad[2];
        let seq = seq_from_frames(vec![bad, canonical_frame()]);
        // per-frame mode: first frame falls back to identity, second recovers
        let norm =
            normalize_sequence(&seq, &roles5(), NormalizeMode::PerFrame, 2).unwrap();
        assert_eq!(norm.real_len(), 2);
        // first-frame mode: hard error
        let err =
            normalize_sequence(&seq, &roles5(), NormalizeMode::FirstFrame, 2).unwrap_err();
        assert!(matches!(err, Error::DegenerateFrame(_)));
    }

    #[test]
    fn rotation_is_special_orthogonal() {
        let frame = vec![
            [0.3, 0.1, -0.2],
            [0.7, 0.15, -0.1],
            [-0.1, 0.05, -0.3],
            [0.3, 0.2, -0.2],
            [0.35, 0.9, -0.15],
        ];
        let tf = build_body_transform(&frame, &roles5(), None).unwrap();
        let r = &tf.rotation;
        // columns orthonormal
        for i in 0..3 {
            for j in 0..3 {
                let col_i = [r[0][i], r[1][i], r[2][i]];
                let col_j = [r[0][j], r[1][j], r[2][j]];
                let d = dot3(col_i, col_j);
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((d - expect).abs() < 1e-9);
            }
        }
        // determinant +1
        let c0 = [r[0][0], r[1][0], r[2][0]];
        let c1 = [r[0][1], r[1][1], r[2][1]];
        let c2 = [r[0][2], r[1][2], r[2][2]];
        let det = dot3(cross(c0, c1), c2);
        assert!((det - 1.0).abs() < 1e-9);
    }
}
