//! Deterministic synthetic skeleton-action generator.
//!
//! Classes differ by the oscillation frequency of the non-role joints;
//! the evidence window controls which frames carry that class signal.
//! Every sample gets a random rigid motion and uniform scale so the
//! normalization stage has real work to do. Fully determined by the
//! spec's seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::region::RegionFrameDescriptor;
use crate::skeleton::{JointRoleMap, SkeletonSequence};

/// Which frames carry class-discriminative motion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvidenceWindow {
    Early,
    Late,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub classes: usize,
    pub samples_per_class: usize,
    pub joints: usize,
    pub frames_min: usize,
    pub frames_max: usize,
    pub evidence: EvidenceWindow,
    /// Fraction of the sequence covered by an early/late window.
    pub evidence_fraction: f64,
    /// Uniform coordinate noise amplitude on the moving joints, meters.
    pub noise: f64,
    pub subjects: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            classes: 4,
            samples_per_class: 10,
            joints: 8,
            frames_min: 20,
            frames_max: 30,
            evidence: EvidenceWindow::Full,
            evidence_fraction: 0.2,
            noise: 0.02,
            subjects: 4,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Argument("need at least 2 classes".into()));
        }
        if self.samples_per_class == 0 || self.subjects == 0 {
            return Err(Error::Argument("samples_per_class and subjects must be positive".into()));
        }
        if self.joints < 6 {
            return Err(Error::Argument("need at least 6 joints (5 roles + 1 moving)".into()));
        }
        if self.frames_min < 2 || self.frames_max < self.frames_min {
            return Err(Error::Argument("bad frame count range".into()));
        }
        if !(0.0..=1.0).contains(&self.evidence_fraction) || self.noise < 0.0 {
            return Err(Error::Argument("bad evidence_fraction or noise".into()));
        }
        Ok(())
    }

    /// Role joints occupy indices 0..5 in generated data.
    pub fn roles(&self) -> JointRoleMap {
        JointRoleMap {
            hip_center: 0,
            hip_left: 1,
            hip_right: 2,
            spine_base: 3,
            spine: 4,
            joint_count: self.joints,
        }
    }
}

/// Anatomically plausible constant offsets for the role joints, meters.
const ROLE_OFFSETS: [[f64; 3]; 5] = [
    [0.0, 0.0, 0.0],    // hip center
    [0.15, 0.0, 0.0],   // left hip
    [-0.15, 0.0, 0.0],  // right hip
    [0.0, 0.05, 0.0],   // spine base
    [0.0, 0.45, 0.0],   // spine
];

fn random_rotation(rng: &mut ChaCha8Rng) -> [[f64; 3]; 3] {
    // uniform axis from the sphere, uniform angle
    let z: f64 = rng.gen_range(-1.0..1.0);
    let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let r = (1.0 - z * z).sqrt();
    let axis = [r * phi.cos(), r * phi.sin(), z];
    let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    let [x, y, w] = axis;
    [
        [t * x * x + c, t * x * y - s * w, t * x * w + s * y],
        [t * x * y + s * w, t * y * y + c, t * y * w - s * x],
        [t * x * w - s * y, t * y * w + s * x, t * w * w + c],
    ]
}

fn apply_rigid(p: [f64; 3], rot: &[[f64; 3]; 3], trans: [f64; 3], scale: f64) -> [f64; 3] {
    [
        scale * (rot[0][0] * p[0] + rot[0][1] * p[1] + rot[0][2] * p[2]) + trans[0],
        scale * (rot[1][0] * p[0] + rot[1][1] * p[1] + rot[1][2] * p[2]) + trans[1],
        scale * (rot[2][0] * p[0] + rot[2][1] * p[1] + rot[2][2] * p[2]) + trans[2],
    ]
}

fn mix_seed(base: u64, n: u64) -> u64 {
    let mut z = base.wrapping_add(n.wrapping_mul(0x9E3779B97F4A7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z ^ (z >> 31)
}

/// Generate the full sample set for a spec.
///
/// Per-sample randomness (pose, phase, noise) is keyed by the sample's
/// index *within its class*, so samples n of two different classes share
/// everything except the class-specific motion inside the evidence
/// window. Frames outside the window are therefore class-independent by
/// construction, bit-exactly.
pub fn generate(spec: &SynthSpec) -> Result<Vec<SkeletonSequence>> {
    spec.validate()?;
    let moving = spec.joints - 5;

    // class-independent carrier frequency for frames outside the window
    let common_freq = 0.9;
    let mut samples = Vec::with_capacity(spec.classes * spec.samples_per_class);
    for class in 0..spec.classes {
        // class-specific oscillation frequency, cycles per sequence
        let class_freq = 1.5 + 1.25 * class as f64;
        for n in 0..spec.samples_per_class {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, n as u64));
            let idx = class * spec.samples_per_class + n;
            let subject = (idx % spec.subjects) as i64 + 1;
            let frames_t = rng.gen_range(spec.frames_min..=spec.frames_max);
            let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let rot = random_rotation(&mut rng);
            let trans = [
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            ];
            let scale = rng.gen_range(0.7..1.4);
            // fixed per-sample base placement of the moving joints
            let bases: Vec<[f64; 3]> = (0..moving)
                .map(|m| {
                    let a = m as f64 / moving as f64 * std::f64::consts::TAU;
                    [0.35 * a.cos(), 0.6 + 0.1 * m as f64, 0.35 * a.sin()]
                })
                .collect();

            let window = (frames_t as f64 * spec.evidence_fraction).ceil() as usize;
            let in_window = |t: usize| match spec.evidence {
                EvidenceWindow::Full => true,
                EvidenceWindow::Early => t < window,
                EvidenceWindow::Late => t >= frames_t.saturating_sub(window),
            };

            let mut frames = Vec::with_capacity(frames_t);
            for t in 0..frames_t {
                let mut frame = Vec::with_capacity(spec.joints);
                for offset in ROLE_OFFSETS {
                    frame.push(apply_rigid(offset, &rot, trans, scale));
                }
                let freq = if in_window(t) { class_freq } else { common_freq };
                let theta =
                    std::f64::consts::TAU * freq * t as f64 / frames_t as f64 + phase;
                for (m, base) in bases.iter().enumerate() {
                    let amp = 0.25;
                    let sway = [
                        base[0] + amp * (theta + m as f64).sin(),
                        base[1] + amp * (theta * 0.5).cos() * 0.4,
                        base[2] + amp * (theta + 1.7 * m as f64).cos(),
                    ];
                    let noisy = [
                        sway[0] + rng.gen_range(-spec.noise..=spec.noise),
                        sway[1] + rng.gen_range(-spec.noise..=spec.noise),
                        sway[2] + rng.gen_range(-spec.noise..=spec.noise),
                    ];
                    frame.push(apply_rigid(noisy, &rot, trans, scale));
                }
                frames.push(frame);
            }
            samples.push(SkeletonSequence {
                id: format!("c{class}_s{n:03}"),
                subject,
                label: class,
                frames,
            });
        }
    }
    Ok(samples)
}

/// Settings for the synthetic region-descriptor files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthDescriptorSpec {
    pub regions: usize,
    /// Region carrying the planted class signal.
    pub informative_region: usize,
    pub dim: usize,
    pub signal: f64,
    pub noise: f64,
    pub frames: usize,
    pub seed: u64,
}

impl Default for SynthDescriptorSpec {
    fn default() -> Self {
        SynthDescriptorSpec {
            regions: 5,
            informative_region: 2,
            dim: 24,
            signal: 1.0,
            noise: 1.0,
            frames: 8,
            seed: 0,
        }
    }
}

/// Generate per-frame region descriptors with one informative region;
/// every other region is pure noise.
pub fn generate_descriptors(
    samples: &[SkeletonSequence],
    spec: &SynthDescriptorSpec,
) -> Result<Vec<RegionFrameDescriptor>> {
    if spec.regions == 0 || spec.informative_region >= spec.regions {
        return Err(Error::Argument("informative_region out of range".into()));
    }
    if spec.dim == 0 || spec.frames == 0 {
        return Err(Error::Argument("dim and frames must be positive".into()));
    }
    let classes = samples.iter().map(|s| s.label).max().map_or(0, |m| m + 1);
    let mut proto_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x50524F54);
    // fixed random ±1 prototype per class
    let protos: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..spec.dim).map(|_| if proto_rng.gen::<bool>() { 1.0 } else { -1.0 }).collect())
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::with_capacity(samples.len() * spec.regions * spec.frames);
    for sample in samples {
        for region in 0..spec.regions {
            for frame in 0..spec.frames {
                let mut vector: Vec<f64> =
                    (0..spec.dim).map(|_| rng.gen_range(-spec.noise..=spec.noise)).collect();
                if region == spec.informative_region {
                    let gate: f64 = rng.gen_range(0.0..1.0);
                    for (v, p) in vector.iter_mut().zip(&protos[sample.label]) {
                        *v += spec.signal * gate * p;
                    }
                }
                out.push(RegionFrameDescriptor {
                    sample_id: sample.id.clone(),
                    region,
                    frame,
                    vector,
                });
            }
        }
    }
    Ok(out)
}
