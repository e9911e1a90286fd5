//! Region descriptor streams: ingest per-frame appearance (or flow)
//! descriptors produced by an external extractor, aggregate them with
//! max-min temporal pooling, and pick the most discriminative region by
//! cross-validated classification accuracy on training data.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::svm::cross_validate;

/// One frame's descriptor for one region of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionFrameDescriptor {
    pub sample_id: String,
    pub region: usize,
    pub frame: usize,
    pub vector: Vec<f64>,
}

/// Max-pooled then min-pooled descriptor of one sample-region, 2·D wide.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledVideoDescriptor {
    pub sample_id: String,
    pub region: usize,
    pub vector: Vec<f64>,
}

/// Outcome of region selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSelection {
    pub chosen: usize,
    /// (region index, cross-validation accuracy), ascending by region.
    pub accuracies: Vec<(usize, f64)>,
}

/// Descriptors of one stream, grouped by (sample, region) with frames in
/// ascending order.
#[derive(Debug, Clone, Default)]
pub struct DescriptorStream {
    pub groups: BTreeMap<(String, usize), Vec<RegionFrameDescriptor>>,
    pub dim: usize,
}

impl DescriptorStream {
    pub fn regions(&self) -> BTreeSet<usize> {
        self.groups.keys().map(|(_, r)| *r).collect()
    }

    pub fn sample_ids(&self) -> BTreeSet<String> {
        self.groups.keys().map(|(id, _)| id.clone()).collect()
    }
}

/// Parse a descriptor file: `id region frame dim v1 .. vdim` per line.
pub fn load_stream(path: &Path) -> Result<DescriptorStream> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut stream = DescriptorStream::default();
    let mut seen: BTreeSet<(String, usize, usize)> = BTreeSet::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let loc = || format!("{}:{}", path.display(), n + 1);
        let mut it = line.split_whitespace();
        let sample_id = it
            .next()
            .ok_or_else(|| Error::Format(format!("{}: missing sample id", loc())))?
            .to_string();
        let region: usize = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format(format!("{}: bad region index", loc())))?;
        let frame: usize = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format(format!("{}: bad frame index", loc())))?;
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
        if stream.dim == 0 {
            stream.dim = dim;
        } else if dim != stream.dim {
            return Err(Error::Format(format!(
                "{}: dimension {dim} drifts from stream dimension {}",
                loc(),
                stream.dim
            )));
        }
        if !seen.insert((sample_id.clone(), region, frame)) {
            return Err(Error::Format(format!(
                "{}: duplicate record for sample {sample_id}, region {region}, frame {frame}",
                loc()
            )));
        }
        stream
            .groups
            .entry((sample_id.clone(), region))
            .or_default()
            .push(RegionFrameDescriptor { sample_id, region, frame, vector });
    }
    for group in stream.groups.values_mut() {
        group.sort_by_key(|d| d.frame);
    }
    Ok(stream)
}

pub fn write_stream(path: &Path, descriptors: &[RegionFrameDescriptor]) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for d in descriptors {
        write!(file, "{} {} {} {}", d.sample_id, d.region, d.frame, d.vector.len())?;
        for v in &d.vector {
            write!(file, " {v}")?;
        }
        writeln!(file)?;
    }
    Ok(())
}

/// Elementwise max over frames concatenated with elementwise min.
pub fn maxmin_pool(frames: &[RegionFrameDescriptor]) -> Result<PooledVideoDescriptor> {
    let first = frames
        .first()
        .ok_or_else(|| Error::Argument("maxmin_pool: empty frame list".into()))?;
    let dim = first.vector.len();
    let mut max = first.vector.clone();
    let mut min = first.vector.clone();
    for f in &frames[1..] {
        if f.vector.len() != dim {
            return Err(Error::Shape("maxmin_pool: inconsistent dimensions".into()));
        }
        for ((mx, mn), v) in max.iter_mut().zip(min.iter_mut()).zip(&f.vector) {
            if *v > *mx {
                *mx = *v;
            }
            if *v < *mn {
                *mn = *v;
            }
        }
    }
    let mut vector = max;
    vector.extend(min);
    Ok(PooledVideoDescriptor {
        sample_id: first.sample_id.clone(),
        region: first.region,
        vector,
    })
}

/// Pool every (sample, region) group of a stream.
pub fn pool_stream(stream: &DescriptorStream) -> Result<Vec<PooledVideoDescriptor>> {
    stream.groups.values().map(|g| maxmin_pool(g)).collect()
}

/// Cross-validation settings for region selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionCvConfig {
    pub folds: usize,
    pub c_reg: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SelectionCvConfig {
    fn default() -> Self {
        SelectionCvConfig { folds: 3, c_reg: 1.0, epochs: 100, seed: 0 }
    }
}

/// Pick the region with the best cross-validated accuracy; ties break to
/// the lowest region index. `labels` maps sample id → class; only the
/// samples present here (the training split) are ever consulted.
pub fn select_best_region(
    pooled: &[PooledVideoDescriptor],
    labels: &BTreeMap<String, usize>,
    cv: &SelectionCvConfig,
) -> Result<RegionSelection> {
    let mut by_region: BTreeMap<usize, Vec<&PooledVideoDescriptor>> = BTreeMap::new();
    for p in pooled {
        if labels.contains_key(&p.sample_id) {
            by_region.entry(p.region).or_default().push(p);
        }
    }
    if by_region.is_empty() {
        return Err(Error::Argument("no pooled descriptors match the label set".into()));
    }
    let expected: BTreeSet<&String> =
        by_region.values().next().unwrap().iter().map(|p| &p.sample_id).collect();
    for (region, group) in &by_region {
        let ids: BTreeSet<&String> = group.iter().map(|p| &p.sample_id).collect();
        if ids != expected {
            return Err(Error::Argument(format!(
                "region {region} covers a different sample set"
            )));
        }
    }
    let mut accuracies = Vec::with_capacity(by_region.len());
    for (&region, group) in &by_region {
        let features: Vec<Vec<f64>> = group.iter().map(|p| p.vector.clone()).collect();
        let y: Vec<usize> = group.iter().map(|p| labels[&p.sample_id]).collect();
        let acc = cross_validate(&features, &y, None, cv.folds, cv.c_reg, cv.epochs, cv.seed)?;
        accuracies.push((region, acc));
    }
    let chosen = accuracies
        .iter()
        .fold(accuracies[0], |best, &cur| if cur.1 > best.1 { cur } else { best })
        .0;
    Ok(RegionSelection { chosen, accuracies })
}
