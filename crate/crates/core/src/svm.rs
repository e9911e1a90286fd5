//! One-vs-rest linear max-margin classifier.
//!
//! Each class is trained independently against the rest by seeded
//! stochastic subgradient descent on the primal hinge objective
//! (1/2)‖w‖² + C · Σ max(0, 1 − y(w·x + β)), with the classic
//! step schedule η_t = 1/(λt), λ = 1/(C·n).

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::dot;

/// Per-class scores from any classifier; the interchange currency of
/// region selection and late fusion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub id: String,
    /// Which classifier/stream produced the scores.
    pub producer: String,
    pub scores: Vec<f64>,
}

impl ClassScores {
    /// Argmax label, lowest class index on ties.
    pub fn predicted_label(&self) -> usize {
        argmax(&self.scores)
    }
}

pub(crate) fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in scores.iter().enumerate() {
        if v > scores[best] {
            best = k;
        }
    }
    best
}

/// Trained one-vs-rest model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    /// weights[c] is the weight vector of class c.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
    pub c_reg: f64,
}

impl SvmModel {
    pub fn class_count(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.weights.first().map_or(0, |w| w.len())
    }
}

fn derive_seed(base: u64, class: usize) -> u64 {
    let mut z = base.wrapping_add((class as u64).wrapping_mul(0x9E3779B97F4A7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z ^ (z >> 31)
}

/// Train one binary hinge classifier (labels ±1).
fn train_binary(
    features: &[Vec<f64>],
    targets: &[f64],
    c_reg: f64,
    epochs: usize,
    seed: u64,
) -> (Vec<f64>, f64) {
    let n = features.len();
    let dim = features[0].len();
    let lambda = 1.0 / (c_reg * n as f64);
    let mut w = vec![0.0; dim];
    let mut beta = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut t: u64 = 0;
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            let eta = 1.0 / (lambda * t as f64);
            let x = &features[i];
            let y = targets[i];
            let margin = y * (dot(&w, x) + beta);
            let decay = 1.0 - eta * lambda;
            if margin < 1.0 {
                for (wk, xk) in w.iter_mut().zip(x) {
                    *wk = *wk * decay + eta * y * xk;
                }
                beta += eta * lambda * y; // bias step kept on the λ scale
            } else {
                for wk in &mut w {
                    *wk *= decay;
                }
            }
        }
    }
    (w, beta)
}

/// Train a one-vs-rest model. Deterministic given the seed.
pub fn train_ovr(
    features: &[Vec<f64>],
    labels: &[usize],
    c_reg: f64,
    epochs: usize,
    seed: u64,
) -> Result<SvmModel> {
    if features.is_empty() || features.len() != labels.len() {
        return Err(Error::Argument("features/labels empty or mismatched".into()));
    }
    let dim = features[0].len();
    if features.iter().any(|f| f.len() != dim) {
        return Err(Error::Shape("inconsistent feature dimensions".into()));
    }
    if !(c_reg > 0.0) || epochs == 0 {
        return Err(Error::Argument("c_reg and epochs must be positive".into()));
    }
    let classes = labels.iter().max().unwrap() + 1;
    let distinct: BTreeSet<usize> = labels.iter().copied().collect();
    if distinct.len() < 2 {
        return Err(Error::Argument("training needs at least 2 classes".into()));
    }
    let mut weights = Vec::with_capacity(classes);
    let mut biases = Vec::with_capacity(classes);
    for class in 0..classes {
        let targets: Vec<f64> =
            labels.iter().map(|&l| if l == class { 1.0 } else { -1.0 }).collect();
        let (w, b) = train_binary(features, &targets, c_reg, epochs, derive_seed(seed, class));
        weights.push(w);
        biases.push(b);
    }
    Ok(SvmModel { weights, biases, c_reg })
}

/// Raw per-class scores w_c·x + β_c.
pub fn predict_scores(model: &SvmModel, x: &[f64], id: &str, producer: &str) -> Result<ClassScores> {
    if x.len() != model.dim() {
        return Err(Error::Shape(format!(
            "feature dim {} != model dim {}",
            x.len(),
            model.dim()
        )));
    }
    let scores = model
        .weights
        .iter()
        .zip(&model.biases)
        .map(|(w, b)| dot(w, x) + b)
        .collect();
    Ok(ClassScores { id: id.into(), producer: producer.into(), scores })
}

/// Training-set accuracy of a model.
pub fn accuracy(model: &SvmModel, features: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    let mut correct = 0usize;
    for (x, &label) in features.iter().zip(labels) {
        let s = predict_scores(model, x, "", "")?;
        if s.predicted_label() == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / features.len() as f64)
}

/// Fold assignment: stratified by label, or group-disjoint when subject
/// groups are supplied.
fn assign_folds(
    labels: &[usize],
    groups: Option<&[i64]>,
    k: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    let n = labels.len();
    let mut fold = vec![0usize; n];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match groups {
        Some(groups) => {
            if groups.len() != n {
                return Err(Error::Shape("groups/labels length mismatch".into()));
            }
            let mut unique: Vec<i64> = groups.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
            if k > unique.len() {
                return Err(Error::Argument(format!(
                    "k={k} folds but only {} groups",
                    unique.len()
                )));
            }
            unique.shuffle(&mut rng);
            let fold_of: BTreeMap<i64, usize> =
                unique.iter().enumerate().map(|(i, &g)| (g, i % k)).collect();
            for (i, g) in groups.iter().enumerate() {
                fold[i] = fold_of[g];
            }
        }
        None => {
            let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for (i, &l) in labels.iter().enumerate() {
                by_class.entry(l).or_default().push(i);
            }
            let mut next = 0usize;
            for (_, mut idxs) in by_class {
                idxs.shuffle(&mut rng);
                for i in idxs {
                    fold[i] = next % k;
                    next += 1;
                }
            }
        }
    }
    Ok(fold)
}

/// Mean held-out-fold accuracy of a freshly trained model per fold.
pub fn cross_validate(
    features: &[Vec<f64>],
    labels: &[usize],
    groups: Option<&[i64]>,
    k: usize,
    c_reg: f64,
    epochs: usize,
    seed: u64,
) -> Result<f64> {
    if k < 2 {
        return Err(Error::Argument("k must be at least 2".into()));
    }
    if features.len() < k {
        return Err(Error::Argument("need at least k samples".into()));
    }
    let fold = assign_folds(labels, groups, k, seed)?;
    let mut fold_acc = Vec::with_capacity(k);
    for f in 0..k {
        let mut train_x = Vec::new();
        let mut train_y = Vec::new();
        let mut test_x = Vec::new();
        let mut test_y = Vec::new();
        for i in 0..features.len() {
            if fold[i] == f {
                test_x.push(features[i].clone());
                test_y.push(labels[i]);
            } else {
                train_x.push(features[i].clone());
                train_y.push(labels[i]);
            }
        }
        if test_x.is_empty() {
            continue;
        }
        let acc = match train_ovr(&train_x, &train_y, c_reg, epochs, seed.wrapping_add(f as u64))
        {
            Ok(model) => accuracy(&model, &test_x, &test_y)?,
            // a fold whose training side collapses to one class predicts it
            Err(Error::Argument(_)) => {
                let majority = train_y[0];
                test_y.iter().filter(|&&y| y == majority).count() as f64 / test_y.len() as f64
            }
            Err(e) => return Err(e),
        };
        fold_acc.push(acc);
    }
    Ok(fold_acc.iter().sum::<f64>() / fold_acc.len() as f64)
}

/// Pick C from a small grid by cross-validation; ties go to the smaller C.
pub fn select_c_reg(
    features: &[Vec<f64>],
    labels: &[usize],
    grid: &[f64],
    k: usize,
    epochs: usize,
    seed: u64,
) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::Argument("empty C grid".into()));
    }
    let mut best = (f64::NEG_INFINITY, grid[0]);
    for &c in grid {
        let acc = cross_validate(features, labels, None, k, c, epochs, seed)?;
        if acc > best.0 {
            best = (acc, c);
        }
    }
    Ok(best.1)
}

pub fn save_model(path: &Path, model: &SvmModel) -> Result<()> {
    let json = serde_json::to_string(model)
        .map_err(|e| Error::Format(format!("model serialize: {e}")))?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<SvmModel> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("model parse: {e}")))
}

/// Write scores: `id producer s1 .. sC` per line.
pub fn write_score_file(path: &Path, scores: &[ClassScores]) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for s in scores {
        write!(file, "{} {}", s.id, s.producer)?;
        for v in &s.scores {
            write!(file, " {v}")?;
        }
        writeln!(file)?;
    }
    Ok(())
}

pub fn read_score_file(path: &Path) -> Result<Vec<ClassScores>> {
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
        let producer = it
            .next()
            .ok_or_else(|| Error::Format(format!("{}: missing producer", loc())))?
            .to_string();
        let scores: Vec<f64> = it
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Format(format!("{}: bad score: {e}", loc())))?;
        if scores.is_empty() {
            return Err(Error::Format(format!("{}: no scores", loc())));
        }
        out.push(ClassScores { id, producer, scores });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn separable_1d() -> (Vec<Vec<f64>>, Vec<usize>) {
        (vec![vec![-1.0], vec![1.0]], vec![0, 1])
    }

    #[test]
    fn separable_toy_classified() {
        let (x, y) = separable_1d();
        let model = train_ovr(&x, &y, 10.0, 2000, 1).unwrap();
        assert_eq!(accuracy(&model, &x, &y).unwrap(), 1.0);
        assert!(model.weights[1][0] > 0.0);
        assert!(model.weights[0][0] < 0.0);
    }

    #[test]
    fn duplicated_dataset_equivalence() {
        // λ = 1/(C·n) makes duplication leave the regularized objective
        // unchanged, so both runs must settle into the same margin-
        // saturated decision rule (w pointing the same way, every sample
        // at or beyond margin 1). Last-iterate parameter equality is out
        // of reach for a subgradient method, so the check stays at the
        // decision level.
        let (x, y) = separable_1d();
        let dup_x: Vec<Vec<f64>> = x.iter().chain(x.iter()).cloned().collect();
        let dup_y: Vec<usize> = y.iter().chain(y.iter()).copied().collect();
        let epochs = 200_000usize;
        let a = train_ovr(&x, &y, 10.0, epochs * 2, 3).unwrap();
        let b = train_ovr(&dup_x, &dup_y, 10.0, epochs, 3).unwrap();
        assert_eq!(accuracy(&a, &x, &y).unwrap(), 1.0);
        assert_eq!(accuracy(&b, &x, &y).unwrap(), 1.0);
        for c in 0..2 {
            assert_eq!(a.weights[c][0].signum(), b.weights[c][0].signum(), "class {c}");
            // every point sits at or beyond the margin under both models
            for (xi, &yi) in x.iter().zip(&y) {
                let t = if yi == c { 1.0 } else { -1.0 };
                let ma = t * (a.weights[c][0] * xi[0] + a.biases[c]);
                let mb = t * (b.weights[c][0] * xi[0] + b.biases[c]);
                assert!(ma >= 1.0 - 1e-3, "class {c}: margin {ma}");
                assert!(mb >= 1.0 - 1e-3, "class {c}: margin {mb}");
            }
        }
    }

    #[test]
    fn inseparable_identical_features() {
        let x = vec![vec![1.0, 2.0]; 6];
        let y = vec![0, 0, 0, 0, 1, 1];
        let model = train_ovr(&x, &y, 1.0, 200, 0).unwrap();
        let acc = accuracy(&model, &x, &y).unwrap();
        assert!(acc <= 4.0 / 6.0 + 1e-12, "accuracy {acc}");
    }

    #[test]
    fn zero_model_ties_break_low() {
        let model = SvmModel { weights: vec![vec![0.0]; 3], biases: vec![0.0; 3], c_reg: 1.0 };
        let s = predict_scores(&model, &[2.0], "a", "t").unwrap();
        assert_eq!(s.scores, vec![0.0, 0.0, 0.0]);
        assert_eq!(s.predicted_label(), 0);
    }

    #[test]
    fn scores_are_linear_without_bias() {
        let model = SvmModel {
            weights: vec![vec![1.0, -2.0], vec![0.5, 0.25]],
            biases: vec![0.0, 0.0],
            c_reg: 1.0,
        };
        let x = vec![3.0, 1.5];
        let s1 = predict_scores(&model, &x, "a", "t").unwrap();
        let scaled: Vec<f64> = x.iter().map(|v| v * 4.0).collect();
        let s2 = predict_scores(&model, &scaled, "a", "t").unwrap();
        for (a, b) in s1.scores.iter().zip(&s2.scores) {
            assert!((b - 4.0 * a).abs() < 1e-12);
        }
        assert_eq!(s1.predicted_label(), s2.predicted_label());
    }

    #[test]
    fn single_class_rejected() {
        let x = vec![vec![0.0], vec![1.0]];
        assert!(matches!(train_ovr(&x, &[1, 1], 1.0, 10, 0), Err(Error::Argument(_))));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let x = vec![vec![0.0], vec![1.0, 2.0]];
        assert!(matches!(train_ovr(&x, &[0, 1], 1.0, 10, 0), Err(Error::Shape(_))));
    }

    #[test]
    fn deterministic_given_seed() {
        let x: Vec<Vec<f64>> =
            (0..20).map(|i| vec![(i % 5) as f64, (i % 3) as f64]).collect();
        let y: Vec<usize> = (0..20).map(|i| i % 2).collect();
        let a = train_ovr(&x, &y, 1.0, 50, 9).unwrap();
        let b = train_ovr(&x, &y, 1.0, 50, 9).unwrap();
        assert_eq!(a, b);
    }

    fn separable_cloud(n_per: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..2 * n_per {
            let class = i % 2;
            let center = if class == 0 { -2.0 } else { 2.0 };
            x.push(vec![center + rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)]);
            y.push(class);
        }
        (x, y)
    }

    #[test]
    fn cross_validate_separable_perfect() {
        let (x, y) = separable_cloud(10, 4);
        let acc = cross_validate(&x, &y, None, 2, 10.0, 300, 0).unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn cross_validate_chance_on_shuffled_labels() {
        use rand::Rng;
        let mut mean = 0.0;
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<Vec<f64>> =
                (0..60).map(|_| (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
            let y: Vec<usize> = (0..60).map(|i| i % 2).collect();
            mean += cross_validate(&x, &y, None, 5, 1.0, 100, seed).unwrap();
        }
        mean /= 10.0;
        assert!((0.3..=0.7).contains(&mean), "chance-level mean accuracy {mean}");
    }

    #[test]
    fn group_mode_requires_enough_groups() {
        let x = vec![vec![0.0]; 6];
        let y = vec![0, 1, 0, 1, 0, 1];
        let groups = vec![1, 1, 2, 2, 3, 3];
        assert!(matches!(
            cross_validate(&x, &y, Some(&groups), 5, 1.0, 10, 0),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn group_folds_are_disjoint() {
        let labels = vec![0, 1, 0, 1, 0, 1, 0, 1];
        let groups = vec![1, 1, 2, 2, 3, 3, 4, 4];
        let fold = assign_folds(&labels, Some(&groups), 2, 5).unwrap();
        let mut per_group: BTreeMap<i64, BTreeSet<usize>> = BTreeMap::new();
        for (i, &g) in groups.iter().enumerate() {
            per_group.entry(g).or_default().insert(fold[i]);
        }
        for (_, folds) in per_group {
            assert_eq!(folds.len(), 1);
        }
    }

    #[test]
    fn stratified_folds_partition() {
        let labels: Vec<usize> = (0..23).map(|i| i % 3).collect();
        let fold = assign_folds(&labels, None, 4, 7).unwrap();
        assert_eq!(fold.len(), 23);
        assert!(fold.iter().all(|&f| f < 4));
        for f in 0..4 {
            assert!(fold.iter().any(|&x| x == f));
        }
    }

    #[test]
    fn score_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.scores");
        let scores = vec![
            ClassScores { id: "a".into(), producer: "svm-latent".into(), scores: vec![0.5, -1.25] },
            ClassScores { id: "b".into(), producer: "svm-latent".into(), scores: vec![2.0, 3.5] },
        ];
        write_score_file(&path, &scores).unwrap();
        assert_eq!(read_score_file(&path).unwrap(), scores);
    }
}
