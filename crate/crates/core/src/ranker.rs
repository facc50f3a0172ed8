//! Linear pairwise ranking: training, scoring and evaluation.

use std::cmp::Ordering;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dataset::{Dataset, NodeSample};
use crate::feature::{FeatureMask, FeatureVector, MaskError, NUM_FEATURES};

pub const DEFAULT_C: f64 = 0.01;
pub const DEFAULT_EPOCHS: usize = 50;

#[derive(Debug, Error)]
pub enum RankerError {
    #[error("dataset has no ranking pairs")]
    NoPairs,
    #[error("regularization C must be positive, got {0}")]
    BadC(f64),
    #[error("feature dimension mismatch: expected {NUM_FEATURES}, got {0}")]
    Dimension(usize),
    #[error("malformed model file: {0}")]
    Format(String),
    #[error(transparent)]
    Mask(#[from] MaskError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingModel {
    pub weights: FeatureVector,
    pub c: f64,
    pub mask: FeatureMask,
}

impl RankingModel {
    pub fn new(mut weights: FeatureVector, c: f64, mask: FeatureMask) -> Self {
        for i in mask.indices() {
            weights[i - 1] = 0.0;
        }
        Self { weights, c, mask }
    }

    /// Masked dot product.
    pub fn predict(&self, features: &FeatureVector) -> f64 {
        self.weights
            .iter()
            .zip(features)
            .enumerate()
            .filter(|(i, _)| !self.mask.contains(i + 1))
            .map(|(_, (w, x))| w * x)
            .sum()
    }

    /// Like [`predict`](Self::predict) for an arbitrary-length slice.
    pub fn predict_slice(&self, features: &[f64]) -> Result<f64, RankerError> {
        let f: &FeatureVector = features.try_into().map_err(|_| RankerError::Dimension(features.len()))?;
        Ok(self.predict(f))
    }

    /// `(index, weight)` by decreasing `|weight|`, smaller index first on ties.
    pub fn feature_importance(&self) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64)> = self.weights.iter().enumerate().map(|(i, &w)| (i + 1, w)).collect();
        out.sort_by(|x, y| y.1.abs().total_cmp(&x.1.abs()).then(x.0.cmp(&y.0)));
        out
    }

    /// Two lines: `dim 67 C <c> mask <list|none>` and the weights.
    pub fn to_text(&self) -> String {
        let mut out = format!("dim {NUM_FEATURES} C {} mask {}\n", self.c, self.mask);
        let w: Vec<String> = self.weights.iter().map(|w| w.to_string()).collect();
        let _ = writeln!(out, "{}", w.join(" "));
        out
    }

    pub fn parse(text: &str) -> Result<Self, RankerError> {
        let bad = |m: &str| RankerError::Format(m.to_string());
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<&str> = lines.next().ok_or_else(|| bad("empty"))?.split_whitespace().collect();
        let ["dim", dim, "C", c, "mask", mask] = header[..] else {
            return Err(bad("header"));
        };
        let dim: usize = dim.parse().map_err(|_| bad("dim"))?;
        if dim != NUM_FEATURES {
            return Err(RankerError::Dimension(dim));
        }
        let c: f64 = c.parse().map_err(|_| bad("C"))?;
        let mask: FeatureMask = mask.parse()?;
        let weights: Vec<f64> = lines
            .next()
            .ok_or_else(|| bad("missing weights"))?
            .split_whitespace()
            .map(|x| x.parse().map_err(|_| bad(x)))
            .collect::<Result<_, _>>()?;
        let weights: FeatureVector = weights.as_slice().try_into().map_err(|_| RankerError::Dimension(weights.len()))?;
        if mask.indices().any(|i| weights[i - 1] != 0.0) {
            return Err(bad("masked feature has nonzero weight"));
        }
        Ok(Self { weights, c, mask })
    }
}

/// Fraction of pairs `(i, j)` with `labels[i] > labels[j]` whose scores are not
/// strictly ordered the same way; `None` without pairs.
pub fn swapped_pairs(labels: &[u8], scores: &[f64]) -> Option<f64> {
    let mut pairs = 0usize;
    let mut swapped = 0usize;
    for i in 0..labels.len() {
        for j in 0..labels.len() {
            if labels[i] > labels[j] {
                pairs += 1;
                if scores[i] <= scores[j] {
                    swapped += 1;
                }
            }
        }
    }
    (pairs > 0).then(|| swapped as f64 / pairs as f64)
}

/// Index of the highest score; ties go to the conflict preferred by the
/// cardinality-first chain (features 3 and 4 descending, then feature 15
/// ascending), then to the lower index.
pub fn top_pick(sample: &NodeSample, scores: &[f64]) -> usize {
    let key = |i: usize| {
        let f = &sample.features[i];
        (scores[i], f[2], f[3], -f[14])
    };
    (0..scores.len())
        .max_by(|&x, &y| {
            let (a, b) = (key(x), key(y));
            a.0.total_cmp(&b.0)
                .then(a.1.total_cmp(&b.1))
                .then(a.2.total_cmp(&b.2))
                .then(a.3.total_cmp(&b.3))
                .then(y.cmp(&x))
        })
        .expect("sample has conflicts")
}

struct Query {
    diffs: Vec<FeatureVector>,
    scale: f64,
}

fn pairs_of(dataset: &Dataset, mask: &FeatureMask) -> Vec<Query> {
    dataset
        .samples
        .iter()
        .filter_map(|s| {
            let mut diffs = Vec::new();
            for i in 0..s.labels.len() {
                for j in 0..s.labels.len() {
                    if s.labels[i] > s.labels[j] {
                        let mut d = [0.0; NUM_FEATURES];
                        for k in 0..NUM_FEATURES {
                            d[k] = s.features[i][k] - s.features[j][k];
                        }
                        mask.apply(&mut d);
                        diffs.push(d);
                    }
                }
            }
            (!diffs.is_empty()).then(|| Query { scale: 1.0 / diffs.len() as f64, diffs })
        })
        .collect()
}

fn dot(a: &FeatureVector, b: &FeatureVector) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn objective(queries: &[Query], w: &FeatureVector, c: f64) -> f64 {
    let loss: f64 = queries
        .iter()
        .map(|q| q.scale * q.diffs.iter().map(|d| (1.0 - dot(w, d)).max(0.0)).sum::<f64>())
        .sum();
    loss + 0.5 * c * dot(w, w)
}

/// Training trace for diagnostics and tests.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub model: RankingModel,
    /// Objective of the returned model after each epoch.
    pub epoch_objective: Vec<f64>,
}

/// How [`train`] minimizes the ranking objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Optimizer {
    /// Coordinate ascent on the dual, one pair at a time. Keeps the best
    /// primal iterate seen at the end of an epoch.
    #[default]
    DualCoordinate,
    /// Stochastic subgradient steps `1/(C t)` over shuffled nodes, returning
    /// the averaged iterate.
    Subgradient,
}

impl std::str::FromStr for Optimizer {
    type Err = RankerError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dcd" => Ok(Optimizer::DualCoordinate),
            "sgd" => Ok(Optimizer::Subgradient),
            other => Err(RankerError::Format(format!("unknown optimizer {other:?}; use dcd or sgd"))),
        }
    }
}

/// Minimizes `sum_N 1/|P_N| sum_(i,j) max(0, 1 - w.(x_i - x_j)) + C/2 |w|^2`
/// over the pairs `(i, j)` of each node with `label_i > label_j`.
pub fn train(dataset: &Dataset, c: f64, mask: &FeatureMask, seed: u64, epochs: usize) -> Result<TrainReport, RankerError> {
    train_with(dataset, c, mask, seed, epochs, Optimizer::default())
}

pub fn train_with(
    dataset: &Dataset,
    c: f64,
    mask: &FeatureMask,
    seed: u64,
    epochs: usize,
    optimizer: Optimizer,
) -> Result<TrainReport, RankerError> {
    if c.partial_cmp(&0.0) != Some(Ordering::Greater) {
        return Err(RankerError::BadC(c));
    }
    let queries = pairs_of(dataset, mask);
    if queries.is_empty() {
        return Err(RankerError::NoPairs);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, epoch_objective) = match optimizer {
        Optimizer::DualCoordinate => dual_coordinate(&queries, c, &mut rng, epochs),
        Optimizer::Subgradient => subgradient(&queries, c, &mut rng, epochs),
    };
    Ok(TrainReport { model: RankingModel::new(w, c, mask.clone()), epoch_objective })
}

// Dividing the objective by C gives the usual SVM primal with per-pair cost
// bound 1/(C |P_N|); its dual is box constrained with w = sum alpha_p d_p.
fn dual_coordinate(queries: &[Query], c: f64, rng: &mut ChaCha8Rng, epochs: usize) -> (FeatureVector, Vec<f64>) {
    let pairs: Vec<(&FeatureVector, f64, f64)> = queries
        .iter()
        .flat_map(|q| q.diffs.iter().map(move |d| (d, q.scale / c, dot(d, d))))
        .filter(|&(_, _, qq)| qq > 0.0)
        .collect();
    let mut alpha = vec![0.0; pairs.len()];
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut w = [0.0; NUM_FEATURES];
    let mut best = (w, objective(queries, &w, c));
    let mut epoch_objective = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        order.shuffle(rng);
        for &p in &order {
            let (d, upper, qq) = pairs[p];
            let g = dot(&w, d) - 1.0;
            let a = alpha[p];
            let projected = if a <= 0.0 { g.min(0.0) } else if a >= upper { g.max(0.0) } else { g };
            if projected == 0.0 {
                continue;
            }
            let next = (a - g / qq).clamp(0.0, upper);
            for k in 0..NUM_FEATURES {
                w[k] += (next - a) * d[k];
            }
            alpha[p] = next;
        }
        let f = objective(queries, &w, c);
        if f < best.1 {
            best = (w, f);
        }
        epoch_objective.push(best.1);
    }
    (best.0, epoch_objective)
}

fn subgradient(queries: &[Query], c: f64, rng: &mut ChaCha8Rng, epochs: usize) -> (FeatureVector, Vec<f64>) {
    let n = queries.len() as f64;
    let mut order: Vec<usize> = (0..queries.len()).collect();
    let mut w = [0.0; NUM_FEATURES];
    let mut avg = [0.0; NUM_FEATURES];
    let mut step = 0usize;
    let mut epoch_objective = Vec::with_capacity(epochs);
    // The objective at w = 0 is n, so the minimizer has |w|^2 <= 2n/C.
    let radius = (2.0 * n / c).sqrt();
    for _ in 0..epochs {
        order.shuffle(rng);
        for &qi in &order {
            step += 1;
            let t = step as f64;
            let q = &queries[qi];
            let mut grad = [0.0; NUM_FEATURES];
            for d in q.diffs.iter().filter(|d| dot(&w, d) < 1.0) {
                for k in 0..NUM_FEATURES {
                    grad[k] -= q.scale * d[k];
                }
            }
            let eta = 1.0 / (c * t);
            for k in 0..NUM_FEATURES {
                w[k] -= eta * (n * grad[k] + c * w[k]);
            }
            let norm = dot(&w, &w).sqrt();
            if norm > radius {
                w.iter_mut().for_each(|x| *x *= radius / norm);
            }
            for k in 0..NUM_FEATURES {
                avg[k] += (w[k] - avg[k]) / t;
            }
        }
        epoch_objective.push(objective(queries, &avg, c));
    }
    (avg, epoch_objective)
}

/// Aggregate ranking quality on a labeled dataset, in percent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    /// Mean fraction of swapped pairs over nodes with at least one pair.
    pub swapped_pairs_pct: f64,
    /// Share of nodes whose top-scored conflict has label 1.
    pub top_pick_pct: f64,
    /// Expected top-pick accuracy of a uniformly random pick.
    pub random_pick_pct: f64,
    pub nodes: usize,
}

pub fn evaluate(model: &RankingModel, dataset: &Dataset) -> Evaluation {
    let mut swapped = Vec::new();
    let mut hits = 0usize;
    let mut random = 0.0;
    for s in &dataset.samples {
        let scores: Vec<f64> = s.features.iter().map(|f| model.predict(f)).collect();
        if let Some(x) = swapped_pairs(&s.labels, &scores) {
            swapped.push(x);
        }
        hits += (s.labels[top_pick(s, &scores)] == 1) as usize;
        random += s.labels.iter().filter(|&&l| l == 1).count() as f64 / s.labels.len() as f64;
    }
    let nodes = dataset.samples.len();
    let pct = |x: f64, n: usize| if n == 0 { 0.0 } else { 100.0 * x / n as f64 };
    Evaluation {
        swapped_pairs_pct: pct(swapped.iter().sum(), swapped.len()),
        top_pick_pct: pct(hits as f64, nodes),
        random_pick_pct: pct(random, nodes),
        nodes,
    }
}
