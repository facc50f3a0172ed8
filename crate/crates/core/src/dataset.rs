//! Oracle-labeled training data: collection, labeling, sampling and the
//! svmlight-style text format.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::cbs::{solve, Limits, NodeId, Search, SearchConfig, SelectConflict, Selection};
use crate::feature::{node_features, FeatureVector, NUM_FEATURES};
use crate::gridmap::{GridMap, Instance, MapError};
use crate::harness::derive_seed;
use crate::oracle::{ConflictSelector, SelectorKind};

/// One expanded CT node: a query whose items are the node's conflicts.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSample {
    pub qid: u64,
    pub features: Vec<FeatureVector>,
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<NodeSample>,
    /// Comment lines, without the leading `# `.
    pub provenance: Vec<String>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Concatenates datasets, renumbering queries so ids stay unique.
    pub fn concat(parts: impl IntoIterator<Item = Dataset>) -> Dataset {
        let mut out = Dataset::default();
        for part in parts {
            out.provenance.extend(part.provenance);
            for mut s in part.samples {
                s.qid = out.samples.len() as u64;
                out.samples.push(s);
            }
        }
        out
    }
}

/// Binary labels from oracle scores. With `m` scores and `q = floor(0.2 m)`,
/// a conflict is labeled 1 when its score is strictly better than the
/// `(q+1)`-th best; if none is, the conflicts with the best score are.
pub fn label_from_scores(scores: &[f64], descending: bool) -> Vec<u8> {
    assert!(!scores.is_empty(), "no scores to label");
    let key: Vec<f64> = scores.iter().map(|&s| if descending { s } else { -s }).collect();
    let mut sorted = key.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let threshold = sorted[scores.len() / 5];
    let labels: Vec<u8> = key.iter().map(|&s| (s.total_cmp(&threshold).is_gt()) as u8).collect();
    if labels.contains(&1) {
        return labels;
    }
    key.iter().map(|&s| (s.total_cmp(&sorted[0]).is_eq()) as u8).collect()
}

/// Wraps an oracle and records a sample at every node it is asked about.
pub struct RecordingSelector {
    pub inner: ConflictSelector,
    pub samples: Vec<NodeSample>,
}

impl SelectConflict for RecordingSelector {
    fn select(&mut self, search: &mut Search<'_>, node: NodeId) -> Selection {
        let features = node_features(search, node);
        let scored = self.inner.score(search, node);
        let labels = label_from_scores(&scored.scores, scored.descending);
        self.samples.push(NodeSample { qid: 0, features, scores: scored.scores.clone(), labels });
        scored.into_selection()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollectConfig {
    pub oracle: SelectorKind,
    pub limits: Limits,
    pub search: SearchConfig,
    pub seed: u64,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self { oracle: SelectorKind::O1, limits: Limits::default(), search: SearchConfig::default(), seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CollectReport {
    pub attempted: usize,
    pub solved: usize,
    pub nodes: usize,
}

impl CollectReport {
    pub fn warning(&self) -> Option<String> {
        (self.solved == 0).then(|| format!("none of {} instances solved; dataset is empty", self.attempted))
    }
}

/// Runs the oracle-guided solver on every instance and keeps the samples of
/// the solved runs, ordered by instance index and then expansion order.
pub fn collect(
    map: &GridMap,
    map_name: &str,
    instances: &[Instance],
    config: &CollectConfig,
) -> Result<(Dataset, CollectReport), MapError> {
    let selector = |seed| match config.oracle {
        SelectorKind::O0 => ConflictSelector::o0(seed),
        SelectorKind::O1 => ConflictSelector::o1(seed),
        SelectorKind::O2 => ConflictSelector::o2(seed),
        other => panic!("{other} is not an oracle"),
    };
    let runs: Vec<(bool, Vec<NodeSample>)> = instances
        .par_iter()
        .enumerate()
        .map(|(i, inst)| {
            let mut rec = RecordingSelector { inner: selector(derive_seed(config.seed, i as u64)), samples: Vec::new() };
            let out = solve(map, inst, &mut rec, config.limits, config.search)?;
            Ok((out.record.solved, rec.samples))
        })
        .collect::<Result<_, MapError>>()?;
    let k = instances.iter().map(Instance::num_agents).max().unwrap_or(0);
    let mut dataset = Dataset {
        samples: Vec::new(),
        provenance: vec![
            format!("map={map_name} k={k} oracle={} seed={}", config.oracle, config.seed),
            "single-conflict nodes retained".to_string(),
        ],
    };
    let mut solved = 0;
    for (ok, samples) in runs {
        if !ok {
            continue;
        }
        solved += 1;
        for mut s in samples {
            s.qid = dataset.samples.len() as u64;
            dataset.samples.push(s);
        }
    }
    let report = CollectReport { attempted: instances.len(), solved, nodes: dataset.samples.len() };
    Ok((dataset, report))
}

/// Uniform sample of `n` nodes without replacement (reservoir sampling),
/// kept in their original order.
pub fn sample_nodes(dataset: &Dataset, n: usize, seed: u64) -> Dataset {
    assert!(n >= 1, "sample size must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reservoir: Vec<usize> = Vec::with_capacity(n);
    for i in 0..dataset.samples.len() {
        if i < n {
            reservoir.push(i);
        } else {
            let j = rng.gen_range(0..=i);
            if j < n {
                reservoir[j] = i;
            }
        }
    }
    reservoir.sort_unstable();
    let mut provenance = dataset.provenance.clone();
    provenance.push(format!("sampled n={n} seed={seed}"));
    Dataset { samples: reservoir.into_iter().map(|i| dataset.samples[i].clone()).collect(), provenance }
}

pub fn write_dataset(dataset: &Dataset) -> String {
    let mut out = String::new();
    for p in &dataset.provenance {
        let _ = writeln!(out, "# {p}");
    }
    for s in &dataset.samples {
        for ((f, score), label) in s.features.iter().zip(&s.scores).zip(&s.labels) {
            let _ = write!(out, "{label} qid:{}", s.qid);
            for (i, v) in f.iter().enumerate().filter(|(_, v)| **v != 0.0) {
                let _ = write!(out, " {}:{v}", i + 1);
            }
            let _ = writeln!(out, " # score={score}");
        }
    }
    out
}

#[derive(Debug, Error, PartialEq)]
pub enum DatasetError {
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("line {line}: feature index {index} outside 1..={NUM_FEATURES}")]
    Dimension { line: usize, index: usize },
}

/// A parsed dataset and the line numbers of rows that repeat an earlier row
/// of the same query.
#[derive(Debug, Clone, PartialEq)]
pub struct ReadOutcome {
    pub dataset: Dataset,
    pub duplicates: Vec<usize>,
}

pub fn read_dataset(text: &str) -> Result<ReadOutcome, DatasetError> {
    let mut provenance = Vec::new();
    let mut by_qid: BTreeMap<u64, usize> = BTreeMap::new();
    let mut samples: Vec<NodeSample> = Vec::new();
    let mut duplicates = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = no + 1;
        let bad = |msg: &str| DatasetError::Malformed { line, msg: msg.to_string() };
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        if let Some(c) = raw.strip_prefix('#') {
            provenance.push(c.trim_start().to_string());
            continue;
        }
        let (body, comment) = raw.split_once('#').unwrap_or((raw, ""));
        let score = match comment.trim().strip_prefix("score=") {
            Some(s) => s.parse::<f64>().map_err(|_| bad("score"))?,
            None => 0.0,
        };
        let mut tokens = body.split_whitespace();
        let label: u8 = tokens.next().and_then(|l| l.parse().ok()).filter(|l| *l <= 1).ok_or_else(|| bad("label"))?;
        let qid: u64 = tokens
            .next()
            .and_then(|q| q.strip_prefix("qid:"))
            .and_then(|q| q.parse().ok())
            .ok_or_else(|| bad("qid"))?;
        let mut f = [0.0; NUM_FEATURES];
        for tok in tokens {
            let (i, v) = tok.split_once(':').ok_or_else(|| bad(tok))?;
            let index: usize = i.parse().map_err(|_| bad(tok))?;
            if !(1..=NUM_FEATURES).contains(&index) {
                return Err(DatasetError::Dimension { line, index });
            }
            f[index - 1] = v.parse().map_err(|_| bad(tok))?;
        }
        let slot = *by_qid.entry(qid).or_insert_with(|| {
            samples.push(NodeSample { qid, features: vec![], scores: vec![], labels: vec![] });
            samples.len() - 1
        });
        let s = &mut samples[slot];
        if s.features.contains(&f) {
            duplicates.push(line);
        }
        s.features.push(f);
        s.scores.push(score);
        s.labels.push(label);
    }
    Ok(ReadOutcome { dataset: Dataset { samples, provenance }, duplicates })
}
