//! Conflict-selection strategies.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cbs::{Cardinality, Child, Conflict, NodeId, Search, SelectConflict, Selection};
use crate::feature::node_features;
use crate::ranker::RankingModel;

/// Per-conflict scores of one node and the ranking they induce.
#[derive(Debug, Clone)]
pub struct ScoredConflicts {
    pub scores: Vec<f64>,
    /// Conflict indices, best first.
    pub ranking: Vec<usize>,
    /// True when a larger score is better.
    pub descending: bool,
    /// Lookahead children per conflict, when the variant generated them.
    pub children: Vec<Option<[Option<Child>; 2]>>,
}

impl ScoredConflicts {
    pub fn best(&self) -> usize {
        self.ranking[0]
    }

    /// Consumes the scores and returns the top conflict with its children.
    pub fn into_selection(mut self) -> Selection {
        let index = self.best();
        let children = self.children.get_mut(index).and_then(Option::take);
        Selection { index, children }
    }
}

fn class_rank(c: &Conflict) -> u8 {
    match c.class {
        Some(Cardinality::Cardinal) => 0,
        Some(Cardinality::SemiCardinal) => 1,
        Some(Cardinality::NonCardinal) | None => 2,
    }
}

/// Orders conflict indices by score in the given direction, then by class,
/// then by time step, then by the per-conflict random keys.
pub fn rank_by(scores: &[f64], descending: bool, conflicts: &[Conflict], keys: &[u64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..conflicts.len()).collect();
    order.sort_by(|&x, &y| {
        let by_score = if descending { scores[y].total_cmp(&scores[x]) } else { scores[x].total_cmp(&scores[y]) };
        by_score
            .then(class_rank(&conflicts[x]).cmp(&class_rank(&conflicts[y])))
            .then(conflicts[x].t.cmp(&conflicts[y].t))
            .then(keys[x].cmp(&keys[y]))
            .then(x.cmp(&y))
    });
    order
}

fn tie_keys(rng: &mut ChaCha8Rng, n: usize) -> Vec<u64> {
    (0..n).map(|_| rng.gen()).collect()
}

/// Cardinal before semi-cardinal before non-cardinal, then earliest time.
/// Scores are 2, 1 and 0 by class.
pub fn rank_o0(search: &Search<'_>, node: NodeId, rng: &mut ChaCha8Rng) -> ScoredConflicts {
    let conflicts = &search.node(node).conflicts;
    let scores: Vec<f64> = conflicts.iter().map(|c| 2.0 - class_rank(c) as f64).collect();
    let keys = tie_keys(rng, conflicts.len());
    let ranking = rank_by(&scores, true, conflicts, &keys);
    ScoredConflicts { scores, ranking, descending: true, children: vec![None; conflicts.len()] }
}

/// `min(g_l + h_l, g_r + h_r)` over the two children; an infeasible child
/// counts as +inf, and both infeasible scores -inf so it ranks last.
pub fn score_o1(children: &[Option<Child>; 2]) -> f64 {
    match children.iter().flatten().map(|c| c.g + c.h).min() {
        Some(v) => v as f64,
        None => f64::NEG_INFINITY,
    }
}

/// `min(|conflicts_l|, |conflicts_r|)`; infeasible children count as +inf.
pub fn score_o2(children: &[Option<Child>; 2]) -> f64 {
    children.iter().flatten().map(|c| c.conflicts.len() as f64).fold(f64::INFINITY, f64::min)
}

/// Generates both children of every conflict and scores them with `score`.
pub fn lookahead(
    search: &mut Search<'_>,
    node: NodeId,
    rng: &mut ChaCha8Rng,
    score: fn(&[Option<Child>; 2]) -> f64,
    descending: bool,
) -> ScoredConflicts {
    let conflicts = search.node(node).conflicts.clone();
    let mut scores = Vec::with_capacity(conflicts.len());
    let mut children = Vec::with_capacity(conflicts.len());
    for c in &conflicts {
        let kids = search.expand_conflict(node, c);
        scores.push(score(&kids));
        children.push(Some(kids));
    }
    let keys = tie_keys(rng, conflicts.len());
    let ranking = rank_by(&scores, descending, &conflicts, &keys);
    ScoredConflicts { scores, ranking, descending, children }
}

pub fn rank_learned(search: &mut Search<'_>, node: NodeId, model: &RankingModel, rng: &mut ChaCha8Rng) -> ScoredConflicts {
    let features = node_features(search, node);
    let scores: Vec<f64> = features.iter().map(|f| model.predict(f)).collect();
    let conflicts = &search.node(node).conflicts;
    let keys = tie_keys(rng, conflicts.len());
    let ranking = rank_by(&scores, true, conflicts, &keys);
    ScoredConflicts { scores, ranking, descending: true, children: vec![None; conflicts.len()] }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectorKind {
    Random,
    O0,
    O1,
    O2,
    Learned,
}

impl fmt::Display for SelectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SelectorKind::Random => "random",
            SelectorKind::O0 => "o0",
            SelectorKind::O1 => "o1",
            SelectorKind::O2 => "o2",
            SelectorKind::Learned => "learned",
        })
    }
}

/// One selector per solve; the RNG drives random picks and tie-breaking.
#[derive(Debug, Clone)]
pub struct ConflictSelector {
    kind: SelectorKind,
    model: Option<RankingModel>,
    rng: ChaCha8Rng,
}

impl ConflictSelector {
    pub fn random(seed: u64) -> Self {
        Self::new(SelectorKind::Random, seed)
    }

    pub fn o0(seed: u64) -> Self {
        Self::new(SelectorKind::O0, seed)
    }

    pub fn o1(seed: u64) -> Self {
        Self::new(SelectorKind::O1, seed)
    }

    pub fn o2(seed: u64) -> Self {
        Self::new(SelectorKind::O2, seed)
    }

    pub fn learned(model: RankingModel, seed: u64) -> Self {
        Self { kind: SelectorKind::Learned, model: Some(model), rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    fn new(kind: SelectorKind, seed: u64) -> Self {
        assert!(kind != SelectorKind::Learned, "learned selector needs a model");
        Self { kind, model: None, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn kind(&self) -> SelectorKind {
        self.kind
    }

    /// Scores every conflict of `node`. The random variant puts a uniformly
    /// drawn conflict first and scores everything 0.
    pub fn score(&mut self, search: &mut Search<'_>, node: NodeId) -> ScoredConflicts {
        let n = search.node(node).conflicts.len();
        assert!(n > 0, "node has no conflicts");
        match self.kind {
            SelectorKind::Random => {
                let pick = self.rng.gen_range(0..n);
                let mut ranking: Vec<usize> = (0..n).filter(|&i| i != pick).collect();
                ranking.insert(0, pick);
                ScoredConflicts { scores: vec![0.0; n], ranking, descending: true, children: vec![None; n] }
            }
            SelectorKind::O0 => rank_o0(search, node, &mut self.rng),
            SelectorKind::O1 => lookahead(search, node, &mut self.rng, score_o1, true),
            SelectorKind::O2 => lookahead(search, node, &mut self.rng, score_o2, false),
            SelectorKind::Learned => {
                let model = self.model.as_ref().expect("learned selector has a model");
                rank_learned(search, node, model, &mut self.rng)
            }
        }
    }
}

impl SelectConflict for ConflictSelector {
    fn select(&mut self, search: &mut Search<'_>, node: NodeId) -> Selection {
        if search.node(node).conflicts.len() == 1 && self.kind != SelectorKind::O1 && self.kind != SelectorKind::O2 {
            return Selection { index: 0, children: None };
        }
        self.score(search, node).into_selection()
    }
}
