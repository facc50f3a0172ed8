//! The 67 conflict features and their per-node normalization.
//!
//! Indices below are 1-based, matching the serialized dataset and model
//! files; arrays are 0-based internally.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::cbs::{Cardinality, Conflict, NodeId, Search};
use crate::gridmap::{GridMap, Vertex, UNREACHABLE};

pub const NUM_FEATURES: usize = 67;

/// Radius of the neighborhood features.
const RADIUS: u32 = 5;

pub type FeatureVector = [f64; NUM_FEATURES];

/// A point `(vertex, time)` of the time-expanded graph.
pub type TimedVertex = (Vertex, u32);

/// Distances from `source` within the time-expanded graph, treating its
/// level-to-level links (wait or move) as undirected; points farther than
/// `cap` are absent.
pub fn time_expanded_bfs(map: &GridMap, source: TimedVertex, cap: u32) -> HashMap<TimedVertex, u32> {
    let mut dist = HashMap::new();
    dist.insert(source, 0);
    let mut queue = VecDeque::from([source]);
    while let Some((v, t)) = queue.pop_front() {
        let d = dist[&(v, t)];
        if d >= cap {
            continue;
        }
        for u in std::iter::once(v).chain(map.neighbors(v)) {
            for nt in [t.checked_sub(1), Some(t + 1)].into_iter().flatten() {
                dist.entry((u, nt)).or_insert_with(|| {
                    queue.push_back((u, nt));
                    d + 1
                });
            }
        }
    }
    dist
}

/// Minimum time-expanded distance between two point sets, or `None` if it
/// exceeds `cap`.
pub fn time_expanded_distance(map: &GridMap, sources: &[TimedVertex], targets: &[TimedVertex], cap: u32) -> Option<u32> {
    sources
        .iter()
        .filter_map(|&s| {
            let d = time_expanded_bfs(map, s, cap);
            targets.iter().filter_map(|q| d.get(q).copied()).min()
        })
        .min()
}

fn timed_vertices(c: &Conflict) -> Vec<TimedVertex> {
    c.vertices().into_iter().map(|v| (v, c.t)).collect()
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

fn min_max_sum(a: f64, b: f64) -> [f64; 3] {
    [a.min(b), a.max(b), a + b]
}

/// Unnormalized features of conflict `index` at `node`.
pub fn extract_raw(search: &mut Search<'_>, node: NodeId, index: usize) -> FeatureVector {
    let ring = {
        let c = &search.node(node).conflicts[index];
        let mut vs = c.vertices();
        vs.sort_unstable();
        search.ring_counts(&vs)
    };
    let search = &*search;
    let n = search.node(node);
    let c = n.conflicts[index];
    let (a, b, t) = (c.a, c.b, c.t);
    let mut f = [0.0; NUM_FEATURES];
    let mut put = |idx: usize, v: f64| f[idx - 1] = v;

    put(1, c.is_edge() as u8 as f64);
    put(2, !c.is_edge() as u8 as f64);
    let class = c.class.expect("conflicts are classified");
    put(3, (class == Cardinality::Cardinal) as u8 as f64);
    put(4, (class == Cardinality::SemiCardinal) as u8 as f64);
    put(5, (class == Cardinality::NonCardinal) as u8 as f64);

    let hist = &search.history;
    for (i, v) in min_max_sum(hist.agent(a) as f64, hist.agent(b) as f64).into_iter().enumerate() {
        put(6 + i, v);
    }
    let vcounts: Vec<f64> = c.vertices().iter().map(|&v| hist.vertex(v) as f64).collect();
    put(9, vcounts.iter().copied().fold(f64::INFINITY, f64::min));
    put(10, vcounts.iter().copied().fold(0.0, f64::max));
    put(11, vcounts.iter().sum());

    let involved = |agent| n.conflicts.iter().filter(|x| x.a == agent || x.b == agent).count() as f64;
    for (i, v) in min_max_sum(involved(a), involved(b)).into_iter().enumerate() {
        put(12 + i, v);
    }

    let tf = t as f64;
    put(15, tf);
    put(16, ratio(tf, n.makespan() as f64));

    let (ca, cb) = (n.paths[a].cost() as f64, n.paths[b].cost() as f64);
    put(17, ca.min(cb));
    put(18, ca.max(cb));
    put(19, ca + cb);
    put(20, (ca - cb).abs());
    put(21, ratio(ca.min(cb), ca.max(cb)));

    let (ia, ib) = (search.individual_cost(a) as f64, search.individual_cost(b) as f64);
    put(22, (ca - ia).min(cb - ib));
    put(23, (ca - ia).max(cb - ib));
    let (ra, rb) = (ratio(ia.min(ca), ia.max(ca)), ratio(ib.min(cb), ib.max(cb)));
    put(24, ra.min(rb));
    put(25, ra.max(rb));
    let g = n.g as f64;
    put(26, ratio(ca, g).min(ratio(cb, g)));
    put(27, ratio(ca, g).max(ratio(cb, g)));
    let reached = (n.paths[a].cost() <= t) as u8 + (n.paths[b].cost() <= t) as u8;
    put(28, (reached == 0) as u8 as f64);
    put(29, (reached > 0) as u8 as f64);
    put(30, (ca - tf).min(cb - tf));
    put(31, (ca - tf).max(cb - tf));
    put(32, ratio(ca, tf).min(ratio(cb, tf)));
    put(33, ratio(ca, tf).max(ratio(cb, tf)));

    // Time-expanded neighborhoods, one BFS per contested point.
    let sources = timed_vertices(&c);
    let fields: Vec<HashMap<TimedVertex, u32>> =
        sources.iter().map(|&s| time_expanded_bfs(search.map, s, RADIUS)).collect();
    let te_dist = |q: &TimedVertex| fields.iter().filter_map(|d| d.get(q).copied()).min();
    let spatial = search.map.multi_source_bfs(&c.vertices(), Some(RADIUS));
    let mut near_te = [0u32; 6];
    let mut near_g = [0u32; 6];
    for (j, other) in n.conflicts.iter().enumerate() {
        if j == index {
            continue;
        }
        if let Some(d) = timed_vertices(other).iter().filter_map(te_dist).min() {
            near_te[d as usize] += 1;
        }
        let d = other.vertices().iter().map(|&v| spatial.get(v)).min().unwrap_or(UNREACHABLE);
        if d <= RADIUS {
            near_g[d as usize] += 1;
        }
    }
    let mut agents_at = [0u32; 6];
    let t_lo = t.saturating_sub(RADIUS);
    for path in &n.paths {
        let mut hit = [false; 6];
        for tau in t_lo..=t + RADIUS {
            let q = (path.at(tau), tau);
            for d in fields.iter().filter_map(|field| field.get(&q)) {
                hit[*d as usize] = true;
            }
        }
        for w in 0..6 {
            agents_at[w] += hit[w] as u32;
        }
    }
    for w in 0..6 {
        put(34 + w, near_te[w] as f64);
        put(40 + w, agents_at[w] as f64);
        put(46 + w, near_g[w] as f64);
    }

    let (ma, mb) = (n.mdds[a].as_ref().expect("mdd built"), n.mdds[b].as_ref().expect("mdd built"));
    for (i, level) in (t as i64 - 2..=t as i64 + 2).enumerate() {
        let (wa, wb) = (ma.width(level) as f64, mb.width(level) as f64);
        put(52 + 2 * i, wa.min(wb));
        put(53 + 2 * i, wa.max(wb));
    }
    for (i, r) in ring.iter().enumerate() {
        put(62 + i, *r as f64);
    }
    put(67, n.wdg_weight(a, b) as f64);
    f
}

/// Per-feature min-max scaling to `[0, 1]` across one node's conflicts;
/// constant features become 0.
pub fn normalize(raw: &[FeatureVector]) -> Vec<FeatureVector> {
    let mut out = raw.to_vec();
    for i in 0..NUM_FEATURES {
        let lo = raw.iter().map(|f| f[i]).fold(f64::INFINITY, f64::min);
        let hi = raw.iter().map(|f| f[i]).fold(f64::NEG_INFINITY, f64::max);
        for f in out.iter_mut() {
            f[i] = if hi > lo { (f[i] - lo) / (hi - lo) } else { 0.0 };
        }
    }
    out
}

/// Normalized feature vectors for every conflict of `node`, in conflict order.
pub fn node_features(search: &mut Search<'_>, node: NodeId) -> Vec<FeatureVector> {
    let raw: Vec<FeatureVector> =
        (0..search.node(node).conflicts.len()).map(|i| extract_raw(search, node, i)).collect();
    normalize(&raw)
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MaskError {
    #[error("feature index {0} out of range 1..=67")]
    OutOfRange(usize),
    #[error("unrecognized feature mask item {0:?}")]
    BadItem(String),
}

/// Feature indices (1-based) forced to zero for training and prediction.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FeatureMask(BTreeSet<usize>);

impl FeatureMask {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn from_indices(indices: impl IntoIterator<Item = usize>) -> Result<Self, MaskError> {
        let set: BTreeSet<usize> = indices.into_iter().collect();
        if let Some(&bad) = set.iter().find(|&&i| i == 0 || i > NUM_FEATURES) {
            return Err(MaskError::OutOfRange(bad));
        }
        Ok(Self(set))
    }

    /// Feature categories used in hold-out experiments: 1 cardinality
    /// indicators, 2 per-agent resolution counts, 3 per-agent conflict counts,
    /// 4 cost versus individually-minimal cost, 5 MDD/ring/WDG features.
    pub fn category(n: u8) -> Option<Vec<usize>> {
        match n {
            1 => Some(vec![3, 4, 5]),
            2 => Some(vec![6, 7, 8]),
            3 => Some(vec![12, 13]),
            4 => Some(vec![22, 23, 24, 25]),
            5 => Some((52..=67).collect()),
            _ => None,
        }
    }

    /// Narrow reading of category 5.
    pub fn category5_narrow() -> Vec<usize> {
        vec![62, 67]
    }

    /// Masks everything except `keep`.
    pub fn keep_only(keep: impl IntoIterator<Item = usize>) -> Result<Self, MaskError> {
        let keep = Self::from_indices(keep)?;
        Ok(Self((1..=NUM_FEATURES).filter(|i| !keep.0.contains(i)).collect()))
    }

    pub fn contains(&self, index: usize) -> bool {
        self.0.contains(&index)
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn apply(&self, f: &mut FeatureVector) {
        for &i in &self.0 {
            f[i - 1] = 0.0;
        }
    }
}

impl FromStr for FeatureMask {
    type Err = MaskError;

    /// `none`, or a comma list of indices, ranges `a-b`, categories `cat1`..`cat5`
    /// and `cat5-narrow`. A `keep:` prefix masks the complement instead.
    fn from_str(s: &str) -> Result<Self, MaskError> {
        let s = s.trim();
        if s.is_empty() || s == "none" {
            return Ok(Self::none());
        }
        let (keep, body) = match s.strip_prefix("keep:") {
            Some(rest) => (true, rest),
            None => (false, s),
        };
        let mut indices = Vec::new();
        for item in body.split(',').map(str::trim).filter(|x| !x.is_empty()) {
            let bad = || MaskError::BadItem(item.to_string());
            if item == "cat5-narrow" {
                indices.extend(Self::category5_narrow());
            } else if let Some(n) = item.strip_prefix("cat") {
                let n: u8 = n.parse().map_err(|_| bad())?;
                indices.extend(Self::category(n).ok_or_else(bad)?);
            } else if let Some((lo, hi)) = item.split_once('-') {
                let lo: usize = lo.parse().map_err(|_| bad())?;
                let hi: usize = hi.parse().map_err(|_| bad())?;
                indices.extend(lo..=hi);
            } else {
                indices.push(item.parse().map_err(|_| bad())?);
            }
        }
        if keep {
            Self::keep_only(indices)
        } else {
            Self::from_indices(indices)
        }
    }
}

impl fmt::Display for FeatureMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("none");
        }
        let list: Vec<String> = self.0.iter().map(|i| i.to_string()).collect();
        f.write_str(&list.join(","))
    }
}
