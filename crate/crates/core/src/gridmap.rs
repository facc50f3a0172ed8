//! Four-neighbor grid maps in the MovingAI `.map` format, distance fields and
//! random instance generation.

use std::collections::VecDeque;
use std::fmt::Write as _;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Row-major cell index, `row * width + col`.
pub type Vertex = usize;

/// Marker for unreachable cells in a [`DistanceField`].
pub const UNREACHABLE: u32 = u32::MAX;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MapError {
    #[error("missing header field: {0}")]
    MissingHeader(&'static str),
    #[error("invalid header line: {0}")]
    InvalidHeader(String),
    #[error("expected {expected} rows, got {got}")]
    RowCount { expected: usize, got: usize },
    #[error("row {row}: expected width {expected}, got {got}")]
    RowWidth { row: usize, expected: usize, got: usize },
    #[error("row {row}, col {col}: unknown cell character {ch:?}")]
    UnknownCell { row: usize, col: usize, ch: char },
    #[error("map has no unblocked cells")]
    NoFreeCells,
    #[error("vertex {0} is blocked or out of range")]
    BlockedVertex(Vertex),
    #[error("requested {requested} agents but the largest component has {available} cells")]
    TooManyAgents { requested: usize, available: usize },
    #[error("malformed instance file: {0}")]
    Instance(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridMap {
    width: usize,
    height: usize,
    blocked: Vec<bool>,
}

impl GridMap {
    /// Builds a map from rows of MovingAI cell characters.
    pub fn from_rows<S: AsRef<str>>(rows: &[S]) -> Result<Self, MapError> {
        let height = rows.len();
        let width = rows.first().map(|r| r.as_ref().chars().count()).unwrap_or(0);
        if height == 0 || width == 0 {
            return Err(MapError::InvalidHeader("empty map".into()));
        }
        let mut blocked = Vec::with_capacity(width * height);
        for (row, line) in rows.iter().enumerate() {
            let line = line.as_ref();
            let got = line.chars().count();
            if got != width {
                return Err(MapError::RowWidth { row, expected: width, got });
            }
            for (col, ch) in line.chars().enumerate() {
                blocked.push(match ch {
                    '.' | 'G' => false,
                    '@' | 'O' | 'T' => true,
                    _ => return Err(MapError::UnknownCell { row, col, ch }),
                });
            }
        }
        Ok(Self { width, height, blocked })
    }

    /// Parses MovingAI `.map` text.
    pub fn parse(text: &str) -> Result<Self, MapError> {
        let mut lines = text.lines();
        let mut kind = None;
        let mut height = None;
        let mut width = None;
        let mut saw_map = false;
        for line in lines.by_ref() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if line == "map" {
                saw_map = true;
                break;
            }
            let mut parts = line.split_whitespace();
            let key = parts.next().unwrap_or_default();
            let value = parts.next();
            if parts.next().is_some() {
                return Err(MapError::InvalidHeader(line.to_string()));
            }
            let parse_dim = |v: Option<&str>| -> Result<usize, MapError> {
                v.and_then(|v| v.parse::<usize>().ok())
                    .filter(|&v| v > 0)
                    .ok_or_else(|| MapError::InvalidHeader(line.to_string()))
            };
            match key {
                "type" => kind = Some(value.ok_or_else(|| MapError::InvalidHeader(line.into()))?),
                "height" => height = Some(parse_dim(value)?),
                "width" => width = Some(parse_dim(value)?),
                _ => return Err(MapError::InvalidHeader(line.to_string())),
            }
        }
        kind.ok_or(MapError::MissingHeader("type"))?;
        let height = height.ok_or(MapError::MissingHeader("height"))?;
        let width = width.ok_or(MapError::MissingHeader("width"))?;
        if !saw_map {
            return Err(MapError::MissingHeader("map"));
        }
        let rows: Vec<&str> = lines
            .map(|l| l.trim_end_matches('\r'))
            .filter(|l| !l.is_empty())
            .collect();
        if rows.len() != height {
            return Err(MapError::RowCount { expected: height, got: rows.len() });
        }
        let map = Self::from_rows(&rows)?;
        if map.width != width {
            return Err(MapError::RowWidth { row: 0, expected: width, got: map.width });
        }
        Ok(map)
    }

    /// Serializes to MovingAI `.map` text.
    pub fn to_map_string(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "type octile\nheight {}\nwidth {}\nmap", self.height, self.width);
        for r in 0..self.height {
            for c in 0..self.width {
                out.push(if self.blocked[r * self.width + c] { '@' } else { '.' });
            }
            out.push('\n');
        }
        out
    }

    /// A `width`×`height` map with exactly `num_blocked` cells blocked, chosen
    /// uniformly at random from `seed`.
    pub fn random(width: usize, height: usize, num_blocked: usize, seed: u64) -> Self {
        let n = width * height;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut blocked = vec![false; n];
        for v in index::sample(&mut rng, n, num_blocked.min(n)).iter() {
            blocked[v] = true;
        }
        Self { width, height, blocked }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn num_cells(&self) -> usize {
        self.blocked.len()
    }

    pub fn vertex(&self, row: usize, col: usize) -> Vertex {
        row * self.width + col
    }

    pub fn coords(&self, v: Vertex) -> (usize, usize) {
        (v / self.width, v % self.width)
    }

    pub fn is_free(&self, v: Vertex) -> bool {
        v < self.blocked.len() && !self.blocked[v]
    }

    pub fn free_count(&self) -> usize {
        self.blocked.iter().filter(|b| !**b).count()
    }

    /// Free four-neighbors of `v`, in the fixed order up, left, right, down.
    pub fn neighbors(&self, v: Vertex) -> impl Iterator<Item = Vertex> + '_ {
        let (r, c) = self.coords(v);
        let w = self.width;
        let up = (r > 0).then(|| v - w);
        let left = (c > 0).then(|| v - 1);
        let right = (c + 1 < w).then(|| v + 1);
        let down = (r + 1 < self.height).then(|| v + w);
        [up, left, right, down]
            .into_iter()
            .flatten()
            .filter(move |&u| !self.blocked[u])
    }

    pub fn adjacent(&self, u: Vertex, v: Vertex) -> bool {
        self.is_free(u) && self.is_free(v) && self.neighbors(u).any(|x| x == v)
    }

    /// Number of undirected adjacency edges between free cells.
    pub fn num_edges(&self) -> usize {
        (0..self.num_cells())
            .filter(|&v| self.is_free(v))
            .map(|v| self.neighbors(v).filter(|&u| u > v).count())
            .sum()
    }

    /// The largest connected set of free cells, sorted by index. Equal sizes
    /// resolve to the component holding the smallest vertex index.
    pub fn largest_component(&self) -> Result<Vec<Vertex>, MapError> {
        let n = self.num_cells();
        let mut label = vec![usize::MAX; n];
        let mut best: Option<Vec<Vertex>> = None;
        for s in 0..n {
            if self.blocked[s] || label[s] != usize::MAX {
                continue;
            }
            let mut comp = vec![s];
            label[s] = s;
            let mut head = 0;
            while head < comp.len() {
                let v = comp[head];
                head += 1;
                for u in self.neighbors(v) {
                    if label[u] == usize::MAX {
                        label[u] = s;
                        comp.push(u);
                    }
                }
            }
            // Components are discovered in order of their smallest index, so a
            // strict comparison keeps the earliest on ties.
            if best.as_ref().is_none_or(|b| comp.len() > b.len()) {
                best = Some(comp);
            }
        }
        let mut comp = best.ok_or(MapError::NoFreeCells)?;
        comp.sort_unstable();
        Ok(comp)
    }

    /// Breadth-first distances from `source`; cells farther than `cap` are
    /// reported as unreachable.
    pub fn bfs_distance(&self, source: Vertex, cap: Option<u32>) -> Result<DistanceField, MapError> {
        if !self.is_free(source) {
            return Err(MapError::BlockedVertex(source));
        }
        Ok(self.multi_source_bfs(std::slice::from_ref(&source), cap))
    }

    pub(crate) fn multi_source_bfs(&self, sources: &[Vertex], cap: Option<u32>) -> DistanceField {
        let mut dist = vec![UNREACHABLE; self.num_cells()];
        let mut queue = VecDeque::new();
        for &s in sources {
            if self.is_free(s) && dist[s] == UNREACHABLE {
                dist[s] = 0;
                queue.push_back(s);
            }
        }
        let cap = cap.unwrap_or(UNREACHABLE - 1);
        while let Some(v) = queue.pop_front() {
            let d = dist[v];
            if d >= cap {
                continue;
            }
            for u in self.neighbors(v) {
                if dist[u] == UNREACHABLE {
                    dist[u] = d + 1;
                    queue.push_back(u);
                }
            }
        }
        DistanceField { dist }
    }

    /// `counts[w-1]` is the number of cells at distance exactly `w` (1..=5) from
    /// the nearest member of `vertices`.
    pub fn ring_counts(&self, vertices: &[Vertex]) -> [u32; 5] {
        let mut counts = [0u32; 5];
        if vertices.is_empty() {
            return counts;
        }
        let field = self.multi_source_bfs(vertices, Some(5));
        for &d in &field.dist {
            if (1..=5).contains(&d) {
                counts[d as usize - 1] += 1;
            }
        }
        counts
    }

    /// Draws `k` distinct starts and, independently, `k` distinct goals from the
    /// largest connected component. Agent `i` gets the `i`-th draw of each.
    pub fn generate_instance(&self, k: usize, seed: u64) -> Result<Instance, MapError> {
        let comp = self.largest_component()?;
        if k > comp.len() {
            return Err(MapError::TooManyAgents { requested: k, available: comp.len() });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let starts = index::sample(&mut rng, comp.len(), k);
        let goals = index::sample(&mut rng, comp.len(), k);
        let tasks = starts
            .iter()
            .zip(goals.iter())
            .map(|(s, g)| Task { start: comp[s], goal: comp[g] })
            .collect();
        Ok(Instance { tasks, seed })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DistanceField {
    dist: Vec<u32>,
}

impl DistanceField {
    /// Distance to `v`, or [`UNREACHABLE`].
    pub fn get(&self, v: Vertex) -> u32 {
        self.dist[v]
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.dist
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Task {
    pub start: Vertex,
    pub goal: Vertex,
}

/// Start/goal assignment for every agent on some map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    pub tasks: Vec<Task>,
    pub seed: u64,
}

impl Instance {
    pub fn num_agents(&self) -> usize {
        self.tasks.len()
    }

    /// Checks distinct starts, distinct goals and that every endpoint lies in
    /// the map's largest component.
    pub fn validate(&self, map: &GridMap) -> Result<(), MapError> {
        let comp = map.largest_component()?;
        let mut starts: Vec<_> = self.tasks.iter().map(|t| t.start).collect();
        let mut goals: Vec<_> = self.tasks.iter().map(|t| t.goal).collect();
        for v in starts.iter().chain(goals.iter()) {
            if comp.binary_search(v).is_err() {
                return Err(MapError::Instance(format!("vertex {v} is outside the largest component")));
            }
        }
        starts.sort_unstable();
        goals.sort_unstable();
        if starts.windows(2).any(|w| w[0] == w[1]) {
            return Err(MapError::Instance("duplicate start".into()));
        }
        if goals.windows(2).any(|w| w[0] == w[1]) {
            return Err(MapError::Instance("duplicate goal".into()));
        }
        Ok(())
    }

    /// `k seed`, then one `start_row start_col goal_row goal_col` line per agent.
    pub fn to_text(&self, map: &GridMap) -> String {
        let mut out = format!("{} {}\n", self.tasks.len(), self.seed);
        for t in &self.tasks {
            let (sr, sc) = map.coords(t.start);
            let (gr, gc) = map.coords(t.goal);
            let _ = writeln!(out, "{sr} {sc} {gr} {gc}");
        }
        out
    }

    pub fn parse(map: &GridMap, text: &str) -> Result<Self, MapError> {
        let bad = |msg: &str| MapError::Instance(msg.to_string());
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let header = lines.next().ok_or_else(|| bad("empty file"))?;
        let nums: Vec<u64> = header
            .split_whitespace()
            .map(|x| x.parse().map_err(|_| bad(header)))
            .collect::<Result<_, _>>()?;
        let [k, seed] = nums[..] else {
            return Err(bad(header));
        };
        let mut tasks = Vec::with_capacity(k as usize);
        for line in lines.by_ref().take(k as usize) {
            let f: Vec<usize> = line
                .split_whitespace()
                .map(|x| x.parse().map_err(|_| bad(line)))
                .collect::<Result<_, _>>()?;
            let [sr, sc, gr, gc] = f[..] else {
                return Err(bad(line));
            };
            if sr >= map.height() || gr >= map.height() || sc >= map.width() || gc >= map.width() {
                return Err(bad(line));
            }
            let (start, goal) = (map.vertex(sr, sc), map.vertex(gr, gc));
            if !map.is_free(start) || !map.is_free(goal) {
                return Err(MapError::BlockedVertex(if map.is_free(start) { goal } else { start }));
            }
            tasks.push(Task { start, goal });
        }
        if tasks.len() != k as usize {
            return Err(bad("fewer agent lines than declared"));
        }
        if lines.next().is_some() {
            return Err(bad("trailing lines"));
        }
        Ok(Self { tasks, seed })
    }
}
