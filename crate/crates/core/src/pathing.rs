//! Single-agent planning under CBS constraints and MDD construction.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, HashSet};

use thiserror::Error;

use crate::gridmap::{DistanceField, GridMap, Vertex, UNREACHABLE};

pub type AgentId = usize;

/// A vertex constraint forbids `agent` from being at `v` at time `t`; an edge
/// constraint forbids it from moving `from -> to` between `t` and `t + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Constraint {
    Vertex { agent: AgentId, v: Vertex, t: u32 },
    Edge { agent: AgentId, from: Vertex, to: Vertex, t: u32 },
}

impl Constraint {
    pub fn agent(&self) -> AgentId {
        match *self {
            Constraint::Vertex { agent, .. } | Constraint::Edge { agent, .. } => agent,
        }
    }

    pub fn time(&self) -> u32 {
        match *self {
            Constraint::Vertex { t, .. } | Constraint::Edge { t, .. } => t,
        }
    }
}

/// Lookup structure for the constraints of one agent.
#[derive(Debug, Clone, Default)]
pub struct ConstraintTable {
    vertex: HashSet<(Vertex, u32)>,
    edge: HashSet<(Vertex, Vertex, u32)>,
    latest: u32,
    /// Earliest time from which the agent may stay at its goal forever.
    goal_hold_from: u32,
}

impl ConstraintTable {
    pub fn new<'a>(agent: AgentId, goal: Vertex, constraints: impl IntoIterator<Item = &'a Constraint>) -> Self {
        let mut table = Self::default();
        for c in constraints.into_iter().filter(|c| c.agent() == agent) {
            match *c {
                Constraint::Vertex { v, t, .. } => {
                    table.vertex.insert((v, t));
                    if v == goal {
                        table.goal_hold_from = table.goal_hold_from.max(t + 1);
                    }
                }
                Constraint::Edge { from, to, t, .. } => {
                    table.edge.insert((from, to, t));
                }
            }
            table.latest = table.latest.max(c.time() + 1);
        }
        table
    }

    pub fn vertex_blocked(&self, v: Vertex, t: u32) -> bool {
        self.vertex.contains(&(v, t))
    }

    pub fn edge_blocked(&self, from: Vertex, to: Vertex, t: u32) -> bool {
        self.edge.contains(&(from, to, t))
    }

    pub fn goal_hold_from(&self) -> u32 {
        self.goal_hold_from
    }

    /// One past the latest constrained time step.
    pub fn latest(&self) -> u32 {
        self.latest
    }

    pub fn is_empty(&self) -> bool {
        self.vertex.is_empty() && self.edge.is_empty()
    }
}

/// Positions at time steps `0..=cost`; the agent stays at the last vertex
/// afterwards.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Path {
    vertices: Vec<Vertex>,
}

impl Path {
    /// Trailing repetitions of the final vertex are dropped so that the cost
    /// is the arrival time after which the agent no longer moves.
    pub fn new(mut vertices: Vec<Vertex>) -> Self {
        assert!(!vertices.is_empty(), "path needs at least one vertex");
        while vertices.len() > 1 && vertices[vertices.len() - 2] == vertices[vertices.len() - 1] {
            vertices.pop();
        }
        Self { vertices }
    }

    pub fn cost(&self) -> u32 {
        (self.vertices.len() - 1) as u32
    }

    pub fn at(&self, t: u32) -> Vertex {
        self.vertices[(t as usize).min(self.vertices.len() - 1)]
    }

    pub fn start(&self) -> Vertex {
        self.vertices[0]
    }

    pub fn goal(&self) -> Vertex {
        *self.vertices.last().unwrap()
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    /// True if the path obeys every constraint in `table`, including those at
    /// its goal after arrival.
    pub fn respects(&self, table: &ConstraintTable) -> bool {
        let horizon = self.cost().max(table.latest());
        (0..=horizon).all(|t| !table.vertex_blocked(self.at(t), t))
            && (0..horizon).all(|t| {
                let (u, v) = (self.at(t), self.at(t + 1));
                u == v || !table.edge_blocked(u, v, t)
            })
    }
}

/// Occupancy of the other agents' paths, used to break ties among
/// cost-minimal paths in favor of fewer collisions.
#[derive(Debug, Default)]
pub struct CollisionTable {
    occupied: HashMap<(Vertex, u32), u32>,
    moves: HashMap<(Vertex, Vertex, u32), u32>,
    parked: HashMap<Vertex, Vec<u32>>,
    horizon: u32,
}

impl CollisionTable {
    pub fn new<'a>(paths: impl IntoIterator<Item = &'a Path>) -> Self {
        let mut table = Self::default();
        for p in paths {
            let c = p.cost();
            for t in 0..c {
                *table.occupied.entry((p.at(t), t)).or_default() += 1;
                if p.at(t) != p.at(t + 1) {
                    *table.moves.entry((p.at(t), p.at(t + 1), t)).or_default() += 1;
                }
            }
            table.parked.entry(p.goal()).or_default().push(c);
            table.horizon = table.horizon.max(c);
        }
        table
    }

    pub fn vertex_count(&self, v: Vertex, t: u32) -> u32 {
        let moving = self.occupied.get(&(v, t)).copied().unwrap_or(0);
        let parked = self
            .parked
            .get(&v)
            .map_or(0, |arrivals| arrivals.iter().filter(|&&a| a <= t).count() as u32);
        moving + parked
    }

    /// Agents traversing `to -> from` while we traverse `from -> to` at `t`.
    pub fn swap_count(&self, from: Vertex, to: Vertex, t: u32) -> u32 {
        self.moves.get(&(to, from, t)).copied().unwrap_or(0)
    }

    /// Collisions incurred by staying at `goal` from time `arrival` onwards.
    fn parking_count(&self, goal: Vertex, arrival: u32) -> u32 {
        (arrival + 1..=self.horizon).map(|t| self.vertex_count(goal, t)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("no path satisfies the constraints")]
    Infeasible,
    #[error("low-level expansion budget exhausted")]
    BudgetExceeded,
}

/// Everything the low-level search needs about one agent.
#[derive(Debug, Clone, Copy)]
pub struct AgentQuery<'a> {
    pub map: &'a GridMap,
    /// Distances to `goal`, used as the A* heuristic.
    pub goal_dist: &'a DistanceField,
    pub start: Vertex,
    pub goal: Vertex,
}

#[derive(Clone, Copy)]
struct SearchNode {
    v: Vertex,
    t: u32,
    parent: u32,
}

/// Space-time A* returning a cost-minimal path that respects `table`; among
/// cost-minimal paths it returns one with the fewest collisions against
/// `collisions`. `expanded` is incremented per expansion and the search stops
/// once it exceeds `budget`.
pub fn find_path(
    q: AgentQuery<'_>,
    table: &ConstraintTable,
    collisions: Option<&CollisionTable>,
    budget: Option<usize>,
    expanded: &mut usize,
) -> Result<Path, PlanError> {
    let h = |v: Vertex| q.goal_dist.get(v);
    if h(q.start) == UNREACHABLE || table.vertex_blocked(q.start, 0) {
        return Err(PlanError::Infeasible);
    }
    // Past `latest` the constraints are inert, so any reachable goal is
    // reached within this many extra steps.
    let horizon = h(q.start) + table.latest() + q.map.free_count() as u32;
    let limit = budget.map(|b| *expanded + b);

    let mut nodes: Vec<SearchNode> = Vec::new();
    // (f, collisions, deeper first, insertion order, node index, terminal)
    let mut open = BinaryHeap::new();
    let mut closed: HashSet<(Vertex, u32)> = HashSet::new();
    let mut seq = 0u32;
    nodes.push(SearchNode { v: q.start, t: 0, parent: u32::MAX });
    open.push(Reverse((h(q.start), 0u32, Reverse(0u32), 0u32, 0u32, false)));

    while let Some(Reverse((f, coll, _, _, idx, terminal))) = open.pop() {
        let node = nodes[idx as usize];
        if terminal {
            let mut out = Vec::with_capacity(node.t as usize + 1);
            let mut i = idx;
            while i != u32::MAX {
                out.push(nodes[i as usize].v);
                i = nodes[i as usize].parent;
            }
            out.reverse();
            return Ok(Path::new(out));
        }
        if !closed.insert((node.v, node.t)) {
            continue;
        }
        *expanded += 1;
        if limit.is_some_and(|l| *expanded > l) {
            return Err(PlanError::BudgetExceeded);
        }
        if node.v == q.goal && node.t >= table.goal_hold_from() {
            let extra = collisions.map_or(0, |c| c.parking_count(q.goal, node.t));
            seq += 1;
            open.push(Reverse((f, coll + extra, Reverse(node.t), seq, idx, true)));
        }
        if node.t >= horizon {
            continue;
        }
        let t1 = node.t + 1;
        let moves = std::iter::once(node.v).chain(q.map.neighbors(node.v));
        for u in moves {
            if table.vertex_blocked(u, t1) || (u != node.v && table.edge_blocked(node.v, u, node.t)) {
                continue;
            }
            if closed.contains(&(u, t1)) || h(u) == UNREACHABLE {
                continue;
            }
            let c = coll
                + collisions.map_or(0, |ct| {
                    ct.vertex_count(u, t1) + if u != node.v { ct.swap_count(node.v, u, node.t) } else { 0 }
                });
            nodes.push(SearchNode { v: u, t: t1, parent: idx });
            seq += 1;
            let child = (nodes.len() - 1) as u32;
            open.push(Reverse((t1 + h(u), c, Reverse(t1), seq, child, false)));
        }
    }
    Err(PlanError::Infeasible)
}

/// Convenience wrapper computing the heuristic field and constraint table.
pub fn plan_path(
    map: &GridMap,
    start: Vertex,
    goal: Vertex,
    agent: AgentId,
    constraints: &[Constraint],
    other_paths: &[Path],
) -> Result<Path, PlanError> {
    let goal_dist = map.bfs_distance(goal, None).map_err(|_| PlanError::Infeasible)?;
    let table = ConstraintTable::new(agent, goal, constraints);
    let cat = CollisionTable::new(other_paths);
    let query = AgentQuery { map, goal_dist: &goal_dist, start, goal };
    find_path(query, &table, Some(&cat), None, &mut 0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("no constraint-respecting path of cost {0}")]
pub struct EmptyMdd(pub u32);

/// All constraint-respecting paths of exactly a given cost, as a layered DAG.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mdd {
    levels: Vec<Vec<Vertex>>,
    /// `edges[t]` links level `t` to level `t + 1`, sorted.
    edges: Vec<Vec<(Vertex, Vertex)>>,
}

impl Mdd {
    /// Forward reachability from `(start, 0)` intersected with backward
    /// reachability from `(goal, cost)` over the constraint-filtered
    /// time-expanded graph.
    pub fn build(q: AgentQuery<'_>, cost: u32, table: &ConstraintTable) -> Result<Self, EmptyMdd> {
        let c = cost as usize;
        if table.goal_hold_from() > cost || table.vertex_blocked(q.start, 0) {
            return Err(EmptyMdd(cost));
        }
        let allowed = |v: Vertex, t: usize| -> bool {
            let remaining = (c - t) as u32;
            let d = q.goal_dist.get(v);
            d != UNREACHABLE
                && d <= remaining
                && !table.vertex_blocked(v, t as u32)
                // cost exactly `c`: not already parked at the goal one step early
                && !(c >= 1 && t == c - 1 && v == q.goal)
        };
        if !allowed(q.start, 0) {
            return Err(EmptyMdd(cost));
        }
        let mut levels: Vec<Vec<Vertex>> = vec![vec![q.start]];
        let mut edges: Vec<Vec<(Vertex, Vertex)>> = Vec::with_capacity(c);
        for t in 0..c {
            let mut next = Vec::new();
            let mut level_edges = Vec::new();
            for &v in &levels[t] {
                for u in std::iter::once(v).chain(q.map.neighbors(v)) {
                    if (u != v && table.edge_blocked(v, u, t as u32)) || !allowed(u, t + 1) {
                        continue;
                    }
                    level_edges.push((v, u));
                    next.push(u);
                }
            }
            next.sort_unstable();
            next.dedup();
            level_edges.sort_unstable();
            levels.push(next);
            edges.push(level_edges);
        }
        if levels[c] != [q.goal] {
            return Err(EmptyMdd(cost));
        }
        for t in (0..c).rev() {
            let keep = &levels[t + 1];
            edges[t].retain(|(_, u)| keep.binary_search(u).is_ok());
            let mut alive: Vec<Vertex> = edges[t].iter().map(|&(v, _)| v).collect();
            alive.dedup();
            levels[t] = alive;
        }
        if levels[0].is_empty() {
            return Err(EmptyMdd(cost));
        }
        Ok(Self { levels, edges })
    }

    pub fn cost(&self) -> u32 {
        (self.levels.len() - 1) as u32
    }

    /// Level `t`, or the goal singleton for `t` beyond the cost.
    pub fn level(&self, t: u32) -> &[Vertex] {
        &self.levels[(t as usize).min(self.levels.len() - 1)]
    }

    pub fn edges(&self, t: u32) -> &[(Vertex, Vertex)] {
        self.edges.get(t as usize).map_or(&[], Vec::as_slice)
    }

    /// Width at level `t`; negative levels clamp to 0 and levels past the
    /// cost are 1 (the agent is parked at its goal).
    pub fn width(&self, t: i64) -> usize {
        self.level(t.max(0) as u32).len()
    }

    /// Every source-to-sink path. Exponential; for tests and small cases.
    pub fn enumerate_paths(&self) -> Vec<Vec<Vertex>> {
        let mut out = Vec::new();
        let mut stack = vec![vec![self.levels[0][0]]];
        while let Some(prefix) = stack.pop() {
            let t = prefix.len() - 1;
            if t == self.levels.len() - 1 {
                out.push(prefix);
                continue;
            }
            let last = prefix[t];
            for &(_, u) in self.edges[t].iter().filter(|(v, _)| *v == last) {
                let mut next = prefix.clone();
                next.push(u);
                stack.push(next);
            }
        }
        out.sort();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn query<'a>(map: &'a GridMap, field: &'a DistanceField, start: Vertex, goal: Vertex) -> AgentQuery<'a> {
        AgentQuery { map, goal_dist: field, start, goal }
    }

    #[test]
    fn corridor_cost() {
        let m = GridMap::from_rows(&["..."]).unwrap();
        let p = plan_path(&m, 0, 2, 0, &[], &[]).unwrap();
        assert_eq!(p.cost(), 2);
        assert_eq!(p.vertices(), &[0, 1, 2]);
    }

    #[test]
    fn goal_constraint_forces_later_arrival() {
        let m = GridMap::from_rows(&["..."]).unwrap();
        let cons = [Constraint::Vertex { agent: 0, v: 2, t: 2 }];
        let p = plan_path(&m, 0, 2, 0, &cons, &[]).unwrap();
        assert_eq!(p.cost(), 3);
        let table = ConstraintTable::new(0, 2, &cons);
        assert!(p.respects(&table));
        // A constraint long after arrival still applies.
        let late = [Constraint::Vertex { agent: 0, v: 2, t: 9 }];
        assert_eq!(plan_path(&m, 0, 2, 0, &late, &[]).unwrap().cost(), 10);
    }

    #[test]
    fn constraints_for_other_agents_ignored() {
        let m = GridMap::from_rows(&["..."]).unwrap();
        let cons = [Constraint::Vertex { agent: 1, v: 1, t: 1 }];
        assert_eq!(plan_path(&m, 0, 2, 0, &cons, &[]).unwrap().cost(), 2);
    }

    #[test]
    fn edge_constraint() {
        let m = GridMap::from_rows(&[".."]).unwrap();
        let cons = [Constraint::Edge { agent: 0, from: 0, to: 1, t: 0 }];
        let p = plan_path(&m, 0, 1, 0, &cons, &[]).unwrap();
        assert_eq!(p.vertices(), &[0, 0, 1]);
    }

    #[test]
    fn infeasible_when_trapped() {
        // Start cell in a dead end whose only exit is blocked at t=1 while the
        // start itself is blocked at t=1.
        let m = GridMap::from_rows(&["..."]).unwrap();
        let cons = [
            Constraint::Vertex { agent: 0, v: 0, t: 1 },
            Constraint::Vertex { agent: 0, v: 1, t: 1 },
        ];
        assert_eq!(plan_path(&m, 0, 2, 0, &cons, &[]), Err(PlanError::Infeasible));
    }

    #[test]
    fn collision_tie_break_prefers_free_route() {
        // Two equal-cost routes around the block; another agent sits on the top one.
        let m = GridMap::from_rows(&["...", ".@.", "..."]).unwrap();
        let other = Path::new(vec![1, 1, 1]);
        let p = plan_path(&m, 0, 8, 0, &[], &[other]).unwrap();
        assert_eq!(p.cost(), 4);
        assert!(!p.vertices().contains(&1));
    }

    #[test]
    fn budget_is_enforced() {
        let m = GridMap::from_rows(&[".........."]).unwrap();
        let f = m.bfs_distance(9, None).unwrap();
        let mut n = 0;
        let r = find_path(query(&m, &f, 0, 9), &ConstraintTable::default(), None, Some(3), &mut n);
        assert_eq!(r, Err(PlanError::BudgetExceeded));
    }

    #[test]
    fn path_normalization() {
        let p = Path::new(vec![3, 4, 4, 4]);
        assert_eq!(p.cost(), 1);
        assert_eq!(p.at(7), 4);
        assert_eq!(Path::new(vec![5, 5]).cost(), 0);
    }

    #[test]
    fn mdd_open_grid_middle_layer() {
        let m = GridMap::from_rows(&["...", "...", "..."]).unwrap();
        let f = m.bfs_distance(8, None).unwrap();
        let mdd = Mdd::build(query(&m, &f, 0, 8), 4, &ConstraintTable::default()).unwrap();
        assert_eq!(mdd.width(2), 3);
        assert_eq!(mdd.width(0), 1);
        assert_eq!(mdd.width(4), 1);
        assert_eq!(mdd.width(7), 1);
        assert_eq!(mdd.width(-2), 1);
        assert_eq!(mdd.enumerate_paths().len(), 6);
    }

    #[test]
    fn mdd_trivial_and_empty() {
        let m = GridMap::from_rows(&["..."]).unwrap();
        let f = m.bfs_distance(1, None).unwrap();
        let mdd = Mdd::build(query(&m, &f, 1, 1), 0, &ConstraintTable::default()).unwrap();
        assert_eq!(mdd.level(0), &[1]);
        assert_eq!(mdd.cost(), 0);
        let f2 = m.bfs_distance(2, None).unwrap();
        assert_eq!(Mdd::build(query(&m, &f2, 0, 2), 1, &ConstraintTable::default()), Err(EmptyMdd(1)));
    }

    #[test]
    fn mdd_single_path_widths() {
        let m = GridMap::from_rows(&["...."]).unwrap();
        let f = m.bfs_distance(3, None).unwrap();
        let mdd = Mdd::build(query(&m, &f, 0, 3), 3, &ConstraintTable::default()).unwrap();
        assert!((-2..8).all(|t| mdd.width(t) == 1));
    }
}
