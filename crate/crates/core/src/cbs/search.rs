use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashMap};
use std::fmt;
use std::rc::Rc;
use std::time::{Duration, Instant};

use super::wdg::PairSide;
use super::{classify, pair_conflicts, pair_optimal_cost, split, weighted_mvc, Cardinality, Conflict, PairEdge};
use crate::gridmap::{DistanceField, GridMap, Instance, MapError, Vertex, UNREACHABLE};
use crate::pathing::{find_path, AgentId, AgentQuery, CollisionTable, Constraint, ConstraintTable, Mdd, Path};

pub type NodeId = usize;

#[derive(Debug, Clone)]
pub struct CtNode {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    /// Constraint added relative to the parent.
    pub constraint: Option<Constraint>,
    pub paths: Vec<Rc<Path>>,
    pub g: u32,
    pub h: u32,
    /// Classified collisions of `paths`, sorted by agent pair and time.
    pub conflicts: Vec<Conflict>,
    pub depth: u32,
    /// MDDs of the agents involved in at least one conflict.
    pub mdds: Vec<Option<Rc<Mdd>>>,
    /// Dependency-graph edge for every conflicting agent pair (weight may be 0).
    pub wdg_edges: Vec<PairEdge>,
}

impl CtNode {
    pub fn makespan(&self) -> u32 {
        self.paths.iter().map(|p| p.cost()).max().unwrap_or(0)
    }

    pub fn wdg_weight(&self, a: AgentId, b: AgentId) -> u32 {
        let (a, b) = (a.min(b), a.max(b));
        self.wdg_edges.iter().find(|e| e.a == a && e.b == b).map_or(0, |e| e.w)
    }
}

/// A child node that has been generated but not yet inserted in the tree.
#[derive(Debug, Clone, PartialEq)]
pub struct Child {
    pub constraint: Constraint,
    pub paths: Vec<Rc<Path>>,
    pub g: u32,
    pub h: u32,
    pub conflicts: Vec<Conflict>,
    pub mdds: Vec<Option<Rc<Mdd>>>,
    pub wdg_edges: Vec<PairEdge>,
}

/// Resolved-conflict counters for the current solve.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ResolutionHistory {
    per_agent: Vec<u32>,
    per_vertex: Vec<u32>,
}

impl ResolutionHistory {
    pub fn new(num_agents: usize, num_cells: usize) -> Self {
        Self { per_agent: vec![0; num_agents], per_vertex: vec![0; num_cells] }
    }

    pub fn record(&mut self, conflict: &Conflict) {
        self.per_agent[conflict.a] += 1;
        self.per_agent[conflict.b] += 1;
        for v in conflict.vertices() {
            self.per_vertex[v] += 1;
        }
    }

    pub fn agent(&self, a: AgentId) -> u32 {
        self.per_agent[a]
    }

    pub fn vertex(&self, v: Vertex) -> u32 {
        self.per_vertex[v]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchConfig {
    /// Per-pair low-level expansion budget of the nested two-agent CBS.
    pub wdg_budget: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self { wdg_budget: 10_000 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Limits {
    pub time: Option<Duration>,
    /// Maximum number of expanded CT nodes.
    pub nodes: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub solved: bool,
    pub cost: Option<u32>,
    pub runtime_s: f64,
    pub oracle_time_s: f64,
    pub ct_expanded: usize,
    pub ct_generated: usize,
}

impl fmt::Display for RunRecord {
    /// `solved,cost,runtime_s,oracle_time_s,ct_expanded,ct_generated`
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cost = self.cost.map(|c| c.to_string()).unwrap_or_default();
        write!(
            f,
            "{},{},{:.6},{:.6},{},{}",
            self.solved, cost, self.runtime_s, self.oracle_time_s, self.ct_expanded, self.ct_generated
        )
    }
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub record: RunRecord,
    pub solution: Option<Vec<Path>>,
}

/// What a conflict selector hands back: the chosen conflict's index in the
/// node's conflict list and, optionally, children it already generated.
#[derive(Debug, Clone)]
pub struct Selection {
    pub index: usize,
    pub children: Option<[Option<Child>; 2]>,
}

pub trait SelectConflict {
    fn select(&mut self, search: &mut Search<'_>, node: NodeId) -> Selection;
}

type PairKey = (AgentId, AgentId, Vec<Constraint>, Vec<Constraint>);

/// Mutable state of one CBS run: the constraint tree and the caches shared by
/// the heuristic, the oracles and the featurizer.
pub struct Search<'a> {
    pub map: &'a GridMap,
    pub instance: &'a Instance,
    pub history: ResolutionHistory,
    pub config: SearchConfig,
    goal_dists: Vec<DistanceField>,
    nodes: Vec<CtNode>,
    mdd_cache: HashMap<(AgentId, Vec<Constraint>), Rc<Mdd>>,
    pair_cache: HashMap<PairKey, Option<u32>>,
    ring_cache: HashMap<Vec<Vertex>, [u32; 5]>,
    low_level_expanded: usize,
}

impl<'a> Search<'a> {
    pub fn new(map: &'a GridMap, instance: &'a Instance, config: SearchConfig) -> Result<Self, MapError> {
        let mut goal_dists = Vec::with_capacity(instance.num_agents());
        for task in &instance.tasks {
            let field = map.bfs_distance(task.goal, None)?;
            if !map.is_free(task.start) || field.get(task.start) == UNREACHABLE {
                return Err(MapError::BlockedVertex(task.start));
            }
            goal_dists.push(field);
        }
        Ok(Self {
            map,
            instance,
            history: ResolutionHistory::new(instance.num_agents(), map.num_cells()),
            config,
            goal_dists,
            nodes: Vec::new(),
            mdd_cache: HashMap::new(),
            pair_cache: HashMap::new(),
            ring_cache: HashMap::new(),
            low_level_expanded: 0,
        })
    }

    pub fn num_agents(&self) -> usize {
        self.instance.num_agents()
    }

    pub fn query(&self, agent: AgentId) -> AgentQuery<'_> {
        let task = self.instance.tasks[agent];
        AgentQuery { map: self.map, goal_dist: &self.goal_dists[agent], start: task.start, goal: task.goal }
    }

    /// Cost of the agent's shortest path ignoring everyone else.
    pub fn individual_cost(&self, agent: AgentId) -> u32 {
        self.goal_dists[agent].get(self.instance.tasks[agent].start)
    }

    pub fn node(&self, id: NodeId) -> &CtNode {
        &self.nodes[id]
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn low_level_expanded(&self) -> usize {
        self.low_level_expanded
    }

    /// Constraints on `agent` accumulated from the root to `node`, sorted.
    pub fn constraints_of(&self, node: NodeId, agent: AgentId) -> Vec<Constraint> {
        let mut out = Vec::new();
        let mut cur = Some(node);
        while let Some(id) = cur {
            let n = &self.nodes[id];
            if let Some(c) = n.constraint.filter(|c| c.agent() == agent) {
                out.push(c);
            }
            cur = n.parent;
        }
        out.sort_unstable();
        out
    }

    /// Cached distance-ring counts around a vertex set.
    pub fn ring_counts(&mut self, vertices: &[Vertex]) -> [u32; 5] {
        if let Some(r) = self.ring_cache.get(vertices) {
            return *r;
        }
        let r = self.map.ring_counts(vertices);
        self.ring_cache.insert(vertices.to_vec(), r);
        r
    }

    /// Generates and inserts the root node.
    pub fn create_root(&mut self) -> NodeId {
        assert!(self.nodes.is_empty(), "root already exists");
        let k = self.num_agents();
        let mut paths: Vec<Rc<Path>> = Vec::with_capacity(k);
        for agent in 0..k {
            let cat = CollisionTable::new(paths.iter().map(|p| p.as_ref()));
            let task = self.instance.tasks[agent];
            let query = AgentQuery { map: self.map, goal_dist: &self.goal_dists[agent], start: task.start, goal: task.goal };
            let path = find_path(query, &ConstraintTable::default(), Some(&cat), None, &mut self.low_level_expanded)
                .expect("goal reachable from start");
            paths.push(Rc::new(path));
        }
        let conflicts = super::detect_conflicts(&paths.iter().map(|p| (**p).clone()).collect::<Vec<_>>());
        let constraints = vec![Vec::new(); k];
        let (conflicts, mdds, wdg_edges, h) = self.evaluate(&paths, conflicts, &constraints);
        let g = paths.iter().map(|p| p.cost()).sum();
        self.nodes.push(CtNode {
            id: 0,
            parent: None,
            constraint: None,
            paths,
            g,
            h,
            conflicts,
            depth: 0,
            mdds,
            wdg_edges,
        });
        0
    }

    /// Replans the constrained agent under the parent's constraints plus
    /// `constraint`; `None` if no such path exists.
    pub fn expand_child(&mut self, parent: NodeId, constraint: Constraint) -> Option<Child> {
        let agent = constraint.agent();
        let k = self.num_agents();
        let mut constraints: Vec<Vec<Constraint>> = (0..k).map(|a| self.constraints_of(parent, a)).collect();
        constraints[agent].push(constraint);
        constraints[agent].sort_unstable();
        let p = &self.nodes[parent];
        let table = ConstraintTable::new(agent, self.instance.tasks[agent].goal, &constraints[agent]);
        let cat = CollisionTable::new(p.paths.iter().enumerate().filter(|(a, _)| *a != agent).map(|(_, p)| p.as_ref()));
        let query = AgentQuery {
            map: self.map,
            goal_dist: &self.goal_dists[agent],
            start: self.instance.tasks[agent].start,
            goal: self.instance.tasks[agent].goal,
        };
        let path = find_path(query, &table, Some(&cat), None, &mut self.low_level_expanded).ok()?;

        let p = &self.nodes[parent];
        let mut paths = p.paths.clone();
        paths[agent] = Rc::new(path);
        let mut conflicts: Vec<Conflict> = p
            .conflicts
            .iter()
            .filter(|c| c.a != agent && c.b != agent)
            .map(|c| Conflict { class: None, ..*c })
            .collect();
        for other in (0..k).filter(|&o| o != agent) {
            let (a, b) = (agent.min(other), agent.max(other));
            pair_conflicts(a, &paths[a], b, &paths[b], &mut conflicts);
        }
        conflicts.sort_by_key(|c| (c.a, c.b, c.t));
        let (parent_g, parent_h) = (p.g, p.h);

        let g: u32 = paths.iter().map(|p| p.cost()).sum();
        let (conflicts, mdds, wdg_edges, h) = self.evaluate(&paths, conflicts, &constraints);
        // Path-max keeps g + h monotone along every branch.
        let h = h.max((parent_g + parent_h).saturating_sub(g));
        Some(Child { constraint, paths, g, h, conflicts, mdds, wdg_edges })
    }

    /// Both children for a conflict of `parent`, in (first agent, second agent) order.
    pub fn expand_conflict(&mut self, parent: NodeId, conflict: &Conflict) -> [Option<Child>; 2] {
        let (l, r) = split(conflict);
        [self.expand_child(parent, l), self.expand_child(parent, r)]
    }

    pub fn insert(&mut self, parent: NodeId, child: Child) -> NodeId {
        let id = self.nodes.len();
        let depth = self.nodes[parent].depth + 1;
        self.nodes.push(CtNode {
            id,
            parent: Some(parent),
            constraint: Some(child.constraint),
            paths: child.paths,
            g: child.g,
            h: child.h,
            conflicts: child.conflicts,
            depth,
            mdds: child.mdds,
            wdg_edges: child.wdg_edges,
        });
        id
    }

    fn mdd(&mut self, agent: AgentId, constraints: &[Constraint], cost: u32) -> Rc<Mdd> {
        let key = (agent, constraints.to_vec());
        if let Some(m) = self.mdd_cache.get(&key).filter(|m| m.cost() == cost) {
            return Rc::clone(m);
        }
        let task = self.instance.tasks[agent];
        let table = ConstraintTable::new(agent, task.goal, constraints);
        let mdd = Rc::new(Mdd::build(self.query(agent), cost, &table).expect("current path has this cost"));
        self.mdd_cache.insert(key, Rc::clone(&mdd));
        mdd
    }

    /// Classifies conflicts and computes the WDG edges and h-value.
    fn evaluate(
        &mut self,
        paths: &[Rc<Path>],
        mut conflicts: Vec<Conflict>,
        constraints: &[Vec<Constraint>],
    ) -> (Vec<Conflict>, Vec<Option<Rc<Mdd>>>, Vec<PairEdge>, u32) {
        let mut mdds: Vec<Option<Rc<Mdd>>> = vec![None; paths.len()];
        for c in &conflicts {
            for agent in [c.a, c.b] {
                if mdds[agent].is_none() {
                    mdds[agent] = Some(self.mdd(agent, &constraints[agent], paths[agent].cost()));
                }
            }
        }
        for c in conflicts.iter_mut() {
            let (ma, mb) = (mdds[c.a].as_ref().unwrap(), mdds[c.b].as_ref().unwrap());
            c.class = Some(classify(c, ma, mb));
        }
        let pairs: BTreeSet<(AgentId, AgentId)> = conflicts.iter().map(|c| (c.a, c.b)).collect();
        let mut edges = Vec::with_capacity(pairs.len());
        for (a, b) in pairs {
            let key = (a, b, constraints[a].clone(), constraints[b].clone());
            let opt = match self.pair_cache.get(&key) {
                Some(v) => *v,
                None => {
                    let sides = [
                        PairSide { agent: a, query: self.query(a), constraints: &constraints[a], path: &paths[a] },
                        PairSide { agent: b, query: self.query(b), constraints: &constraints[b], path: &paths[b] },
                    ];
                    let v = pair_optimal_cost(sides, self.config.wdg_budget);
                    self.pair_cache.insert(key, v);
                    v
                }
            };
            let current = paths[a].cost() + paths[b].cost();
            let w = match opt {
                Some(cost) => cost.saturating_sub(current),
                None => conflicts
                    .iter()
                    .any(|c| c.a == a && c.b == b && c.class == Some(Cardinality::Cardinal))
                    as u32,
            };
            edges.push(PairEdge { a, b, w });
        }
        let h = weighted_mvc(&edges);
        (conflicts, mdds, edges, h)
    }
}

/// Best-first CBS on `g + h`, ties toward fewer conflicts and then the most
/// recently generated node.
pub fn solve(
    map: &GridMap,
    instance: &Instance,
    selector: &mut dyn SelectConflict,
    limits: Limits,
    config: SearchConfig,
) -> Result<SolveOutcome, MapError> {
    let started = Instant::now();
    let mut search = Search::new(map, instance, config)?;
    let root = search.create_root();
    let mut open = BinaryHeap::new();
    let key = |n: &CtNode| Reverse((n.g + n.h, n.conflicts.len(), Reverse(n.id)));
    open.push(key(search.node(root)));
    let mut oracle_time = Duration::ZERO;
    let mut expanded = 0usize;

    let finish = |solved: bool, cost: Option<u32>, expanded: usize, generated: usize, oracle: Duration| RunRecord {
        solved,
        cost,
        runtime_s: started.elapsed().as_secs_f64(),
        oracle_time_s: oracle.as_secs_f64(),
        ct_expanded: expanded,
        ct_generated: generated,
    };

    while let Some(Reverse((_, _, Reverse(id)))) = open.pop() {
        if limits.time.is_some_and(|t| started.elapsed() > t) || limits.nodes.is_some_and(|n| expanded >= n) {
            let record = finish(false, None, expanded, search.num_nodes(), oracle_time);
            return Ok(SolveOutcome { record, solution: None });
        }
        expanded += 1;
        let node = search.node(id);
        if node.conflicts.is_empty() {
            let solution: Vec<Path> = node.paths.iter().map(|p| (**p).clone()).collect();
            let record = finish(true, Some(node.g), expanded, search.num_nodes(), oracle_time);
            return Ok(SolveOutcome { record, solution: Some(solution) });
        }
        let tick = Instant::now();
        let selection = selector.select(&mut search, id);
        oracle_time += tick.elapsed();
        let conflict = search.node(id).conflicts[selection.index];
        search.history.record(&conflict);
        let children = match selection.children {
            Some(children) => children,
            None => search.expand_conflict(id, &conflict),
        };
        for child in children.into_iter().flatten() {
            let cid = search.insert(id, child);
            open.push(key(search.node(cid)));
        }
    }
    let record = finish(false, None, expanded, search.num_nodes(), oracle_time);
    Ok(SolveOutcome { record, solution: None })
}
