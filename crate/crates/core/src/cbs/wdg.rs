use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::rc::Rc;

use super::{first_conflict, split};
use crate::pathing::{find_path, AgentId, AgentQuery, CollisionTable, Constraint, ConstraintTable, Path, PlanError};

/// Edge of the weighted dependency graph between agents `a < b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PairEdge {
    pub a: AgentId,
    pub b: AgentId,
    pub w: u32,
}

/// Minimum `sum x_v` over nonnegative integers with `x_a + x_b >= w` for every
/// edge. Exact branch and bound, solved per connected component.
pub fn weighted_mvc(edges: &[PairEdge]) -> u32 {
    let edges: Vec<PairEdge> = edges.iter().copied().filter(|e| e.w > 0).collect();
    if edges.is_empty() {
        return 0;
    }
    // Dense relabeling, deterministic by agent id.
    let mut ids: BTreeMap<AgentId, usize> = BTreeMap::new();
    for e in &edges {
        let n = ids.len();
        ids.entry(e.a).or_insert(n);
        let n = ids.len();
        ids.entry(e.b).or_insert(n);
    }
    let n = ids.len();
    let mut weight = vec![vec![0u32; n]; n];
    for e in &edges {
        let (i, j) = (ids[&e.a], ids[&e.b]);
        let w = weight[i][j].max(e.w);
        weight[i][j] = w;
        weight[j][i] = w;
    }
    let mut seen = vec![false; n];
    let mut total = 0;
    for s in 0..n {
        if seen[s] {
            continue;
        }
        let mut comp = vec![s];
        seen[s] = true;
        let mut head = 0;
        while head < comp.len() {
            let v = comp[head];
            head += 1;
            for u in 0..n {
                if weight[v][u] > 0 && !seen[u] {
                    seen[u] = true;
                    comp.push(u);
                }
            }
        }
        // Highest weighted degree first tightens the bound early.
        comp.sort_by_key(|&v| (Reverse(weight[v].iter().sum::<u32>()), v));
        total += component_mvc(&weight, &comp);
    }
    total
}

fn component_mvc(weight: &[Vec<u32>], order: &[usize]) -> u32 {
    struct Bnb<'a> {
        weight: &'a [Vec<u32>],
        order: &'a [usize],
        value: Vec<Option<u32>>,
        best: u32,
    }

    impl Bnb<'_> {
        /// Residual requirement of every unassigned vertex plus a greedy
        /// matching on the remaining slack; admissible.
        fn bound(&self, depth: usize) -> u32 {
            let rest = &self.order[depth..];
            let residual: Vec<u32> = rest
                .iter()
                .map(|&v| {
                    (0..self.weight.len())
                        .filter_map(|u| self.value[u].map(|x| self.weight[v][u].saturating_sub(x)))
                        .max()
                        .unwrap_or(0)
                })
                .collect();
            let mut lb: u32 = residual.iter().sum();
            let mut used = vec![false; rest.len()];
            for i in 0..rest.len() {
                if used[i] {
                    continue;
                }
                let mut pick: Option<(u32, usize)> = None;
                for j in i + 1..rest.len() {
                    if used[j] {
                        continue;
                    }
                    let slack = self.weight[rest[i]][rest[j]].saturating_sub(residual[i] + residual[j]);
                    if slack > 0 && pick.is_none_or(|(s, _)| slack > s) {
                        pick = Some((slack, j));
                    }
                }
                if let Some((s, j)) = pick {
                    used[i] = true;
                    used[j] = true;
                    lb += s;
                }
            }
            lb
        }

        fn search(&mut self, depth: usize, sum: u32) {
            if sum + self.bound(depth) >= self.best {
                return;
            }
            if depth == self.order.len() {
                self.best = sum;
                return;
            }
            let v = self.order[depth];
            let n = self.weight.len();
            let lo = (0..n)
                .filter_map(|u| self.value[u].map(|x| self.weight[v][u].saturating_sub(x)))
                .max()
                .unwrap_or(0);
            let hi = (0..n)
                .filter(|&u| self.value[u].is_none() && u != v)
                .map(|u| self.weight[v][u])
                .max()
                .unwrap_or(0)
                .max(lo);
            for x in lo..=hi {
                self.value[v] = Some(x);
                self.search(depth + 1, sum + x);
            }
            self.value[v] = None;
        }
    }

    // Assigning every vertex its largest incident weight is always feasible.
    let trivial: u32 = order.iter().map(|&v| weight[v].iter().copied().max().unwrap_or(0)).sum();
    let mut bnb = Bnb { weight, order, value: vec![None; weight.len()], best: trivial + 1 };
    bnb.search(0, 0);
    bnb.best
}

/// One agent's side of a two-agent subproblem.
#[derive(Debug, Clone, Copy)]
pub struct PairSide<'a> {
    pub agent: AgentId,
    pub query: AgentQuery<'a>,
    pub constraints: &'a [Constraint],
    pub path: &'a Path,
}

struct PairNode {
    extra: Vec<Constraint>,
    paths: [Rc<Path>; 2],
    g: u32,
}

/// Optimal sum of costs of two agents under their constraints, by a nested
/// CBS. `None` when `budget` low-level expansions (plus one per high-level
/// node) run out first.
pub fn pair_optimal_cost(sides: [PairSide<'_>; 2], budget: usize) -> Option<u32> {
    let mut spent = 0usize;
    let root = PairNode {
        extra: Vec::new(),
        paths: [Rc::new(sides[0].path.clone()), Rc::new(sides[1].path.clone())],
        g: sides[0].path.cost() + sides[1].path.cost(),
    };
    let mut nodes = vec![root];
    let mut open = BinaryHeap::new();
    open.push(Reverse((nodes[0].g, Reverse(0usize))));
    while let Some(Reverse((_, Reverse(idx)))) = open.pop() {
        spent += 1;
        if spent > budget {
            return None;
        }
        let node = &nodes[idx];
        let [pa, pb] = &node.paths;
        let Some(conflict) = first_conflict(sides[0].agent, pa, sides[1].agent, pb) else {
            return Some(node.g);
        };
        let (left, right) = split(&conflict);
        let mut children = Vec::with_capacity(2);
        for (slot, constraint) in [(0usize, left), (1usize, right)] {
            let side = &sides[slot];
            let mut extra = node.extra.clone();
            extra.push(constraint);
            let table = ConstraintTable::new(side.agent, side.query.goal, side.constraints.iter().chain(extra.iter()));
            let other = &node.paths[1 - slot];
            let cat = CollisionTable::new([other.as_ref()]);
            let remaining = budget - spent;
            match find_path(side.query, &table, Some(&cat), Some(remaining), &mut spent) {
                Ok(path) => {
                    let mut paths = node.paths.clone();
                    paths[slot] = Rc::new(path);
                    let g = paths[0].cost() + paths[1].cost();
                    children.push(PairNode { extra, paths, g });
                }
                Err(PlanError::Infeasible) => {}
                Err(PlanError::BudgetExceeded) => return None,
            }
        }
        for child in children {
            let g = child.g;
            nodes.push(child);
            open.push(Reverse((g, Reverse(nodes.len() - 1))));
        }
    }
    None
}
