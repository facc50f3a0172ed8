//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, VecDeque};

use mlcbs::gridmap::{GridMap, Instance, Vertex};
use mlcbs::pathing::{Constraint, Path};

fn moves(map: &GridMap, v: Vertex) -> Vec<Vertex> {
    let (r, c) = map.coords(v);
    let mut out = vec![v];
    let cand = [
        (r.wrapping_sub(1), c),
        (r + 1, c),
        (r, c.wrapping_sub(1)),
        (r, c + 1),
    ];
    for (nr, nc) in cand {
        if nr < map.height() && nc < map.width() && map.is_free(map.vertex(nr, nc)) {
            out.push(map.vertex(nr, nc));
        }
    }
    out
}

/// Unconstrained grid distances to `goal`.
pub fn plain_bfs(map: &GridMap, goal: Vertex) -> Vec<u32> {
    let mut d = vec![u32::MAX; map.num_cells()];
    d[goal] = 0;
    let mut q = VecDeque::from([goal]);
    while let Some(v) = q.pop_front() {
        for u in moves(map, v) {
            if d[u] == u32::MAX {
                d[u] = d[v] + 1;
                q.push_back(u);
            }
        }
    }
    d
}

/// Minimum sum of costs by A* over joint states `(positions, finished)`.
/// Each step costs the number of unfinished agents; an agent at its goal may
/// finish for free and then stays there forever. `None` if unsolvable.
pub fn joint_state_optimum(map: &GridMap, inst: &Instance) -> Option<u32> {
    let k = inst.num_agents();
    let goals: Vec<Vertex> = inst.tasks.iter().map(|t| t.goal).collect();
    let dists: Vec<Vec<u32>> = goals.iter().map(|&g| plain_bfs(map, g)).collect();
    if inst.tasks.iter().enumerate().any(|(i, t)| dists[i][t.start] == u32::MAX) {
        return None;
    }
    type State = (Vec<Vertex>, u32);
    let h = |s: &State| -> u32 { (0..k).filter(|i| s.1 & (1 << i) == 0).map(|i| dists[i][s.0[i]]).sum() };
    let start: State = (inst.tasks.iter().map(|t| t.start).collect(), 0);
    let mut best: HashMap<State, u32> = HashMap::new();
    let mut open = BinaryHeap::new();
    best.insert(start.clone(), 0);
    open.push(Reverse((h(&start), 0u32, start)));
    let all = (1u32 << k) - 1;
    while let Some(Reverse((_, g, s))) = open.pop() {
        if best.get(&s).is_some_and(|&b| b < g) {
            continue;
        }
        if s.1 == all {
            return Some(g);
        }
        let mut push = |n: State, ng: u32, open: &mut BinaryHeap<Reverse<(u32, u32, State)>>| {
            if best.get(&n).is_none_or(|&b| ng < b) {
                best.insert(n.clone(), ng);
                open.push(Reverse((ng + h(&n), ng, n)));
            }
        };
        // Finishing transitions.
        for i in 0..k {
            if s.1 & (1 << i) == 0 && s.0[i] == goals[i] {
                push((s.0.clone(), s.1 | (1 << i)), g, &mut open);
            }
        }
        // Joint moves of the unfinished agents.
        let step = (0..k).filter(|i| s.1 & (1 << i) == 0).count() as u32;
        let options: Vec<Vec<Vertex>> =
            (0..k).map(|i| if s.1 & (1 << i) != 0 { vec![s.0[i]] } else { moves(map, s.0[i]) }).collect();
        let mut idx = vec![0usize; k];
        loop {
            let next: Vec<Vertex> = (0..k).map(|i| options[i][idx[i]]).collect();
            let mut ok = true;
            'pairs: for i in 0..k {
                for j in i + 1..k {
                    if next[i] == next[j] || (next[i] == s.0[j] && next[j] == s.0[i]) {
                        ok = false;
                        break 'pairs;
                    }
                }
            }
            if ok {
                push((next, s.1), g + step, &mut open);
            }
            let mut i = 0;
            while i < k {
                idx[i] += 1;
                if idx[i] < options[i].len() {
                    break;
                }
                idx[i] = 0;
                i += 1;
            }
            if i == k {
                break;
            }
        }
    }
    None
}

/// Checks start/goal, unit moves and the absence of vertex and swap
/// collisions, with agents parked at their goals. Returns a description of
/// the first problem.
pub fn validate_solution(map: &GridMap, inst: &Instance, paths: &[Path]) -> Result<(), String> {
    if paths.len() != inst.num_agents() {
        return Err("wrong number of paths".into());
    }
    for (i, (p, t)) in paths.iter().zip(&inst.tasks).enumerate() {
        if p.start() != t.start || p.goal() != t.goal {
            return Err(format!("agent {i} has wrong endpoints"));
        }
        for w in p.vertices().windows(2) {
            if !moves(map, w[0]).contains(&w[1]) {
                return Err(format!("agent {i} makes an illegal move {} -> {}", w[0], w[1]));
            }
        }
    }
    let horizon = paths.iter().map(Path::cost).max().unwrap_or(0);
    for t in 0..=horizon {
        for i in 0..paths.len() {
            for j in i + 1..paths.len() {
                if paths[i].at(t) == paths[j].at(t) {
                    return Err(format!("agents {i},{j} collide at t={t}"));
                }
                if t < horizon && paths[i].at(t) == paths[j].at(t + 1) && paths[j].at(t) == paths[i].at(t + 1) {
                    return Err(format!("agents {i},{j} swap at t={t}"));
                }
            }
        }
    }
    Ok(())
}

/// Every path of exactly `cost` steps from `start` to `goal` that respects
/// the agent's constraints, including staying at the goal forever after.
/// "Exactly" means the agent is not already at the goal at `cost - 1`.
pub fn enumerate_paths(
    map: &GridMap,
    start: Vertex,
    goal: Vertex,
    agent: usize,
    constraints: &[Constraint],
    cost: u32,
) -> Vec<Vec<Vertex>> {
    let vertex_ok = |v: Vertex, t: u32| {
        !constraints.iter().any(|c| matches!(*c, Constraint::Vertex { agent: a, v: cv, t: ct } if a == agent && cv == v && ct == t))
    };
    let edge_ok = |u: Vertex, v: Vertex, t: u32| {
        !constraints.iter().any(|c| {
            matches!(*c, Constraint::Edge { agent: a, from, to, t: ct } if a == agent && from == u && to == v && ct == t)
        })
    };
    let parked_ok = !constraints.iter().any(|c| {
        matches!(*c, Constraint::Vertex { agent: a, v, t } if a == agent && v == goal && t > cost)
    });
    let mut out = Vec::new();
    if !parked_ok {
        return out;
    }
    // Prefixes that cannot reach the goal in the remaining steps are cut.
    let dist = plain_bfs(map, goal);
    let mut stack = vec![vec![start]];
    while let Some(p) = stack.pop() {
        let t = (p.len() - 1) as u32;
        let last = *p.last().unwrap();
        if !vertex_ok(last, t) || dist[last] > cost - t {
            continue;
        }
        if t == cost {
            if last == goal && (cost == 0 || p[p.len() - 2] != goal) {
                out.push(p);
            }
            continue;
        }
        for u in moves(map, last) {
            if u != last && !edge_ok(last, u, t) {
                continue;
            }
            let mut n = p.clone();
            n.push(u);
            stack.push(n);
        }
    }
    out.sort();
    out
}

/// Cheapest constraint-respecting single-agent cost, by breadth-first search
/// over `(vertex, t)` layers up to `horizon`.
pub fn brute_single_agent_cost(
    map: &GridMap,
    start: Vertex,
    goal: Vertex,
    agent: usize,
    constraints: &[Constraint],
    horizon: u32,
) -> Option<u32> {
    (0..=horizon).find(|&c| !unreachable_at(map, start, goal, agent, constraints, c))
}

fn unreachable_at(
    map: &GridMap,
    start: Vertex,
    goal: Vertex,
    agent: usize,
    constraints: &[Constraint],
    cost: u32,
) -> bool {
    // Layered reachability is enough to decide emptiness.
    let vertex_ok = |v: Vertex, t: u32| {
        !constraints.iter().any(|c| matches!(*c, Constraint::Vertex { agent: a, v: cv, t: ct } if a == agent && cv == v && ct == t))
    };
    let edge_ok = |u: Vertex, v: Vertex, t: u32| {
        !constraints.iter().any(|c| {
            matches!(*c, Constraint::Edge { agent: a, from, to, t: ct } if a == agent && from == u && to == v && ct == t)
        })
    };
    if constraints
        .iter()
        .any(|c| matches!(*c, Constraint::Vertex { agent: a, v, t } if a == agent && v == goal && t > cost))
    {
        return true;
    }
    let mut layer = vec![false; map.num_cells()];
    if !vertex_ok(start, 0) {
        return true;
    }
    layer[start] = true;
    for t in 0..cost {
        let mut next = vec![false; map.num_cells()];
        for v in (0..map.num_cells()).filter(|&v| layer[v]) {
            for u in moves(map, v) {
                if (u == v || edge_ok(v, u, t)) && vertex_ok(u, t + 1) {
                    next[u] = true;
                }
            }
        }
        layer = next;
    }
    // Arriving at `cost` and holding the goal afterwards suffices.
    !layer[goal]
}
