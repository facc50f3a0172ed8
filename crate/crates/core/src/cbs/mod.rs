//! High-level constraint-tree search with the WDG heuristic.

mod search;
mod wdg;

pub use search::{
    solve, Child, CtNode, Limits, NodeId, ResolutionHistory, RunRecord, Search, SearchConfig, SelectConflict,
    Selection, SolveOutcome,
};
pub use wdg::{pair_optimal_cost, weighted_mvc, PairEdge, PairSide};

use std::fmt::Write as _;

use crate::gridmap::Vertex;
use crate::pathing::{AgentId, Constraint, Path};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ConflictKind {
    Vertex { v: Vertex },
    /// The first agent moves `from -> to`, the second `to -> from`.
    Edge { from: Vertex, to: Vertex },
}

/// Ordered from most to least preferred by cardinality-first selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Cardinality {
    Cardinal,
    SemiCardinal,
    NonCardinal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Conflict {
    /// Always `a < b`.
    pub a: AgentId,
    pub b: AgentId,
    pub kind: ConflictKind,
    pub t: u32,
    pub class: Option<Cardinality>,
}

impl Conflict {
    pub fn is_edge(&self) -> bool {
        matches!(self.kind, ConflictKind::Edge { .. })
    }

    /// Contested vertices: `[v]` or `[from, to]`.
    pub fn vertices(&self) -> Vec<Vertex> {
        match self.kind {
            ConflictKind::Vertex { v } => vec![v],
            ConflictKind::Edge { from, to } => vec![from, to],
        }
    }

    /// Same collision, ignoring the cardinality label.
    pub fn same_collision(&self, other: &Conflict) -> bool {
        (self.a, self.b, self.kind, self.t) == (other.a, other.b, other.kind, other.t)
    }
}

/// Every vertex and edge collision between pairs of paths, with agents parked
/// at their goals after arrival. Sorted by agent pair, then time.
pub fn detect_conflicts(paths: &[Path]) -> Vec<Conflict> {
    let mut out = Vec::new();
    for a in 0..paths.len() {
        for b in a + 1..paths.len() {
            pair_conflicts(a, &paths[a], b, &paths[b], &mut out);
        }
    }
    out
}

pub(crate) fn pair_conflicts(a: AgentId, pa: &Path, b: AgentId, pb: &Path, out: &mut Vec<Conflict>) {
    let horizon = pa.cost().max(pb.cost());
    for t in 0..=horizon {
        let (ua, ub) = (pa.at(t), pb.at(t));
        if ua == ub {
            out.push(Conflict { a, b, kind: ConflictKind::Vertex { v: ua }, t, class: None });
        } else if t < horizon {
            let (va, vb) = (pa.at(t + 1), pb.at(t + 1));
            if va == ub && vb == ua {
                out.push(Conflict { a, b, kind: ConflictKind::Edge { from: ua, to: va }, t, class: None });
            }
        }
    }
}

/// First collision between two paths, if any.
pub(crate) fn first_conflict(a: AgentId, pa: &Path, b: AgentId, pb: &Path) -> Option<Conflict> {
    let mut out = Vec::new();
    pair_conflicts(a, pa, b, pb, &mut out);
    out.into_iter().next()
}

/// The two constraints that resolve `conflict`: the first restricts `a`, the
/// second `b`.
pub fn split(conflict: &Conflict) -> (Constraint, Constraint) {
    let (a, b, t) = (conflict.a, conflict.b, conflict.t);
    match conflict.kind {
        ConflictKind::Vertex { v } => (Constraint::Vertex { agent: a, v, t }, Constraint::Vertex { agent: b, v, t }),
        ConflictKind::Edge { from, to } => (
            Constraint::Edge { agent: a, from, to, t },
            Constraint::Edge { agent: b, from: to, to: from, t },
        ),
    }
}

/// Cardinality from the MDD widths of both agents at the conflict: a side is
/// "blocking" when the contested vertex (edge) is the only one at that level.
pub fn classify(conflict: &Conflict, mdd_a: &crate::pathing::Mdd, mdd_b: &crate::pathing::Mdd) -> Cardinality {
    let t = conflict.t;
    let blocking = |mdd: &crate::pathing::Mdd, from: Vertex, to: Vertex, edge: bool| {
        if edge {
            mdd.level(t) == [from] && mdd.level(t + 1) == [to]
        } else {
            mdd.level(t) == [to]
        }
    };
    let (sa, sb) = match conflict.kind {
        ConflictKind::Vertex { v } => (blocking(mdd_a, v, v, false), blocking(mdd_b, v, v, false)),
        ConflictKind::Edge { from, to } => (blocking(mdd_a, from, to, true), blocking(mdd_b, to, from, true)),
    };
    match (sa, sb) {
        (true, true) => Cardinality::Cardinal,
        (true, false) | (false, true) => Cardinality::SemiCardinal,
        (false, false) => Cardinality::NonCardinal,
    }
}

/// One line per agent: its vertex at every time step up to the makespan.
pub fn format_solution(paths: &[Path]) -> String {
    let makespan = paths.iter().map(Path::cost).max().unwrap_or(0);
    let mut out = String::new();
    for p in paths {
        let line: Vec<String> = (0..=makespan).map(|t| p.at(t).to_string()).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn swap_is_one_edge_conflict() {
        let paths = [Path::new(vec![0, 1]), Path::new(vec![1, 0])];
        let c = detect_conflicts(&paths);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].kind, ConflictKind::Edge { from: 0, to: 1 });
        assert_eq!(c[0].t, 0);
    }

    #[test]
    fn disjoint_paths() {
        let paths = [Path::new(vec![0, 1, 2]), Path::new(vec![5, 6, 7])];
        assert!(detect_conflicts(&paths).is_empty());
    }

    #[test]
    fn parked_agent_collision() {
        // Agent 0 parks at 3 from t=3; agent 1 passes 3 at t=5.
        let paths = [Path::new(vec![0, 1, 2, 3]), Path::new(vec![10, 11, 12, 13, 14, 3, 4])];
        let c = detect_conflicts(&paths);
        assert_eq!(c, vec![Conflict { a: 0, b: 1, kind: ConflictKind::Vertex { v: 3 }, t: 5, class: None }]);
    }

    #[test]
    fn split_vertex_and_edge() {
        let v = Conflict { a: 1, b: 2, kind: ConflictKind::Vertex { v: 7 }, t: 4, class: None };
        assert_eq!(
            split(&v),
            (Constraint::Vertex { agent: 1, v: 7, t: 4 }, Constraint::Vertex { agent: 2, v: 7, t: 4 })
        );
        let e = Conflict { a: 1, b: 2, kind: ConflictKind::Edge { from: 3, to: 4 }, t: 0, class: None };
        assert_eq!(
            split(&e),
            (
                Constraint::Edge { agent: 1, from: 3, to: 4, t: 0 },
                Constraint::Edge { agent: 2, from: 4, to: 3, t: 0 }
            )
        );
    }

    #[test]
    fn solution_text() {
        let paths = [Path::new(vec![0, 1]), Path::new(vec![5])];
        assert_eq!(format_solution(&paths), "0 1\n5 5\n");
    }
}
