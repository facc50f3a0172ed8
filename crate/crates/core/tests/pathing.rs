mod common;

use common::brute_single_agent_cost;
use mlcbs::gridmap::GridMap;
use mlcbs::pathing::{find_path, AgentQuery, Constraint, ConstraintTable, PlanError};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn single_agent_cost_matches_layered_search(
        map_seed in any::<u64>(),
        blocked in 0usize..5,
        picks in (any::<prop::sample::Index>(), any::<prop::sample::Index>()),
        raw in prop::collection::vec((any::<prop::sample::Index>(), 0u32..8, any::<bool>(), 0usize..4), 0..6),
    ) {
        let map = GridMap::random(4, 4, blocked, map_seed);
        let comp = map.largest_component().unwrap();
        let (start, goal) = (*picks.0.get(&comp), *picks.1.get(&comp));
        let mut cons = Vec::new();
        for (v, t, vertex, dir) in raw {
            let v = *v.get(&comp);
            if vertex {
                cons.push(Constraint::Vertex { agent: 0, v, t: t.max(1) });
            } else {
                let to: Vec<_> = map.neighbors(v).collect();
                if !to.is_empty() {
                    cons.push(Constraint::Edge { agent: 0, from: v, to: to[dir % to.len()], t });
                }
            }
        }
        let field = map.bfs_distance(goal, None).unwrap();
        let q = AgentQuery { map: &map, goal_dist: &field, start, goal };
        let table = ConstraintTable::new(0, goal, &cons);
        let expected = brute_single_agent_cost(&map, start, goal, 0, &cons, 40);
        match find_path(q, &table, None, None, &mut 0) {
            Ok(path) => {
                prop_assert_eq!(Some(path.cost()), expected);
                prop_assert!(path.respects(&table));
                prop_assert_eq!(path.start(), start);
                prop_assert_eq!(path.goal(), goal);
            }
            Err(PlanError::Infeasible) => prop_assert_eq!(expected, None),
            Err(e) => prop_assert!(false, "unexpected {e:?}"),
        }
    }
}
