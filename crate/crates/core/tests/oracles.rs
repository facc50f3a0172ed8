mod common;

use common::{brute_single_agent_cost, joint_state_optimum};
use mlcbs::cbs::{Cardinality, Search, SearchConfig, SelectConflict};
use mlcbs::feature::{FeatureMask, NUM_FEATURES};
use mlcbs::gridmap::{GridMap, Instance, Task};
use mlcbs::oracle::{rank_learned, score_o1, score_o2, ConflictSelector};
use mlcbs::pathing::Constraint;
use mlcbs::ranker::RankingModel;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A root with at least `min` conflicts on a 10x10 map with 8 agents.
fn busy_root(min: usize) -> (GridMap, Instance) {
    let map = GridMap::random(10, 10, 20, 3);
    for seed in 0.. {
        let inst = map.generate_instance(8, seed).unwrap();
        let mut s = Search::new(&map, &inst, SearchConfig::default()).unwrap();
        let root = s.create_root();
        if s.node(root).conflicts.len() >= min {
            return (map, inst);
        }
    }
    unreachable!()
}

#[test]
fn crossing_agents_o1_score_matches_joint_optimum() {
    let map = GridMap::from_rows(&["...", "...", "..."]).unwrap();
    let inst = Instance {
        tasks: vec![
            Task { start: map.vertex(0, 1), goal: map.vertex(2, 1) },
            Task { start: map.vertex(1, 0), goal: map.vertex(1, 2) },
        ],
        seed: 0,
    };
    let mut s = Search::new(&map, &inst, SearchConfig::default()).unwrap();
    let root = s.create_root();
    let node = s.node(root).clone();
    assert_eq!(node.g, 4);
    assert_eq!(node.conflicts.len(), 1);
    assert_eq!(node.conflicts[0].class, Some(Cardinality::Cardinal));
    let kids = s.expand_conflict(root, &node.conflicts[0]);
    assert_eq!(score_o1(&kids), joint_state_optimum(&map, &inst).unwrap() as f64);
    assert_eq!(score_o1(&kids), 5.0);
    assert_eq!(score_o2(&kids), 0.0);
}

// Child costs are rebuilt from the single-agent oracle, independently of the
// solver's low level.
#[test]
fn o1_children_costs_match_single_agent_oracle() {
    let (map, inst) = busy_root(5);
    let mut s = Search::new(&map, &inst, SearchConfig::default()).unwrap();
    let root = s.create_root();
    let node = s.node(root).clone();
    let scored = ConflictSelector::o1(1).score(&mut s, root);
    for (i, c) in node.conflicts.iter().enumerate() {
        let kids = scored.children[i].as_ref().unwrap();
        let mut expected = f64::INFINITY;
        let mut any = false;
        for kid in kids.iter().flatten() {
            let agent = kid.constraint.agent();
            let task = inst.tasks[agent];
            let cons: Vec<Constraint> = vec![kid.constraint];
            let cost = brute_single_agent_cost(&map, task.start, task.goal, agent, &cons, 80).unwrap();
            assert_eq!(kid.g, node.g - node.paths[agent].cost() + cost, "conflict {i}");
            assert!(kid.g + kid.h >= node.g + node.h);
            expected = expected.min((kid.g + kid.h) as f64);
            any = true;
        }
        assert!(any);
        assert_eq!(scored.scores[i], expected);
        let cardinal = kids.iter().all(|k| k.as_ref().is_none_or(|k| k.g > node.g));
        assert_eq!(c.class == Some(Cardinality::Cardinal), cardinal, "conflict {i}");
    }
    let best = scored.best();
    assert!(scored.scores.iter().all(|&x| x <= scored.scores[best]));
}

#[test]
fn memoized_children_equal_fresh_expansion() {
    let (map, inst) = busy_root(4);
    for mut sel in [ConflictSelector::o1(2), ConflictSelector::o2(2)] {
        let mut s = Search::new(&map, &inst, SearchConfig::default()).unwrap();
        let root = s.create_root();
        let selection = sel.select(&mut s, root);
        let conflict = s.node(root).conflicts[selection.index];
        let fresh = s.expand_conflict(root, &conflict);
        assert_eq!(selection.children.unwrap(), fresh);
    }
}

#[test]
fn cardinal_indicator_model_picks_a_cardinal_conflict() {
    let map = GridMap::random(10, 10, 20, 3);
    let mut e3 = [0.0; NUM_FEATURES];
    e3[2] = 1.0;
    let model = RankingModel::new(e3, 0.01, FeatureMask::none());
    let mut checked = 0;
    for seed in 0..40 {
        let inst = map.generate_instance(8, seed).unwrap();
        let mut s = Search::new(&map, &inst, SearchConfig::default()).unwrap();
        let root = s.create_root();
        let conflicts = s.node(root).conflicts.clone();
        if !conflicts.iter().any(|c| c.class == Some(Cardinality::Cardinal)) {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scored = rank_learned(&mut s, root, &model, &mut rng);
        assert_eq!(conflicts[scored.best()].class, Some(Cardinality::Cardinal));
        checked += 1;
    }
    assert!(checked >= 5, "only {checked} roots with cardinal conflicts");
}

#[test]
fn learned_ranking_ignores_positive_scaling() {
    let (map, inst) = busy_root(5);
    let w: [f64; NUM_FEATURES] = std::array::from_fn(|i| ((i * 37 % 11) as f64 - 5.0) / 3.0);
    let a = RankingModel::new(w, 0.01, FeatureMask::none());
    let b = RankingModel::new(w.map(|x| x * 7.5), 0.01, FeatureMask::none());
    let mut s = Search::new(&map, &inst, SearchConfig::default()).unwrap();
    let root = s.create_root();
    let ra = rank_learned(&mut s, root, &a, &mut ChaCha8Rng::seed_from_u64(4)).ranking;
    let rb = rank_learned(&mut s, root, &b, &mut ChaCha8Rng::seed_from_u64(4)).ranking;
    assert_eq!(ra, rb);
}
