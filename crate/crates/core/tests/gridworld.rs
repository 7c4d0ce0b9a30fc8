mod common;

use proptest::prelude::*;
use roverplan::gridworld::MapRecord;
use roverplan::gridworld::{
    build_dataset, expert_distances, generate_map, optimal_actions, Action, GridMap, MdpSpec, Pos,
    Split,
};
use roverplan::models::{greedy_action_sets, tabular_vi};
use roverplan::planner::{plan, replay, ExpertPolicy, Outcome};

fn check_against_enumeration(map: &GridMap) {
    let dist = expert_distances(map);
    let labels = optimal_actions(map, &dist);
    let oracle = common::enumerate_distances(map, true);
    for p in map.positions() {
        assert_eq!(
            dist.get(p).map(usize::from),
            oracle[map.index(p)],
            "distance at {p:?}"
        );
        let set: Vec<Action> = labels.optimal_set(p).iter().collect();
        assert_eq!(
            set,
            common::oracle_optimal_set(map, &oracle, p),
            "optimal set at {p:?}"
        );
        assert_eq!(labels.label(p), set.first().copied());
    }
}

#[test]
fn bfs_matches_enumeration_on_random_small_maps() {
    let mut seed = 0;
    let mut checked = 0;
    while checked < 200 {
        let (h, w) = (4 + seed as usize % 5, 4 + (seed as usize / 5) % 5);
        let density = [0.0, 0.1, 0.2, 0.3][seed as usize % 4];
        seed += 1;
        if let Ok(map) = generate_map(seed, h, w, density) {
            check_against_enumeration(&map);
            checked += 1;
        }
    }
}

#[test]
fn wall_gap_distance_with_and_without_corner_cutting() {
    let map = GridMap::from_ascii(&["..#..", "..#..", "..#.G", "..#..", "....."]).unwrap();
    let start = Pos::new(2, 0);
    assert_eq!(expert_distances(&map).get(start), Some(4));
    assert_eq!(
        common::enumerate_distances(&map, true)[map.index(start)],
        Some(4)
    );
    assert_eq!(
        common::enumerate_distances(&map, false)[map.index(start)],
        Some(6)
    );
}

#[test]
fn tabular_value_iteration_agrees_with_bfs() {
    let mdp = MdpSpec::default();
    for seed in 0..50u64 {
        let (h, w) = (4 + seed as usize % 5, 4 + (seed as usize / 5) % 5);
        let map = generate_map(seed, h, w, 0.25).unwrap();
        let labels = optimal_actions(&map, &expert_distances(&map));
        let v = tabular_vi(&map, &mdp, h * w + 5);
        let sets = greedy_action_sets(&map, &mdp, &v, 1e-9);
        for p in labels.labeled_positions() {
            assert_eq!(
                sets[map.index(p)],
                labels.optimal_set(p),
                "seed {seed} at {p:?}"
            );
        }
    }
}

fn arb_map() -> impl Strategy<Value = GridMap> {
    (2usize..10, 2usize..10, any::<u64>(), 0.0f64..0.4)
        .prop_filter_map("generation failed", |(h, w, seed, d)| {
            generate_map(seed, h, w, d).ok()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn distances_satisfy_bellman_equation(map in arb_map()) {
        let dist = expert_distances(&map);
        for p in map.positions() {
            let best_next = Action::ALL
                .iter()
                .filter_map(|&a| map.step(p, a))
                .filter(|&n| map.is_free(n))
                .filter_map(|n| dist.get(n))
                .min();
            match dist.get(p) {
                Some(0) => prop_assert_eq!(p, map.goal()),
                Some(d) => prop_assert_eq!(Some(d - 1), best_next),
                None => prop_assert!(map.is_obstacle(p) || best_next.is_none()),
            }
        }
    }

    #[test]
    fn expert_rollouts_take_exactly_the_distance(map in arb_map()) {
        let rec = MapRecord::from_map(map);
        for p in rec.labels.labeled_positions() {
            let t = plan(&ExpertPolicy, &rec, p).unwrap();
            prop_assert_eq!(t.outcome, Outcome::Reached);
            prop_assert_eq!(Some(t.steps as u16), rec.distances.get(p));
            replay(&rec, &t).unwrap();
        }
    }

    #[test]
    fn label_is_minimum_of_optimal_set(map in arb_map()) {
        let labels = optimal_actions(&map, &expert_distances(&map));
        for p in map.positions() {
            prop_assert_eq!(labels.label(p), labels.optimal_set(p).min());
        }
    }

    #[test]
    fn dataset_split_is_seeded_and_disjoint(n in 1usize..20, seed in any::<u64>()) {
        let maps: Vec<GridMap> = (0..n as u64).map(|i| generate_map(i, 6, 6, 0.2).unwrap()).collect();
        let a = build_dataset(maps.clone(), seed, 1.0 / 7.0).unwrap();
        let b = build_dataset(maps, seed, 1.0 / 7.0).unwrap();
        prop_assert_eq!(a.map_ids(Split::Test), b.map_ids(Split::Test));
        let test = a.map_ids(Split::Test);
        prop_assert_eq!(test.len(), (n as f64 / 7.0).round() as usize);
        prop_assert!(a.map_ids(Split::Train).iter().all(|id| !test.contains(id)));
    }
}
