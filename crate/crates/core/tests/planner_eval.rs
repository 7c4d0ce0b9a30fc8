use proptest::prelude::*;
use roverplan::eval::{
    accuracy_counts, action_accuracy, evaluate, export_trajectory_overlay, export_value_map,
    rollouts, sample_starts, success_rate, value_estimates, AccuracyMode, GOAL_COLOR, PATH_COLOR,
    START_COLOR,
};
use roverplan::gridworld::{
    build_dataset, generate_maps, Action, Dataset, GridMap, MapRecord, Pos, Split,
};
use roverplan::models::{Arch, Model, ModelSpec, QMap};
use roverplan::planner::{
    adjudicate, plan, plan_multi, replay, step_budget, ConstantAction, ConstantScores,
    ExpertPolicy, Outcome, Policy, UniformRandom,
};
use roverplan::terrain::render_crater_scene;
use roverplan::Error;
use tempfile::TempDir;

fn dataset(seed: u64, count: usize, density: f64) -> Dataset {
    build_dataset(
        generate_maps(seed, count, 16, 16, density).unwrap(),
        seed,
        0.5,
    )
    .unwrap()
}

#[test]
fn expert_stub_is_perfect() {
    let ds = dataset(1, 20, 0.25);
    for split in [Split::Train, Split::Test] {
        assert_eq!(
            action_accuracy(&ExpertPolicy, &ds, split, AccuracyMode::Set).unwrap(),
            1.0
        );
        assert_eq!(
            action_accuracy(&ExpertPolicy, &ds, split, AccuracyMode::Strict).unwrap(),
            1.0
        );
        assert_eq!(success_rate(&ExpertPolicy, &ds, split, 16, 0).unwrap(), 1.0);
    }
    // expert rollouts take exactly the BFS distance
    for (id, t) in rollouts(&ExpertPolicy, &ds, Split::Test, 8, 3).unwrap() {
        let rec = &ds.records[id];
        assert_eq!(Some(t.steps as u16), rec.distances.get(t.start()));
        replay(rec, &t).unwrap();
    }
}

#[test]
fn uniform_random_accuracy_matches_mean_optimal_set_size() {
    // obstacle-free maps; each map gets its own seed so draws are independent
    let ds = dataset(2, 60, 0.0);
    let (mut hits, mut expected, mut variance) = (0.0, 0.0, 0.0);
    for id in 0..ds.records.len() {
        let single = ds.subset(&[id]);
        let split = single.split[0];
        let counts = accuracy_counts(
            &UniformRandom {
                seed: 1000 + id as u64,
            },
            &single,
            split,
        )
        .unwrap();
        assert!(counts.strict <= counts.set);
        hits += counts.set as f64;
        let rec = &single.records[0];
        for pos in rec.labels.labeled_positions() {
            let p = rec.labels.optimal_set(pos).len() as f64 / 8.0;
            expected += p;
            variance += p * (1.0 - p);
        }
    }
    let sigma = variance.sqrt();
    assert!(
        (hits - expected).abs() <= 3.0 * sigma,
        "hits {hits}, expected {expected:.1} ± {:.1}",
        3.0 * sigma
    );
    // the expectation itself: on an open map an action is optimal exactly
    // when it lowers the Chebyshev distance to the goal
    let cheb = |a: Pos, b: Pos| a.row.abs_diff(b.row).max(a.col.abs_diff(b.col));
    for rec in &ds.records {
        let g = rec.map.goal();
        for pos in rec.labels.labeled_positions() {
            let d = cheb(pos, g);
            let count = Action::ALL
                .iter()
                .filter(|a| rec.map.step(pos, **a).is_some_and(|n| cheb(n, g) + 1 == d))
                .count();
            assert_eq!(rec.labels.optimal_set(pos).len(), count);
        }
    }
}

#[test]
fn always_east_rarely_reaches_the_goal() {
    let ds = dataset(3, 60, 0.2);
    assert!(ds.map_ids(Split::Train).len() >= 25);
    let sr = success_rate(&ConstantAction(Action::East), &ds, Split::Train, 16, 0).unwrap();
    let sr_all = {
        let all = build_dataset(generate_maps(3, 60, 16, 16, 0.2).unwrap(), 3, 0.0).unwrap();
        success_rate(&ConstantAction(Action::East), &all, Split::Train, 16, 0).unwrap()
    };
    assert!(sr < 0.5 && sr_all < 0.5, "{sr} {sr_all}");
}

#[test]
fn success_rate_is_deterministic_given_seed() {
    let ds = dataset(4, 12, 0.2);
    let policy = UniformRandom { seed: 5 };
    let a = rollouts(&policy, &ds, Split::Test, 6, 42).unwrap();
    let b = rollouts(&policy, &ds, Split::Test, 6, 42).unwrap();
    assert_eq!(a, b);
    let c = rollouts(&policy, &ds, Split::Test, 6, 43).unwrap();
    let starts = |r: &[(usize, roverplan::planner::Trajectory)]| {
        r.iter().map(|(_, t)| t.start()).collect::<Vec<_>>()
    };
    assert_ne!(starts(&a), starts(&c));
}

#[test]
fn sampled_starts_are_distinct_labeled_cells() {
    let ds = dataset(5, 6, 0.3);
    for (id, rec) in ds.records.iter().enumerate() {
        let starts = sample_starts(rec, 16, 9, id);
        assert_eq!(starts.len(), rec.labels.labeled_count().min(16));
        let mut uniq = starts.clone();
        uniq.sort_by_key(|p| (p.row, p.col));
        uniq.dedup();
        assert_eq!(uniq.len(), starts.len());
        assert!(starts.iter().all(|&p| rec.labels.label(p).is_some()));
    }
}

#[test]
fn multi_rover_planning_matches_single_rover_planning() {
    let ds = dataset(6, 3, 0.2);
    let rec = &ds.records[0];
    let starts: Vec<Pos> = rec.labels.labeled_positions().step_by(3).take(10).collect();
    assert_eq!(starts.len(), 10);
    for arch in Arch::ALL {
        let model =
            Model::build(ModelSpec::new(arch, 16, 16, 2).with_vin_iterations(20), 3).unwrap();
        let before = model.forward_passes();
        let multi = plan_multi(&model, rec, &starts).unwrap();
        assert_eq!(model.forward_passes() - before, 1, "{arch:?}");
        for (s, t) in starts.iter().zip(&multi) {
            assert_eq!(&plan(&model, rec, *s).unwrap(), t, "{arch:?} from {s:?}");
            replay(rec, t).unwrap();
        }
    }
    assert!(plan_multi(&ExpertPolicy, rec, &[]).unwrap().is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn every_rollout_replays_and_terminates(seed in 0u64..500, density in 0.0f64..0.35, policy_seed in 0u64..100) {
        let maps = generate_maps(seed, 1, 12, 12, density).unwrap();
        let rec = MapRecord::from_map(maps.into_iter().next().unwrap());
        let policy = UniformRandom { seed: policy_seed };
        for start in rec.labels.labeled_positions().take(12) {
            let t = plan(&policy, &rec, start).unwrap();
            prop_assert!(replay(&rec, &t).is_ok());
            prop_assert!(t.steps <= step_budget(12, 12));
            prop_assert_eq!(adjudicate(&t), t.outcome == Outcome::Reached);
            match t.outcome {
                Outcome::Reached | Outcome::BudgetExceeded => prop_assert!(t.final_action.is_none()),
                _ => prop_assert!(t.final_action.is_some()),
            }
            let mut seen = t.cells.clone();
            seen.sort_by_key(|p| (p.row, p.col));
            seen.dedup();
            prop_assert_eq!(seen.len(), t.cells.len(), "cells never repeat");
        }
    }
}

#[test]
fn empty_splits_are_errors() {
    let ds = build_dataset(generate_maps(7, 3, 16, 16, 0.2).unwrap(), 0, 0.0).unwrap();
    assert!(matches!(
        action_accuracy(&ExpertPolicy, &ds, Split::Test, AccuracyMode::Set),
        Err(Error::Empty(_))
    ));
    assert!(matches!(
        success_rate(&ExpertPolicy, &ds, Split::Test, 4, 0),
        Err(Error::Empty(_))
    ));
    // evaluate scores a missing split as zero instead
    let report = evaluate(&ExpertPolicy, &ds, "oracle", 0, 4, vec![]).unwrap();
    assert_eq!(
        (report.acc_train, report.acc_test, report.sr_test),
        (1.0, 0.0, 0.0)
    );
}

#[test]
fn metrics_report_fractions_are_ordered_and_bounded() {
    let ds = dataset(8, 10, 0.2);
    let model = Model::build(ModelSpec::new(Arch::Dbcnn, 16, 16, 2), 1).unwrap();
    let r = evaluate(&model, &ds, "dbcnn", 3, 8, vec![1.5, 2.5]).unwrap();
    for v in [
        r.acc_train,
        r.acc_test,
        r.strict_acc_train,
        r.strict_acc_test,
        r.sr_train,
        r.sr_test,
    ] {
        assert!((0.0..=1.0).contains(&v));
    }
    assert!(r.strict_acc_train <= r.acc_train && r.strict_acc_test <= r.acc_test);
    assert_eq!(
        r,
        evaluate(&model, &ds, "dbcnn", 3, 8, vec![1.5, 2.5]).unwrap()
    );
    let json = serde_json::to_string(&r).unwrap();
    assert_eq!(
        serde_json::from_str::<roverplan::eval::MetricsReport>(&json).unwrap(),
        r
    );
}

fn read_ppm(path: &std::path::Path, w: usize, h: usize) -> Vec<[u8; 3]> {
    let bytes = std::fs::read(path).unwrap();
    let header = format!("P6\n{w} {h}\n255\n");
    assert!(bytes.starts_with(header.as_bytes()));
    bytes[header.len()..]
        .chunks(3)
        .map(|c| [c[0], c[1], c[2]])
        .collect()
}

#[test]
fn overlay_colors_follow_the_caption() {
    let map = GridMap::from_ascii(&["......", ".##...", "....G.", "......"]).unwrap();
    let rec = MapRecord::from_map(map);
    let dir = TempDir::new().unwrap();

    let bare = dir.path().join("bare.ppm");
    export_trajectory_overlay(&rec, &[], &bare).unwrap();
    let px = read_ppm(&bare, 6, 4);
    for (i, &c) in rec.map.cells().iter().enumerate() {
        let expect = if c == 0 { [255; 3] } else { [0; 3] };
        if i == rec.map.index(rec.map.goal()) {
            assert_eq!(px[i], GOAL_COLOR);
        } else {
            assert_eq!(px[i], expect);
        }
    }

    let t = plan(&ExpertPolicy, &rec, Pos::new(0, 0)).unwrap();
    assert_eq!(t.outcome, Outcome::Reached);
    let path = dir.path().join("one.ppm");
    export_trajectory_overlay(&rec, std::slice::from_ref(&t), &path).unwrap();
    let px = read_ppm(&path, 6, 4);
    assert_eq!(
        px.iter().filter(|&&c| c == PATH_COLOR).count(),
        t.cells.len() - 2
    );
    assert_eq!(px[0], START_COLOR);
    assert_eq!(px[rec.map.index(rec.map.goal())], GOAL_COLOR);
    let again = dir.path().join("again.ppm");
    export_trajectory_overlay(&rec, std::slice::from_ref(&t), &again).unwrap();
    assert_eq!(
        std::fs::read(&path).unwrap(),
        std::fs::read(&again).unwrap()
    );

    let mut outside = t.clone();
    outside.cells.push(Pos::new(9, 9));
    assert!(matches!(
        export_trajectory_overlay(&rec, &[outside], &path),
        Err(Error::Precondition(_))
    ));
}

#[test]
fn overlay_uses_the_terrain_image_as_background() {
    let scene = render_crater_scene(3, 32, 32, 3, (2.0, 5.0)).unwrap();
    let gray: Vec<u8> = scene
        .image
        .data()
        .iter()
        .map(|v| (v * 255.0).round() as u8)
        .collect();
    let rec = MapRecord::from_scene(scene);
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("scene.ppm");
    export_trajectory_overlay(&rec, &[], &path).unwrap();
    let px = read_ppm(&path, 32, 32);
    let goal = rec.map.index(rec.map.goal());
    for (i, (p, g)) in px.iter().zip(&gray).enumerate() {
        if i != goal {
            assert_eq!(*p, [*g; 3]);
        }
    }
}

#[test]
fn value_map_normalization_and_degenerate_case() {
    let ds = dataset(9, 2, 0.2);
    let rec = &ds.records[0];
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("v.pgm");

    let flat = export_value_map(&ConstantScores([0.3; 8]), rec, &path).unwrap();
    assert!(flat.iter().all(|&v| v == 128));

    let model = Model::build(ModelSpec::new(Arch::Dbcnn, 16, 16, 2), 2).unwrap();
    let px = export_value_map(&model, rec, &path).unwrap();
    let v = value_estimates(&model.qmap(rec).unwrap());
    let argmin = (0..v.len()).min_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap();
    let argmax = (0..v.len()).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap();
    assert_eq!((px[argmin], px[argmax]), (0, 255));
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..13], b"P5\n16 16\n255\n");
    assert_eq!(&bytes[13..], px.as_slice());
}

#[test]
fn qmap_value_is_the_maximum_score() {
    let scores: Vec<[f32; 8]> = (0..6)
        .map(|i| std::array::from_fn(|a| ((i * 8 + a) % 5) as f32))
        .collect();
    let q = QMap::from_scores(2, 3, scores.clone());
    for (i, s) in scores.iter().enumerate() {
        let p = Pos::new(i / 3, i % 3);
        assert_eq!(q.value(p), s.iter().copied().fold(f32::MIN, f32::max));
        assert_eq!(s[q.greedy(p).id() as usize], q.value(p));
    }
    assert_eq!(value_estimates(&q).len(), 6);
}
