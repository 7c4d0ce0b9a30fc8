//! Best accuracy any policy that is constant on 4x4 blocks can reach on
//! 16x16 maps, and the success rate of rolling that policy out.
//!
//!     cargo run --release --example block_policy_ceiling

use roverplan::gridworld::{expert_distances, generate_map, optimal_actions, Action, Pos};
use std::collections::HashSet;

fn main() {
    let (mut ok, mut tot, mut succ, mut runs) = (0usize, 0usize, 0usize, 0usize);
    for seed in 0..300u64 {
        let m = generate_map(seed, 16, 16, 0.2).unwrap();
        let d = expert_distances(&m);
        let l = optimal_actions(&m, &d);
        let mut pol = vec![Action::East; 16];
        for br in 0..4 {
            for bc in 0..4 {
                let cells: Vec<Pos> = (0..16)
                    .map(|i| Pos::new(br * 4 + i / 4, bc * 4 + i % 4))
                    .filter(|&p| l.label(p).is_some())
                    .collect();
                let (best, cnt) = Action::ALL
                    .iter()
                    .map(|&a| {
                        (
                            a,
                            cells
                                .iter()
                                .filter(|&&p| l.optimal_set(p).contains(a))
                                .count(),
                        )
                    })
                    .max_by_key(|&(a, c)| (c, std::cmp::Reverse(a.id())))
                    .unwrap();
                pol[br * 4 + bc] = best;
                ok += cnt;
                tot += cells.len();
            }
        }
        for p in l.labeled_positions() {
            runs += 1;
            let mut s = p;
            let mut seen = HashSet::new();
            loop {
                if s == m.goal() {
                    succ += 1;
                    break;
                }
                if !seen.insert(s) {
                    break;
                }
                match m.step(s, pol[(s.row / 4) * 4 + s.col / 4]) {
                    Some(n) if m.is_free(n) => s = n,
                    _ => break,
                }
            }
        }
    }
    println!(
        "block-constant set-acc ceiling {:.3}, SR of that policy {:.3}",
        ok as f64 / tot as f64,
        succ as f64 / runs as f64
    );
}
