//! Exact value iteration on the grid MDP, used as an oracle for the expert
//! labels and as the reference behaviour the VIN baseline approximates.

use crate::gridworld::{Action, ActionSet, GridMap, MdpSpec, Pos};

/// State values, row-major. The goal is absorbing with value 0.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueTable {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl ValueTable {
    pub fn get(&self, p: Pos) -> f64 {
        self.values[p.row * self.width + p.col]
    }
}

/// Reward and successor of taking `a` in `s`. Moves off the grid or into an
/// obstacle leave the rover in place.
fn transition(map: &GridMap, mdp: &MdpSpec, s: Pos, a: Action) -> (f64, Pos) {
    match map.step(s, a).filter(|&n| map.is_free(n)) {
        Some(n) if n == map.goal() => (mdp.reward_goal, n),
        Some(n) => (mdp.reward_step, n),
        None => (mdp.reward_step, s),
    }
}

fn backup(map: &GridMap, mdp: &MdpSpec, v: &[f64], s: Pos, a: Action) -> f64 {
    let (r, n) = transition(map, mdp, s, a);
    r + mdp.discount * v[map.index(n)]
}

/// `iterations` synchronous sweeps of `V(s) ← max_a [r(s,a) + γ V(s')]`
/// over free non-goal cells, starting from V = 0. Obstacle cells stay 0 and
/// are never entered.
pub fn tabular_vi(map: &GridMap, mdp: &MdpSpec, iterations: usize) -> ValueTable {
    let mut v = vec![0.0; map.height() * map.width()];
    for _ in 0..iterations {
        let mut next = v.clone();
        for s in map.positions() {
            if !map.is_free(s) || s == map.goal() {
                continue;
            }
            next[map.index(s)] = Action::ALL
                .iter()
                .map(|&a| backup(map, mdp, &v, s, a))
                .fold(f64::NEG_INFINITY, f64::max);
        }
        v = next;
    }
    ValueTable {
        height: map.height(),
        width: map.width(),
        values: v,
    }
}

/// Per-cell argmax sets of the one-step lookahead under `values` (ties
/// within `tol`). Goal and obstacle cells get the empty set.
pub fn greedy_action_sets(
    map: &GridMap,
    mdp: &MdpSpec,
    values: &ValueTable,
    tol: f64,
) -> Vec<ActionSet> {
    map.positions()
        .map(|s| {
            let mut set = ActionSet::EMPTY;
            if !map.is_free(s) || s == map.goal() {
                return set;
            }
            let q: Vec<f64> = Action::ALL
                .iter()
                .map(|&a| backup(map, mdp, &values.values, s, a))
                .collect();
            let best = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for (a, &qa) in Action::ALL.iter().zip(&q) {
                if qa >= best - tol {
                    set.insert(*a);
                }
            }
            set
        })
        .collect()
}
