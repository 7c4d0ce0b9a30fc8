//! Greedy rollouts of a policy over a static map.
//!
//! `plan` queries the policy at every step. `plan_multi` evaluates the whole
//! Q-map once and rolls out any number of starts by table lookup.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::gridworld::{Action, MapRecord, Pos};
use crate::models::{greedy_action, Model, QMap};
use crate::{Error, Result};

/// Anything that scores the eight actions at a cell of a map.
pub trait Policy {
    fn action_scores(&self, rec: &MapRecord, pos: Pos) -> Result<[f32; 8]>;

    /// Scores for every cell. The default queries each cell separately.
    fn qmap(&self, rec: &MapRecord) -> Result<QMap> {
        let mut scores = Vec::with_capacity(rec.height() * rec.width());
        for p in rec.map.positions() {
            scores.push(self.action_scores(rec, p)?);
        }
        Ok(QMap::from_scores(rec.height(), rec.width(), scores))
    }

    /// Network evaluations performed so far (0 for stubs).
    fn forward_passes(&self) -> usize {
        0
    }
}

impl Policy for Model {
    fn action_scores(&self, rec: &MapRecord, pos: Pos) -> Result<[f32; 8]> {
        self.forward_single(rec, pos)
    }

    fn qmap(&self, rec: &MapRecord) -> Result<QMap> {
        self.forward_qmap(rec)
    }

    fn forward_passes(&self) -> usize {
        Model::forward_passes(self)
    }
}

fn one_hot(a: Action) -> [f32; 8] {
    let mut s = [0.0; 8];
    s[a.id() as usize] = 1.0;
    s
}

/// Plays the stored expert label. Cells without a label get flat scores.
#[derive(Clone, Copy, Debug, Default)]
pub struct ExpertPolicy;

impl Policy for ExpertPolicy {
    fn action_scores(&self, rec: &MapRecord, pos: Pos) -> Result<[f32; 8]> {
        Ok(rec.labels.label(pos).map_or([0.125; 8], one_hot))
    }
}

/// Always the same action.
#[derive(Clone, Copy, Debug)]
pub struct ConstantAction(pub Action);

impl Policy for ConstantAction {
    fn action_scores(&self, _: &MapRecord, _: Pos) -> Result<[f32; 8]> {
        Ok(one_hot(self.0))
    }
}

/// The same score vector everywhere.
#[derive(Clone, Copy, Debug)]
pub struct ConstantScores(pub [f32; 8]);

impl Policy for ConstantScores {
    fn action_scores(&self, _: &MapRecord, _: Pos) -> Result<[f32; 8]> {
        Ok(self.0)
    }
}

/// A uniformly random action per cell, fixed by the seed and the cell.
#[derive(Clone, Copy, Debug)]
pub struct UniformRandom {
    pub seed: u64,
}

impl Policy for UniformRandom {
    fn action_scores(&self, rec: &MapRecord, pos: Pos) -> Result<[f32; 8]> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(rec.map.index(pos) as u64);
        Ok(one_hot(Action::ALL[rng.gen_range(0..Action::COUNT)]))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Outcome {
    Reached,
    Collision,
    OutOfBounds,
    Loop,
    BudgetExceeded,
}

/// A rollout. `cells` starts at the start cell and holds one more entry than
/// `actions`; the move that ended a failed rollout is kept separately.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub cells: Vec<Pos>,
    pub actions: Vec<Action>,
    pub outcome: Outcome,
    pub steps: usize,
    pub final_action: Option<Action>,
}

impl Trajectory {
    pub fn start(&self) -> Pos {
        self.cells[0]
    }

    pub fn end(&self) -> Pos {
        *self.cells.last().expect("trajectory has a start cell")
    }
}

/// Generous bound above the longest shortest path of an H×W grid.
pub fn step_budget(height: usize, width: usize) -> usize {
    4 * (height + width)
}

pub fn adjudicate(traj: &Trajectory) -> bool {
    traj.outcome == Outcome::Reached
}

fn check_start(rec: &MapRecord, start: Pos) -> Result<()> {
    if !rec.map.in_bounds(start) {
        return Err(Error::Precondition(format!(
            "start {start:?} outside {}x{} map",
            rec.height(),
            rec.width()
        )));
    }
    if rec.map.is_obstacle(start) {
        return Err(Error::Precondition(format!(
            "start {start:?} is an obstacle"
        )));
    }
    Ok(())
}

fn rollout(
    rec: &MapRecord,
    start: Pos,
    mut scores_at: impl FnMut(Pos) -> Result<[f32; 8]>,
) -> Result<Trajectory> {
    check_start(rec, start)?;
    let map = &rec.map;
    let budget = step_budget(map.height(), map.width());
    let mut cells = vec![start];
    let mut actions = Vec::new();
    let mut visited = HashSet::from([start]);
    let mut pos = start;
    let (outcome, final_action) = loop {
        if pos == map.goal() {
            break (Outcome::Reached, None);
        }
        if actions.len() >= budget {
            break (Outcome::BudgetExceeded, None);
        }
        let a = greedy_action(&scores_at(pos)?);
        let Some(next) = map.step(pos, a) else {
            break (Outcome::OutOfBounds, Some(a));
        };
        if map.is_obstacle(next) {
            break (Outcome::Collision, Some(a));
        }
        if !visited.insert(next) {
            break (Outcome::Loop, Some(a));
        }
        actions.push(a);
        cells.push(next);
        pos = next;
    };
    Ok(Trajectory {
        steps: actions.len(),
        cells,
        actions,
        outcome,
        final_action,
    })
}

/// Rolls out the greedy policy from `start`, querying it at every step.
pub fn plan<P: Policy + ?Sized>(policy: &P, rec: &MapRecord, start: Pos) -> Result<Trajectory> {
    rollout(rec, start, |p| policy.action_scores(rec, p))
}

/// Rolls out a precomputed Q-map.
pub fn plan_with_qmap(qmap: &QMap, rec: &MapRecord, start: Pos) -> Result<Trajectory> {
    rollout(rec, start, |p| Ok(*qmap.get(p)))
}

/// Plans every start towards the shared goal from a single Q-map.
pub fn plan_multi<P: Policy + ?Sized>(
    policy: &P,
    rec: &MapRecord,
    starts: &[Pos],
) -> Result<Vec<Trajectory>> {
    if starts.is_empty() {
        return Ok(Vec::new());
    }
    for &s in starts {
        check_start(rec, s)?;
    }
    let qmap = policy.qmap(rec)?;
    starts
        .iter()
        .map(|&s| plan_with_qmap(&qmap, rec, s))
        .collect()
}

/// Replays `traj` on the map and checks the cell/action invariants.
pub fn replay(rec: &MapRecord, traj: &Trajectory) -> Result<()> {
    let bad = |msg: String| Err(Error::Precondition(msg));
    if traj.cells.len() != traj.actions.len() + 1 || traj.steps != traj.actions.len() {
        return bad("trajectory lengths disagree".into());
    }
    for (i, a) in traj.actions.iter().enumerate() {
        match rec.map.step(traj.cells[i], *a) {
            Some(n) if n == traj.cells[i + 1] && rec.map.is_free(n) => {}
            _ => {
                return bad(format!(
                    "move {i} ({a:?}) does not lead to {:?}",
                    traj.cells[i + 1]
                ))
            }
        }
    }
    if (traj.outcome == Outcome::Reached) != (traj.end() == rec.map.goal()) {
        return bad("outcome disagrees with the final cell".into());
    }
    Ok(())
}

#[derive(Serialize)]
struct TrajectoryJson {
    map_id: usize,
    start: [usize; 2],
    goal: [usize; 2],
    outcome: Outcome,
    steps: usize,
    cells: Vec<[usize; 2]>,
    actions: Vec<u8>,
}

/// JSON export of one trajectory.
pub fn trajectory_json(map_id: usize, rec: &MapRecord, traj: &Trajectory) -> String {
    let g = rec.map.goal();
    let doc = TrajectoryJson {
        map_id,
        start: [traj.start().row, traj.start().col],
        goal: [g.row, g.col],
        outcome: traj.outcome,
        steps: traj.steps,
        cells: traj.cells.iter().map(|p| [p.row, p.col]).collect(),
        actions: traj.actions.iter().map(|a| a.id()).collect(),
    };
    serde_json::to_string(&doc).expect("trajectory serializes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::GridMap;

    fn record(rows: &[&str]) -> MapRecord {
        MapRecord::from_map(GridMap::from_ascii(rows).unwrap())
    }

    #[test]
    fn start_at_goal_reaches_immediately() {
        let rec = record(&["...", ".G.", "..."]);
        let t = plan(&ExpertPolicy, &rec, rec.map.goal()).unwrap();
        assert_eq!((t.outcome, t.steps), (Outcome::Reached, 0));
    }

    #[test]
    fn always_east_never_reaches_a_western_goal() {
        let rec = record(&["G....", ".....", "....."]);
        let t = plan(&ConstantAction(Action::East), &rec, Pos::new(1, 2)).unwrap();
        assert_eq!(t.outcome, Outcome::OutOfBounds);
        assert_eq!(t.steps, 2);
    }

    /// East on even columns, west on odd ones.
    struct Shuttle;

    impl Policy for Shuttle {
        fn action_scores(&self, _: &MapRecord, pos: Pos) -> Result<[f32; 8]> {
            Ok(one_hot(if pos.col % 2 == 0 {
                Action::East
            } else {
                Action::West
            }))
        }
    }

    #[test]
    fn collision_and_loop_are_detected() {
        let rec = record(&["G.#", "..."]);
        let t = plan(&ConstantAction(Action::East), &rec, Pos::new(0, 1)).unwrap();
        assert_eq!(
            (t.outcome, t.final_action),
            (Outcome::Collision, Some(Action::East))
        );
        let t = plan(&Shuttle, &rec, Pos::new(1, 0)).unwrap();
        assert_eq!((t.outcome, t.steps), (Outcome::Loop, 1));
        replay(&rec, &t).unwrap();
    }

    #[test]
    fn obstacle_start_is_rejected() {
        let rec = record(&["G.#"]);
        assert!(matches!(
            plan(&ExpertPolicy, &rec, Pos::new(0, 2)),
            Err(Error::Precondition(_))
        ));
        assert!(plan_multi(&ExpertPolicy, &rec, &[]).unwrap().is_empty());
    }

    #[test]
    fn json_export_lists_cells() {
        let rec = record(&["G.."]);
        let t = plan(&ExpertPolicy, &rec, Pos::new(0, 2)).unwrap();
        let v: serde_json::Value = serde_json::from_str(&trajectory_json(3, &rec, &t)).unwrap();
        assert_eq!(v["outcome"], "REACHED");
        assert_eq!(v["cells"], serde_json::json!([[0, 2], [0, 1], [0, 0]]));
    }
}
