//! Occupancy grids, the deterministic 8-move navigation MDP, and exact
//! expert labels computed by breadth-first search from the goal.

mod dataset;
mod format;

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use dataset::{build_dataset, Dataset, Entry, Environment, MapRecord, Split};
pub use format::{
    read_map_record, write_map_record, DatasetManifest, MANIFEST_FILE, MAP_MAGIC, SCENE_MAGIC,
};

/// Distance value of cells that cannot reach the goal (and of obstacles).
pub const UNREACHABLE: u16 = u16::MAX;
/// Label byte of goal, obstacle and unreachable cells.
pub const UNLABELED: u8 = 255;
/// Regeneration attempts before [`generate_map`] gives up.
pub const MAX_RETRIES: usize = 100;

/// A grid cell, row-major: rows grow southward, columns eastward.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pos {
    pub row: usize,
    pub col: usize,
}

impl Pos {
    pub const fn new(row: usize, col: usize) -> Self {
        Pos { row, col }
    }
}

impl From<(usize, usize)> for Pos {
    fn from((row, col): (usize, usize)) -> Self {
        Pos { row, col }
    }
}

/// The eight moves. Discriminants are the action IDs used in labels,
/// network outputs and files.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum Action {
    East = 0,
    South = 1,
    West = 2,
    North = 3,
    SouthEast = 4,
    NorthEast = 5,
    SouthWest = 6,
    NorthWest = 7,
}

impl Action {
    pub const COUNT: usize = 8;

    pub const ALL: [Action; 8] = [
        Action::East,
        Action::South,
        Action::West,
        Action::North,
        Action::SouthEast,
        Action::NorthEast,
        Action::SouthWest,
        Action::NorthWest,
    ];

    pub fn from_id(id: u8) -> Option<Action> {
        Action::ALL.get(id as usize).copied()
    }

    pub fn id(self) -> u8 {
        self as u8
    }

    /// (row, col) displacement.
    pub fn displacement(self) -> (isize, isize) {
        match self {
            Action::East => (0, 1),
            Action::South => (1, 0),
            Action::West => (0, -1),
            Action::North => (-1, 0),
            Action::SouthEast => (1, 1),
            Action::NorthEast => (-1, 1),
            Action::SouthWest => (1, -1),
            Action::NorthWest => (-1, -1),
        }
    }

    pub fn opposite(self) -> Action {
        match self {
            Action::East => Action::West,
            Action::South => Action::North,
            Action::West => Action::East,
            Action::North => Action::South,
            Action::SouthEast => Action::NorthWest,
            Action::NorthEast => Action::SouthWest,
            Action::SouthWest => Action::NorthEast,
            Action::NorthWest => Action::SouthEast,
        }
    }

    /// Target cell of this move from `pos`, if it stays on an `height`×`width` grid.
    pub fn apply(self, pos: Pos, height: usize, width: usize) -> Option<Pos> {
        let (dr, dc) = self.displacement();
        let row = pos.row.checked_add_signed(dr)?;
        let col = pos.col.checked_add_signed(dc)?;
        (row < height && col < width).then_some(Pos { row, col })
    }
}

/// A subset of the eight actions, stored as a bit mask.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionSet(u8);

impl ActionSet {
    pub const EMPTY: ActionSet = ActionSet(0);

    pub fn from_bits(bits: u8) -> Self {
        ActionSet(bits)
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn insert(&mut self, a: Action) {
        self.0 |= 1 << a.id();
    }

    pub fn contains(self, a: Action) -> bool {
        self.0 & (1 << a.id()) != 0
    }

    pub fn contains_id(self, id: usize) -> bool {
        id < 8 && self.0 & (1 << id) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    /// Lowest action ID in the set.
    pub fn min(self) -> Option<Action> {
        (!self.is_empty()).then(|| Action::ALL[self.0.trailing_zeros() as usize])
    }

    pub fn iter(self) -> impl Iterator<Item = Action> {
        Action::ALL.into_iter().filter(move |a| self.contains(*a))
    }
}

/// Rewards and discount of the navigation MDP. Only the tabular value
/// iteration oracle consumes these; imitation learning never does.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MdpSpec {
    pub reward_goal: f64,
    pub reward_step: f64,
    pub discount: f64,
}

impl Default for MdpSpec {
    fn default() -> Self {
        MdpSpec {
            reward_goal: 10.0,
            reward_step: -1.0,
            discount: 0.99,
        }
    }
}

impl MdpSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.reward_goal > 0.0 && self.reward_step < 0.0) {
            return Err(Error::Precondition(format!(
                "rewards must satisfy goal > 0 > step, got {} / {}",
                self.reward_goal, self.reward_step
            )));
        }
        if !(0.0..=1.0).contains(&self.discount) {
            return Err(Error::Precondition(format!(
                "discount {} outside [0,1]",
                self.discount
            )));
        }
        Ok(())
    }
}

/// Occupancy grid with a goal cell. `cells[r * width + c]` is 1 for an
/// obstacle and 0 for free space.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridMap {
    height: usize,
    width: usize,
    cells: Vec<u8>,
    goal: Pos,
}

impl GridMap {
    /// Builds a map, checking shape, occupancy values and the goal cell.
    /// Reachability is not checked here; see [`GridMap::validate`].
    pub fn new(height: usize, width: usize, cells: Vec<u8>, goal: Pos) -> Result<Self> {
        if height == 0 || width == 0 || cells.len() != height * width {
            return Err(Error::Precondition(format!(
                "{height}x{width} map needs {} cells, got {}",
                height * width,
                cells.len()
            )));
        }
        if cells.iter().any(|&c| c > 1) {
            return Err(Error::Precondition(
                "occupancy values must be 0 or 1".into(),
            ));
        }
        if goal.row >= height || goal.col >= width {
            return Err(Error::Precondition(format!(
                "goal {goal:?} outside {height}x{width} map"
            )));
        }
        if cells[goal.row * width + goal.col] != 0 {
            return Err(Error::Precondition(format!("goal {goal:?} is an obstacle")));
        }
        Ok(GridMap {
            height,
            width,
            cells,
            goal,
        })
    }

    /// An obstacle-free map.
    pub fn empty(height: usize, width: usize, goal: Pos) -> Result<Self> {
        GridMap::new(height, width, vec![0; height * width], goal)
    }

    /// Parses rows of `.` (free), `#` (obstacle) and `G` (goal).
    pub fn from_ascii(rows: &[&str]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        let mut cells = Vec::with_capacity(height * width);
        let mut goal = None;
        for (r, line) in rows.iter().enumerate() {
            if line.len() != width {
                return Err(Error::Precondition("ragged ascii map".into()));
            }
            for (c, ch) in line.chars().enumerate() {
                match ch {
                    '.' => cells.push(0),
                    '#' => cells.push(1),
                    'G' => {
                        goal = Some(Pos::new(r, c));
                        cells.push(0);
                    }
                    other => {
                        return Err(Error::Precondition(format!("bad map character {other:?}")))
                    }
                }
            }
        }
        let goal = goal.ok_or_else(|| Error::Precondition("ascii map has no goal".into()))?;
        GridMap::new(height, width, cells, goal)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn goal(&self) -> Pos {
        self.goal
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    pub fn index(&self, p: Pos) -> usize {
        p.row * self.width + p.col
    }

    pub fn in_bounds(&self, p: Pos) -> bool {
        p.row < self.height && p.col < self.width
    }

    pub fn is_free(&self, p: Pos) -> bool {
        self.in_bounds(p) && self.cells[self.index(p)] == 0
    }

    pub fn is_obstacle(&self, p: Pos) -> bool {
        self.in_bounds(p) && self.cells[self.index(p)] == 1
    }

    pub fn step(&self, p: Pos, a: Action) -> Option<Pos> {
        a.apply(p, self.height, self.width)
    }

    pub fn positions(&self) -> impl Iterator<Item = Pos> + '_ {
        (0..self.height).flat_map(move |r| (0..self.width).map(move |c| Pos::new(r, c)))
    }

    pub fn obstacle_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c == 1).count()
    }

    /// Checks the stored-map invariants, including that at least one free
    /// non-goal cell can reach the goal.
    pub fn validate(&self) -> Result<()> {
        GridMap::new(self.height, self.width, self.cells.clone(), self.goal)?;
        let dist = expert_distances(self);
        if dist.reachable_count() == 0 {
            return Err(Error::Precondition(
                "no free cell can reach the goal".to_string(),
            ));
        }
        Ok(())
    }
}

/// Random map with i.i.d. obstacles. Deterministic per seed.
///
/// A draw is kept only if the goal's 8-connected free region holds at least
/// one other cell and at least half of all free cells; otherwise the map is
/// redrawn, up to [`MAX_RETRIES`] times.
pub fn generate_map(seed: u64, height: usize, width: usize, density: f64) -> Result<GridMap> {
    if height < 4 || width < 4 {
        return Err(Error::Precondition(format!(
            "map must be at least 4x4, got {height}x{width}"
        )));
    }
    if !(0.0..=1.0).contains(&density) {
        return Err(Error::Precondition(format!(
            "density {density} outside [0,1]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_RETRIES {
        let cells: Vec<u8> = (0..height * width)
            .map(|_| u8::from(rng.gen_bool(density)))
            .collect();
        let free: Vec<usize> = (0..cells.len()).filter(|&i| cells[i] == 0).collect();
        if free.is_empty() {
            continue;
        }
        let g = free[rng.gen_range(0..free.len())];
        let map = GridMap {
            height,
            width,
            cells,
            goal: Pos::new(g / width, g % width),
        };
        let reachable = expert_distances(&map).reachable_count();
        if reachable > 0 && 2 * (reachable + 1) >= free.len() {
            return Ok(map);
        }
    }
    Err(Error::Generation {
        seed,
        density,
        retries: MAX_RETRIES,
    })
}

/// Seed of the `index`-th map of a collection drawn with `base` (splitmix64).
pub fn map_seed(base: u64, index: usize) -> u64 {
    let mut z = base.wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `count` maps drawn with [`map_seed`]`(seed, i)`.
pub fn generate_maps(
    seed: u64,
    count: usize,
    height: usize,
    width: usize,
    density: f64,
) -> Result<Vec<GridMap>> {
    (0..count)
        .map(|i| generate_map(map_seed(seed, i), height, width, density))
        .collect()
}

/// Fewest-step distances to the goal; every move costs one step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DistanceField {
    height: usize,
    width: usize,
    dist: Vec<u16>,
}

impl DistanceField {
    pub fn from_raw(height: usize, width: usize, dist: Vec<u16>) -> Self {
        assert_eq!(dist.len(), height * width);
        DistanceField {
            height,
            width,
            dist,
        }
    }

    pub fn get(&self, p: Pos) -> Option<u16> {
        let d = self.dist[p.row * self.width + p.col];
        (d != UNREACHABLE).then_some(d)
    }

    pub fn raw(&self) -> &[u16] {
        &self.dist
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Free non-goal cells that can reach the goal.
    pub fn reachable_count(&self) -> usize {
        self.dist
            .iter()
            .filter(|&&d| d != UNREACHABLE && d != 0)
            .count()
    }
}

/// Breadth-first search from the goal over free cells with all eight moves.
/// Diagonal moves only need a free destination.
pub fn expert_distances(map: &GridMap) -> DistanceField {
    let (h, w) = (map.height, map.width);
    let mut dist = vec![UNREACHABLE; h * w];
    let mut queue = VecDeque::new();
    dist[map.index(map.goal)] = 0;
    queue.push_back(map.goal);
    while let Some(p) = queue.pop_front() {
        let d = dist[map.index(p)];
        // Moves are symmetric, so expanding forward moves from the goal
        // finds the predecessors of each cell.
        for a in Action::ALL {
            if let Some(n) = map.step(p, a) {
                let ni = map.index(n);
                if map.cells[ni] == 0 && dist[ni] == UNREACHABLE {
                    dist[ni] = d + 1;
                    queue.push_back(n);
                }
            }
        }
    }
    DistanceField {
        height: h,
        width: w,
        dist,
    }
}

/// Per-cell optimal action sets and their minimum-ID labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActionLabels {
    height: usize,
    width: usize,
    optimal: Vec<ActionSet>,
}

impl ActionLabels {
    pub fn optimal_set(&self, p: Pos) -> ActionSet {
        self.optimal[p.row * self.width + p.col]
    }

    pub fn label(&self, p: Pos) -> Option<Action> {
        self.optimal_set(p).min()
    }

    /// Label bytes in row-major order, [`UNLABELED`] where there is none.
    pub fn label_bytes(&self) -> Vec<u8> {
        self.optimal
            .iter()
            .map(|s| s.min().map_or(UNLABELED, Action::id))
            .collect()
    }

    pub fn labeled_positions(&self) -> impl Iterator<Item = Pos> + '_ {
        let w = self.width;
        self.optimal
            .iter()
            .enumerate()
            .filter(|(_, s)| !s.is_empty())
            .map(move |(i, _)| Pos::new(i / w, i % w))
    }

    pub fn labeled_count(&self) -> usize {
        self.optimal.iter().filter(|s| !s.is_empty()).count()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }
}

/// An action is optimal at `s` when it moves onto a free cell one step
/// closer to the goal.
pub fn optimal_actions(map: &GridMap, field: &DistanceField) -> ActionLabels {
    let mut optimal = vec![ActionSet::EMPTY; map.height * map.width];
    for p in map.positions() {
        let Some(d) = field.get(p) else { continue };
        if d == 0 || !map.is_free(p) {
            continue;
        }
        let set = &mut optimal[map.index(p)];
        for a in Action::ALL {
            if let Some(n) = map.step(p, a) {
                if map.is_free(n) && field.get(n) == Some(d - 1) {
                    set.insert(a);
                }
            }
        }
    }
    ActionLabels {
        height: map.height,
        width: map.width,
        optimal,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_density_map_is_empty() {
        let m = generate_map(0, 8, 8, 0.0).unwrap();
        assert_eq!(m.obstacle_count(), 0);
        assert_eq!(expert_distances(&m).reachable_count(), 63);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_map(7, 64, 64, 0.3).unwrap();
        let b = generate_map(7, 64, 64, 0.3).unwrap();
        assert_eq!(a.cells(), b.cells());
        assert_eq!(a.goal(), b.goal());
    }

    #[test]
    fn dense_maps_exhaust_retries() {
        let err = generate_map(1, 16, 16, 0.95).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("seed 1") && msg.contains("0.95"), "{msg}");
    }

    #[test]
    fn small_maps_rejected() {
        assert!(generate_map(0, 3, 8, 0.1).is_err());
        assert!(generate_map(0, 8, 8, 1.5).is_err());
    }

    #[test]
    fn empty_map_distance_is_chebyshev() {
        let m = GridMap::empty(5, 5, Pos::new(2, 2)).unwrap();
        let d = expert_distances(&m);
        assert_eq!(d.get(Pos::new(0, 0)), Some(2));
        assert_eq!(d.get(Pos::new(2, 2)), Some(0));
        for p in m.positions() {
            let cheb = p.row.abs_diff(2).max(p.col.abs_diff(2)) as u16;
            assert_eq!(d.get(p), Some(cheb));
        }
    }

    #[test]
    fn wall_with_gap() {
        let m = GridMap::from_ascii(&["..#..", "..#..", "..#.G", "..#..", "....."]).unwrap();
        let d = expert_distances(&m);
        // Frozen from exhaustive path enumeration (tests/gridworld_oracle.rs):
        // 4 with corner cutting through the gap, 6 without it.
        assert_eq!(d.get(Pos::new(2, 0)), Some(4));
        assert_eq!(d.get(Pos::new(0, 2)), None);
    }

    #[test]
    fn adjacent_goal_label() {
        let m = GridMap::empty(8, 8, Pos::new(3, 4)).unwrap();
        let l = optimal_actions(&m, &expert_distances(&m));
        let s = l.optimal_set(Pos::new(3, 3));
        assert_eq!(s.iter().collect::<Vec<_>>(), vec![Action::East]);
        assert_eq!(l.label(Pos::new(3, 3)), Some(Action::East));
    }

    #[test]
    fn two_step_ties_break_to_lowest_id() {
        let m = GridMap::empty(4, 4, Pos::new(0, 2)).unwrap();
        let l = optimal_actions(&m, &expert_distances(&m));
        let s = l.optimal_set(Pos::new(0, 0));
        assert_eq!(
            s.iter().collect::<Vec<_>>(),
            vec![Action::East, Action::SouthEast]
        );
        assert_eq!(l.label(Pos::new(0, 0)), Some(Action::East));
    }

    #[test]
    fn obstacles_and_goal_unlabeled() {
        let m = GridMap::from_ascii(&["#...", "....", "..G.", "...."]).unwrap();
        let l = optimal_actions(&m, &expert_distances(&m));
        assert_eq!(l.label(Pos::new(0, 0)), None);
        assert_eq!(l.label(m.goal()), None);
        assert_eq!(l.label_bytes()[0], UNLABELED);
    }

    #[test]
    fn enclosed_cells_are_unreachable_and_unlabeled() {
        let m = GridMap::from_ascii(&[".#..", "##..", "..G.", "...."]).unwrap();
        let d = expert_distances(&m);
        let l = optimal_actions(&m, &d);
        assert_eq!(d.get(Pos::new(0, 0)), None);
        assert_eq!(l.label(Pos::new(0, 0)), None);
    }

    #[test]
    fn corner_cutting_allowed() {
        let m = GridMap::from_ascii(&[".#..", "#G..", "....", "...."]).unwrap();
        let d = expert_distances(&m);
        assert_eq!(d.get(Pos::new(0, 0)), Some(1));
    }

    #[test]
    fn opposite_actions_round_trip() {
        let centre = Pos::new(2, 2);
        for a in Action::ALL {
            let n = a.apply(centre, 5, 5).unwrap();
            assert_eq!(a.opposite().apply(n, 5, 5), Some(centre));
            assert_eq!(Action::from_id(a.id()), Some(a));
        }
        assert_eq!(Action::from_id(8), None);
    }

    #[test]
    fn goal_on_obstacle_rejected() {
        assert!(GridMap::new(4, 4, vec![1; 16], Pos::new(0, 0)).is_err());
        assert!(GridMap::new(4, 4, vec![0; 16], Pos::new(4, 0)).is_err());
    }

    #[test]
    fn mdp_defaults_valid() {
        MdpSpec::default().validate().unwrap();
        let bad = MdpSpec {
            reward_step: 1.0,
            ..MdpSpec::default()
        };
        assert!(bad.validate().is_err());
    }
}
