use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{expert_distances, optimal_actions, Action, ActionLabels, DistanceField, GridMap, Pos};
use crate::terrain::{Imagery, TerrainScene};
use crate::{Error, Result};

/// A map as handed to the dataset builder.
#[derive(Clone, Debug)]
pub enum Environment {
    Grid(GridMap),
    Scene(TerrainScene),
}

impl From<GridMap> for Environment {
    fn from(m: GridMap) -> Self {
        Environment::Grid(m)
    }
}

impl From<TerrainScene> for Environment {
    fn from(s: TerrainScene) -> Self {
        Environment::Scene(s)
    }
}

/// One map with its expert labels and, for crater scenes, the rendered
/// image and edge channels.
#[derive(Clone, Debug)]
pub struct MapRecord {
    pub map: GridMap,
    pub imagery: Option<Imagery>,
    pub distances: DistanceField,
    pub labels: ActionLabels,
}

impl MapRecord {
    pub fn from_map(map: GridMap) -> Self {
        let distances = expert_distances(&map);
        let labels = optimal_actions(&map, &distances);
        MapRecord {
            map,
            imagery: None,
            distances,
            labels,
        }
    }

    pub fn from_scene(scene: TerrainScene) -> Self {
        let mut rec = MapRecord::from_map(scene.mask);
        rec.imagery = Some(Imagery {
            image: scene.image,
            edges: scene.edges,
        });
        rec
    }

    pub fn from_env(env: Environment) -> Self {
        match env {
            Environment::Grid(m) => MapRecord::from_map(m),
            Environment::Scene(s) => MapRecord::from_scene(s),
        }
    }

    pub fn height(&self) -> usize {
        self.map.height()
    }

    pub fn width(&self) -> usize {
        self.map.width()
    }

    /// Input channel count: occupancy + goal for grids, gray + edges + goal
    /// for scenes.
    pub fn channels(&self) -> usize {
        if self.imagery.is_some() {
            3
        } else {
            2
        }
    }

    /// Network input planes, channel-major (C×H×W). The last plane is the
    /// one-hot goal.
    pub fn input_planes(&self) -> Vec<f32> {
        let hw = self.height() * self.width();
        let mut planes = Vec::with_capacity(self.channels() * hw);
        match &self.imagery {
            None => planes.extend(self.map.cells().iter().map(|&c| f32::from(c))),
            Some(im) => {
                planes.extend_from_slice(im.image.data());
                planes.extend_from_slice(im.edges.data());
            }
        }
        let mut goal = vec![0.0; hw];
        goal[self.map.index(self.map.goal())] = 1.0;
        planes.extend(goal);
        planes
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One expert sample: a labeled position of a map.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Entry {
    pub map_id: usize,
    pub pos: Pos,
    pub label: Action,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub records: Vec<MapRecord>,
    pub entries: Vec<Entry>,
    pub split: Vec<Split>,
    /// Maps discarded because they had no labeled cell.
    pub dropped: usize,
    pub seed: u64,
    pub test_fraction: f64,
}

impl Dataset {
    pub fn map_ids(&self, split: Split) -> Vec<usize> {
        (0..self.records.len())
            .filter(|&i| self.split[i] == split)
            .collect()
    }

    pub fn entries_in(&self, split: Split) -> Vec<Entry> {
        self.entries
            .iter()
            .filter(|e| self.split[e.map_id] == split)
            .copied()
            .collect()
    }

    /// (H, W, C) shared by every map, or an error if shapes differ.
    pub fn input_shape(&self) -> Result<(usize, usize, usize)> {
        let first = self
            .records
            .first()
            .ok_or_else(|| Error::Empty("dataset has no maps".into()))?;
        let shape = (first.height(), first.width(), first.channels());
        for r in &self.records {
            if (r.height(), r.width(), r.channels()) != shape {
                return Err(Error::dim(
                    "dataset",
                    format!(
                        "mixed map shapes {:?} and {:?}",
                        shape,
                        (r.height(), r.width(), r.channels())
                    ),
                ));
            }
        }
        Ok(shape)
    }

    /// Assembles a dataset from already-labeled records and a stored split.
    pub fn from_parts(
        records: Vec<MapRecord>,
        split: Vec<Split>,
        seed: u64,
        test_fraction: f64,
        dropped: usize,
    ) -> Result<Self> {
        if records.len() != split.len() {
            return Err(Error::Precondition(format!(
                "{} maps but {} split assignments",
                records.len(),
                split.len()
            )));
        }
        let entries = collect_entries(&records);
        Ok(Dataset {
            records,
            entries,
            split,
            dropped,
            seed,
            test_fraction,
        })
    }

    /// Subset keeping only the given map ids (in order), renumbered.
    pub fn subset(&self, map_ids: &[usize]) -> Dataset {
        let records: Vec<MapRecord> = map_ids.iter().map(|&i| self.records[i].clone()).collect();
        let split = map_ids.iter().map(|&i| self.split[i]).collect();
        Dataset {
            entries: collect_entries(&records),
            records,
            split,
            dropped: 0,
            seed: self.seed,
            test_fraction: self.test_fraction,
        }
    }
}

fn collect_entries(records: &[MapRecord]) -> Vec<Entry> {
    records
        .iter()
        .enumerate()
        .flat_map(|(map_id, r)| {
            r.labels.labeled_positions().map(move |pos| Entry {
                map_id,
                pos,
                label: r.labels.label(pos).expect("labeled position"),
            })
        })
        .collect()
}

/// Labels every map, drops maps without any labeled cell, and splits the
/// remaining maps into train/test at map granularity.
pub fn build_dataset<E: Into<Environment>>(
    maps: Vec<E>,
    seed: u64,
    test_fraction: f64,
) -> Result<Dataset> {
    if maps.is_empty() {
        return Err(Error::Empty("build_dataset needs at least one map".into()));
    }
    if !(0.0..=1.0).contains(&test_fraction) {
        return Err(Error::Precondition(format!(
            "test fraction {test_fraction} outside [0,1]"
        )));
    }
    let total = maps.len();
    let records: Vec<MapRecord> = maps
        .into_iter()
        .map(|m| MapRecord::from_env(m.into()))
        .filter(|r| r.labels.labeled_count() > 0)
        .collect();
    let dropped = total - records.len();
    if dropped > 0 {
        log::warn!("dropped {dropped} map(s) with no labeled cells");
    }

    let n = records.len();
    let n_test = ((n as f64) * test_fraction).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut split = vec![Split::Train; n];
    for &i in &order[..n_test.min(n)] {
        split[i] = Split::Test;
    }
    Dataset::from_parts(records, split, seed, test_fraction, dropped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::generate_map;

    #[test]
    fn empty_map_gives_all_free_cells() {
        let m = GridMap::empty(8, 8, Pos::new(0, 0)).unwrap();
        let d = build_dataset(vec![m], 0, 0.0).unwrap();
        assert_eq!(d.entries.len(), 63);
    }

    #[test]
    fn seven_maps_one_test() {
        let maps: Vec<_> = (0..7)
            .map(|s| generate_map(s, 8, 8, 0.2).unwrap())
            .collect();
        let d = build_dataset(maps.clone(), 3, 1.0 / 7.0).unwrap();
        assert_eq!(d.map_ids(Split::Test).len(), 1);
        let again = build_dataset(maps, 3, 1.0 / 7.0).unwrap();
        assert_eq!(d.split, again.split);
    }

    #[test]
    fn unlabeled_maps_dropped() {
        let sealed = GridMap::from_ascii(&["G#..", "##..", "....", "...."]).unwrap();
        let ok = GridMap::empty(4, 4, Pos::new(1, 1)).unwrap();
        let d = build_dataset(vec![sealed, ok], 0, 0.0).unwrap();
        assert_eq!(d.dropped, 1);
        assert_eq!(d.records.len(), 1);
    }

    #[test]
    fn empty_input_rejected() {
        assert!(build_dataset(Vec::<GridMap>::new(), 0, 0.1).is_err());
    }

    #[test]
    fn entries_are_labeled() {
        let maps: Vec<_> = (0..5)
            .map(|s| generate_map(s, 10, 10, 0.3).unwrap())
            .collect();
        let d = build_dataset(maps, 1, 0.2).unwrap();
        for e in &d.entries {
            assert_eq!(d.records[e.map_id].labels.label(e.pos), Some(e.label));
        }
    }

    #[test]
    fn grid_input_planes() {
        let m = GridMap::from_ascii(&["#...", "..G.", "....", "...."]).unwrap();
        let r = MapRecord::from_map(m);
        let p = r.input_planes();
        assert_eq!(p.len(), 32);
        assert_eq!(p[0], 1.0);
        assert_eq!(p[16 + 6], 1.0);
        assert_eq!(p.iter().sum::<f32>(), 2.0);
    }
}
