//! Synthetic crater scenes with known obstacle masks, standing in for
//! orbital imagery. A scene feeds the 3-channel pipeline (gray image,
//! Canny edges, one-hot goal).

mod canny;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::gridworld::{expert_distances, GridMap, Pos};
use crate::{Error, Result};

pub use canny::{canny_edges, CannyParams};

/// Scene regeneration attempts before giving up.
pub const SCENE_RETRIES: usize = 100;
/// Minimum fraction of free cells in an accepted scene.
pub const MIN_FREE_FRACTION: f64 = 0.2;

const BASE_LEVEL: f32 = 0.5;
const NOISE_AMPLITUDE: f32 = 0.04;
const FLOOR_DARKENING: f32 = 0.3;
const RIM_BRIGHTENING: f32 = 0.1;
/// Rim extends from R to RIM_WIDTH * R.
const RIM_WIDTH: f64 = 1.5;

/// Row-major intensities in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl GrayImage {
    pub fn from_vec(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::dim(
                "GrayImage",
                format!(
                    "{height}x{width} needs {} values, got {}",
                    height * width,
                    data.len()
                ),
            ));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Precondition(format!("intensity {v} outside [0,1]")));
        }
        Ok(GrayImage {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Result<Self> {
        GrayImage::from_vec(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }
}

/// Image channels attached to a scene-backed map.
#[derive(Clone, Debug, PartialEq)]
pub struct Imagery {
    pub image: GrayImage,
    pub edges: GrayImage,
}

/// A circular crater; (row, col) centre in pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Crater {
    pub row: f64,
    pub col: f64,
    pub radius: f64,
}

impl Crater {
    fn dist(&self, r: usize, c: usize) -> f64 {
        ((r as f64 - self.row).powi(2) + (c as f64 - self.col).powi(2)).sqrt()
    }

    /// Pixel centres at distance ≤ radius are crater interior.
    pub fn covers(&self, r: usize, c: usize) -> bool {
        (r as f64 - self.row).powi(2) + (c as f64 - self.col).powi(2) <= self.radius * self.radius
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TerrainScene {
    pub image: GrayImage,
    pub edges: GrayImage,
    /// Obstacle ground truth (crater interiors) and goal.
    pub mask: GridMap,
    pub craters: Vec<Crater>,
}

/// Renders a random crater field. Deterministic per seed.
pub fn render_crater_scene(
    seed: u64,
    height: usize,
    width: usize,
    n_craters: usize,
    radius_range: (f64, f64),
) -> Result<TerrainScene> {
    let (rmin, rmax) = radius_range;
    if !(rmin > 0.0 && rmin <= rmax && rmax < height.min(width) as f64 / 2.0) {
        return Err(Error::Precondition(format!(
            "radius range {radius_range:?} invalid for a {height}x{width} scene"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..SCENE_RETRIES {
        let craters: Vec<Crater> = (0..n_craters)
            .map(|_| Crater {
                row: rng.gen_range(0.0..height as f64),
                col: rng.gen_range(0.0..width as f64),
                radius: if rmin < rmax {
                    rng.gen_range(rmin..rmax)
                } else {
                    rmin
                },
            })
            .collect();
        let scene_seed = rng.gen::<u64>();
        match render_scene(scene_seed, height, width, &craters) {
            Ok(scene) => return Ok(scene),
            Err(Error::SceneGeneration { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::SceneGeneration {
        seed,
        retries: SCENE_RETRIES,
    })
}

/// Renders a scene for explicit craters; `seed` drives noise and goal
/// placement. Fails with [`Error::SceneGeneration`] when the layout leaves
/// too little free space or no free cell connected to the goal.
pub fn render_scene(
    seed: u64,
    height: usize,
    width: usize,
    craters: &[Crater],
) -> Result<TerrainScene> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cells = vec![0u8; height * width];
    let mut data = vec![0f32; height * width];
    for r in 0..height {
        for c in 0..width {
            let mut v = BASE_LEVEL + rng.gen_range(-NOISE_AMPLITUDE..NOISE_AMPLITUDE);
            for k in craters {
                let d = k.dist(r, c) / k.radius;
                if d <= 1.0 {
                    cells[r * width + c] = 1;
                    // shallow bowl, so the floor boundary is a sharp step
                    v -= FLOOR_DARKENING * (1.0 - 0.2 * (d * d) as f32);
                } else if d < RIM_WIDTH {
                    // soft raised rim fading out with a cosine profile
                    let t = (d - 1.0) / (RIM_WIDTH - 1.0);
                    v += RIM_BRIGHTENING * 0.5 * (1.0 + (std::f64::consts::PI * t).cos()) as f32;
                }
            }
            data[r * width + c] = v.clamp(0.0, 1.0);
        }
    }

    let free: Vec<usize> = (0..cells.len()).filter(|&i| cells[i] == 0).collect();
    let reject = || Error::SceneGeneration { seed, retries: 0 };
    if (free.len() as f64) < MIN_FREE_FRACTION * (height * width) as f64 {
        return Err(reject());
    }
    let g = free[rng.gen_range(0..free.len())];
    let mask = GridMap::new(height, width, cells, Pos::new(g / width, g % width))?;
    let reachable = expert_distances(&mask).reachable_count();
    if reachable == 0 || 2 * (reachable + 1) < free.len() {
        return Err(reject());
    }

    let image = GrayImage::from_vec(height, width, data)?;
    let edges = canny_edges(&image, CannyParams::default());
    Ok(TerrainScene {
        image,
        edges,
        mask,
        craters: craters.to_vec(),
    })
}

impl TerrainScene {
    /// One-hot goal plane, the third network input channel.
    pub fn target_plane(&self) -> Vec<f32> {
        let mut t = vec![0.0; self.mask.height() * self.mask.width()];
        t[self.mask.index(self.mask.goal())] = 1.0;
        t
    }
}
