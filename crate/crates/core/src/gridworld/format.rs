//! On-disk dataset layout: a JSON `manifest` plus one binary record per map.
//!
//! Record layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes   "GWMAP01\n" (grid) or "GWMAP02\n" (scene)
//! H, W         u32, u32
//! occupancy    H*W bytes, row-major, 0 free / 1 obstacle
//! goal         u32 row, u32 col
//! labels       H*W bytes, action id 0-7 or 255
//! distances    H*W u16, 0xFFFF for unreachable
//! image        H*W f32      (scene records only)
//! edges        H*W f32      (scene records only)
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{expert_distances, optimal_actions, Dataset, GridMap, MapRecord, MdpSpec, Pos, Split};
use crate::terrain::{GrayImage, Imagery};
use crate::{Error, Result};

pub const MAP_MAGIC: &[u8; 8] = b"GWMAP01\n";
pub const SCENE_MAGIC: &[u8; 8] = b"GWMAP02\n";
pub const MANIFEST_FILE: &str = "manifest";
pub const FORMAT_VERSION: u32 = 1;

pub fn write_map_record<W: Write>(out: &mut W, rec: &MapRecord) -> std::io::Result<()> {
    let m = &rec.map;
    out.write_all(if rec.imagery.is_some() {
        SCENE_MAGIC
    } else {
        MAP_MAGIC
    })?;
    out.write_all(&(m.height() as u32).to_le_bytes())?;
    out.write_all(&(m.width() as u32).to_le_bytes())?;
    out.write_all(m.cells())?;
    out.write_all(&(m.goal().row as u32).to_le_bytes())?;
    out.write_all(&(m.goal().col as u32).to_le_bytes())?;
    out.write_all(&rec.labels.label_bytes())?;
    for d in rec.distances.raw() {
        out.write_all(&d.to_le_bytes())?;
    }
    if let Some(im) = &rec.imagery {
        for img in [&im.image, &im.edges] {
            for v in img.data() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    at: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::format(self.path, "truncated record"))?;
        let s = &self.buf[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Reads one record and checks its stored labels and distances against a
/// fresh expert computation. `path` is only used in error messages.
pub fn read_map_record<R: Read>(input: &mut R, path: &Path) -> Result<MapRecord> {
    let mut buf = Vec::new();
    input.read_to_end(&mut buf)?;
    let mut cur = Cursor {
        buf: &buf,
        at: 0,
        path,
    };
    let magic = cur.take(8)?;
    let scene = match magic {
        m if m == MAP_MAGIC => false,
        m if m == SCENE_MAGIC => true,
        _ => return Err(Error::format(path, "bad magic")),
    };
    let h = cur.u32()? as usize;
    let w = cur.u32()? as usize;
    let hw = h
        .checked_mul(w)
        .filter(|&n| n > 0 && n <= 1 << 26)
        .ok_or_else(|| Error::format(path, format!("implausible size {h}x{w}")))?;
    let cells = cur.take(hw)?.to_vec();
    let goal = Pos::new(cur.u32()? as usize, cur.u32()? as usize);
    let labels = cur.take(hw)?.to_vec();
    let dist: Vec<u16> = cur
        .take(2 * hw)?
        .chunks_exact(2)
        .map(|b| u16::from_le_bytes([b[0], b[1]]))
        .collect();
    let imagery = if scene {
        let read_plane = |cur: &mut Cursor| -> Result<GrayImage> {
            let data = cur
                .take(4 * hw)?
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            GrayImage::from_vec(h, w, data).map_err(|e| Error::format(path, e.to_string()))
        };
        let image = read_plane(&mut cur)?;
        let edges = read_plane(&mut cur)?;
        Some(Imagery { image, edges })
    } else {
        None
    };
    if cur.at != buf.len() {
        return Err(Error::format(path, "trailing bytes after record"));
    }

    let map = GridMap::new(h, w, cells, goal).map_err(|e| Error::format(path, e.to_string()))?;
    let distances = expert_distances(&map);
    if distances.raw() != dist.as_slice() {
        return Err(Error::format(
            path,
            "stored distances disagree with the map",
        ));
    }
    let action_labels = optimal_actions(&map, &distances);
    if action_labels.label_bytes() != labels {
        return Err(Error::format(path, "stored labels disagree with the map"));
    }
    Ok(MapRecord {
        map,
        imagery,
        distances,
        labels: action_labels,
    })
}

/// Contents of the dataset `manifest` file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    /// `grid` or `crater`.
    pub kind: String,
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub entries: usize,
    pub dropped: usize,
    pub seed: u64,
    pub test_fraction: f64,
    pub mdp: MdpSpec,
    /// Generator settings (density, crater counts, per-map seeds, ...).
    pub generator: serde_json::Value,
    pub files: Vec<String>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn record_file_name(i: usize) -> String {
    format!("map_{i:06}.bin")
}

impl Dataset {
    /// Writes `manifest` and one record per map into `dir` (created if
    /// missing). Output is a pure function of the dataset and `generator`.
    pub fn save(&self, dir: &Path, generator: serde_json::Value) -> Result<DatasetManifest> {
        let (height, width, channels) = self.input_shape()?;
        fs::create_dir_all(dir)?;
        let mut files = Vec::with_capacity(self.records.len());
        for (i, rec) in self.records.iter().enumerate() {
            let name = record_file_name(i);
            let mut buf = Vec::new();
            write_map_record(&mut buf, rec)?;
            fs::write(dir.join(&name), buf)?;
            files.push(name);
        }
        let manifest = DatasetManifest {
            format_version: FORMAT_VERSION,
            kind: if channels == 3 { "crater" } else { "grid" }.into(),
            count: self.records.len(),
            height,
            width,
            channels,
            entries: self.entries.len(),
            dropped: self.dropped,
            seed: self.seed,
            test_fraction: self.test_fraction,
            mdp: MdpSpec::default(),
            generator,
            files,
            train: self.map_ids(Split::Train),
            test: self.map_ids(Split::Test),
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(dir.join(MANIFEST_FILE), text)?;
        Ok(manifest)
    }

    pub fn load(dir: &Path) -> Result<(Dataset, DatasetManifest)> {
        let mpath = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&mpath)?;
        let manifest: DatasetManifest = serde_json::from_str(&text)?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::format(
                &mpath,
                format!("unsupported format version {}", manifest.format_version),
            ));
        }
        if manifest.files.len() != manifest.count {
            return Err(Error::format(&mpath, "file list does not match count"));
        }
        let mut records = Vec::with_capacity(manifest.count);
        for name in &manifest.files {
            let p = dir.join(name);
            let mut f = fs::File::open(&p)?;
            records.push(read_map_record(&mut f, &p)?);
        }
        let mut split = vec![None; manifest.count];
        for (ids, s) in [
            (&manifest.train, Split::Train),
            (&manifest.test, Split::Test),
        ] {
            for &i in ids {
                match split.get_mut(i) {
                    Some(slot @ None) => *slot = Some(s),
                    _ => return Err(Error::format(&mpath, format!("bad split index {i}"))),
                }
            }
        }
        let split = split
            .into_iter()
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Error::format(&mpath, "map missing from split lists"))?;
        let ds = Dataset::from_parts(
            records,
            split,
            manifest.seed,
            manifest.test_fraction,
            manifest.dropped,
        )?;
        if ds.entries.len() != manifest.entries {
            return Err(Error::format(&mpath, "entry count mismatch"));
        }
        Ok((ds, manifest))
    }
}
