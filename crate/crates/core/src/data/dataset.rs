//! Generated datasets: camera profiles, on-disk layout and the manifest.

use std::path::Path;

use super::{generate_scene, sparsify, DepthMap, Image, Scene, SparseDepthMap, SparsityPattern};
use crate::geometry::Camera;
use crate::{Error, Result};

/// Manifest file name inside a dataset directory.
pub const MANIFEST: &str = "manifest.txt";

/// Image size plus disjoint training and held-out focal lengths.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraProfile {
    pub name: &'static str,
    pub width: usize,
    pub height: usize,
    pub train_focals: &'static [f64],
    pub held_out_focals: &'static [f64],
}

impl CameraProfile {
    pub fn desk() -> Self {
        Self {
            name: "desk",
            width: 64,
            height: 48,
            train_focals: &[26.0, 34.0, 42.0, 50.0, 58.0],
            held_out_focals: &[30.0, 46.0],
        }
    }

    pub fn tiny() -> Self {
        Self {
            name: "tiny",
            width: 32,
            height: 24,
            train_focals: &[13.0, 17.0, 21.0, 25.0, 29.0],
            held_out_focals: &[15.0, 23.0],
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "tiny" => Ok(Self::tiny()),
            _ => Err(Error::Config(format!("unknown camera profile {name:?} (desk, tiny)"))),
        }
    }

    /// Camera with focal `f` for both axes and a centred principal point.
    pub fn camera(&self, f: f64) -> Camera {
        let (w, h) = (self.width as f64, self.height as f64);
        Camera { fx: f, fy: f, cx: w / 2.0, cy: h / 2.0, width: self.width, height: self.height }
    }

    /// The `index`-th camera of a split, cycling through its focal lengths.
    pub fn camera_for(&self, split: Split, index: usize) -> Camera {
        let focals = match split {
            Split::Train => self.train_focals,
            Split::Val => self.held_out_focals,
        };
        self.camera(focals[index % focals.len()])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    /// Held-out scenes whose cameras use focal lengths absent from training.
    Val,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            _ => Err(Error::Format(format!("unknown split {s:?}"))),
        }
    }
}

/// Parameters of a generated dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct GenSpec {
    pub train_scenes: usize,
    pub val_scenes: usize,
    pub seed: u64,
    pub profile: CameraProfile,
    pub keep: f64,
    pub pattern: SparsityPattern,
    /// Objects per scene beyond the ground plane.
    pub complexity: usize,
    pub far: f64,
}

impl GenSpec {
    pub fn new(train_scenes: usize, seed: u64, profile: CameraProfile) -> Self {
        Self {
            train_scenes,
            val_scenes: 0,
            seed,
            profile,
            keep: 0.2,
            pattern: SparsityPattern::Uniform,
            complexity: 4,
            far: 200.0,
        }
    }

    /// Seed of one scene; training and held-out scenes use disjoint ranges.
    pub fn scene_seed(&self, split: Split, index: usize) -> u64 {
        let base = match split {
            Split::Train => 0,
            Split::Val => 1 << 32,
        };
        self.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(base + index as u64)
    }

    pub fn entry(&self, split: Split, index: usize) -> Result<DatasetEntry> {
        let seed = self.scene_seed(split, index);
        let camera = self.profile.camera_for(split, index);
        let scene = generate_scene(seed, &camera, self.complexity, self.far);
        let sparse = sparsify(&scene.depth, self.pattern, self.keep, seed)?;
        Ok(DatasetEntry { name: format!("{}_{index:05}", split.as_str()), split, scene, sparse })
    }

    /// Training entries followed by held-out entries.
    pub fn generate(&self) -> Result<Vec<DatasetEntry>> {
        let train = (0..self.train_scenes).map(|i| self.entry(Split::Train, i));
        let val = (0..self.val_scenes).map(|i| self.entry(Split::Val, i));
        train.chain(val).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetEntry {
    pub name: String,
    pub split: Split,
    pub scene: Scene,
    pub sparse: SparseDepthMap,
}

fn file(dir: &Path, name: &str, ext: &str) -> std::path::PathBuf {
    dir.join(format!("{name}.{ext}"))
}

/// Writes every entry as `name.{ppm,depth,sparse,intrinsics}` plus the
/// manifest, which lists `name split` per line.
pub fn write_dataset(dir: &Path, entries: &[DatasetEntry]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = format!("GRINDATA v1 {}\n", entries.len());
    for e in entries {
        e.scene.image.save(&file(dir, &e.name, "ppm"))?;
        e.scene.depth.save(&file(dir, &e.name, "depth"))?;
        e.sparse.save(&file(dir, &e.name, "sparse"))?;
        e.scene.camera.save(&file(dir, &e.name, "intrinsics"))?;
        manifest.push_str(&format!("{} {}\n", e.name, e.split.as_str()));
    }
    let path = dir.join(MANIFEST);
    std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

/// Reads a dataset written by [`write_dataset`], checking that the files of
/// each entry agree on the image size.
pub fn load_dataset(dir: &Path) -> Result<Vec<DatasetEntry>> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let bad = |m: String| Error::Format(format!("{}: {m}", path.display()));
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    let count = match header.split_whitespace().collect::<Vec<_>>()[..] {
        ["GRINDATA", "v1", n] => n.parse::<usize>().map_err(|_| bad(format!("bad count {n:?}")))?,
        _ => return Err(bad(format!("unexpected header {header:?}"))),
    };
    let mut entries = Vec::with_capacity(count);
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let [name, split] = line.split_whitespace().collect::<Vec<_>>()[..] else {
            return Err(bad(format!("malformed entry {line:?}")));
        };
        let split: Split = split.parse()?;
        let image = Image::load(&file(dir, name, "ppm"))?;
        let depth = DepthMap::load(&file(dir, name, "depth"))?;
        let sparse = SparseDepthMap::load(&file(dir, name, "sparse"))?;
        let camera = Camera::load(&file(dir, name, "intrinsics"))?;
        let dims = [(image.width, image.height), (depth.width, depth.height), (sparse.width, sparse.height)];
        if dims.iter().any(|&d| d != (camera.width, camera.height)) {
            return Err(Error::Format(format!(
                "entry {name}: image, depth, sparse and intrinsics sizes disagree: {dims:?}"
            )));
        }
        entries.push(DatasetEntry { name: name.to_string(), split, scene: Scene { camera, depth, image }, sparse });
    }
    if entries.len() != count {
        return Err(bad(format!("header announces {count} entries, found {}", entries.len())));
    }
    Ok(entries)
}
