//! Images, depth maps, sparse depth records and their file formats.

mod augment;
mod dataset;
mod sampling;
mod scene;

use std::io::Write;
use std::path::Path;

use crate::{Error, Result};

pub use augment::{augment, AugmentSpec, Augmented, PointMap};
pub use dataset::{load_dataset, write_dataset, CameraProfile, DatasetEntry, GenSpec, Split, MANIFEST};
pub use sampling::{sample_global, sample_subset, sample_supervision};
pub use scene::{generate_scene, render, Material, Primitive, Scene, SceneSpec};

/// RGB image, row-major, channels interleaved, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * 3 || width == 0 || height == 0 {
            return Err(Error::Format(format!("image data of length {} for {width}×{height}", data.len())));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self { width, height, data: vec![value; width * height * 3] }
    }

    pub fn pixel(&self, u: usize, v: usize) -> [f64; 3] {
        let i = (v * self.width + u) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, u: usize, v: usize, rgb: [f64; 3]) {
        let i = (v * self.width + u) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// `H×W×3` array view for the model.
    pub fn to_array(&self) -> grin_autodiff::Array {
        grin_autodiff::Array::new([self.height, self.width, 3], self.data.clone()).expect("validated image")
    }

    /// Rounds every value to the nearest multiple of 1/255.
    pub fn quantize(&mut self) {
        for v in &mut self.data {
            *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
        }
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
        out
    }

    pub fn from_ppm(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("PPM: {m}"));
        let mut fields = Vec::new();
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad("truncated header"));
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header is not ASCII"))?.to_string());
        }
        pos += 1;
        if fields[0] != "P6" {
            return Err(bad("expected binary P6"));
        }
        let parse = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
        let (w, h, max) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
        if max != 255 {
            return Err(bad("only maxval 255 is supported"));
        }
        let body = bytes.get(pos..pos + w * h * 3).ok_or_else(|| bad("truncated pixel data"))?;
        Image::new(w, h, body.iter().map(|&b| b as f64 / 255.0).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_ppm())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_ppm(&read_file(path)?).map_err(|e| with_path(path, e))
    }
}

/// Dense metric depth; `0.0` marks an invalid pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height || width == 0 || height == 0 {
            return Err(Error::Format(format!("depth data of length {} for {width}×{height}", data.len())));
        }
        Ok(Self { width, height, data })
    }

    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.data[v * self.width + u]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = format!("DEPTHMAP v1 {} {}\n", self.width, self.height).into_bytes();
        for &v in &self.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("DEPTHMAP: {m}"));
        let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| bad("missing header line"))?;
        let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| bad("header is not ASCII"))?;
        let f: Vec<&str> = header.split_whitespace().collect();
        if f.len() != 4 || f[0] != "DEPTHMAP" || f[1] != "v1" {
            return Err(bad(&format!("unexpected header {header:?}")));
        }
        let w: usize = f[2].parse().map_err(|_| bad("bad width"))?;
        let h: usize = f[3].parse().map_err(|_| bad("bad height"))?;
        let body = &bytes[nl + 1..];
        if body.len() != 4 * w * h {
            return Err(bad(&format!("expected {} bytes of data, found {}", 4 * w * h, body.len())));
        }
        let data = body.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
        Self::new(w, h, data)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?).map_err(|e| with_path(path, e))
    }

    pub fn to_sparse(&self) -> SparseDepthMap {
        let records = (0..self.height)
            .flat_map(|v| (0..self.width).map(move |u| (u, v)))
            .filter_map(|(u, v)| {
                let d = self.get(u, v);
                (d > 0.0).then_some(SparseRecord { u, v, depth: d })
            })
            .collect();
        SparseDepthMap { width: self.width, height: self.height, records }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SparseRecord {
    pub u: usize,
    pub v: usize,
    pub depth: f64,
}

/// Unordered metric depth samples with no grid assumption.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseDepthMap {
    pub width: usize,
    pub height: usize,
    pub records: Vec<SparseRecord>,
}

impl SparseDepthMap {
    /// Checks bounds, positivity and uniqueness of records.
    pub fn validate(&self) -> Result<()> {
        let mut seen = vec![false; self.width * self.height];
        for r in &self.records {
            if r.u >= self.width || r.v >= self.height {
                return Err(Error::Format(format!(
                    "sparse record ({}, {}) outside {}×{}",
                    r.u, r.v, self.width, self.height
                )));
            }
            if !(r.depth > 0.0 && r.depth.is_finite()) {
                return Err(Error::Format(format!("sparse record ({}, {}) has depth {}", r.u, r.v, r.depth)));
            }
            let id = r.v * self.width + r.u;
            if std::mem::replace(&mut seen[id], true) {
                return Err(Error::Format(format!("duplicate sparse record at ({}, {})", r.u, r.v)));
            }
        }
        Ok(())
    }

    /// Flat pixel ids of all records in ascending order.
    pub fn pixel_ids(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self.records.iter().map(|r| r.v * self.width + r.u).collect();
        ids.sort_unstable();
        ids
    }

    /// Depth per flat pixel id, `0.0` where absent.
    pub fn to_dense(&self) -> DepthMap {
        let mut data = vec![0.0; self.width * self.height];
        for r in &self.records {
            data[r.v * self.width + r.u] = r.depth;
        }
        DepthMap { width: self.width, height: self.height, data }
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("SPARSE v1 {} {} {}\n", self.width, self.height, self.records.len());
        for r in &self.records {
            s.push_str(&format!("{} {} {}\n", r.u, r.v, r.depth));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: String| Error::Format(format!("SPARSE: {m}"));
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
        let f: Vec<&str> = header.split_whitespace().collect();
        if f.len() != 5 || f[0] != "SPARSE" || f[1] != "v1" {
            return Err(bad(format!("unexpected header {header:?}")));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("bad header field {s:?}")));
        let (width, height, count) = (num(f[2])?, num(f[3])?, num(f[4])?);
        let mut records = Vec::with_capacity(count);
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let p: Vec<&str> = line.split_whitespace().collect();
            let parsed = (p.len() == 3).then(|| (p[0].parse(), p[1].parse(), p[2].parse()));
            match parsed {
                Some((Ok(u), Ok(v), Ok(depth))) => records.push(SparseRecord { u, v, depth }),
                _ => return Err(bad(format!("malformed record on line {}: {line:?}", i + 2))),
            }
        }
        if records.len() != count {
            return Err(bad(format!("header announces {count} records, found {}", records.len())));
        }
        let map = Self { width, height, records };
        map.validate()?;
        Ok(map)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        let text = String::from_utf8(bytes).map_err(|_| with_path(path, Error::Format("SPARSE: not UTF-8".into())))?;
        Self::from_text(&text).map_err(|e| with_path(path, e))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SparsityPattern {
    /// Independent Bernoulli mask per pixel.
    Uniform,
    /// Every `⌈1/keep⌉`-th row, starting at row 0.
    Scanlines,
}

impl std::str::FromStr for SparsityPattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "scanlines" => Ok(Self::Scanlines),
            _ => Err(Error::Config(format!("unknown sparsity pattern {s:?} (uniform, scanlines)"))),
        }
    }
}

/// Keeps a subset of valid dense pixels as sparse records in row-major order.
pub fn sparsify(dense: &DepthMap, pattern: SparsityPattern, keep: f64, seed: u64) -> Result<SparseDepthMap> {
    use rand::Rng;
    if !(keep > 0.0 && keep <= 1.0) {
        return Err(Error::InvalidArgument(format!("keep fraction {keep} outside (0, 1]")));
    }
    let mut rng = crate::rng(seed, 0x5a);
    let stride = (1.0 / keep).ceil() as usize;
    let mut records = Vec::new();
    for v in 0..dense.height {
        for u in 0..dense.width {
            let kept = match pattern {
                SparsityPattern::Uniform => keep >= 1.0 || rng.random::<f64>() < keep,
                SparsityPattern::Scanlines => v % stride == 0,
            };
            let depth = dense.get(u, v);
            if kept && depth > 0.0 {
                records.push(SparseRecord { u, v, depth });
            }
        }
    }
    Ok(SparseDepthMap { width: dense.width, height: dense.height, records })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn with_path(path: &Path, e: Error) -> Error {
    match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    }
}

#[cfg(test)]
mod tests;
