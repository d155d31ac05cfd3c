//! Joint resize, crop/pad, flip and colour jitter of image, depth and camera.

use rand::Rng;

use super::{DepthMap, Image, Scene, SparseDepthMap, SparseRecord};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentSpec {
    /// Range of resize factors.
    pub scale: (f64, f64),
    /// Output `(width, height)`; larger inputs are cropped, smaller padded.
    pub crop: Option<(usize, usize)>,
    pub flip_prob: f64,
    /// Relative amplitude of the brightness factor.
    pub brightness: f64,
    /// Relative amplitude of the contrast factor.
    pub contrast: f64,
}

impl AugmentSpec {
    pub fn identity() -> Self {
        Self { scale: (1.0, 1.0), crop: None, flip_prob: 0.0, brightness: 0.0, contrast: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.scale;
        let ok = lo > 0.0
            && lo <= hi
            && hi.is_finite()
            && (0.0..=1.0).contains(&self.flip_prob)
            && (0.0..1.0).contains(&self.brightness)
            && (0.0..1.0).contains(&self.contrast)
            && self.crop.is_none_or(|(w, h)| w > 0 && h > 0);
        if !ok {
            return Err(Error::Config(format!("invalid augmentation {self:?}")));
        }
        Ok(())
    }
}

/// Continuous pixel mapping applied by an augmentation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointMap {
    pub scale: f64,
    /// Top-left corner of the output window in resized coordinates.
    pub offset: (f64, f64),
    /// Output width when mirrored horizontally.
    pub flip_width: Option<usize>,
}

impl PointMap {
    pub fn map_point(&self, u: f64, v: f64) -> (f64, f64) {
        let (mut x, y) = (u * self.scale - self.offset.0, v * self.scale - self.offset.1);
        if let Some(w) = self.flip_width {
            x = (w - 1) as f64 - x;
        }
        (x, y)
    }

    /// Source coordinate of an output pixel.
    fn inverse(&self, x: f64, y: f64) -> (f64, f64) {
        let x = match self.flip_width {
            Some(w) => (w - 1) as f64 - x,
            None => x,
        };
        ((x + self.offset.0) / self.scale, (y + self.offset.1) / self.scale)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Augmented {
    pub scene: Scene,
    pub sparse: SparseDepthMap,
    /// `false` for pixels that come from padding.
    pub valid: Vec<bool>,
    pub map: PointMap,
}

fn bilinear(img: &Image, x: f64, y: f64) -> [f64; 3] {
    let x = x.clamp(0.0, (img.width - 1) as f64);
    let y = y.clamp(0.0, (img.height - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(img.width - 1), (y0 + 1).min(img.height - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let (a, b, c, d) = (img.pixel(x0, y0), img.pixel(x1, y0), img.pixel(x0, y1), img.pixel(x1, y1));
    std::array::from_fn(|k| (a[k] * (1.0 - fx) + b[k] * fx) * (1.0 - fy) + (c[k] * (1.0 - fx) + d[k] * fx) * fy)
}

/// Applies a random augmentation drawn from `spec` with `seed`.
///
/// Sparse records follow the same continuous mapping, are rounded to the
/// nearest output pixel and dropped when outside; records that land on the
/// same pixel are all dropped, so the result does not depend on record order.
pub fn augment(scene: &Scene, sparse: &SparseDepthMap, spec: &AugmentSpec, seed: u64) -> Result<Augmented> {
    spec.validate()?;
    let mut rng = crate::rng(seed, 0xa6);
    let s = if spec.scale.0 == spec.scale.1 { spec.scale.0 } else { rng.random_range(spec.scale.0..=spec.scale.1) };
    let cam = scene.camera;
    let resized = cam.resize_by(s);
    let (rw, rh) = (resized.width, resized.height);
    let (ow, oh) = spec.crop.unwrap_or((rw, rh));
    let mut offset_along = |size: usize, out: usize| -> f64 {
        if size >= out {
            rng.random_range(0..=size - out) as f64
        } else {
            -(rng.random_range(0..=out - size) as f64)
        }
    };
    let offset = (offset_along(rw, ow), offset_along(rh, oh));
    let flip = spec.flip_prob > 0.0 && rng.random_bool(spec.flip_prob);
    let brightness =
        if spec.brightness > 0.0 { 1.0 + rng.random_range(-spec.brightness..spec.brightness) } else { 1.0 };
    let contrast = if spec.contrast > 0.0 { 1.0 + rng.random_range(-spec.contrast..spec.contrast) } else { 1.0 };
    let map = PointMap { scale: s, offset, flip_width: flip.then_some(ow) };

    let mut camera = resized.cropped(offset.0 as isize, offset.1 as isize, ow, oh);
    if flip {
        camera = camera.flipped();
    }
    let mut image = Image::filled(ow, oh, 0.0);
    let mut depth = vec![0.0; ow * oh];
    let mut valid = vec![false; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let (rx, ry) = {
                let fx = if flip { (ow - 1 - x) as f64 } else { x as f64 };
                (fx + offset.0, y as f64 + offset.1)
            };
            if rx < 0.0 || ry < 0.0 || rx >= rw as f64 || ry >= rh as f64 {
                continue;
            }
            let (sx, sy) = map.inverse(x as f64, y as f64);
            image.set_pixel(x, y, bilinear(&scene.image, sx, sy));
            let (nu, nv) = (sx.round() as usize, sy.round() as usize);
            depth[y * ow + x] = scene.depth.get(nu.min(cam.width - 1), nv.min(cam.height - 1));
            valid[y * ow + x] = true;
        }
    }
    if brightness != 1.0 || contrast != 1.0 {
        let n = valid.iter().filter(|&&v| v).count().max(1) as f64;
        let mean =
            image.data.chunks(3).zip(&valid).filter(|(_, &v)| v).map(|(p, _)| p.iter().sum::<f64>() / 3.0).sum::<f64>()
                / n;
        for (p, &ok) in image.data.chunks_mut(3).zip(&valid) {
            if ok {
                for c in p {
                    *c = (((*c - mean) * contrast + mean) * brightness).clamp(0.0, 1.0);
                }
            }
        }
    }

    let mut hits = vec![0u32; ow * oh];
    let mapped: Vec<Option<(usize, f64)>> = sparse
        .records
        .iter()
        .map(|r| {
            let (x, y) = map.map_point(r.u as f64, r.v as f64);
            let (x, y) = (x.round(), y.round());
            if x < 0.0 || y < 0.0 || x >= ow as f64 || y >= oh as f64 {
                return None;
            }
            let id = y as usize * ow + x as usize;
            valid[id].then(|| {
                hits[id] += 1;
                (id, r.depth)
            })
        })
        .collect();
    let records = mapped
        .into_iter()
        .flatten()
        .filter(|&(id, _)| hits[id] == 1)
        .map(|(id, depth)| SparseRecord { u: id % ow, v: id / ow, depth })
        .collect();

    Ok(Augmented {
        scene: Scene { camera, depth: DepthMap { width: ow, height: oh, data: depth }, image },
        sparse: SparseDepthMap { width: ow, height: oh, records },
        valid,
        map,
    })
}
