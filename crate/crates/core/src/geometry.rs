//! Pinhole cameras, viewing rays and Fourier geometric embeddings.

use std::f64::consts::PI;
use std::path::Path;

use crate::{Error, Result};

/// Pinhole intrinsics plus image resolution. The camera centre is the origin.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let cam = Self { fx, fy, cx, cy, width, height };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 || self.width == 0 || self.height == 0 {
            return Err(Error::InvalidCamera(format!("{self:?}")));
        }
        Ok(())
    }

    /// Relative-depth fallback: `fx = cx = W/2`, `fy = cy = H/2`.
    pub fn default_for(width: usize, height: usize) -> Self {
        let (w, h) = (width as f64 / 2.0, height as f64 / 2.0);
        Self { fx: w, fy: h, cx: w, cy: h, width, height }
    }

    /// Scales intrinsics and resolution together. Resolution is rounded to
    /// the nearest pixel and never drops below one.
    pub fn resize_by(&self, s: f64) -> Self {
        let scale = |n: usize| ((n as f64 * s).round() as usize).max(1);
        Self {
            fx: self.fx * s,
            fy: self.fy * s,
            cx: self.cx * s,
            cy: self.cy * s,
            width: scale(self.width),
            height: scale(self.height),
        }
    }

    /// Camera for a crop whose top-left corner sits at `(u0, v0)`. Negative
    /// offsets describe padding.
    pub fn cropped(&self, u0: isize, v0: isize, width: usize, height: usize) -> Self {
        Self { cx: self.cx - u0 as f64, cy: self.cy - v0 as f64, width, height, ..*self }
    }

    /// Camera of the horizontally mirrored image.
    pub fn flipped(&self) -> Self {
        Self { cx: (self.width - 1) as f64 - self.cx, ..*self }
    }

    /// `K⁻¹[u, v, 1]ᵀ` without bounds checking, for continuous coordinates.
    pub fn ray_unchecked(&self, u: f64, v: f64) -> [f64; 3] {
        [(u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0]
    }

    pub fn to_text(&self) -> String {
        format!("{} {} {} {} {} {}\n", self.fx, self.fy, self.cx, self.cy, self.width, self.height)
    }

    /// Parses a single `fx fy cx cy width height` line.
    pub fn from_text(text: &str) -> Result<Self> {
        let fields: Vec<&str> = text.split_whitespace().collect();
        let bad = || Error::Format(format!("intrinsics: expected 'fx fy cx cy width height', got {text:?}"));
        if fields.len() != 6 {
            return Err(bad());
        }
        let f = |i: usize| fields[i].parse::<f64>().map_err(|_| bad());
        let n = |i: usize| fields[i].parse::<usize>().map_err(|_| bad());
        Self::new(f(0)?, f(1)?, f(2)?, f(3)?, n(4)?, n(5)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Viewing ray `K⁻¹[u, v, 1]ᵀ` of an integer pixel centre.
pub fn pixel_ray(cam: &Camera, u: usize, v: usize) -> Result<[f64; 3]> {
    if u >= cam.width || v >= cam.height {
        return Err(Error::PixelOutOfBounds { u, v, width: cam.width, height: cam.height });
    }
    Ok(cam.ray_unchecked(u as f64, v as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FrequencySpacing {
    Linear,
    Log,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EncodingConfig {
    pub bands_origin: usize,
    pub bands_ray: usize,
    pub max_frequency: f64,
    pub spacing: FrequencySpacing,
    /// Scale rays to unit length before encoding.
    pub normalize_rays: bool,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        Self {
            bands_origin: 16,
            bands_ray: 16,
            max_frequency: 2.0,
            spacing: FrequencySpacing::Linear,
            normalize_rays: false,
        }
    }
}

impl EncodingConfig {
    /// Embedding length `6(N_o + N_r + 2)`.
    pub fn dim(&self) -> usize {
        6 * (self.bands_origin + self.bands_ray + 2)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.max_frequency > 0.0 && self.max_frequency.is_finite()) {
            return Err(Error::Config(format!("max_frequency must be positive, got {}", self.max_frequency)));
        }
        Ok(())
    }
}

/// The `bands + 1` frequencies spanning `[1, max_frequency]`.
pub fn frequencies(bands: usize, max_frequency: f64, spacing: FrequencySpacing) -> Vec<f64> {
    if bands == 0 {
        return vec![max_frequency];
    }
    (0..=bands)
        .map(|i| {
            let a = i as f64 / bands as f64;
            match spacing {
                FrequencySpacing::Linear => 1.0 + a * (max_frequency - 1.0),
                FrequencySpacing::Log => max_frequency.powf(a),
            }
        })
        .collect()
}

/// Appends `sin(π f x_c), cos(π f x_c)` per frequency (major) and component
/// (minor), all sines of a frequency before its cosines.
fn encode_into(out: &mut Vec<f64>, x: &[f64; 3], freqs: &[f64]) {
    for &f in freqs {
        let (s, c): (Vec<f64>, Vec<f64>) = x.iter().map(|&xc| (PI * f * xc).sin_cos()).unzip();
        out.extend(s);
        out.extend(c);
    }
}

/// Fourier encoding of length `6(bands + 1)`.
pub fn fourier_encode(x: &[f64; 3], bands: usize, max_frequency: f64, spacing: FrequencySpacing) -> Vec<f64> {
    let mut out = Vec::with_capacity(6 * (bands + 1));
    encode_into(&mut out, x, &frequencies(bands, max_frequency, spacing));
    out
}

/// Precomputed frequencies and origin block for repeated embedding queries.
#[derive(Clone, Debug)]
pub struct GeometryEncoder {
    cfg: EncodingConfig,
    ray_freqs: Vec<f64>,
    origin_block: Vec<f64>,
}

impl GeometryEncoder {
    pub fn new(cfg: EncodingConfig) -> Self {
        let origin_block = fourier_encode(&[0.0; 3], cfg.bands_origin, cfg.max_frequency, cfg.spacing);
        let ray_freqs = frequencies(cfg.bands_ray, cfg.max_frequency, cfg.spacing);
        Self { cfg, ray_freqs, origin_block }
    }

    pub fn config(&self) -> &EncodingConfig {
        &self.cfg
    }

    pub fn dim(&self) -> usize {
        self.cfg.dim()
    }

    fn push_ray(&self, out: &mut Vec<f64>, ray: [f64; 3]) {
        let ray = if self.cfg.normalize_rays {
            let n = ray.iter().map(|r| r * r).sum::<f64>().sqrt();
            ray.map(|r| r / n)
        } else {
            ray
        };
        out.extend_from_slice(&self.origin_block);
        encode_into(out, &ray, &self.ray_freqs);
    }

    /// `ℰ(origin) ⊕ ℰ(ray)` for pixel `(u, v)`.
    pub fn embed(&self, cam: &Camera, u: usize, v: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.dim());
        self.push_ray(&mut out, pixel_ray(cam, u, v)?);
        Ok(out)
    }

    /// Embeddings for the given flat pixel ids (`v·W + u`), concatenated row by row.
    pub fn embed_pixels(&self, cam: &Camera, ids: &[usize]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(ids.len() * self.dim());
        for &id in ids {
            let (u, v) = (id % cam.width, id / cam.width);
            self.push_ray(&mut out, pixel_ray(cam, u, v)?);
        }
        Ok(out)
    }

    /// Embeddings at continuous pixel coordinates `(u, v)`, without bounds checks.
    pub fn embed_coords(&self, cam: &Camera, coords: &[(f64, f64)]) -> Vec<f64> {
        let mut out = Vec::with_capacity(coords.len() * self.dim());
        for &(u, v) in coords {
            self.push_ray(&mut out, cam.ray_unchecked(u, v));
        }
        out
    }

    /// Embeddings of every pixel in row-major order, concatenated.
    pub fn embed_grid(&self, cam: &Camera) -> Vec<f64> {
        let mut out = Vec::with_capacity(cam.width * cam.height * self.dim());
        for v in 0..cam.height {
            for u in 0..cam.width {
                self.push_ray(&mut out, cam.ray_unchecked(u as f64, v as f64));
            }
        }
        out
    }
}

/// Geometric embedding of one pixel.
pub fn geom_embedding(cam: &Camera, u: usize, v: usize, cfg: &EncodingConfig) -> Result<Vec<f64>> {
    GeometryEncoder::new(*cfg).embed(cam, u, v)
}

/// Per-pixel embeddings in row-major pixel order.
pub fn grid_embeddings(cam: &Camera, cfg: &EncodingConfig) -> Vec<Vec<f64>> {
    let enc = GeometryEncoder::new(*cfg);
    enc.embed_grid(cam).chunks(enc.dim()).map(<[f64]>::to_vec).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cam(fx: f64, fy: f64, cx: f64, cy: f64, w: usize, h: usize) -> Camera {
        Camera::new(fx, fy, cx, cy, w, h).unwrap()
    }

    #[test]
    fn identity_intrinsics_ray() {
        assert_eq!(pixel_ray(&cam(1.0, 1.0, 0.0, 0.0, 4, 4), 0, 0).unwrap(), [0.0, 0.0, 1.0]);
    }

    #[test]
    fn focal_two_ray() {
        assert_eq!(pixel_ray(&cam(2.0, 2.0, 0.0, 0.0, 4, 4), 2, 2).unwrap(), [1.0, 1.0, 1.0]);
    }

    #[test]
    fn out_of_bounds_pixel_is_rejected() {
        let c = cam(1.0, 1.0, 0.0, 0.0, 4, 3);
        assert!(matches!(pixel_ray(&c, 4, 0), Err(Error::PixelOutOfBounds { .. })));
        assert!(pixel_ray(&c, 3, 3).is_err());
    }

    #[test]
    fn invalid_cameras_are_rejected() {
        assert!(Camera::new(0.0, 1.0, 0.0, 0.0, 1, 1).is_err());
        assert!(Camera::new(1.0, 1.0, 0.0, 0.0, 0, 1).is_err());
    }

    #[test]
    fn resized_camera_keeps_rays() {
        let c = cam(50.0, 40.0, 10.0, 7.0, 20, 15);
        let r = c.resize_by(2.0);
        assert_eq!(pixel_ray(&r, 6, 8).unwrap(), pixel_ray(&c, 3, 4).unwrap());
    }

    #[test]
    fn encode_zero() {
        let e = fourier_encode(&[0.0; 3], 3, 2.0, FrequencySpacing::Linear);
        assert_eq!(e.len(), 24);
        for chunk in e.chunks(6) {
            assert_eq!(&chunk[..3], &[0.0; 3]);
            assert_eq!(&chunk[3..], &[1.0; 3]);
        }
    }

    #[test]
    fn encode_single_band() {
        let e = fourier_encode(&[1.0, 0.0, 0.0], 0, 1.0, FrequencySpacing::Linear);
        let expected = [0.0, 0.0, 0.0, -1.0, 1.0, 1.0];
        for (a, b) in e.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn frequency_spacings_share_endpoints() {
        let lin = frequencies(4, 2.0, FrequencySpacing::Linear);
        let log = frequencies(4, 2.0, FrequencySpacing::Log);
        assert_eq!(lin, vec![1.0, 1.25, 1.5, 1.75, 2.0]);
        assert_eq!(log[0], 1.0);
        assert!((log[4] - 2.0).abs() < 1e-15);
        assert!((log[2] - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn default_length_is_204() {
        let cfg = EncodingConfig::default();
        assert_eq!(cfg.dim(), 204);
        let c = cam(3.0, 3.0, 1.5, 1.0, 4, 3);
        assert_eq!(geom_embedding(&c, 1, 2, &cfg).unwrap().len(), 204);
    }

    #[test]
    fn origin_block_is_constant() {
        let cfg = EncodingConfig::default();
        let c = cam(3.0, 3.0, 1.5, 1.0, 4, 3);
        let origin = fourier_encode(&[0.0; 3], cfg.bands_origin, cfg.max_frequency, cfg.spacing);
        for (u, v) in [(0, 0), (3, 2), (1, 1)] {
            let e = geom_embedding(&c, u, v, &cfg).unwrap();
            assert_eq!(&e[..origin.len()], &origin[..]);
        }
    }

    #[test]
    fn focal_length_changes_ray_block() {
        let cfg = EncodingConfig::default();
        let a = geom_embedding(&cam(3.0, 3.0, 1.5, 1.0, 4, 3), 0, 0, &cfg).unwrap();
        let b = geom_embedding(&cam(4.0, 3.0, 1.5, 1.0, 4, 3), 0, 0, &cfg).unwrap();
        let split = 6 * (cfg.bands_origin + 1);
        assert_eq!(a[..split], b[..split]);
        assert_ne!(a[split..], b[split..]);
    }

    #[test]
    fn grid_matches_per_pixel_calls() {
        let cfg = EncodingConfig::default();
        let c = cam(3.0, 2.5, 1.5, 1.0, 4, 3);
        let grid = grid_embeddings(&c, &cfg);
        assert_eq!(grid.len(), 12);
        for v in 0..3 {
            for u in 0..4 {
                assert_eq!(grid[v * 4 + u], geom_embedding(&c, u, v, &cfg).unwrap());
            }
        }
        let one = cam(1.0, 1.0, 0.0, 0.0, 1, 1);
        assert_eq!(grid_embeddings(&one, &cfg), vec![geom_embedding(&one, 0, 0, &cfg).unwrap()]);
    }

    #[test]
    fn embed_pixels_follows_query_order() {
        let enc = GeometryEncoder::new(EncodingConfig::default());
        let c = cam(3.0, 2.5, 1.5, 1.0, 4, 3);
        let a = enc.embed_pixels(&c, &[5, 0, 11]).unwrap();
        let b = enc.embed_pixels(&c, &[11, 5, 0]).unwrap();
        let d = enc.dim();
        assert_eq!(a[..d], b[d..2 * d]);
        assert_eq!(a[d..2 * d], b[2 * d..]);
        assert_eq!(a[2 * d..], b[..d]);
    }

    #[test]
    fn normalized_ray_is_encoded_at_unit_length() {
        let cfg = EncodingConfig { normalize_rays: true, bands_ray: 0, max_frequency: 1.0, ..Default::default() };
        let c = cam(1.0, 1.0, 0.0, 0.0, 2, 2);
        let e = geom_embedding(&c, 1, 1, &cfg).unwrap();
        let ray = &e[6 * 17..];
        let x = 1.0 / 3f64.sqrt();
        assert!((ray[0] - (PI * x).sin()).abs() < 1e-14);
    }

    #[test]
    fn desk_grid_is_injective() {
        let cfg = EncodingConfig::default();
        let c = cam(60.0, 60.0, 31.5, 23.5, 64, 48);
        let grid = grid_embeddings(&c, &cfg);
        let mut keys: Vec<Vec<u64>> = grid.iter().map(|e| e.iter().map(|v| v.to_bits()).collect()).collect();
        keys.sort();
        keys.dedup();
        assert_eq!(keys.len(), 64 * 48);
    }

    #[test]
    fn intrinsics_text_roundtrip() {
        let c = cam(52.5, 50.0, 31.5, 23.5, 64, 48);
        assert_eq!(Camera::from_text(&c.to_text()).unwrap(), c);
        assert!(Camera::from_text("1 2 3").is_err());
        assert!(Camera::from_text("1 1 0 0 a 2").is_err());
    }

    #[test]
    fn default_intrinsics_are_half_resolution() {
        let c = Camera::default_for(640, 480);
        assert_eq!((c.fx, c.cx, c.fy, c.cy), (320.0, 320.0, 240.0, 240.0));
    }

    proptest! {
        #[test]
        fn length_and_range_laws(
            bo in 0usize..6, br in 0usize..6, maxf in 0.5f64..4.0,
            fx in 5.0f64..100.0, u in 0usize..16, v in 0usize..12, log in any::<bool>(),
        ) {
            let cfg = EncodingConfig {
                bands_origin: bo, bands_ray: br, max_frequency: maxf,
                spacing: if log { FrequencySpacing::Log } else { FrequencySpacing::Linear },
                normalize_rays: false,
            };
            let c = Camera::new(fx, fx * 0.9, 7.5, 5.5, 16, 12).unwrap();
            let e = geom_embedding(&c, u, v, &cfg).unwrap();
            prop_assert_eq!(e.len(), 6 * (bo + br + 2));
            prop_assert!(e.iter().all(|x| (-1.0..=1.0).contains(x)));
        }

        #[test]
        fn resolution_consistency(s in 1usize..5, u in 0usize..16, v in 0usize..12, fx in 5.0f64..100.0) {
            let cfg = EncodingConfig::default();
            let c = Camera::new(fx, fx * 1.1, 7.5, 5.5, 16, 12).unwrap();
            let r = c.resize_by(s as f64);
            let a = geom_embedding(&c, u, v, &cfg).unwrap();
            let b = geom_embedding(&r, s * u, s * v, &cfg).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }
    }
}
