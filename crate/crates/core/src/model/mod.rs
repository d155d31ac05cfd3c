//! The GRIN denoiser: conditioning encoders, token projections and stacked
//! read/compute/write blocks over a fixed latent array.

pub mod checkpoint;
pub mod flops;
mod layers;
mod params;

use std::f64::consts::PI;

use grin_autodiff::{Array, PadMode, PatchSpec, Tape, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::geometry::{Camera, EncodingConfig, GeometryEncoder};
use crate::{Error, Result};

pub use layers::{Attention, Conv, CrossSublayer, FeedForward, FfSublayer, LayerNorm, Linear, SelfSublayer};
pub use params::{Bound, Param, ParamId, ParamStore};

/// Frequencies `2^k π` used for the timestep features.
pub const TIME_FREQUENCIES: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub latent_count: usize,
    pub latent_width: usize,
    pub token_width: usize,
    pub blocks: usize,
    pub block_depth: usize,
    pub read_write_heads: usize,
    pub latent_heads: usize,
    pub ff_mult: usize,
    pub local_kernel: usize,
    pub local_channels: usize,
    pub global_scales: usize,
    /// Channels of every pyramid level; the concatenated width is `(S+1)·this`.
    pub global_channels: usize,
    /// Downsampling of the finest pyramid level; a power of two.
    pub global_downsample: usize,
    pub encoding: EncodingConfig,
    /// Feed image features into local tokens.
    pub local_image: bool,
    /// Feed geometric embeddings into local tokens.
    pub local_geometry: bool,
    /// Build global tokens at all.
    pub global: bool,
    pub self_condition: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// Full-size architecture.
    pub fn large() -> Self {
        Self {
            latent_count: 256,
            latent_width: 1024,
            token_width: 512,
            blocks: 4,
            block_depth: 6,
            read_write_heads: 16,
            latent_heads: 16,
            ff_mult: 4,
            local_kernel: 9,
            local_channels: 128,
            global_scales: 3,
            global_channels: 240,
            global_downsample: 4,
            encoding: EncodingConfig::default(),
            local_image: true,
            local_geometry: true,
            global: true,
            self_condition: false,
        }
    }

    /// CPU-scale profile.
    pub fn desk() -> Self {
        Self {
            latent_count: 32,
            latent_width: 128,
            token_width: 64,
            blocks: 2,
            block_depth: 2,
            read_write_heads: 4,
            latent_heads: 4,
            ff_mult: 2,
            local_kernel: 5,
            local_channels: 16,
            global_scales: 2,
            global_channels: 16,
            global_downsample: 4,
            ..Self::large()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("latent_count", self.latent_count),
            ("latent_width", self.latent_width),
            ("token_width", self.token_width),
            ("blocks", self.blocks),
            ("read_write_heads", self.read_write_heads),
            ("latent_heads", self.latent_heads),
            ("ff_mult", self.ff_mult),
            ("local_kernel", self.local_kernel),
            ("local_channels", self.local_channels),
            ("global_channels", self.global_channels),
            ("global_downsample", self.global_downsample),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be positive")));
            }
        }
        if self.local_kernel.is_multiple_of(2) {
            return Err(Error::Config(format!("model.local_kernel must be odd, got {}", self.local_kernel)));
        }
        if !self.global_downsample.is_power_of_two() {
            return Err(Error::Config(format!(
                "model.global_downsample must be a power of two, got {}",
                self.global_downsample
            )));
        }
        for (name, heads) in [("read_write_heads", self.read_write_heads), ("latent_heads", self.latent_heads)] {
            if !self.latent_width.is_multiple_of(heads) {
                return Err(Error::Config(format!(
                    "model.latent_width {} not divisible by model.{name} {heads}",
                    self.latent_width
                )));
            }
        }
        if self.self_condition {
            return Err(Error::Config("model.self_condition is not supported".into()));
        }
        self.encoding.validate()
    }

    /// Width of the concatenated local input `d ⊕ f ⊕ g`.
    pub fn local_in_width(&self) -> usize {
        1 + if self.local_image { self.local_channels } else { 0 }
            + if self.local_geometry { self.encoding.dim() } else { 0 }
    }

    pub fn global_feature_width(&self) -> usize {
        (self.global_scales + 1) * self.global_channels
    }

    /// Global feature grid for an `height×width` image, after discarding
    /// cells that lie entirely in padding.
    pub fn global_grid(&self, height: usize, width: usize) -> (usize, usize) {
        let d = self.global_downsample;
        (height.div_ceil(d), width.div_ceil(d))
    }

    pub fn global_token_count(&self, height: usize, width: usize) -> usize {
        if !self.global {
            return 0;
        }
        let (h, w) = self.global_grid(height, width);
        h * w
    }
}

/// One read/compute/write block.
#[derive(Clone, Debug)]
pub struct RinBlock {
    pub read: CrossSublayer,
    pub read_ff: FfSublayer,
    pub compute: Vec<(SelfSublayer, FfSublayer)>,
    pub write: CrossSublayer,
    pub write_ff: FfSublayer,
}

impl RinBlock {
    fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, cfg: &ModelConfig) -> Result<Self> {
        let (dz, v) = (cfg.latent_width, cfg.token_width);
        let compute = (0..cfg.block_depth)
            .map(|i| {
                Ok((
                    SelfSublayer::new(store, rng, &format!("{name}.compute{i}"), dz, cfg.latent_heads)?,
                    FfSublayer::new(store, rng, &format!("{name}.compute{i}.ff"), dz, cfg.ff_mult),
                ))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            read: CrossSublayer::new(store, rng, &format!("{name}.read"), dz, v, dz, cfg.read_write_heads)?,
            read_ff: FfSublayer::new(store, rng, &format!("{name}.read.ff"), dz, cfg.ff_mult),
            compute,
            write: CrossSublayer::new(store, rng, &format!("{name}.write"), v, dz, dz, cfg.read_write_heads)?,
            write_ff: FfSublayer::new(store, rng, &format!("{name}.write.ff"), v, cfg.ff_mult),
        })
    }

    /// Returns updated `(X, Z)`. `t_embed` (`[1, D_z]`) is added to `Z` first.
    ///
    /// FLOPs are labelled so that `read` and `write` hold exactly the work
    /// that scales with the token count; projections and feed-forwards
    /// applied to the latents alone count as `compute`.
    pub fn forward<'t>(
        &self,
        p: &Bound<'t>,
        x: &Var<'t>,
        z: &Var<'t>,
        t_embed: &Var<'t>,
    ) -> Result<(Var<'t>, Var<'t>)> {
        let tape = x.tape();
        tape.set_stage("read");
        let mut z = z.add(t_embed)?;
        z = self.read.forward_staged(p, &z, x, "compute", "read")?;
        tape.set_stage("compute");
        z = self.read_ff.forward(p, &z)?;
        for (attn, ff) in &self.compute {
            z = attn.forward(p, &z)?;
            z = ff.forward(p, &z)?;
        }
        tape.set_stage("write");
        let x = self.write.forward_staged(p, x, &z, "write", "compute")?;
        let x = self.write_ff.forward(p, &x)?;
        Ok((x, z))
    }
}

#[derive(Clone, Debug)]
struct GlobalEncoder {
    stem: Vec<Conv>,
    scales: Vec<Conv>,
    proj: Linear,
}

/// The full denoising network with its parameters.
#[derive(Clone, Debug)]
pub struct GrinModel {
    cfg: ModelConfig,
    store: ParamStore,
    geometry: GeometryEncoder,
    local_conv: Option<Conv>,
    local_proj: Linear,
    global: Option<GlobalEncoder>,
    time_in: Linear,
    time_out: Linear,
    latents: ParamId,
    blocks: Vec<RinBlock>,
    head_norm: LayerNorm,
    head: Linear,
}

impl GrinModel {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let s = &mut store;
        let r = &mut rng;
        let local_conv = cfg.local_image.then(|| {
            Conv::new(s, r, "local.conv", 3, cfg.local_channels, PatchSpec::same(cfg.local_kernel, PadMode::Reflect))
        });
        let local_proj = Linear::new(s, r, "local.proj", cfg.local_in_width(), cfg.token_width);
        let global = cfg.global.then(|| {
            let down = PatchSpec { kernel: 3, stride: 2, pad: 1, mode: PadMode::Zero };
            let c = cfg.global_channels;
            let stem_layers = cfg.global_downsample.trailing_zeros() as usize;
            let stem = (0..stem_layers)
                .map(|i| Conv::new(s, r, &format!("global.stem{i}"), if i == 0 { 3 } else { c }, c, down))
                .collect();
            let scales = (0..cfg.global_scales)
                .map(|i| Conv::new(s, r, &format!("global.scale{}", i + 1), c, c, down))
                .collect();
            let proj =
                Linear::new(s, r, "global.proj", cfg.global_feature_width() + cfg.encoding.dim(), cfg.token_width);
            GlobalEncoder { stem, scales, proj }
        });
        let time_in = Linear::new(s, r, "time.in", 2 * TIME_FREQUENCIES, cfg.latent_width);
        let time_out = Linear::new(s, r, "time.out", cfg.latent_width, cfg.latent_width);
        let latents = s.normal(r, "latents".into(), &[cfg.latent_count, cfg.latent_width], 1.0);
        let blocks = (0..cfg.blocks).map(|i| RinBlock::new(s, r, &format!("block{i}"), &cfg)).collect::<Result<_>>()?;
        let head_norm = LayerNorm::new(s, "head.norm", cfg.token_width);
        let head = Linear::new(s, r, "head.proj", cfg.token_width, 1);
        Ok(Self {
            geometry: GeometryEncoder::new(cfg.encoding),
            cfg,
            store,
            local_conv,
            local_proj,
            global,
            time_in,
            time_out,
            latents,
            blocks,
            head_norm,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn geometry(&self) -> &GeometryEncoder {
        &self.geometry
    }

    pub fn blocks(&self) -> &[RinBlock] {
        &self.blocks
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> Bound<'t> {
        self.store.bind(tape)
    }

    /// Local image features at flat pixel ids (`v·W + u`), as `[P, C_l]`.
    pub fn local_features<'t>(&self, p: &Bound<'t>, image: &Var<'t>, pixels: &[usize]) -> Result<Option<Var<'t>>> {
        let Some(conv) = &self.local_conv else { return Ok(None) };
        image.tape().set_stage("local");
        let w = image.shape()[1];
        let positions: Vec<(usize, usize)> = pixels.iter().map(|&i| (i / w, i % w)).collect();
        Ok(Some(conv.forward_at(p, image, &positions)?))
    }

    /// Local image features for every pixel in row-major order, `[HW, C_l]`.
    pub fn local_features_dense<'t>(&self, p: &Bound<'t>, image: &Var<'t>) -> Result<Option<Var<'t>>> {
        let Some(conv) = &self.local_conv else { return Ok(None) };
        image.tape().set_stage("local");
        let out = conv.forward(p, image)?;
        let (h, w, c) = (out.shape()[0], out.shape()[1], out.shape()[2]);
        Ok(Some(out.reshape([h * w, c])?))
    }

    /// Geometric embeddings at flat pixel ids, `[P, D]`; `None` when disabled.
    pub fn local_geometry(&self, cam: &Camera, pixels: &[usize]) -> Result<Option<Array>> {
        if !self.cfg.local_geometry {
            return Ok(None);
        }
        let data = self.geometry.embed_pixels(cam, pixels)?;
        Ok(Some(Array::new([pixels.len(), self.geometry.dim()], data)?))
    }

    /// Geometric embeddings of every pixel, `[HW, D]`.
    pub fn local_geometry_dense(&self, cam: &Camera) -> Result<Option<Array>> {
        if !self.cfg.local_geometry {
            return Ok(None);
        }
        let data = self.geometry.embed_grid(cam);
        Ok(Some(Array::new([cam.width * cam.height, self.geometry.dim()], data)?))
    }

    /// Projects `depth ⊕ features ⊕ geometry` per row to token width.
    pub fn local_tokens<'t>(
        &self,
        p: &Bound<'t>,
        depth: &Var<'t>,
        features: Option<&Var<'t>>,
        geometry: Option<&Var<'t>>,
    ) -> Result<Var<'t>> {
        depth.tape().set_stage("local");
        let mut parts = vec![depth];
        parts.extend(features);
        parts.extend(geometry);
        let joined = Var::concat(&parts, 1)?;
        if joined.shape()[1] != self.local_proj.in_dim {
            return Err(Error::InvalidArgument(format!(
                "local tokens have width {}, projection expects {}",
                joined.shape()[1],
                self.local_proj.in_dim
            )));
        }
        self.local_proj.forward(p, &joined)
    }

    /// Pyramid features of every kept global cell, `[G_max, C_g]`.
    pub fn global_features<'t>(&self, p: &Bound<'t>, image: &Array) -> Result<Option<Var<'t>>> {
        let Some(enc) = &self.global else { return Ok(None) };
        let tape = p[self.latents].tape();
        tape.set_stage("global");
        let (h, w) = (image.shape()[0], image.shape()[1]);
        let unit = self.cfg.global_downsample << self.cfg.global_scales;
        let padded = pad_to_multiple(image, unit)?;
        let mut x = tape.constant(padded);
        for conv in &enc.stem {
            x = conv.forward(p, &x)?.gelu()?;
        }
        let mut levels = vec![x.clone()];
        for conv in &enc.scales {
            x = conv.forward(p, &x)?.gelu()?;
            levels.push(x.clone());
        }
        let up: Vec<Var<'t>> = levels
            .iter()
            .enumerate()
            .map(|(s, f)| if s == 0 { Ok(f.clone()) } else { f.upsample_nearest(1 << s) })
            .collect::<grin_autodiff::Result<_>>()?;
        let joined = Var::concat(&up.iter().collect::<Vec<_>>(), 2)?;
        let (ph, pw, c) = (joined.shape()[0], joined.shape()[1], joined.shape()[2]);
        let flat = joined.reshape([ph * pw, c])?;
        let (gh, gw) = self.cfg.global_grid(h, w);
        if (gh, gw) == (ph, pw) {
            return Ok(Some(flat));
        }
        let keep: Vec<usize> = (0..gh).flat_map(|i| (0..gw).map(move |j| i * pw + j)).collect();
        Ok(Some(flat.gather(&keep)?))
    }

    /// Global tokens `[G, V]` for the kept cells in `subset` (all when `None`).
    pub fn global_tokens<'t>(
        &self,
        p: &Bound<'t>,
        image: &Array,
        cam: &Camera,
        subset: Option<&[usize]>,
    ) -> Result<Option<Var<'t>>> {
        let Some(enc) = &self.global else { return Ok(None) };
        let Some(features) = self.global_features(p, image)? else { return Ok(None) };
        let tape = features.tape();
        tape.set_stage("global");
        let (gh, gw) = self.cfg.global_grid(cam.height, cam.width);
        let all: Vec<usize>;
        let cells = match subset {
            Some(s) => s,
            None => {
                all = (0..gh * gw).collect();
                &all
            }
        };
        if cells.is_empty() {
            return Ok(None);
        }
        let features = if subset.is_some() { features.gather(cells)? } else { features };
        let small = cam.resize_by(1.0 / self.cfg.global_downsample as f64);
        let coords: Vec<(f64, f64)> = cells.iter().map(|&c| ((c % gw) as f64, (c / gw) as f64)).collect();
        let geom = Array::new([cells.len(), self.geometry.dim()], self.geometry.embed_coords(&small, &coords))?;
        let joined = Var::concat(&[&features, &tape.constant(geom)], 1)?;
        Ok(Some(enc.proj.forward(p, &joined)?))
    }

    /// Timestep embedding `[1, D_z]`.
    pub fn time_embedding<'t>(&self, p: &Bound<'t>, t: f64) -> Result<Var<'t>> {
        let tape = p[self.latents].tape();
        tape.set_stage("time");
        let mut feats = Vec::with_capacity(2 * TIME_FREQUENCIES);
        for k in 0..TIME_FREQUENCIES {
            feats.push((PI * (1u32 << k) as f64 * t).sin());
        }
        for k in 0..TIME_FREQUENCIES {
            feats.push((PI * (1u32 << k) as f64 * t).cos());
        }
        let f = tape.constant(Array::new([1, 2 * TIME_FREQUENCIES], feats)?);
        self.time_out.forward(p, &self.time_in.forward(p, &f)?.gelu()?)
    }

    /// Noise prediction `[L, 1]` for `L` local tokens, attending jointly with
    /// the optional global tokens.
    pub fn denoise<'t>(&self, p: &Bound<'t>, local: &Var<'t>, global: Option<&Var<'t>>, t: f64) -> Result<Var<'t>> {
        let l = local.shape()[0];
        let t_embed = self.time_embedding(p, t)?;
        let mut x = match global {
            Some(g) => Var::concat(&[local, g], 0)?,
            None => local.clone(),
        };
        let mut z = p[self.latents].clone();
        for block in &self.blocks {
            (x, z) = block.forward(p, &x, &z, &t_embed)?;
        }
        let tape = local.tape();
        tape.set_stage("head");
        if x.shape()[0] != l {
            x = x.gather(&(0..l).collect::<Vec<_>>())?;
        }
        self.head.forward(p, &self.head_norm.forward(p, &x)?)
    }
}

/// Zero-pads an `H×W×C` image at the bottom and right to multiples of `unit`.
fn pad_to_multiple(image: &Array, unit: usize) -> Result<Array> {
    let (h, w, c) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    let (ph, pw) = (h.div_ceil(unit) * unit, w.div_ceil(unit) * unit);
    if (ph, pw) == (h, w) {
        return Ok(image.clone());
    }
    let mut data = vec![0.0; ph * pw * c];
    for y in 0..h {
        data[y * pw * c..(y * pw + w) * c].copy_from_slice(&image.data()[y * w * c..(y + 1) * w * c]);
    }
    Ok(Array::new([ph, pw, c], data)?)
}

#[cfg(test)]
mod tests;
