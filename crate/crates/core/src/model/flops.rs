//! Closed-form matrix-product FLOP counts (2·m·k·n per product).

use std::collections::BTreeMap;

use super::{ModelConfig, TIME_FREQUENCIES};

/// FLOPs of one forward pass split by stage.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StageFlops {
    pub local: u64,
    pub global: u64,
    pub time: u64,
    pub read: u64,
    pub compute: u64,
    pub write: u64,
    pub head: u64,
}

impl StageFlops {
    pub fn total(&self) -> u64 {
        self.local + self.global + self.time + self.read + self.compute + self.write + self.head
    }

    /// Same split keyed by the stage labels the tape uses.
    pub fn as_map(&self) -> BTreeMap<&'static str, u64> {
        [
            ("local", self.local),
            ("global", self.global),
            ("time", self.time),
            ("read", self.read),
            ("compute", self.compute),
            ("write", self.write),
            ("head", self.head),
        ]
        .into_iter()
        .filter(|&(_, v)| v > 0)
        .collect()
    }
}

fn mm(m: usize, k: usize, n: usize) -> u64 {
    2 * (m * k * n) as u64
}

/// Read, compute and write FLOPs of all blocks for `tokens` input tokens.
pub fn rin_flops(cfg: &ModelConfig, tokens: usize) -> StageFlops {
    let (m, dz, v, f, n) = (cfg.latent_count, cfg.latent_width, cfg.token_width, cfg.ff_mult, tokens);
    let b = cfg.blocks as u64;
    // Token-independent latent work of the read and write blocks (query and
    // output projections plus feed-forward of the read, key and value
    // projections of the write) is compute.
    let read = 2 * mm(n, v, dz) + 2 * mm(m, dz, n);
    let latent_io = mm(m, dz, dz) + mm(m, dz, dz) + mm(m, dz, f * dz) + mm(m, f * dz, dz) + 2 * mm(m, dz, dz);
    let layer = 3 * mm(m, dz, dz) + 2 * mm(m, dz, m) + mm(m, dz, dz) + mm(m, dz, f * dz) + mm(m, f * dz, dz);
    let write = mm(n, v, dz) + 2 * mm(n, dz, m) + mm(n, dz, v) + mm(n, v, f * v) + mm(n, f * v, v);
    StageFlops {
        read: b * read,
        compute: b * (cfg.block_depth as u64 * layer + latent_io),
        write: b * write,
        time: mm(1, 2 * TIME_FREQUENCIES, dz) + mm(1, dz, dz),
        ..Default::default()
    }
}

/// Full forward pass with `local` sparse tokens and `global` global tokens
/// on a `height×width` image.
pub fn forward_flops(cfg: &ModelConfig, local: usize, global: usize, height: usize, width: usize) -> StageFlops {
    let mut s = rin_flops(cfg, local + global);
    let k = cfg.local_kernel;
    s.local = mm(local, cfg.local_in_width(), cfg.token_width);
    if cfg.local_image {
        s.local += mm(local, k * k * 3, cfg.local_channels);
    }
    if cfg.global && global > 0 {
        let unit = cfg.global_downsample << cfg.global_scales;
        let (mut h, mut w) = (height.div_ceil(unit) * unit, width.div_ceil(unit) * unit);
        let c = cfg.global_channels;
        let stem = cfg.global_downsample.trailing_zeros() as usize;
        for i in 0..stem + cfg.global_scales {
            h /= 2;
            w /= 2;
            s.global += mm(h * w, 9 * if i == 0 { 3 } else { c }, c);
        }
        s.global += mm(global, cfg.global_feature_width() + cfg.encoding.dim(), cfg.token_width);
    }
    s.head = mm(local, cfg.token_width, 1);
    s
}
