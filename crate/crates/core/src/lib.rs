//! Pixel-level diffusion for metric depth with geometric conditioning and
//! sparse supervision.
//!
//! Depth is predicted per pixel by denoising a log-depth value for each local
//! token. Tokens mix a noisy depth, a local image feature and a Fourier
//! embedding of the pixel's viewing ray; global tokens add scene context. A
//! fixed-size latent array reads from, processes and writes back to the
//! tokens, so cost is linear in the number of supervised pixels.

pub mod config;
pub mod data;
pub mod depth;
pub mod diffusion;
pub mod geometry;
pub mod model;
pub mod train;

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] grin_autodiff::Error),
    #[error("config: {0}")]
    Config(String),
    #[error("format: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid camera {0}")]
    InvalidCamera(String),
    #[error("pixel ({u}, {v}) outside {width}×{height} image")]
    PixelOutOfBounds { u: usize, v: usize, width: usize, height: usize },
    #[error("depth {depth} outside [{near}, {far}]")]
    DepthOutOfRange { depth: f64, near: f64, far: f64 },
    #[error("{what}: lengths {left} and {right} differ")]
    LengthMismatch { what: &'static str, left: usize, right: usize },
    #[error("{0}")]
    InvalidArgument(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("{0}")]
    Empty(String),
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Independent deterministic stream `stream` of generator `seed`.
pub fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}
