//! Depth inference by DDIM sampling with full conditioning.

use grin_autodiff::{Array, Tape};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::metrics::lower_median;
use crate::config::RunConfig;
use crate::data::{sample_subset, DepthMap, Image};
use crate::diffusion::ddim_sample;
use crate::geometry::Camera;
use crate::model::GrinModel;
use crate::{Error, Result};

const STREAM_SAMPLE: u64 = 4;
const STREAM_GLOBAL: u64 = 5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InferOptions {
    pub samples: usize,
    pub seed: u64,
    /// Fraction of global tokens kept; the kept set is fixed per image.
    pub global_keep: f64,
}

impl InferOptions {
    pub fn from_config(cfg: &RunConfig, seed: u64) -> Self {
        Self { samples: cfg.eval.samples, seed, global_keep: cfg.eval.global_keep }
    }
}

/// Per-pixel median depth and standard deviation over samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub depth: DepthMap,
    pub uncertainty: DepthMap,
}

/// Metric depth at `pixels` for each of `opts.samples` samples.
///
/// Sample `k` draws its initial noise from its own stream, in pixel order,
/// so a pixel subset sees the same noise sequence as the full image only
/// when it is the full image. The denoiser sees `cfg.eval.chunk` local
/// tokens per call, close to the count it was trained on, and every call
/// attends to the same global tokens.
pub fn infer_samples(
    model: &GrinModel,
    cfg: &RunConfig,
    image: &Image,
    camera: &Camera,
    pixels: &[usize],
    opts: &InferOptions,
) -> Result<Vec<Vec<f64>>> {
    if pixels.is_empty() {
        return Err(Error::Empty("no pixels to infer".into()));
    }
    if opts.samples == 0 {
        return Err(Error::InvalidArgument("at least one sample is needed".into()));
    }
    if !(opts.global_keep > 0.0 && opts.global_keep <= 1.0) {
        return Err(Error::InvalidArgument(format!("global fraction {} outside (0, 1]", opts.global_keep)));
    }
    if (image.width, image.height) != (camera.width, camera.height) {
        return Err(Error::InvalidArgument(format!(
            "image is {}×{} but intrinsics describe {}×{}",
            image.width, image.height, camera.width, camera.height
        )));
    }
    if let Some(&bad) = pixels.iter().find(|&&i| i >= camera.width * camera.height) {
        return Err(Error::PixelOutOfBounds {
            u: bad % camera.width,
            v: bad / camera.width,
            width: camera.width,
            height: camera.height,
        });
    }
    let total = model.config().global_token_count(camera.height, camera.width);
    let subset = if total > 0 && opts.global_keep < 1.0 {
        let keep = ((opts.global_keep * total as f64).ceil() as usize).max(1);
        let mut rng = crate::rng(opts.seed, STREAM_GLOBAL << 56);
        Some(sample_subset(&(0..total).collect::<Vec<_>>(), keep, &mut rng)?)
    } else {
        None
    };
    let img = image.to_array();
    let chunks = chunk_indices(pixels.len(), cfg.eval.chunk);
    // Samples are independent; each worker builds its own tape and
    // conditioning, and results are collected in sample order.
    (0..opts.samples)
        .into_par_iter()
        .map(|k| {
            let tape = Tape::no_grad();
            let p = model.bind(&tape);
            let feats = model.local_features(&p, &tape.constant(img.clone()), pixels)?;
            let geom = model.local_geometry(camera, pixels)?.map(|g| tape.constant(g));
            let parts = chunks
                .iter()
                .map(|c| {
                    let f = feats.as_ref().map(|f| f.gather(c)).transpose()?;
                    let g = geom.as_ref().map(|g| g.gather(c)).transpose()?;
                    Ok((f, g))
                })
                .collect::<Result<Vec<_>>>()?;
            let global = model.global_tokens(&p, &img, camera, subset.as_deref())?;
            let mut rng = crate::rng(opts.seed, (STREAM_SAMPLE << 56) | k as u64);
            let init: Vec<f64> = (0..pixels.len()).map(|_| rng.sample(StandardNormal)).collect();
            let x0 = ddim_sample(&cfg.schedule, init, |x, t| {
                let mut eps = vec![0.0; x.len()];
                for (c, (f, g)) in chunks.iter().zip(&parts) {
                    let d = tape.constant(Array::new([c.len(), 1], c.iter().map(|&i| x[i]).collect())?);
                    let local = model.local_tokens(&p, &d, f.as_ref(), g.as_ref())?;
                    let out = model.denoise(&p, &local, global.as_ref(), t)?;
                    let xt: Vec<f64> = c.iter().map(|&i| x[i]).collect();
                    let est = cfg.loss.noise_estimate(out.value().data(), &xt, cfg.schedule.sampler_gamma(t));
                    for (&i, e) in c.iter().zip(est) {
                        eps[i] = e;
                    }
                }
                Ok(eps)
            })?;
            Ok(x0.into_iter().map(|x| cfg.depth.decode_clamped(x).0).collect())
        })
        .collect()
}

/// Interleaved partition of `0..n` into `⌈n/size⌉` chunks of near-equal
/// size: chunk `j` holds `j, j+c, j+2c, …`, so every chunk spans the whole
/// pixel set the way a random training subset does. `size == 0` gives one
/// chunk.
fn chunk_indices(n: usize, size: usize) -> Vec<Vec<usize>> {
    let count = if size == 0 { 1 } else { n.div_ceil(size).max(1) };
    (0..count).map(|j| (j..n).step_by(count).collect()).collect()
}

/// Per-pixel lower median and population standard deviation over a
/// non-empty list of samples.
pub fn reduce_samples(samples: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = samples[0].len();
    let s = samples.len() as f64;
    let mut depth = Vec::with_capacity(n);
    let mut std = Vec::with_capacity(n);
    for i in 0..n {
        let column: Vec<f64> = samples.iter().map(|v| v[i]).collect();
        depth.push(lower_median(&column));
        if samples.len() == 1 {
            std.push(0.0);
            continue;
        }
        let mean = column.iter().sum::<f64>() / s;
        std.push((column.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / s).sqrt());
    }
    (depth, std)
}

/// Dense depth and uncertainty for every pixel of `image`.
pub fn infer_depth(
    model: &GrinModel,
    cfg: &RunConfig,
    image: &Image,
    camera: &Camera,
    opts: &InferOptions,
) -> Result<Prediction> {
    let pixels: Vec<usize> = (0..camera.width * camera.height).collect();
    let samples = infer_samples(model, cfg, image, camera, &pixels, opts)?;
    let (depth, std) = reduce_samples(&samples);
    Ok(Prediction {
        depth: DepthMap::new(camera.width, camera.height, depth)?,
        uncertainty: DepthMap::new(camera.width, camera.height, std)?,
    })
}

/// Median depth at `pixels` only; local tokens exist for the subset alone
/// while global tokens see the whole image.
pub fn infer_crop(
    model: &GrinModel,
    cfg: &RunConfig,
    image: &Image,
    camera: &Camera,
    pixels: &[usize],
    opts: &InferOptions,
) -> Result<Vec<f64>> {
    Ok(reduce_samples(&infer_samples(model, cfg, image, camera, pixels, opts)?).0)
}
