//! Training loop, inference and evaluation.

pub mod ablate;
mod infer;
pub mod metrics;
mod optim;

use std::path::Path;

use grin_autodiff::{Array, Tape};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::config::RunConfig;
use crate::data::{augment, sample_subset, DatasetEntry, DepthMap, Image, SparseDepthMap};
use crate::diffusion::{forward_noise, training_loss_var};
use crate::geometry::Camera;
use crate::model::checkpoint::Checkpoint;
use crate::model::{GrinModel, ParamStore};
use crate::{Error, Result};

pub use infer::{infer_crop, infer_depth, infer_samples, reduce_samples, InferOptions, Prediction};
pub use metrics::{confidence_curve, evaluate, lower_median, scale_align, MetricsReport};
pub use optim::{round_f32, Ema, Lion, LrSchedule};

/// RNG streams; each consumer draws from its own.
const STREAM_STEP: u64 = 1;
const STREAM_ORDER: u64 = 2;
const STREAM_AUGMENT: u64 = 3;

/// Where a scene's supervision comes from.
#[derive(Clone, Copy, Debug)]
pub enum Supervision<'a> {
    /// Unordered sparse records.
    Sparse(&'a SparseDepthMap),
    /// A dense map where only pixels with `valid` set and positive depth count.
    Masked { depth: &'a DepthMap, valid: &'a [bool] },
}

/// Which supervision path [`Trainer`] feeds the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IngestPath {
    Sparse,
    /// Reference path: dense features for every pixel, supervised rows
    /// gathered afterwards.
    DenseMasked,
}

/// Global cells whose footprint holds at least one valid pixel.
fn valid_cells(cfg: &RunConfig, cam: &Camera, valid: Option<&[bool]>) -> Vec<usize> {
    let (gh, gw) = cfg.model.global_grid(cam.height, cam.width);
    let d = cfg.model.global_downsample;
    (0..gh * gw)
        .filter(|&c| {
            let Some(valid) = valid else { return true };
            let (ci, cj) = (c / gw, c % gw);
            (ci * d..((ci + 1) * d).min(cam.height))
                .any(|v| (cj * d..((cj + 1) * d).min(cam.width)).any(|u| valid[v * cam.width + u]))
        })
        .collect()
}

/// Loss and parameter gradients of one scene, or `None` without supervision.
///
/// Draw order from `rng`: timestep, supervised subset, noise, global subset.
#[allow(clippy::too_many_arguments)]
pub fn scene_gradients<R: Rng>(
    model: &GrinModel,
    cfg: &RunConfig,
    image: &Image,
    camera: &Camera,
    supervision: Supervision<'_>,
    pad_mask: Option<&[bool]>,
    rng: &mut R,
) -> Result<Option<(f64, Vec<Array>)>> {
    let (ids, depth_at): (Vec<usize>, Box<dyn Fn(usize) -> f64 + '_>) = match supervision {
        Supervision::Sparse(s) => {
            if (s.width, s.height) != (camera.width, camera.height) {
                return Err(Error::InvalidArgument("sparse map and camera sizes differ".into()));
            }
            let dense = s.to_dense();
            (s.pixel_ids(), Box::new(move |i| dense.data[i]))
        }
        Supervision::Masked { depth, valid } => {
            if depth.data.len() != camera.width * camera.height || valid.len() != depth.data.len() {
                return Err(Error::InvalidArgument("dense map, mask and camera sizes differ".into()));
            }
            let ids = (0..valid.len()).filter(|&i| valid[i] && depth.data[i] > 0.0).collect();
            (ids, Box::new(move |i| depth.data[i]))
        }
    };
    if ids.is_empty() {
        return Ok(None);
    }
    let k = rng.random_range(1..=cfg.schedule.train_steps);
    let t = cfg.schedule.train_time(k);
    let gamma = cfg.schedule.gamma(t)?;
    let sel = sample_subset(&ids, cfg.data.local_tokens, rng)?;
    let noise: Vec<f64> = (0..sel.len()).map(|_| rng.sample(StandardNormal)).collect();
    let global_subset = if cfg.model.global && cfg.data.global_tokens > 0 {
        let cells = valid_cells(cfg, camera, pad_mask);
        Some(sample_subset(&cells, cfg.data.global_tokens, rng)?)
    } else {
        None
    };
    let x0: Vec<f64> = sel.iter().map(|&i| cfg.depth.encode_clamped(depth_at(i)).0).collect();
    let xt = forward_noise(&x0, &noise, gamma)?;

    let tape = Tape::new();
    let p = model.bind(&tape);
    let img = image.to_array();
    let img_v = tape.constant(img.clone());
    let local = match supervision {
        Supervision::Sparse(_) => {
            let feats = model.local_features(&p, &img_v, &sel)?;
            let geom = model.local_geometry(camera, &sel)?.map(|g| tape.constant(g));
            let d = tape.constant(Array::new([sel.len(), 1], xt)?);
            model.local_tokens(&p, &d, feats.as_ref(), geom.as_ref())?
        }
        Supervision::Masked { .. } => {
            let mut grid = vec![0.0; camera.width * camera.height];
            for (&i, &x) in sel.iter().zip(&xt) {
                grid[i] = x;
            }
            let feats = model.local_features_dense(&p, &img_v)?;
            let geom = model.local_geometry_dense(camera)?.map(|g| tape.constant(g));
            let d = tape.constant(Array::new([grid.len(), 1], grid)?);
            model.local_tokens(&p, &d, feats.as_ref(), geom.as_ref())?.gather(&sel)?
        }
    };
    let global = match &global_subset {
        Some(cells) => model.global_tokens(&p, &img, camera, Some(cells))?,
        None => None,
    };
    let pred = model.denoise(&p, &local, global.as_ref(), t)?;
    let loss = training_loss_var(&pred, &noise, &x0, gamma, cfg.loss)?;
    let value = loss.item()?;
    let grads = tape.backward(&loss)?;
    Ok(Some((value, p.gradients(&grads))))
}

/// Outcome of one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    /// 1-based index of the step just taken.
    pub step: usize,
    /// Mean loss over supervised scenes; `None` when every scene was skipped.
    pub loss: Option<f64>,
    pub lr: f64,
}

impl StepReport {
    /// Loss-log line `step\tloss\tlr`.
    pub fn log_line(&self) -> String {
        let loss = self.loss.map_or("nan".to_string(), |l| format!("{l:.9}"));
        format!("{}\t{loss}\t{:.9e}", self.step, self.lr)
    }
}

/// Parameters, optimizer and EMA state of a training run.
///
/// All state is rounded to `f32` after every step, the precision of
/// checkpoints, so a resumed run continues exactly.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub cfg: RunConfig,
    pub model: GrinModel,
    pub optim: Lion,
    pub ema: Ema,
    pub step: usize,
    pub path: IngestPath,
    /// Scenes skipped for lack of supervision.
    pub skipped: usize,
}

impl Trainer {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let mut model = GrinModel::new(cfg.model.clone(), cfg.train.seed)?;
        model.params_mut().iter_mut().for_each(|p| round_f32(&mut p.value));
        let optim = Lion::new(model.params(), cfg.train.beta1, cfg.train.beta2, cfg.train.weight_decay);
        let ema = Ema::new(model.params(), cfg.train.ema_beta)?;
        Ok(Self { cfg, model, optim, ema, step: 0, path: IngestPath::Sparse, skipped: 0 })
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule { warmup: self.cfg.train.warmup, total: self.cfg.train.steps, peak: self.cfg.train.lr }
    }

    /// Dataset index used by batch slot `slot` of step `step`; a fresh
    /// permutation of the data is drawn for every epoch.
    pub fn scene_index(&self, step: usize, slot: usize, n: usize) -> usize {
        let pos = step * self.cfg.train.batch + slot;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut crate::rng(self.cfg.train.seed, (STREAM_ORDER << 56) | (pos / n) as u64));
        order[pos % n]
    }

    /// One optimizer step on a batch drawn from `data`.
    pub fn train_step(&mut self, data: &[DatasetEntry]) -> Result<StepReport> {
        if data.is_empty() {
            return Err(Error::Empty("no training scenes".into()));
        }
        let seed = self.cfg.train.seed;
        let mut rng = crate::rng(seed, (STREAM_STEP << 56) | self.step as u64);
        let mut sum: Option<Vec<Array>> = None;
        let (mut loss_sum, mut used) = (0.0, 0usize);
        for slot in 0..self.cfg.train.batch {
            let entry = &data[self.scene_index(self.step, slot, data.len())];
            let augmented = match self.cfg.data.augment_spec() {
                Some(spec) => {
                    let pos = (self.step * self.cfg.train.batch + slot) as u64;
                    let aug_seed = crate::rng(seed, (STREAM_AUGMENT << 56) | pos).random();
                    Some(augment(&entry.scene, &entry.sparse, &spec, aug_seed)?)
                }
                None => None,
            };
            let (scene, sparse, mask) = match &augmented {
                Some(a) => (&a.scene, &a.sparse, Some(a.valid.as_slice())),
                None => (&entry.scene, &entry.sparse, None),
            };
            let dense;
            let all_valid;
            let supervision = match self.path {
                IngestPath::Sparse => Supervision::Sparse(sparse),
                IngestPath::DenseMasked => {
                    dense = sparse.to_dense();
                    all_valid = dense.data.iter().map(|&d| d > 0.0).collect::<Vec<bool>>();
                    Supervision::Masked { depth: &dense, valid: &all_valid }
                }
            };
            let Some((loss, grads)) =
                scene_gradients(&self.model, &self.cfg, &scene.image, &scene.camera, supervision, mask, &mut rng)?
            else {
                self.skipped += 1;
                continue;
            };
            loss_sum += loss;
            used += 1;
            match &mut sum {
                Some(acc) => {
                    for (a, g) in acc.iter_mut().zip(&grads) {
                        a.add_assign(g)?;
                    }
                }
                None => sum = Some(grads),
            }
        }
        self.step += 1;
        let lr = self.schedule().lr_at(self.step);
        let Some(mut grads) = sum else {
            return Ok(StepReport { step: self.step, loss: None, lr });
        };
        if used > 1 {
            let inv = 1.0 / used as f64;
            grads.iter_mut().for_each(|g| g.data_mut().iter_mut().for_each(|v| *v *= inv));
        }
        let loss = loss_sum / used as f64;
        if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("loss or gradient at step {}", self.step)));
        }
        self.optim.step(self.model.params_mut(), &grads, lr)?;
        self.model.params_mut().iter_mut().for_each(|p| round_f32(&mut p.value));
        self.optim.round_f32();
        self.ema.update(self.model.params(), self.step)?;
        self.ema.round_f32();
        Ok(StepReport { step: self.step, loss: Some(loss), lr })
    }

    /// Parameters used for evaluation: the EMA shadow unless `raw`.
    pub fn eval_params(&self, raw: bool) -> Result<ParamStore> {
        if raw {
            Ok(self.model.params().clone())
        } else {
            self.ema.apply_to(self.model.params())
        }
    }

    /// A model carrying the evaluation parameters.
    pub fn eval_model(&self, raw: bool) -> Result<GrinModel> {
        let mut m = self.model.clone();
        let params = self.eval_params(raw)?;
        m.params_mut().copy_values_from(&params)?;
        Ok(m)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut meta: Vec<(String, String)> = self.cfg.entries().into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        meta.push(("step".into(), self.step.to_string()));
        meta.push(("skipped".into(), self.skipped.to_string()));
        let mut tensors = Vec::new();
        let params = self.model.params();
        for p in params.iter() {
            tensors.push((format!("raw/{}", p.name), p.value.clone()));
        }
        for (p, e) in params.iter().zip(&self.ema.shadow) {
            tensors.push((format!("ema/{}", p.name), e.clone()));
        }
        for (p, m) in params.iter().zip(&self.optim.moments) {
            tensors.push((format!("moment/{}", p.name), m.clone()));
        }
        Checkpoint { meta, tensors }
    }

    /// Restores a run saved by [`Trainer::to_checkpoint`].
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let cfg = config_from_checkpoint(ckpt)?;
        let mut t = Self::new(cfg)?;
        let num = |key: &str| -> Result<usize> {
            ckpt.meta(key)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Format(format!("checkpoint lacks a valid {key}")))
        };
        t.step = num("step")?;
        t.skipped = num("skipped")?;
        let raw = load_set(ckpt, "raw", t.model.params())?;
        t.model.params_mut().copy_values_from(&raw)?;
        t.ema.shadow = load_set(ckpt, "ema", t.model.params())?.iter().map(|p| p.value.clone()).collect();
        t.optim.moments = load_set(ckpt, "moment", t.model.params())?.iter().map(|p| p.value.clone()).collect();
        Ok(t)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// The run configuration stored in a checkpoint's metadata.
pub fn config_from_checkpoint(ckpt: &Checkpoint) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    for (key, _) in RunConfig::default().entries() {
        let value = ckpt.meta(key).ok_or_else(|| Error::Format(format!("checkpoint lacks config key {key}")))?;
        cfg.set(key, value)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Parameter set `set` of `ckpt`, matched by name against `like`.
fn load_set(ckpt: &Checkpoint, set: &str, like: &ParamStore) -> Result<ParamStore> {
    let mut store = ParamStore::new();
    for (name, value) in ckpt.set(set) {
        store.add(name, value.clone(), false);
    }
    let mut out = like.clone();
    out.copy_values_from(&store).map_err(|e| Error::Format(format!("checkpoint set {set}: {e}")))?;
    Ok(out)
}

/// Loads the model of a checkpoint with EMA weights, or raw ones if `raw`.
pub fn load_model(ckpt: &Checkpoint, raw: bool) -> Result<(RunConfig, GrinModel)> {
    let cfg = config_from_checkpoint(ckpt)?;
    let mut model = GrinModel::new(cfg.model.clone(), cfg.train.seed)?;
    let set = if raw { "raw" } else { "ema" };
    let values = load_set(ckpt, set, model.params())?;
    model.params_mut().copy_values_from(&values)?;
    Ok((cfg, model))
}
