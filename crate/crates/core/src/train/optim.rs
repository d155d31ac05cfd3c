//! Sign-momentum optimizer, learning-rate schedule and weight averaging.

use std::f64::consts::PI;

use grin_autodiff::Array;

use crate::model::ParamStore;
use crate::{Error, Result};

/// Rounds every value to the nearest `f32`, the precision of checkpoints.
pub fn round_f32(a: &mut Array) {
    for v in a.data_mut() {
        *v = *v as f32 as f64;
    }
}

fn check_shapes(what: &'static str, params: &ParamStore, other: &[Array]) -> Result<()> {
    if params.len() != other.len() {
        return Err(Error::LengthMismatch { what, left: params.len(), right: other.len() });
    }
    for (p, o) in params.iter().zip(other) {
        if p.value.shape() != o.shape() {
            return Err(Error::InvalidArgument(format!(
                "{what}: {} has shape {:?}, got {:?}",
                p.name,
                p.value.shape(),
                o.shape()
            )));
        }
    }
    Ok(())
}

/// Lion: the update is the sign of an interpolation between momentum and
/// gradient; weight decay is decoupled and applies to decay-flagged
/// parameters only.
#[derive(Clone, Debug, PartialEq)]
pub struct Lion {
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub moments: Vec<Array>,
}

impl Lion {
    pub fn new(params: &ParamStore, beta1: f64, beta2: f64, weight_decay: f64) -> Self {
        let moments = params.iter().map(|p| Array::zeros(p.value.shape().to_vec())).collect();
        Self { beta1, beta2, weight_decay, moments }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &[Array], lr: f64) -> Result<()> {
        check_shapes("optimizer gradients", params, grads)?;
        check_shapes("optimizer moments", params, &self.moments)?;
        if !(lr >= 0.0) {
            return Err(Error::InvalidArgument(format!("learning rate {lr}")));
        }
        let (b1, b2) = (self.beta1, self.beta2);
        for ((p, g), m) in params.iter_mut().zip(grads).zip(&mut self.moments) {
            let wd = if p.decay { self.weight_decay } else { 0.0 };
            for ((w, &g), m) in p.value.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()) {
                let mix = b1 * *m + (1.0 - b1) * g;
                // `signum` maps 0 to 1; a zero mix must not move the weight.
                let dir = if mix == 0.0 { 0.0 } else { mix.signum() };
                *w -= lr * (dir + wd * *w);
                *m = b2 * *m + (1.0 - b2) * g;
            }
        }
        Ok(())
    }

    pub fn round_f32(&mut self) {
        self.moments.iter_mut().for_each(round_f32);
    }
}

/// Linear warmup from 0 to `peak`, then cosine decay to 0 at `total`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub warmup: usize,
    pub total: usize,
    pub peak: f64,
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.warmup >= self.total || !(self.peak >= 0.0) {
            return Err(Error::Config(format!(
                "learning-rate schedule needs warmup < total and peak >= 0, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Learning rate at `step`, clamped to `total`.
    pub fn lr_at(&self, step: usize) -> f64 {
        let step = step.min(self.total);
        if step < self.warmup {
            return self.peak * step as f64 / self.warmup as f64;
        }
        let progress = (step - self.warmup) as f64 / (self.total - self.warmup) as f64;
        self.peak * 0.5 * (1.0 + (PI * progress).cos())
    }
}

/// Exponential moving average of parameter values.
#[derive(Clone, Debug, PartialEq)]
pub struct Ema {
    pub beta: f64,
    pub shadow: Vec<Array>,
}

impl Ema {
    pub fn new(params: &ParamStore, beta: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&beta) {
            return Err(Error::Config(format!("EMA decay {beta} outside [0, 1)")));
        }
        Ok(Self { beta, shadow: params.iter().map(|p| p.value.clone()).collect() })
    }

    /// Decay used at optimizer step `step` (1-based): `min(β, (1+step)/(10+step))`,
    /// so early averages are not dominated by the initial weights.
    pub fn decay(&self, step: usize) -> f64 {
        self.beta.min((1 + step) as f64 / (10 + step) as f64)
    }

    /// `ema ← ema + (1−β_step)(p − ema)`, which leaves `ema = p` fixed exactly.
    pub fn update(&mut self, params: &ParamStore, step: usize) -> Result<()> {
        check_shapes("EMA", params, &self.shadow)?;
        let k = 1.0 - self.decay(step);
        for (s, p) in self.shadow.iter_mut().zip(params.iter()) {
            for (e, &v) in s.data_mut().iter_mut().zip(p.value.data()) {
                *e += k * (v - *e);
            }
        }
        Ok(())
    }

    /// A copy of `params` holding the averaged values.
    pub fn apply_to(&self, params: &ParamStore) -> Result<ParamStore> {
        check_shapes("EMA", params, &self.shadow)?;
        let mut out = params.clone();
        for (p, s) in out.iter_mut().zip(&self.shadow) {
            p.value = s.clone();
        }
        Ok(out)
    }

    pub fn round_f32(&mut self) {
        self.shadow.iter_mut().for_each(round_f32);
    }
}
