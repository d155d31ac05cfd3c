//! Noise schedule, forward corruption, training loss and the DDIM sampler.

use std::f64::consts::FRAC_PI_2;

use grin_autodiff::{Array, Var};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScheduleKind {
    /// `γ(t) = cos²(πt/2)`.
    Cosine,
    /// `γ(t) = 1 − t`.
    Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossMode {
    /// `mean((n − ñ)²)`.
    Epsilon,
    /// `mean((n·γ(t) − ñ)²)`.
    ScaledNoise,
    /// The network predicts the clean value: `mean((x0 − x̂0)²)`.
    Sample,
}

impl LossMode {
    /// Noise estimate implied by network output `out` at state `x_t`.
    ///
    /// Noise modes return `out` unchanged. Under [`LossMode::Sample`] the
    /// output is `x̂0` and the noise is `(x_t − √γ·x̂0)/√(1−γ)`; `γ` must be
    /// below 1.
    pub fn noise_estimate(self, out: &[f64], xt: &[f64], gamma: f64) -> Vec<f64> {
        match self {
            LossMode::Epsilon | LossMode::ScaledNoise => out.to_vec(),
            LossMode::Sample => {
                let (a, b) = (gamma.sqrt(), (1.0 - gamma).sqrt());
                xt.iter().zip(out).map(|(x, o)| (x - a * o) / b).collect()
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub kind: ScheduleKind,
    pub train_steps: usize,
    pub eval_steps: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Self { kind: ScheduleKind::Cosine, train_steps: 1000, eval_steps: 10 }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if self.train_steps < 2 || self.eval_steps == 0 || self.eval_steps > self.train_steps {
            return Err(Error::Config(format!(
                "diffusion needs 1 <= eval_steps <= train_steps and train_steps >= 2, got {} and {}",
                self.eval_steps, self.train_steps
            )));
        }
        Ok(())
    }

    /// Signal fraction `γ(t)`, decreasing from `γ(0) = 1` to `γ(1) = 0`.
    pub fn gamma(&self, t: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::InvalidArgument(format!("timestep {t} outside [0, 1]")));
        }
        Ok(self.gamma_unchecked(t))
    }

    fn gamma_unchecked(&self, t: f64) -> f64 {
        if t == 1.0 {
            return 0.0;
        }
        match self.kind {
            ScheduleKind::Cosine => (FRAC_PI_2 * t).cos().powi(2),
            ScheduleKind::Linear => 1.0 - t,
        }
    }

    /// Smallest `γ` the sampler divides by: the value at the last training
    /// timestep below 1.
    pub fn gamma_floor(&self) -> f64 {
        self.gamma_unchecked((self.train_steps - 1) as f64 / self.train_steps as f64)
    }

    /// `γ(t)` as the sampler uses it, floored at [`Schedule::gamma_floor`].
    pub fn sampler_gamma(&self, t: f64) -> f64 {
        self.gamma_unchecked(t).max(self.gamma_floor())
    }

    /// Training timestep `k / T_train` for `k` in `1..=T_train`.
    pub fn train_time(&self, k: usize) -> f64 {
        k as f64 / self.train_steps as f64
    }

    /// Sampling times `1, …, 1/T_eval` followed by the terminal 0.
    pub fn eval_times(&self) -> Vec<f64> {
        (0..=self.eval_steps).rev().map(|i| i as f64 / self.eval_steps as f64).collect()
    }
}

fn check_len(what: &'static str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::LengthMismatch { what, left: a, right: b });
    }
    Ok(())
}

/// `x_t = √γ·x0 + √(1−γ)·n`.
pub fn forward_noise(x0: &[f64], noise: &[f64], gamma: f64) -> Result<Vec<f64>> {
    check_len("forward_noise", x0.len(), noise.len())?;
    let (a, b) = (gamma.sqrt(), (1.0 - gamma).sqrt());
    Ok(x0.iter().zip(noise).map(|(x, n)| a * x + b * n).collect())
}

fn targets(noise: &[f64], x0: &[f64], gamma: f64, mode: LossMode) -> Result<Vec<f64>> {
    check_len("training_loss", noise.len(), x0.len())?;
    Ok(match mode {
        LossMode::Epsilon => noise.to_vec(),
        LossMode::ScaledNoise => noise.iter().map(|n| n * gamma).collect(),
        LossMode::Sample => x0.to_vec(),
    })
}

/// Mean squared error between `pred` and the target of `mode` for tokens
/// with clean values `x0` corrupted by `noise`.
pub fn training_loss(pred: &[f64], noise: &[f64], x0: &[f64], gamma: f64, mode: LossMode) -> Result<f64> {
    check_len("training_loss", pred.len(), noise.len())?;
    if pred.is_empty() {
        return Err(Error::InvalidArgument("training_loss on zero tokens".into()));
    }
    let target = targets(noise, x0, gamma, mode)?;
    Ok(pred.iter().zip(&target).map(|(p, t)| (t - p).powi(2)).sum::<f64>() / pred.len() as f64)
}

/// Differentiable form of [`training_loss`] for a `[L, 1]` or `[L]` prediction.
pub fn training_loss_var<'t>(pred: &Var<'t>, noise: &[f64], x0: &[f64], gamma: f64, mode: LossMode) -> Result<Var<'t>> {
    check_len("training_loss", pred.value().len(), noise.len())?;
    let target = Array::new(pred.shape().to_vec(), targets(noise, x0, gamma, mode)?)?;
    Ok(pred.sub(&pred.tape().constant(target))?.square()?.mean()?)
}

/// Deterministic DDIM from `init` at `t = 1` down to `t = 0`.
///
/// `model(state, t)` predicts the noise in `state`. Each step forms
/// `x̂0 = (x_t − √(1−γ)·ñ)/√γ`, clamps it to `[0, 1]` and re-noises it to the
/// next time. `γ` is floored at [`Schedule::gamma_floor`] so the first
/// division is defined. Returns the final `x̂0`.
pub fn ddim_sample<F>(schedule: &Schedule, init: Vec<f64>, mut model: F) -> Result<Vec<f64>>
where
    F: FnMut(&[f64], f64) -> Result<Vec<f64>>,
{
    let times = schedule.eval_times();
    let mut x = init;
    let mut x0 = Vec::new();
    for (step, w) in times.windows(2).enumerate() {
        let (t, t_next) = (w[0], w[1]);
        let eps = model(&x, t)?;
        check_len("ddim_sample", eps.len(), x.len())?;
        if let Some(i) = eps.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "model output at sampling step {step} (t={t}) token {i} is {}",
                eps[i]
            )));
        }
        let g = schedule.sampler_gamma(t);
        let g_next = schedule.gamma_unchecked(t_next);
        let (sg, sn) = (g.sqrt(), (1.0 - g).sqrt());
        x0 = x.iter().zip(&eps).map(|(xt, e)| ((xt - sn * e) / sg).clamp(0.0, 1.0)).collect();
        let (a, b) = (g_next.sqrt(), (1.0 - g_next).sqrt());
        x = x0.iter().zip(&eps).map(|(x0, e)| a * x0 + b * e).collect();
    }
    Ok(x0)
}
