//! Linear, normalisation, attention and feed-forward layers.

use grin_autodiff::nn;
use grin_autodiff::{PatchSpec, Var};
use rand_chacha::ChaCha8Rng;

use super::params::{Bound, ParamId, ParamStore};
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct Linear {
    pub(crate) w: ParamId,
    pub(crate) b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub(crate) fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, in_dim: usize, out_dim: usize) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let w = store.uniform(rng, format!("{name}.w"), &[in_dim, out_dim], bound, true);
        let b = store.uniform(rng, format!("{name}.b"), &[out_dim], bound, false);
        Self { w, b, in_dim, out_dim }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: &Var<'t>) -> Result<Var<'t>> {
        Ok(nn::linear(x, &p[self.w], Some(&p[self.b]))?)
    }
}

/// Convolution over `H×W×C` with weights laid out `[k·k·C_in, C_out]`.
#[derive(Clone, Debug)]
pub struct Conv {
    pub(crate) w: ParamId,
    pub(crate) b: ParamId,
    pub spec: PatchSpec,
    pub in_ch: usize,
    pub out_ch: usize,
}

impl Conv {
    pub(crate) fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        spec: PatchSpec,
    ) -> Self {
        let fan_in = spec.kernel * spec.kernel * in_ch;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = store.uniform(rng, format!("{name}.w"), &[fan_in, out_ch], bound, true);
        let b = store.uniform(rng, format!("{name}.b"), &[out_ch], bound, false);
        Self { w, b, spec, in_ch, out_ch }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, image: &Var<'t>) -> Result<Var<'t>> {
        Ok(nn::conv2d(image, &p[self.w], Some(&p[self.b]), self.spec)?)
    }

    /// Output rows only at the given `(row, col)` positions, as `[P, C_out]`.
    pub fn forward_at<'t>(&self, p: &Bound<'t>, image: &Var<'t>, positions: &[(usize, usize)]) -> Result<Var<'t>> {
        let cols = image.im2col_at(self.spec, positions)?;
        Ok(nn::linear(&cols, &p[self.w], Some(&p[self.b]))?)
    }
}

/// Layer normalisation over the last axis with learned gain and shift.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub(crate) gain: ParamId,
    pub(crate) shift: ParamId,
}

impl LayerNorm {
    pub(crate) fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        let gain = store.add(format!("{name}.gain"), grin_autodiff::Array::ones([dim]), false);
        let shift = store.add(format!("{name}.shift"), grin_autodiff::Array::zeros([dim]), false);
        Self { gain, shift }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: &Var<'t>) -> Result<Var<'t>> {
        Ok(x.layer_norm()?.mul(&p[self.gain])?.add(&p[self.shift])?)
    }
}

/// Multi-head scaled dot-product attention from queries of width `q_dim`
/// onto keys/values of width `kv_dim`, with inner width `inner`.
#[derive(Clone, Debug)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl Attention {
    pub(crate) fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        q_dim: usize,
        kv_dim: usize,
        inner: usize,
        heads: usize,
    ) -> Result<Self> {
        if heads == 0 || !inner.is_multiple_of(heads) {
            return Err(Error::Config(format!("{name}: width {inner} not divisible by {heads} heads")));
        }
        Ok(Self {
            q: Linear::new(store, rng, &format!("{name}.q"), q_dim, inner),
            k: Linear::new(store, rng, &format!("{name}.k"), kv_dim, inner),
            v: Linear::new(store, rng, &format!("{name}.v"), kv_dim, inner),
            o: Linear::new(store, rng, &format!("{name}.o"), inner, q_dim),
            heads,
        })
    }

    fn split_heads<'t>(&self, x: &Var<'t>) -> Result<Var<'t>> {
        let (n, w) = (x.shape()[0], x.shape()[1]);
        Ok(x.reshape([n, self.heads, w / self.heads])?.permute(&[1, 0, 2])?)
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, queries: &Var<'t>, context: &Var<'t>) -> Result<Var<'t>> {
        let stage = queries.tape().stage();
        self.forward_staged(p, queries, context, stage, stage)
    }

    /// Like [`Attention::forward`], labelling the query and output
    /// projections with `query_stage` and the key/value projections with
    /// `context_stage`. Products that mix both sides keep the current stage,
    /// which is restored on return.
    pub fn forward_staged<'t>(
        &self,
        p: &Bound<'t>,
        queries: &Var<'t>,
        context: &Var<'t>,
        query_stage: &'static str,
        context_stage: &'static str,
    ) -> Result<Var<'t>> {
        let tape = queries.tape();
        let mix_stage = tape.stage();
        let nq = queries.shape()[0];
        let inner = self.q.out_dim;
        let dh = inner / self.heads;
        tape.set_stage(query_stage);
        let q = self.split_heads(&self.q.forward(p, queries)?)?;
        tape.set_stage(context_stage);
        let k = self.split_heads(&self.k.forward(p, context)?)?;
        let v = self.split_heads(&self.v.forward(p, context)?)?;
        tape.set_stage(mix_stage);
        let att = q.matmul(&k.transpose()?)?.scale(1.0 / (dh as f64).sqrt())?.softmax()?;
        let mixed = att.matmul(&v)?.permute(&[1, 0, 2])?.reshape([nq, inner])?;
        tape.set_stage(query_stage);
        let out = self.o.forward(p, &mixed);
        tape.set_stage(mix_stage);
        out
    }
}

#[derive(Clone, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub(crate) fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, dim: usize, mult: usize) -> Self {
        Self {
            up: Linear::new(store, rng, &format!("{name}.up"), dim, dim * mult),
            down: Linear::new(store, rng, &format!("{name}.down"), dim * mult, dim),
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: &Var<'t>) -> Result<Var<'t>> {
        self.down.forward(p, &self.up.forward(p, x)?.gelu()?)
    }
}

/// Pre-norm residual feed-forward sublayer.
#[derive(Clone, Debug)]
pub struct FfSublayer {
    pub norm: LayerNorm,
    pub ff: FeedForward,
}

impl FfSublayer {
    pub(crate) fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, dim: usize, mult: usize) -> Self {
        Self {
            norm: LayerNorm::new(store, &format!("{name}.norm"), dim),
            ff: FeedForward::new(store, rng, name, dim, mult),
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: &Var<'t>) -> Result<Var<'t>> {
        Ok(x.add(&self.ff.forward(p, &self.norm.forward(p, x)?)?)?)
    }
}

/// Pre-norm residual cross-attention: `x + attn(LN(x), LN(ctx))`.
#[derive(Clone, Debug)]
pub struct CrossSublayer {
    pub q_norm: LayerNorm,
    pub kv_norm: LayerNorm,
    pub attn: Attention,
}

impl CrossSublayer {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        q_dim: usize,
        kv_dim: usize,
        inner: usize,
        heads: usize,
    ) -> Result<Self> {
        Ok(Self {
            q_norm: LayerNorm::new(store, &format!("{name}.q_norm"), q_dim),
            kv_norm: LayerNorm::new(store, &format!("{name}.kv_norm"), kv_dim),
            attn: Attention::new(store, rng, &format!("{name}.attn"), q_dim, kv_dim, inner, heads)?,
        })
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: &Var<'t>, ctx: &Var<'t>) -> Result<Var<'t>> {
        let stage = x.tape().stage();
        self.forward_staged(p, x, ctx, stage, stage)
    }

    /// Stage labels as in [`Attention::forward_staged`].
    pub fn forward_staged<'t>(
        &self,
        p: &Bound<'t>,
        x: &Var<'t>,
        ctx: &Var<'t>,
        query_stage: &'static str,
        context_stage: &'static str,
    ) -> Result<Var<'t>> {
        let q = self.q_norm.forward(p, x)?;
        let c = self.kv_norm.forward(p, ctx)?;
        Ok(x.add(&self.attn.forward_staged(p, &q, &c, query_stage, context_stage)?)?)
    }
}

/// Pre-norm residual self-attention: `x + attn(LN(x), LN(x))`.
#[derive(Clone, Debug)]
pub struct SelfSublayer {
    pub norm: LayerNorm,
    pub attn: Attention,
}

impl SelfSublayer {
    pub(crate) fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        dim: usize,
        heads: usize,
    ) -> Result<Self> {
        Ok(Self {
            norm: LayerNorm::new(store, &format!("{name}.norm"), dim),
            attn: Attention::new(store, rng, &format!("{name}.attn"), dim, dim, dim, heads)?,
        })
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: &Var<'t>) -> Result<Var<'t>> {
        let h = self.norm.forward(p, x)?;
        Ok(x.add(&self.attn.forward(p, &h, &h)?)?)
    }
}
