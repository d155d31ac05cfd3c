//! Layer-level compositions of primitive operations.

use crate::tape::PatchSpec;
use crate::{Error, Result, Var};

/// `x·w + b` for `x: [n, in]`, `w: [in, out]`, `b: [out]`.
pub fn linear<'t>(x: &Var<'t>, w: &Var<'t>, b: Option<&Var<'t>>) -> Result<Var<'t>> {
    let y = x.matmul(w)?;
    match b {
        Some(b) => y.add(b),
        None => Ok(y),
    }
}

/// 2-D convolution of an `H×W×C` input with `w: [k·k·C, C_out]`, laid out
/// (ky, kx, c) to match [`Var::im2col`]. Returns `H_out×W_out×C_out`.
pub fn conv2d<'t>(input: &Var<'t>, w: &Var<'t>, b: Option<&Var<'t>>, spec: PatchSpec) -> Result<Var<'t>> {
    let (h, wd) = match input.shape() {
        &[h, w, _] => (h, w),
        s => return Err(Error::InvalidArgument { op: "conv2d", msg: format!("expected H×W×C input, got {s:?}") }),
    };
    let (oh, ow) = spec.output_dims(h, wd);
    let cols = input.im2col(spec)?;
    let out = linear(&cols, w, b)?;
    let c_out = out.shape()[1];
    out.reshape([oh, ow, c_out])
}
