//! Forward operations on [`Var`].

use std::rc::Rc;

use crate::kernels;
use crate::tape::{Op, PadMode, PatchSpec};
use crate::{Array, Error, Result, Var};

pub(crate) const LAYER_NORM_EPS: f64 = 1e-5;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let th = u.tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn binary(op_name: &'static str, a: &Array, b: &Array, f: impl Fn(f64, f64) -> f64) -> Result<Array> {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Ok(Array::from_parts(a.shape().to_vec(), data));
    }
    let out_shape = kernels::broadcast_shape(a.shape(), b.shape()).ok_or_else(|| Error::ShapeMismatch {
        op: op_name,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    })?;
    let oa = kernels::broadcast_offsets(a.shape(), &out_shape);
    let ob = kernels::broadcast_offsets(b.shape(), &out_shape);
    let (da, db) = (a.data(), b.data());
    let data = oa.iter().zip(&ob).map(|(&i, &j)| f(da[i], db[j])).collect();
    Ok(Array::from_parts(out_shape, data))
}

/// Matrix product of 2-D or batched 3-D operands.
pub(crate) fn matmul_values(a: &Array, b: &Array) -> Result<(Array, u64)> {
    let mismatch = || Error::ShapeMismatch { op: "matmul", lhs: a.shape().to_vec(), rhs: b.shape().to_vec() };
    match (a.shape(), b.shape()) {
        (&[m, k], &[k2, n]) => {
            if k != k2 {
                return Err(mismatch());
            }
            let mut c = vec![0.0; m * n];
            kernels::gemm(a.data(), b.data(), &mut c, m, k, n);
            Ok((Array::from_parts(vec![m, n], c), (2 * m * k * n) as u64))
        }
        (&[batch, m, k], &[batch2, k2, n]) => {
            if k != k2 || batch != batch2 {
                return Err(mismatch());
            }
            let mut c = vec![0.0; batch * m * n];
            for bi in 0..batch {
                kernels::gemm(
                    &a.data()[bi * m * k..(bi + 1) * m * k],
                    &b.data()[bi * k * n..(bi + 1) * k * n],
                    &mut c[bi * m * n..(bi + 1) * m * n],
                    m,
                    k,
                    n,
                );
            }
            Ok((Array::from_parts(vec![batch, m, n], c), (2 * batch * m * k * n) as u64))
        }
        _ => Err(mismatch()),
    }
}

/// Swap the last two axes of a 2-D or 3-D array.
pub(crate) fn transpose_last(a: &Array) -> Array {
    let s = a.shape();
    match s.len() {
        2 => Array::from_parts(vec![s[1], s[0]], kernels::transpose(a.data(), s[0], s[1])),
        3 => {
            let (b, r, c) = (s[0], s[1], s[2]);
            let mut out = Vec::with_capacity(a.len());
            for bi in 0..b {
                out.extend(kernels::transpose(&a.data()[bi * r * c..(bi + 1) * r * c], r, c));
            }
            Array::from_parts(vec![b, c, r], out)
        }
        _ => unreachable!("matmul operands are 2-D or 3-D"),
    }
}

/// Source pixel (row, col) for kernel tap (ky, kx) of output position
/// (oy, ox), or `None` when it falls in zero padding.
pub(crate) fn patch_source(
    spec: &PatchSpec,
    h: usize,
    w: usize,
    oy: usize,
    ox: usize,
    ky: usize,
    kx: usize,
) -> Option<(usize, usize)> {
    let y = (oy * spec.stride + ky) as isize - spec.pad as isize;
    let x = (ox * spec.stride + kx) as isize - spec.pad as isize;
    match spec.mode {
        PadMode::Zero => {
            if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
                None
            } else {
                Some((y as usize, x as usize))
            }
        }
        PadMode::Reflect => Some((kernels::reflect_index(y, h), kernels::reflect_index(x, w))),
    }
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<'t> Var<'t> {
    fn unary(&self, op: Op, f: impl Fn(f64) -> f64) -> Result<Var<'t>> {
        let v = self.value.map(f);
        self.tape.record(op, &[self], v)
    }

    pub fn add(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let v = binary("add", &self.value, &other.value, |x, y| x + y)?;
        self.tape.record(Op::Add, &[self, other], v)
    }

    pub fn sub(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let v = binary("sub", &self.value, &other.value, |x, y| x - y)?;
        self.tape.record(Op::Sub, &[self, other], v)
    }

    pub fn mul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let v = binary("mul", &self.value, &other.value, |x, y| x * y)?;
        self.tape.record(Op::Mul, &[self, other], v)
    }

    pub fn div(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let v = binary("div", &self.value, &other.value, |x, y| x / y)?;
        self.tape.record(Op::Div, &[self, other], v)
    }

    pub fn neg(&self) -> Result<Var<'t>> {
        self.unary(Op::Neg, |x| -x)
    }

    pub fn scale(&self, s: f64) -> Result<Var<'t>> {
        self.unary(Op::Scale(s), |x| x * s)
    }

    pub fn add_scalar(&self, s: f64) -> Result<Var<'t>> {
        self.unary(Op::AddScalar, |x| x + s)
    }

    pub fn exp(&self) -> Result<Var<'t>> {
        self.unary(Op::Exp, f64::exp)
    }

    pub fn log(&self) -> Result<Var<'t>> {
        self.unary(Op::Log, f64::ln)
    }

    pub fn sqrt(&self) -> Result<Var<'t>> {
        self.unary(Op::Sqrt, f64::sqrt)
    }

    pub fn powf(&self, p: f64) -> Result<Var<'t>> {
        self.unary(Op::PowF(p), |x| x.powf(p))
    }

    pub fn square(&self) -> Result<Var<'t>> {
        self.mul(self)
    }

    pub fn sin(&self) -> Result<Var<'t>> {
        self.unary(Op::Sin, f64::sin)
    }

    pub fn cos(&self) -> Result<Var<'t>> {
        self.unary(Op::Cos, f64::cos)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&self) -> Result<Var<'t>> {
        self.unary(Op::Gelu, gelu)
    }

    /// Elementwise map with a caller-supplied derivative.
    pub fn map_elementwise(&self, forward: fn(f64) -> f64, derivative: fn(f64) -> f64) -> Result<Var<'t>> {
        self.unary(Op::Elementwise { derivative }, forward)
    }

    /// `[m,k]·[k,n]` or batched `[b,m,k]·[b,k,n]`.
    pub fn matmul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let (v, flops) = matmul_values(&self.value, &other.value)?;
        self.tape.count_flops(flops);
        self.tape.record(Op::MatMul, &[self, other], v)
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Var<'t>> {
        let v = (*self.value).clone().reshaped(shape)?;
        self.tape.record(Op::Reshape, &[self], v)
    }

    /// Axis permutation with `out.shape[i] = self.shape[perm[i]]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Var<'t>> {
        let n = self.value.ndim();
        let mut seen = vec![false; n];
        let valid = perm.len() == n && perm.iter().all(|&p| p < n && !std::mem::replace(&mut seen[p], true));
        if !valid {
            return Err(Error::InvalidArgument {
                op: "permute",
                msg: format!("{perm:?} is not a permutation of {n} axes"),
            });
        }
        let (shape, data) = kernels::permute(self.value.data(), self.value.shape(), perm);
        self.tape.record(Op::Permute(perm.to_vec()), &[self], Array::from_parts(shape, data))
    }

    /// Swap the last two axes.
    pub fn transpose(&self) -> Result<Var<'t>> {
        let n = self.value.ndim();
        if n < 2 {
            return Err(Error::InvalidArgument {
                op: "transpose",
                msg: format!("needs at least 2 axes, got shape {:?}", self.shape()),
            });
        }
        let mut perm: Vec<usize> = (0..n).collect();
        perm.swap(n - 2, n - 1);
        self.permute(&perm)
    }

    /// Concatenate along `axis`; all other extents must agree.
    pub fn concat(parts: &[&Var<'t>], axis: usize) -> Result<Var<'t>> {
        let first = parts.first().ok_or(Error::InvalidArgument { op: "concat", msg: "no inputs".into() })?;
        let base = first.shape();
        if axis >= base.len() {
            return Err(Error::InvalidArgument {
                op: "concat",
                msg: format!("axis {axis} out of range for shape {base:?}"),
            });
        }
        for p in &parts[1..] {
            let s = p.shape();
            let compatible =
                s.len() == base.len() && s.iter().zip(base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::ShapeMismatch { op: "concat", lhs: base.to_vec(), rhs: s.to_vec() });
            }
        }
        let (outer, _, inner) = axis_split(base, axis);
        let total: usize = parts.iter().map(|p| p.shape()[axis]).sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let chunk = p.shape()[axis] * inner;
                data.extend_from_slice(&p.value.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base.to_vec();
        shape[axis] = total;
        first.tape.record(Op::Concat { axis }, parts, Array::from_parts(shape, data))
    }

    /// Rows `index` along axis 0. Out-of-range indices are an error.
    pub fn gather(&self, index: &[usize]) -> Result<Var<'t>> {
        let shape = self.shape();
        if shape.is_empty() || index.is_empty() {
            return Err(Error::InvalidArgument {
                op: "gather",
                msg: format!("cannot gather {} rows from shape {shape:?}", index.len()),
            });
        }
        let rows = shape[0];
        let row: usize = shape[1..].iter().product();
        let mut data = Vec::with_capacity(index.len() * row);
        for &i in index {
            if i >= rows {
                return Err(Error::IndexOutOfRange { op: "gather", index: i, len: rows });
            }
            data.extend_from_slice(&self.value.data()[i * row..(i + 1) * row]);
        }
        let mut out_shape = shape.to_vec();
        out_shape[0] = index.len();
        self.tape.record(Op::Gather { index: Rc::new(index.to_vec()) }, &[self], Array::from_parts(out_shape, data))
    }

    /// Softmax over the last axis, computed with max subtraction.
    pub fn softmax(&self) -> Result<Var<'t>> {
        let shape = self.shape();
        let n = *shape.last().ok_or(Error::InvalidArgument { op: "softmax", msg: "scalar input".into() })?;
        let mut data = self.value.data().to_vec();
        for row in data.chunks_mut(n) {
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        self.tape.record(Op::Softmax, &[self], Array::from_parts(shape.to_vec(), data))
    }

    /// Normalise over the last axis to zero mean and unit variance (no affine).
    pub fn layer_norm(&self) -> Result<Var<'t>> {
        let shape = self.shape();
        let n = *shape.last().ok_or(Error::InvalidArgument { op: "layer_norm", msg: "scalar input".into() })?;
        let mut data = self.value.data().to_vec();
        let mut rstd = Vec::with_capacity(data.len() / n);
        for row in data.chunks_mut(n) {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let r = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * r;
            }
            rstd.push(r);
        }
        self.tape.record(Op::LayerNorm { rstd }, &[self], Array::from_parts(shape.to_vec(), data))
    }

    pub fn sum(&self) -> Result<Var<'t>> {
        let s = self.value.data().iter().sum();
        self.tape.record(Op::SumAll, &[self], Array::scalar(s))
    }

    pub fn mean(&self) -> Result<Var<'t>> {
        let s: f64 = self.value.data().iter().sum();
        self.tape.record(Op::MeanAll, &[self], Array::scalar(s / self.value.len() as f64))
    }

    fn reduce_axis(&self, axis: usize, mean: bool) -> Result<Var<'t>> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(Error::InvalidArgument {
                op: "sum_axis",
                msg: format!("axis {axis} out of range for shape {shape:?}"),
            });
        }
        let (outer, len, inner) = axis_split(shape, axis);
        let d = self.value.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..len {
                let src = &d[(o * len + a) * inner..(o * len + a + 1) * inner];
                for (acc, v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *acc += v;
                }
            }
        }
        if mean {
            for v in &mut out {
                *v /= len as f64;
            }
        }
        let mut out_shape = shape.to_vec();
        out_shape.remove(axis);
        let op = if mean { Op::MeanAxis { axis } } else { Op::SumAxis { axis } };
        self.tape.record(op, &[self], Array::from_parts(out_shape, out))
    }

    /// Sum over `axis`, removing it.
    pub fn sum_axis(&self, axis: usize) -> Result<Var<'t>> {
        self.reduce_axis(axis, false)
    }

    /// Mean over `axis`, removing it.
    pub fn mean_axis(&self, axis: usize) -> Result<Var<'t>> {
        self.reduce_axis(axis, true)
    }

    /// Patches of an `H×W×C` input at every output position of `spec`,
    /// as a `[positions, kernel·kernel·C]` matrix ordered (ky, kx, c).
    pub fn im2col(&self, spec: PatchSpec) -> Result<Var<'t>> {
        let (h, w) = self.hwc("im2col")?;
        if spec.kernel == 0 || spec.stride == 0 || h + 2 * spec.pad < spec.kernel || w + 2 * spec.pad < spec.kernel {
            return Err(Error::InvalidArgument {
                op: "im2col",
                msg: format!("{spec:?} does not fit input {:?}", self.shape()),
            });
        }
        let (oh, ow) = spec.output_dims(h, w);
        let positions: Vec<(usize, usize)> = (0..oh).flat_map(|y| (0..ow).map(move |x| (y, x))).collect();
        self.im2col_at(spec, &positions)
    }

    /// Patches only at the given output positions `(row, col)`.
    pub fn im2col_at(&self, spec: PatchSpec, positions: &[(usize, usize)]) -> Result<Var<'t>> {
        let (h, w) = self.hwc("im2col")?;
        let c = self.shape()[2];
        let (oh, ow) = spec.output_dims(h, w);
        if positions.is_empty() {
            return Err(Error::InvalidArgument { op: "im2col", msg: "no positions".into() });
        }
        let k = spec.kernel;
        let cols = k * k * c;
        let src = self.value.data();
        let mut data = vec![0.0; positions.len() * cols];
        for (r, &(oy, ox)) in positions.iter().enumerate() {
            if oy >= oh || ox >= ow {
                return Err(Error::IndexOutOfRange { op: "im2col", index: oy * ow + ox, len: oh * ow });
            }
            let row = &mut data[r * cols..(r + 1) * cols];
            for ky in 0..k {
                for kx in 0..k {
                    if let Some((y, x)) = patch_source(&spec, h, w, oy, ox, ky, kx) {
                        let dst = (ky * k + kx) * c;
                        row[dst..dst + c].copy_from_slice(&src[(y * w + x) * c..(y * w + x + 1) * c]);
                    }
                }
            }
        }
        self.tape.record(
            Op::Im2Col { spec, positions: Rc::new(positions.to_vec()) },
            &[self],
            Array::from_parts(vec![positions.len(), cols], data),
        )
    }

    /// Nearest-neighbour upsampling of an `H×W×C` input by an integer factor.
    pub fn upsample_nearest(&self, factor: usize) -> Result<Var<'t>> {
        let (h, w) = self.hwc("upsample_nearest")?;
        let c = self.shape()[2];
        if factor == 0 {
            return Err(Error::InvalidArgument { op: "upsample_nearest", msg: "factor 0".into() });
        }
        let (oh, ow) = (h * factor, w * factor);
        let src = self.value.data();
        let mut data = Vec::with_capacity(oh * ow * c);
        for y in 0..oh {
            for x in 0..ow {
                let s = ((y / factor) * w + x / factor) * c;
                data.extend_from_slice(&src[s..s + c]);
            }
        }
        self.tape.record(Op::UpsampleNearest { factor }, &[self], Array::from_parts(vec![oh, ow, c], data))
    }

    fn hwc(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape() {
            &[h, w, _] => Ok((h, w)),
            s => Err(Error::InvalidArgument { op, msg: format!("expected H×W×C input, got {s:?}") }),
        }
    }
}

#[cfg(test)]
mod tests {
    use crate::{Array, Error, Tape};

    fn arr(shape: &[usize], data: &[f64]) -> Array {
        Array::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn identity_matmul_returns_operand() {
        let t = Tape::new();
        let a = t.constant(arr(&[3, 2], &[1.0, -2.0, 3.5, 0.0, 7.0, 1e-3]));
        let i = t.constant(Array::eye(3));
        assert_eq!(i.matmul(&a).unwrap().value(), a.value());
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let t = Tape::new();
        let y = t.constant(Array::zeros([3])).softmax().unwrap();
        for v in y.value().data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_survives_large_logits() {
        let t = Tape::new();
        let y = t.constant(arr(&[2], &[1000.0, 1000.0])).softmax().unwrap();
        assert_eq!(y.value().data(), &[0.5, 0.5]);
    }

    #[test]
    fn layer_norm_of_constant_is_zero() {
        let t = Tape::new();
        let y = t.constant(Array::full([2, 4], 3.25)).layer_norm().unwrap();
        assert!(y.value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn broadcast_add_of_row() {
        let t = Tape::new();
        let a = t.constant(arr(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let b = t.constant(arr(&[3], &[10.0, 20.0, 30.0]));
        let y = a.add(&b).unwrap();
        assert_eq!(y.value().data(), &[11.0, 22.0, 33.0, 14.0, 25.0, 36.0]);
    }

    #[test]
    fn mismatched_shapes_name_op_and_shapes() {
        let t = Tape::new();
        let a = t.constant(Array::zeros([2, 3]));
        let b = t.constant(Array::zeros([4]));
        match a.mul(&b) {
            Err(Error::ShapeMismatch { op, lhs, rhs }) => {
                assert_eq!(op, "mul");
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![4]);
            }
            other => panic!("unexpected {other:?}"),
        }
        let msg = a.matmul(&b).unwrap_err().to_string();
        assert!(msg.contains("matmul") && msg.contains("[2, 3]") && msg.contains("[4]"));
    }

    #[test]
    fn gather_out_of_range_is_an_error() {
        let t = Tape::new();
        let a = t.constant(Array::zeros([3, 2]));
        assert!(matches!(a.gather(&[0, 3]), Err(Error::IndexOutOfRange { op: "gather", index: 3, len: 3 })));
    }

    #[test]
    fn gather_selects_rows() {
        let t = Tape::new();
        let a = t.constant(arr(&[3, 2], &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]));
        let y = a.gather(&[2, 0, 2]).unwrap();
        assert_eq!(y.shape(), &[3, 2]);
        assert_eq!(y.value().data(), &[4.0, 5.0, 0.0, 1.0, 4.0, 5.0]);
    }

    #[test]
    fn concat_along_inner_axis() {
        let t = Tape::new();
        let a = t.constant(arr(&[2, 1], &[1.0, 2.0]));
        let b = t.constant(arr(&[2, 2], &[3.0, 4.0, 5.0, 6.0]));
        let y = crate::Var::concat(&[&a, &b], 1).unwrap();
        assert_eq!(y.shape(), &[2, 3]);
        assert_eq!(y.value().data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
    }

    #[test]
    fn im2col_reflect_matches_manual_patch() {
        let t = Tape::new();
        // 3×3 single-channel image with values 0..9.
        let img = t.constant(arr(&[3, 3, 1], &(0..9).map(f64::from).collect::<Vec<_>>()));
        let spec = crate::PatchSpec::same(3, crate::PadMode::Reflect);
        let cols = img.im2col_at(spec, &[(0, 0)]).unwrap();
        // Row -1 reflects to row 1, col -1 to col 1.
        assert_eq!(cols.value().data(), &[4.0, 3.0, 4.0, 1.0, 0.0, 1.0, 4.0, 3.0, 4.0]);
        let zero = img.im2col_at(crate::PatchSpec::same(3, crate::PadMode::Zero), &[(0, 0)]).unwrap();
        assert_eq!(zero.value().data(), &[0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 3.0, 4.0]);
    }

    #[test]
    fn upsample_repeats_pixels() {
        let t = Tape::new();
        let img = t.constant(arr(&[1, 2, 1], &[1.0, 2.0]));
        let y = img.upsample_nearest(2).unwrap();
        assert_eq!(y.shape(), &[2, 4, 1]);
        assert_eq!(y.value().data(), &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let t = Tape::new();
        let p = t.param(Array::full([2, 3, 2], 0.7));
        let g = t.backward(&p.sum().unwrap()).unwrap();
        assert_eq!(g.wrt(&p), Array::ones([2, 3, 2]));
    }

    #[test]
    fn square_sum_gradient() {
        let t = Tape::new();
        let p = t.param(arr(&[3], &[1.0, 2.0, 3.0]));
        let g = t.backward(&p.square().unwrap().sum().unwrap()).unwrap();
        assert_eq!(g.wrt(&p).data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn unused_parameter_gets_zero_gradient() {
        let t = Tape::new();
        let p = t.param(arr(&[2], &[1.0, 2.0]));
        let q = t.param(Array::ones([4]));
        let g = t.backward(&p.sum().unwrap()).unwrap();
        assert!(g.get(&q).is_none());
        assert_eq!(g.wrt(&q), Array::zeros([4]));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let t = Tape::new();
        let p = t.param(Array::ones([2]));
        assert!(matches!(t.backward(&p), Err(Error::NonScalarLoss(s)) if s == vec![2]));
    }

    #[test]
    fn no_grad_tape_records_nothing() {
        let t = Tape::no_grad();
        let p = t.param(Array::ones([4, 4]));
        let _ = p.matmul(&p).unwrap().sum().unwrap();
        assert!(t.is_empty());
        assert!(!p.requires_grad());
    }

    #[test]
    fn matmul_flops_are_counted_by_stage() {
        let t = Tape::no_grad();
        let a = t.constant(Array::ones([2, 3]));
        let b = t.constant(Array::ones([3, 5]));
        t.set_stage("read");
        a.matmul(&b).unwrap();
        t.set_stage("write");
        a.matmul(&b).unwrap();
        a.matmul(&b).unwrap();
        let f = t.flops();
        assert_eq!(f["read"], 60);
        assert_eq!(f["write"], 120);
    }
}
