//! Vector-Jacobian products for every recorded operation.

use crate::kernels;
use crate::ops::{gelu_grad, matmul_values, patch_source, transpose_last};
use crate::tape::Op;
use crate::{Array, Result};

fn zip_map(a: &Array, b: &Array, f: impl Fn(f64, f64) -> f64) -> Array {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Array::from_parts(a.shape().to_vec(), data)
}

/// Gradient of a broadcast binary op for one operand.
fn binary_grad(grad: &Array, this: &Array, other: &Array, local: impl Fn(f64, f64, f64) -> f64) -> Array {
    let out_shape = grad.shape();
    let ot = kernels::broadcast_offsets(this.shape(), out_shape);
    let oo = kernels::broadcast_offsets(other.shape(), out_shape);
    let (dt, d_o) = (this.data(), other.data());
    let full: Vec<f64> =
        grad.data().iter().zip(ot.iter().zip(&oo)).map(|(&g, (&i, &j))| local(g, dt[i], d_o[j])).collect();
    Array::from_parts(this.shape().to_vec(), kernels::reduce_broadcast(&full, this.shape(), out_shape))
}

pub(crate) fn backward_op(
    op: &Op,
    inputs: &[&Array],
    out: &Array,
    grad: &Array,
    needs: &[bool],
) -> Result<Vec<Option<Array>>> {
    let need = |i: usize| needs.get(i).copied().unwrap_or(false);
    let x = inputs.first().copied();
    let grads = match op {
        Op::Leaf => Vec::new(),
        Op::Add | Op::Sub | Op::Mul | Op::Div => {
            let (a, b) = (inputs[0], inputs[1]);
            let ga = need(0).then(|| match op {
                Op::Add | Op::Sub => binary_grad(grad, a, b, |g, _, _| g),
                Op::Mul => binary_grad(grad, a, b, |g, _, y| g * y),
                _ => binary_grad(grad, a, b, |g, _, y| g / y),
            });
            let gb = need(1).then(|| match op {
                Op::Add => binary_grad(grad, b, a, |g, _, _| g),
                Op::Sub => binary_grad(grad, b, a, |g, _, _| -g),
                Op::Mul => binary_grad(grad, b, a, |g, _, x| g * x),
                _ => binary_grad(grad, b, a, |g, y, x| -g * x / (y * y)),
            });
            vec![ga, gb]
        }
        Op::Neg => vec![Some(grad.map(|g| -g))],
        Op::Scale(s) => vec![Some(grad.map(|g| g * s))],
        Op::AddScalar => vec![Some(grad.clone())],
        Op::Exp => vec![Some(zip_map(grad, out, |g, y| g * y))],
        Op::Log => vec![Some(zip_map(grad, x.unwrap(), |g, x| g / x))],
        Op::Sqrt => vec![Some(zip_map(grad, out, |g, y| 0.5 * g / y))],
        Op::PowF(p) => vec![Some(zip_map(grad, x.unwrap(), |g, x| g * p * x.powf(p - 1.0)))],
        Op::Sin => vec![Some(zip_map(grad, x.unwrap(), |g, x| g * x.cos()))],
        Op::Cos => vec![Some(zip_map(grad, x.unwrap(), |g, x| -g * x.sin()))],
        Op::Gelu => vec![Some(zip_map(grad, x.unwrap(), |g, x| g * gelu_grad(x)))],
        Op::Elementwise { derivative } => {
            vec![Some(zip_map(grad, x.unwrap(), |g, x| g * derivative(x)))]
        }
        Op::MatMul => {
            let (a, b) = (inputs[0], inputs[1]);
            let ga = if need(0) { Some(matmul_values(grad, &transpose_last(b))?.0) } else { None };
            let gb = if need(1) { Some(matmul_values(&transpose_last(a), grad)?.0) } else { None };
            vec![ga, gb]
        }
        Op::Reshape => vec![Some(grad.clone().reshaped(x.unwrap().shape().to_vec())?)],
        Op::Permute(perm) => {
            let inv = kernels::inverse_permutation(perm);
            let (shape, data) = kernels::permute(grad.data(), grad.shape(), &inv);
            vec![Some(Array::from_parts(shape, data))]
        }
        Op::Concat { axis } => {
            let shape = grad.shape();
            let outer: usize = shape[..*axis].iter().product();
            let inner: usize = shape[axis + 1..].iter().product();
            let total = shape[*axis];
            let mut start = 0;
            let mut result = Vec::with_capacity(inputs.len());
            for (i, inp) in inputs.iter().enumerate() {
                let len = inp.shape()[*axis];
                if need(i) {
                    let mut data = Vec::with_capacity(inp.len());
                    for o in 0..outer {
                        let base = (o * total + start) * inner;
                        data.extend_from_slice(&grad.data()[base..base + len * inner]);
                    }
                    result.push(Some(Array::from_parts(inp.shape().to_vec(), data)));
                } else {
                    result.push(None);
                }
                start += len;
            }
            result
        }
        Op::Gather { index } => {
            let src = x.unwrap();
            let row: usize = src.shape()[1..].iter().product();
            let mut data = vec![0.0; src.len()];
            for (r, &i) in index.iter().enumerate() {
                let g = &grad.data()[r * row..(r + 1) * row];
                for (d, v) in data[i * row..(i + 1) * row].iter_mut().zip(g) {
                    *d += v;
                }
            }
            vec![Some(Array::from_parts(src.shape().to_vec(), data))]
        }
        Op::Softmax => {
            let n = *out.shape().last().unwrap();
            let mut data = Vec::with_capacity(out.len());
            for (y, g) in out.data().chunks(n).zip(grad.data().chunks(n)) {
                let dot: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
                data.extend(y.iter().zip(g).map(|(&y, &g)| y * (g - dot)));
            }
            vec![Some(Array::from_parts(out.shape().to_vec(), data))]
        }
        Op::LayerNorm { rstd } => {
            let n = *out.shape().last().unwrap();
            let mut data = Vec::with_capacity(out.len());
            for ((y, g), &r) in out.data().chunks(n).zip(grad.data().chunks(n)).zip(rstd) {
                let mean_g = g.iter().sum::<f64>() / n as f64;
                let mean_gy = g.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                data.extend(y.iter().zip(g).map(|(&y, &g)| r * (g - mean_g - y * mean_gy)));
            }
            vec![Some(Array::from_parts(out.shape().to_vec(), data))]
        }
        Op::SumAll => vec![Some(Array::full(x.unwrap().shape().to_vec(), grad.data()[0]))],
        Op::MeanAll => {
            let src = x.unwrap();
            vec![Some(Array::full(src.shape().to_vec(), grad.data()[0] / src.len() as f64))]
        }
        Op::SumAxis { axis } | Op::MeanAxis { axis } => {
            let src = x.unwrap();
            let shape = src.shape();
            let outer: usize = shape[..*axis].iter().product();
            let len = shape[*axis];
            let inner: usize = shape[axis + 1..].iter().product();
            let scale = if matches!(op, Op::MeanAxis { .. }) { 1.0 / len as f64 } else { 1.0 };
            let mut data = Vec::with_capacity(src.len());
            for o in 0..outer {
                let g = &grad.data()[o * inner..(o + 1) * inner];
                for _ in 0..len {
                    data.extend(g.iter().map(|v| v * scale));
                }
            }
            vec![Some(Array::from_parts(shape.to_vec(), data))]
        }
        Op::Im2Col { spec, positions } => {
            let src = x.unwrap();
            let (h, w, c) = (src.shape()[0], src.shape()[1], src.shape()[2]);
            let k = spec.kernel;
            let cols = k * k * c;
            let mut data = vec![0.0; src.len()];
            for (r, &(oy, ox)) in positions.iter().enumerate() {
                let g = &grad.data()[r * cols..(r + 1) * cols];
                for ky in 0..k {
                    for kx in 0..k {
                        if let Some((y, x)) = patch_source(spec, h, w, oy, ox, ky, kx) {
                            let s = (ky * k + kx) * c;
                            let d = (y * w + x) * c;
                            for ch in 0..c {
                                data[d + ch] += g[s + ch];
                            }
                        }
                    }
                }
            }
            vec![Some(Array::from_parts(src.shape().to_vec(), data))]
        }
        Op::UpsampleNearest { factor } => {
            let src = x.unwrap();
            let (h, w, c) = (src.shape()[0], src.shape()[1], src.shape()[2]);
            let ow = w * factor;
            let mut data = vec![0.0; src.len()];
            for y in 0..h * factor {
                for xx in 0..ow {
                    let d = ((y / factor) * w + xx / factor) * c;
                    let s = (y * ow + xx) * c;
                    for ch in 0..c {
                        data[d + ch] += grad.data()[s + ch];
                    }
                }
            }
            vec![Some(Array::from_parts(src.shape().to_vec(), data))]
        }
    };
    Ok(grads)
}
