//! Raw numeric kernels on flat row-major buffers.
//!
//! Every reduction accumulates in ascending index order starting from `0.0`,
//! so a result depends only on the participating values, never on how many
//! rows surround them. Sparse and dense code paths rely on this to agree bit
//! for bit.

/// `c = a · b` with `a: m×k`, `b: k×n`, `c: m×n` (overwritten).
pub fn gemm(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    c.fill(0.0);
    if n == 1 {
        for (i, out) in c.iter_mut().enumerate() {
            let row = &a[i * k..(i + 1) * k];
            let mut acc = 0.0;
            for (x, y) in row.iter().zip(b) {
                acc += x * y;
            }
            *out = acc;
        }
        return;
    }
    // Four output rows share each streamed row of `b`.
    let mut i = 0;
    while i + 4 <= m {
        let (c0, rest) = c[i * n..(i + 4) * n].split_at_mut(n);
        let (c1, rest) = rest.split_at_mut(n);
        let (c2, c3) = rest.split_at_mut(n);
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let a0 = a[i * k + p];
            let a1 = a[(i + 1) * k + p];
            let a2 = a[(i + 2) * k + p];
            let a3 = a[(i + 3) * k + p];
            for j in 0..n {
                let bj = brow[j];
                c0[j] += a0 * bj;
                c1[j] += a1 * bj;
                c2[j] += a2 * bj;
                c3[j] += a3 * bj;
            }
        }
        i += 4;
    }
    while i < m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (cj, bj) in crow.iter_mut().zip(brow) {
                *cj += aip * bj;
            }
        }
        i += 1;
    }
}

/// Transpose of a `rows×cols` matrix.
pub fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    const TILE: usize = 32;
    for r0 in (0..rows).step_by(TILE) {
        for c0 in (0..cols).step_by(TILE) {
            for r in r0..(r0 + TILE).min(rows) {
                for c in c0..(c0 + TILE).min(cols) {
                    out[c * rows + r] = a[r * cols + c];
                }
            }
        }
    }
    out
}

pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Numpy-style broadcast of two shapes.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
        let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// For every flat index of `out_shape`, the flat index into an operand of
/// shape `src` broadcast to `out_shape`.
pub fn broadcast_offsets(src: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let numel: usize = out_shape.iter().product();
    let src_numel: usize = src.iter().product();
    if src == out_shape {
        return (0..numel).collect();
    }
    if src_numel == 1 {
        return vec![0; numel];
    }
    // Suffix broadcast (e.g. a bias row added to every row of a matrix).
    let lead = out_shape.len() - src.len();
    if out_shape[lead..] == *src {
        return (0..numel).map(|i| i % src_numel).collect();
    }
    let n = out_shape.len();
    let src_strides = strides(src);
    let mut eff = vec![0; n];
    for i in 0..src.len() {
        let axis = lead + i;
        eff[axis] = if src[i] == 1 { 0 } else { src_strides[i] };
    }
    let mut idx = vec![0usize; n];
    let mut offsets = Vec::with_capacity(numel);
    let mut off = 0usize;
    for _ in 0..numel {
        offsets.push(off);
        for axis in (0..n).rev() {
            idx[axis] += 1;
            off += eff[axis];
            if idx[axis] < out_shape[axis] {
                break;
            }
            off -= eff[axis] * idx[axis];
            idx[axis] = 0;
        }
    }
    offsets
}

/// Sums `grad` (shape `out_shape`) back onto an operand of shape `src`.
pub fn reduce_broadcast(grad: &[f64], src: &[usize], out_shape: &[usize]) -> Vec<f64> {
    if src == out_shape {
        return grad.to_vec();
    }
    let src_numel: usize = src.iter().product();
    let mut out = vec![0.0; src_numel];
    let offsets = broadcast_offsets(src, out_shape);
    for (g, &o) in grad.iter().zip(&offsets) {
        out[o] += g;
    }
    out
}

/// General axis permutation: `out.shape[i] = shape[perm[i]]`.
pub fn permute(data: &[f64], shape: &[usize], perm: &[usize]) -> (Vec<usize>, Vec<f64>) {
    let n = shape.len();
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    if n == 2 && perm == [1, 0] {
        return (out_shape, transpose(data, shape[0], shape[1]));
    }
    let in_strides = strides(shape);
    let eff: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let numel = data.len();
    let mut out = Vec::with_capacity(numel);
    let mut idx = vec![0usize; n];
    let mut off = 0usize;
    // The innermost output axis is contiguous runs over `eff[n-1]`.
    let inner = out_shape[n - 1];
    let inner_stride = eff[n - 1];
    let outer = numel / inner;
    for _ in 0..outer {
        for j in 0..inner {
            out.push(data[off + j * inner_stride]);
        }
        for axis in (0..n - 1).rev() {
            idx[axis] += 1;
            off += eff[axis];
            if idx[axis] < out_shape[axis] {
                break;
            }
            off -= eff[axis] * idx[axis];
            idx[axis] = 0;
        }
    }
    (out_shape, out)
}

pub fn inverse_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// Reflect an out-of-range coordinate back into `[0, n)` without repeating
/// the edge sample.
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut r = i.rem_euclid(period);
    if r >= n as isize {
        r = period - r;
    }
    r as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_naive() {
        let (m, k, n) = (7, 5, 6);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let mut c = vec![0.0; m * n];
        gemm(&a, &b, &mut c, m, k, n);
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for p in 0..k {
                    acc += a[i * k + p] * b[p * n + j];
                }
                assert_eq!(acc.to_bits(), c[i * n + j].to_bits());
            }
        }
    }

    #[test]
    fn gemm_row_result_independent_of_row_count() {
        let (k, n) = (9, 5);
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.7).sin()).collect();
        let a: Vec<f64> = (0..6 * k).map(|i| (i as f64 * 0.3).cos()).collect();
        let mut full = vec![0.0; 6 * n];
        gemm(&a, &b, &mut full, 6, k, n);
        for r in 0..6 {
            let mut single = vec![0.0; n];
            gemm(&a[r * k..(r + 1) * k], &b, &mut single, 1, k, n);
            assert_eq!(&full[r * n..(r + 1) * n], &single[..]);
        }
    }

    #[test]
    fn reflect_indices() {
        assert_eq!(reflect_index(-1, 5), 1);
        assert_eq!(reflect_index(-2, 5), 2);
        assert_eq!(reflect_index(5, 5), 3);
        assert_eq!(reflect_index(6, 5), 2);
        assert_eq!(reflect_index(3, 5), 3);
        assert_eq!(reflect_index(-3, 1), 0);
    }

    #[test]
    fn permute_3d() {
        let shape = [2, 3, 4];
        let data: Vec<f64> = (0..24).map(|i| i as f64).collect();
        let (s, out) = permute(&data, &shape, &[2, 0, 1]);
        assert_eq!(s, vec![4, 2, 3]);
        // out[c][a][b] = in[a][b][c]
        for a in 0..2 {
            for b in 0..3 {
                for c in 0..4 {
                    assert_eq!(out[c * 6 + a * 3 + b], data[a * 12 + b * 4 + c]);
                }
            }
        }
    }

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shape(&[4, 3], &[3]), Some(vec![4, 3]));
        assert_eq!(broadcast_shape(&[4, 1], &[1, 5]), Some(vec![4, 5]));
        assert_eq!(broadcast_shape(&[], &[2, 2]), Some(vec![2, 2]));
        assert_eq!(broadcast_shape(&[4, 3], &[4]), None);
        let offs = broadcast_offsets(&[4, 1], &[4, 5]);
        assert_eq!(&offs[..6], &[0, 0, 0, 0, 0, 1]);
    }
}
