//! Raw slice kernels shared by [`Tensor`](super::Tensor) and the tape.

use super::{Result, TensorError};

/// `c (+)= op(a) · op(b)` where `op(a)` is `m×k` and `op(b)` is `k×n`.
///
/// With `trans_a` the buffer `a` holds a `k×m` matrix, with `trans_b` the
/// buffer `b` holds an `n×k` matrix. `accumulate` adds into `c` instead of
/// overwriting it.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.fill(0.0);
        }
        return;
    }
    let (rsa, csa) = if trans_a { (1, m) } else { (k, 1) };
    let (rsb, csb) = if trans_b { (1, k) } else { (n, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the pointers cover exactly the m×k, k×n and m×n extents described
    // by the strides, which the debug assertions above check.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub(crate) fn softmax_masked(logits: &[f64], width: usize, mask: &[bool]) -> Result<Vec<f64>> {
    if mask.len() != logits.len() {
        return Err(TensorError::MaskLength {
            expected: logits.len(),
            actual: mask.len(),
        });
    }
    let mut out = vec![0.0; logits.len()];
    if width == 0 {
        return Ok(out);
    }
    for (row, ((x, m), o)) in logits
        .chunks_exact(width)
        .zip(mask.chunks_exact(width))
        .zip(out.chunks_exact_mut(width))
        .enumerate()
    {
        let max = x
            .iter()
            .zip(m)
            .filter(|(_, keep)| **keep)
            .map(|(v, _)| *v)
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(TensorError::FullyMasked { row });
        }
        let mut denom = 0.0;
        for ((xi, keep), oi) in x.iter().zip(m).zip(o.iter_mut()) {
            if *keep {
                *oi = (xi - max).exp();
                denom += *oi;
            }
        }
        for (oi, keep) in o.iter_mut().zip(m) {
            if *keep {
                *oi /= denom;
            }
        }
    }
    Ok(out)
}

/// Output shape and per-part widths for a last-axis concatenation.
pub(crate) fn concat_last_shape(shapes: &[&[usize]]) -> Result<(Vec<usize>, Vec<usize>)> {
    let first = shapes.first().ok_or(TensorError::Rank {
        op: "concat_last_axis",
        expected: 1,
        shape: vec![],
    })?;
    if first.is_empty() {
        return Err(TensorError::Rank {
            op: "concat_last_axis",
            expected: 1,
            shape: vec![],
        });
    }
    let lead = &first[..first.len() - 1];
    let mut widths = Vec::with_capacity(shapes.len());
    for s in shapes {
        if s.is_empty() || &s[..s.len() - 1] != lead {
            return Err(TensorError::ShapeMismatch {
                op: "concat_last_axis",
                left: first.to_vec(),
                right: s.to_vec(),
            });
        }
        widths.push(s[s.len() - 1]);
    }
    let mut shape = lead.to_vec();
    shape.push(widths.iter().sum());
    Ok((shape, widths))
}

pub(crate) fn concat_last(parts: &[&[f64]], widths: &[usize]) -> Vec<f64> {
    let total: usize = widths.iter().sum();
    let rows = match widths.iter().position(|&w| w > 0) {
        Some(i) => parts[i].len() / widths[i],
        None => return Vec::new(),
    };
    let mut out = Vec::with_capacity(rows * total);
    for r in 0..rows {
        for (p, &w) in parts.iter().zip(widths) {
            out.extend_from_slice(&p[r * w..(r + 1) * w]);
        }
    }
    out
}

pub(crate) fn slice_last(data: &[f64], width: usize, start: usize, len: usize) -> Vec<f64> {
    if width == 0 {
        return Vec::new();
    }
    data.chunks_exact(width)
        .flat_map(|row| row[start..start + len].iter().copied())
        .collect()
}
