use super::{Result, Tensor, TensorError};

/// Default central-difference step for 64-bit evaluation.
pub const DEFAULT_FD_STEP: f64 = 1e-6;

fn checked(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(TensorError::NonFinite(format!(
            "objective returned {v} at {what}"
        )))
    }
}

/// Central-difference gradient of `f` with respect to every coordinate of
/// every tensor in `params`.
pub fn finite_diff_grad<F>(mut f: F, params: &[Tensor], h: f64) -> Result<Vec<Tensor>>
where
    F: FnMut(&[Tensor]) -> Result<f64>,
{
    let coords: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .flat_map(|(p, t)| (0..t.numel()).map(move |i| (p, i)))
        .collect();
    let flat = finite_diff_coords(&mut f, params, &coords, h)?;
    let mut out: Vec<Tensor> = params
        .iter()
        .map(|t| Tensor::zeros(t.shape().to_vec()))
        .collect();
    for ((p, i), g) in coords.into_iter().zip(flat) {
        out[p].data_mut()[i] = g;
    }
    Ok(out)
}

/// Central differences at selected `(tensor, flat index)` coordinates.
pub fn finite_diff_coords<F>(
    mut f: F,
    params: &[Tensor],
    coords: &[(usize, usize)],
    h: f64,
) -> Result<Vec<f64>>
where
    F: FnMut(&[Tensor]) -> Result<f64>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(TensorError::InvalidStep(h));
    }
    let mut work = params.to_vec();
    coords
        .iter()
        .map(|&(p, i)| {
            let orig = work[p].data()[i];
            work[p].data_mut()[i] = orig + h;
            let plus = checked(f(&work)?, "θ+h")?;
            work[p].data_mut()[i] = orig - h;
            let minus = checked(f(&work)?, "θ-h")?;
            work[p].data_mut()[i] = orig;
            Ok((plus - minus) / (2.0 * h))
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|, 1)`.
pub fn grad_rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let g = finite_diff_grad(
            |p| Ok(p[0].data()[0].powi(2)),
            &[Tensor::scalar(3.0)],
            DEFAULT_FD_STEP,
        )
        .unwrap();
        assert!((g[0].data()[0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn constant_has_zero_gradient() {
        let params = [Tensor::vector(vec![1.0, -2.0, 0.5])];
        let g = finite_diff_grad(|_| Ok(4.2), &params, DEFAULT_FD_STEP).unwrap();
        assert!(g[0].data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn rejects_bad_step_and_non_finite_objective() {
        let params = [Tensor::scalar(1.0)];
        assert!(matches!(
            finite_diff_grad(|_| Ok(0.0), &params, 0.0),
            Err(TensorError::InvalidStep(_))
        ));
        assert!(matches!(
            finite_diff_grad(|_| Ok(f64::NAN), &params, 1e-6),
            Err(TensorError::NonFinite(_))
        ));
    }
}
