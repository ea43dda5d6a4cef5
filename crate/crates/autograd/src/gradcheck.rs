use crate::error::{Result, TensorError};
use crate::tape::{Tape, ValueId};
use crate::tensor::Tensor;

/// Default perturbation for central differences.
pub const DEFAULT_EPS: f64 = 1e-5;

/// Max over coordinates of `|analytic − numeric| / max(1, |numeric|)`.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / n.abs().max(1.0))
        .fold(0.0, f64::max)
}

/// Check the tape gradient of a scalar-valued tensor function against
/// central finite differences.
///
/// `f` must be deterministic; it is evaluated twice at `x` and a bitwise
/// output mismatch is a contract error (e.g. unseeded dropout).
/// Returns the max relative error over all coordinates of `x`.
pub fn finite_diff_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, ValueId) -> Result<ValueId>,
{
    let eval = |data: &[f64]| -> Result<f64> {
        let mut tape = Tape::new();
        let t = Tensor::new(data.to_vec(), x.shape())?;
        let id = tape.leaf(&t);
        let out = f(&mut tape, id)?;
        if tape.value(out).len() != 1 {
            return Err(TensorError::Contract(
                "finite_diff_check requires a scalar-valued function".into(),
            ));
        }
        Ok(tape.value(out)[0])
    };

    let first = eval(x.data())?;
    let second = eval(x.data())?;
    if first.to_bits() != second.to_bits() {
        return Err(TensorError::Contract(
            "finite_diff_check requires a deterministic function".into(),
        ));
    }

    // Analytic gradient from one recorded tape.
    let mut tape = Tape::new();
    let leaf_tensor = Tensor::new(x.data().to_vec(), x.shape())?.with_requires_grad();
    let id = tape.leaf(&leaf_tensor);
    let out = f(&mut tape, id)?;
    let grads = tape.backward(out)?;
    let analytic = grads
        .get(id)
        .ok_or_else(|| TensorError::Contract("leaf missing gradient".into()))?
        .to_vec();

    let mut numeric = vec![0.0; x.numel()];
    let mut probe = x.data().to_vec();
    for i in 0..probe.len() {
        let orig = probe[i];
        probe[i] = orig + eps;
        let plus = eval(&probe)?;
        probe[i] = orig - eps;
        let minus = eval(&probe)?;
        probe[i] = orig;
        numeric[i] = (plus - minus) / (2.0 * eps);
    }

    Ok(relative_error(&analytic, &numeric))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_map_is_exact() {
        let x = Tensor::new(vec![0.4, -1.1, 2.0, 0.3, 0.9, -0.5], &[2, 3]).unwrap();
        let err = finite_diff_check(
            |tape, id| {
                let w = tape.constant(vec![0.5, -1.0, 2.0], &[3, 1]);
                let y = tape.matmul(id, w)?;
                Ok(tape.sum(y))
            },
            &x,
            DEFAULT_EPS,
        )
        .unwrap();
        assert!(err < 1e-9, "err = {err}");
    }

    #[test]
    fn rejects_nondeterministic_function() {
        use std::sync::atomic::{AtomicU64, Ordering};
        static CALLS: AtomicU64 = AtomicU64::new(0);
        let x = Tensor::new(vec![1.0], &[1]).unwrap();
        let res = finite_diff_check(
            |tape, id| {
                let jitter = CALLS.fetch_add(1, Ordering::SeqCst) as f64 * 0.1;
                let y = tape.affine(id, 1.0, jitter);
                Ok(tape.sum(y))
            },
            &x,
            DEFAULT_EPS,
        );
        assert!(res.is_err());
    }
}
