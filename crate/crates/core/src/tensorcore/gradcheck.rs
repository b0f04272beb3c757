use alloc::vec::Vec;

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Absolute floor added to the relative-error denominator so that
/// near-zero gradients compare on an absolute scale.
pub const GRAD_CHECK_FLOOR: f64 = 1e-5;

/// Compares tape gradients with central differences.
///
/// `f` records a scalar function of the registered parameters on the given
/// tape. Returns the maximum of `|g_tape − g_fd| / (|g_tape| + |g_fd| + floor)`
/// over every parameter entry; `f64::INFINITY` if any comparison is not finite.
pub fn grad_check<F>(f: F, params: &[Tensor], step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    grad_check_steps(f, params, &[step])
}

/// Like [`grad_check`], but each entry is scored by its best agreement over
/// several steps. On a large loss a small step loses the difference to
/// cancellation and a large one can straddle a ReLU kink; a wrong gradient
/// disagrees at every step.
pub fn grad_check_steps<F>(f: F, params: &[Tensor], steps: &[f64]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.param(p)).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out)?.item())
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p)).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut worst: f64 = 0.0;
    let mut work: Vec<Tensor> = params.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v)?;
        for i in 0..params[k].len() {
            let orig = params[k].values()[i];
            let a = analytic.values()[i];
            let mut best = f64::INFINITY;
            for &step in steps {
                work[k].values_mut()[i] = orig + step;
                let up = eval(&work)?;
                work[k].values_mut()[i] = orig - step;
                let down = eval(&work)?;
                work[k].values_mut()[i] = orig;
                let fd = (up - down) / (2.0 * step);
                let err = (a - fd).abs() / (a.abs() + fd.abs() + GRAD_CHECK_FLOOR);
                if err.is_finite() {
                    best = best.min(err);
                }
            }
            if !best.is_finite() {
                return Ok(f64::INFINITY);
            }
            worst = worst.max(best);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn quadratic_form() {
        // f(x) = xᵀ A x
        let a =
            Tensor::from_rows(&[&[2.0, 0.5, 0.0], &[0.5, 1.0, -0.3], &[0.0, -0.3, 3.0]]).unwrap();
        let x = Tensor::column(vec![0.4, -1.2, 0.7]);
        let err = grad_check(
            |t, v| {
                let av = t.constant(a.clone());
                let ax = t.matmul(av, v[0])?;
                let xt = t.transpose(v[0])?;
                t.matmul(xt, ax)
            },
            &[x],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "err = {err}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let err = grad_check(
            |t, _| Ok(t.constant(Tensor::scalar(3.0))),
            &[Tensor::scalar(1.0)],
            1e-5,
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn non_finite_is_reported() {
        let err = grad_check(
            |t, v| {
                let e = t.exp(v[0])?;
                t.sum(e)
            },
            &[Tensor::scalar(800.0)],
            1e-5,
        )
        .unwrap();
        assert!(err.is_infinite());
    }

    #[test]
    fn several_steps_still_catch_a_wrong_gradient() {
        // `detach(x)·x` tapes a gradient of `x` where the true one is `2x`.
        let err = grad_check_steps(
            |t, v| {
                let d = t.detach(v[0])?;
                let p = t.mul(d, v[0])?;
                t.sum(p)
            },
            &[Tensor::column(vec![0.5, -1.5])],
            &[1e-3, 1e-4, 1e-5, 1e-6],
        )
        .unwrap();
        assert!(err > 0.3, "err = {err}");
    }
}
