use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Scalar-valued function of one tensor, built on a fresh tape.
pub trait ScalarFn: Fn(&mut Tape, Var) -> Result<Var> {}
impl<F: Fn(&mut Tape, Var) -> Result<Var>> ScalarFn for F {}

/// Relative disagreement between the taped gradient of `f` at `x` and
/// central differences with step `h`:
/// `max_i |analytic_i − numeric_i| / max(max_i |analytic_i|, max_i |numeric_i|, 1e-8)`.
///
/// Scaling by the largest component keeps coordinates whose true gradient
/// is near zero from reporting pure roundoff.
pub fn finite_diff_check(f: impl ScalarFn, x: &Tensor, h: f64) -> Result<f64> {
    let coords: Vec<usize> = (0..x.numel()).collect();
    finite_diff_check_coords(f, x, h, &coords)
}

/// [`finite_diff_check`] restricted to the listed coordinates, for tensors
/// too large to perturb exhaustively.
pub fn finite_diff_check_coords(f: impl ScalarFn, x: &Tensor, h: f64, coords: &[usize]) -> Result<f64> {
    if !(1e-7..=1e-4).contains(&h) {
        return Err(Error::Config(format!(
            "finite-difference step {h} outside [1e-7, 1e-4]"
        )));
    }
    let analytic = analytic_grad(&f, x)?;
    let (mut diff, mut scale) = (0.0f64, 1e-8f64);
    let mut probe = x.clone();
    for &i in coords {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = evaluate(&f, &probe)?;
        probe.data_mut()[i] = orig - h;
        let minus = evaluate(&f, &probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic[i];
        diff = diff.max((a - numeric).abs());
        scale = scale.max(a.abs()).max(numeric.abs());
    }
    Ok(diff / scale)
}

/// Gradient of `f` at `x` through the tape.
pub fn analytic_grad(f: &impl ScalarFn, x: &Tensor) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let leaf = tape.param(x.clone());
    let out = f(&mut tape, leaf)?;
    check_finite(tape.scalar(out))?;
    tape.backward(out)?;
    Ok(tape
        .grad(leaf)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; x.numel()]))
}

fn evaluate(f: &impl ScalarFn, x: &Tensor) -> Result<f64> {
    let mut tape = Tape::new();
    let leaf = tape.constant(x.clone());
    let out = f(&mut tape, leaf)?;
    check_finite(tape.scalar(out))
}

fn check_finite(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("objective evaluated to {v}")))
    }
}
