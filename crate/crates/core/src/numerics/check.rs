use super::{NumericsError, Result, Tape, Tensor, Var};

/// Central finite-difference gradient of a scalar function at `point`.
pub fn central_difference<F>(f: &F, point: &Tensor, epsilon: f64) -> Result<Tensor>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let eval = |p: Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let x = tape.constant(p)?;
        let y = f(&mut tape, x)?;
        let v = tape.value(y);
        if v.len() != 1 {
            return Err(NumericsError::NonScalarRoot(v.shape().to_vec()));
        }
        if !v.item().is_finite() {
            return Err(NumericsError::NonFinite { op: "gradient_check" });
        }
        Ok(v.item())
    };
    let mut grad = Tensor::zeros(point.shape());
    for k in 0..point.len() {
        let mut plus = point.clone();
        plus.data_mut()[k] += epsilon;
        let mut minus = point.clone();
        minus.data_mut()[k] -= epsilon;
        grad.data_mut()[k] = (eval(plus)? - eval(minus)?) / (2.0 * epsilon);
    }
    Ok(grad)
}

/// Compares the tape gradient of `f` at `point` with central differences.
///
/// Returns the largest `|analytic - numeric| / max(1, |analytic|)` over
/// all coordinates.
pub fn gradient_check<F>(f: F, point: &Tensor, epsilon: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if !(epsilon > 0.0) {
        return Err(NumericsError::Invalid(format!(
            "gradient_check: epsilon must be positive, got {epsilon}"
        )));
    }
    let mut tape = Tape::new();
    let x = tape.param(point.clone())?;
    let y = f(&mut tape, x)?;
    tape.backward(y)?;
    let analytic = tape.grad(x).expect("trainable leaf always has a gradient").clone();
    let numeric = central_difference(&f, point, epsilon)?;
    Ok(max_relative_error(analytic.data(), numeric.data()))
}

pub(crate) fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(1.0))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::LEAKY_RELU_SLOPE;

    #[test]
    fn square_matches_finite_difference() {
        let err = gradient_check(|t, x| t.mul(x, x), &Tensor::scalar(3.0), 1e-4).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn leaky_relu_away_from_kink() {
        let err =
            gradient_check(|t, x| t.leaky_relu(x, LEAKY_RELU_SLOPE), &Tensor::scalar(1.0), 1e-4).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let err = gradient_check(
            |t, _x| t.constant(Tensor::scalar(4.0)),
            &Tensor::scalar(1.5),
            1e-4,
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn rejects_non_positive_epsilon() {
        assert!(gradient_check(|t, x| t.tanh(x), &Tensor::scalar(0.0), 0.0).is_err());
    }
}
