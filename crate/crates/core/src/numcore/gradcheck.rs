use super::scalar::Scalar;
use crate::error::{check_dim, Error, Result};

/// Central-difference gradient of `f` at `params`.
pub fn numeric_gradient<T, F>(mut f: F, params: &[T], eps: T) -> Result<Vec<T>>
where
    T: Scalar,
    F: FnMut(&[T]) -> T,
{
    let mut p = params.to_vec();
    let mut grad = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + eps;
        let up = f(&p);
        p[i] = orig - eps;
        let down = f(&p);
        p[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Numeric(format!("non-finite objective at coordinate {i}")));
        }
        grad.push((up - down) / (eps + eps));
    }
    Ok(grad)
}

/// Max over coordinates of `|analytic − central difference| / max(1, |analytic|)`.
pub fn check_gradient<T, F>(f: F, params: &[T], analytic: &[T], eps: T) -> Result<T>
where
    T: Scalar,
    F: FnMut(&[T]) -> T,
{
    if !(eps > T::zero() && eps <= T::lit(1e-2)) {
        return Err(Error::Config(format!("gradient-check eps {eps} outside (0, 1e-2]")));
    }
    check_dim("analytic gradient", params.len(), analytic.len())?;
    let numeric = numeric_gradient(f, params, eps)?;
    Ok(analytic
        .iter()
        .zip(&numeric)
        .fold(T::zero(), |m, (&a, &n)| m.max((a - n).abs() / a.abs().max(T::one()))))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic() {
        let err = check_gradient(|p: &[f64]| p.iter().map(|v| v * v).sum(), &[1.0, 2.0], &[2.0, 4.0], 1e-5).unwrap();
        assert!(err < 1e-6);
    }

    #[test]
    fn constant_function() {
        let err = check_gradient(|_: &[f64]| 3.0, &[1.0, 2.0], &[0.0, 0.0], 1e-5).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn non_finite_rejected() {
        let r = check_gradient(|p: &[f64]| if p[0] > 1.0 { f64::NAN } else { p[0] }, &[1.0], &[0.0], 1e-5);
        assert!(matches!(r, Err(Error::Numeric(_))));
    }

    #[test]
    fn eps_range_enforced() {
        assert!(check_gradient(|_: &[f64]| 0.0, &[1.0], &[0.0], 0.1).is_err());
        assert!(check_gradient(|_: &[f64]| 0.0, &[1.0], &[0.0], 0.0).is_err());
    }
}
