use super::scalar::{axpy, dot};
use super::Scalar;
use crate::error::{check_dim, Error, Result};

/// Approximately solves `A x = b` for symmetric positive definite `A`, given
/// only the product `v ↦ A v`. Stops after `iters` iterations or once the
/// squared residual drops below `tol`.
pub fn conjugate_gradient<T: Scalar>(
    mut apply: impl FnMut(&[T]) -> Result<Vec<T>>,
    b: &[T],
    iters: usize,
    tol: T,
) -> Result<Vec<T>> {
    let mut x = vec![T::zero(); b.len()];
    let mut r = b.to_vec();
    let mut p = b.to_vec();
    let mut rr = dot(&r, &r);
    for _ in 0..iters {
        if rr < tol {
            break;
        }
        let ap = apply(&p)?;
        check_dim("conjugate gradient product", b.len(), ap.len())?;
        let pap = dot(&p, &ap);
        if !(pap > T::zero()) {
            return Err(Error::Numeric("conjugate gradient met a non-positive curvature".into()));
        }
        let alpha = rr / pap;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        let rr_next = dot(&r, &r);
        let beta = rr_next / rr;
        for (pi, &ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
        rr = rr_next;
    }
    Ok(x)
}
