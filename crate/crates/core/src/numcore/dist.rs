//! Categorical and diagonal-Gaussian distribution helpers.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::scalar::Scalar;
use crate::error::{check_dim, Error, Result};

/// `0.5 * ln(2π)`.
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

pub mod categorical {
    use super::*;

    pub fn log_prob<T: Scalar>(probs: &[T], index: usize) -> T {
        probs[index].ln()
    }

    pub fn entropy<T: Scalar>(probs: &[T]) -> T {
        probs
            .iter()
            .filter(|&&p| p > T::zero())
            .fold(T::zero(), |acc, &p| acc - p * p.ln())
    }

    /// Gradient of the entropy w.r.t. the probability vector.
    pub fn entropy_grad<T: Scalar>(probs: &[T]) -> Vec<T> {
        probs.iter().map(|&p| -(p.ln() + T::one())).collect()
    }

    /// `KL(old || new) = Σ old_i ln(old_i / new_i)`.
    pub fn kl<T: Scalar>(old: &[T], new: &[T]) -> T {
        old.iter()
            .zip(new)
            .filter(|(&o, _)| o > T::zero())
            .fold(T::zero(), |acc, (&o, &n)| acc + o * (o.ln() - n.ln()))
    }

    /// Gradient of `KL(old || new)` w.r.t. `new`.
    pub fn kl_grad_new<T: Scalar>(old: &[T], new: &[T]) -> Vec<T> {
        old.iter().zip(new).map(|(&o, &n)| -o / n).collect()
    }

    /// Index of the largest probability (first one on ties).
    pub fn argmax<T: Scalar>(probs: &[T]) -> usize {
        let mut best = 0;
        for (i, &p) in probs.iter().enumerate().skip(1) {
            if p > probs[best] {
                best = i;
            }
        }
        best
    }

    /// Inverse-CDF draw. A single-outcome distribution is returned without
    /// consuming randomness.
    pub fn sample<T: Scalar, R: Rng + ?Sized>(probs: &[T], rng: &mut R) -> usize {
        if probs.len() == 1 {
            return 0;
        }
        let u: f64 = rng.random();
        let mut cumulative = 0.0;
        for (i, p) in probs.iter().enumerate() {
            cumulative += p.to_f64_lossy();
            if u < cumulative {
                return i;
            }
        }
        probs.len() - 1
    }
}

/// Multivariate Gaussian with diagonal covariance, parameterized by log standard deviations.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagGaussian<T> {
    pub mean: Vec<T>,
    pub log_std: Vec<T>,
}

impl<T: Scalar> DiagGaussian<T> {
    pub fn new(mean: Vec<T>, log_std: Vec<T>) -> Result<Self> {
        check_dim("gaussian log_std", mean.len(), log_std.len())?;
        if log_std.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite log standard deviation".into()));
        }
        Ok(Self { mean, log_std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_prob(&self, a: &[T]) -> Result<T> {
        check_dim("gaussian sample", self.dim(), a.len())?;
        let half = T::lit(0.5);
        Ok(a.iter()
            .zip(&self.mean)
            .zip(&self.log_std)
            .fold(T::zero(), |acc, ((&x, &m), &ls)| {
                let z = (x - m) / ls.exp();
                acc - half * z * z - ls - T::lit(HALF_LN_2PI)
            }))
    }

    /// Gradients of `log_prob(a)` w.r.t. the mean and the log standard deviations.
    pub fn log_prob_grad(&self, a: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        check_dim("gaussian sample", self.dim(), a.len())?;
        let mut dm = Vec::with_capacity(self.dim());
        let mut dls = Vec::with_capacity(self.dim());
        for ((&x, &m), &ls) in a.iter().zip(&self.mean).zip(&self.log_std) {
            let var = (ls + ls).exp();
            dm.push((x - m) / var);
            dls.push((x - m) * (x - m) / var - T::one());
        }
        Ok((dm, dls))
    }

    /// `Σ (log σ_i + 0.5 ln(2πe))`; its gradient w.r.t. each log σ is 1.
    pub fn entropy(&self) -> T {
        let c = T::lit(HALF_LN_2PI + 0.5);
        self.log_std.iter().fold(T::zero(), |acc, &ls| acc + ls + c)
    }

    /// `KL(self || other)` in closed form.
    pub fn kl(&self, other: &Self) -> T {
        let half = T::lit(0.5);
        self.mean
            .iter()
            .zip(&self.log_std)
            .zip(other.mean.iter().zip(&other.log_std))
            .fold(T::zero(), |acc, ((&mo, &lo), (&mn, &ln))| {
                let var_o = (lo + lo).exp();
                let var_n = (ln + ln).exp();
                acc + ln - lo + (var_o + (mo - mn) * (mo - mn)) / (var_n + var_n) - half
            })
    }

    /// Gradient of `KL(self || other)` w.r.t. `other`'s mean and log std.
    pub fn kl_grad_other(&self, other: &Self) -> (Vec<T>, Vec<T>) {
        let mut dm = Vec::with_capacity(self.dim());
        let mut dls = Vec::with_capacity(self.dim());
        for ((&mo, &lo), (&mn, &ln)) in self
            .mean
            .iter()
            .zip(&self.log_std)
            .zip(other.mean.iter().zip(&other.log_std))
        {
            let var_o = (lo + lo).exp();
            let var_n = (ln + ln).exp();
            dm.push((mn - mo) / var_n);
            dls.push(T::one() - (var_o + (mo - mn) * (mo - mn)) / var_n);
        }
        (dm, dls)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<T> {
        self.mean
            .iter()
            .zip(&self.log_std)
            .map(|(&m, &ls)| {
                let z: f64 = StandardNormal.sample(rng);
                m + ls.exp() * T::lit(z)
            })
            .collect()
    }
}
