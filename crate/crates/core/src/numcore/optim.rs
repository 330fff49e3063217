//! Gradient-descent optimizers and learning-rate schedules.

use std::sync::atomic::{AtomicU64, Ordering};

use super::params::SharedParams;
use super::scalar::Scalar;
use crate::error::{check_dim, Result};

/// Learning rate that decays linearly to exactly zero at `budget` steps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearAnneal {
    pub initial: f64,
    /// `None` keeps the rate constant.
    pub budget: Option<u64>,
}

impl LinearAnneal {
    pub fn constant(rate: f64) -> Self {
        Self {
            initial: rate,
            budget: None,
        }
    }

    pub fn to_zero(initial: f64, budget: u64) -> Self {
        Self {
            initial,
            budget: Some(budget),
        }
    }

    pub fn rate(&self, step: u64) -> f64 {
        match self.budget {
            None => self.initial,
            Some(0) => 0.0,
            Some(budget) => {
                let remaining = budget - step.min(budget);
                self.initial * remaining as f64 / budget as f64
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    RmsProp { decay: f64, eps: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn rmsprop() -> Self {
        OptimizerKind::RmsProp {
            decay: 0.99,
            eps: 1e-6,
        }
    }

    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Single-owner optimizer. `step` performs descent on `params`.
#[derive(Clone, Debug)]
pub struct Optimizer<T> {
    kind: OptimizerKind,
    schedule: LinearAnneal,
    first: Vec<T>,
    second: Vec<T>,
    updates: i32,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind, schedule: LinearAnneal, len: usize) -> Self {
        Self {
            kind,
            schedule,
            first: vec![T::zero(); len],
            second: vec![T::zero(); len],
            updates: 0,
        }
    }

    pub fn learning_rate(&self, step: u64) -> f64 {
        self.schedule.rate(step)
    }

    pub fn step(&mut self, params: &mut [T], grad: &[T], step: u64) -> Result<()> {
        check_dim("optimizer parameters", self.first.len(), params.len())?;
        check_dim("optimizer gradient", self.first.len(), grad.len())?;
        let lr = T::lit(self.schedule.rate(step));
        self.updates += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, &g) in params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            OptimizerKind::RmsProp { decay, eps } => {
                let (decay, eps) = (T::lit(decay), T::lit(eps));
                for ((p, &g), s) in params.iter_mut().zip(grad).zip(self.second.iter_mut()) {
                    *s = decay * *s + (T::one() - decay) * g * g;
                    *p -= lr * g / (*s + eps).sqrt();
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let (b1, b2, eps) = (T::lit(beta1), T::lit(beta2), T::lit(eps));
                let c1 = T::one() - b1.powi(self.updates);
                let c2 = T::one() - b2.powi(self.updates);
                for (((p, &g), m), v) in params
                    .iter_mut()
                    .zip(grad)
                    .zip(self.first.iter_mut())
                    .zip(self.second.iter_mut())
                {
                    *m = b1 * *m + (T::one() - b1) * g;
                    *v = b2 * *v + (T::one() - b2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}

/// RMSProp whose squared-gradient statistics are shared by all workers and
/// updated in place on a [`SharedParams`] store.
#[derive(Debug)]
pub struct SharedRmsProp {
    stats: Vec<AtomicU64>,
    decay: f64,
    eps: f64,
    pub schedule: LinearAnneal,
}

impl SharedRmsProp {
    pub fn new(len: usize, decay: f64, eps: f64, schedule: LinearAnneal) -> Self {
        Self {
            stats: (0..len).map(|_| AtomicU64::new(0f64.to_bits())).collect(),
            decay,
            eps,
            schedule,
        }
    }

    pub fn apply<T: Scalar>(&self, params: &SharedParams, grad: &[T], step: u64) -> Result<()> {
        check_dim("shared optimizer gradient", self.stats.len(), grad.len())?;
        check_dim("shared optimizer parameters", self.stats.len(), params.len())?;
        let lr = self.schedule.rate(step);
        for (i, g) in grad.iter().enumerate() {
            let g = g.to_f64_lossy();
            let cell = &self.stats[i];
            let old = f64::from_bits(cell.load(Ordering::Relaxed));
            let s = self.decay * old + (1.0 - self.decay) * g * g;
            cell.store(s.to_bits(), Ordering::Relaxed);
            let delta = lr * g / (s + self.eps).sqrt();
            params.update(i, |p| p - delta);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::params::{Layout, ParamVector, Segment};

    #[test]
    fn anneal_hits_zero_at_budget() {
        let s = LinearAnneal::to_zero(1e-3, 1000);
        assert_eq!(s.rate(0), 1e-3);
        assert_eq!(s.rate(1000), 0.0);
        assert_eq!(s.rate(5000), 0.0);
        let mut prev = f64::INFINITY;
        for step in 0..=1000 {
            let r = s.rate(step);
            assert!(r <= prev && r >= 0.0);
            prev = r;
        }
    }

    #[test]
    fn sgd_step() {
        let mut opt = Optimizer::<f64>::new(OptimizerKind::Sgd, LinearAnneal::constant(0.1), 2);
        let mut p = vec![5.0, -3.0];
        opt.step(&mut p, &[10.0, -6.0], 0).unwrap();
        assert!((p[0] - 4.0).abs() < 1e-12 && (p[1] + 2.4).abs() < 1e-12);
    }

    #[test]
    fn optimizers_descend_a_quadratic() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::rmsprop(), OptimizerKind::adam()] {
            let mut opt = Optimizer::<f64>::new(kind, LinearAnneal::constant(0.01), 2);
            let mut p = vec![1.0, -2.0];
            for step in 0..2000 {
                let g = vec![2.0 * p[0], 2.0 * p[1]];
                opt.step(&mut p, &g, step).unwrap();
            }
            assert!(p[0].abs() < 0.05 && p[1].abs() < 0.05, "{kind:?}: {p:?}");
        }
    }

    #[test]
    fn shared_rmsprop_matches_local_rmsprop() {
        let layout = Layout::new(vec![Segment::new("w", vec![3])]).unwrap();
        let init = ParamVector::new(layout, vec![0.5f64, -0.2, 1.0]).unwrap();
        let shared = SharedParams::new(&init);
        let sched = LinearAnneal::to_zero(0.01, 100);
        let opt = SharedRmsProp::new(3, 0.99, 1e-6, sched);
        let mut local = Optimizer::<f64>::new(OptimizerKind::rmsprop(), sched, 3);
        let mut p = init.values().to_vec();
        for step in 0..50 {
            let g = vec![p[0] * 2.0, 1.0, -p[2]];
            local.step(&mut p, &g, step).unwrap();
            opt.apply(&shared, &g, step).unwrap();
        }
        let snap: ParamVector<f64> = shared.snapshot();
        assert_eq!(snap.values(), &p[..]);
    }
}
