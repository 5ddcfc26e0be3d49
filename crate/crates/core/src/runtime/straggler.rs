//! Straggler emulation. Delay is injected into a worker's compute task only;
//! its communication task keeps serving block requests and cancellations.

use std::collections::BTreeSet;
use std::time::Duration;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StragglerMode {
    /// Every partial product takes `factor` times as long as it would.
    SlowdownFactor(f64),
    /// A fixed extra delay per partial product.
    FixedDelay(Duration),
    /// The worker drops its connection when it sees iteration `at_iter`.
    Disconnect { at_iter: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct StragglerPolicy {
    pub straggler_ids: BTreeSet<usize>,
    pub mode: StragglerMode,
}

impl Default for StragglerPolicy {
    fn default() -> Self {
        Self::none()
    }
}

impl StragglerPolicy {
    pub fn none() -> Self {
        Self { straggler_ids: BTreeSet::new(), mode: StragglerMode::SlowdownFactor(1.0) }
    }

    pub fn explicit(ids: impl IntoIterator<Item = usize>, mode: StragglerMode) -> Self {
        Self { straggler_ids: ids.into_iter().collect(), mode }
    }

    /// `count` distinct workers out of `n`, chosen uniformly by `seed`.
    pub fn random(count: usize, n: usize, seed: u64, mode: StragglerMode) -> Result<Self> {
        if count > n {
            return Err(Error::Configuration(format!("{count} stragglers requested but only {n} workers")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self { straggler_ids: sample(&mut rng, n, count).into_iter().collect(), mode })
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.straggler_ids.len() > n || self.straggler_ids.iter().any(|&id| id >= n) {
            return Err(Error::Configuration(format!("straggler ids {:?} invalid for {n} workers", self.straggler_ids)));
        }
        match self.mode {
            StragglerMode::SlowdownFactor(f) if f < 1.0 || !f.is_finite() => {
                Err(Error::Configuration(format!("slowdown factor must be >= 1, got {f}")))
            }
            _ => Ok(()),
        }
    }

    pub fn is_straggler(&self, worker_id: usize) -> bool {
        self.straggler_ids.contains(&worker_id)
    }

    /// Extra delay for a job that took `compute` to run on worker `worker_id`.
    pub fn extra_delay(&self, worker_id: usize, compute: Duration) -> Duration {
        if !self.is_straggler(worker_id) {
            return Duration::ZERO;
        }
        match self.mode {
            StragglerMode::SlowdownFactor(f) => compute.mul_f64(f - 1.0),
            StragglerMode::FixedDelay(d) => d,
            StragglerMode::Disconnect { .. } => Duration::ZERO,
        }
    }

    pub fn disconnects_at(&self, worker_id: usize, iter: u64) -> bool {
        matches!(self.mode, StragglerMode::Disconnect { at_iter } if self.is_straggler(worker_id) && iter >= at_iter)
    }

    /// Workers ordered from expected fastest to slowest, ties by id.
    pub fn expected_order(&self, n: usize) -> Vec<usize> {
        let (slow, fast): (Vec<usize>, Vec<usize>) = (0..n).partition(|&id| self.is_straggler(id));
        fast.into_iter().chain(slow).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_selection_is_seeded() {
        let mode = StragglerMode::FixedDelay(Duration::from_millis(1));
        let a = StragglerPolicy::random(3, 10, 5, mode).unwrap();
        let b = StragglerPolicy::random(3, 10, 5, mode).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.straggler_ids.len(), 3);
        assert!(StragglerPolicy::random(11, 10, 5, mode).is_err());
    }

    #[test]
    fn delays() {
        let p = StragglerPolicy::explicit([1], StragglerMode::SlowdownFactor(20.0));
        assert_eq!(p.extra_delay(1, Duration::from_millis(2)), Duration::from_millis(38));
        assert_eq!(p.extra_delay(0, Duration::from_millis(2)), Duration::ZERO);
        let p = StragglerPolicy::explicit([0, 2], StragglerMode::FixedDelay(Duration::from_millis(5)));
        assert_eq!(p.extra_delay(2, Duration::ZERO), Duration::from_millis(5));
        assert_eq!(p.expected_order(4), vec![1, 3, 0, 2]);
    }

    #[test]
    fn validation() {
        assert!(StragglerPolicy::explicit([0], StragglerMode::SlowdownFactor(0.5)).validate(3).is_err());
        assert!(StragglerPolicy::explicit([5], StragglerMode::SlowdownFactor(2.0)).validate(3).is_err());
        assert!(StragglerPolicy::none().validate(0).is_ok());
    }

    #[test]
    fn disconnect_trigger() {
        let p = StragglerPolicy::explicit([1], StragglerMode::Disconnect { at_iter: 2 });
        assert!(!p.disconnects_at(1, 1));
        assert!(p.disconnects_at(1, 2));
        assert!(!p.disconnects_at(0, 5));
    }
}
