//! The fault severity index: running statistics of threshold
//! exceedances, combined as `S_{t,m} = μ_t + m σ_t`.
//!
//! Only scores above the threshold contribute. With `I_t` the strict
//! exceedance indicator and `n_t = Σ I_k` the cumulative fault count,
//!
//! ```text
//! μ_t  = (1/n_t) Σ_{k≤t} max(0, S_k − τ)
//! σ_t² = (1/n_t) Σ_{k≤t} max(0, S_k − τ)² − μ_t²
//! ```
//!
//! Before the first detection (`n_t = 0`) the index is defined as 0:
//! no detected fault means zero severity. The one-pass variance can
//! dip below zero by rounding, so it is clamped before the root.
//!
//! The index never resets implicitly; call [`SeverityState::reset`]
//! between operating sessions.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SeverityError {
    #[error("anomaly score {0} is negative; scores are squared errors")]
    NegativeScore(f64),
    #[error("weight m = {0} must be nonnegative so the index upper-bounds the mean")]
    NegativeWeight(f64),
}

/// Streaming accumulator for one node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeverityState {
    tau: f64,
    m: f64,
    n: u64,
    sum_exc: f64,
    sum_exc_sq: f64,
}

/// One evaluated time step of the index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeverityPoint {
    pub mu: f64,
    pub sigma: f64,
    pub index: f64,
}

/// Index trajectory for one node.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SeveritySeries {
    pub points: Vec<SeverityPoint>,
}

impl SeverityState {
    pub fn new(tau: f64, m: f64) -> Result<Self, SeverityError> {
        if m < 0.0 {
            return Err(SeverityError::NegativeWeight(m));
        }
        Ok(SeverityState {
            tau,
            m,
            n: 0,
            sum_exc: 0.0,
            sum_exc_sq: 0.0,
        })
    }

    pub fn threshold(&self) -> f64 {
        self.tau
    }

    pub fn weight(&self) -> f64 {
        self.m
    }

    /// Cumulative detected-fault count `n_t`.
    pub fn fault_count(&self) -> u64 {
        self.n
    }

    /// Folds one score into the running statistics and evaluates the
    /// index at this step.
    pub fn update(&mut self, score: f64) -> Result<SeverityPoint, SeverityError> {
        if score < 0.0 {
            return Err(SeverityError::NegativeScore(score));
        }
        let exceedance = (score - self.tau).max(0.0);
        if score > self.tau {
            self.n += 1;
        }
        self.sum_exc += exceedance;
        self.sum_exc_sq += exceedance * exceedance;
        Ok(self.evaluate())
    }

    fn evaluate(&self) -> SeverityPoint {
        if self.n == 0 {
            return SeverityPoint {
                mu: 0.0,
                sigma: 0.0,
                index: 0.0,
            };
        }
        let n = self.n as f64;
        let mu = self.sum_exc / n;
        let var = (self.sum_exc_sq / n - mu * mu).max(0.0);
        let sigma = var.sqrt();
        SeverityPoint {
            mu,
            sigma,
            index: mu + self.m * sigma,
        }
    }

    /// Changes the variability weight; accumulated statistics keep
    /// their values and only future indices use the new `m`.
    pub fn set_weight(&mut self, m: f64) -> Result<(), SeverityError> {
        if m < 0.0 {
            return Err(SeverityError::NegativeWeight(m));
        }
        self.m = m;
        Ok(())
    }

    /// Clears counts and sums for a new operating session.
    pub fn reset(&mut self) {
        self.n = 0;
        self.sum_exc = 0.0;
        self.sum_exc_sq = 0.0;
    }
}

/// Batch evaluation by the summation formulas as written: at each step
/// the sums run from the start of the sequence. This is the reference
/// route; it must agree with folding [`SeverityState::update`] over the
/// same scores.
pub fn batch_severity(scores: &[f64], tau: f64, m: f64) -> Result<SeveritySeries, SeverityError> {
    if m < 0.0 {
        return Err(SeverityError::NegativeWeight(m));
    }
    let mut points = Vec::with_capacity(scores.len());
    for t in 0..scores.len() {
        let mut n = 0u64;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for &s in &scores[..=t] {
            if s < 0.0 {
                return Err(SeverityError::NegativeScore(s));
            }
            let e = (s - tau).max(0.0);
            if s > tau {
                n += 1;
            }
            sum += e;
            sum_sq += e * e;
        }
        if n == 0 {
            points.push(SeverityPoint {
                mu: 0.0,
                sigma: 0.0,
                index: 0.0,
            });
        } else {
            let nf = n as f64;
            let mu = sum / nf;
            let var = (sum_sq / nf - mu * mu).max(0.0);
            let sigma = var.sqrt();
            points.push(SeverityPoint {
                mu,
                sigma,
                index: mu + m * sigma,
            });
        }
    }
    Ok(SeveritySeries { points })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_example() {
        // Scores [0.5, 1.5, 2.5] with τ = 1, m = 2: exceedances {0.5, 1.5},
        // n = 2, μ = 1, σ² = 0.25, index = 1 + 2·0.5 = 2.
        let mut state = SeverityState::new(1.0, 2.0).unwrap();
        state.update(0.5).unwrap();
        state.update(1.5).unwrap();
        let p = state.update(2.5).unwrap();
        assert_eq!(state.fault_count(), 2);
        assert!((p.mu - 1.0).abs() < 1e-12);
        assert!((p.sigma - 0.5).abs() < 1e-12);
        assert!((p.index - 2.0).abs() < 1e-12);
    }

    #[test]
    fn all_scores_below_threshold_stay_zero() {
        let mut state = SeverityState::new(2.0, 3.0).unwrap();
        for s in [0.0, 1.0, 1.5, 2.0] {
            let p = state.update(s).unwrap();
            assert_eq!(
                p,
                SeverityPoint {
                    mu: 0.0,
                    sigma: 0.0,
                    index: 0.0
                }
            );
        }
        assert_eq!(state.fault_count(), 0);
    }

    #[test]
    fn single_exceedance_has_zero_sigma() {
        let mut state = SeverityState::new(1.0, 5.0).unwrap();
        state.update(0.3).unwrap();
        let p = state.update(1.8).unwrap();
        assert_eq!(state.fault_count(), 1);
        assert!((p.mu - 0.8).abs() < 1e-12);
        assert_eq!(p.sigma, 0.0);
        assert!((p.index - 0.8).abs() < 1e-12);
    }

    #[test]
    fn score_equal_to_threshold_is_not_a_fault() {
        let mut state = SeverityState::new(1.0, 2.0).unwrap();
        state.update(1.0).unwrap();
        assert_eq!(state.fault_count(), 0);
    }

    #[test]
    fn negative_score_rejected() {
        let mut state = SeverityState::new(1.0, 2.0).unwrap();
        assert_eq!(
            state.update(-0.1).unwrap_err(),
            SeverityError::NegativeScore(-0.1)
        );
    }

    #[test]
    fn negative_weight_rejected() {
        assert!(SeverityState::new(1.0, -1.0).is_err());
        let mut state = SeverityState::new(1.0, 0.0).unwrap();
        assert!(state.set_weight(-2.0).is_err());
    }

    #[test]
    fn weight_scales_only_the_sigma_term() {
        let scores = [1.5, 3.0, 2.2, 0.1, 4.0];
        let m0 = batch_severity(&scores, 1.0, 0.0).unwrap();
        let m1 = batch_severity(&scores, 1.0, 1.0).unwrap();
        let m2 = batch_severity(&scores, 1.0, 2.0).unwrap();
        for ((a, b), c) in m0.points.iter().zip(&m1.points).zip(&m2.points) {
            assert_eq!(a.index, a.mu);
            assert!(((c.index - c.mu) - 2.0 * (b.index - b.mu)).abs() < 1e-12);
        }
    }

    #[test]
    fn set_weight_applies_to_later_steps_only() {
        let mut state = SeverityState::new(1.0, 2.0).unwrap();
        state.update(2.0).unwrap();
        let before = state.update(3.0).unwrap();
        state.set_weight(4.0).unwrap();
        // Same statistics, heavier sigma weight: index grows by 2σ.
        let after = state.update(1.0).unwrap(); // no new exceedance
        assert_eq!(after.mu, before.mu);
        assert_eq!(after.sigma, before.sigma);
        assert!((after.index - (before.mu + 4.0 * before.sigma)).abs() < 1e-12);
    }

    #[test]
    fn constant_exceedance_has_flat_index() {
        let scores = vec![3.0; 40];
        let series = batch_severity(&scores, 1.0, 2.0).unwrap();
        for p in &series.points {
            assert!((p.mu - 2.0).abs() < 1e-12);
            assert!(p.sigma.abs() < 1e-7);
            assert!((p.index - 2.0).abs() < 1e-6);
        }
    }

    #[test]
    fn empty_sequence_gives_empty_series() {
        let series = batch_severity(&[], 1.0, 2.0).unwrap();
        assert!(series.points.is_empty());
    }

    #[test]
    fn streaming_equals_batch_small() {
        let scores = [0.9, 1.1, 0.2, 5.0, 1.0, 2.5, 0.0, 1.0001];
        let batch = batch_severity(&scores, 1.0, 2.0).unwrap();
        let mut state = SeverityState::new(1.0, 2.0).unwrap();
        for (s, expected) in scores.iter().zip(&batch.points) {
            let p = state.update(*s).unwrap();
            assert!((p.mu - expected.mu).abs() <= 1e-12);
            assert!((p.sigma - expected.sigma).abs() <= 1e-12);
            assert!((p.index - expected.index).abs() <= 1e-12);
        }
    }

    #[test]
    fn reset_clears_statistics() {
        let mut state = SeverityState::new(1.0, 2.0).unwrap();
        state.update(5.0).unwrap();
        assert_eq!(state.fault_count(), 1);
        state.reset();
        assert_eq!(state.fault_count(), 0);
        let p = state.update(0.5).unwrap();
        assert_eq!(p.index, 0.0);
    }
}
