//! Named, seed-derived random streams.
//!
//! Every stream is a ChaCha8 generator keyed by `SHA-256(seed || stream_id)`,
//! so adding a new named component never perturbs an existing stream. Each
//! draw consumes exactly one 64-bit word and maps it through the inverse CDF
//! of the requested distribution.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RngError {
    #[error("probability {0} outside [0, 1]")]
    Probability(f64),
    #[error("geometric success probability {0} outside (0, 1]")]
    GeometricProbability(f64),
    #[error("exponential rate {0} must be positive and finite")]
    Rate(f64),
    #[error("discrete weights must be non-empty, finite, non-negative and not all zero")]
    Weights,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Distribution {
    Uniform01,
    Bernoulli(f64),
    Exponential(f64),
    /// Number of trials up to and including the first success.
    Geometric(f64),
    Discrete(Vec<f64>),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Sample {
    Real(f64),
    Flag(bool),
    Count(u64),
    Index(usize),
}

#[derive(Clone, Debug)]
pub struct RngStream {
    id: String,
    rng: ChaCha8Rng,
    draws: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: impl Into<String>) -> Self {
        let id = stream_id.into();
        let mut hasher = Sha256::new();
        hasher.update(seed.to_le_bytes());
        hasher.update(id.as_bytes());
        let key: [u8; 32] = hasher.finalize().into();
        RngStream {
            id,
            rng: ChaCha8Rng::from_seed(key),
            draws: 0,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// Number of draws taken so far.
    pub fn draws(&self) -> u64 {
        self.draws
    }

    /// Uniform on `[0, 1)` with 53 bits of resolution.
    pub fn uniform01(&mut self) -> f64 {
        self.draws += 1;
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn bernoulli(&mut self, p: f64) -> Result<bool, RngError> {
        if !(0.0..=1.0).contains(&p) {
            return Err(RngError::Probability(p));
        }
        Ok(self.uniform01() < p)
    }

    pub fn exponential(&mut self, rate: f64) -> Result<f64, RngError> {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(RngError::Rate(rate));
        }
        Ok(-(-self.uniform01()).ln_1p() / rate)
    }

    pub fn geometric(&mut self, p: f64) -> Result<u64, RngError> {
        if !(p > 0.0 && p <= 1.0) {
            return Err(RngError::GeometricProbability(p));
        }
        let u = self.uniform01();
        if p == 1.0 {
            return Ok(1);
        }
        let k = ((-u).ln_1p() / (-p).ln_1p()).ceil();
        Ok((k as u64).max(1))
    }

    pub fn discrete(&mut self, weights: &[f64]) -> Result<usize, RngError> {
        let total: f64 = weights.iter().sum();
        if weights.is_empty() || weights.iter().any(|w| !w.is_finite() || *w < 0.0) || total <= 0.0 {
            return Err(RngError::Weights);
        }
        let target = self.uniform01() * total;
        let mut acc = 0.0;
        for (i, w) in weights.iter().enumerate() {
            acc += w;
            if target < acc {
                return Ok(i);
            }
        }
        // Rounding can leave `target` at the very top; return the last positive weight.
        Ok(weights.iter().rposition(|w| *w > 0.0).unwrap_or(0))
    }

    /// Uniform integer in `0..n` (`n >= 1`).
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n >= 1, "below(0)");
        ((self.uniform01() * n as f64) as u64).min(n - 1)
    }

    pub fn draw(&mut self, dist: &Distribution) -> Result<Sample, RngError> {
        Ok(match dist {
            Distribution::Uniform01 => Sample::Real(self.uniform01()),
            Distribution::Bernoulli(p) => Sample::Flag(self.bernoulli(*p)?),
            Distribution::Exponential(r) => Sample::Real(self.exponential(*r)?),
            Distribution::Geometric(p) => Sample::Count(self.geometric(*p)?),
            Distribution::Discrete(w) => Sample::Index(self.discrete(w)?),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn bernoulli_extremes() {
        let mut s = RngStream::new(1, "t");
        for _ in 0..1000 {
            assert!(s.bernoulli(1.0).unwrap());
            assert!(!s.bernoulli(0.0).unwrap());
        }
    }

    #[test]
    fn uniform_mean_law_of_large_numbers() {
        let mut s = RngStream::new(7, "lln");
        let n = 100_000;
        let mean = (0..n).map(|_| s.uniform01()).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn invalid_parameters_rejected() {
        let mut s = RngStream::new(0, "bad");
        assert_eq!(s.bernoulli(1.5), Err(RngError::Probability(1.5)));
        assert_eq!(s.bernoulli(-0.1), Err(RngError::Probability(-0.1)));
        assert_eq!(s.exponential(0.0), Err(RngError::Rate(0.0)));
        assert!(s.geometric(0.0).is_err());
        assert!(s.discrete(&[]).is_err());
        assert!(s.discrete(&[0.0, 0.0]).is_err());
        assert!(s.draw(&Distribution::Exponential(-1.0)).is_err());
        assert_eq!(s.draws(), 0, "rejected calls must not consume draws");
    }

    #[test]
    fn fixed_draws_per_call() {
        let mut s = RngStream::new(3, "count");
        s.draw(&Distribution::Uniform01).unwrap();
        s.draw(&Distribution::Bernoulli(0.3)).unwrap();
        s.draw(&Distribution::Exponential(2.0)).unwrap();
        s.draw(&Distribution::Geometric(0.2)).unwrap();
        s.draw(&Distribution::Discrete(vec![1.0, 2.0, 3.0])).unwrap();
        assert_eq!(s.draws(), 5);
    }

    #[test]
    fn geometric_mean_matches_inverse_probability() {
        let mut s = RngStream::new(11, "geo");
        let n = 50_000;
        let mean = (0..n).map(|_| s.geometric(0.25).unwrap() as f64).sum::<f64>() / n as f64;
        assert!((mean - 4.0).abs() < 0.1, "mean {mean}");
    }

    #[test]
    fn discrete_frequencies_follow_weights() {
        let mut s = RngStream::new(5, "disc");
        let mut counts = [0u32; 3];
        for _ in 0..60_000 {
            counts[s.discrete(&[1.0, 0.0, 2.0]).unwrap()] += 1;
        }
        assert_eq!(counts[1], 0);
        let frac = counts[2] as f64 / 60_000.0;
        assert!((frac - 2.0 / 3.0).abs() < 0.01);
    }

    proptest! {
        #[test]
        fn same_seed_same_sequence(seed in any::<u64>(), id in "[a-z.0-9]{1,12}") {
            let mut a = RngStream::new(seed, id.clone());
            let mut b = RngStream::new(seed, id);
            for _ in 0..16 {
                prop_assert_eq!(a.uniform01().to_bits(), b.uniform01().to_bits());
            }
        }

        #[test]
        fn streams_are_isolated(seed in any::<u64>(), extra in 0usize..50) {
            let mut a = RngStream::new(seed, "a");
            let mut b1 = RngStream::new(seed, "b");
            for _ in 0..extra { a.uniform01(); }
            let mut b2 = RngStream::new(seed, "b");
            for _ in 0..8 {
                prop_assert_eq!(b1.uniform01().to_bits(), b2.uniform01().to_bits());
            }
        }
    }
}
