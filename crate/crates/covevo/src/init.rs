//! Weight initializer table.
//!
//! Constants follow common framework defaults: normal N(0, 0.05^2),
//! uniform U(-0.05, 0.05), xavier N(0, 2 / (fan_in + fan_out)). They are
//! echoed into every resolved run config so a result can be reproduced
//! without reading this source.

use crate::error::{Error, Result};
use rand::Rng;
use rand_distr::{Distribution, Normal};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Initializer {
    Normal,
    Uniform,
    Xavier,
}

/// Fixed id order; descriptor fields index into this table.
pub const INITIALIZERS: [Initializer; 3] =
    [Initializer::Normal, Initializer::Uniform, Initializer::Xavier];

const NORMAL_STDDEV: f64 = 0.05;
const UNIFORM_LIMIT: f64 = 0.05;

impl Initializer {
    /// Draws one weight. fan_in/fan_out are the full layer dimensions even
    /// though draws happen per element.
    pub fn sample(self, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> f64 {
        match self {
            Initializer::Normal => Normal::new(0.0, NORMAL_STDDEV).unwrap().sample(rng),
            Initializer::Uniform => rng.random_range(-UNIFORM_LIMIT..UNIFORM_LIMIT),
            Initializer::Xavier => {
                let var = 2.0 / (fan_in + fan_out) as f64;
                Normal::new(0.0, var.sqrt()).unwrap().sample(rng)
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Initializer::Normal => "normal",
            Initializer::Uniform => "uniform",
            Initializer::Xavier => "xavier",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        INITIALIZERS
            .iter()
            .copied()
            .find(|i| i.name() == name)
            .ok_or_else(|| Error::Parse(format!("unknown initializer '{name}'")))
    }

    pub fn id(self) -> usize {
        INITIALIZERS.iter().position(|&i| i == self).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn sampling_is_deterministic_per_seed() {
        for &init in &INITIALIZERS {
            let mut a = stream(11);
            let mut b = stream(11);
            for _ in 0..32 {
                assert_eq!(init.sample(4, 3, &mut a), init.sample(4, 3, &mut b));
            }
        }
    }

    #[test]
    fn uniform_stays_in_range() {
        let mut rng = stream(5);
        for _ in 0..1000 {
            let w = Initializer::Uniform.sample(8, 8, &mut rng);
            assert!((-UNIFORM_LIMIT..UNIFORM_LIMIT).contains(&w));
        }
    }

    /// Sample variance of xavier draws approaches 2/(fan_in+fan_out).
    #[test]
    fn xavier_variance_tracks_fan_sum() {
        let mut rng = stream(9);
        let n = 20_000;
        let var_target = 2.0 / (6 + 2) as f64;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let w = Initializer::Xavier.sample(6, 2, &mut rng);
            sum += w;
            sum_sq += w * w;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        assert!((var - var_target).abs() / var_target < 0.05);
    }

    #[test]
    fn names_round_trip() {
        for &i in &INITIALIZERS {
            assert_eq!(Initializer::from_name(i.name()).unwrap(), i);
        }
        assert!(Initializer::from_name("he").is_err());
    }
}
