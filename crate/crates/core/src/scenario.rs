//! The six simulation scenarios: biomarker law, true response curves and
//! the true optimal-treatment subsets.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::comparators::normal_cdf;
use crate::data::Arm;

pub const SCENARIO_MARKERS: usize = 4;
pub const SCENARIO_ARMS: usize = 3;

/// Scale of the Gaussian CDF used by every probit-shaped truth.
const TRUTH_SCALE: f64 = 1.5;

#[derive(Debug, Error, PartialEq)]
pub enum ScenarioError {
    #[error("unknown scenario {0}; scenarios are numbered 1 to 6")]
    Unknown(u8),
    #[error("scenario {0} has no true subsets")]
    UndefinedSubset(u8),
}

/// `Φ(z / 1.5)`: Gaussian CDF with mean 0 and standard deviation 1.5.
pub fn scaled_cdf(z: f64) -> f64 {
    normal_cdf(z / TRUTH_SCALE)
}

/// True optimal-treatment subset of a profile, zero-based. `tie` is set on
/// the measure-zero boundary where the lowest index was taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetLabel {
    pub index: usize,
    pub tie: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Scenario(u8);

impl TryFrom<u8> for Scenario {
    type Error = ScenarioError;

    fn try_from(id: u8) -> Result<Self, Self::Error> {
        Scenario::new(id)
    }
}

impl From<Scenario> for u8 {
    fn from(s: Scenario) -> u8 {
        s.0
    }
}

impl Scenario {
    pub fn new(id: u8) -> Result<Self, ScenarioError> {
        if (1..=6).contains(&id) {
            Ok(Scenario(id))
        } else {
            Err(ScenarioError::Unknown(id))
        }
    }

    pub fn all() -> Vec<Scenario> {
        (1..=6).map(Scenario).collect()
    }

    pub fn id(self) -> u8 {
        self.0
    }

    pub fn n_markers(self) -> usize {
        SCENARIO_MARKERS
    }

    pub fn n_arms(self) -> usize {
        SCENARIO_ARMS
    }

    /// Maps `K` uniforms on `[0, 1)` to a biomarker profile. Every scenario
    /// consumes the same uniforms so patient streams line up across
    /// scenarios; scenario 1 pins marker 2 at 0.8.
    pub fn profile_from_uniforms(self, u: &[f64]) -> Vec<f64> {
        let mut x: Vec<f64> = u.iter().map(|v| 2.0 * v - 1.0).collect();
        if self.0 == 1 {
            x[1] = 0.8;
        }
        x
    }

    pub fn draw_profile<R: Rng + ?Sized>(self, rng: &mut R) -> Vec<f64> {
        let u: Vec<f64> = (0..SCENARIO_MARKERS).map(|_| rng.random::<f64>()).collect();
        self.profile_from_uniforms(&u)
    }

    /// `θ_t(x)`, the true response probability.
    pub fn true_response(self, arm: Arm, x: &[f64]) -> f64 {
        let (x1, x2, x3) = (x[0], x[1], x[2]);
        match (self.0, arm.index()) {
            (1 | 2, 0) => scaled_cdf(x1 + 1.5 * x2),
            (1 | 2, 1) => scaled_cdf(x1),
            (1 | 2, 2) => scaled_cdf(x1 - 1.5 * x2),
            (3, 0) => scaled_cdf(x1 + 1.5 * x2 - 0.5 * x3 + 2.0 * x1 * x3),
            (3, 1) => scaled_cdf(-x1 - 2.0 * x3),
            (3, 2) => scaled_cdf(x1 - 1.5 * x2 - 2.0 * x1 * x2),
            (4 | 5, 0) => scaled_cdf(x1 * x1 / 2.0 + x1 * x2 / 2.0),
            (4 | 5, 1) => scaled_cdf(x2 * x2 / 2.0 - x1 * x2 / 2.0),
            (4, 2) => 0.15,
            (5, 2) => 0.3,
            (6, _) => 0.4,
            (s, t) => panic!("scenario {s} has no arm {}", t + 1),
        }
    }

    /// Number of true subsets, or `None` where subsets are not defined.
    pub fn n_subsets(self) -> Option<usize> {
        match self.0 {
            2 | 4 | 5 => Some(2),
            3 => Some(3),
            _ => None,
        }
    }

    /// Which true subset `x` belongs to.
    pub fn truth_subset(self, x: &[f64]) -> Result<SubsetLabel, ScenarioError> {
        let (x1, x2, x3) = (x[0], x[1], x[2]);
        let scores = match self.0 {
            2 => return Ok(SubsetLabel {
                index: if x2 > 0.0 { 0 } else { 1 },
                tie: x2 == 0.0,
            }),
            3 => vec![
                x1 + 1.5 * x2 - 0.5 * x3 + 2.0 * x1 * x3,
                -x1 - 2.0 * x3,
                x1 - 1.5 * x2 - 2.0 * x1 * x2,
            ],
            4 | 5 => vec![x1 * x1 / 2.0 + x1 * x2 / 2.0, x2 * x2 / 2.0 - x1 * x2 / 2.0],
            s => return Err(ScenarioError::UndefinedSubset(s)),
        };
        let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let index = scores.iter().position(|s| *s == best).expect("non-empty");
        let tie = scores.iter().filter(|s| **s == best).count() > 1;
        Ok(SubsetLabel { index, tie })
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}
