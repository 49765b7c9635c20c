//! Benchmark designs: equal randomization, outcome-adaptive randomization
//! over fixed subgroups, and greedy allocation from a probit regression.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use libm::erfc;
use thiserror::Error;

use crate::data::{Arm, TrialData};
use crate::design::{choose_arm, AllocationMode};
use crate::posterior::{ArmTally, BetaHyper};

/// Uniform choice over `arms`.
pub fn er_assign<R: Rng + ?Sized>(rng: &mut R, arms: &[Arm]) -> Arm {
    arms[rng.random_range(0..arms.len())]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArConfig {
    /// Zero-based marker defining the subgroups.
    pub marker: usize,
    /// Strictly increasing cut points; `B` boundaries give `B + 1` subgroups.
    pub boundaries: Vec<f64>,
    pub hyper: BetaHyper,
}

impl Default for ArConfig {
    fn default() -> Self {
        Self {
            marker: 0,
            boundaries: vec![-0.5, 0.5],
            hyper: BetaHyper::uniform(),
        }
    }
}

impl ArConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.boundaries.is_empty() {
            return Err("at least one subgroup boundary is required".into());
        }
        if self.boundaries.windows(2).any(|w| w[0] >= w[1]) || self.boundaries.iter().any(|b| !b.is_finite()) {
            return Err("subgroup boundaries must be finite and strictly increasing".into());
        }
        Ok(())
    }

    /// `{x < b₁}`, `{b₁ ≤ x ≤ b₂}`, `{b₂ < x ≤ b₃}`, …, `{x > b_B}`.
    pub fn subgroup(&self, x: &[f64]) -> usize {
        let v = x[self.marker];
        let b = &self.boundaries;
        if v < b[0] {
            return 0;
        }
        (1..b.len()).find(|&j| v <= b[j]).unwrap_or(b.len())
    }
}

/// Outcome-adaptive randomization with a Beta posterior per subgroup and arm.
#[derive(Debug, Clone)]
pub struct ArDesign {
    config: ArConfig,
    counts: Vec<Vec<ArmTally>>,
}

impl ArDesign {
    pub fn new(config: ArConfig, n_arms: usize) -> Self {
        let groups = config.boundaries.len() + 1;
        Self {
            config,
            counts: vec![vec![ArmTally::default(); n_arms]; groups],
        }
    }

    pub fn config(&self) -> &ArConfig {
        &self.config
    }

    pub fn record(&mut self, x: &[f64], arm: Arm, y: bool) {
        let b = self.config.subgroup(x);
        self.counts[b][arm.index()].record(y);
    }

    pub fn counts(&self, subgroup: usize) -> &[ArmTally] {
        &self.counts[subgroup]
    }

    /// Allocation probabilities over `arms`, proportional to the posterior
    /// mean response rate in the patient's subgroup.
    pub fn probabilities(&self, x: &[f64], arms: &[Arm]) -> Vec<f64> {
        let b = self.config.subgroup(x);
        let p: Vec<f64> = arms
            .iter()
            .map(|a| self.config.hyper.posterior_mean(self.counts[b][a.index()]))
            .collect();
        let total: f64 = p.iter().sum();
        p.into_iter().map(|v| v / total).collect()
    }

    pub fn assign<R: Rng + ?Sized>(&self, x: &[f64], arms: &[Arm], rng: &mut R) -> Arm {
        let p = self.probabilities(x, arms);
        let mut u = rng.random::<f64>();
        for (a, pa) in arms.iter().zip(&p) {
            if u < *pa {
                return *a;
            }
            u -= pa;
        }
        *arms.last().expect("at least one arm")
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProbitError {
    #[error("both outcome classes are needed to fit")]
    NoVariation,
    #[error("design matrix is rank deficient")]
    DegenerateDesign,
    #[error("no convergence after {iterations} iterations")]
    NonConvergence { iterations: usize },
    #[error("likelihood is unbounded (separated data)")]
    Separation,
}

const MAX_ITERATIONS: usize = 100;
const GRADIENT_TOLERANCE: f64 = 1e-8;
const MAX_COEFFICIENT_NORM: f64 = 1e3;
const MIN_INFORMATION_PER_ROW: f64 = 1e-6;

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// `ln Φ(z)`, using the asymptotic tail series far below zero.
fn log_normal_cdf(z: f64) -> f64 {
    if z > -30.0 {
        normal_cdf(z).ln()
    } else {
        let z2 = z * z;
        -0.5 * z2 - (2.0 * std::f64::consts::PI).sqrt().ln() - (-z).ln() + (1.0 - 1.0 / z2 + 3.0 / (z2 * z2)).ln()
    }
}

/// `φ(z) / Φ(z)`.
fn mills(z: f64) -> f64 {
    if z > -30.0 {
        normal_pdf(z) / normal_cdf(z)
    } else {
        let z2 = z * z;
        -z / (1.0 - 1.0 / z2 + 3.0 / (z2 * z2))
    }
}

/// `Σ ln Φ(s_i η_i)` with `s_i = ±1` for response / no response.
pub fn probit_log_likelihood(x: &DMatrix<f64>, y: &[bool], beta: &DVector<f64>) -> f64 {
    let eta = x * beta;
    eta.iter()
        .zip(y)
        .map(|(e, &yi)| log_normal_cdf(if yi { *e } else { -*e }))
        .sum()
}

/// Analytic score `Σ s_i φ(η_i)/Φ(s_i η_i) x_i`.
pub fn probit_gradient(x: &DMatrix<f64>, y: &[bool], beta: &DVector<f64>) -> DVector<f64> {
    let eta = x * beta;
    let lambda = DVector::from_iterator(
        y.len(),
        eta.iter().zip(y).map(|(e, &yi)| if yi { mills(*e) } else { -mills(-*e) }),
    );
    x.transpose() * lambda
}

/// Maximum likelihood probit coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbitFit {
    pub coefficients: DVector<f64>,
    pub log_likelihood: f64,
    pub iterations: usize,
}

/// Newton ascent with step halving. Stops when the score's sup-norm falls
/// below 1e-8.
pub fn probit_fit(x: &DMatrix<f64>, y: &[bool]) -> Result<ProbitFit, ProbitError> {
    assert_eq!(x.nrows(), y.len());
    if y.iter().all(|&v| v) || y.iter().all(|&v| !v) {
        return Err(ProbitError::NoVariation);
    }
    let p = x.ncols();
    let mut beta = DVector::zeros(p);
    let mut ll = probit_log_likelihood(x, y, &beta);
    for iteration in 0..=MAX_ITERATIONS {
        let eta = x * &beta;
        let mut grad = DVector::zeros(p);
        let mut info = DMatrix::zeros(p, p);
        for (i, (&e, &yi)) in eta.iter().zip(y).enumerate() {
            let lambda = if yi { mills(e) } else { -mills(-e) };
            let w = lambda * (lambda + e);
            let row = x.row(i);
            grad += row.transpose() * lambda;
            info += row.transpose() * row * w;
        }
        if grad.amax() < GRADIENT_TOLERANCE {
            // Under separation the score dies out long before the
            // coefficients diverge; the information then vanishes along the
            // separating direction.
            let min_info = info.clone().symmetric_eigen().eigenvalues.min();
            if min_info < MIN_INFORMATION_PER_ROW * y.len() as f64 {
                return Err(ProbitError::Separation);
            }
            return Ok(ProbitFit {
                coefficients: beta,
                log_likelihood: ll,
                iterations: iteration,
            });
        }
        if iteration == MAX_ITERATIONS {
            break;
        }
        let chol = info.cholesky().ok_or(ProbitError::DegenerateDesign)?;
        let step = chol.solve(&grad);
        let mut scale = 1.0;
        loop {
            let candidate = &beta + &step * scale;
            let cand_ll = probit_log_likelihood(x, y, &candidate);
            // Near the optimum a full step moves the likelihood by less than
            // its rounding error, so allow a drop of that size.
            if cand_ll >= ll - 1e-12 * (1.0 + ll.abs()) || scale < 1e-10 {
                beta = candidate;
                ll = cand_ll;
                break;
            }
            scale *= 0.5;
        }
        if beta.norm() > MAX_COEFFICIENT_NORM || !beta.iter().all(|b| b.is_finite()) {
            return Err(ProbitError::Separation);
        }
    }
    Err(ProbitError::NonConvergence {
        iterations: MAX_ITERATIONS,
    })
}

/// How the treatment enters the linear predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArmCoding {
    /// One effect per arm and no separate intercept.
    #[default]
    Categorical,
    /// A single slope on the arm label `z = 1, 2, …`.
    Numeric,
}

/// Fitted `P(y = 1 | arm, x) = Φ(β₀(arm) + β₁'x)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegFit {
    pub coding: ArmCoding,
    /// Categorical: one effect per arm. Numeric: the single slope on `z`.
    pub arm_effects: Vec<f64>,
    /// One slope per marker; zero for markers that were constant in the data.
    pub slopes: Vec<f64>,
    pub iterations: usize,
    pub log_likelihood: f64,
}

impl RegFit {
    /// Fits to every patient with an observed outcome. Under categorical
    /// coding a constant marker is collinear with the arm effects and is left
    /// out of the model.
    pub fn fit(data: &TrialData, n_arms: usize, coding: ArmCoding) -> Result<Self, ProbitError> {
        let rows: Vec<(Arm, bool, &[f64])> = (0..data.len())
            .filter_map(|i| data.observed(i).map(|(a, y)| (a, y, data.markers().row(i))))
            .collect();
        let k_count = data.n_markers();
        let kept: Vec<usize> = (0..k_count)
            .filter(|&k| {
                coding == ArmCoding::Numeric
                    || rows.windows(2).any(|w| w[0].2[k] != w[1].2[k])
            })
            .collect();
        let arm_cols = match coding {
            ArmCoding::Categorical => n_arms,
            ArmCoding::Numeric => 1,
        };
        let p = arm_cols + kept.len();
        let mut x = DMatrix::zeros(rows.len(), p);
        for (i, (arm, _, xi)) in rows.iter().enumerate() {
            match coding {
                ArmCoding::Categorical => x[(i, arm.index())] = 1.0,
                ArmCoding::Numeric => x[(i, 0)] = arm.label() as f64,
            }
            for (c, &k) in kept.iter().enumerate() {
                x[(i, arm_cols + c)] = xi[k];
            }
        }
        if (0..p).any(|c| x.column(c).iter().all(|v| *v == 0.0)) {
            return Err(ProbitError::DegenerateDesign);
        }
        let y: Vec<bool> = rows.iter().map(|r| r.1).collect();
        let fit = probit_fit(&x, &y)?;
        let mut slopes = vec![0.0; k_count];
        for (c, &k) in kept.iter().enumerate() {
            slopes[k] = fit.coefficients[arm_cols + c];
        }
        Ok(Self {
            coding,
            arm_effects: fit.coefficients.iter().take(arm_cols).copied().collect(),
            slopes,
            iterations: fit.iterations,
            log_likelihood: fit.log_likelihood,
        })
    }

    pub fn linear_predictor(&self, arm: Arm, x: &[f64]) -> f64 {
        let base = match self.coding {
            ArmCoding::Categorical => self.arm_effects[arm.index()],
            ArmCoding::Numeric => self.arm_effects[0] * arm.label() as f64,
        };
        base + self.slopes.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }

    pub fn predict(&self, arm: Arm, x: &[f64]) -> f64 {
        normal_cdf(self.linear_predictor(arm, x))
    }
}

/// Greedy allocation to the arm with the best fitted response probability;
/// uniform when no usable fit exists.
pub fn reg_assign<R: Rng + ?Sized>(fit: Option<&RegFit>, x: &[f64], arms: &[Arm], rng: &mut R) -> Arm {
    match fit {
        None => er_assign(rng, arms),
        Some(fit) => {
            let size = arms.iter().map(|a| a.index() + 1).max().unwrap_or(0);
            let mut q = vec![f64::NEG_INFINITY; size];
            for a in arms {
                q[a.index()] = fit.predict(*a, x);
            }
            choose_arm(&q, arms, AllocationMode::Argmax, rng)
        }
    }
}
