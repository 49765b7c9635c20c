//! The adaptive design: equal-randomization run-in, allocation by posterior
//! predictive response, grid-based arm exclusion and early stopping.

use std::io::BufRead;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{check_vector, Arm, BiomarkerMatrix, DataError, PatientId, TrialData};
use crate::partition::{PartitionCatalog, PartitionError, PriorParams};
use crate::posterior::{BetaHyper, PartitionSummary, PosteriorError, PosteriorState, SummaryCriterion};

#[derive(Debug, Error, PartialEq)]
pub enum DesignError {
    #[error("invalid design configuration: {0}")]
    InvalidConfig(String),
    #[error("operation not allowed in phase {0:?}")]
    InvalidPhase(Phase),
    #[error("posterior snapshot {posterior} does not match trial data version {data}")]
    StalePosterior { posterior: u64, data: u64 },
    #[error("enrollment is complete ({0} patients)")]
    EnrollmentFull(usize),
    #[error("unknown patient {0}")]
    UnknownPatient(PatientId),
    #[error("patient {0} already has an outcome")]
    DuplicateOutcome(PatientId),
    #[error("reference points: {0}")]
    ReferencePoints(String),
    #[error(transparent)]
    Posterior(#[from] PosteriorError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// How an adaptive-phase patient is allocated from the predictive vector.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum AllocationMode {
    /// The arm with the highest `q(t, x)`; exact ties broken uniformly.
    #[default]
    Argmax,
    /// Sample an arm with probability proportional to `q(t, x)^c`.
    PowerRandomization { c: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignConfig {
    /// Maximum sample size `N`.
    pub max_enrollment: usize,
    /// Patients equally randomized before adaptation starts.
    pub runin: usize,
    /// Size of the arm universe `T`.
    pub n_arms: usize,
    #[serde(default)]
    pub hyper: BetaHyper,
    pub prior: PriorParams,
    /// Grid values per marker for the exclusion check (`H₀`).
    pub grid_points: usize,
    #[serde(default)]
    pub allocation: AllocationMode,
    #[serde(default)]
    pub seed: u64,
    /// Typical biomarker profiles that replace the exclusion grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_points: Option<Vec<Vec<f64>>>,
}

impl DesignConfig {
    /// Three arms, four markers, `N = 300`, run-in 100, `φ = 0.5`, `H₀ = 10`.
    pub fn standard() -> Self {
        Self {
            max_enrollment: 300,
            runin: 100,
            n_arms: 3,
            hyper: BetaHyper::uniform(),
            prior: PriorParams::uniform(4, 0.5).expect("valid default prior"),
            grid_points: 10,
            allocation: AllocationMode::Argmax,
            seed: 0,
            reference_points: None,
        }
    }

    pub fn n_markers(&self) -> usize {
        self.prior.n_markers()
    }

    /// A single arm is accepted: the trial then never drops or stops early.
    pub fn validate(&self) -> Result<(), DesignError> {
        let bad = |m: &str| Err(DesignError::InvalidConfig(m.to_string()));
        if self.runin == 0 || self.runin > self.max_enrollment {
            return bad("run-in size must satisfy 0 < runin <= max_enrollment");
        }
        if self.n_arms == 0 {
            return bad("at least one arm is required");
        }
        if self.grid_points < 2 {
            return bad("grid_points must be at least 2");
        }
        if let AllocationMode::PowerRandomization { c } = self.allocation {
            if !(c.is_finite() && c > 0.0) {
                return bad("power randomization exponent must be positive");
            }
        }
        self.hyper.validate()?;
        self.prior.validate()?;
        if let Some(points) = &self.reference_points {
            if points.is_empty() {
                return bad("reference point set is empty");
            }
            for p in points {
                check_vector(p, self.n_markers())?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    RunIn,
    Adaptive,
    Stopped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    SingleArmLeft,
    MaxEnrollment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropEvent {
    pub arm: Arm,
    /// Patients enrolled when the arm was dropped.
    pub enrolled: usize,
}

/// One allocation decision with the predictive vector it was based on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub patient: PatientId,
    pub arm: Arm,
    /// `q(t, x)` for every arm of the universe, dropped arms included.
    pub q: Vec<f64>,
    /// Phase in which the decision was made.
    pub phase: Phase,
    pub snapshot: u64,
}

/// What changed after an outcome was recorded.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OutcomeDelta {
    pub dropped: Vec<Arm>,
    pub stopped: Option<StopReason>,
}

/// Equally spaced `H₀` values per marker between the observed extremes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    axes: Vec<Vec<f64>>,
}

impl GridSpec {
    /// `None` when no patient has been enrolled.
    pub fn from_markers(markers: &BiomarkerMatrix, points: usize) -> Option<Self> {
        let ranges = markers.column_ranges()?;
        let axes = ranges
            .into_iter()
            .map(|(lo, hi)| {
                (0..points)
                    .map(|h| {
                        if h + 1 == points {
                            hi
                        } else {
                            lo + (hi - lo) * h as f64 / (points - 1) as f64
                        }
                    })
                    .collect()
            })
            .collect();
        Some(Self { axes })
    }

    pub fn axes(&self) -> &[Vec<f64>] {
        &self.axes
    }

    /// `H = H₀^K`.
    pub fn len(&self) -> usize {
        self.axes.iter().map(Vec::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Grid points with the last marker varying fastest.
    pub fn points(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        let sizes: Vec<usize> = self.axes.iter().map(Vec::len).collect();
        (0..self.len()).map(move |mut h| {
            let mut p = vec![0.0; sizes.len()];
            for k in (0..sizes.len()).rev() {
                p[k] = self.axes[k][h % sizes[k]];
                h /= sizes[k];
            }
            p
        })
    }
}

/// Reads one biomarker vector per line, comma or whitespace separated.
/// Blank lines and lines starting with `#` are skipped.
pub fn read_reference_points<R: BufRead>(r: R, n_markers: usize) -> Result<Vec<Vec<f64>>, DesignError> {
    let mut points = Vec::new();
    for (no, line) in r.lines().enumerate() {
        let line = line.map_err(|e| DesignError::ReferencePoints(e.to_string()))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let p = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(str::parse::<f64>)
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| DesignError::ReferencePoints(format!("line {}: {e}", no + 1)))?;
        check_vector(&p, n_markers).map_err(|e| DesignError::ReferencePoints(format!("line {}: {e}", no + 1)))?;
        points.push(p);
    }
    if points.is_empty() {
        return Err(DesignError::ReferencePoints("no points".into()));
    }
    Ok(points)
}

/// Picks an arm among `active` from the predictive vector `q` (indexed by
/// arm). Randomness is consumed only for ties or power randomization.
pub fn choose_arm<R: Rng + ?Sized>(q: &[f64], active: &[Arm], mode: AllocationMode, rng: &mut R) -> Arm {
    match mode {
        AllocationMode::Argmax => {
            let best = active.iter().map(|a| q[a.index()]).fold(f64::NEG_INFINITY, f64::max);
            let ties: Vec<Arm> = active.iter().copied().filter(|a| q[a.index()] == best).collect();
            if ties.len() == 1 {
                ties[0]
            } else {
                ties[rng.random_range(0..ties.len())]
            }
        }
        AllocationMode::PowerRandomization { c } => {
            let w: Vec<f64> = active.iter().map(|a| q[a.index()].powf(c)).collect();
            let total: f64 = w.iter().sum();
            let mut u = rng.random::<f64>() * total;
            for (a, wa) in active.iter().zip(&w) {
                if u < *wa {
                    return *a;
                }
                u -= wa;
            }
            *active.last().expect("at least one active arm")
        }
    }
}

/// Drops `t*` when `q(t*, x_h) < q(t, x_h)` for every other active `t` at
/// every point `h`. `q[i][h]` belongs to `active[i]`. If every arm would go,
/// the one with the highest mean `q` stays.
pub fn uniformly_inferior(active: &[Arm], q: &[Vec<f64>]) -> Vec<Arm> {
    if active.len() < 2 {
        return Vec::new();
    }
    let n_points = q[0].len();
    let mut dropped: Vec<usize> = (0..active.len())
        .filter(|&i| {
            (0..n_points).all(|h| (0..active.len()).all(|j| j == i || q[i][h] < q[j][h]))
        })
        .collect();
    if dropped.len() == active.len() {
        let mean = |i: usize| q[i].iter().sum::<f64>() / n_points as f64;
        let keep = (0..active.len())
            .max_by(|&a, &b| mean(a).total_cmp(&mean(b)).then(b.cmp(&a)))
            .expect("non-empty");
        dropped.retain(|&i| i != keep);
    }
    dropped.into_iter().map(|i| active[i]).collect()
}

/// Per-arm enrollment and outcome tallies with the arm's fate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArmDisposition {
    pub arm: Arm,
    pub active: bool,
    pub dropped_at: Option<usize>,
    pub assigned: usize,
    pub responders: usize,
    pub pending: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialReport {
    pub enrolled: usize,
    pub stop_reason: Option<StopReason>,
    pub active_arms: Vec<Arm>,
    pub drops: Vec<DropEvent>,
    pub arms: Vec<ArmDisposition>,
    pub partition: PartitionSummary,
}

/// One live or simulated trial run under the adaptive design.
#[derive(Debug, Clone)]
pub struct SubaTrial {
    config: DesignConfig,
    data: TrialData,
    active: Vec<Arm>,
    phase: Phase,
    stop_reason: Option<StopReason>,
    drops: Vec<DropEvent>,
    posterior: Arc<PosteriorState>,
    rng: ChaCha8Rng,
}

impl SubaTrial {
    /// Enumerates the catalog for `config.prior`; the allocation stream is
    /// seeded from `config.seed`.
    pub fn new(config: DesignConfig) -> Result<Self, DesignError> {
        config.validate()?;
        let catalog = Arc::new(PartitionCatalog::with_prior(&config.prior)?);
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Self::with_catalog(config, catalog, rng)
    }

    /// Reuses an already normalized catalog, which must have been built from
    /// `config.prior`.
    pub fn with_catalog(config: DesignConfig, catalog: Arc<PartitionCatalog>, rng: ChaCha8Rng) -> Result<Self, DesignError> {
        config.validate()?;
        if catalog.n_markers() != config.n_markers() || catalog.max_rounds() != config.prior.max_rounds() {
            return Err(DesignError::InvalidConfig("catalog shape does not match the prior".into()));
        }
        let data = TrialData::new(config.n_markers());
        let posterior = Arc::new(PosteriorState::rebuild(catalog, &data, config.hyper, config.n_arms)?);
        Ok(Self {
            active: Arm::all(config.n_arms),
            config,
            data,
            phase: Phase::RunIn,
            stop_reason: None,
            drops: Vec::new(),
            posterior,
            rng,
        })
    }

    pub fn config(&self) -> &DesignConfig {
        &self.config
    }

    pub fn data(&self) -> &TrialData {
        &self.data
    }

    pub fn enrolled(&self) -> usize {
        self.data.len()
    }

    pub fn active_arms(&self) -> &[Arm] {
        &self.active
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn stop_reason(&self) -> Option<StopReason> {
        self.stop_reason
    }

    pub fn drops(&self) -> &[DropEvent] {
        &self.drops
    }

    pub fn is_stopped(&self) -> bool {
        self.phase == Phase::Stopped
    }

    /// The latest built posterior; may lag the data until [`refresh`](Self::refresh).
    pub fn posterior(&self) -> &Arc<PosteriorState> {
        &self.posterior
    }

    pub fn is_current(&self) -> bool {
        self.posterior.snapshot() == self.data.version()
    }

    /// Rebuilds the posterior if the data moved since the last build.
    pub fn refresh(&mut self) -> Result<&Arc<PosteriorState>, DesignError> {
        if !self.is_current() {
            self.posterior = Arc::new(PosteriorState::rebuild(
                Arc::clone(self.posterior.catalog()),
                &self.data,
                self.config.hyper,
                self.config.n_arms,
            )?);
        }
        Ok(&self.posterior)
    }

    /// Enrolls a patient and assigns an arm: uniform over the universe during
    /// the run-in, by the allocation rule afterwards.
    pub fn enroll(&mut self, x: &[f64]) -> Result<Assignment, DesignError> {
        self.refresh()?;
        let posterior = Arc::clone(&self.posterior);
        self.assign_with(&posterior, x)
    }

    /// As [`enroll`](Self::enroll) with an explicitly supplied posterior,
    /// which must match the current data.
    pub fn assign_with(&mut self, posterior: &PosteriorState, x: &[f64]) -> Result<Assignment, DesignError> {
        if self.phase == Phase::Stopped {
            return Err(DesignError::InvalidPhase(self.phase));
        }
        if self.data.len() >= self.config.max_enrollment {
            return Err(DesignError::EnrollmentFull(self.data.len()));
        }
        check_vector(x, self.config.n_markers())?;
        if posterior.snapshot() != self.data.version() {
            return Err(DesignError::StalePosterior {
                posterior: posterior.snapshot(),
                data: self.data.version(),
            });
        }
        let q = posterior.predictive_all(x)?;
        let phase = self.phase;
        let arm = match phase {
            Phase::RunIn => Arm(self.rng.random_range(0..self.config.n_arms)),
            _ => choose_arm(&q, &self.active, self.config.allocation, &mut self.rng),
        };
        let i = self.data.push(x, Some(arm), None)?;
        if self.phase == Phase::RunIn && self.data.len() >= self.config.runin {
            self.phase = Phase::Adaptive;
        }
        Ok(Assignment {
            patient: PatientId::from_index(i),
            arm,
            q,
            phase,
            snapshot: posterior.snapshot(),
        })
    }

    /// Stores an outcome, rebuilds the posterior and, once past the run-in,
    /// runs the exclusion check and the stopping rules.
    pub fn record_outcome(&mut self, patient: PatientId, y: bool) -> Result<OutcomeDelta, DesignError> {
        if self.phase == Phase::Stopped {
            return Err(DesignError::InvalidPhase(self.phase));
        }
        let i = patient
            .index()
            .filter(|&i| i < self.data.len())
            .ok_or(DesignError::UnknownPatient(patient))?;
        if self.data.outcome(i).is_some() {
            return Err(DesignError::DuplicateOutcome(patient));
        }
        self.data.set_outcome(i, y);
        self.refresh()?;

        let mut delta = OutcomeDelta::default();
        if self.phase == Phase::Adaptive {
            delta.dropped = self.exclusion_check()?;
            for &arm in &delta.dropped {
                self.active.retain(|a| *a != arm);
                self.drops.push(DropEvent {
                    arm,
                    enrolled: self.data.len(),
                });
            }
            if !delta.dropped.is_empty() && self.active.len() == 1 {
                delta.stopped = Some(StopReason::SingleArmLeft);
            }
        }
        if delta.stopped.is_none()
            && self.data.len() == self.config.max_enrollment
            && self.data.n_observed() == self.data.len()
        {
            delta.stopped = Some(StopReason::MaxEnrollment);
        }
        if let Some(reason) = delta.stopped {
            self.phase = Phase::Stopped;
            self.stop_reason = Some(reason);
        }
        Ok(delta)
    }

    /// Arms that are uniformly inferior on the current grid (or reference
    /// points). Does not modify the trial.
    pub fn exclusion_check(&mut self) -> Result<Vec<Arm>, DesignError> {
        if self.active.len() < 2 || self.data.is_empty() {
            return Ok(Vec::new());
        }
        self.refresh()?;
        let q = match &self.config.reference_points {
            Some(points) => {
                let mut q = vec![Vec::with_capacity(points.len()); self.active.len()];
                for p in points {
                    let all = self.posterior.predictive_all(p)?;
                    for (qa, arm) in q.iter_mut().zip(&self.active) {
                        qa.push(all[arm.index()]);
                    }
                }
                q
            }
            None => {
                let grid = GridSpec::from_markers(self.data.markers(), self.config.grid_points).expect("non-empty data");
                self.posterior.predictive_grid(grid.axes(), &self.active)?
            }
        };
        Ok(uniformly_inferior(&self.active, &q))
    }

    /// `q(t, x)` for every arm from the latest built posterior.
    pub fn predictive(&self, x: &[f64]) -> Result<Vec<f64>, DesignError> {
        Ok(self.posterior.predictive_all(x)?)
    }

    pub fn dispositions(&self) -> Vec<ArmDisposition> {
        let mut out: Vec<ArmDisposition> = Arm::all(self.config.n_arms)
            .into_iter()
            .map(|arm| ArmDisposition {
                arm,
                active: self.active.contains(&arm),
                dropped_at: self.drops.iter().find(|d| d.arm == arm).map(|d| d.enrolled),
                assigned: 0,
                responders: 0,
                pending: 0,
            })
            .collect();
        for i in 0..self.data.len() {
            if let Some(arm) = self.data.arm(i) {
                let d = &mut out[arm.index()];
                d.assigned += 1;
                match self.data.outcome(i) {
                    Some(true) => d.responders += 1,
                    Some(false) => {}
                    None => d.pending += 1,
                }
            }
        }
        out
    }

    /// Least-squares partition with leaf recommendations restricted to the
    /// arms still active, plus the trial's bookkeeping.
    pub fn final_report(&mut self) -> Result<TrialReport, DesignError> {
        if self.phase != Phase::Stopped {
            return Err(DesignError::InvalidPhase(self.phase));
        }
        self.refresh()?;
        let partition = self.posterior.summarize(SummaryCriterion::LeastSquares, &self.active)?;
        Ok(TrialReport {
            enrolled: self.data.len(),
            stop_reason: self.stop_reason,
            active_arms: self.active.clone(),
            drops: self.drops.clone(),
            arms: self.dispositions(),
            partition,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config(n_arms: usize) -> DesignConfig {
        DesignConfig {
            max_enrollment: 12,
            runin: 4,
            n_arms,
            hyper: BetaHyper::uniform(),
            prior: PriorParams::uniform(2, 0.5).unwrap().with_max_rounds(2).unwrap(),
            grid_points: 3,
            allocation: AllocationMode::Argmax,
            seed: 7,
            reference_points: None,
        }
    }

    #[test]
    fn config_validation() {
        let mut c = small_config(3);
        assert!(c.validate().is_ok());
        c.runin = 13;
        assert!(matches!(c.validate(), Err(DesignError::InvalidConfig(_))));
        let mut c = small_config(3);
        c.grid_points = 1;
        assert!(c.validate().is_err());
        let mut c = small_config(3);
        c.allocation = AllocationMode::PowerRandomization { c: 0.0 };
        assert!(c.validate().is_err());
    }

    #[test]
    fn argmax_picks_the_largest() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let arm = choose_arm(&[0.7, 0.3, 0.3], &Arm::all(3), AllocationMode::Argmax, &mut rng);
        assert_eq!(arm, Arm(0));
        // dropped arms are ignored even when best
        let arm = choose_arm(&[0.9, 0.3, 0.4], &[Arm(1), Arm(2)], AllocationMode::Argmax, &mut rng);
        assert_eq!(arm, Arm(2));
    }

    #[test]
    fn grid_spans_observed_range() {
        let m = BiomarkerMatrix::from_rows(2, &[[0.0, 1.0], [1.0, -1.0], [0.5, 0.0]]).unwrap();
        let g = GridSpec::from_markers(&m, 3).unwrap();
        assert_eq!(g.axes(), &[vec![0.0, 0.5, 1.0], vec![-1.0, 0.0, 1.0]]);
        assert_eq!(g.len(), 9);
        let pts: Vec<Vec<f64>> = g.points().collect();
        assert_eq!(pts[1], vec![0.0, 0.0]);
        assert_eq!(pts[3], vec![0.5, -1.0]);
        assert!(GridSpec::from_markers(&BiomarkerMatrix::new(2), 3).is_none());
    }

    #[test]
    fn inferior_rule_is_strict() {
        let active = Arm::all(3);
        let q = vec![vec![0.5, 0.6], vec![0.4, 0.5], vec![0.45, 0.7]];
        assert_eq!(uniformly_inferior(&active, &q), vec![Arm(1)]);
        let q = vec![vec![0.5, 0.6], vec![0.5, 0.5], vec![0.45, 0.7]];
        assert!(uniformly_inferior(&active, &q).is_empty());
        assert!(uniformly_inferior(&[Arm(0)], &[vec![0.1]]).is_empty());
    }

    #[test]
    fn reference_points_parse() {
        let text = "# profiles\n0.1, 0.2\n\n-0.5 0.7\n";
        let pts = read_reference_points(text.as_bytes(), 2).unwrap();
        assert_eq!(pts, vec![vec![0.1, 0.2], vec![-0.5, 0.7]]);
        assert!(read_reference_points("0.1\n".as_bytes(), 2).is_err());
        assert!(read_reference_points("# nothing\n".as_bytes(), 2).is_err());
    }

    #[test]
    fn runin_then_adaptive_then_max_enrollment() {
        let mut trial = SubaTrial::new(small_config(2)).unwrap();
        for i in 0..12 {
            let x = [i as f64 / 12.0, 0.5 - i as f64 / 24.0];
            let a = trial.enroll(&x).unwrap();
            assert_eq!(a.phase, if i < 4 { Phase::RunIn } else { Phase::Adaptive });
            assert!(trial.active_arms().contains(&a.arm));
            trial.record_outcome(a.patient, i % 3 == 0).unwrap();
            if trial.is_stopped() {
                break;
            }
        }
        assert!(trial.is_stopped());
        let report = trial.final_report().unwrap();
        assert_eq!(report.arms.iter().map(|d| d.assigned).sum::<usize>(), trial.enrolled());
    }

    #[test]
    fn outcome_errors() {
        let mut trial = SubaTrial::new(small_config(2)).unwrap();
        let a = trial.enroll(&[0.0, 0.0]).unwrap();
        assert_eq!(
            trial.record_outcome(PatientId(5), true),
            Err(DesignError::UnknownPatient(PatientId(5)))
        );
        assert_eq!(
            trial.record_outcome(PatientId(0), true),
            Err(DesignError::UnknownPatient(PatientId(0)))
        );
        trial.record_outcome(a.patient, true).unwrap();
        assert_eq!(
            trial.record_outcome(a.patient, false),
            Err(DesignError::DuplicateOutcome(a.patient))
        );
        assert!(matches!(trial.final_report(), Err(DesignError::InvalidPhase(Phase::RunIn))));
    }

    #[test]
    fn stale_posterior_is_rejected() {
        let mut trial = SubaTrial::new(small_config(2)).unwrap();
        let old = Arc::clone(trial.posterior());
        trial.enroll(&[0.1, 0.2]).unwrap();
        assert!(matches!(
            trial.assign_with(&old, &[0.0, 0.0]),
            Err(DesignError::StalePosterior { .. })
        ));
    }
}
