//! Monte Carlo operating characteristics: simulated trials under every
//! design with shared patient streams, and study-level summaries.

use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::comparators::{er_assign, reg_assign, ArConfig, ArDesign, ArmCoding, RegFit};
use crate::data::{Arm, DataError, TrialData};
use crate::design::{AllocationMode, DesignConfig, DesignError, DropEvent, StopReason, SubaTrial};
use crate::partition::{PartitionCatalog, PartitionError, PriorParams};
use crate::posterior::{BetaHyper, PosteriorError, PosteriorState};
use crate::scenario::Scenario;

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("invalid study configuration: {0}")]
    InvalidConfig(String),
    #[error("no patients after the run-in, so the response rate is undefined")]
    EmptyPostRunIn,
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Posterior(#[from] PosteriorError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DesignKind {
    Suba,
    Er,
    Ar,
    Reg,
}

impl DesignKind {
    pub fn all() -> [DesignKind; 4] {
        [DesignKind::Suba, DesignKind::Er, DesignKind::Ar, DesignKind::Reg]
    }

    pub fn name(self) -> &'static str {
        match self {
            DesignKind::Suba => "suba",
            DesignKind::Er => "er",
            DesignKind::Ar => "ar",
            DesignKind::Reg => "reg",
        }
    }

    fn stream(self) -> u64 {
        match self {
            DesignKind::Suba => 2,
            DesignKind::Er => 3,
            DesignKind::Ar => 4,
            DesignKind::Reg => 5,
        }
    }
}

impl std::fmt::Display for DesignKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DesignKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "suba" => Ok(DesignKind::Suba),
            "er" => Ok(DesignKind::Er),
            "ar" => Ok(DesignKind::Ar),
            "reg" => Ok(DesignKind::Reg),
            other => Err(format!("unknown design '{other}' (expected suba, er, ar or reg)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub scenario: Scenario,
    pub designs: Vec<DesignKind>,
    pub replicates: usize,
    pub seed: u64,
    pub max_enrollment: usize,
    pub runin: usize,
    pub phi: f64,
    pub grid_points: usize,
    pub max_rounds: usize,
    pub hyper: BetaHyper,
    pub allocation: AllocationMode,
    pub reg_coding: ArmCoding,
    pub ar: ArConfig,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::new(1).expect("valid scenario"),
            designs: DesignKind::all().to_vec(),
            replicates: 200,
            seed: 20_160_701,
            max_enrollment: 300,
            runin: 100,
            phi: 0.5,
            grid_points: 10,
            max_rounds: 3,
            hyper: BetaHyper::uniform(),
            allocation: AllocationMode::Argmax,
            reg_coding: ArmCoding::Categorical,
            ar: ArConfig::default(),
        }
    }
}

impl StudyConfig {
    pub fn prior(&self) -> Result<PriorParams, SimulationError> {
        Ok(PriorParams::uniform(self.scenario.n_markers(), self.phi)?.with_max_rounds(self.max_rounds)?)
    }

    pub fn design_config(&self) -> Result<DesignConfig, SimulationError> {
        Ok(DesignConfig {
            max_enrollment: self.max_enrollment,
            runin: self.runin,
            n_arms: self.scenario.n_arms(),
            hyper: self.hyper,
            prior: self.prior()?,
            grid_points: self.grid_points,
            allocation: self.allocation,
            seed: self.seed,
            reference_points: None,
        })
    }

    pub fn validate(&self) -> Result<(), SimulationError> {
        if self.replicates == 0 {
            return Err(SimulationError::InvalidConfig("replicates must be at least 1".into()));
        }
        if self.designs.is_empty() {
            return Err(SimulationError::InvalidConfig("no designs selected".into()));
        }
        self.ar.validate().map_err(SimulationError::InvalidConfig)?;
        self.design_config()?.validate()?;
        Ok(())
    }
}

/// Independent ChaCha stream for one replicate and purpose. Streams depend
/// only on the master seed, so replicates can run in any order.
pub fn replicate_rng(master_seed: u64, replicate: usize, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(replicate as u64 * 16 + purpose);
    rng
}

const PATIENT_STREAM: u64 = 0;
const FRESH_PATIENT_STREAM: u64 = 1;

/// One virtual patient: a profile and the uniform that decides the outcome
/// under whichever arm is given (`y = u < θ_t(x)`).
#[derive(Debug, Clone, PartialEq)]
pub struct PatientDraw {
    pub x: Vec<f64>,
    pub u: f64,
}

pub fn draw_patients(scenario: Scenario, n: usize, rng: &mut ChaCha8Rng) -> Vec<PatientDraw> {
    (0..n)
        .map(|_| {
            let x = scenario.draw_profile(rng);
            PatientDraw { x, u: rng.random::<f64>() }
        })
        .collect()
}

/// Everything kept about one simulated trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub design: DesignKind,
    /// Responders among post-run-in patients; `None` when there are none.
    pub orr: Option<f64>,
    /// Patients per arm after the run-in.
    pub np: Vec<usize>,
    /// `[subset][arm]` post-run-in counts; empty where subsets are undefined.
    pub np_subset: Vec<Vec<usize>>,
    /// Post-run-in patients on a subset boundary (classified to the lowest index).
    pub subset_ties: usize,
    /// Enrollment at an early stop, otherwise `N`.
    pub stop_size: usize,
    pub stop_reason: Option<StopReason>,
    pub drops: Vec<DropEvent>,
    /// `q(1, x) − q(t, x)` for `t = 2..T` at a fresh profile after all `N`
    /// patients; only for the adaptive design.
    pub q_diff: Vec<f64>,
}

impl ReplicateRecord {
    pub fn orr(&self) -> Result<f64, SimulationError> {
        self.orr.ok_or(SimulationError::EmptyPostRunIn)
    }
}

/// Runs one trial of `design` on a fixed patient stream.
pub fn simulate_trial(
    config: &StudyConfig,
    design: DesignKind,
    replicate: usize,
    patients: &[PatientDraw],
    fresh: &[f64],
    catalog: &Arc<PartitionCatalog>,
) -> Result<ReplicateRecord, SimulationError> {
    let scenario = config.scenario;
    let n_arms = scenario.n_arms();
    let all_arms = Arm::all(n_arms);
    let mut rng = replicate_rng(config.seed, replicate, design.stream());
    let mut data = TrialData::new(scenario.n_markers());
    let outcome = |arm: Arm, p: &PatientDraw| p.u < scenario.true_response(arm, &p.x);

    let mut stop_size = config.max_enrollment;
    let mut stop_reason = None;
    let mut drops = Vec::new();
    let mut q_diff = Vec::new();

    match design {
        DesignKind::Suba => {
            let mut trial = SubaTrial::with_catalog(config.design_config()?, Arc::clone(catalog), rng)?;
            for p in patients {
                let arm = if trial.is_stopped() {
                    trial.active_arms()[0]
                } else {
                    let a = trial.enroll(&p.x)?;
                    trial.record_outcome(a.patient, outcome(a.arm, p))?;
                    a.arm
                };
                data.push(&p.x, Some(arm), Some(outcome(arm, p)))?;
            }
            if trial.stop_reason() == Some(StopReason::SingleArmLeft) {
                stop_size = trial.enrolled();
            }
            stop_reason = trial.stop_reason();
            drops = trial.drops().to_vec();
            let q = if trial.enrolled() == data.len() {
                trial.refresh()?.predictive_all(fresh)?
            } else {
                PosteriorState::rebuild(Arc::clone(catalog), &data, config.hyper, n_arms)?.predictive_all(fresh)?
            };
            q_diff = q[1..].iter().map(|qt| q[0] - qt).collect();
        }
        DesignKind::Er => {
            for p in patients {
                let arm = er_assign(&mut rng, &all_arms);
                data.push(&p.x, Some(arm), Some(outcome(arm, p)))?;
            }
        }
        DesignKind::Ar => {
            let mut ar = ArDesign::new(config.ar.clone(), n_arms);
            for (i, p) in patients.iter().enumerate() {
                let arm = if i < config.runin {
                    er_assign(&mut rng, &all_arms)
                } else {
                    ar.assign(&p.x, &all_arms, &mut rng)
                };
                let y = outcome(arm, p);
                ar.record(&p.x, arm, y);
                data.push(&p.x, Some(arm), Some(y))?;
            }
        }
        DesignKind::Reg => {
            for (i, p) in patients.iter().enumerate() {
                let arm = if i < config.runin {
                    er_assign(&mut rng, &all_arms)
                } else {
                    let fit = RegFit::fit(&data, n_arms, config.reg_coding).ok();
                    reg_assign(fit.as_ref(), &p.x, &all_arms, &mut rng)
                };
                data.push(&p.x, Some(arm), Some(outcome(arm, p)))?;
            }
        }
    }

    let n_subsets = scenario.n_subsets().unwrap_or(0);
    let mut np = vec![0; n_arms];
    let mut np_subset = vec![vec![0; n_arms]; n_subsets];
    let mut subset_ties = 0;
    let mut responders = 0;
    for i in config.runin..data.len() {
        let (arm, y) = data.observed(i).expect("every simulated patient has an outcome");
        np[arm.index()] += 1;
        responders += y as usize;
        if let Ok(label) = scenario.truth_subset(data.markers().row(i)) {
            np_subset[label.index][arm.index()] += 1;
            subset_ties += label.tie as usize;
        }
    }
    let n_post = data.len() - config.runin;
    Ok(ReplicateRecord {
        replicate,
        design,
        orr: (n_post > 0).then(|| responders as f64 / n_post as f64),
        np,
        np_subset,
        subset_ties,
        stop_size,
        stop_reason,
        drops,
        q_diff,
    })
}

/// Runs every selected design on replicate `replicate` with shared patients.
pub fn simulate_replicate(
    config: &StudyConfig,
    replicate: usize,
    catalog: &Arc<PartitionCatalog>,
) -> Result<Vec<ReplicateRecord>, SimulationError> {
    let patients = draw_patients(
        config.scenario,
        config.max_enrollment,
        &mut replicate_rng(config.seed, replicate, PATIENT_STREAM),
    );
    let fresh = config
        .scenario
        .draw_profile(&mut replicate_rng(config.seed, replicate, FRESH_PATIENT_STREAM));
    config
        .designs
        .iter()
        .map(|&d| simulate_trial(config, d, replicate, &patients, &fresh, catalog))
        .collect()
}

/// Mean with its Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

impl Estimate {
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len() as f64;
        if values.is_empty() {
            return Self {
                mean: f64::NAN,
                se: f64::NAN,
            };
        }
        let mean = values.iter().sum::<f64>() / n;
        let se = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
        };
        Self { mean, se }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSummary {
    pub design: DesignKind,
    pub replicates: usize,
    /// `None` when no replicate has post-run-in patients.
    pub orr: Option<Estimate>,
    /// Average number of post-run-in patients per arm.
    pub anp: Vec<Estimate>,
    /// `[subset][arm]`.
    pub anp_subset: Vec<Vec<Estimate>>,
    pub stop_size: Estimate,
    pub early_stops: usize,
    /// Fraction of replicates ending with `q(1, x) > q(t, x)`, `t = 2..T`.
    pub q1_better: Vec<f64>,
}

/// Paired ORR difference of the adaptive design against one comparator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrrComparison {
    pub versus: DesignKind,
    pub difference: Estimate,
    /// Fraction of replicates where the adaptive design's ORR is strictly higher.
    pub fraction_better: f64,
    pub mean_absolute_difference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub config: StudyConfig,
    pub summaries: Vec<DesignSummary>,
    pub orr_comparisons: Vec<OrrComparison>,
    #[serde(skip)]
    pub records: Vec<ReplicateRecord>,
}

impl StudyResult {
    pub fn summary(&self, design: DesignKind) -> Option<&DesignSummary> {
        self.summaries.iter().find(|s| s.design == design)
    }

    pub fn comparison(&self, versus: DesignKind) -> Option<&OrrComparison> {
        self.orr_comparisons.iter().find(|c| c.versus == versus)
    }

    pub fn records_for(&self, design: DesignKind) -> impl Iterator<Item = &ReplicateRecord> {
        self.records.iter().filter(move |r| r.design == design)
    }

    /// `(replicate, versus, SUBA ORR − other ORR)` for every paired replicate.
    pub fn orr_differences(&self) -> Vec<(usize, DesignKind, f64)> {
        let mut out = Vec::new();
        for suba in self.records_for(DesignKind::Suba) {
            for other in self.records.iter().filter(|r| r.replicate == suba.replicate && r.design != DesignKind::Suba) {
                if let (Some(a), Some(b)) = (suba.orr, other.orr) {
                    out.push((suba.replicate, other.design, a - b));
                }
            }
        }
        out
    }

    /// One row per replicate and design.
    pub fn write_replicates_csv<W: Write>(&self, w: W) -> Result<(), SimulationError> {
        let n_arms = self.config.scenario.n_arms();
        let n_subsets = self.config.scenario.n_subsets().unwrap_or(0);
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["design".to_string(), "replicate".into(), "orr".into(), "stop_size".into(), "stop_reason".into()];
        header.extend((1..=n_arms).map(|t| format!("np_{t}")));
        for b in 1..=n_subsets {
            header.extend((1..=n_arms).map(|t| format!("s{b}_np_{t}")));
        }
        header.push("subset_ties".into());
        header.extend((2..=n_arms).map(|t| format!("q_diff_1_{t}")));
        header.push("drops".into());
        out.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![
                r.design.to_string(),
                r.replicate.to_string(),
                r.orr.map(|v| v.to_string()).unwrap_or_default(),
                r.stop_size.to_string(),
                match r.stop_reason {
                    Some(StopReason::SingleArmLeft) => "single_arm_left".into(),
                    Some(StopReason::MaxEnrollment) => "max_enrollment".into(),
                    None => String::new(),
                },
            ];
            row.extend(r.np.iter().map(ToString::to_string));
            for b in 0..n_subsets {
                row.extend(r.np_subset[b].iter().map(ToString::to_string));
            }
            row.push(r.subset_ties.to_string());
            row.extend((0..n_arms - 1).map(|i| r.q_diff.get(i).map(|v| v.to_string()).unwrap_or_default()));
            row.push(
                r.drops
                    .iter()
                    .map(|d| format!("{}@{}", d.arm, d.enrolled))
                    .collect::<Vec<_>>()
                    .join(";"),
            );
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Paired ORR differences, ready for plotting.
    pub fn write_orr_differences_csv<W: Write>(&self, w: W) -> Result<(), SimulationError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["replicate", "versus", "orr_difference"])?;
        for (rep, versus, d) in self.orr_differences() {
            out.write_record([rep.to_string(), versus.to_string(), d.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Final `q(1, x) − q(t, x)` per replicate.
    pub fn write_q_differences_csv<W: Write>(&self, w: W) -> Result<(), SimulationError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["replicate", "arm", "q_difference"])?;
        for r in self.records_for(DesignKind::Suba) {
            for (i, d) in r.q_diff.iter().enumerate() {
                out.write_record([r.replicate.to_string(), (i + 2).to_string(), d.to_string()])?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_summary_json<W: Write>(&self, w: W) -> Result<(), SimulationError> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }
}

fn summarize(config: &StudyConfig, design: DesignKind, records: &[&ReplicateRecord]) -> DesignSummary {
    let n_arms = config.scenario.n_arms();
    let n_subsets = config.scenario.n_subsets().unwrap_or(0);
    let orrs: Vec<f64> = records.iter().filter_map(|r| r.orr).collect();
    let column = |f: &dyn Fn(&ReplicateRecord) -> f64| Estimate::from_values(&records.iter().map(|r| f(r)).collect::<Vec<_>>());
    let q1_better = if design == DesignKind::Suba {
        (0..n_arms - 1)
            .map(|i| records.iter().filter(|r| r.q_diff[i] > 0.0).count() as f64 / records.len() as f64)
            .collect()
    } else {
        Vec::new()
    };
    DesignSummary {
        design,
        replicates: records.len(),
        orr: (!orrs.is_empty()).then(|| Estimate::from_values(&orrs)),
        anp: (0..n_arms).map(|t| column(&|r| r.np[t] as f64)).collect(),
        anp_subset: (0..n_subsets)
            .map(|b| (0..n_arms).map(|t| column(&|r| r.np_subset[b][t] as f64)).collect())
            .collect(),
        stop_size: column(&|r| r.stop_size as f64),
        early_stops: records.iter().filter(|r| r.stop_reason == Some(StopReason::SingleArmLeft)).count(),
        q1_better,
    }
}

/// Runs `config.replicates` replicates (in parallel) and summarizes them.
/// Results depend only on the configuration, not on scheduling.
pub fn run_study(config: &StudyConfig) -> Result<StudyResult, SimulationError> {
    config.validate()?;
    let catalog = Arc::new(PartitionCatalog::with_prior(&config.prior()?)?);
    run_study_with_catalog(config, &catalog)
}

pub fn run_study_with_catalog(config: &StudyConfig, catalog: &Arc<PartitionCatalog>) -> Result<StudyResult, SimulationError> {
    config.validate()?;
    let per_replicate: Vec<Vec<ReplicateRecord>> = (0..config.replicates)
        .into_par_iter()
        .map(|rep| simulate_replicate(config, rep, catalog))
        .collect::<Result<_, _>>()?;
    let records: Vec<ReplicateRecord> = per_replicate.into_iter().flatten().collect();

    let summaries = config
        .designs
        .iter()
        .map(|&d| {
            let rs: Vec<&ReplicateRecord> = records.iter().filter(|r| r.design == d).collect();
            summarize(config, d, &rs)
        })
        .collect();
    let mut result = StudyResult {
        config: config.clone(),
        summaries,
        orr_comparisons: Vec::new(),
        records,
    };
    let diffs = result.orr_differences();
    for &versus in config.designs.iter().filter(|d| **d != DesignKind::Suba) {
        let d: Vec<f64> = diffs.iter().filter(|(_, v, _)| *v == versus).map(|(_, _, d)| *d).collect();
        if d.is_empty() {
            continue;
        }
        result.orr_comparisons.push(OrrComparison {
            versus,
            difference: Estimate::from_values(&d),
            fraction_better: d.iter().filter(|v| **v > 0.0).count() as f64 / d.len() as f64,
            mean_absolute_difference: d.iter().map(|v| v.abs()).sum::<f64>() / d.len() as f64,
        });
    }
    Ok(result)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Phi,
    #[serde(rename = "N")]
    MaxEnrollment,
}

impl SweepAxis {
    /// The values studied for each axis.
    pub fn default_values(self) -> Vec<f64> {
        match self {
            SweepAxis::Phi => vec![0.2, 0.5, 0.8],
            SweepAxis::MaxEnrollment => vec![100.0, 200.0, 300.0],
        }
    }
}

impl FromStr for SweepAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "phi" => Ok(SweepAxis::Phi),
            "N" | "n" | "max_enrollment" => Ok(SweepAxis::MaxEnrollment),
            other => Err(format!("unknown sweep axis '{other}' (expected phi or N)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub result: StudyResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub points: Vec<SweepPoint>,
}

/// Re-runs the study at each value of one axis, same master seed throughout.
pub fn sensitivity_sweep(base: &StudyConfig, axis: SweepAxis, values: &[f64]) -> Result<SweepResult, SimulationError> {
    let points = values
        .iter()
        .map(|&value| {
            let mut config = base.clone();
            match axis {
                SweepAxis::Phi => config.phi = value,
                SweepAxis::MaxEnrollment => {
                    if value < 1.0 || value.fract() != 0.0 {
                        return Err(SimulationError::InvalidConfig(format!("N must be a positive integer, got {value}")));
                    }
                    config.max_enrollment = value as usize;
                }
            }
            Ok(SweepPoint {
                value,
                result: run_study(&config)?,
            })
        })
        .collect::<Result<_, SimulationError>>()?;
    Ok(SweepResult { axis, points })
}
