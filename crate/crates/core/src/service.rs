//! Live trials as an event-sourced service.
//!
//! Every mutation is appended to a per-trial JSONL journal and flushed before
//! the caller sees the result. A journal replays through the design to the
//! same event stream, which is how trials are restored on startup.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Duration, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Arm, DataError, PatientId};
use crate::design::{
    AllocationMode, ArmDisposition, Assignment, DesignConfig, DesignError, DropEvent, OutcomeDelta, Phase,
    StopReason, SubaTrial,
};
use crate::partition::PartitionCatalog;
use crate::posterior::{BetaHyper, PartitionSummary, PosteriorError, SummaryCriterion};
use crate::PriorParams;

pub const JOURNAL_SCHEMA: u32 = 1;
const JOURNAL_EXTENSION: &str = "jsonl";

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("no trial with id {0}")]
    TrialNotFound(String),
    #[error("trial has no patient {0}")]
    PatientNotFound(PatientId),
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Conflict(String),
    #[error("no outcomes have been recorded yet")]
    NoOutcomes,
    #[error("idempotency key {0:?} was already used with a different trial configuration")]
    IdempotencyMismatch(String),
    #[error("journal i/o: {0}")]
    Journal(#[from] std::io::Error),
    #[error("journal {path}, line {line}: {reason}")]
    Corrupt { path: String, line: usize, reason: String },
    #[error("replay diverged at event {seq}: {reason}")]
    Replay { seq: u64, reason: String },
    #[error("internal error: {0}")]
    Internal(String),
}

impl From<DesignError> for ServiceError {
    fn from(e: DesignError) -> Self {
        match e {
            DesignError::InvalidConfig(_) | DesignError::ReferencePoints(_) | DesignError::Data(_) => {
                ServiceError::Invalid(e.to_string())
            }
            DesignError::Posterior(PosteriorError::Data(_)) => ServiceError::Invalid(e.to_string()),
            DesignError::Partition(ref p) if matches!(p, crate::partition::PartitionError::InvalidPrior(_)) => {
                ServiceError::Invalid(e.to_string())
            }
            DesignError::InvalidPhase(_) | DesignError::EnrollmentFull(_) | DesignError::DuplicateOutcome(_) => {
                ServiceError::Conflict(e.to_string())
            }
            DesignError::UnknownPatient(p) => ServiceError::PatientNotFound(p),
            other => ServiceError::Internal(other.to_string()),
        }
    }
}

impl From<DataError> for ServiceError {
    fn from(e: DataError) -> Self {
        ServiceError::Invalid(e.to_string())
    }
}

/// Source of event timestamps.
pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// Deterministic clock for tests: starts at `start` and advances by `step`
/// on every reading.
#[derive(Debug)]
pub struct SteppingClock {
    next: Mutex<DateTime<Utc>>,
    step: Duration,
}

impl SteppingClock {
    pub fn new(start: DateTime<Utc>, step: Duration) -> Self {
        Self {
            next: Mutex::new(start),
            step,
        }
    }
}

impl Clock for SteppingClock {
    fn now(&self) -> DateTime<Utc> {
        let mut next = self.next.lock().expect("clock lock");
        let t = *next;
        *next = t + self.step;
        t
    }
}

/// Which rule produced an assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllocationRule {
    /// Equal randomization over the arm universe.
    RunIn,
    Argmax,
    PowerRandomization,
}

impl AllocationRule {
    fn of(phase: Phase, mode: AllocationMode) -> Self {
        match (phase, mode) {
            (Phase::RunIn, _) => AllocationRule::RunIn,
            (_, AllocationMode::Argmax) => AllocationRule::Argmax,
            (_, AllocationMode::PowerRandomization { .. }) => AllocationRule::PowerRandomization,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    TrialCreated {
        trial_id: String,
        config: DesignConfig,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        idempotency_key: Option<String>,
    },
    PatientEnrolled {
        patient: PatientId,
        biomarkers: Vec<f64>,
    },
    ArmAssigned {
        patient: PatientId,
        arm: Arm,
        /// `q(t, x)` over the whole arm universe.
        q: Vec<f64>,
        phase: Phase,
        rule: AllocationRule,
        snapshot: u64,
    },
    OutcomeRecorded {
        patient: PatientId,
        y: bool,
    },
    ArmDropped {
        arm: Arm,
        enrolled: usize,
    },
    TrialStopped {
        reason: StopReason,
    },
}

/// One journal line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialEvent {
    pub schema: u32,
    pub seq: u64,
    pub timestamp: DateTime<Utc>,
    #[serde(flatten)]
    pub event: EventKind,
}

impl TrialEvent {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("events always serialize")
    }
}

/// Reads and checks a journal: schema version, contiguous sequence numbers
/// from 1, and a `trial_created` first event.
pub fn read_journal<R: BufRead>(r: R, name: &str) -> Result<Vec<TrialEvent>, ServiceError> {
    let mut events = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let corrupt = |reason: String| ServiceError::Corrupt {
            path: name.to_string(),
            line: i + 1,
            reason,
        };
        if line.trim().is_empty() {
            continue;
        }
        let event: TrialEvent = serde_json::from_str(&line).map_err(|e| corrupt(e.to_string()))?;
        if event.schema != JOURNAL_SCHEMA {
            return Err(corrupt(format!("unsupported schema version {}", event.schema)));
        }
        if event.seq != events.len() as u64 + 1 {
            return Err(corrupt(format!("expected sequence number {}, found {}", events.len() + 1, event.seq)));
        }
        if (event.seq == 1) != matches!(event.event, EventKind::TrialCreated { .. }) {
            return Err(corrupt("trial_created must be the first and only the first event".into()));
        }
        events.push(event);
    }
    Ok(events)
}

/// A trial together with the events that produced it.
#[derive(Debug, Clone)]
pub struct TrialMachine {
    id: String,
    idempotency_key: Option<String>,
    trial: SubaTrial,
    events: Vec<TrialEvent>,
}

impl TrialMachine {
    fn create(
        id: &str,
        config: DesignConfig,
        idempotency_key: Option<String>,
        catalog: Arc<PartitionCatalog>,
    ) -> Result<(Self, Vec<EventKind>), ServiceError> {
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        let trial = SubaTrial::with_catalog(config.clone(), catalog, rng)?;
        let machine = Self {
            id: id.to_string(),
            idempotency_key: idempotency_key.clone(),
            trial,
            events: Vec::new(),
        };
        let created = EventKind::TrialCreated {
            trial_id: id.to_string(),
            config,
            idempotency_key,
        };
        Ok((machine, vec![created]))
    }

    fn enroll(&mut self, x: &[f64]) -> Result<(Assignment, Vec<EventKind>), ServiceError> {
        if self.trial.is_stopped() {
            return Err(ServiceError::Conflict("the trial has stopped".into()));
        }
        let a = self.trial.enroll(x)?;
        self.trial.refresh()?;
        let events = vec![
            EventKind::PatientEnrolled {
                patient: a.patient,
                biomarkers: x.to_vec(),
            },
            EventKind::ArmAssigned {
                patient: a.patient,
                arm: a.arm,
                q: a.q.clone(),
                phase: a.phase,
                rule: AllocationRule::of(a.phase, self.trial.config().allocation),
                snapshot: a.snapshot,
            },
        ];
        Ok((a, events))
    }

    fn record_outcome(&mut self, patient: PatientId, y: bool) -> Result<(OutcomeDelta, Vec<EventKind>), ServiceError> {
        let delta = self.trial.record_outcome(patient, y)?;
        let mut events = vec![EventKind::OutcomeRecorded { patient, y }];
        let enrolled = self.trial.enrolled();
        events.extend(delta.dropped.iter().map(|&arm| EventKind::ArmDropped { arm, enrolled }));
        if let Some(reason) = delta.stopped {
            events.push(EventKind::TrialStopped { reason });
        }
        Ok((delta, events))
    }

    fn stamp(&self, kinds: Vec<EventKind>, clock: &dyn Clock) -> Vec<TrialEvent> {
        let first = self.events.len() as u64 + 1;
        kinds
            .into_iter()
            .enumerate()
            .map(|(i, event)| TrialEvent {
                schema: JOURNAL_SCHEMA,
                seq: first + i as u64,
                timestamp: clock.now(),
                event,
            })
            .collect()
    }

    /// Re-runs the commands in `events` and checks that every derived event
    /// (assignments, drops, stops) comes out identical.
    pub fn replay(events: &[TrialEvent]) -> Result<Self, ServiceError> {
        Self::replay_with(events, |prior| {
            Ok(Arc::new(PartitionCatalog::with_prior(prior).map_err(DesignError::from)?))
        })
    }

    fn replay_with(
        events: &[TrialEvent],
        mut catalog_for: impl FnMut(&PriorParams) -> Result<Arc<PartitionCatalog>, ServiceError>,
    ) -> Result<Self, ServiceError> {
        let diverged = |seq: u64, reason: String| ServiceError::Replay { seq, reason };
        let Some(first) = events.first() else {
            return Err(diverged(0, "empty journal".into()));
        };
        let EventKind::TrialCreated {
            trial_id,
            config,
            idempotency_key,
        } = &first.event
        else {
            return Err(diverged(first.seq, "journal does not start with trial_created".into()));
        };
        let catalog = catalog_for(&config.prior)?;
        let (mut machine, _) = Self::create(trial_id, config.clone(), idempotency_key.clone(), catalog)
            .map_err(|e| diverged(first.seq, e.to_string()))?;
        machine.events.push(first.clone());

        let mut i = 1;
        while i < events.len() {
            let seq = events[i].seq;
            let produced = match &events[i].event {
                EventKind::PatientEnrolled { biomarkers, .. } => machine.enroll(biomarkers).map(|r| r.1),
                EventKind::OutcomeRecorded { patient, y } => machine.record_outcome(*patient, *y).map(|r| r.1),
                other => {
                    return Err(diverged(seq, format!("unexpected event {other:?} where a command was expected")));
                }
            }
            .map_err(|e| diverged(seq, e.to_string()))?;
            for (j, kind) in produced.into_iter().enumerate() {
                let Some(recorded) = events.get(i + j) else {
                    return Err(diverged(seq + j as u64, format!("journal ends before {kind:?}")));
                };
                if recorded.event != kind {
                    return Err(diverged(
                        recorded.seq,
                        format!("journal has {:?}, replay produced {kind:?}", recorded.event),
                    ));
                }
                machine.events.push(recorded.clone());
            }
            i = machine.events.len();
        }
        Ok(machine)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn trial(&self) -> &SubaTrial {
        &self.trial
    }

    pub fn events(&self) -> &[TrialEvent] {
        &self.events
    }

    pub fn state_view(&self) -> TrialStateView {
        let t = &self.trial;
        let data = t.data();
        TrialStateView {
            trial_id: self.id.clone(),
            phase: t.phase(),
            stop_reason: t.stop_reason(),
            enrolled: t.enrolled(),
            max_enrollment: t.config().max_enrollment,
            runin: t.config().runin,
            n_markers: t.config().n_markers(),
            n_arms: t.config().n_arms,
            active_arms: t.active_arms().to_vec(),
            drops: t.drops().to_vec(),
            arms: t.dispositions(),
            pending: (0..data.len())
                .filter(|&i| data.outcome(i).is_none())
                .map(PatientId::from_index)
                .collect(),
            snapshot: t.posterior().snapshot(),
            last_seq: self.events.len() as u64,
            config: t.config().clone(),
        }
    }

    pub fn predictive_view(&self, x: &[f64]) -> Result<PredictiveView, ServiceError> {
        let q = self.trial.predictive(x)?;
        let active = self.trial.active_arms();
        Ok(PredictiveView {
            snapshot: self.trial.posterior().snapshot(),
            biomarkers: x.to_vec(),
            arms: q
                .iter()
                .enumerate()
                .map(|(t, &q)| ArmProbability {
                    arm: Arm(t),
                    q,
                    active: active.contains(&Arm(t)),
                })
                .collect(),
        })
    }

    pub fn partition_view(&self) -> Result<PartitionSummary, ServiceError> {
        if self.trial.data().n_observed() == 0 {
            return Err(ServiceError::NoOutcomes);
        }
        Ok(self
            .trial
            .posterior()
            .summarize(SummaryCriterion::LeastSquares, self.trial.active_arms())
            .map_err(DesignError::from)?)
    }

    pub fn events_since(&self, since: u64) -> Vec<TrialEvent> {
        self.events.iter().filter(|e| e.seq > since).cloned().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmProbability {
    pub arm: Arm,
    pub q: f64,
    pub active: bool,
}

/// What the coordinator sees after enrolling a patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendationView {
    pub trial_id: String,
    pub patient: PatientId,
    /// `q(t, x)` for the arms that were active at assignment.
    pub q: Vec<ArmProbability>,
    pub recommended_arm: Arm,
    pub rule: AllocationRule,
    pub phase: Phase,
    /// Data version of the posterior the recommendation came from.
    pub snapshot: u64,
    /// Sequence number of the journaled assignment.
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeView {
    pub trial_id: String,
    pub patient: PatientId,
    pub y: bool,
    pub dropped: Vec<Arm>,
    pub stopped: Option<StopReason>,
    pub phase: Phase,
    pub active_arms: Vec<Arm>,
    pub last_seq: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveView {
    pub snapshot: u64,
    pub biomarkers: Vec<f64>,
    pub arms: Vec<ArmProbability>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialStateView {
    pub trial_id: String,
    pub phase: Phase,
    pub stop_reason: Option<StopReason>,
    pub enrolled: usize,
    pub max_enrollment: usize,
    pub runin: usize,
    pub n_markers: usize,
    pub n_arms: usize,
    pub active_arms: Vec<Arm>,
    pub drops: Vec<DropEvent>,
    pub arms: Vec<ArmDisposition>,
    pub pending: Vec<PatientId>,
    pub snapshot: u64,
    pub last_seq: u64,
    pub config: DesignConfig,
}

/// Request body for creating a trial. Omitted fields take the standard
/// design values; an omitted seed is drawn at random and journaled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrialSpec {
    pub max_enrollment: usize,
    pub runin: usize,
    pub n_arms: usize,
    pub n_markers: usize,
    /// No-split probability followed by one probability per marker;
    /// uniform when omitted.
    pub split_probs: Option<Vec<f64>>,
    pub phi: f64,
    pub max_rounds: usize,
    pub hyper: BetaHyper,
    pub grid_points: usize,
    pub allocation: AllocationMode,
    pub seed: Option<u64>,
    pub reference_points: Option<Vec<Vec<f64>>>,
}

impl Default for TrialSpec {
    fn default() -> Self {
        let standard = DesignConfig::standard();
        Self {
            max_enrollment: standard.max_enrollment,
            runin: standard.runin,
            n_arms: standard.n_arms,
            n_markers: standard.n_markers(),
            split_probs: None,
            phi: standard.prior.phi(),
            max_rounds: standard.prior.max_rounds(),
            hyper: standard.hyper,
            grid_points: standard.grid_points,
            allocation: standard.allocation,
            seed: None,
            reference_points: None,
        }
    }
}

impl TrialSpec {
    pub fn resolve(&self, seed: u64) -> Result<DesignConfig, ServiceError> {
        let invalid = |e: crate::partition::PartitionError| ServiceError::Invalid(e.to_string());
        let prior = match &self.split_probs {
            Some(p) => {
                if p.len() != self.n_markers + 1 {
                    return Err(ServiceError::Invalid(format!(
                        "split_probs needs {} entries for {} markers",
                        self.n_markers + 1,
                        self.n_markers
                    )));
                }
                PriorParams::new(p.clone(), self.phi, self.max_rounds).map_err(invalid)?
            }
            None => {
                if self.n_markers == 0 {
                    return Err(ServiceError::Invalid("at least one biomarker is required".into()));
                }
                PriorParams::uniform(self.n_markers, self.phi)
                    .and_then(|p| p.with_max_rounds(self.max_rounds))
                    .map_err(invalid)?
            }
        };
        let config = DesignConfig {
            max_enrollment: self.max_enrollment,
            runin: self.runin,
            n_arms: self.n_arms,
            hyper: self.hyper,
            prior,
            grid_points: self.grid_points,
            allocation: self.allocation,
            seed: self.seed.unwrap_or(seed),
            reference_points: self.reference_points.clone(),
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CreatedView {
    pub trial_id: String,
    /// False when an earlier request with the same idempotency key already
    /// created the trial.
    pub created: bool,
    pub state: TrialStateView,
}

struct TrialSlot {
    /// Held for the whole of a mutation; owns the journal file.
    writer: Mutex<Option<File>>,
    committed: RwLock<Arc<TrialMachine>>,
}

#[derive(Default)]
struct Registry {
    trials: BTreeMap<String, Arc<TrialSlot>>,
    keys: HashMap<String, String>,
    next_id: u64,
}

/// Multi-trial service. Each trial has a single writer and any number of
/// readers, who see the last committed state. Trials do not share locks
/// beyond the registry lookup.
pub struct TrialService {
    journal_dir: Option<PathBuf>,
    clock: Arc<dyn Clock>,
    registry: RwLock<Registry>,
    /// Serializes trial creation and guards the catalog cache.
    creation: Mutex<HashMap<String, Arc<PartitionCatalog>>>,
}

impl TrialService {
    /// A service that keeps journals in memory only.
    pub fn in_memory(clock: Arc<dyn Clock>) -> Self {
        Self {
            journal_dir: None,
            clock,
            registry: RwLock::new(Registry {
                next_id: 1,
                ..Registry::default()
            }),
            creation: Mutex::new(HashMap::new()),
        }
    }

    /// Opens (creating if needed) a journal directory and restores every
    /// trial in it by replay.
    pub fn open(dir: impl AsRef<Path>, clock: Arc<dyn Clock>) -> Result<Self, ServiceError> {
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir)?;
        let service = Self {
            journal_dir: Some(dir.clone()),
            ..Self::in_memory(clock)
        };
        let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == JOURNAL_EXTENSION))
            .collect();
        paths.sort();
        let mut catalogs = service.creation.lock().expect("creation lock");
        let mut registry = service.registry.write().expect("registry lock");
        for path in paths {
            let name = path.display().to_string();
            let events = read_journal(BufReader::new(File::open(&path)?), &name)?;
            let machine = TrialMachine::replay_with(&events, |prior| Ok(cached_catalog(&mut catalogs, prior)?))?;
            if let Some(n) = machine.id.strip_prefix("trial-").and_then(|n| n.parse::<u64>().ok()) {
                registry.next_id = registry.next_id.max(n + 1);
            }
            if let Some(key) = &machine.idempotency_key {
                registry.keys.insert(key.clone(), machine.id.clone());
            }
            let file = OpenOptions::new().append(true).open(&path)?;
            registry.trials.insert(
                machine.id.clone(),
                Arc::new(TrialSlot {
                    writer: Mutex::new(Some(file)),
                    committed: RwLock::new(Arc::new(machine)),
                }),
            );
        }
        drop(registry);
        drop(catalogs);
        Ok(service)
    }

    pub fn journal_dir(&self) -> Option<&Path> {
        self.journal_dir.as_deref()
    }

    pub fn journal_path(&self, trial_id: &str) -> Option<PathBuf> {
        self.journal_dir
            .as_ref()
            .map(|d| d.join(format!("{trial_id}.{JOURNAL_EXTENSION}")))
    }

    pub fn trial_ids(&self) -> Vec<String> {
        self.registry.read().expect("registry lock").trials.keys().cloned().collect()
    }

    fn slot(&self, trial_id: &str) -> Result<Arc<TrialSlot>, ServiceError> {
        self.registry
            .read()
            .expect("registry lock")
            .trials
            .get(trial_id)
            .cloned()
            .ok_or_else(|| ServiceError::TrialNotFound(trial_id.to_string()))
    }

    fn snapshot(&self, trial_id: &str) -> Result<Arc<TrialMachine>, ServiceError> {
        let slot = self.slot(trial_id)?;
        let committed = slot.committed.read().expect("trial lock");
        Ok(Arc::clone(&committed))
    }

    pub fn create_trial(&self, spec: &TrialSpec, idempotency_key: Option<&str>) -> Result<CreatedView, ServiceError> {
        let mut catalogs = self.creation.lock().expect("creation lock");
        let seed = rand::random::<u64>();
        if let Some(key) = idempotency_key {
            let existing = self.registry.read().expect("registry lock").keys.get(key).cloned();
            if let Some(id) = existing {
                let machine = self.snapshot(&id)?;
                let same = spec.resolve(machine.trial.config().seed)? == *machine.trial.config();
                if !same {
                    return Err(ServiceError::IdempotencyMismatch(key.to_string()));
                }
                return Ok(CreatedView {
                    trial_id: id,
                    created: false,
                    state: machine.state_view(),
                });
            }
        }
        let config = spec.resolve(seed)?;
        let id = format!("trial-{:04}", self.registry.read().expect("registry lock").next_id);
        let catalog = cached_catalog(&mut catalogs, &config.prior)?;
        let (mut machine, kinds) = TrialMachine::create(&id, config, idempotency_key.map(str::to_string), catalog)?;
        let events = machine.stamp(kinds, self.clock.as_ref());
        let file = match self.journal_path(&id) {
            Some(path) => {
                let mut file = OpenOptions::new().append(true).create_new(true).open(path)?;
                append_events(&mut file, &events)?;
                Some(file)
            }
            None => None,
        };
        machine.events.extend(events);
        let state = machine.state_view();
        let mut registry = self.registry.write().expect("registry lock");
        registry.next_id += 1;
        if let Some(key) = idempotency_key {
            registry.keys.insert(key.to_string(), id.clone());
        }
        registry.trials.insert(
            id.clone(),
            Arc::new(TrialSlot {
                writer: Mutex::new(file),
                committed: RwLock::new(Arc::new(machine)),
            }),
        );
        Ok(CreatedView {
            trial_id: id,
            created: true,
            state,
        })
    }

    /// Runs `op` on a copy of the committed trial, journals the events it
    /// produced, then publishes the copy. Nothing is published when the
    /// operation or the journal write fails.
    fn mutate<T>(
        &self,
        trial_id: &str,
        op: impl FnOnce(&mut TrialMachine) -> Result<(T, Vec<EventKind>), ServiceError>,
    ) -> Result<(T, Arc<TrialMachine>), ServiceError> {
        let slot = self.slot(trial_id)?;
        let mut writer = slot.writer.lock().expect("writer lock");
        let mut next = TrialMachine::clone(&slot.committed.read().expect("trial lock"));
        let (value, kinds) = op(&mut next)?;
        let events = next.stamp(kinds, self.clock.as_ref());
        if let Some(file) = writer.as_mut() {
            append_events(file, &events)?;
        }
        next.events.extend(events);
        let next = Arc::new(next);
        *slot.committed.write().expect("trial lock") = Arc::clone(&next);
        Ok((value, next))
    }

    pub fn enroll_patient(&self, trial_id: &str, biomarkers: &[f64]) -> Result<RecommendationView, ServiceError> {
        let (a, machine) = self.mutate(trial_id, |m| m.enroll(biomarkers))?;
        let active = match a.phase {
            Phase::RunIn => Arm::all(machine.trial.config().n_arms),
            // Assignments never change the active set.
            _ => machine.trial.active_arms().to_vec(),
        };
        Ok(RecommendationView {
            trial_id: trial_id.to_string(),
            patient: a.patient,
            q: active
                .iter()
                .map(|&arm| ArmProbability {
                    arm,
                    q: a.q[arm.index()],
                    active: true,
                })
                .collect(),
            recommended_arm: a.arm,
            rule: AllocationRule::of(a.phase, machine.trial.config().allocation),
            phase: a.phase,
            snapshot: a.snapshot,
            seq: machine.events.len() as u64,
        })
    }

    pub fn record_outcome(&self, trial_id: &str, patient: PatientId, y: bool) -> Result<OutcomeView, ServiceError> {
        let (delta, machine) = self.mutate(trial_id, |m| m.record_outcome(patient, y))?;
        Ok(OutcomeView {
            trial_id: trial_id.to_string(),
            patient,
            y,
            dropped: delta.dropped,
            stopped: delta.stopped,
            phase: machine.trial.phase(),
            active_arms: machine.trial.active_arms().to_vec(),
            last_seq: machine.events.len() as u64,
        })
    }

    pub fn state(&self, trial_id: &str) -> Result<TrialStateView, ServiceError> {
        Ok(self.snapshot(trial_id)?.state_view())
    }

    pub fn predictive(&self, trial_id: &str, biomarkers: &[f64]) -> Result<PredictiveView, ServiceError> {
        self.snapshot(trial_id)?.predictive_view(biomarkers)
    }

    pub fn partition(&self, trial_id: &str) -> Result<PartitionSummary, ServiceError> {
        self.snapshot(trial_id)?.partition_view()
    }

    pub fn events(&self, trial_id: &str, since: u64) -> Result<Vec<TrialEvent>, ServiceError> {
        Ok(self.snapshot(trial_id)?.events_since(since))
    }

    /// The committed trial, for offline analysis.
    pub fn machine(&self, trial_id: &str) -> Result<Arc<TrialMachine>, ServiceError> {
        self.snapshot(trial_id)
    }
}

fn cached_catalog(
    cache: &mut HashMap<String, Arc<PartitionCatalog>>,
    prior: &PriorParams,
) -> Result<Arc<PartitionCatalog>, ServiceError> {
    let key = serde_json::to_string(prior).expect("priors serialize");
    if let Some(c) = cache.get(&key) {
        return Ok(Arc::clone(c));
    }
    let catalog = Arc::new(PartitionCatalog::with_prior(prior).map_err(DesignError::from)?);
    cache.insert(key, Arc::clone(&catalog));
    Ok(catalog)
}

fn append_events(file: &mut File, events: &[TrialEvent]) -> std::io::Result<()> {
    let mut buf = String::new();
    for e in events {
        buf.push_str(&e.to_line());
        buf.push('\n');
    }
    file.write_all(buf.as_bytes())?;
    file.sync_data()
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn clock() -> Arc<dyn Clock> {
        Arc::new(SteppingClock::new(
            Utc.with_ymd_and_hms(2024, 1, 1, 9, 0, 0).unwrap(),
            Duration::seconds(1),
        ))
    }

    fn small_spec() -> TrialSpec {
        TrialSpec {
            max_enrollment: 8,
            runin: 3,
            n_arms: 2,
            n_markers: 2,
            max_rounds: 2,
            grid_points: 3,
            seed: Some(11),
            ..TrialSpec::default()
        }
    }

    #[test]
    fn fresh_trial_predicts_one_half() {
        let s = TrialService::in_memory(clock());
        let id = s.create_trial(&small_spec(), None).unwrap().trial_id;
        let view = s.predictive(&id, &[0.3, -0.1]).unwrap();
        for a in &view.arms {
            assert!((a.q - 0.5).abs() < 1e-15);
        }
        assert!(matches!(s.partition(&id), Err(ServiceError::NoOutcomes)));
    }

    #[test]
    fn runin_larger_than_n_is_rejected() {
        let s = TrialService::in_memory(clock());
        let spec = TrialSpec {
            runin: 9,
            ..small_spec()
        };
        assert!(matches!(s.create_trial(&spec, None), Err(ServiceError::Invalid(_))));
    }

    #[test]
    fn idempotent_creation() {
        let s = TrialService::in_memory(clock());
        let a = s.create_trial(&small_spec(), Some("k1")).unwrap();
        let b = s.create_trial(&small_spec(), Some("k1")).unwrap();
        assert_eq!(a.trial_id, b.trial_id);
        assert!(a.created && !b.created);
        assert_eq!(s.trial_ids().len(), 1);
        let other = TrialSpec {
            runin: 2,
            ..small_spec()
        };
        assert!(matches!(s.create_trial(&other, Some("k1")), Err(ServiceError::IdempotencyMismatch(_))));
    }

    #[test]
    fn events_are_contiguous_and_replay() {
        let s = TrialService::in_memory(clock());
        let id = s.create_trial(&small_spec(), None).unwrap().trial_id;
        for i in 0..8 {
            if s.state(&id).unwrap().phase == Phase::Stopped {
                break;
            }
            let x = [i as f64 / 5.0 - 0.4, 0.5 - i as f64 / 7.0];
            let r = s.enroll_patient(&id, &x).unwrap();
            s.record_outcome(&id, r.patient, i % 2 == 0).unwrap();
        }
        let events = s.events(&id, 0).unwrap();
        for (i, e) in events.iter().enumerate() {
            assert_eq!(e.seq, i as u64 + 1);
        }
        assert_eq!(s.events(&id, 4).unwrap(), events[4..].to_vec());
        let replayed = TrialMachine::replay(&events).unwrap();
        assert_eq!(replayed.events(), &events[..]);
    }

    #[test]
    fn duplicate_outcome_leaves_journal_unchanged() {
        let s = TrialService::in_memory(clock());
        let id = s.create_trial(&small_spec(), None).unwrap().trial_id;
        let r = s.enroll_patient(&id, &[0.0, 0.0]).unwrap();
        s.record_outcome(&id, r.patient, true).unwrap();
        let before = s.events(&id, 0).unwrap();
        assert!(matches!(s.record_outcome(&id, r.patient, false), Err(ServiceError::Conflict(_))));
        assert!(matches!(
            s.record_outcome(&id, PatientId(9), false),
            Err(ServiceError::PatientNotFound(_))
        ));
        assert_eq!(s.events(&id, 0).unwrap(), before);
    }

    #[test]
    fn tampered_assignment_fails_replay() {
        let s = TrialService::in_memory(clock());
        let id = s.create_trial(&small_spec(), None).unwrap().trial_id;
        s.enroll_patient(&id, &[0.1, 0.2]).unwrap();
        let mut events = s.events(&id, 0).unwrap();
        if let EventKind::ArmAssigned { arm, .. } = &mut events[2].event {
            *arm = Arm(1 - arm.index());
        }
        assert!(matches!(TrialMachine::replay(&events), Err(ServiceError::Replay { seq: 3, .. })));
    }

    #[test]
    fn journal_reader_rejects_gaps() {
        let s = TrialService::in_memory(clock());
        let id = s.create_trial(&small_spec(), None).unwrap().trial_id;
        s.enroll_patient(&id, &[0.1, 0.2]).unwrap();
        let events = s.events(&id, 0).unwrap();
        let text = format!("{}\n{}\n", events[0].to_line(), events[2].to_line());
        assert!(matches!(read_journal(text.as_bytes(), "t"), Err(ServiceError::Corrupt { line: 2, .. })));
    }
}
