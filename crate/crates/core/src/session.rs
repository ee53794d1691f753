//! Event-sourced live trials.
//!
//! A trial is an append-only log of [`SessionEvent`]s. The materialized [`TrialSession`]
//! is a pure fold over that log, so replaying a stored log always reproduces the state a
//! running service held. [`FileStore`] keeps one JSON-lines file per trial plus an index.

use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::conduct::{DesignVariant, FinalSelection, TrialDesign, TrialState};
use crate::decision::{admissible_set, randomization_weights, AdmissibleSet, Decision, RandomizationWeights};
use crate::error::{Error, Result};
use crate::estimand::{PatientRecord, StrategyMap};
use crate::model::{DerivedOutcome, SchemaVersion};
use crate::posterior::PosteriorSummary;
use crate::simulator::replication_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum SessionEvent {
    TrialCreated {
        trial_id: String,
        design: TrialDesign,
        #[serde(default)]
        variant: DesignVariant,
        /// Seeds the generator used by randomized assignment modes.
        seed: u64,
    },
    CohortEntered {
        records: Vec<PatientRecord>,
    },
    DecisionIssued {
        decision: Decision,
    },
    MapAmended {
        strategy_map: StrategyMap,
    },
    Note {
        text: String,
    },
}

/// A log entry: sequence number, wall-clock time of recording and the event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedEvent {
    pub seq: u64,
    pub recorded_at_ms: u64,
    #[serde(flatten)]
    pub event: SessionEvent,
}

/// Materialized trial state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSession {
    pub version: SchemaVersion,
    pub trial_id: String,
    pub design: TrialDesign,
    pub seed: u64,
    pub state: TrialState,
    pub event_count: u64,
}

/// Everything the committee sees before the next cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub trial_id: String,
    pub decision: Option<Decision>,
    pub current_dose: usize,
    pub next_cohort_size: u32,
    pub summaries: Vec<PosteriorSummary>,
    pub admissible: AdmissibleSet,
    /// Adaptive-randomization weights over the admissible set, when it is non-empty.
    pub weights: Option<RandomizationWeights>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortOutcome {
    pub derived: Vec<DerivedOutcome>,
    pub decision: Decision,
}

impl TrialSession {
    /// Rebuilds a session from its log.
    pub fn replay<'a>(events: impl IntoIterator<Item = &'a SessionEvent>) -> Result<TrialSession> {
        let mut iter = events.into_iter();
        let Some(SessionEvent::TrialCreated {
            trial_id,
            design,
            variant,
            seed,
        }) = iter.next()
        else {
            return Err(Error::Parse("event log must start with trial_created".into()));
        };
        let mut session = TrialSession {
            version: SchemaVersion::V1,
            trial_id: trial_id.clone(),
            design: design.clone(),
            seed: *seed,
            state: TrialState::new(design, *variant)?,
            event_count: 1,
        };
        for ev in iter {
            session.apply(ev)?;
        }
        Ok(session)
    }

    /// Applies one event to the materialized state.
    pub fn apply(&mut self, event: &SessionEvent) -> Result<()> {
        match event {
            SessionEvent::TrialCreated { .. } => return Err(Error::Parse("duplicate trial_created event".into())),
            SessionEvent::CohortEntered { records } => {
                self.state.enter_cohort(&self.design, records.clone())?;
            }
            SessionEvent::DecisionIssued { decision } => self.state.apply_decision(decision.clone())?,
            SessionEvent::MapAmended { strategy_map } => {
                self.design.strategy_map = strategy_map.clone();
                self.state.rederive(&self.design)?;
            }
            SessionEvent::Note { .. } => {}
        }
        self.event_count += 1;
        Ok(())
    }

    /// Events for a new cohort: the cohort itself and the decision it leads to. The
    /// session is left untouched; apply the events to commit them.
    pub fn cohort_events(&self, records: Vec<PatientRecord>) -> Result<(Vec<SessionEvent>, CohortOutcome)> {
        let mut next = self.state.clone();
        let derived = next.enter_cohort(&self.design, records.clone())?;
        let mut rng = replication_rng(self.seed, next.decisions.len() as u64);
        let decision = next.recommend(&self.design, &mut rng)?;
        Ok((
            vec![
                SessionEvent::CohortEntered { records },
                SessionEvent::DecisionIssued {
                    decision: decision.clone(),
                },
            ],
            CohortOutcome { derived, decision },
        ))
    }

    pub fn recommendation(&self) -> Result<Recommendation> {
        let summaries = self.state.summaries(&self.design)?;
        let admissible = admissible_set(&summaries, &self.design.config);
        let weights = randomization_weights(&summaries, &admissible).ok();
        Ok(Recommendation {
            trial_id: self.trial_id.clone(),
            decision: self.state.decisions.last().cloned(),
            current_dose: self.state.current_dose,
            next_cohort_size: self.state.next_cohort_size,
            summaries,
            admissible,
            weights,
        })
    }

    pub fn selection(&self) -> Result<FinalSelection> {
        self.state.selection(&self.design)
    }
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct Index {
    trials: Vec<String>,
}

/// One JSON-lines log per trial under `<root>/trials`, plus `<root>/index.json`.
#[derive(Debug, Clone)]
pub struct FileStore {
    root: PathBuf,
}

impl FileStore {
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(root.join("trials"))?;
        Ok(FileStore { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn log_path(&self, trial_id: &str) -> Result<PathBuf> {
        if trial_id.is_empty() || !trial_id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-') {
            return Err(Error::UnknownTrial(trial_id.to_string()));
        }
        Ok(self.root.join("trials").join(format!("{trial_id}.jsonl")))
    }

    fn read_index(&self) -> Result<Index> {
        let path = self.root.join("index.json");
        if !path.exists() {
            return Ok(Index::default());
        }
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    fn write_index(&self, index: &Index) -> Result<()> {
        let tmp = self.root.join("index.json.tmp");
        fs::write(&tmp, serde_json::to_vec_pretty(index)?)?;
        fs::rename(tmp, self.root.join("index.json"))?;
        Ok(())
    }

    pub fn list(&self) -> Result<Vec<String>> {
        Ok(self.read_index()?.trials)
    }

    /// Starts a new trial log and returns the materialized session.
    pub fn create(&self, design: TrialDesign, variant: DesignVariant, seed: u64) -> Result<TrialSession> {
        let trial_id = uuid::Uuid::new_v4().to_string();
        let created = SessionEvent::TrialCreated {
            trial_id: trial_id.clone(),
            design,
            variant,
            seed,
        };
        let session = TrialSession::replay([&created])?;
        self.append(&trial_id, 0, &[created])?;
        let mut index = self.read_index()?;
        index.trials.push(trial_id);
        self.write_index(&index)?;
        Ok(session)
    }

    /// Appends events; `first_seq` must equal the number of events already stored.
    pub fn append(&self, trial_id: &str, first_seq: u64, events: &[SessionEvent]) -> Result<Vec<LoggedEvent>> {
        let path = self.log_path(trial_id)?;
        if first_seq > 0 && !path.exists() {
            return Err(Error::UnknownTrial(trial_id.to_string()));
        }
        let mut file = OpenOptions::new().create(true).append(true).open(&path)?;
        let mut buf = Vec::new();
        let logged: Vec<LoggedEvent> = events
            .iter()
            .enumerate()
            .map(|(i, e)| LoggedEvent {
                seq: first_seq + i as u64,
                recorded_at_ms: now_ms(),
                event: e.clone(),
            })
            .collect();
        for l in &logged {
            serde_json::to_writer(&mut buf, l)?;
            buf.push(b'\n');
        }
        file.write_all(&buf)?;
        file.sync_data()?;
        Ok(logged)
    }

    pub fn events(&self, trial_id: &str) -> Result<Vec<LoggedEvent>> {
        let path = self.log_path(trial_id)?;
        let file = fs::File::open(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::UnknownTrial(trial_id.to_string()),
            _ => Error::from(e),
        })?;
        let mut out = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let ev: LoggedEvent = serde_json::from_str(&line)
                .map_err(|e| Error::Parse(format!("{}: line {}: {e}", path.display(), i + 1)))?;
            if ev.seq != out.len() as u64 {
                return Err(Error::Parse(format!("{}: sequence gap at line {}", path.display(), i + 1)));
            }
            out.push(ev);
        }
        Ok(out)
    }

    pub fn load(&self, trial_id: &str) -> Result<TrialSession> {
        let events = self.events(trial_id)?;
        TrialSession::replay(events.iter().map(|e| &e.event))
    }

    /// Validates and commits a cohort, returning the derived outcomes and new decision.
    pub fn submit_cohort(&self, trial_id: &str, records: Vec<PatientRecord>) -> Result<(TrialSession, CohortOutcome)> {
        let mut session = self.load(trial_id)?;
        let (events, outcome) = session.cohort_events(records)?;
        for e in &events {
            session.apply(e)?;
        }
        self.append(trial_id, session.event_count - events.len() as u64, &events)?;
        Ok((session, outcome))
    }

    pub fn amend_map(&self, trial_id: &str, strategy_map: StrategyMap) -> Result<TrialSession> {
        self.commit(trial_id, SessionEvent::MapAmended { strategy_map })
    }

    pub fn note(&self, trial_id: &str, text: String) -> Result<TrialSession> {
        self.commit(trial_id, SessionEvent::Note { text })
    }

    fn commit(&self, trial_id: &str, event: SessionEvent) -> Result<TrialSession> {
        let mut session = self.load(trial_id)?;
        session.apply(&event)?;
        self.append(trial_id, session.event_count - 1, &[event])?;
        Ok(session)
    }

    /// Directory for auxiliary artifacts such as simulation results.
    pub fn artifact_dir(&self, kind: &str) -> Result<PathBuf> {
        let dir = self.root.join(kind);
        fs::create_dir_all(&dir)?;
        Ok(dir)
    }
}
