//! Event-sourced screening service.
//!
//! Each child's trials live in an append-only JSON Lines log at
//! `data_dir/<child_id>.jsonl`; the registry (children, their screens and the
//! sessions they own) lives in `data_dir/registry.json`. Everything else is
//! derived from the log, so a report computed by [`replay`] from the file is
//! byte-identical to the one the running service serves.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use gamediag_core::analysis::{derive_cached, FitCache};
use gamediag_core::{Alert, Config, DerivedState, Report, SchemaV1, ScreenProfile, TrialRecord};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ChildSpec, ServiceConfig};
use crate::jsonl::{self, ReplayError};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    BadRequest(String),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::NotFound(_) => "not_found",
            Self::BadRequest(_) => "bad_request",
            Self::Replay(_) | Self::Io(_) => "internal",
        }
    }
}

/// Identifiers double as file names: 1 to 64 of `[A-Za-z0-9_-]`.
pub fn valid_id(id: &str) -> bool {
    (1..=64).contains(&id.len()) && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChildInfo {
    pub display_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub screen: Option<ScreenProfile>,
    pub sessions: BTreeSet<String>,
    /// Log file name relative to the data directory.
    pub log: String,
}

/// Children and the sessions each owns; a session id belongs to one child.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChildRegistry {
    #[serde(default)]
    pub v: SchemaV1,
    pub children: BTreeMap<String, ChildInfo>,
}

impl ChildRegistry {
    pub fn register(&mut self, spec: &ChildSpec) -> Result<(), ServiceError> {
        if !valid_id(&spec.child_id) {
            return Err(ServiceError::BadRequest(format!("invalid child id {:?}", spec.child_id)));
        }
        let name = if spec.display_name.is_empty() { spec.child_id.clone() } else { spec.display_name.clone() };
        let entry = self.children.entry(spec.child_id.clone()).or_insert_with(|| ChildInfo {
            display_name: name.clone(),
            screen: spec.screen,
            sessions: BTreeSet::new(),
            log: format!("{}.jsonl", spec.child_id),
        });
        entry.display_name = name;
        if spec.screen.is_some() {
            entry.screen = spec.screen;
        }
        Ok(())
    }

    pub fn owner(&self, session_id: &str) -> Option<&str> {
        self.children.iter().find(|(_, c)| c.sessions.contains(session_id)).map(|(id, _)| id.as_str())
    }

    /// Assigns `session_id` to `child_id` on first use. Returns whether the
    /// registry changed.
    pub fn claim_session(&mut self, child_id: &str, session_id: &str) -> Result<bool, ServiceError> {
        if !self.children.contains_key(child_id) {
            return Err(ServiceError::NotFound(format!("unknown child {child_id}")));
        }
        match self.owner(session_id) {
            Some(owner) if owner == child_id => Ok(false),
            Some(_) => Err(ServiceError::NotFound(format!("session {session_id} belongs to another child"))),
            None if !valid_id(session_id) => Err(ServiceError::BadRequest(format!("invalid session id {session_id:?}"))),
            None => {
                self.children.get_mut(child_id).expect("checked").sessions.insert(session_id.into());
                Ok(true)
            }
        }
    }
}

/// Acknowledgement of one delivery.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub v: SchemaV1,
    pub trial_id: String,
    /// False when the trial was already in the log.
    pub appended: bool,
}

struct ChildState {
    trials: Vec<TrialRecord>,
    keys: HashSet<(String, String)>,
    log: Option<File>,
    cache: FitCache,
    derived: Option<DerivedState>,
}

impl ChildState {
    fn new(trials: Vec<TrialRecord>) -> Self {
        let mut state = Self { trials: Vec::new(), keys: HashSet::new(), log: None, cache: FitCache::new(), derived: None };
        for t in trials {
            state.admit(t);
        }
        state
    }

    /// Adds `t` unless its (session, trial) key is known.
    fn admit(&mut self, t: TrialRecord) -> bool {
        if !self.keys.insert((t.session_id.clone(), t.trial_id.clone())) {
            return false;
        }
        self.trials.push(t);
        self.derived = None;
        true
    }

    fn derived(&mut self, child_id: &str, cfg: &Config) -> &DerivedState {
        if self.derived.is_none() {
            self.derived = Some(derive_cached(child_id, &self.trials, cfg, &mut self.cache));
        }
        self.derived.as_ref().expect("just filled")
    }
}

/// Derived state of a log, with ingest's duplicate rule: the first delivery
/// of a (session, trial) key wins.
pub fn replay(child_id: &str, log: impl io::BufRead, cfg: &Config) -> Result<DerivedState, ReplayError> {
    let trials: Vec<TrialRecord> = jsonl::read_all(log)?;
    let mut state = ChildState::new(trials);
    Ok(state.derived(child_id, cfg).clone())
}

pub struct Service {
    cfg: ServiceConfig,
    registry: Mutex<ChildRegistry>,
    children: Mutex<HashMap<String, Arc<Mutex<ChildState>>>>,
}

impl Service {
    /// Opens (or creates) the data directory, registers the configured
    /// children and replays every existing log.
    pub fn open(cfg: ServiceConfig) -> Result<Self, ServiceError> {
        fs::create_dir_all(&cfg.data_dir)?;
        let path = cfg.data_dir.join("registry.json");
        let mut registry: ChildRegistry = match fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text)
                .map_err(|e| ReplayError::Corrupt { line: e.line(), message: e.to_string() })?,
            Err(e) if e.kind() == io::ErrorKind::NotFound => ChildRegistry::default(),
            Err(e) => return Err(e.into()),
        };
        for spec in &cfg.children {
            registry.register(spec)?;
        }
        let svc = Self { cfg, registry: Mutex::new(registry), children: Mutex::new(HashMap::new()) };
        svc.save_registry()?;
        Ok(svc)
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.cfg
    }

    pub fn registry(&self) -> ChildRegistry {
        self.registry.lock().expect("registry lock").clone()
    }

    pub fn register_child(&self, spec: &ChildSpec) -> Result<(), ServiceError> {
        self.registry.lock().expect("registry lock").register(spec)?;
        self.save_registry()
    }

    pub fn log_path(&self, child_id: &str) -> Result<PathBuf, ServiceError> {
        let reg = self.registry.lock().expect("registry lock");
        let info = reg.children.get(child_id).ok_or_else(|| ServiceError::NotFound(format!("unknown child {child_id}")))?;
        Ok(self.cfg.data_dir.join(&info.log))
    }

    fn save_registry(&self) -> Result<(), ServiceError> {
        let reg = self.registry.lock().expect("registry lock");
        let tmp = self.cfg.data_dir.join("registry.json.tmp");
        fs::write(&tmp, serde_json::to_vec_pretty(&*reg).expect("registry serializes"))?;
        fs::rename(tmp, self.cfg.data_dir.join("registry.json"))?;
        Ok(())
    }

    fn child(&self, child_id: &str) -> Result<Arc<Mutex<ChildState>>, ServiceError> {
        let path = self.log_path(child_id)?;
        let mut children = self.children.lock().expect("children lock");
        if let Some(c) = children.get(child_id) {
            return Ok(c.clone());
        }
        let trials = match File::open(&path) {
            Ok(f) => jsonl::read_all(BufReader::new(f))?,
            Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        let state = Arc::new(Mutex::new(ChildState::new(trials)));
        children.insert(child_id.into(), state.clone());
        Ok(state)
    }

    fn screen_of(&self, child_id: &str) -> ScreenProfile {
        let reg = self.registry.lock().expect("registry lock");
        reg.children.get(child_id).and_then(|c| c.screen).unwrap_or(self.cfg.core.screen)
    }

    /// Parses and ingests one delivery of a trial document.
    pub fn ingest(&self, child_id: &str, session_id: &str, body: &[u8]) -> Result<Ack, ServiceError> {
        let trial: TrialRecord =
            serde_json::from_slice(body).map_err(|e| ServiceError::BadRequest(format!("trial document: {e}")))?;
        self.ingest_record(child_id, session_id, trial)
    }

    /// Appends `trial` to the child's log exactly once; a repeated
    /// (session, trial) key is acknowledged without appending.
    pub fn ingest_record(&self, child_id: &str, session_id: &str, mut trial: TrialRecord) -> Result<Ack, ServiceError> {
        if !self.registry.lock().expect("registry lock").children.contains_key(child_id) {
            return Err(ServiceError::NotFound(format!("unknown child {child_id}")));
        }
        if trial.session_id.is_empty() {
            trial.session_id = session_id.into();
        } else if trial.session_id != session_id {
            return Err(ServiceError::BadRequest(format!(
                "trial names session {:?} but was posted to {session_id:?}",
                trial.session_id
            )));
        }
        if trial.trial_id.is_empty() || trial.trial_id.len() > 128 {
            return Err(ServiceError::BadRequest("trial_id must have 1 to 128 characters".into()));
        }
        trial.validate(&self.screen_of(child_id)).map_err(|e| ServiceError::BadRequest(e.to_string()))?;

        let claimed = self.registry.lock().expect("registry lock").claim_session(child_id, session_id)?;
        if claimed {
            self.save_registry()?;
        }

        let path = self.log_path(child_id)?;
        let state = self.child(child_id)?;
        let mut state = state.lock().expect("child lock");
        let ack = |appended| Ack { v: SchemaV1, trial_id: trial.trial_id.clone(), appended };
        if state.keys.contains(&(trial.session_id.clone(), trial.trial_id.clone())) {
            return Ok(ack(false));
        }
        if state.log.is_none() {
            state.log = Some(OpenOptions::new().create(true).append(true).open(&path)?);
        }
        // One write per line: a crash leaves at most a truncated final line.
        let log = state.log.as_mut().expect("opened");
        log.write_all(jsonl::to_line(&trial).as_bytes())?;
        log.flush()?;
        let out = ack(true);
        state.admit(trial);
        Ok(out)
    }

    pub fn report(&self, child_id: &str) -> Result<Report, ServiceError> {
        let state = self.child(child_id)?;
        let mut state = state.lock().expect("child lock");
        Ok(state.derived(child_id, &self.cfg.core).report.clone())
    }

    /// Alerts whose window ends at or after `since_ms`, oldest first.
    pub fn alerts(&self, child_id: &str, since_ms: i64) -> Result<Vec<Alert>, ServiceError> {
        let mut alerts: Vec<Alert> =
            self.report(child_id)?.alerts.into_iter().filter(|a| a.window.1 >= since_ms).collect();
        alerts.sort_by(|a, b| (a.window.1, &a.channel).cmp(&(b.window.1, &b.channel)));
        Ok(alerts)
    }

    pub fn trial_count(&self, child_id: &str) -> Result<usize, ServiceError> {
        Ok(self.child(child_id)?.lock().expect("child lock").trials.len())
    }
}

/// Reads a whole log file; see [`replay`].
pub fn replay_file(child_id: &str, path: &Path, cfg: &Config) -> Result<DerivedState, ReplayError> {
    replay(child_id, BufReader::new(File::open(path)?), cfg)
}
