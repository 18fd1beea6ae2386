//! The service facade: every operation authorizes its caller, then drives
//! the repository, executors, model registry and event hub.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use converge_sim::scenario::{Scenario, ScenarioError};
use converge_sim::trace::TraceRecord;
use converge_sim::xapp::VisionAidedXapp;
use converge_sim::{Policy, Simulation};
use serde::Deserialize;
use serde_json::Value;

use crate::auth::{Decision, Operation, PolicyStore, Resource};
use crate::commands::{CommandRequest, PlacementRequest, RisProfileRequest};
use crate::dataset::{Dataset, TraceFilter};
use crate::error::CoreError;
use crate::events::{EventHub, Subscription};
use crate::executor::{self, Accepted, ExecutorConfig, ExecutorHandle, Outcome, Reply, Request, WorldSnapshot};
use crate::models::{ModelEntry, ModelRegistry};
use crate::repository::{Recovery, Repository};
use crate::session::{Session, SessionState};

pub const FLAGSHIP_REF: &str = "flagship";

#[derive(Debug, Clone)]
pub struct CoreConfig {
    pub data_dir: PathBuf,
    /// Directory of `<ref>.toml` scenarios; `flagship` is always available.
    pub scenario_dir: Option<PathBuf>,
    /// Simulated seconds per wall-clock second; 0 runs unpaced.
    pub pace: f64,
    pub max_running: usize,
}

impl CoreConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Self { data_dir: data_dir.into(), scenario_dir: None, pace: 1.0, max_running: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub scenario_ref: String,
    #[serde(default)]
    pub policy: Policy,
    #[serde(default)]
    pub seed: Option<u64>,
}

type Executors = Arc<Mutex<HashMap<String, ExecutorHandle>>>;

pub struct Core {
    config: CoreConfig,
    repo: Arc<Repository>,
    policies: PolicyStore,
    models: RwLock<ModelRegistry>,
    hub: Arc<EventHub>,
    executors: Executors,
    create_lock: Mutex<()>,
    recovery: Recovery,
}

fn session_json(s: &Session) -> Value {
    serde_json::to_value(s).expect("sessions serialize")
}

impl Core {
    pub fn open(config: CoreConfig, policies: PolicyStore) -> Result<Self, CoreError> {
        let (repo, recovery) = Repository::open(&config.data_dir)?;
        for id in &recovery.aborted {
            tracing::warn!(session = %id, "session was RUNNING at an unclean stop; marked ABORTED");
        }
        Ok(Self {
            config,
            repo: Arc::new(repo),
            policies,
            models: RwLock::new(ModelRegistry::with_builtins()),
            hub: Arc::new(EventHub::default()),
            executors: Arc::new(Mutex::new(HashMap::new())),
            create_lock: Mutex::new(()),
            recovery,
        })
    }

    pub fn recovery(&self) -> &Recovery {
        &self.recovery
    }

    pub fn repository(&self) -> &Repository {
        &self.repo
    }

    pub fn authenticate(&self, token: &str) -> Result<String, CoreError> {
        self.policies.authenticate(token).map(str::to_string).ok_or(CoreError::Unauthorized)
    }

    fn authorize(&self, principal: &str, op: Operation, resource: Resource<'_>) -> Result<(), CoreError> {
        match self.policies.authorize(principal, op, resource) {
            Decision::Allow => Ok(()),
            Decision::Deny(reason) if reason == "quota" => {
                let active = match resource {
                    Resource::NewSession { active_sessions } => active_sessions,
                    _ => 0,
                };
                Err(CoreError::QuotaExceeded { owner: principal.into(), active })
            }
            Decision::Deny(reason) => Err(CoreError::Forbidden(reason)),
        }
    }

    fn owned_session(&self, principal: &str, op: Operation, id: &str) -> Result<Session, CoreError> {
        // Authorize the operation itself before revealing whether the id exists.
        self.authorize(principal, op, Resource::Service)?;
        let s = self.repo.session(id)?;
        self.authorize(principal, op, Resource::Session { owner: &s.owner })?;
        Ok(s)
    }

    /// Resolves a scenario reference: `flagship` or `<scenario_dir>/<ref>.toml`.
    pub fn scenario(&self, scenario_ref: &str) -> Result<Scenario, CoreError> {
        if scenario_ref == FLAGSHIP_REF {
            return Ok(Scenario::flagship());
        }
        let safe = !scenario_ref.is_empty()
            && !scenario_ref.starts_with('.')
            && scenario_ref.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c));
        let path = match (&self.config.scenario_dir, safe) {
            (Some(dir), true) => dir.join(format!("{scenario_ref}.toml")),
            _ => return Err(CoreError::UnknownScenario(scenario_ref.into())),
        };
        let text = std::fs::read_to_string(&path).map_err(|_| CoreError::UnknownScenario(scenario_ref.into()))?;
        Scenario::parse(&text).map_err(|e| scenario_error(scenario_ref, e))
    }

    fn build_simulation(&self, session: &Session) -> Result<(Simulation, VisionAidedXapp), CoreError> {
        let mut scenario = self.scenario(&session.scenario_ref)?;
        if let Some(seed) = session.seed {
            scenario.sim.rng_seed = seed;
        }
        let sim = Simulation::new(&scenario, session.policy, session.session_id.clone())
            .map_err(|e| CoreError::invalid("scenario", e))?;
        Ok((sim, VisionAidedXapp::new(scenario.xapp)))
    }

    pub fn create_session(&self, principal: &str, req: CreateSession) -> Result<Session, CoreError> {
        let _guard = self.create_lock.lock().unwrap();
        let active = self.repo.sessions().iter().filter(|s| s.owner == principal && s.is_active()).count();
        self.authorize(principal, Operation::CreateSession, Resource::NewSession { active_sessions: active })?;
        self.scenario(&req.scenario_ref)?;
        let s = self.repo.create_session(principal, &req.scenario_ref, req.policy, req.seed)?;
        self.hub.publish(&s.session_id, "session", session_json(&s));
        Ok(s)
    }

    pub fn session(&self, principal: &str, id: &str) -> Result<Session, CoreError> {
        self.owned_session(principal, Operation::ReadSession, id)
    }

    pub fn sessions(&self, principal: &str) -> Result<Vec<Session>, CoreError> {
        self.authorize(principal, Operation::ReadSession, Resource::Service)?;
        Ok(self.repo.sessions().into_iter().filter(|s| s.owner == principal).collect())
    }

    pub fn transition(&self, principal: &str, id: &str, to: SessionState) -> Result<Session, CoreError> {
        let current = self.owned_session(principal, Operation::ControlSession, id)?;
        let next = match to {
            SessionState::Running => self.start(&current)?,
            SessionState::Completed | SessionState::Aborted if current.state == SessionState::Running => {
                let handle = self.executors.lock().unwrap().remove(id);
                if let Some(h) = handle {
                    h.stop();
                }
                self.repo.transition(id, to)?
            }
            _ => self.repo.transition(id, to)?,
        };
        self.hub.publish(id, "session", session_json(&next));
        Ok(next)
    }

    fn start(&self, current: &Session) -> Result<Session, CoreError> {
        let id = current.session_id.clone();
        if !current.state.can_transition(SessionState::Running) {
            return Err(CoreError::IllegalTransition { from: current.state, to: SessionState::Running });
        }
        let (sim, xapp) = self.build_simulation(current)?;
        // Held across spawn so the finish hook cannot run before the insert.
        let mut executors = self.executors.lock().unwrap();
        if executors.len() >= self.config.max_running {
            return Err(CoreError::ExecutorUnavailable(executors.len()));
        }
        let running = self.repo.transition(&id, SessionState::Running)?;
        let on_finish = {
            let (repo, hub, executors, id) = (self.repo.clone(), self.hub.clone(), self.executors.clone(), id.clone());
            Box::new(move |outcome: Outcome| {
                executors.lock().unwrap().remove(&id);
                let to = match &outcome {
                    Outcome::Completed => SessionState::Completed,
                    Outcome::Failed(reason) => {
                        tracing::error!(session = %id, %reason, "run failed");
                        hub.publish(&id, "error", serde_json::json!({ "message": reason }));
                        SessionState::Aborted
                    }
                };
                match repo.transition(&id, to) {
                    Ok(s) => {
                        hub.publish(&id, "session", session_json(&s));
                    }
                    Err(e) => tracing::error!(session = %id, error = %e, "could not close session"),
                }
            })
        };
        let config = ExecutorConfig { pace: self.config.pace };
        match executor::spawn(sim, xapp, self.repo.clone(), self.hub.clone(), config, on_finish) {
            Ok(handle) => {
                executors.insert(id, handle);
                Ok(running)
            }
            Err(e) => {
                drop(executors);
                self.repo.transition(&id, SessionState::Aborted)?;
                Err(e)
            }
        }
    }

    fn request(&self, principal: &str, id: &str, request: Request) -> Result<Reply, CoreError> {
        self.owned_session(principal, Operation::ControlSession, id)?;
        let client = self.executors.lock().unwrap().get(id).map(ExecutorHandle::client);
        match client.and_then(|c| c.request(request)) {
            Some(reply) => reply,
            None => {
                let state = self.repo.session(id)?.state;
                Err(CoreError::SessionNotRunning { id: id.into(), state })
            }
        }
    }

    fn accepted(reply: Reply) -> Accepted {
        match reply {
            Reply::Accepted(a) => a,
            Reply::Snapshot(_) => unreachable!("commands are acknowledged with Accepted"),
        }
    }

    pub fn set_placement(&self, principal: &str, id: &str, device_id: &str, req: PlacementRequest) -> Result<Accepted, CoreError> {
        self.request(principal, id, req.into_request(device_id)).map(Self::accepted)
    }

    pub fn set_ris_profile(&self, principal: &str, id: &str, lis_id: &str, req: RisProfileRequest) -> Result<Accepted, CoreError> {
        let request = req.into_request(lis_id)?;
        self.request(principal, id, request).map(Self::accepted)
    }

    pub fn command(&self, principal: &str, id: &str, req: CommandRequest) -> Result<Accepted, CoreError> {
        let request = req.into_request()?;
        self.request(principal, id, request).map(Self::accepted)
    }

    /// Live world state of a running session, or the initial state otherwise.
    pub fn snapshot(&self, principal: &str, id: &str) -> Result<WorldSnapshot, CoreError> {
        let s = self.owned_session(principal, Operation::ReadSession, id)?;
        let client = self.executors.lock().unwrap().get(id).map(ExecutorHandle::client);
        match client.and_then(|c| c.request(Request::Snapshot)) {
            Some(Ok(Reply::Snapshot(snap))) => Ok(*snap),
            Some(Ok(Reply::Accepted(_))) => unreachable!("snapshot requests return snapshots"),
            Some(Err(e)) => Err(e),
            None => Ok(executor::snapshot(&self.build_simulation(&s)?.0)),
        }
    }

    pub fn subscribe(&self, principal: &str, id: &str, after: Option<u64>) -> Result<Subscription, CoreError> {
        self.owned_session(principal, Operation::ReadSession, id)?;
        Ok(self.hub.subscribe(id, after))
    }

    pub fn events_since(&self, id: &str, after: u64) -> Vec<crate::events::SessionEvent> {
        self.hub.since(id, after)
    }

    /// Durable append on behalf of an external recorder.
    pub fn append_trace(&self, principal: &str, id: &str, records: &[TraceRecord]) -> Result<u64, CoreError> {
        self.owned_session(principal, Operation::ControlSession, id)?;
        let count = self.repo.append(id, records)?;
        for r in records {
            self.hub.publish_record(r);
        }
        Ok(count)
    }

    pub fn dataset(&self, principal: &str, dataset_id: &str) -> Result<Dataset, CoreError> {
        self.authorize(principal, Operation::ReadDataset, Resource::Dataset)?;
        self.repo.dataset(dataset_id)
    }

    pub fn export_dataset(&self, principal: &str, dataset_id: &str, format: Option<&str>) -> Result<Vec<u8>, CoreError> {
        self.authorize(principal, Operation::ReadDataset, Resource::Dataset)?;
        match format {
            None | Some("jsonl") | Some("ndjson") => self.repo.export(dataset_id),
            Some(other) => Err(CoreError::invalid("format", format!("unsupported `{other}`, use `jsonl`"))),
        }
    }

    pub fn query_traces(&self, principal: &str, dataset_id: &str, filter: &TraceFilter) -> Result<Vec<TraceRecord>, CoreError> {
        self.authorize(principal, Operation::ReadDataset, Resource::Dataset)?;
        self.repo.query(dataset_id, filter)
    }

    pub fn register_model(&self, principal: &str, entry: ModelEntry) -> Result<ModelEntry, CoreError> {
        self.authorize(principal, Operation::RegisterModel, Resource::Model)?;
        self.models.write().unwrap().register(entry)
    }

    pub fn models(&self, principal: &str) -> Result<Vec<ModelEntry>, CoreError> {
        self.authorize(principal, Operation::InvokeModel, Resource::Model)?;
        Ok(self.models.read().unwrap().list())
    }

    pub fn invoke_model(&self, principal: &str, model_id: &str, version: &str, input: &Value) -> Result<Value, CoreError> {
        self.authorize(principal, Operation::InvokeModel, Resource::Model)?;
        self.models.read().unwrap().invoke(model_id, version, input)
    }

    /// Graceful stop: every running session is aborted with its records
    /// sealed. Returns the aborted ids.
    pub fn shutdown(&self) -> Vec<String> {
        let handles: Vec<(String, ExecutorHandle)> = self.executors.lock().unwrap().drain().collect();
        let mut aborted = Vec::new();
        for (id, h) in handles {
            h.stop();
            match self.repo.transition(&id, SessionState::Aborted) {
                Ok(s) => {
                    self.hub.publish(&id, "session", session_json(&s));
                    aborted.push(id);
                }
                Err(e) => tracing::error!(session = %id, error = %e, "abort at shutdown failed"),
            }
        }
        aborted.sort();
        aborted
    }

    pub fn running(&self) -> usize {
        self.executors.lock().unwrap().len()
    }
}

fn scenario_error(scenario_ref: &str, e: ScenarioError) -> CoreError {
    match e.field().map(str::to_string) {
        Some(field) => CoreError::invalid(field, e),
        None => CoreError::invalid(format!("scenario `{scenario_ref}`"), e),
    }
}
