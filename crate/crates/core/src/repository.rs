//! Open data repository: session metadata, append-only trace logs and
//! sealed datasets on local disk.
//!
//! Layout under the root directory:
//!
//! ```text
//! sessions/<id>/session.json   rewritten atomically on every transition
//! sessions/<id>/records.jsonl  append-only, synced before each ack
//! datasets/<id>.jsonl          export format, written once at sealing
//! ```

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use chrono::Utc;
use converge_sim::trace::TraceRecord;
use converge_sim::Policy;

use crate::dataset::{self, Dataset, StreamClock, TraceFilter, SCHEMA_VERSION};
use crate::error::CoreError;
use crate::session::{Session, SessionState};

struct Slot {
    session: Session,
    log: Option<File>,
    clock: StreamClock,
    count: u64,
}

pub struct Repository {
    root: PathBuf,
    sessions: RwLock<BTreeMap<String, Arc<Mutex<Slot>>>>,
    datasets: RwLock<BTreeMap<String, Dataset>>,
    next_id: AtomicU64,
}

/// What `Repository::open` had to repair.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Recovery {
    /// Sessions found RUNNING and moved to ABORTED.
    pub aborted: Vec<String>,
    /// Bytes of torn, never-acknowledged writes dropped from logs.
    pub truncated_bytes: u64,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    if let Some(dir) = path.parent() {
        // Persist the rename itself.
        File::open(dir)?.sync_all()?;
    }
    Ok(())
}

fn dataset_id_for(session_id: &str) -> String {
    format!("ds-{session_id}")
}

/// Parses a log, dropping a torn tail. A malformed line that is followed by
/// more data means real corruption.
fn read_log(path: &Path) -> Result<(Vec<TraceRecord>, u64, u64), CoreError> {
    let mut bytes = Vec::new();
    match File::open(path) {
        Ok(mut f) => {
            f.read_to_end(&mut bytes)?;
        }
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok((Vec::new(), 0, 0)),
        Err(e) => return Err(e.into()),
    }
    let mut records = Vec::new();
    let mut good = 0usize;
    while good < bytes.len() {
        let Some(nl) = bytes[good..].iter().position(|&b| b == b'\n') else { break };
        match serde_json::from_slice::<TraceRecord>(&bytes[good..good + nl]) {
            Ok(r) => records.push(r),
            Err(e) => {
                if good + nl + 1 < bytes.len() {
                    return Err(CoreError::Corrupt(format!("{}: {e}", path.display())));
                }
                break;
            }
        }
        good += nl + 1;
    }
    Ok((records, good as u64, (bytes.len() - good) as u64))
}

impl Repository {
    /// Opens (or initializes) a repository. Sessions left RUNNING by an
    /// unclean stop are aborted and sealed with every durable record.
    pub fn open(root: impl Into<PathBuf>) -> Result<(Self, Recovery), CoreError> {
        let root = root.into();
        fs::create_dir_all(root.join("sessions"))?;
        fs::create_dir_all(root.join("datasets"))?;
        let repo = Repository {
            root,
            sessions: RwLock::new(BTreeMap::new()),
            datasets: RwLock::new(BTreeMap::new()),
            next_id: AtomicU64::new(1),
        };
        let mut recovery = Recovery::default();

        for entry in fs::read_dir(repo.root.join("datasets"))? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "tmp") {
                fs::remove_file(&path)?;
                continue;
            }
            let mut first = Vec::new();
            File::open(&path)?.read_to_end(&mut first)?;
            let header = dataset::decode_header(&first)
                .map_err(|e| CoreError::Corrupt(format!("{}: {e}", path.display())))?;
            repo.datasets.write().unwrap().insert(header.dataset_id.clone(), Dataset::from(&header));
        }

        let mut max_id = 0u64;
        for entry in fs::read_dir(repo.root.join("sessions"))? {
            let dir = entry?.path();
            let meta = dir.join("session.json");
            if !meta.exists() {
                continue;
            }
            let session: Session = serde_json::from_slice(&fs::read(&meta)?)
                .map_err(|e| CoreError::Corrupt(format!("{}: {e}", meta.display())))?;
            if let Some(n) = session.session_id.strip_prefix('s').and_then(|n| n.parse::<u64>().ok()) {
                max_id = max_id.max(n);
            }
            let log_path = dir.join("records.jsonl");
            let (records, good_len, torn) = read_log(&log_path)?;
            if torn > 0 {
                OpenOptions::new().write(true).open(&log_path)?.set_len(good_len)?;
                recovery.truncated_bytes += torn;
            }
            let mut clock = StreamClock::default();
            for r in &records {
                clock.observe(r);
            }
            let id = session.session_id.clone();
            let needs_seal = match session.state {
                SessionState::Running => true,
                SessionState::Completed | SessionState::Aborted => session
                    .result_dataset_id
                    .as_ref()
                    .is_some_and(|d| !repo.datasets.read().unwrap().contains_key(d)),
                _ => false,
            };
            if let Some(ds) = &session.result_dataset_id {
                repo.datasets.write().unwrap().entry(ds.clone()).or_insert_with(|| Dataset {
                    dataset_id: ds.clone(),
                    session_id: id.clone(),
                    schema_version: SCHEMA_VERSION,
                    record_count: records.len() as u64,
                    checksum: None,
                    immutable: false,
                });
            }
            let slot = Slot { session, log: None, clock, count: records.len() as u64 };
            repo.sessions.write().unwrap().insert(id.clone(), Arc::new(Mutex::new(slot)));
            if needs_seal {
                let running = repo.session(&id)?.state == SessionState::Running;
                if running {
                    repo.transition(&id, SessionState::Aborted)?;
                    recovery.aborted.push(id);
                } else {
                    repo.reseal(&id)?;
                }
            }
        }
        repo.next_id.store(max_id + 1, Ordering::SeqCst);
        Ok((repo, recovery))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn session_dir(&self, id: &str) -> PathBuf {
        self.root.join("sessions").join(id)
    }

    fn dataset_path(&self, dataset_id: &str) -> PathBuf {
        self.root.join("datasets").join(format!("{dataset_id}.jsonl"))
    }

    fn slot(&self, id: &str) -> Result<Arc<Mutex<Slot>>, CoreError> {
        self.sessions.read().unwrap().get(id).cloned().ok_or_else(|| CoreError::UnknownSession(id.to_string()))
    }

    fn persist(&self, session: &Session) -> Result<(), CoreError> {
        let dir = self.session_dir(&session.session_id);
        fs::create_dir_all(&dir)?;
        let json = serde_json::to_vec_pretty(session).expect("sessions serialize");
        write_atomic(&dir.join("session.json"), &json)?;
        Ok(())
    }

    pub fn create_session(
        &self,
        owner: &str,
        scenario_ref: &str,
        policy: Policy,
        seed: Option<u64>,
    ) -> Result<Session, CoreError> {
        let n = self.next_id.fetch_add(1, Ordering::SeqCst);
        let session = Session::new(format!("s{n:06}"), owner.into(), scenario_ref.into(), policy, seed);
        self.persist(&session)?;
        let slot = Slot { session: session.clone(), log: None, clock: StreamClock::default(), count: 0 };
        self.sessions.write().unwrap().insert(session.session_id.clone(), Arc::new(Mutex::new(slot)));
        Ok(session)
    }

    pub fn session(&self, id: &str) -> Result<Session, CoreError> {
        Ok(self.slot(id)?.lock().unwrap().session.clone())
    }

    pub fn sessions(&self) -> Vec<Session> {
        let slots: Vec<_> = self.sessions.read().unwrap().values().cloned().collect();
        slots.iter().map(|s| s.lock().unwrap().session.clone()).collect()
    }

    /// Applies a lifecycle transition. Entering RUNNING opens the trace log;
    /// leaving it seals the dataset.
    pub fn transition(&self, id: &str, to: SessionState) -> Result<Session, CoreError> {
        let slot = self.slot(id)?;
        let mut slot = slot.lock().unwrap();
        let mut next = slot.session.transition(to, Utc::now())?;
        match to {
            SessionState::Running => {
                let dir = self.session_dir(id);
                fs::create_dir_all(&dir)?;
                let log = OpenOptions::new().create(true).append(true).open(dir.join("records.jsonl"))?;
                let ds = dataset_id_for(id);
                self.datasets.write().unwrap().insert(
                    ds.clone(),
                    Dataset {
                        dataset_id: ds.clone(),
                        session_id: id.into(),
                        schema_version: SCHEMA_VERSION,
                        record_count: slot.count,
                        checksum: None,
                        immutable: false,
                    },
                );
                next.result_dataset_id = Some(ds);
                slot.log = Some(log);
            }
            SessionState::Completed | SessionState::Aborted if slot.session.state == SessionState::Running => {
                slot.log = None;
                self.seal(id)?;
            }
            _ => {}
        }
        self.persist(&next)?;
        slot.session = next.clone();
        Ok(next)
    }

    fn reseal(&self, id: &str) -> Result<(), CoreError> {
        let slot = self.slot(id)?;
        let _guard = slot.lock().unwrap();
        self.seal(id)
    }

    /// Writes the dataset file from the log. Caller holds the slot lock.
    fn seal(&self, id: &str) -> Result<(), CoreError> {
        let ds = dataset_id_for(id);
        let (records, _, torn) = read_log(&self.session_dir(id).join("records.jsonl"))?;
        if torn > 0 {
            return Err(CoreError::Corrupt(format!("session {id} log has a torn tail")));
        }
        let bytes = dataset::encode(&ds, id, &records);
        let header = dataset::decode_header(&bytes).expect("freshly encoded");
        write_atomic(&self.dataset_path(&ds), &bytes)?;
        self.datasets.write().unwrap().insert(ds, Dataset::from(&header));
        Ok(())
    }

    /// Durably appends a batch to a RUNNING session. The batch is checked
    /// as a whole before anything is written. Returns the cumulative count.
    pub fn append(&self, id: &str, records: &[TraceRecord]) -> Result<u64, CoreError> {
        let slot = self.slot(id)?;
        let mut slot = slot.lock().unwrap();
        if slot.session.state != SessionState::Running {
            return Err(CoreError::SessionNotRunning { id: id.into(), state: slot.session.state });
        }
        let mut clock = slot.clock.clone();
        let mut buf = String::new();
        for (i, r) in records.iter().enumerate() {
            if r.session_id != id {
                return Err(CoreError::invalid(
                    format!("records[{i}].session_id"),
                    format!("`{}` does not match session `{id}`", r.session_id),
                ));
            }
            if let Err((last, got)) = clock.check(r) {
                return Err(CoreError::NonMonotonicTimestamp { stream: dataset::stream_label(r), last, got });
            }
            clock.observe(r);
            buf.push_str(&dataset::record_line(r));
        }
        let log = slot.log.as_mut().ok_or_else(|| CoreError::Corrupt(format!("session {id} has no open log")))?;
        log.write_all(buf.as_bytes())?;
        log.sync_data()?;
        slot.clock = clock;
        slot.count += records.len() as u64;
        let count = slot.count;
        drop(slot);
        if let Some(d) = self.datasets.write().unwrap().get_mut(&dataset_id_for(id)) {
            if !d.immutable {
                d.record_count = count;
            }
        }
        Ok(count)
    }

    pub fn dataset(&self, dataset_id: &str) -> Result<Dataset, CoreError> {
        self.datasets
            .read()
            .unwrap()
            .get(dataset_id)
            .cloned()
            .ok_or_else(|| CoreError::UnknownDataset(dataset_id.into()))
    }

    pub fn datasets(&self) -> Vec<Dataset> {
        self.datasets.read().unwrap().values().cloned().collect()
    }

    /// The sealed file, verified before it is handed out.
    pub fn export(&self, dataset_id: &str) -> Result<Vec<u8>, CoreError> {
        let meta = self.dataset(dataset_id)?;
        if !meta.immutable {
            return Err(CoreError::Unsealed(dataset_id.into()));
        }
        let bytes = fs::read(self.dataset_path(dataset_id))?;
        dataset::decode(&bytes).map_err(|e| CoreError::Corrupt(format!("dataset {dataset_id}: {e}")))?;
        Ok(bytes)
    }

    /// Records of a dataset, sealed or still being written.
    pub fn records(&self, dataset_id: &str) -> Result<Vec<TraceRecord>, CoreError> {
        let meta = self.dataset(dataset_id)?;
        if meta.immutable {
            let bytes = fs::read(self.dataset_path(dataset_id))?;
            let (_, records) =
                dataset::decode(&bytes).map_err(|e| CoreError::Corrupt(format!("dataset {dataset_id}: {e}")))?;
            return Ok(records);
        }
        // Only acknowledged records: the count is read before the file.
        let count = self.slot(&meta.session_id)?.lock().unwrap().count as usize;
        let (mut records, _, _) = read_log(&self.session_dir(&meta.session_id).join("records.jsonl"))?;
        records.truncate(count);
        Ok(records)
    }

    pub fn query(&self, dataset_id: &str, filter: &TraceFilter) -> Result<Vec<TraceRecord>, CoreError> {
        Ok(filter.apply(&self.records(dataset_id)?))
    }

    /// Number of durably acknowledged records for a session.
    pub fn acked(&self, id: &str) -> Result<u64, CoreError> {
        Ok(self.slot(id)?.lock().unwrap().count)
    }
}
