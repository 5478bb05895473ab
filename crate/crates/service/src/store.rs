//! Session persistence: one directory of JSON files per session.
//!
//! ```text
//! <root>/<session_id>/record.json       lifecycle metadata
//!                     trace.json        merged action trace
//!                     suggestions.json  suggestion queue with reveal cursor
//!                     frames/           sampled PNG frames
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use taskreflect_core::advisor::{self, Reveal, SuggestionQueue};
use taskreflect_core::ingest::{self, FrameDecoder, SamplingConfig};
use taskreflect_core::providers::ChatProvider;
use taskreflect_core::trace::{self, ActionTrace};

use crate::error::ServiceError;

pub const RECORD_FILE: &str = "record.json";
pub const TRACE_FILE: &str = "trace.json";
pub const SUGGESTIONS_FILE: &str = "suggestions.json";
pub const FRAMES_DIR: &str = "frames";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionState {
    Created,
    Extracting,
    Tracing,
    Advising,
    Ready,
    Error,
}

impl SessionState {
    pub fn name(self) -> &'static str {
        match self {
            SessionState::Created => "created",
            SessionState::Extracting => "extracting",
            SessionState::Tracing => "tracing",
            SessionState::Advising => "advising",
            SessionState::Ready => "ready",
            SessionState::Error => "error",
        }
    }

    /// Forward step of the pipeline, or any state to `error`.
    pub fn can_move_to(self, next: SessionState) -> bool {
        use SessionState::*;
        matches!(
            (self, next),
            (Created, Extracting) | (Extracting, Tracing) | (Tracing, Advising) | (Advising, Ready) | (_, Error)
        )
    }
}

impl fmt::Display for SessionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Shape of the sampling plan, kept so summaries need not re-probe the recording.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingSummary {
    pub frame_count: usize,
    pub segment_sizes: Vec<usize>,
    pub batches_per_segment: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: String,
    pub state: SessionState,
    pub recording_path: PathBuf,
    pub config: SamplingConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling: Option<SamplingSummary>,
    /// Stored in `trace.json`.
    #[serde(skip)]
    pub trace: Option<ActionTrace>,
    /// Stored in `suggestions.json`.
    #[serde(skip)]
    pub queue: Option<SuggestionQueue>,
    /// Stage name (`extract`, `trace`, `advise`) to wall-clock milliseconds.
    #[serde(default)]
    pub timings: BTreeMap<String, u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_detail: Option<String>,
}

impl SessionRecord {
    fn advance(&mut self, next: SessionState) {
        debug_assert!(self.state.can_move_to(next), "{} -> {next}", self.state);
        self.state = next;
    }

    fn fail(&mut self, stage: SessionState, message: impl fmt::Display) {
        self.state = SessionState::Error;
        self.error_detail = Some(format!("{stage}: {message}"));
    }
}

/// Random 128-bit id as 32 lowercase hex digits.
pub fn mint_session_id() -> String {
    format!("{:032x}", rand::random::<u128>())
}

pub fn is_session_id(s: &str) -> bool {
    s.len() == 32 && s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
}

/// Unlocked access to one session directory.
#[derive(Debug, Clone)]
pub struct SessionDir {
    path: PathBuf,
}

impl SessionDir {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn exists(&self) -> bool {
        self.path.join(RECORD_FILE).is_file()
    }

    pub fn load(&self) -> Result<SessionRecord, ServiceError> {
        let mut record: SessionRecord = read_json(&self.path.join(RECORD_FILE))?;
        let trace_path = self.path.join(TRACE_FILE);
        if trace_path.is_file() {
            record.trace = Some(read_json(&trace_path)?);
        }
        let queue_path = self.path.join(SUGGESTIONS_FILE);
        if queue_path.is_file() {
            record.queue = Some(read_json(&queue_path)?);
        }
        if let Some(trace) = record.trace.as_mut() {
            trace.source_session = record.session_id.clone();
        }
        Ok(record)
    }

    pub fn save_record(&self, record: &SessionRecord) -> Result<(), ServiceError> {
        let text = serde_json::to_string_pretty(record).expect("record serializes");
        write_atomic(&self.path.join(RECORD_FILE), &text)
    }

    pub fn save_trace(&self, trace: &ActionTrace) -> Result<(), ServiceError> {
        write_atomic(&self.path.join(TRACE_FILE), &trace.to_json())
    }

    pub fn save_queue(&self, queue: &SuggestionQueue) -> Result<(), ServiceError> {
        write_atomic(&self.path.join(SUGGESTIONS_FILE), &queue.to_json())
    }

    /// Reveals the next suggestion of a ready session and persists the cursor.
    pub fn reveal_next(&self) -> Result<Revealed, ServiceError> {
        let record = self.load()?;
        let mut queue = ready_queue(&record)?;
        let reveal = queue.next_suggestion();
        if matches!(reveal, Reveal::Item { .. }) {
            self.save_queue(&queue)?;
        }
        Ok(Revealed { reveal, remaining: queue.remaining() })
    }

    /// Items revealed so far, in reveal order.
    pub fn revealed(&self) -> Result<SuggestionQueue, ServiceError> {
        let record = self.load()?;
        let queue = ready_queue(&record)?;
        Ok(SuggestionQueue { items: queue.revealed_items().to_vec(), revealed: queue.revealed })
    }
}

fn ready_queue(record: &SessionRecord) -> Result<SuggestionQueue, ServiceError> {
    match (&record.state, &record.queue) {
        (SessionState::Ready, Some(queue)) => Ok(queue.clone()),
        _ => Err(ServiceError::Conflict {
            message: format!("session {} is {}, not ready", record.session_id, record.state),
        }),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Revealed {
    pub reveal: Reveal,
    pub remaining: usize,
}

type SessionLock = Arc<RwLock<()>>;

/// All sessions under one data directory, with a lock per session.
///
/// Mutations of one session take its lock exclusively; reads share it.
#[derive(Debug)]
pub struct SessionStore {
    root: PathBuf,
    locks: Mutex<HashMap<String, SessionLock>>,
}

impl SessionStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, ServiceError> {
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(|e| ServiceError::io(&root, e))?;
        Ok(Self { root, locks: Mutex::new(HashMap::new()) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn lock_for(&self, id: &str) -> SessionLock {
        let mut locks = self.locks.lock().expect("lock table poisoned");
        locks.entry(id.to_owned()).or_default().clone()
    }

    /// Session directory for a known id; unknown or malformed ids are `NotFound`.
    pub fn dir(&self, id: &str) -> Result<SessionDir, ServiceError> {
        let dir = SessionDir::new(self.root.join(id));
        if is_session_id(id) && dir.exists() {
            Ok(dir)
        } else {
            Err(ServiceError::NotFound { id: id.to_owned() })
        }
    }

    pub fn create_session(&self, recording_path: &Path, config: SamplingConfig) -> Result<SessionRecord, ServiceError> {
        config.validate().map_err(|e| ServiceError::InvalidInput(e.to_string()))?;
        let readable = std::fs::File::open(recording_path).and_then(|f| f.metadata());
        match readable {
            Ok(meta) if meta.is_file() => {}
            Ok(_) => {
                return Err(ServiceError::io(
                    recording_path,
                    std::io::Error::new(std::io::ErrorKind::InvalidInput, "not a regular file"),
                ));
            }
            Err(e) => return Err(ServiceError::io(recording_path, e)),
        }
        let recording_path = std::fs::canonicalize(recording_path).map_err(|e| ServiceError::io(recording_path, e))?;

        let (id, path) = loop {
            let id = mint_session_id();
            let path = self.root.join(&id);
            match std::fs::create_dir(&path) {
                Ok(()) => break (id, path),
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
                Err(e) => return Err(ServiceError::io(&path, e)),
            }
        };
        let record = SessionRecord {
            session_id: id,
            state: SessionState::Created,
            recording_path,
            config,
            sampling: None,
            trace: None,
            queue: None,
            timings: BTreeMap::new(),
            error_detail: None,
        };
        let dir = SessionDir::new(&path);
        if let Err(e) = dir.save_record(&record) {
            let _ = std::fs::remove_dir_all(&path);
            return Err(e);
        }
        Ok(record)
    }

    pub fn load(&self, id: &str) -> Result<SessionRecord, ServiceError> {
        let dir = self.dir(id)?;
        let lock = self.lock_for(id);
        let _guard = lock.read().expect("session lock poisoned");
        dir.load()
    }

    /// Moves a `created` session to `extracting`; any other state is a conflict.
    pub fn claim_for_analysis(&self, id: &str) -> Result<SessionRecord, ServiceError> {
        self.update(id, |record| {
            if record.state != SessionState::Created {
                return Err(ServiceError::Conflict {
                    message: format!("session {id} is {}; analysis needs a created session", record.state),
                });
            }
            record.advance(SessionState::Extracting);
            Ok(())
        })
    }

    /// Runs a claimed (`extracting`) session through every stage.
    ///
    /// Stage failures end in the `error` state and are not returned as `Err`;
    /// `Err` means the session itself could not be read or written.
    pub fn execute_claimed(
        &self,
        id: &str,
        provider: &dyn ChatProvider,
        decoder: &dyn FrameDecoder,
    ) -> Result<SessionRecord, ServiceError> {
        let dir = self.dir(id)?;
        let record = self.load(id)?;
        if record.state != SessionState::Extracting {
            return Err(ServiceError::Conflict { message: format!("session {id} is {}, not claimed", record.state) });
        }
        let config = record.config.clone();

        let started = Instant::now();
        let extracted = trace::extract_stage(decoder, &record.recording_path, &config)
            .and_then(|(plan, frames)| {
                ingest::write_frame_cache(&dir.path().join(FRAMES_DIR), &frames)?;
                Ok((plan, frames))
            });
        let extract_ms = elapsed_ms(started);
        let (plan, frames) = match extracted {
            Ok(v) => v,
            Err(e) => return self.fail(id, SessionState::Extracting, "extract", extract_ms, e),
        };
        self.update(id, |r| {
            r.timings.insert("extract".into(), extract_ms);
            r.sampling = Some(SamplingSummary {
                frame_count: plan.frame_count(),
                segment_sizes: plan.segment_sizes(),
                batches_per_segment: plan.batches_per_segment(),
            });
            r.advance(SessionState::Tracing);
            Ok(())
        })?;

        let started = Instant::now();
        let traced = trace::trace_stage(&plan, frames, &config, provider);
        let trace_ms = elapsed_ms(started);
        let mut action_trace = match traced {
            Ok(t) => t,
            Err(e) => return self.fail(id, SessionState::Tracing, "trace", trace_ms, e),
        };
        action_trace.source_session = id.to_owned();
        self.update(id, |r| {
            dir.save_trace(&action_trace)?;
            r.trace = Some(action_trace.clone());
            r.timings.insert("trace".into(), trace_ms);
            r.advance(SessionState::Advising);
            Ok(())
        })?;

        let started = Instant::now();
        let advised = advisor::advise(&action_trace, provider);
        let advise_ms = elapsed_ms(started);
        let queue = match advised {
            Ok(q) => q,
            Err(e) => return self.fail(id, SessionState::Advising, "advise", advise_ms, e),
        };
        for (index, item) in queue.items.iter().enumerate() {
            for lint in item.lint() {
                tracing::warn!(session = id, index, ?lint, "suggestion deviates from the requested style");
            }
        }
        self.update(id, |r| {
            dir.save_queue(&queue)?;
            r.queue = Some(queue.clone());
            r.timings.insert("advise".into(), advise_ms);
            r.advance(SessionState::Ready);
            Ok(())
        })
    }

    /// Claims and runs a session in the calling thread.
    pub fn run_pipeline(
        &self,
        id: &str,
        provider: &dyn ChatProvider,
        decoder: &dyn FrameDecoder,
    ) -> Result<SessionRecord, ServiceError> {
        self.claim_for_analysis(id)?;
        self.execute_claimed(id, provider, decoder)
    }

    pub fn reveal_next(&self, id: &str) -> Result<Revealed, ServiceError> {
        let dir = self.dir(id)?;
        let lock = self.lock_for(id);
        let _guard = lock.write().expect("session lock poisoned");
        dir.reveal_next()
    }

    pub fn revealed(&self, id: &str) -> Result<SuggestionQueue, ServiceError> {
        let dir = self.dir(id)?;
        let lock = self.lock_for(id);
        let _guard = lock.read().expect("session lock poisoned");
        dir.revealed()
    }

    fn update(
        &self,
        id: &str,
        change: impl FnOnce(&mut SessionRecord) -> Result<(), ServiceError>,
    ) -> Result<SessionRecord, ServiceError> {
        let dir = self.dir(id)?;
        let lock = self.lock_for(id);
        let _guard = lock.write().expect("session lock poisoned");
        let mut record = dir.load()?;
        change(&mut record)?;
        dir.save_record(&record)?;
        Ok(record)
    }

    fn fail(
        &self,
        id: &str,
        stage: SessionState,
        timing_key: &str,
        elapsed: u64,
        error: impl fmt::Display,
    ) -> Result<SessionRecord, ServiceError> {
        tracing::error!(session = id, %stage, %error, "pipeline stage failed");
        self.update(id, |r| {
            r.timings.insert(timing_key.into(), elapsed);
            r.fail(stage, &error);
            Ok(())
        })
    }
}

fn elapsed_ms(started: Instant) -> u64 {
    started.elapsed().as_millis() as u64
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, ServiceError> {
    let text = std::fs::read_to_string(path).map_err(|e| ServiceError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| ServiceError::Corrupt { path: path.to_owned(), message: e.to_string() })
}

/// Writes through a temporary sibling and renames, so readers never see a torn file.
fn write_atomic(path: &Path, contents: &str) -> Result<(), ServiceError> {
    let tmp = path.with_extension("json.tmp");
    let mut file = std::fs::File::create(&tmp).map_err(|e| ServiceError::io(&tmp, e))?;
    file.write_all(contents.as_bytes()).map_err(|e| ServiceError::io(&tmp, e))?;
    file.sync_all().map_err(|e| ServiceError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| ServiceError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transitions() {
        use SessionState::*;
        let order = [Created, Extracting, Tracing, Advising, Ready];
        for pair in order.windows(2) {
            assert!(pair[0].can_move_to(pair[1]));
            assert!(!pair[1].can_move_to(pair[0]));
        }
        for s in order {
            assert!(s.can_move_to(Error));
        }
        assert!(!Created.can_move_to(Ready));
        assert!(!Error.can_move_to(Created));
    }

    #[test]
    fn ids_are_hex_and_distinct() {
        let a = mint_session_id();
        let b = mint_session_id();
        assert!(is_session_id(&a) && is_session_id(&b));
        assert_ne!(a, b);
        assert!(!is_session_id("../etc"));
        assert!(!is_session_id(&a.to_uppercase()));
    }

    #[test]
    fn record_json_excludes_trace_and_queue() {
        let record = SessionRecord {
            session_id: mint_session_id(),
            state: SessionState::Ready,
            recording_path: "/tmp/x.mp4".into(),
            config: SamplingConfig::default(),
            sampling: None,
            trace: Some(ActionTrace::default()),
            queue: Some(SuggestionQueue::default()),
            timings: BTreeMap::new(),
            error_detail: None,
        };
        let v: serde_json::Value = serde_json::to_value(&record).unwrap();
        assert!(v.get("trace").is_none() && v.get("queue").is_none());
        assert_eq!(v["state"], "ready");
    }
}
