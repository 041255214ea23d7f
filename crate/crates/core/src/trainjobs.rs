//! External fine-tuning jobs.
//!
//! Training itself happens out of process. A job renders a user-supplied
//! command template with its hyperparameters, spawns it with combined
//! stdout/stderr appended to a log file, and tracks its lifecycle:
//!
//! ```text
//! Pending -> Running -> Completed | Failed(code) | Canceled
//! ```

use crate::datastore::{Record, Store, StoreError};
use crate::ids::short_hash;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};
use thiserror::Error;
use tracing::{info, warn};

/// Placeholders a command template may reference.
pub const PLACEHOLDERS: [&str; 7] = ["data", "model", "lr", "iters", "lora_layers", "batch", "out"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingParams {
    pub base_model: String,
    pub learning_rate: f64,
    pub iterations: u64,
    pub lora_layers: u32,
    pub batch_size: u32,
    pub adapter_output_dir: PathBuf,
}

impl TrainingParams {
    pub fn validate(&self) -> Result<(), JobError> {
        let bad = |m: &str| Err(JobError::InvalidParams(m.to_string()));
        if self.base_model.trim().is_empty() {
            return bad("base_model must not be empty");
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return bad("learning_rate must be positive");
        }
        if self.iterations == 0 {
            return bad("iterations must be positive");
        }
        if self.lora_layers == 0 {
            return bad("lora_layers must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.adapter_output_dir.as_os_str().is_empty() {
            return bad("adapter_output_dir must not be empty");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum JobState {
    Pending,
    Running,
    Completed,
    Failed { exit_code: i32 },
    Canceled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JobEvent {
    Start,
    Exit(i32),
    Cancel,
    /// The process vanished without us observing its exit.
    Lost,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("illegal job transition: {event:?} in state {from:?}")]
pub struct IllegalTransition {
    pub from: JobState,
    pub event: JobEvent,
}

impl JobState {
    pub fn is_terminal(&self) -> bool {
        matches!(
            self,
            JobState::Completed | JobState::Failed { .. } | JobState::Canceled
        )
    }

    pub fn apply(self, event: JobEvent) -> Result<JobState, IllegalTransition> {
        match (self, event) {
            (JobState::Pending, JobEvent::Start) => Ok(JobState::Running),
            (JobState::Running, JobEvent::Exit(0)) => Ok(JobState::Completed),
            (JobState::Running, JobEvent::Exit(code)) => Ok(JobState::Failed { exit_code: code }),
            (JobState::Running, JobEvent::Cancel) => Ok(JobState::Canceled),
            (JobState::Running, JobEvent::Lost) => Ok(JobState::Failed { exit_code: -1 }),
            (from, event) => Err(IllegalTransition { from, event }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingJob {
    pub job_id: String,
    pub dataset_export_dir: PathBuf,
    pub params: TrainingParams,
    pub command_template: String,
    #[serde(flatten)]
    pub state: JobState,
    pub log_path: PathBuf,
    #[serde(default)]
    pub pid: Option<u32>,
    pub created_at: DateTime<Utc>,
    #[serde(default)]
    pub started_at: Option<DateTime<Utc>>,
    #[serde(default)]
    pub ended_at: Option<DateTime<Utc>>,
}

impl Record for TrainingJob {
    const KIND: &'static str = "jobs";
    fn record_id(&self) -> &str {
        &self.job_id
    }
}

impl TrainingJob {
    fn transition(&mut self, event: JobEvent) -> Result<(), IllegalTransition> {
        self.state = self.state.apply(event)?;
        let now = Utc::now();
        match self.state {
            JobState::Running => self.started_at = Some(now),
            s if s.is_terminal() => self.ended_at = Some(now),
            _ => {}
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum JobError {
    #[error("unknown placeholder {{{0}}} in command template")]
    UnknownPlaceholder(String),
    #[error("command template is empty or has unbalanced quotes")]
    InvalidTemplate,
    #[error("dataset export directory {} does not exist", .0.display())]
    MissingExport(PathBuf),
    #[error("invalid training params: {0}")]
    InvalidParams(String),
    #[error("failed to start trainer '{program}': {source}")]
    SpawnError {
        program: String,
        #[source]
        source: std::io::Error,
    },
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("job '{0}' not found")]
    NotFound(String),
    #[error("job '{0}' is not running")]
    NotRunning(String),
    #[error(transparent)]
    Transition(#[from] IllegalTransition),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("i/o error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn substitute(token: &str, values: &HashMap<&str, String>) -> Result<String, JobError> {
    let mut out = String::new();
    let mut rest = token;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let Some(close) = after.find('}') else {
            out.push_str(&rest[open..]);
            return Ok(out);
        };
        let name = &after[..close];
        let value = values
            .get(name)
            .ok_or_else(|| JobError::UnknownPlaceholder(name.to_string()))?;
        out.push_str(value);
        rest = &after[close + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

/// Tokenize a template argv-style and substitute placeholders per token.
///
/// No shell is involved, so substituted values are never re-split or quoted.
pub fn render_template(
    template: &str,
    export_dir: &Path,
    params: &TrainingParams,
) -> Result<Vec<String>, JobError> {
    let tokens = shlex::split(template).ok_or(JobError::InvalidTemplate)?;
    if tokens.is_empty() {
        return Err(JobError::InvalidTemplate);
    }
    let values: HashMap<&str, String> = HashMap::from([
        ("data", export_dir.display().to_string()),
        ("model", params.base_model.clone()),
        ("lr", params.learning_rate.to_string()),
        ("iters", params.iterations.to_string()),
        ("lora_layers", params.lora_layers.to_string()),
        ("batch", params.batch_size.to_string()),
        ("out", params.adapter_output_dir.display().to_string()),
    ]);
    tokens.iter().map(|t| substitute(t, &values)).collect()
}

/// Render the argv for a job, checking that its export exists.
pub fn render_command(job: &TrainingJob) -> Result<Vec<String>, JobError> {
    let argv = render_template(&job.command_template, &job.dataset_export_dir, &job.params)?;
    if !job.dataset_export_dir.is_dir() {
        return Err(JobError::MissingExport(job.dataset_export_dir.clone()));
    }
    Ok(argv)
}

/// Whether a process with this pid currently exists.
pub fn process_alive(pid: u32) -> bool {
    if pid == 0 || pid > i32::MAX as u32 {
        return false;
    }
    #[cfg(unix)]
    {
        // SAFETY: signal 0 performs only the existence and permission check.
        let rc = unsafe { libc::kill(pid as libc::pid_t, 0) };
        rc == 0 || std::io::Error::last_os_error().raw_os_error() == Some(libc::EPERM)
    }
    #[cfg(not(unix))]
    {
        true
    }
}

fn terminate(pid: u32, force: bool) {
    #[cfg(unix)]
    {
        let sig = if force { libc::SIGKILL } else { libc::SIGTERM };
        // SAFETY: plain kill(2) on a pid we spawned and have not yet reaped.
        unsafe {
            libc::kill(pid as libc::pid_t, sig);
        }
    }
    #[cfg(not(unix))]
    {
        let _ = (pid, force);
    }
}

struct Active {
    pid: u32,
    output_dir: PathBuf,
    canceled: Arc<AtomicBool>,
}

struct Shared {
    store: Arc<Store>,
    active: Mutex<HashMap<String, Active>>,
    finished: Condvar,
}

/// Launches training processes and records their outcome.
pub struct JobSupervisor {
    shared: Arc<Shared>,
    max_concurrent: usize,
    logs_dir: PathBuf,
}

impl JobSupervisor {
    /// Create a supervisor and fail any job left `Running` by a dead process.
    pub fn new(store: Arc<Store>, max_concurrent: usize) -> Result<Self, JobError> {
        let logs_dir = store.root().join("logs");
        fs::create_dir_all(&logs_dir).map_err(|source| JobError::Io {
            path: logs_dir.clone(),
            source,
        })?;
        let sup = JobSupervisor {
            shared: Arc::new(Shared {
                store,
                active: Mutex::new(HashMap::new()),
                finished: Condvar::new(),
            }),
            max_concurrent: max_concurrent.max(1),
            logs_dir,
        };
        sup.recover()?;
        Ok(sup)
    }

    fn recover(&self) -> Result<(), JobError> {
        let store = &self.shared.store;
        for mut job in store.list::<TrainingJob>()? {
            if job.state == JobState::Running && !job.pid.is_some_and(process_alive) {
                warn!(job = %job.job_id, "marking orphaned running job as failed");
                job.transition(JobEvent::Lost)?;
                store.save(&job)?;
            }
        }
        Ok(())
    }

    /// Start a job. Returns once the process is running.
    pub fn launch(
        &self,
        export_dir: &Path,
        params: TrainingParams,
        command_template: &str,
    ) -> Result<TrainingJob, JobError> {
        params.validate()?;
        let store = &self.shared.store;
        let mut active = self.shared.active.lock().unwrap_or_else(|p| p.into_inner());
        if active.values().any(|a| a.output_dir == params.adapter_output_dir) {
            return Err(JobError::Conflict(format!(
                "a job is already writing to {}",
                params.adapter_output_dir.display()
            )));
        }
        if active.len() >= self.max_concurrent {
            return Err(JobError::Conflict(format!(
                "{} training job(s) already running",
                active.len()
            )));
        }

        let counter = store.write(|w| w.next_counter())?;
        let job_id = short_hash(&[&export_dir.display().to_string(), &counter.to_string()]);
        let mut job = TrainingJob {
            log_path: self.logs_dir.join(format!("{job_id}.log")),
            job_id,
            dataset_export_dir: export_dir.to_path_buf(),
            params,
            command_template: command_template.to_string(),
            state: JobState::Pending,
            pid: None,
            created_at: Utc::now(),
            started_at: None,
            ended_at: None,
        };
        let argv = render_command(&job)?;

        let io = |source| JobError::Io {
            path: job.log_path.clone(),
            source,
        };
        let mut log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&job.log_path)
            .map_err(io)?;
        writeln!(log, "# job {} argv: {:?}", job.job_id, argv).map_err(io)?;
        let stderr = log.try_clone().map_err(io)?;
        let mut child = Command::new(&argv[0])
            .args(&argv[1..])
            .stdin(Stdio::null())
            .stdout(Stdio::from(log))
            .stderr(Stdio::from(stderr))
            .spawn()
            .map_err(|source| JobError::SpawnError {
                program: argv[0].clone(),
                source,
            })?;

        let pid = child.id();
        job.pid = Some(pid);
        job.transition(JobEvent::Start)?;
        if let Err(e) = store.save(&job) {
            let _ = child.kill();
            let _ = child.wait();
            return Err(e.into());
        }
        let canceled = Arc::new(AtomicBool::new(false));
        active.insert(
            job.job_id.clone(),
            Active {
                pid,
                output_dir: job.params.adapter_output_dir.clone(),
                canceled: canceled.clone(),
            },
        );
        drop(active);
        info!(job = %job.job_id, pid, "training job started");

        let shared = self.shared.clone();
        let mut record = job.clone();
        std::thread::spawn(move || {
            let code = match child.wait() {
                Ok(status) => status.code().unwrap_or(-1),
                Err(_) => -1,
            };
            let event = if canceled.load(Ordering::SeqCst) {
                JobEvent::Cancel
            } else {
                JobEvent::Exit(code)
            };
            if record.transition(event).is_ok() {
                if let Err(e) = shared.store.save(&record) {
                    warn!(job = %record.job_id, error = %e, "failed to persist job outcome");
                }
            }
            info!(job = %record.job_id, state = ?record.state, "training job finished");
            let mut active = shared.active.lock().unwrap_or_else(|p| p.into_inner());
            active.remove(&record.job_id);
            shared.finished.notify_all();
        });
        Ok(job)
    }

    pub fn status(&self, job_id: &str) -> Result<TrainingJob, JobError> {
        self.shared
            .store
            .try_load(job_id)?
            .ok_or_else(|| JobError::NotFound(job_id.to_string()))
    }

    pub fn list(&self) -> Result<Vec<TrainingJob>, JobError> {
        Ok(self.shared.store.list()?)
    }

    pub fn is_active(&self, job_id: &str) -> bool {
        let active = self.shared.active.lock().unwrap_or_else(|p| p.into_inner());
        active.contains_key(job_id)
    }

    /// Block until the job leaves the active set or `timeout` elapses.
    pub fn wait(&self, job_id: &str, timeout: Duration) -> Result<TrainingJob, JobError> {
        let deadline = Instant::now() + timeout;
        let mut active = self.shared.active.lock().unwrap_or_else(|p| p.into_inner());
        while active.contains_key(job_id) {
            let now = Instant::now();
            if now >= deadline {
                break;
            }
            active = self
                .shared
                .finished
                .wait_timeout(active, deadline - now)
                .unwrap_or_else(|p| p.into_inner())
                .0;
        }
        drop(active);
        self.status(job_id)
    }

    /// Terminate a running job and wait for it to be recorded as canceled.
    pub fn cancel(&self, job_id: &str) -> Result<TrainingJob, JobError> {
        let pid = {
            let active = self.shared.active.lock().unwrap_or_else(|p| p.into_inner());
            match active.get(job_id) {
                Some(a) => {
                    a.canceled.store(true, Ordering::SeqCst);
                    a.pid
                }
                None => {
                    self.status(job_id)?;
                    return Err(JobError::NotRunning(job_id.to_string()));
                }
            }
        };
        terminate(pid, false);
        let job = self.wait(job_id, Duration::from_secs(5))?;
        if self.is_active(job_id) {
            terminate(pid, true);
            return self.wait(job_id, Duration::from_secs(5));
        }
        Ok(job)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(out: &str) -> TrainingParams {
        TrainingParams {
            base_model: "base".into(),
            learning_rate: 1e-5,
            iterations: 100,
            lora_layers: 8,
            batch_size: 4,
            adapter_output_dir: PathBuf::from(out),
        }
    }

    #[test]
    fn render_substitutes_per_token() {
        let argv = render_template("trainer --data {data} --lr {lr}", Path::new("/x/y"), &params("o")).unwrap();
        assert_eq!(argv, vec!["trainer", "--data", "/x/y", "--lr", "0.00001"]);
        let argv = render_template(
            "t --model={model} 'two words' {iters}/{lora_layers}/{batch} {out}",
            Path::new("/d"),
            &params("/adapters"),
        )
        .unwrap();
        assert_eq!(argv, vec!["t", "--model=base", "two words", "100/8/4", "/adapters"]);
    }

    #[test]
    fn render_values_are_not_resplit() {
        let argv = render_template("t {data}", Path::new("/dir with space"), &params("o")).unwrap();
        assert_eq!(argv, vec!["t", "/dir with space"]);
    }

    #[test]
    fn render_errors() {
        assert!(matches!(
            render_template("t {bogus}", Path::new("/d"), &params("o")),
            Err(JobError::UnknownPlaceholder(p)) if p == "bogus"
        ));
        assert!(render_template("trainer --lr {lr}", Path::new("/d"), &params("o")).is_ok());
        assert!(matches!(
            render_template("t 'unclosed", Path::new("/d"), &params("o")),
            Err(JobError::InvalidTemplate)
        ));
        assert!(matches!(render_template("  ", Path::new("/d"), &params("o")), Err(JobError::InvalidTemplate)));
    }

    #[test]
    fn params_validation() {
        let mut p = params("o");
        assert!(p.validate().is_ok());
        p.learning_rate = 0.0;
        assert!(p.validate().is_err());
        p.learning_rate = f64::NAN;
        assert!(p.validate().is_err());
    }

    #[test]
    fn state_serializes_flat() {
        let json = serde_json::to_value(JobState::Failed { exit_code: 3 }).unwrap();
        assert_eq!(json, serde_json::json!({"state": "failed", "exit_code": 3}));
    }

    fn event() -> impl Strategy<Value = JobEvent> {
        prop_oneof![
            Just(JobEvent::Start),
            Just(JobEvent::Cancel),
            Just(JobEvent::Lost),
            (-3i32..4).prop_map(JobEvent::Exit),
        ]
    }

    fn legal(from: JobState, to: JobState) -> bool {
        matches!(
            (from, to),
            (JobState::Pending, JobState::Running)
                | (JobState::Running, JobState::Completed)
                | (JobState::Running, JobState::Failed { .. })
                | (JobState::Running, JobState::Canceled)
        )
    }

    proptest! {
        #[test]
        fn state_machine_admits_only_listed_transitions(events in proptest::collection::vec(event(), 0..20)) {
            let mut state = JobState::Pending;
            for ev in events {
                match state.apply(ev) {
                    Ok(next) => {
                        prop_assert!(legal(state, next), "{:?} -> {:?}", state, next);
                        state = next;
                    }
                    Err(e) => prop_assert_eq!(e.from, state),
                }
            }
        }
    }

    #[test]
    fn dead_pid_is_not_alive() {
        assert!(process_alive(std::process::id()));
        assert!(!process_alive(0));
        assert!(!process_alive(99_999_999));
    }
}
