//! Durable jobs: a file-backed store and a pool of worker threads.
//!
//! A job moves `queued -> running -> completed | failed | cancelled`, or
//! straight from `queued` to `cancelled`. Every status write is a whole new
//! version of `status.json`; state changes are also appended to the job's
//! history. Workers claim a job under the store's write lock, so no job is
//! ever run twice. After a restart, jobs found `running` are failed with
//! code `interrupted` and `queued` jobs are picked up again.

mod store;

use std::collections::{HashSet, VecDeque};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};

pub use store::{now_ms, Claim, HistoryEntry, ImageMeta, JobStore};
use store::{append_line, write_atomic, write_json};

use crate::export::{render_csvs, write_visuals};
use crate::infer::FixtureBackend;
use crate::pipeline::{self, ErrorInfo, ImageInput, ImageResult, PipelineId, PipelineParams};
use crate::Warning;

#[derive(Debug, thiserror::Error)]
pub enum JobError {
    #[error("unknown pipeline {0:?}")]
    UnknownPipeline(String),
    #[error("unknown image {0:?}")]
    UnknownImage(String),
    #[error("{0}")]
    InvalidParams(String),
    #[error("{0}")]
    CalibrationRequired(String),
    #[error("single mode takes exactly one image, got {0}")]
    SingleModeOneImage(usize),
    #[error("unknown job {0:?}")]
    UnknownJob(String),
    #[error("job {0} has not finished")]
    NotFinished(String),
    #[error("job {0} finished without completing")]
    NotCompleted(String),
    #[error("only PNG and JPEG images are accepted")]
    UnsupportedMediaType,
    #[error("the job manager is shutting down")]
    ShuttingDown,
    #[error("illegal transition {from} -> {to}")]
    IllegalTransition { from: JobState, to: JobState },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("corrupt document {path}: {detail}")]
    Corrupt { path: String, detail: String },
}

impl JobError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::UnknownPipeline(_) => "unknown_pipeline",
            Self::UnknownImage(_) => "unknown_image",
            Self::InvalidParams(_) => "invalid_params",
            Self::CalibrationRequired(_) => "calibration_required",
            Self::SingleModeOneImage(_) => "single_mode_one_image",
            Self::UnknownJob(_) => "unknown_job",
            Self::NotFinished(_) => "job_not_finished",
            Self::NotCompleted(_) => "job_not_completed",
            Self::UnsupportedMediaType => "unsupported_media_type",
            Self::ShuttingDown => "shutting_down",
            Self::IllegalTransition { .. } | Self::Io { .. } | Self::Corrupt { .. } => "internal",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Completed,
    Failed,
    Cancelled,
}

impl JobState {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Queued => "queued",
            Self::Running => "running",
            Self::Completed => "completed",
            Self::Failed => "failed",
            Self::Cancelled => "cancelled",
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, Self::Completed | Self::Failed | Self::Cancelled)
    }

    /// Whether a job may move from `self` to `to`. Staying put is allowed
    /// only while running (progress updates).
    pub fn can_become(self, to: JobState) -> bool {
        use JobState::*;
        matches!(
            (self, to),
            (Queued, Running) | (Queued, Cancelled) | (Running, Running | Completed | Failed | Cancelled)
        )
    }
}

impl std::fmt::Display for JobState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobMode {
    #[default]
    Bulk,
    Single,
}

/// A submission as it arrives. `params` stays untyped here so that a bad
/// parameter is reported as such rather than as a malformed request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobSpec {
    pub pipeline_id: String,
    pub image_ids: Vec<String>,
    #[serde(default)]
    pub params: serde_json::Value,
    #[serde(default)]
    pub backend_ref: Option<String>,
    /// Only the gateway looks at this: `single` runs on the request.
    #[serde(default)]
    pub mode: JobMode,
}

impl JobSpec {
    pub fn new(pipeline: PipelineId, image_ids: &[&str]) -> Self {
        Self {
            pipeline_id: pipeline.as_str().into(),
            image_ids: image_ids.iter().map(|s| s.to_string()).collect(),
            params: serde_json::Value::Null,
            backend_ref: None,
            mode: JobMode::Bulk,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub done: usize,
    pub failed: usize,
    pub total: usize,
}

/// A validated submission, as stored in `manifest.json` and echoed in
/// every status.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobDefinition {
    pub pipeline_id: PipelineId,
    pub mode: JobMode,
    pub image_ids: Vec<String>,
    pub params: PipelineParams,
    pub backend_ref: String,
}

/// Where a job's outputs live, relative to its directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultPaths {
    pub results: String,
    pub results_csv: String,
    pub summary_csv: Option<String>,
    pub overlays: String,
    pub crops: String,
}

/// The content of `status.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub job_id: String,
    pub spec: JobDefinition,
    pub state: JobState,
    pub progress: Progress,
    pub version: u64,
    pub submitted_at_ms: u64,
    pub started_at_ms: Option<u64>,
    pub finished_at_ms: Option<u64>,
    pub error: Option<ErrorInfo>,
    pub result_paths: Option<ResultPaths>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobManifest {
    pub job_id: String,
    pub submitted_at_ms: u64,
    pub spec: JobDefinition,
}

impl JobRecord {
    pub fn manifest(&self) -> JobManifest {
        JobManifest {
            job_id: self.job_id.clone(),
            submitted_at_ms: self.submitted_at_ms,
            spec: self.spec.clone(),
        }
    }
}

/// One image's entry in `results.json`.
#[derive(Debug, Clone, Serialize)]
pub struct JobImageResult {
    pub image_id: String,
    #[serde(flatten)]
    pub result: ImageResult,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Aggregate {
    pub images_total: usize,
    pub images_ok: usize,
    pub images_failed: usize,
    pub images_not_run: usize,
    pub warnings: usize,
}

/// The content of `results.json`. Images appear in submission order;
/// images never started (after a cancel) are left out.
#[derive(Debug, Clone, Serialize)]
pub struct JobResults {
    pub job_id: String,
    pub pipeline_id: PipelineId,
    pub images: Vec<JobImageResult>,
    pub aggregate: Aggregate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResultFile {
    Json,
    Csv,
    SummaryCsv,
}

impl ResultFile {
    pub fn file_name(self) -> &'static str {
        match self {
            Self::Json => "results.json",
            Self::Csv => "results.csv",
            Self::SummaryCsv => "summary.csv",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HookAction {
    Proceed,
    /// Abandon the job on the spot, writing nothing more: what a killed
    /// process would leave behind.
    Crash,
}

/// Called with the job id and image index before each image starts.
pub type ImageHook = Arc<dyn Fn(&str, usize) -> HookAction + Send + Sync>;

#[derive(Clone)]
pub struct ManagerConfig {
    /// Worker threads; with none, jobs are only queued.
    pub workers: usize,
    /// Images of one job processed at the same time.
    pub per_job_concurrency: usize,
    /// Fixture directory for jobs that name none.
    pub default_backend: Option<PathBuf>,
    pub image_hook: Option<ImageHook>,
}

impl Default for ManagerConfig {
    fn default() -> Self {
        Self {
            workers: 2,
            per_job_concurrency: 2,
            default_backend: None,
            image_hook: None,
        }
    }
}

impl std::fmt::Debug for ManagerConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ManagerConfig")
            .field("workers", &self.workers)
            .field("per_job_concurrency", &self.per_job_concurrency)
            .field("default_backend", &self.default_backend)
            .field("image_hook", &self.image_hook.is_some())
            .finish()
    }
}

#[derive(Default)]
struct Queue {
    ids: VecDeque<String>,
    closed: bool,
}

struct Shared {
    store: JobStore,
    config: ManagerConfig,
    queue: Mutex<Queue>,
    ready: Condvar,
    write: Mutex<()>,
    cancels: Mutex<HashSet<String>>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

pub struct JobManager {
    shared: Arc<Shared>,
    workers: Vec<JoinHandle<()>>,
}

impl JobManager {
    /// Recover whatever a previous process left behind, then start the
    /// workers.
    pub fn start(store: JobStore, config: ManagerConfig) -> Result<Self, JobError> {
        let shared = Arc::new(Shared {
            store,
            config,
            queue: Mutex::new(Queue::default()),
            ready: Condvar::new(),
            write: Mutex::new(()),
            cancels: Mutex::new(HashSet::new()),
        });
        for rec in shared.store.list()? {
            match rec.state {
                JobState::Running => {
                    shared.transition(&rec.job_id, |r| {
                        r.state = JobState::Failed;
                        r.finished_at_ms = Some(now_ms());
                        r.error = Some(ErrorInfo {
                            code: "interrupted".into(),
                            message: "the service stopped while the job was running".into(),
                        });
                        Ok(())
                    })?;
                }
                JobState::Queued if rec.spec.mode == JobMode::Bulk => lock(&shared.queue).ids.push_back(rec.job_id),
                JobState::Queued => {
                    shared.transition(&rec.job_id, |r| {
                        r.state = JobState::Cancelled;
                        r.finished_at_ms = Some(now_ms());
                        Ok(())
                    })?;
                }
                _ => {}
            }
        }
        let workers = (0..shared.config.workers)
            .map(|w| {
                let s = Arc::clone(&shared);
                std::thread::Builder::new()
                    .name(format!("job-worker-{w}"))
                    .spawn(move || s.worker_loop(w))
                    .expect("spawn worker")
            })
            .collect();
        Ok(Self { shared, workers })
    }

    pub fn store(&self) -> &JobStore {
        &self.shared.store
    }

    pub fn config(&self) -> &ManagerConfig {
        &self.shared.config
    }

    /// Persist a job as `queued` and hand it to the workers. The job is on
    /// disk before this returns.
    pub fn submit(&self, spec: JobSpec) -> Result<JobRecord, JobError> {
        if lock(&self.shared.queue).closed {
            return Err(JobError::ShuttingDown);
        }
        let rec = self.shared.resolve(spec, JobMode::Bulk)?;
        {
            let _w = lock(&self.shared.write);
            self.shared.store.create(&rec)?;
        }
        let mut q = lock(&self.shared.queue);
        q.ids.push_back(rec.job_id.clone());
        self.shared.ready.notify_one();
        Ok(rec)
    }

    /// Run a one-image job on the calling thread and return its final
    /// record. It is stored like any other job.
    pub fn run_single(&self, spec: JobSpec) -> Result<JobRecord, JobError> {
        if spec.image_ids.len() != 1 {
            return Err(JobError::SingleModeOneImage(spec.image_ids.len()));
        }
        let rec = self.shared.resolve(spec, JobMode::Single)?;
        {
            let _w = lock(&self.shared.write);
            self.shared.store.create(&rec)?;
        }
        if let Some(rec) = self.shared.claim(&rec.job_id, "single")? {
            self.shared.execute(rec);
        }
        self.status(&rec.job_id)
    }

    pub fn status(&self, job_id: &str) -> Result<JobRecord, JobError> {
        self.shared.store.load(job_id)
    }

    /// Cancel a job. Queued jobs are cancelled at once; running jobs stop
    /// before their next image. Finished jobs are left alone.
    pub fn cancel(&self, job_id: &str) -> Result<JobRecord, JobError> {
        let _w = lock(&self.shared.write);
        let mut rec = self.shared.store.load(job_id)?;
        match rec.state {
            JobState::Queued => {
                rec.state = JobState::Cancelled;
                rec.finished_at_ms = Some(now_ms());
                rec.version += 1;
                self.shared.store.save(&rec, Some(JobState::Queued))?;
                lock(&self.shared.queue).ids.retain(|id| id != job_id);
            }
            JobState::Running => {
                lock(&self.shared.cancels).insert(job_id.to_owned());
            }
            _ => {}
        }
        Ok(rec)
    }

    /// Path of a result document of a completed job.
    pub fn result_path(&self, job_id: &str, which: ResultFile) -> Result<PathBuf, JobError> {
        let rec = self.completed(job_id)?;
        let path = self.shared.store.job_dir(&rec.job_id).join(which.file_name());
        if !path.exists() {
            return Err(JobError::UnknownJob(job_id.to_owned()));
        }
        Ok(path)
    }

    pub fn overlay_path(&self, job_id: &str, image_id: &str) -> Result<PathBuf, JobError> {
        let rec = self.completed(job_id)?;
        if !rec.spec.image_ids.iter().any(|i| i == image_id) {
            return Err(JobError::UnknownImage(image_id.to_owned()));
        }
        let path = self
            .shared
            .store
            .job_dir(job_id)
            .join("overlays")
            .join(format!("{image_id}.png"));
        if !path.exists() {
            return Err(JobError::UnknownImage(image_id.to_owned()));
        }
        Ok(path)
    }

    fn completed(&self, job_id: &str) -> Result<JobRecord, JobError> {
        let rec = self.status(job_id)?;
        match rec.state {
            JobState::Completed => Ok(rec),
            JobState::Queued | JobState::Running => Err(JobError::NotFinished(job_id.into())),
            _ => Err(JobError::NotCompleted(job_id.into())),
        }
    }

    /// Stop taking jobs, let running ones finish, and join the workers.
    /// Jobs still queued stay queued on disk.
    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        lock(&self.shared.queue).closed = true;
        self.shared.ready.notify_all();
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for JobManager {
    fn drop(&mut self) {
        self.stop();
    }
}

impl Shared {
    fn resolve(&self, spec: JobSpec, mode: JobMode) -> Result<JobRecord, JobError> {
        let pipeline: PipelineId = spec
            .pipeline_id
            .parse()
            .map_err(|_| JobError::UnknownPipeline(spec.pipeline_id.clone()))?;
        if spec.image_ids.is_empty() {
            return Err(JobError::InvalidParams("a job needs at least one image".into()));
        }
        let mut seen = HashSet::new();
        for id in &spec.image_ids {
            if !seen.insert(id.as_str()) {
                return Err(JobError::InvalidParams(format!("image {id} is listed twice")));
            }
            self.store.image(id)?;
        }
        let params: PipelineParams = match spec.params {
            serde_json::Value::Null => PipelineParams::default(),
            v => serde_json::from_value(v).map_err(|e| JobError::InvalidParams(e.to_string()))?,
        };
        params.validate(pipeline).map_err(|e| match e {
            pipeline::ParamError::Invalid(m) => JobError::InvalidParams(m),
            pipeline::ParamError::CalibrationRequired(m) => JobError::CalibrationRequired(m),
        })?;
        let backend_ref = match (spec.backend_ref, &self.config.default_backend) {
            (Some(b), _) => b,
            (None, Some(d)) => d.display().to_string(),
            (None, None) => return Err(JobError::InvalidParams("no backend_ref given and no default backend".into())),
        };
        let total = spec.image_ids.len();
        Ok(JobRecord {
            job_id: uuid::Uuid::new_v4().to_string(),
            spec: JobDefinition {
                pipeline_id: pipeline,
                mode,
                image_ids: spec.image_ids,
                params,
                backend_ref,
            },
            state: JobState::Queued,
            progress: Progress {
                total,
                ..Progress::default()
            },
            version: 1,
            submitted_at_ms: now_ms(),
            started_at_ms: None,
            finished_at_ms: None,
            error: None,
            result_paths: None,
        })
    }

    /// Load, modify and save a job under the write lock, refusing illegal
    /// state changes.
    fn transition(
        &self,
        job_id: &str,
        f: impl FnOnce(&mut JobRecord) -> Result<(), JobError>,
    ) -> Result<JobRecord, JobError> {
        let _w = lock(&self.write);
        let mut rec = self.store.load(job_id)?;
        let from = rec.state;
        f(&mut rec)?;
        if !from.can_become(rec.state) {
            return Err(JobError::IllegalTransition { from, to: rec.state });
        }
        rec.version += 1;
        self.store.save(&rec, Some(from))?;
        Ok(rec)
    }

    /// Move a queued job to running and log the claim. `None` when the job
    /// is no longer queued, e.g. cancelled while waiting.
    fn claim(&self, job_id: &str, worker: &str) -> Result<Option<JobRecord>, JobError> {
        let _w = lock(&self.write);
        let mut rec = self.store.load(job_id)?;
        if rec.state != JobState::Queued {
            return Ok(None);
        }
        rec.state = JobState::Running;
        rec.started_at_ms = Some(now_ms());
        rec.version += 1;
        append_line(
            &self.store.claims_path(),
            &Claim {
                job_id: job_id.to_owned(),
                worker: worker.to_owned(),
                at_ms: now_ms(),
            },
        )?;
        self.store.save(&rec, Some(JobState::Queued))?;
        Ok(Some(rec))
    }

    fn worker_loop(&self, w: usize) {
        let name = format!("w{w}");
        loop {
            let id = {
                let mut q = lock(&self.queue);
                loop {
                    if q.closed {
                        return;
                    }
                    if let Some(id) = q.ids.pop_front() {
                        break id;
                    }
                    q = self.ready.wait(q).unwrap_or_else(|p| p.into_inner());
                }
            };
            match self.claim(&id, &name) {
                Ok(Some(rec)) => self.execute(rec),
                Ok(None) => {}
                Err(e) => tracing::error!(job = %id, error = %e, "claim failed"),
            }
        }
    }

    fn execute(&self, rec: JobRecord) {
        let id = rec.job_id.clone();
        let outcome = catch_unwind(AssertUnwindSafe(|| self.run_job(&rec)));
        let failure = match outcome {
            Ok(Ok(())) => None,
            Ok(Err(e)) => Some(ErrorInfo {
                code: e.code().into(),
                message: e.to_string(),
            }),
            Err(_) => Some(ErrorInfo {
                code: "internal".into(),
                message: "the job panicked".into(),
            }),
        };
        if let Some(err) = failure {
            let r = self.transition(&id, |r| {
                r.state = JobState::Failed;
                r.finished_at_ms = Some(now_ms());
                r.error = Some(err);
                Ok(())
            });
            if let Err(e) = r {
                tracing::error!(job = %id, error = %e, "could not record failure");
            }
        }
        lock(&self.cancels).remove(&id);
    }

    fn run_job(&self, rec: &JobRecord) -> Result<(), JobError> {
        let metas = rec
            .spec
            .image_ids
            .iter()
            .map(|i| self.store.image(i))
            .collect::<Result<Vec<_>, _>>()?;
        let inputs: Vec<ImageInput> = metas
            .iter()
            .map(|m| ImageInput::new(&m.filename, Some(self.store.image_file(m))))
            .collect();
        let backend = match FixtureBackend::open(&rec.spec.backend_ref) {
            Ok(b) => b,
            Err(e) => {
                self.finish(rec, JobState::Failed, Some(("backend_unavailable", e.to_string())))?;
                return Ok(());
            }
        };
        let crashed = AtomicBool::new(false);
        let should_stop = |i: usize| {
            if crashed.load(Ordering::SeqCst) {
                return true;
            }
            if let Some(hook) = &self.config.image_hook {
                if hook(&rec.job_id, i) == HookAction::Crash {
                    crashed.store(true, Ordering::SeqCst);
                    return true;
                }
            }
            lock(&self.cancels).contains(&rec.job_id)
        };
        let on_done = |_: usize, r: &ImageResult| {
            let ok = r.is_ok();
            let res = self.transition(&rec.job_id, |j| {
                j.progress.done += 1;
                if !ok {
                    j.progress.failed += 1;
                }
                Ok(())
            });
            if let Err(e) = res {
                tracing::error!(job = %rec.job_id, error = %e, "progress update failed");
            }
        };
        let slots = pipeline::run_batch(
            rec.spec.pipeline_id,
            &inputs,
            &backend,
            &rec.spec.params,
            self.config.per_job_concurrency,
            &should_stop,
            &on_done,
        );
        if crashed.load(Ordering::SeqCst) {
            return Ok(());
        }
        let cancelled = lock(&self.cancels).contains(&rec.job_id);
        let images = self.write_outputs(rec, &metas, slots)?;
        let ok = images.iter().filter(|i| i.result.is_ok()).count();
        if cancelled {
            self.finish(rec, JobState::Cancelled, None)
        } else if ok == 0 {
            self.finish(
                rec,
                JobState::Failed,
                Some(("all_images_failed", "no image could be processed".into())),
            )
        } else {
            self.finish(rec, JobState::Completed, None)
        }
    }

    fn finish(&self, rec: &JobRecord, state: JobState, error: Option<(&str, String)>) -> Result<(), JobError> {
        self.transition(&rec.job_id, |r| {
            r.state = state;
            r.finished_at_ms = Some(now_ms());
            r.error = error.map(|(code, message)| ErrorInfo {
                code: code.into(),
                message,
            });
            Ok(())
        })
        .map(|_| ())
    }

    /// Overlays, crops, tables and `results.json`, in that order, so the
    /// document records any overlay trouble as a warning.
    fn write_outputs(
        &self,
        rec: &JobRecord,
        metas: &[ImageMeta],
        slots: Vec<Option<ImageResult>>,
    ) -> Result<Vec<JobImageResult>, JobError> {
        let dir = self.store.job_dir(&rec.job_id);
        let overlays = dir.join("overlays");
        let crops = dir.join("crops");
        let mut images = Vec::new();
        for (meta, slot) in metas.iter().zip(slots) {
            let Some(mut result) = slot else { continue };
            if let Some(dets) = result.detections.as_ref().filter(|_| result.is_ok()) {
                let drawn = write_visuals(
                    &self.store.image_file(meta),
                    dets,
                    &result.crop_indices,
                    rec.spec.params.crop_padding,
                    &overlays.join(format!("{}.png", meta.image_id)),
                    &crops,
                    &meta.image_id,
                );
                if let Err(e) = drawn {
                    result.warnings.push(Warning::new("overlay_failed", e.to_string()));
                }
            }
            images.push(JobImageResult {
                image_id: meta.image_id.clone(),
                result,
            });
        }
        let refs: Vec<&ImageResult> = images.iter().map(|i| &i.result).collect();
        let tables = render_csvs(rec.spec.pipeline_id, &refs).map_err(|e| JobError::Corrupt {
            path: dir.display().to_string(),
            detail: e.to_string(),
        })?;
        write_atomic(&dir.join(ResultFile::Csv.file_name()), tables.main.as_bytes())?;
        if let Some(s) = &tables.summary {
            write_atomic(&dir.join(ResultFile::SummaryCsv.file_name()), s.as_bytes())?;
        }
        let ok = images.iter().filter(|i| i.result.is_ok()).count();
        let doc = JobResults {
            job_id: rec.job_id.clone(),
            pipeline_id: rec.spec.pipeline_id,
            aggregate: Aggregate {
                images_total: metas.len(),
                images_ok: ok,
                images_failed: images.len() - ok,
                images_not_run: metas.len() - images.len(),
                warnings: images.iter().map(|i| i.result.warnings.len()).sum(),
            },
            images,
        };
        write_json(&dir.join(ResultFile::Json.file_name()), &doc)?;
        let paths = ResultPaths {
            results: ResultFile::Json.file_name().into(),
            results_csv: ResultFile::Csv.file_name().into(),
            summary_csv: tables.summary.as_ref().map(|_| ResultFile::SummaryCsv.file_name().into()),
            overlays: "overlays".into(),
            crops: "crops".into(),
        };
        self.transition(&rec.job_id, |r| {
            r.result_paths = Some(paths);
            Ok(())
        })?;
        Ok(doc.images)
    }
}
