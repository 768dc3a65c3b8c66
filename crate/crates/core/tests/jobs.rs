use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use wheatai::jobs::{HookAction, JobManager, JobRecord, JobSpec, JobState, JobStore, ManagerConfig, ResultFile};
use wheatai::pipeline::PipelineId;
use wheatai::synth::{demo_dataset, demo_params, write_demo_dataset};

struct Demo {
    _tmp: tempfile::TempDir,
    data: PathBuf,
    demo: PathBuf,
}

fn demo() -> Demo {
    let tmp = tempfile::tempdir().unwrap();
    let demo = tmp.path().join("demo");
    write_demo_dataset(&demo).unwrap();
    Demo {
        data: tmp.path().join("data"),
        demo,
        _tmp: tmp,
    }
}

fn upload(store: &JobStore, demo: &Path, p: PipelineId) -> Vec<String> {
    demo_dataset(p)
        .iter()
        .map(|s| {
            let bytes = std::fs::read(demo.join(p.as_str()).join("images").join(s.name())).unwrap();
            store.put_image(&bytes, s.name()).unwrap().image_id
        })
        .collect()
}

fn spec(d: &Demo, p: PipelineId, ids: &[String]) -> JobSpec {
    let mut s = JobSpec::new(p, &ids.iter().map(String::as_str).collect::<Vec<_>>());
    s.params = serde_json::to_value(demo_params(p)).unwrap();
    s.backend_ref = Some(d.demo.join(p.as_str()).join("preds").display().to_string());
    s
}

fn config(workers: usize, per_job: usize) -> ManagerConfig {
    ManagerConfig {
        workers,
        per_job_concurrency: per_job,
        ..ManagerConfig::default()
    }
}

fn wait(mgr: &JobManager, id: &str) -> JobRecord {
    let start = Instant::now();
    loop {
        let r = mgr.status(id).unwrap();
        if r.state.is_terminal() {
            return r;
        }
        assert!(start.elapsed() < Duration::from_secs(60), "job {id} stuck in {}", r.state);
        std::thread::sleep(Duration::from_millis(10));
    }
}

fn results(mgr: &JobManager, id: &str) -> serde_json::Value {
    let path = mgr.result_path(id, ResultFile::Json).unwrap();
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn assert_legal_history(store: &JobStore, id: &str) {
    let h = store.history(id).unwrap();
    assert_eq!(h[0].state, JobState::Queued);
    for w in h.windows(2) {
        assert!(w[0].state.can_become(w[1].state), "{} -> {}", w[0].state, w[1].state);
        assert!(w[0].version < w[1].version);
    }
}

#[test]
fn completes_with_three_entries() {
    let d = demo();
    let mgr = JobManager::start(JobStore::open(&d.data).unwrap(), config(2, 2)).unwrap();
    let ids = upload(mgr.store(), &d.demo, PipelineId::Fdk);
    let queued = mgr.submit(spec(&d, PipelineId::Fdk, &ids)).unwrap();
    assert_eq!((queued.progress.done, queued.progress.total), (0, 3));
    let done = wait(&mgr, &queued.job_id);
    assert_eq!(done.state, JobState::Completed);
    assert_eq!((done.progress.done, done.progress.total), (3, 3));
    assert!(done.result_paths.is_some());
    let r = results(&mgr, &queued.job_id);
    let images = r["images"].as_array().unwrap();
    let got: Vec<&str> = images.iter().map(|i| i["image_id"].as_str().unwrap()).collect();
    assert_eq!(got, ids.iter().map(String::as_str).collect::<Vec<_>>());
    for id in &ids {
        assert!(mgr.overlay_path(&queued.job_id, id).unwrap().exists());
    }
    assert_legal_history(mgr.store(), &queued.job_id);
}

#[test]
fn one_missing_prediction_still_completes() {
    let d = demo();
    let store = JobStore::open(&d.data).unwrap();
    let mut ids = upload(&store, &d.demo, PipelineId::Spike);
    let stray = image::RgbImage::from_pixel(32, 32, image::Rgb([1, 2, 3]));
    let mut png = std::io::Cursor::new(Vec::new());
    stray.write_to(&mut png, image::ImageFormat::Png).unwrap();
    ids[1] = store.put_image(png.get_ref(), "nopred_1.png").unwrap().image_id;
    let mgr = JobManager::start(store, config(1, 1)).unwrap();
    let rec = wait(&mgr, &mgr.submit(spec(&d, PipelineId::Spike, &ids)).unwrap().job_id);
    assert_eq!(rec.state, JobState::Completed);
    assert_eq!(rec.progress.failed, 1);
    let r = results(&mgr, &rec.job_id);
    let statuses: Vec<&str> = r["images"].as_array().unwrap().iter().map(|i| i["status"].as_str().unwrap()).collect();
    assert_eq!(statuses, ["ok", "failed", "ok"]);
    assert_eq!(r["images"][1]["error"]["code"], "missing_prediction");
    let csv = std::fs::read_to_string(mgr.result_path(&rec.job_id, ResultFile::Csv).unwrap()).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn all_images_failing_fails_the_job() {
    let d = demo();
    let store = JobStore::open(&d.data).unwrap();
    let ids = upload(&store, &d.demo, PipelineId::Spike);
    let mgr = JobManager::start(store, config(1, 1)).unwrap();
    // the fdk predictions know nothing of the spike images
    let mut s = spec(&d, PipelineId::Spike, &ids);
    s.backend_ref = Some(d.demo.join("fdk").join("preds").display().to_string());
    let rec = wait(&mgr, &mgr.submit(s).unwrap().job_id);
    assert_eq!(rec.state, JobState::Failed);
    assert_eq!(rec.error.unwrap().code, "all_images_failed");
    assert_eq!(mgr.result_path(&rec.job_id, ResultFile::Csv).unwrap_err().code(), "job_not_completed");
}

#[test]
fn submit_rejections() {
    let d = demo();
    let mgr = JobManager::start(JobStore::open(&d.data).unwrap(), config(0, 1)).unwrap();
    let ids = upload(mgr.store(), &d.demo, PipelineId::Fdk);
    let mut s = spec(&d, PipelineId::Fdk, &ids);
    s.image_ids.push(ids[0].clone());
    assert_eq!(mgr.submit(s).unwrap_err().code(), "invalid_params");
    let mut s = spec(&d, PipelineId::Fdk, &ids);
    s.pipeline_id = "frost".into();
    assert_eq!(mgr.submit(s).unwrap_err().code(), "unknown_pipeline");
    let mut s = spec(&d, PipelineId::Fdk, &ids);
    s.params = serde_json::json!({"conf_thresh": 1.5});
    assert_eq!(mgr.submit(s).unwrap_err().code(), "invalid_params");
    let mut s = spec(&d, PipelineId::KernelMorph, &ids);
    s.params = serde_json::json!({});
    assert_eq!(mgr.submit(s).unwrap_err().code(), "calibration_required");
}

#[test]
fn cancel_queued_never_runs() {
    let d = demo();
    let data = d.data.clone();
    let id;
    {
        let mgr = JobManager::start(JobStore::open(&data).unwrap(), config(0, 1)).unwrap();
        let ids = upload(mgr.store(), &d.demo, PipelineId::Fdk);
        id = mgr.submit(spec(&d, PipelineId::Fdk, &ids)).unwrap().job_id;
        let c = mgr.cancel(&id).unwrap();
        assert_eq!(c.state, JobState::Cancelled);
    }
    let mgr = JobManager::start(JobStore::open(&data).unwrap(), config(2, 1)).unwrap();
    std::thread::sleep(Duration::from_millis(100));
    assert_eq!(mgr.status(&id).unwrap().state, JobState::Cancelled);
    assert!(mgr.store().claims().unwrap().iter().all(|c| c.job_id != id));
    assert_legal_history(mgr.store(), &id);
}

#[test]
fn cancel_running_keeps_finished_images() {
    let d = demo();
    let (at_boundary, reached) = mpsc::channel::<()>();
    let (go, release) = mpsc::channel::<()>();
    let release = Mutex::new(release);
    let at_boundary = Mutex::new(at_boundary);
    let hook = Arc::new(move |_: &str, i: usize| {
        if i == 1 {
            at_boundary.lock().unwrap().send(()).unwrap();
            release.lock().unwrap().recv().unwrap();
        }
        HookAction::Proceed
    });
    let mgr = JobManager::start(
        JobStore::open(&d.data).unwrap(),
        ManagerConfig {
            image_hook: Some(hook),
            ..config(1, 1)
        },
    )
    .unwrap();
    let ids = upload(mgr.store(), &d.demo, PipelineId::Fdk);
    let id = mgr.submit(spec(&d, PipelineId::Fdk, &ids)).unwrap().job_id;
    reached.recv_timeout(Duration::from_secs(30)).unwrap();
    let mid = mgr.status(&id).unwrap();
    assert_eq!(mid.state, JobState::Running);
    assert_eq!((mid.progress.done, mid.progress.total), (1, 3));
    mgr.cancel(&id).unwrap();
    go.send(()).unwrap();
    let rec = wait(&mgr, &id);
    assert_eq!(rec.state, JobState::Cancelled);
    assert_eq!(rec.progress.done, 1);
    let doc: serde_json::Value = serde_json::from_slice(
        &std::fs::read(mgr.store().job_dir(&id).join("results.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(doc["images"].as_array().unwrap().len(), 1);
    assert_eq!(doc["aggregate"]["images_not_run"], 2);
    // cancelling something finished changes nothing
    assert_eq!(mgr.cancel(&id).unwrap().state, JobState::Cancelled);
}

#[test]
fn restart_mid_job_is_interrupted_not_rerun() {
    let d = demo();
    let hook = Arc::new(|_: &str, i: usize| if i == 1 { HookAction::Crash } else { HookAction::Proceed });
    let id;
    {
        let mgr = JobManager::start(
            JobStore::open(&d.data).unwrap(),
            ManagerConfig {
                image_hook: Some(hook),
                ..config(1, 1)
            },
        )
        .unwrap();
        let ids = upload(mgr.store(), &d.demo, PipelineId::Fdk);
        id = mgr.submit(spec(&d, PipelineId::Fdk, &ids)).unwrap().job_id;
        let start = Instant::now();
        while mgr.status(&id).unwrap().progress.done < 1 {
            assert!(start.elapsed() < Duration::from_secs(30));
            std::thread::sleep(Duration::from_millis(5));
        }
    }
    let store = JobStore::open(&d.data).unwrap();
    assert_eq!(store.load(&id).unwrap().state, JobState::Running);
    let mgr = JobManager::start(store, config(2, 1)).unwrap();
    let rec = mgr.status(&id).unwrap();
    assert_eq!(rec.state, JobState::Failed);
    assert_eq!(rec.error.unwrap().code, "interrupted");
    std::thread::sleep(Duration::from_millis(100));
    assert_eq!(mgr.store().claims().unwrap().iter().filter(|c| c.job_id == id).count(), 1);
    assert_legal_history(mgr.store(), &id);
}

#[test]
fn queued_job_survives_restart() {
    let d = demo();
    let id;
    {
        let mgr = JobManager::start(JobStore::open(&d.data).unwrap(), config(0, 1)).unwrap();
        let ids = upload(mgr.store(), &d.demo, PipelineId::Stomata);
        id = mgr.submit(spec(&d, PipelineId::Stomata, &ids)).unwrap().job_id;
    }
    let mgr = JobManager::start(JobStore::open(&d.data).unwrap(), config(1, 1)).unwrap();
    assert_eq!(wait(&mgr, &id).state, JobState::Completed);
}

#[test]
fn ten_jobs_four_workers() {
    let d = demo();
    let mgr = Arc::new(JobManager::start(JobStore::open(&d.data).unwrap(), config(4, 2)).unwrap());
    let mut uploads = HashMap::new();
    for p in PipelineId::ALL {
        uploads.insert(p, upload(mgr.store(), &d.demo, p));
    }
    let plan: Vec<PipelineId> = PipelineId::ALL.iter().cycle().take(10).copied().collect();
    let handles: Vec<_> = plan
        .iter()
        .map(|&p| {
            let mgr = Arc::clone(&mgr);
            let s = spec(&d, p, &uploads[&p]);
            std::thread::spawn(move || mgr.submit(s).unwrap().job_id)
        })
        .collect();
    let ids: Vec<String> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    let mut csv_by_pipeline: HashMap<PipelineId, Vec<u8>> = HashMap::new();
    for (id, p) in ids.iter().zip(&plan) {
        let rec = wait(&mgr, id);
        assert_eq!(rec.state, JobState::Completed, "{p}: {:?}", rec.error);
        assert_legal_history(mgr.store(), id);
        let csv = std::fs::read(mgr.result_path(id, ResultFile::Csv).unwrap()).unwrap();
        if let Some(prev) = csv_by_pipeline.insert(*p, csv.clone()) {
            assert_eq!(prev, csv, "{p} differs between identical jobs");
        }
    }
    let claims = mgr.store().claims().unwrap();
    for id in &ids {
        assert_eq!(claims.iter().filter(|c| &c.job_id == id).count(), 1);
    }
}

#[test]
fn results_do_not_depend_on_parallelism() {
    let d = demo();
    let mut seen: Option<Vec<Vec<u8>>> = None;
    for (workers, per_job) in [(1, 1), (4, 4), (1, 4), (4, 1)] {
        let data = d.data.join(format!("w{workers}c{per_job}"));
        let mgr = JobManager::start(JobStore::open(&data).unwrap(), config(workers, per_job)).unwrap();
        let mut csvs = Vec::new();
        for p in [PipelineId::KernelMorph, PipelineId::FhbField, PipelineId::SpikeUav] {
            let ids = upload(mgr.store(), &d.demo, p);
            let id = mgr.submit(spec(&d, p, &ids)).unwrap().job_id;
            assert_eq!(wait(&mgr, &id).state, JobState::Completed);
            csvs.push(std::fs::read(mgr.result_path(&id, ResultFile::Csv).unwrap()).unwrap());
        }
        match &seen {
            None => seen = Some(csvs),
            Some(first) => assert_eq!(first, &csvs),
        }
    }
}

#[test]
fn single_mode_matches_bulk() {
    let d = demo();
    let mgr = JobManager::start(JobStore::open(&d.data).unwrap(), config(1, 1)).unwrap();
    let ids = upload(mgr.store(), &d.demo, PipelineId::Fdk);
    let single = mgr.run_single(spec(&d, PipelineId::Fdk, &ids[..1])).unwrap();
    assert_eq!(single.state, JobState::Completed);
    let bulk = wait(&mgr, &mgr.submit(spec(&d, PipelineId::Fdk, &ids)).unwrap().job_id);
    let a = results(&mgr, &single.job_id);
    let b = results(&mgr, &bulk.job_id);
    assert_eq!(a["images"][0], b["images"][0]);
}
