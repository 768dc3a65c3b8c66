use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use wheatai::export::{render_csvs, write_visuals};
use wheatai::infer::FixtureBackend;
use wheatai::jobs::{JobManager, JobStore, ManagerConfig};
use wheatai::pipeline::{run_batch, ImageInput, ImageResult, PipelineId, PipelineParams};

use crate::api::{self, AppState};

/// Exit codes of the command line.
pub const EXIT_OK: u8 = 0;
pub const EXIT_FATAL: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "wheatai", version, about = "Wheat phenotyping pipelines: batch runs and the HTTP service")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Process every image of a directory and write tables, overlays and crops.
    Run(RunArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

fn parse_pipeline(s: &str) -> Result<PipelineId, String> {
    s.parse().map_err(|_| {
        let ids: Vec<&str> = PipelineId::ALL.iter().map(|p| p.as_str()).collect();
        format!("unknown pipeline; expected one of {}", ids.join(", "))
    })
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long, value_parser = parse_pipeline)]
    pub pipeline: PipelineId,
    /// Directory of PNG/JPEG images.
    #[arg(long)]
    pub input: PathBuf,
    /// Directory of `<image_stem>.pred.json` prediction files.
    #[arg(long)]
    pub backend: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long = "conf")]
    pub conf: Option<f64>,
    #[arg(long)]
    pub nms_iou: Option<f64>,
    #[arg(long, conflicts_with = "marker_mm")]
    pub px_per_mm: Option<f64>,
    /// Printed marker side; calibrates each image from its fiducial.
    #[arg(long)]
    pub marker_mm: Option<f64>,
    /// Ground sampling distance, mm per px.
    #[arg(long)]
    pub gsd: Option<f64>,
    #[arg(long)]
    pub tile: Option<u32>,
    #[arg(long)]
    pub overlap: Option<u32>,
    #[arg(long)]
    pub px_per_um: Option<f64>,
    #[arg(long)]
    pub open_thresh: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub crop_padding: Option<f64>,
    /// Skip the mask-area-weighted FDK ratio.
    #[arg(long)]
    pub no_area_weighted: bool,
    /// Skip overlay and crop images.
    #[arg(long)]
    pub no_images: bool,
    /// Images processed at the same time.
    #[arg(long, default_value_t = 1, visible_alias = "concurrency")]
    pub workers: usize,
}

impl RunArgs {
    pub fn params(&self) -> PipelineParams {
        let mut p = PipelineParams::default();
        if let Some(v) = self.conf {
            p.conf_thresh = v;
        }
        if let Some(v) = self.nms_iou {
            p.nms_iou = v;
        }
        if let Some(v) = self.tile {
            p.tile_size = v;
        }
        if let Some(v) = self.overlap {
            p.overlap = v;
        }
        if let Some(v) = self.open_thresh {
            p.open_thresh = v;
        }
        if let Some(v) = self.tau {
            p.tau = v;
        }
        if let Some(v) = self.crop_padding {
            p.crop_padding = v;
        }
        p.gsd_mm_per_px = self.gsd;
        p.px_per_mm = self.px_per_mm;
        p.marker_mm = self.marker_mm;
        p.px_per_um = self.px_per_um;
        p.area_weighted = !self.no_area_weighted;
        p
    }
}

/// The `run` flags that reproduce `params` (defaults are left out).
pub fn param_flags(params: &PipelineParams) -> Vec<String> {
    let d = PipelineParams::default();
    let mut out = Vec::new();
    let mut push = |flag: &str, v: String| {
        out.push(format!("--{flag}"));
        out.push(v);
    };
    if params.conf_thresh != d.conf_thresh {
        push("conf", params.conf_thresh.to_string());
    }
    if params.nms_iou != d.nms_iou {
        push("nms-iou", params.nms_iou.to_string());
    }
    if let Some(v) = params.gsd_mm_per_px {
        push("gsd", v.to_string());
    }
    if params.tile_size != d.tile_size {
        push("tile", params.tile_size.to_string());
    }
    if params.overlap != d.overlap {
        push("overlap", params.overlap.to_string());
    }
    if params.tau != d.tau {
        push("tau", params.tau.to_string());
    }
    if params.crop_padding != d.crop_padding {
        push("crop-padding", params.crop_padding.to_string());
    }
    if let Some(v) = params.px_per_mm {
        push("px-per-mm", v.to_string());
    }
    if let Some(v) = params.marker_mm {
        push("marker-mm", v.to_string());
    }
    if let Some(v) = params.px_per_um {
        push("px-per-um", v.to_string());
    }
    if params.open_thresh != d.open_thresh {
        push("open-thresh", params.open_thresh.to_string());
    }
    if !params.area_weighted {
        out.push("--no-area-weighted".into());
    }
    out
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "WHEATAI_PORT", default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, env = "WHEATAI_DATA_DIR", default_value = "data")]
    pub data_dir: PathBuf,
    /// Jobs run at the same time.
    #[arg(long, env = "WHEATAI_WORKERS", default_value_t = 2)]
    pub workers: usize,
    /// Images of one job run at the same time.
    #[arg(long, default_value_t = 2)]
    pub concurrency: usize,
    /// Prediction directory for jobs that name no `backend_ref`.
    #[arg(long, env = "WHEATAI_BACKEND")]
    pub backend: Option<PathBuf>,
    /// Built UI bundle to serve at `/`.
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    pub max_upload_mb: usize,
    /// Value of `Access-Control-Allow-Origin` on every response.
    #[arg(long)]
    pub cors_origin: Option<String>,
}

fn fail(code: &str, message: impl std::fmt::Display, exit: u8) -> u8 {
    eprintln!("error[{code}]: {message}");
    exit
}

fn is_image(path: &Path) -> bool {
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    path.is_file() && matches!(ext.as_deref(), Some("png" | "jpg" | "jpeg"))
}

fn list_images(dir: &Path) -> std::io::Result<Vec<ImageInput>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    paths.retain(|p| is_image(p));
    paths.sort();
    Ok(paths
        .into_iter()
        .map(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_owned();
            ImageInput::new(&name, Some(p))
        })
        .collect())
}

fn stem(name: &str) -> &str {
    name.rfind('.').filter(|&i| i > 0).map_or(name, |i| &name[..i])
}

fn write(path: &Path, contents: &[u8]) -> Result<(), u8> {
    fs::write(path, contents).map_err(|e| fail("io_error", format!("{}: {e}", path.display()), EXIT_FATAL))
}

/// `run`: everything lands under `--out` as `<pipeline>.csv`,
/// `<pipeline>_summary.csv`, `<pipeline>.json`, `overlays/<stem>.png` and
/// `crops/<stem>_det<i>.png`.
pub fn run(args: &RunArgs) -> u8 {
    match run_inner(args) {
        Ok(code) | Err(code) => code,
    }
}

fn run_inner(args: &RunArgs) -> Result<u8, u8> {
    let p = args.pipeline;
    let params = args.params();
    params
        .validate(p)
        .map_err(|e| fail(e.code(), &e, EXIT_USAGE))?;
    let inputs = list_images(&args.input)
        .map_err(|e| fail("io_error", format!("{}: {e}", args.input.display()), EXIT_FATAL))?;
    let backend = FixtureBackend::open(&args.backend).map_err(|e| fail("backend_unavailable", e, EXIT_FATAL))?;
    fs::create_dir_all(&args.out)
        .map_err(|e| fail("io_error", format!("{}: {e}", args.out.display()), EXIT_FATAL))?;

    let on_done = |_: usize, r: &ImageResult| {
        tracing::info!(image = %r.image, ok = r.is_ok(), "processed");
    };
    let results: Vec<ImageResult> = run_batch(p, &inputs, &backend, &params, args.workers, &|_| false, &on_done)
        .into_iter()
        .map(|r| r.expect("nothing stops a local run"))
        .collect();

    let mut failed = 0;
    for r in &results {
        if let Some(e) = &r.error {
            failed += 1;
            eprintln!("warning: {}: [{}] {}", r.image, e.code, e.message);
        }
        for w in &r.warnings {
            eprintln!("warning: {}: [{}] {}", r.image, w.code, w.detail);
        }
    }

    let refs: Vec<&ImageResult> = results.iter().collect();
    let tables = render_csvs(p, &refs).map_err(|e| fail("internal", e, EXIT_FATAL))?;
    let main_csv = args.out.join(format!("{p}.csv"));
    write(&main_csv, tables.main.as_bytes())?;
    if let Some(s) = &tables.summary {
        write(&args.out.join(format!("{p}_summary.csv")), s.as_bytes())?;
    }
    let mut json = serde_json::to_vec_pretty(&results).expect("results serialize");
    json.push(b'\n');
    write(&args.out.join(format!("{p}.json")), &json)?;

    if !args.no_images {
        for (input, r) in inputs.iter().zip(&results) {
            let (Some(dets), Some(path)) = (r.detections.as_ref().filter(|_| r.is_ok()), &input.path) else { continue };
            let s = stem(&r.image);
            let written = write_visuals(
                path,
                dets,
                &r.crop_indices,
                params.crop_padding,
                &args.out.join("overlays").join(format!("{s}.png")),
                &args.out.join("crops"),
                s,
            );
            if let Err(e) = written {
                eprintln!("warning: {}: [overlay_failed] {e}", r.image);
            }
        }
    }

    println!(
        "{p}: {} images, {failed} failed -> {}",
        results.len(),
        main_csv.display()
    );
    if !results.is_empty() && failed == results.len() {
        return Err(fail("all_images_failed", "no image could be processed", EXIT_FATAL));
    }
    Ok(EXIT_OK)
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
}

/// `serve`: runs until interrupted, then lets running jobs finish.
pub fn serve(args: &ServeArgs) -> u8 {
    let store = match JobStore::open(&args.data_dir) {
        Ok(s) => s,
        Err(e) => return fail(e.code(), e, EXIT_FATAL),
    };
    let cors_origin = match args.cors_origin.as_deref().map(axum::http::HeaderValue::from_str) {
        None => None,
        Some(Ok(v)) => Some(v),
        Some(Err(_)) => return fail("invalid_request", "--cors-origin is not a valid header value", EXIT_USAGE),
    };
    let rt = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => return fail("internal", e, EXIT_FATAL),
    };
    let addr = format!("{}:{}", args.host, args.port);
    let listener = match rt.block_on(tokio::net::TcpListener::bind(&addr)) {
        Ok(l) => l,
        Err(e) => return fail("address_unavailable", format!("{addr}: {e}"), EXIT_FATAL),
    };
    let manager = match JobManager::start(
        store,
        ManagerConfig {
            workers: args.workers.max(1),
            per_job_concurrency: args.concurrency.max(1),
            default_backend: args.backend.clone(),
            image_hook: None,
        },
    ) {
        Ok(m) => m,
        Err(e) => return fail(e.code(), e, EXIT_FATAL),
    };
    let state = Arc::new(AppState {
        manager,
        max_upload: args.max_upload_mb.saturating_mul(1024 * 1024),
        static_dir: args.static_dir.clone(),
        cors_origin,
    });
    let local: Option<SocketAddr> = listener.local_addr().ok();
    if let Some(a) = local {
        println!("listening on http://{a}");
    }
    let app = api::router(Arc::clone(&state));
    let served = rt.block_on(async move { axum::serve(listener, app).with_graceful_shutdown(shutdown_signal()).await });
    drop(rt);
    tracing::info!("draining running jobs");
    // the router is gone, so this is the last handle: dropping it joins the workers
    drop(state);
    match served {
        Ok(()) => EXIT_OK,
        Err(e) => fail("internal", e, EXIT_FATAL),
    }
}
