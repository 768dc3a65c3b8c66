//! Regenerate the bundled demo dataset and its golden tables:
//!
//! ```text
//! cargo run -p wheatai --example make_demo_data -- [fixtures-dir]
//! ```
//!
//! Writes `<dir>/demo/<pipeline>/{images,preds}` and
//! `<dir>/golden/<pipeline>.csv` (plus `_summary.csv` where the pipeline
//! has one).

use std::path::PathBuf;

use clap::Parser;
use wheatai::pipeline::PipelineId;
use wheatai::synth::{demo_params, write_demo_dataset};
use wheatai_gateway::cli::{self, param_flags, Cli, Command};

fn main() {
    let root = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures"));
    let demo = root.join("demo");
    let golden = root.join("golden");
    write_demo_dataset(&demo).expect("write demo dataset");
    let scratch = std::env::temp_dir().join(format!("wheatai-golden-{}", std::process::id()));
    for p in PipelineId::ALL {
        let dir = demo.join(p.as_str());
        let out = scratch.join(p.as_str());
        let mut argv: Vec<String> = vec!["wheatai".into(), "run".into(), "--no-images".into()];
        for (flag, path) in [("--pipeline", PathBuf::from(p.as_str())), ("--input", dir.join("images")), ("--backend", dir.join("preds")), ("--out", out.clone())] {
            argv.push(flag.into());
            argv.push(path.display().to_string());
        }
        argv.extend(param_flags(&demo_params(p)));
        let Command::Run(args) = Cli::parse_from(&argv).command else { unreachable!() };
        assert_eq!(cli::run(&args), 0, "{p} run failed");
        std::fs::create_dir_all(&golden).expect("golden dir");
        for name in [format!("{p}.csv"), format!("{p}_summary.csv")] {
            let src = out.join(&name);
            if src.exists() {
                std::fs::copy(&src, golden.join(&name)).expect("copy golden");
            }
        }
    }
    let _ = std::fs::remove_dir_all(&scratch);
    println!("wrote {}", root.display());
}
