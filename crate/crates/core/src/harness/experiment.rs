use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::json;

use crate::error::Result;
use crate::rng::with_workers;

use super::config::ExperimentConfig;
use super::drivers::{run_study, ResultRecord, StudyOutput};

pub const CSV_HEADER: [&str; 8] = ["u", "omega", "mc", "se", "eff_n", "closed_form", "asymptotic", "ratio"];

/// `git describe` of the tree this library was built from.
pub fn git_describe() -> &'static str {
    env!("FBMQ_GIT_DESCRIBE")
}

/// Files written by an experiment, with the rows they contain.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub csv_path: PathBuf,
    pub json_path: PathBuf,
    pub output: StudyOutput,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes the result table; identical records give identical bytes.
pub fn write_csv<W: Write>(records: &[ResultRecord], sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.write_record([
            r.u.to_string(),
            r.omega.to_string(),
            r.mc_estimate.value.to_string(),
            r.mc_estimate.std_error.to_string(),
            r.effective_samples.to_string(),
            opt(r.closed_form),
            opt(r.asymptotic),
            opt(r.ratio_mc_over_asymptotic),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn resolve(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> (PathBuf, PathBuf) {
    let csv = cfg.outputs.csv_path.clone().unwrap_or_else(|| PathBuf::from("results.csv"));
    let json = cfg.outputs.json_path.clone().unwrap_or_else(|| csv.with_extension("json"));
    match out_dir {
        Some(dir) => {
            let name = |p: &Path| dir.join(p.file_name().expect("output paths name a file"));
            (name(&csv), name(&json))
        }
        None => (csv, json),
    }
}

/// Runs a validated configuration and writes the CSV table and the JSON
/// sidecar; `out_dir` overrides the directories of both outputs.
pub fn run_config(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<Artifacts> {
    cfg.validate()?;
    let output = with_workers(cfg.mc.workers, || run_study(cfg))?;
    let (csv_path, json_path) = resolve(cfg, out_dir);
    for p in [&csv_path, &json_path] {
        if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut buf = Vec::new();
    write_csv(&output.records, &mut buf)?;
    std::fs::write(&csv_path, buf)?;

    let sidecar = json!({
        "provenance": {
            "seed": cfg.mc.seed,
            "step": cfg.mc.step,
            "horizon": cfg.mc.horizon,
            "exact_bm_tail": cfg.mc.exact_bm_tail,
            "reps": cfg.mc.reps,
            "git_describe": git_describe(),
            "version": env!("CARGO_PKG_VERSION"),
        },
        "config": cfg,
        "records": output.records,
        "constants": output.constants,
    });
    std::fs::write(&json_path, serde_json::to_string_pretty(&sidecar)?)?;
    log::info!("wrote {} and {}", csv_path.display(), json_path.display());
    Ok(Artifacts { csv_path, json_path, output })
}

/// Loads the configuration at `path` and runs it.
pub fn run_experiment(path: &Path) -> Result<Artifacts> {
    let cfg = ExperimentConfig::load(path)?;
    run_config(&cfg, None)
}
