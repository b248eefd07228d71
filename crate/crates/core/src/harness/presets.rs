use std::path::PathBuf;

use crate::asymptotics::FluctuationRegime;
use crate::error::{Error, Result};

use super::config::{ExperimentConfig, McConfig, ModelConfig, OutputsConfig, Study, WindowsConfig};

pub const PRESET_NAMES: [&str; 5] = ["prop1-bm", "prop2-bm", "thm1-bm", "thm3", "piterbarg-check"];

const SEED: u64 = 20_160_401;

fn mc(reps: u64, step: f64) -> McConfig {
    McConfig {
        reps,
        step,
        horizon: None,
        seed: SEED,
        workers: None,
        exact_bm_tail: true,
        constant_reps: None,
        constant_step: None,
    }
}

fn outputs(name: &str) -> OutputsConfig {
    OutputsConfig {
        csv_path: Some(PathBuf::from(format!("{name}.csv"))),
        json_path: Some(PathBuf::from(format!("{name}.json"))),
    }
}

fn bm_windows() -> WindowsConfig {
    WindowsConfig { t1: 0.0, t2: 1.0, t3: None, x: 0.2, y: None }
}

fn scaled_windows() -> WindowsConfig {
    WindowsConfig { t1: 1.0, t2: 0.5, t3: Some(1.5), x: 0.2, y: Some(0.3) }
}

/// Built-in experiments at levels where the conditioning event is not rare.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let bm = ModelConfig { hurst: 0.5, drain: 1.0 };
    let cfg = match name {
        "prop1-bm" => ExperimentConfig {
            study: Study::Conditional,
            model: bm,
            regime: Some(FluctuationRegime::SmallBm { w: 0.3 }),
            windows: bm_windows(),
            u_list: vec![2.0, 3.0, 4.0],
            mc: mc(200_000, 1.0 / 256.0),
            outputs: outputs(name),
        },
        "prop2-bm" => ExperimentConfig {
            study: Study::Conditional,
            model: bm,
            regime: Some(FluctuationRegime::LargeBm { a: 1.0 }),
            windows: bm_windows(),
            u_list: vec![1.0, 2.0, 3.0],
            mc: mc(400_000, 1.0 / 256.0),
            outputs: outputs(name),
        },
        "thm1-bm" => ExperimentConfig {
            study: Study::Conditional,
            model: bm,
            regime: Some(FluctuationRegime::SmallFbm { lambda: 0.0 }),
            windows: scaled_windows(),
            u_list: vec![2.0, 2.5, 3.0],
            mc: McConfig { constant_step: Some(1.0 / 128.0), constant_reps: Some(200_000), ..mc(1_000_000, 1.0 / 256.0) },
            outputs: outputs(name),
        },
        "thm3" => ExperimentConfig {
            study: Study::Conditional,
            model: ModelConfig { hurst: 0.7, drain: 1.0 },
            regime: Some(FluctuationRegime::LargeFbm { a: -0.5 }),
            windows: scaled_windows(),
            u_list: vec![1.0, 1.5, 2.0],
            mc: McConfig { horizon: Some(24.0), ..mc(50_000, 1.0 / 32.0) },
            outputs: outputs(name),
        },
        "piterbarg-check" => ExperimentConfig {
            study: Study::Piterbarg,
            model: ModelConfig { hurst: 0.7, drain: 1.0 },
            regime: None,
            windows: WindowsConfig { t1: 1.0, t2: 0.0, t3: None, x: 0.0, y: Some(0.0) },
            u_list: vec![1.0, 2.0, 3.0],
            mc: McConfig { horizon: Some(24.0), ..mc(50_000, 1.0 / 32.0) },
            outputs: outputs(name),
        },
        other => {
            return Err(Error::Config(format!(
                "unknown preset {other:?}; available: {}",
                PRESET_NAMES.join(", ")
            )))
        }
    };
    cfg.validate()?;
    Ok(cfg)
}
