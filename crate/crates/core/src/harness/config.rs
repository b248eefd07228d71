use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::asymptotics::{FluctuationRegime, SojournWindows};
use crate::error::{Error, Result};
use crate::workload::QueueParams;

/// What an experiment estimates for each level `u`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Study {
    /// Conditional sojourn probabilities; the driver follows the regime.
    #[default]
    Conditional,
    /// `P(sup_{[0, T(u)]} Q > u) / P(Q(0) > u)` with `T(u) = t1 u^{(2H-1)/(2H)}`.
    Piterbarg,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub hurst: f64,
    pub drain: f64,
}

/// Windows and thresholds. For the Brownian regimes `t1`, `t2` delimit the
/// observation window `(t1, t2]` and `x` is its threshold; for the fBm
/// regimes they are the scaled limits of the conditioning window `(0, t1]`
/// and the target window `(t2, t3]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowsConfig {
    pub t1: f64,
    pub t2: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t3: Option<f64>,
    pub x: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<f64>,
}

impl WindowsConfig {
    pub fn sojourn_windows(&self) -> Result<SojournWindows> {
        let t3 = self.t3.ok_or_else(|| Error::Config("windows.t3 is required for this regime".into()))?;
        let y = self.y.ok_or_else(|| Error::Config("windows.y is required for this regime".into()))?;
        SojournWindows::new(self.t1, self.t2, t3, self.x, y)
    }
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub reps: u64,
    pub step: f64,
    /// Look-ahead for the stationary workload; defaults to `8 u t*`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    /// For `H = 1/2`, draw the supremum beyond the window exactly.
    #[serde(default = "default_true")]
    pub exact_bm_tail: bool,
    /// Replicates for the limit constants; defaults to `reps`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constant_reps: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constant_step: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputsConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub json_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub study: Study,
    pub model: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regime: Option<FluctuationRegime>,
    pub windows: WindowsConfig,
    pub u_list: Vec<f64>,
    pub mc: McConfig,
    #[serde(default)]
    pub outputs: OutputsConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn params(&self) -> Result<QueueParams> {
        QueueParams::new(self.model.hurst, self.model.drain)
    }

    pub fn regime(&self) -> Result<FluctuationRegime> {
        self.regime.ok_or_else(|| Error::Config("a [regime] table is required for conditional studies".into()))
    }

    pub fn constant_reps(&self) -> u64 {
        self.mc.constant_reps.unwrap_or(self.mc.reps)
    }

    pub fn validate(&self) -> Result<()> {
        let params = self.params()?;
        if self.u_list.is_empty() {
            return Err(Error::Config("u_list must not be empty".into()));
        }
        if self.u_list.iter().any(|u| !(u.is_finite() && *u >= 0.0)) {
            return Err(Error::Config("u_list entries must be finite and non-negative".into()));
        }
        if self.u_list.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("u_list must be strictly ascending".into()));
        }
        if self.mc.reps == 0 {
            return Err(Error::Config("mc.reps must be at least 1".into()));
        }
        if !(self.mc.step.is_finite() && self.mc.step > 0.0) {
            return Err(Error::Config(format!("mc.step must be positive, got {}", self.mc.step)));
        }
        if let Some(h) = self.mc.horizon {
            if !(h.is_finite() && h > 0.0) {
                return Err(Error::Config(format!("mc.horizon must be positive, got {h}")));
            }
        }
        if self.mc.constant_reps == Some(0) {
            return Err(Error::Config("mc.constant_reps must be at least 1".into()));
        }
        if self.mc.workers == Some(0) {
            return Err(Error::Config("mc.workers must be at least 1".into()));
        }
        match self.study {
            Study::Conditional => {
                let regime = self.regime()?;
                regime.validate()?;
                if regime.is_brownian_regime() {
                    if !params.hurst.is_brownian() {
                        return Err(Error::Config(format!(
                            "regime {regime:?} requires model.hurst = 0.5, got {}",
                            self.model.hurst
                        )));
                    }
                    let w = &self.windows;
                    if !(w.t1 >= 0.0 && w.t2 > w.t1 && w.x >= 0.0) {
                        return Err(Error::Config("Brownian regimes need 0 <= t1 < t2 and x >= 0".into()));
                    }
                } else {
                    self.windows.sojourn_windows()?;
                }
            }
            Study::Piterbarg => {
                if !(self.windows.t1 > 0.0) {
                    return Err(Error::Config("windows.t1 scales T(u) and must be positive".into()));
                }
                if self.u_list[0] <= 0.0 {
                    return Err(Error::Config("Piterbarg levels must be positive".into()));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const VALID: &str = r#"
u_list = [2.0, 3.0]

[model]
hurst = 0.5
drain = 1.0

[regime]
kind = "small_bm"
w = 0.3

[windows]
t1 = 0.0
t2 = 1.0
x = 0.2

[mc]
reps = 100
step = 0.01
seed = 1
"#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = ExperimentConfig::from_toml_str(VALID).unwrap();
        assert_eq!(cfg.study, Study::Conditional);
        assert_eq!(cfg.regime, Some(FluctuationRegime::SmallBm { w: 0.3 }));
        assert!(cfg.mc.exact_bm_tail);
        let again = ExperimentConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let typo = VALID.replace("seed = 1", "seed = 1\nsed = 2");
        let err = ExperimentConfig::from_toml_str(&typo).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("sed"), "{err}");
        let bad_regime = VALID.replace("w = 0.3", "w = 0.3\nlambda = 1.0");
        assert!(ExperimentConfig::from_toml_str(&bad_regime).is_err());
    }

    #[test]
    fn semantic_errors() {
        for (from, to) in [
            ("u_list = [2.0, 3.0]", "u_list = [3.0, 2.0]"),
            ("u_list = [2.0, 3.0]", "u_list = []"),
            ("reps = 100", "reps = 0"),
            ("hurst = 0.5", "hurst = 0.7"),
            ("step = 0.01", "step = -0.01"),
        ] {
            let err = ExperimentConfig::from_toml_str(&VALID.replace(from, to)).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{to}: {err}");
        }
    }

    #[test]
    fn fbm_regime_needs_full_windows() {
        let text = VALID.replace("kind = \"small_bm\"\nw = 0.3", "kind = \"small_fbm\"\nlambda = 0.0");
        assert!(ExperimentConfig::from_toml_str(&text).is_err());
        let text = text.replace("x = 0.2", "x = 0.2\nt3 = 1.5\ny = 0.3").replace("t1 = 0.0", "t1 = 1.0");
        let text = text.replace("t2 = 1.0", "t2 = 0.5");
        ExperimentConfig::from_toml_str(&text).unwrap();
    }
}
