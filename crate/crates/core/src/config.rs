//! Flat `key = value` experiment files.
//!
//! ```text
//! # Example 1
//! plant = example1
//! x0 = -10
//! rho = 4.1
//! delay_mode = constant
//! delta_tau = 0.002
//! ```

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::engine::{DelayModel, SimConfig};
use crate::plant::DisturbanceSignal;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub const KEYS: &[&str] = &[
    "plant",
    "x0",
    "theta",
    "mu",
    "rho",
    "tau_c",
    "eta0",
    "eta_min",
    "t0",
    "horizon",
    "step",
    "event_tol",
    "sample_interval",
    "delay_mode",
    "delta_tau",
    "delay_compensation",
    "disturbance",
    "seed",
    "shift",
    "rho_grid",
    "trace_csv",
    "event_log",
    "summary",
];

#[derive(Debug, Clone, PartialEq)]
pub struct OutputPaths {
    pub trace_csv: PathBuf,
    pub event_log: PathBuf,
    pub summary: PathBuf,
}

impl Default for OutputPaths {
    fn default() -> Self {
        Self {
            trace_csv: "trace.csv".into(),
            event_log: "events.log".into(),
            summary: "summary.txt".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum DelayMode {
    None,
    Constant,
    Uniform,
}

/// A parsed experiment file.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub sim: SimConfig,
    pub outputs: OutputPaths,
    delay_mode: DelayMode,
    delta_tau: Option<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            outputs: OutputPaths::default(),
            delay_mode: DelayMode::None,
            delta_tau: None,
        }
    }
}

fn number(v: &str) -> Result<f64, String> {
    v.parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| format!("expected a finite number, got `{v}`"))
}

fn list(v: &str) -> Result<Vec<f64>, String> {
    v.split(',').map(|p| number(p.trim())).collect()
}

fn auto_or_number(v: &str) -> Result<Option<f64>, String> {
    if v == "auto" {
        Ok(None)
    } else {
        number(v).map(Some)
    }
}

fn boolean(v: &str) -> Result<bool, String> {
    match v {
        "true" | "on" | "yes" => Ok(true),
        "false" | "off" | "no" => Ok(false),
        _ => Err(format!("expected true/false, got `{v}`")),
    }
}

fn disturbance(v: &str) -> Result<Option<DisturbanceSignal>, String> {
    let parts: Vec<&str> = v.split(':').map(str::trim).collect();
    match parts.as_slice() {
        ["none"] => Ok(None),
        ["sine", amp, omega] => Ok(Some(DisturbanceSignal::Sine {
            amplitude: number(amp)?,
            omega: number(omega)?,
        })),
        ["random", amp, hold] => {
            let hold = number(hold)?;
            if !(hold > 0.0) {
                return Err("random disturbance hold time must be positive".into());
            }
            Ok(Some(DisturbanceSignal::PiecewiseRandom {
                amplitude: number(amp)?,
                hold,
                seed: 0,
            }))
        }
        _ => Err(format!(
            "expected `none`, `sine:<amplitude>:<omega>` or `random:<amplitude>:<hold>`, got `{v}`"
        )),
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut seen: Vec<&str> = Vec::new();
        for (k, raw) in text.lines().enumerate() {
            let line = k + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(ConfigError::Line {
                    line,
                    message: format!("expected `key = value`, got `{content}`"),
                });
            };
            let (key, value) = (key.trim(), value.trim());
            if seen.contains(&key) {
                return Err(ConfigError::Line {
                    line,
                    message: format!("duplicate key `{key}`"),
                });
            }
            cfg.set(key, value).map_err(|message| ConfigError::Line { line, message })?;
            seen.push(KEYS.iter().find(|k| **k == key).copied().unwrap_or(""));
        }
        cfg.finish()?;
        Ok(cfg)
    }

    /// Assigns one key; also used to override values in sweeps.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let s = &mut self.sim;
        match key {
            "plant" => {
                if value.is_empty() {
                    return Err("plant name is empty".into());
                }
                s.plant = value.to_string();
            }
            "x0" => s.x0 = list(value)?,
            "theta" => s.theta = if value == "uniform" { None } else { Some(list(value)?) },
            "mu" => s.mu = number(value)?,
            "rho" => s.rho = auto_or_number(value)?,
            "tau_c" => s.tau_c = number(value)?,
            "eta0" => s.eta0 = auto_or_number(value)?,
            "eta_min" => s.eta_min = number(value)?,
            "t0" => s.t0 = number(value)?,
            "horizon" => s.horizon = number(value)?,
            "step" => s.step = auto_or_number(value)?,
            "event_tol" => s.event_tol = number(value)?,
            "sample_interval" => s.sample_interval = auto_or_number(value)?,
            "delay_mode" => {
                self.delay_mode = match value {
                    "none" => DelayMode::None,
                    "constant" => DelayMode::Constant,
                    "uniform" => DelayMode::Uniform,
                    _ => return Err(format!("delay_mode must be none, constant or uniform, got `{value}`")),
                }
            }
            "delta_tau" => {
                let d = number(value)?;
                if d < 0.0 {
                    return Err(format!("delta_tau must be non-negative, got {d}"));
                }
                self.delta_tau = Some(d);
            }
            "delay_compensation" => s.delay_compensation = boolean(value)?,
            "disturbance" => s.disturbance = disturbance(value)?,
            "seed" => s.seed = value.parse().map_err(|_| format!("expected an unsigned integer, got `{value}`"))?,
            "shift" => s.shift = boolean(value)?,
            "rho_grid" => s.rho_grid = value.parse().map_err(|_| format!("expected an unsigned integer, got `{value}`"))?,
            "trace_csv" => self.outputs.trace_csv = value.into(),
            "event_log" => self.outputs.event_log = value.into(),
            "summary" => self.outputs.summary = value.into(),
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Resolves cross-key settings and validates the result.
    pub fn finish(&mut self) -> Result<(), ConfigError> {
        self.sim.delay = match (&self.delay_mode, self.delta_tau) {
            (DelayMode::None, _) => DelayModel::None,
            (DelayMode::Constant, Some(d)) => DelayModel::Constant(d),
            (DelayMode::Uniform, Some(d)) => DelayModel::Uniform { max: d },
            (_, None) => {
                return Err(ConfigError::Invalid(
                    "delay_mode constant/uniform requires delta_tau".into(),
                ))
            }
        };
        if let Some(DisturbanceSignal::PiecewiseRandom { seed, .. }) = &mut self.sim.disturbance {
            *seed = self.sim.seed;
        }
        self.sim.validate().map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_example() {
        let cfg = ExperimentConfig::parse(
            "# comment\nplant = example1\nx0 = -10   # start\nrho = 4.1\nmu=0.82\ndelay_mode = constant\ndelta_tau = 0.002\n",
        )
        .unwrap();
        assert_eq!(cfg.sim.x0, vec![-10.0]);
        assert_eq!(cfg.sim.rho, Some(4.1));
        assert_eq!(cfg.sim.delay, DelayModel::Constant(0.002));
        assert_eq!(cfg.outputs, OutputPaths::default());
    }

    #[test]
    fn line_numbered_errors() {
        let e = ExperimentConfig::parse("plant = example1\n\nbogus = 1\n").unwrap_err();
        assert_eq!(e.to_string(), "line 3: unknown key `bogus`");
        let e = ExperimentConfig::parse("mu = abc").unwrap_err();
        assert!(e.to_string().starts_with("line 1:"));
        let e = ExperimentConfig::parse("mu\n").unwrap_err();
        assert!(e.to_string().contains("key = value"));
        let e = ExperimentConfig::parse("mu = 0.8\nmu = 0.9\n").unwrap_err();
        assert!(e.to_string().contains("duplicate"));
    }

    #[test]
    fn semantic_errors() {
        assert!(ExperimentConfig::parse("mu = 0.7").is_err());
        assert!(ExperimentConfig::parse("delay_mode = uniform").is_err());
        assert!(ExperimentConfig::parse("disturbance = sine:1").is_err());
    }

    #[test]
    fn auto_and_disturbance() {
        let cfg = ExperimentConfig::parse("rho = auto\neta0 = auto\ndisturbance = random:0.1:0.5\nseed = 9").unwrap();
        assert_eq!(cfg.sim.rho, None);
        assert_eq!(
            cfg.sim.disturbance,
            Some(DisturbanceSignal::PiecewiseRandom {
                amplitude: 0.1,
                hold: 0.5,
                seed: 9
            })
        );
    }
}
