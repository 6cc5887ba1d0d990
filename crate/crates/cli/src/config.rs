//! Run settings merged from flags, an optional JSON config file and
//! defaults, in that order of precedence. The resolved settings are written
//! next to every output as `run_config.json` and can be fed back through
//! `--config`.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use lvtopo_core::experiment::{GenerationConfig, DEFAULT_NOISE_SIGMA};
use lvtopo_core::grid::DEFAULT_SEGMENT_RESISTANCE;
use lvtopo_core::recovery::{RecoveryOptions, DEFAULT_THRESHOLD};
use lvtopo_core::{fixture, FixtureName, GridTopology};

pub const RUN_CONFIG_FILE: &str = "run_config.json";

/// Bad flag or config value; reported like a clap usage error.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage<T>(msg: impl Into<String>) -> anyhow::Result<T> {
    Err(UsageError(msg.into()).into())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixture: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub topology: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub measurements: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sample_grid: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeds: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub power_factor: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub interval_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resistance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ridge: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

macro_rules! overlay {
    ($base:expr, $top:expr, $($field:ident),+) => {
        $( if $top.$field.is_some() { $base.$field = $top.$field.clone(); } )+
    };
}

impl Settings {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        match serde_json::from_str(&text) {
            Ok(s) => Ok(s),
            Err(e) => usage(format!("config {}: {e}", path.display())),
        }
    }

    /// Fields set in `top` replace those in `self`.
    pub fn overlay(mut self, top: &Settings) -> Self {
        overlay!(
            self,
            top,
            fixture,
            topology,
            measurements,
            truth,
            samples,
            sample_grid,
            seeds,
            seed,
            noise_sigma,
            power_factor,
            tol,
            max_iter,
            interval_s,
            theta,
            resistance,
            ridge,
            jobs,
            out_dir
        );
        self
    }

    /// Fills generation fields with defaults and checks their ranges.
    pub fn resolve_generation(&mut self) -> anyhow::Result<GenerationConfig> {
        let d = GenerationConfig::default();
        let samples = *self.samples.get_or_insert(d.samples);
        if samples < 2 {
            return usage(format!("--samples must be at least 2, got {samples}"));
        }
        let cfg = GenerationConfig {
            samples,
            noise_sigma: *self.noise_sigma.get_or_insert(DEFAULT_NOISE_SIGMA),
            seed: *self.seed.get_or_insert(d.seed),
            power_factor: *self.power_factor.get_or_insert(d.power_factor),
            tol: *self.tol.get_or_insert(d.tol),
            max_iter: *self.max_iter.get_or_insert(d.max_iter),
            interval_s: self.interval_s,
        };
        check(
            cfg.noise_sigma >= 0.0 && cfg.noise_sigma.is_finite(),
            "--noise-sigma",
            cfg.noise_sigma,
        )?;
        check(
            cfg.power_factor > 0.0 && cfg.power_factor <= 1.0,
            "--pf",
            cfg.power_factor,
        )?;
        check(cfg.tol > 0.0 && cfg.tol.is_finite(), "--tol", cfg.tol)?;
        if cfg.max_iter == 0 {
            return usage("--max-iter must be at least 1");
        }
        if let Some(i) = cfg.interval_s {
            check(i > 0.0 && i.is_finite(), "--interval", i)?;
        }
        Ok(cfg)
    }

    pub fn resolve_recovery(&mut self) -> anyhow::Result<RecoveryOptions> {
        let opts = RecoveryOptions {
            threshold: *self.theta.get_or_insert(DEFAULT_THRESHOLD),
            resistance: *self.resistance.get_or_insert(DEFAULT_SEGMENT_RESISTANCE),
            ridge: *self.ridge.get_or_insert(0.0),
            ..RecoveryOptions::default()
        };
        check(
            opts.threshold >= 0.0 && opts.threshold.is_finite(),
            "--theta",
            opts.threshold,
        )?;
        check(
            opts.resistance > 0.0 && opts.resistance.is_finite(),
            "--resistance",
            opts.resistance,
        )?;
        check(
            opts.ridge >= 0.0 && opts.ridge.is_finite(),
            "--ridge",
            opts.ridge,
        )?;
        Ok(opts)
    }

    /// Ground truth from `--fixture` or `--topology`.
    pub fn resolve_topology(&self) -> anyhow::Result<GridTopology> {
        match (&self.fixture, &self.topology) {
            (Some(_), Some(_)) => usage("give either --fixture or --topology, not both"),
            (Some(name), None) => match name.parse::<FixtureName>() {
                Ok(f) => Ok(fixture(f).topology),
                Err(e) => usage(e.to_string()),
            },
            (None, Some(path)) => read_topology(path),
            (None, None) => usage("one of --fixture or --topology is required"),
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from("."))
    }

    pub fn write(&self, dir: &Path) -> anyhow::Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        let path = dir.join(RUN_CONFIG_FILE);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}

fn check(ok: bool, flag: &str, value: f64) -> anyhow::Result<()> {
    if ok {
        Ok(())
    } else {
        usage(format!("{flag} out of range: {value}"))
    }
}

pub fn read_topology(path: &Path) -> anyhow::Result<GridTopology> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let t =
        GridTopology::from_json(&text).with_context(|| format!("parsing {}", path.display()))?;
    t.validate()
        .with_context(|| format!("validating {}", path.display()))?;
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_values() {
        let file = Settings {
            samples: Some(500),
            seed: Some(3),
            ..Settings::default()
        };
        let flags = Settings {
            seed: Some(9),
            ..Settings::default()
        };
        let mut s = file.overlay(&flags);
        let g = s.resolve_generation().unwrap();
        assert_eq!((g.samples, g.seed), (500, 9));
        assert_eq!(s.noise_sigma, Some(DEFAULT_NOISE_SIGMA));
    }

    #[test]
    fn written_settings_load_back() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = Settings {
            command: Some("generate".into()),
            fixture: Some("sys6".into()),
            ..Settings::default()
        };
        s.resolve_generation().unwrap();
        s.write(dir.path()).unwrap();
        assert_eq!(
            Settings::load(&dir.path().join(RUN_CONFIG_FILE)).unwrap(),
            s
        );
    }

    #[test]
    fn rejects_out_of_range_values() {
        let mut s = Settings {
            samples: Some(1),
            ..Settings::default()
        };
        assert!(s.resolve_generation().unwrap_err().is::<UsageError>());
        let mut s = Settings {
            power_factor: Some(1.5),
            ..Settings::default()
        };
        assert!(s.resolve_generation().is_err());
        let mut s = Settings {
            resistance: Some(0.0),
            ..Settings::default()
        };
        assert!(s.resolve_recovery().is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"sampels": 10}"#).unwrap();
        assert!(Settings::load(&path).unwrap_err().is::<UsageError>());
    }
}
