//! Experiment configuration: `key = value` files, overridable per key by
//! `--kebab-case` flags.

use std::path::{Path, PathBuf};
use std::time::Duration;

use crate::coding::Scheme;
use crate::error::{Error, Result};
use crate::runtime::{StragglerMode, StragglerPolicy, Transport};
use crate::trainers::{Hyper, Model};

#[derive(Clone, Debug, PartialEq)]
pub enum Stragglers {
    Count(usize),
    Ids(Vec<usize>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StragglerKind {
    Slowdown,
    FixedDelay,
    Disconnect,
}

#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSource {
    Synthetic { rows: usize, cols: usize },
    Csv { path: PathBuf, header: bool },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub n: usize,
    pub k: usize,
    pub scheme: Scheme,
    pub model: Model,
    pub num_iter: u64,
    pub eta: f64,
    pub lambda: f64,
    pub stragglers: Stragglers,
    pub straggler_mode: StragglerKind,
    /// Slowdown factor, delay in milliseconds, or disconnect iteration.
    pub straggler_magnitude: f64,
    pub dataset: DatasetSource,
    pub data_seed: u64,
    pub weight_seed: u64,
    pub rlnc_seed: u64,
    pub straggler_seed: u64,
    pub transport: Transport,
    pub deterministic: bool,
    pub deadline_ms: Option<u64>,
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let hyper = Hyper::default();
        Self {
            n: 5,
            k: 3,
            scheme: Scheme::SystematicMds,
            model: Model::LogisticRegression,
            num_iter: hyper.num_iter,
            eta: hyper.eta,
            lambda: hyper.lambda,
            stragglers: Stragglers::Count(0),
            straggler_mode: StragglerKind::Slowdown,
            straggler_magnitude: 20.0,
            dataset: DatasetSource::Synthetic { rows: 400, cols: 20 },
            data_seed: 1,
            weight_seed: 2,
            rlnc_seed: 3,
            straggler_seed: 4,
            transport: Transport::InProcess,
            deterministic: false,
            deadline_ms: None,
            output: None,
        }
    }
}

/// Every recognised key, in the spelling used by both files and flags.
pub const KEYS: &[&str] = &[
    "n",
    "k",
    "scheme",
    "model",
    "num-iter",
    "eta",
    "lambda",
    "stragglers",
    "straggler-mode",
    "straggler-magnitude",
    "dataset",
    "rows",
    "cols",
    "header",
    "data-seed",
    "weight-seed",
    "rlnc-seed",
    "straggler-seed",
    "transport",
    "deterministic",
    "deadline-ms",
    "output",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Configuration(format!("invalid value '{value}' for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(Error::Configuration(format!("invalid boolean '{value}' for {key}"))),
    }
}

impl ExperimentConfig {
    /// Applies one `key = value` setting. Underscores and dashes are interchangeable.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        match key.as_str() {
            "n" => self.n = parse(&key, value)?,
            "k" => self.k = parse(&key, value)?,
            "scheme" => self.scheme = value.parse().map_err(|e: Error| Error::Configuration(e.to_string()))?,
            "model" => self.model = value.parse().map_err(|e: Error| Error::Configuration(e.to_string()))?,
            "num-iter" => self.num_iter = parse(&key, value)?,
            "eta" => self.eta = parse(&key, value)?,
            "lambda" => self.lambda = parse(&key, value)?,
            "stragglers" => {
                self.stragglers = if value.starts_with('[') || value.contains(',') {
                    let inner = value.trim_start_matches('[').trim_end_matches(']');
                    let ids = inner
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(|s| parse(&key, s))
                        .collect::<Result<Vec<usize>>>()?;
                    Stragglers::Ids(ids)
                } else {
                    Stragglers::Count(parse(&key, value)?)
                }
            }
            "straggler-mode" => {
                self.straggler_mode = match value.to_ascii_lowercase().as_str() {
                    "slowdown" | "factor" => StragglerKind::Slowdown,
                    "fixed-delay" | "fixed" | "delay" => StragglerKind::FixedDelay,
                    "disconnect" => StragglerKind::Disconnect,
                    _ => return Err(Error::Configuration(format!("unknown straggler mode '{value}'"))),
                }
            }
            "straggler-magnitude" => self.straggler_magnitude = parse(&key, value)?,
            "dataset" => {
                let header = matches!(self.dataset, DatasetSource::Csv { header: true, .. });
                self.dataset = match value {
                    "synthetic" | "synth" => match self.dataset {
                        DatasetSource::Synthetic { .. } => self.dataset.clone(),
                        _ => DatasetSource::Synthetic { rows: 400, cols: 20 },
                    },
                    path => DatasetSource::Csv { path: PathBuf::from(path), header },
                }
            }
            "rows" | "cols" => {
                let v: usize = parse(&key, value)?;
                match &mut self.dataset {
                    DatasetSource::Synthetic { rows, cols } => *(if key == "rows" { rows } else { cols }) = v,
                    DatasetSource::Csv { .. } => {
                        return Err(Error::Configuration(format!("{key} only applies to the synthetic dataset")))
                    }
                }
            }
            "header" => {
                let v = parse_bool(&key, value)?;
                match &mut self.dataset {
                    DatasetSource::Csv { header, .. } => *header = v,
                    DatasetSource::Synthetic { .. } if !v => {}
                    DatasetSource::Synthetic { .. } => {
                        return Err(Error::Configuration("header only applies to a csv dataset".into()))
                    }
                }
            }
            "data-seed" => self.data_seed = parse(&key, value)?,
            "weight-seed" => self.weight_seed = parse(&key, value)?,
            "rlnc-seed" => self.rlnc_seed = parse(&key, value)?,
            "straggler-seed" => self.straggler_seed = parse(&key, value)?,
            "transport" => self.transport = value.parse().map_err(|e: Error| Error::Configuration(e.to_string()))?,
            "deterministic" => self.deterministic = parse_bool(&key, value)?,
            "deadline-ms" => {
                self.deadline_ms = match value {
                    "" | "none" | "off" => None,
                    v => Some(parse(&key, v)?),
                }
            }
            "output" => self.output = if value.is_empty() || value == "-" { None } else { Some(PathBuf::from(value)) },
            _ => return Err(Error::Configuration(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Applies a `key = value` document; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Configuration(format!("line {}: expected key = value", i + 1)))?;
            self.set(key, value).map_err(|e| Error::Configuration(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Configuration(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k > self.n {
            return Err(Error::Configuration(format!("need 1 <= k <= n, got k={} n={}", self.k, self.n)));
        }
        let count = match &self.stragglers {
            Stragglers::Count(c) => *c,
            Stragglers::Ids(ids) => ids.len(),
        };
        if count > self.n {
            return Err(Error::Configuration(format!("{count} stragglers exceed n={}", self.n)));
        }
        if let Stragglers::Ids(ids) = &self.stragglers {
            if let Some(bad) = ids.iter().find(|&&id| id >= self.n) {
                return Err(Error::Configuration(format!("straggler id {bad} out of range for n={}", self.n)));
            }
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) || !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Configuration("eta must be positive and lambda non-negative".into()));
        }
        if let DatasetSource::Synthetic { rows, cols } = self.dataset {
            if rows == 0 || cols == 0 {
                return Err(Error::Configuration("synthetic dataset needs rows, cols >= 1".into()));
            }
        }
        self.policy()?.validate(self.n).map_err(|e| Error::Configuration(e.to_string()))
    }

    pub fn hyper(&self) -> Hyper {
        Hyper { eta: self.eta, lambda: self.lambda, num_iter: self.num_iter }
    }

    pub fn straggler_mode(&self) -> Result<StragglerMode> {
        let m = self.straggler_magnitude;
        Ok(match self.straggler_mode {
            StragglerKind::Slowdown => StragglerMode::SlowdownFactor(m),
            StragglerKind::FixedDelay => {
                if !(m >= 0.0 && m.is_finite()) {
                    return Err(Error::Configuration(format!("delay must be non-negative, got {m}")));
                }
                StragglerMode::FixedDelay(Duration::from_secs_f64(m / 1000.0))
            }
            StragglerKind::Disconnect => {
                if !(m >= 0.0 && m.fract() == 0.0) {
                    return Err(Error::Configuration(format!("disconnect iteration must be a whole number, got {m}")));
                }
                StragglerMode::Disconnect { at_iter: m as u64 }
            }
        })
    }

    pub fn policy(&self) -> Result<StragglerPolicy> {
        let mode = self.straggler_mode()?;
        match &self.stragglers {
            Stragglers::Count(0) => Ok(StragglerPolicy::none()),
            Stragglers::Count(c) => StragglerPolicy::random(*c, self.n, self.straggler_seed, mode)
                .map_err(|e| Error::Configuration(e.to_string())),
            Stragglers::Ids(ids) => Ok(StragglerPolicy::explicit(ids.iter().copied(), mode)),
        }
    }

    pub fn deadline(&self) -> Option<Duration> {
        self.deadline_ms.map(Duration::from_millis)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_overrides() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_text("# demo\nn = 8\nk=5 # trailing\nscheme = rlnc\nmodel=svm\nstragglers = 1,4\n").unwrap();
        assert_eq!((cfg.n, cfg.k, cfg.scheme, cfg.model), (8, 5, Scheme::Rlnc, Model::Svm));
        assert_eq!(cfg.stragglers, Stragglers::Ids(vec![1, 4]));
        cfg.set("num_iter", "7").unwrap();
        assert_eq!(cfg.num_iter, 7);
        cfg.validate().unwrap();
    }

    #[test]
    fn rejects_bad_input() {
        let mut cfg = ExperimentConfig::default();
        assert!(cfg.apply_text("n 5").is_err());
        assert!(cfg.set("bogus", "1").is_err());
        assert!(cfg.set("n", "five").is_err());
        cfg.set("k", "6").unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn csv_dataset_keys() {
        let mut cfg = ExperimentConfig::default();
        cfg.set("dataset", "/tmp/data.csv").unwrap();
        cfg.set("header", "true").unwrap();
        assert_eq!(cfg.dataset, DatasetSource::Csv { path: "/tmp/data.csv".into(), header: true });
        assert!(cfg.set("rows", "10").is_err());
    }

    #[test]
    fn every_key_is_accepted() {
        let sample = |key: &str| match key {
            "scheme" => "rs",
            "model" => "lr",
            "straggler-mode" => "fixed-delay",
            "dataset" => "synthetic",
            "header" | "deterministic" => "false",
            "transport" => "loopback",
            "output" => "out.csv",
            "eta" | "lambda" => "0.5",
            _ => "3",
        };
        for key in KEYS {
            ExperimentConfig::default().set(key, sample(key)).unwrap_or_else(|e| panic!("{key}: {e}"));
        }
    }
}
