use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

/// Environment variable that overrides `listen`.
pub const LISTEN_ENV: &str = "DBA_LISTEN";

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("invalid value for {key}: {value:?}")]
    Value { key: String, value: String },
    #[error("replicas must be >= 1")]
    NoReplicas,
    #[error("max_queue ({max_queue}) must be >= replicas ({replicas})")]
    QueueTooSmall { max_queue: usize, replicas: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DispatchPolicy {
    #[default]
    LeastBusy,
    RoundRobin,
}

impl fmt::Display for DispatchPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DispatchPolicy::LeastBusy => "least-busy",
            DispatchPolicy::RoundRobin => "round-robin",
        })
    }
}

impl FromStr for DispatchPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "least-busy" | "least_busy" | "least-connections" => Ok(Self::LeastBusy),
            "round-robin" | "round_robin" => Ok(Self::RoundRobin),
            other => Err(format!("unknown dispatch policy {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub listen: String,
    pub replicas: usize,
    pub base_latency_ms: f64,
    pub latency_jitter_ms: f64,
    /// `(model name, weight seed)` pairs.
    pub models: Vec<(String, u64)>,
    pub max_queue: usize,
    pub jpeg_enabled: bool,
    pub dispatch: DispatchPolicy,
    /// Seed for the latency jitter stream.
    pub seed: u64,
    /// When set, weights are read from `<dir>/<model>.tnw` instead of being
    /// generated from the seed.
    pub weights_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:8080".into(),
            replicas: 8,
            base_latency_ms: 100.0,
            latency_jitter_ms: 20.0,
            models: vec![
                ("tinynet-a".into(), 0),
                ("tinynet-b".into(), 1),
                ("tinynet-c".into(), 2),
            ],
            max_queue: 256,
            jpeg_enabled: true,
            dispatch: DispatchPolicy::LeastBusy,
            seed: 0,
            weights_dir: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::Value {
        key: key.into(),
        value: value.into(),
    })
}

fn parse_models(value: &str) -> Result<Vec<(String, u64)>, ConfigError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|entry| match entry.split_once(':') {
            Some((name, seed)) => Ok((name.trim().to_string(), parse("models", seed.trim())?)),
            None => Ok((entry.to_string(), 0)),
        })
        .collect()
}

impl ServiceConfig {
    /// Parses `key = value` lines; `#` starts a comment. Unspecified keys
    /// keep their defaults.
    pub fn parse_str(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or(ConfigError::Syntax { line: i + 1 })?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "listen" => cfg.listen = value.to_string(),
                "replicas" => cfg.replicas = parse(key, value)?,
                "base_latency_ms" => cfg.base_latency_ms = parse(key, value)?,
                "latency_jitter_ms" => cfg.latency_jitter_ms = parse(key, value)?,
                "models" => cfg.models = parse_models(value)?,
                "max_queue" => cfg.max_queue = parse(key, value)?,
                "jpeg_enabled" => cfg.jpeg_enabled = parse(key, value)?,
                "dispatch" => cfg.dispatch = parse(key, value)?,
                "seed" => cfg.seed = parse(key, value)?,
                "weights_dir" => {
                    cfg.weights_dir = (!value.is_empty()).then(|| PathBuf::from(value))
                }
                _ => {
                    return Err(ConfigError::UnknownKey {
                        line: i + 1,
                        key: key.to_string(),
                    })
                }
            }
        }
        if let Ok(listen) = std::env::var(LISTEN_ENV) {
            cfg.listen = listen;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.replicas == 0 {
            return Err(ConfigError::NoReplicas);
        }
        if self.max_queue < self.replicas {
            return Err(ConfigError::QueueTooSmall {
                max_queue: self.max_queue,
                replicas: self.replicas,
            });
        }
        for (key, v) in [
            ("base_latency_ms", self.base_latency_ms),
            ("latency_jitter_ms", self.latency_jitter_ms),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(ConfigError::Value {
                    key: key.into(),
                    value: v.to_string(),
                });
            }
        }
        Ok(())
    }
}
