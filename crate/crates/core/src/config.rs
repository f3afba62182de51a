//! Flat `key=value` run configuration and its manifest echo.

use std::path::Path;

use thiserror::Error;

use crate::bench::WorkloadConfig;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("{0}")]
    Invalid(String),
    #[error("cannot read config: {0}")]
    Io(String),
}

/// Workload parameters plus the commutation harness sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub workload: WorkloadConfig,
    /// Counted event pairs per repetition.
    pub horizon: usize,
    pub reps: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            workload: WorkloadConfig::default(),
            horizon: 1000,
            reps: 30,
        }
    }
}

fn num<T: std::str::FromStr>(v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse `{v}`"))
}

fn unit(v: f64) -> Result<f64, String> {
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside [0, 1]"))
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut c = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Parse {
                line: i + 1,
                msg: format!("expected key=value, got `{line}`"),
            })?;
            let (k, v) = (k.trim(), v.trim());
            c.set(k, v).map_err(|e| match e {
                Some(msg) => ConfigError::Parse { line: i + 1, msg: format!("{k}: {msg}") },
                None => ConfigError::UnknownKey(k.to_string()),
            })?;
        }
        c.workload.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if c.horizon == 0 || c.reps < 30 {
            return Err(ConfigError::Invalid(format!(
                "need horizon > 0 and reps >= 30, got {} and {}",
                c.horizon, c.reps
            )));
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// `Err(None)` for an unknown key.
    fn set(&mut self, k: &str, v: &str) -> Result<(), Option<String>> {
        let w = &mut self.workload;
        match k {
            "n" => w.n = num(v)?,
            "m" => w.m = num(v)?,
            "alpha" => {
                let a: f64 = num(v)?;
                if !(a >= 0.0 && a.is_finite()) {
                    return Err(Some(format!("{a} must be finite and >= 0")));
                }
                w.alpha = a;
            }
            "hot_set" => w.hot_set = unit(num(v)?)?,
            "read_ratio" => w.read_ratio = unit(num(v)?)?,
            "value_min" => w.value_min = num(v)?,
            "value_max" => w.value_max = num(v)?,
            "dup_ratio" => w.dup_ratio = unit(num(v)?)?,
            "seed" => w.seed = num(v)?,
            "warmup_ops" => w.warmup_ops = num(v)?,
            "window_ops" => w.window_ops = num(v)?,
            "trials" => w.trials = num(v)?,
            "hops" => w.hops = num(v)?,
            "cache_capacity" => w.cache_capacity = num(v)?,
            "epsilon_hit_target" => w.epsilon_hit_target = unit(num(v)?)?,
            "fragment_bound" => w.fragment_bound = num(v)?,
            "segment_bytes" => w.segment_bytes = num(v)?,
            "bootstrap_resamples" => w.bootstrap_resamples = num(v)?,
            "trim" => w.trim = num(v)?,
            "horizon" => self.horizon = num(v)?,
            "reps" => self.reps = num(v)?,
            _ => return Err(None),
        }
        Ok(())
    }

    /// Every effective setting as `key=value` lines, parseable by
    /// [`RunConfig::parse`].
    pub fn manifest(&self) -> String {
        let w = &self.workload;
        let pairs: [(&str, String); 21] = [
            ("n", w.n.to_string()),
            ("m", w.m.to_string()),
            ("alpha", w.alpha.to_string()),
            ("hot_set", w.hot_set.to_string()),
            ("read_ratio", w.read_ratio.to_string()),
            ("value_min", w.value_min.to_string()),
            ("value_max", w.value_max.to_string()),
            ("dup_ratio", w.dup_ratio.to_string()),
            ("seed", w.seed.to_string()),
            ("warmup_ops", w.warmup_ops.to_string()),
            ("window_ops", w.window_ops.to_string()),
            ("trials", w.trials.to_string()),
            ("hops", w.hops.to_string()),
            ("cache_capacity", w.cache_capacity.to_string()),
            ("epsilon_hit_target", w.epsilon_hit_target.to_string()),
            ("fragment_bound", w.fragment_bound.to_string()),
            ("segment_bytes", w.segment_bytes.to_string()),
            ("bootstrap_resamples", w.bootstrap_resamples.to_string()),
            ("trim", w.trim.to_string()),
            ("horizon", self.horizon.to_string()),
            ("reps", self.reps.to_string()),
        ];
        pairs.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}
