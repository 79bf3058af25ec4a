use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Pipeline variant. The last three differ only in how questions are embedded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "random")]
    Random,
    #[serde(rename = "ai-only")]
    AiOnly,
    #[serde(rename = "ai-only+bl")]
    AiOnlyBleach,
    #[serde(rename = "ai-only+bl+sc")]
    AiOnlyBleachScale,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Random, Method::AiOnly, Method::AiOnlyBleach, Method::AiOnlyBleachScale];

    pub fn label(self) -> &'static str {
        match self {
            Method::Random => "random",
            Method::AiOnly => "ai-only",
            Method::AiOnlyBleach => "ai-only+bl",
            Method::AiOnlyBleachScale => "ai-only+bl+sc",
        }
    }

    pub fn bleaches(self) -> bool {
        matches!(self, Method::AiOnlyBleach | Method::AiOnlyBleachScale)
    }

    pub fn scales(self) -> bool {
        self == Method::AiOnlyBleachScale
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Method {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "random" => Ok(Method::Random),
            "ai-only" | "tfidf" => Ok(Method::AiOnly),
            "ai-only+bl" | "ai-only+bleach" => Ok(Method::AiOnlyBleach),
            "ai-only+bl+sc" | "ai-only+bleach+scale" => Ok(Method::AiOnlyBleachScale),
            other => Err(ConfigError::Invalid { key: "method".into(), message: format!("unknown method `{other}`") }),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("invalid value for `{key}`: {message}")]
    Invalid { key: String, message: String },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key: key.to_string(), message: message.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InductionConfig {
    /// Cluster count; `None` means one cluster per gold slot.
    pub k: Option<usize>,
    pub seed: u64,
    /// k-means restarts; seeds `seed..seed+restarts`, lowest inertia kept.
    pub restarts: usize,
    pub top_k: usize,
    pub tau: f64,
    pub theta: f64,
    pub method: Method,
    /// Per-token weight multipliers, applied when the method scales.
    pub scale: BTreeMap<String, f64>,
    pub reader_threshold: f64,
    pub rho: f64,
}

impl Default for InductionConfig {
    fn default() -> Self {
        InductionConfig {
            k: None,
            seed: 1,
            restarts: 1,
            top_k: 5,
            tau: 0.35,
            theta: 0.8,
            method: Method::AiOnlyBleachScale,
            scale: BTreeMap::new(),
            reader_threshold: 0.2,
            rho: 0.5,
        }
    }
}

pub const DEFAULT_SCALE_FACTOR: f64 = 10.0;

impl InductionConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.k == Some(0) {
            return Err(invalid("k", "must be at least 1"));
        }
        if self.restarts == 0 {
            return Err(invalid("restarts", "must be at least 1"));
        }
        if self.top_k == 0 {
            return Err(invalid("top_k", "must be at least 1"));
        }
        for (key, v) in
            [("tau", self.tau), ("theta", self.theta), ("rho", self.rho), ("reader_threshold", self.reader_threshold)]
        {
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid(key, format!("{v} is outside [0, 1]")));
            }
        }
        for (word, f) in &self.scale {
            if !(f.is_finite() && *f > 0.0) {
                return Err(invalid("scale", format!("factor for `{word}` must be positive")));
            }
        }
        Ok(())
    }

    /// The scale map the pipeline actually uses for this method.
    pub fn effective_scale(&self) -> BTreeMap<String, f64> {
        if self.method.scales() {
            self.scale.iter().map(|(w, f)| (w.to_lowercase(), *f)).collect()
        } else {
            BTreeMap::new()
        }
    }

    /// Applies one `key=value` setting. Keys: k, seed, restarts, top_k, tau,
    /// theta, method, scale (`word=factor` or bare `word` for factor 10),
    /// reader_threshold, rho.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let key = key.trim().replace('-', "_");
        let value = value.trim();
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T, ConfigError> {
            v.parse().map_err(|_| invalid(key, format!("`{v}` is not a number")))
        }
        match key.as_str() {
            "k" => self.k = if value == "auto" { None } else { Some(num(&key, value)?) },
            "seed" => self.seed = num(&key, value)?,
            "restarts" => self.restarts = num(&key, value)?,
            "top_k" => self.top_k = num(&key, value)?,
            "tau" => self.tau = num(&key, value)?,
            "theta" => self.theta = num(&key, value)?,
            "rho" => self.rho = num(&key, value)?,
            "reader_threshold" => self.reader_threshold = num(&key, value)?,
            "method" => self.method = value.parse()?,
            "scale" => {
                for item in value.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                    let (word, factor) = parse_scale(item)?;
                    self.scale.insert(word, factor);
                }
            }
            _ => return Err(invalid(&key, "unknown key")),
        }
        Ok(())
    }

    /// Reads a flat `key = value` file; `#` starts a comment.
    pub fn apply_file(&mut self, raw: &str) -> Result<(), ConfigError> {
        for (i, line) in raw.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line: i + 1,
                    message: format!("expected key = value, got `{line}`"),
                });
            };
            self.set(k, v).map_err(|e| ConfigError::Syntax { line: i + 1, message: e.to_string() })?;
        }
        Ok(())
    }
}

/// `word=factor` or `word` (default factor).
pub fn parse_scale(item: &str) -> Result<(String, f64), ConfigError> {
    let (word, factor) = match item.split_once('=') {
        Some((w, f)) => {
            let f: f64 = f.trim().parse().map_err(|_| invalid("scale", format!("bad factor in `{item}`")))?;
            (w.trim(), f)
        }
        None => (item.trim(), DEFAULT_SCALE_FACTOR),
    };
    if word.is_empty() {
        return Err(invalid("scale", "empty word"));
    }
    if !(factor.is_finite() && factor > 0.0) {
        return Err(invalid("scale", format!("factor for `{word}` must be positive")));
    }
    Ok((word.to_lowercase(), factor))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = InductionConfig::default();
        c.validate().unwrap();
        assert_eq!((c.top_k, c.tau, c.theta, c.rho), (5, 0.35, 0.8, 0.5));
    }

    #[test]
    fn file_parsing() {
        let mut c = InductionConfig::default();
        c.apply_file("# comment\nk = 4\nseed=3\nscale = increase=10, decrease\nmethod = ai-only+bleach\n").unwrap();
        assert_eq!(c.k, Some(4));
        assert_eq!(c.seed, 3);
        assert_eq!(c.scale["increase"], 10.0);
        assert_eq!(c.scale["decrease"], 10.0);
        assert_eq!(c.method, Method::AiOnlyBleach);
        assert!(c.effective_scale().is_empty());
    }

    #[test]
    fn bad_lines() {
        let mut c = InductionConfig::default();
        assert!(matches!(c.apply_file("k 4"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(c.apply_file("bogus = 1").is_err());
        assert!(c.set("scale", "x=-1").is_err());
        c.tau = 1.5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.label().parse::<Method>().unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{}\"", m.label()));
        }
    }
}
