//! Plain-text `key = value` configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::enhancer::{EmbeddingMode, Scale};
use crate::error::{Error, Result};

/// Parses `key = value` lines. Blank lines and lines starting with `#` are
/// skipped; duplicate keys are an error.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs: Vec<(String, String)> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got {line:?}", n + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", n + 1)));
        }
        if pairs.iter().any(|(p, _)| p == k) {
            return Err(Error::Config(format!("line {}: duplicate key `{k}`", n + 1)));
        }
        pairs.push((k.to_owned(), v.to_owned()));
    }
    Ok(pairs)
}

pub(crate) fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse {value:?}")))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub embedding_mode: EmbeddingMode,
    pub scale: Scale,
    pub segment_seconds: f64,
    pub batch_size: usize,
    pub lr: f64,
    pub steps: usize,
    pub seed: u64,
    pub manifest: PathBuf,
    pub validation_fraction: f64,
    /// Steps between validation passes; the last step is always validated.
    pub validate_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            embedding_mode: EmbeddingMode::Nts,
            scale: Scale::Toy,
            segment_seconds: 4.0,
            batch_size: 4,
            lr: 1e-3,
            steps: 2000,
            seed: 0,
            manifest: PathBuf::new(),
            validation_fraction: 0.1,
            validate_every: 100,
        }
    }
}

impl TrainConfig {
    pub const KEYS: [&'static str; 10] = [
        "embedding_mode",
        "scale",
        "segment_seconds",
        "batch_size",
        "lr",
        "steps",
        "seed",
        "manifest",
        "validation_fraction",
        "validate_every",
    ];

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("{what} must be positive")));
        if !(self.segment_seconds > 0.0 && self.segment_seconds.is_finite()) {
            return bad("segment_seconds");
        }
        if self.batch_size == 0 {
            return bad("batch_size");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr");
        }
        if self.steps == 0 {
            return bad("steps");
        }
        if self.validate_every == 0 {
            return bad("validate_every");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config("validation_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "embedding_mode" => self.embedding_mode = parse_value(key, value)?,
            "scale" => self.scale = parse_value(key, value)?,
            "segment_seconds" => self.segment_seconds = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "lr" => self.lr = parse_value(key, value)?,
            "steps" => self.steps = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "manifest" => self.manifest = PathBuf::from(value),
            "validation_fraction" => self.validation_fraction = parse_value(key, value)?,
            "validate_every" => self.validate_every = parse_value(key, value)?,
            _ => return Err(Error::Config(format!("unknown training key `{key}`"))),
        }
        Ok(())
    }

    /// Defaults overridden by `pairs`; unknown keys are rejected.
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (k, v) in pairs {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_pairs(&parse_key_values(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "embedding_mode = {}", self.embedding_mode);
        let _ = writeln!(s, "scale = {}", self.scale);
        let _ = writeln!(s, "segment_seconds = {}", self.segment_seconds);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "lr = {}", self.lr);
        let _ = writeln!(s, "steps = {}", self.steps);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "manifest = {}", self.manifest.display());
        let _ = writeln!(s, "validation_fraction = {}", self.validation_fraction);
        let _ = writeln!(s, "validate_every = {}", self.validate_every);
        s
    }
}
