//! Flat `key = value` configuration files.
//!
//! One entry per line. Keys are dotted paths (`model.0.a`), values are a
//! scalar token or a bracketed list of numbers (`[1, 0.5, 2]`). Blank lines
//! and lines starting with `#` are ignored.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use nalgebra::DMatrix;

use super::BenchError;
use crate::weights::WeightVector;
use crate::wtt::{sticky_transition_matrix, WttConfig, WttKind};

#[derive(Debug, Clone, PartialEq)]
pub enum ConfigValue {
    Scalar(String),
    List(Vec<f64>),
}

#[derive(Debug, Clone, Default)]
pub struct FlatConfig {
    entries: BTreeMap<String, (ConfigValue, usize)>,
    used: RefCell<BTreeSet<String>>,
}

impl FromStr for FlatConfig {
    type Err = BenchError;

    fn from_str(text: &str) -> Result<Self, BenchError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.trim();
            if body.is_empty() || body.starts_with('#') {
                continue;
            }
            let (key, value) = body.split_once('=').ok_or_else(|| BenchError::Parse {
                line,
                message: format!("expected 'key = value', got '{body}'"),
            })?;
            let key = key.trim();
            if key.is_empty() || key.split('.').any(str::is_empty) || key.contains(char::is_whitespace) {
                return Err(BenchError::Parse {
                    line,
                    message: format!("malformed key '{key}'"),
                });
            }
            let value = parse_value(value.trim()).map_err(|message| BenchError::Parse { line, message })?;
            if entries.insert(key.to_string(), (value, line)).is_some() {
                return Err(BenchError::Parse {
                    line,
                    message: format!("duplicate key '{key}'"),
                });
            }
        }
        Ok(Self {
            entries,
            used: RefCell::default(),
        })
    }
}

fn parse_value(v: &str) -> Result<ConfigValue, String> {
    if let Some(inner) = v.strip_prefix('[') {
        let inner = inner
            .strip_suffix(']')
            .ok_or_else(|| format!("unterminated list '{v}'"))?;
        let items = inner
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| format!("list entry '{s}' is not a finite number"))
            })
            .collect::<Result<Vec<_>, _>>()?;
        return Ok(ConfigValue::List(items));
    }
    if v.is_empty() {
        return Err("missing value".into());
    }
    Ok(ConfigValue::Scalar(v.trim_matches('"').to_string()))
}

impl FlatConfig {
    pub fn from_path(path: &std::path::Path) -> Result<Self, BenchError> {
        std::fs::read_to_string(path)?.parse()
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    fn raw(&self, key: &str) -> Option<&ConfigValue> {
        let v = self.entries.get(key).map(|(v, _)| v);
        if v.is_some() {
            self.used.borrow_mut().insert(key.to_string());
        }
        v
    }

    pub fn str(&self, key: &str) -> Result<Option<&str>, BenchError> {
        match self.raw(key) {
            None => Ok(None),
            Some(ConfigValue::Scalar(s)) => Ok(Some(s)),
            Some(ConfigValue::List(_)) => Err(BenchError::config(key, "expected a scalar, found a list")),
        }
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<Option<T>, BenchError>
    where
        T::Err: std::fmt::Display,
    {
        match self.str(key)? {
            None => Ok(None),
            Some(s) => s
                .parse()
                .map(Some)
                .map_err(|e| BenchError::config(key, format!("cannot parse '{s}': {e}"))),
        }
    }

    pub fn parse_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, BenchError>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.parse(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T, BenchError>
    where
        T::Err: std::fmt::Display,
    {
        self.parse(key)?.ok_or_else(|| BenchError::config(key, "missing"))
    }

    /// A finite number.
    pub fn f64(&self, key: &str) -> Result<Option<f64>, BenchError> {
        match self.parse::<f64>(key)? {
            Some(x) if !x.is_finite() => Err(BenchError::config(key, "must be finite")),
            other => Ok(other),
        }
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64, BenchError> {
        Ok(self.f64(key)?.unwrap_or(default))
    }

    /// A list; a lone scalar is accepted as a one-element list.
    pub fn list(&self, key: &str) -> Result<Option<Vec<f64>>, BenchError> {
        match self.raw(key) {
            None => Ok(None),
            Some(ConfigValue::List(v)) => Ok(Some(v.clone())),
            Some(ConfigValue::Scalar(_)) => Ok(Some(vec![self.f64(key)?.unwrap_or_default()])),
        }
    }

    /// A row-major `rows × cols` matrix.
    pub fn matrix(&self, key: &str, rows: usize, cols: usize) -> Result<Option<DMatrix<f64>>, BenchError> {
        match self.list(key)? {
            None => Ok(None),
            Some(v) if v.len() == rows * cols => Ok(Some(DMatrix::from_row_slice(rows, cols, &v))),
            Some(v) => Err(BenchError::config(
                key,
                format!("expected {rows}x{cols} = {} entries, found {}", rows * cols, v.len()),
            )),
        }
    }

    pub fn require_matrix(&self, key: &str, rows: usize, cols: usize) -> Result<DMatrix<f64>, BenchError> {
        self.matrix(key, rows, cols)?
            .ok_or_else(|| BenchError::config(key, "missing"))
    }

    /// Keys present in the file that no lookup has touched.
    pub fn unused_keys(&self) -> Vec<String> {
        let used = self.used.borrow();
        self.entries
            .keys()
            .filter(|k| !used.contains(*k))
            .cloned()
            .collect()
    }

    /// Fails on the first key that was never read, which catches typos.
    pub fn reject_unused(&self) -> Result<(), BenchError> {
        match self.unused_keys().into_iter().next() {
            Some(key) => Err(BenchError::config(&key, "unknown key")),
            None => Ok(()),
        }
    }

    /// Weight-transition operator from `wtt.kind` and its parameter keys:
    /// `wtt.alpha`, `wtt.constants`, `wtt.transition` (row-major, or
    /// `wtt.stay` for a sticky matrix), `wtt.beta`.
    pub fn wtt(&self, k: usize) -> Result<WttConfig, BenchError> {
        let kind: WttKind = self
            .str("wtt.kind")?
            .unwrap_or("identity")
            .parse()
            .map_err(|e: crate::Error| BenchError::config("wtt.kind", e.to_string()))?;
        let cfg = match kind {
            WttKind::Identity => WttConfig::identity(),
            WttKind::Forgetting => WttConfig::forgetting(self.f64("wtt.alpha")?.ok_or_else(|| BenchError::config("wtt.alpha", "missing"))?),
            WttKind::Constant => {
                let c = self
                    .list("wtt.constants")?
                    .ok_or_else(|| BenchError::config("wtt.constants", "missing"))?;
                WttConfig::constant(
                    WeightVector::new(c).map_err(|e| BenchError::config("wtt.constants", e.to_string()))?,
                )
            }
            WttKind::Markov => match self.matrix("wtt.transition", k, k)? {
                Some(t) => WttConfig::markov(t),
                None => WttConfig::markov(sticky_transition_matrix(k, self.f64_or("wtt.stay", 0.9)?)),
            },
            WttKind::PolyaUrn => {
                let beta = match self.list("wtt.beta")? {
                    None => vec![1; k],
                    Some(b) => b
                        .iter()
                        .map(|&x| {
                            if x >= 1.0 && x.fract() == 0.0 && x <= u32::MAX as f64 {
                                Ok(x as u32)
                            } else {
                                Err(BenchError::config("wtt.beta", format!("{x} is not a positive integer")))
                            }
                        })
                        .collect::<Result<Vec<_>, _>>()?,
                };
                WttConfig::polya_urn(beta)
            }
        };
        cfg.validate(k)
            .map_err(|e| BenchError::config("wtt.kind", e.to_string()))?;
        Ok(cfg)
    }
}
