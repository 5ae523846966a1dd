//! `key = value` configuration with command-line overrides.
//!
//! Blank lines and lines starting with `#` are ignored. Later assignments
//! replace earlier ones; [`Config::set`] is how flags override the file.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("invalid value {value:?} for `{key}`: {reason}")]
    Invalid {
        key: String,
        value: String,
        reason: String,
    },
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl FromStr for Config {
    type Err = ConfigError;

    fn from_str(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line: i + 1,
                    text: raw.to_string(),
                });
            };
            let key = k.trim();
            if key.is_empty() {
                return Err(ConfigError::Syntax {
                    line: i + 1,
                    text: raw.to_string(),
                });
            }
            cfg.set(key, v.trim());
        }
        Ok(cfg)
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io {
                path: path.display().to_string(),
                source,
            })?
            .parse()
    }

    /// Keys are case-sensitive; `-` and `_` are interchangeable.
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.values.insert(normalize(key), value.into());
    }

    /// Applies a `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<(), ConfigError> {
        let (k, v) = pair.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: 0,
            text: pair.to_string(),
        })?;
        self.set(k.trim(), v.trim());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(&normalize(key)).map(String::as_str)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.get(key).is_some()
    }

    pub fn get_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key).map(|v| parse_value(key, v)).transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get_opt(key)?.unwrap_or(default))
    }

    /// Comma-separated list.
    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .map(|v| {
                v.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| parse_value(key, s))
                    .collect()
            })
            .transpose()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.values.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

fn normalize(key: &str) -> String {
    key.trim().replace('-', "_")
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::Invalid {
        key: key.to_string(),
        value: value.to_string(),
        reason: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_overrides() {
        let mut cfg: Config =
            "# comment\nseed = 7\n\nrate=0.3\nrates = 0.2, 0.4,\nblock-size = 32\n"
                .parse()
                .unwrap();
        assert_eq!(cfg.get_or("seed", 0u64).unwrap(), 7);
        assert_eq!(cfg.get_list::<f64>("rates").unwrap(), Some(vec![0.2, 0.4]));
        assert_eq!(cfg.get("block_size"), Some("32"));
        cfg.set_pair("rate=0.5").unwrap();
        assert_eq!(cfg.get_opt::<f64>("rate").unwrap(), Some(0.5));
        assert_eq!(cfg.get_or("missing", 3usize).unwrap(), 3);
    }

    #[test]
    fn reports_errors() {
        assert!(matches!(
            "seed 7".parse::<Config>(),
            Err(ConfigError::Syntax { line: 1, .. })
        ));
        assert!(matches!(
            " = 3".parse::<Config>(),
            Err(ConfigError::Syntax { .. })
        ));
        let cfg: Config = "seed = x".parse().unwrap();
        assert!(matches!(
            cfg.get_opt::<u64>("seed"),
            Err(ConfigError::Invalid { .. })
        ));
    }
}
