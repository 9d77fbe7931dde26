//! Flat `key = value` run configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Duration;

use cok_core::client::{ClientConfig, ClientMode};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Every tunable of the pipeline, with its default.
#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

const DEFAULTS: &[(&str, &str)] = &[
    ("seed", "0"),
    ("workers", "1"),
    ("min_support", "1000"),
    ("min_confidence", "0.6"),
    ("composed_min_support", "1"),
    ("max_hop", "4"),
    ("setting", "anonymized"),
    ("per_rule", "6"),
    ("polisher", "mock"),
    ("max_trials", "0"),
    ("train_rule_fraction", "0.5"),
    ("id_holdout", "0.34"),
    ("bucket_size", "0"),
    ("client", "mock"),
    ("endpoint", "http://127.0.0.1:8000/v1/chat/completions"),
    ("model", "gpt-3.5-turbo"),
    ("token_env", "COK_API_TOKEN"),
    ("timeout_secs", "30"),
    ("max_retries", "2"),
    ("parallelism", "4"),
    ("debug", "false"),
    ("templates", "builtin"),
];

impl Default for Config {
    fn default() -> Self {
        Self { values: DEFAULTS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect() }
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("config line {}: expected key = value", i + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
                Self::parse(&text)
            }
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_owned();
                Ok(())
            }
            None => Err(CliError::Usage(format!("unknown config key `{key}`"))),
        }
    }

    pub fn set_opt<T: ToString>(&mut self, key: &str, value: Option<T>) -> Result<(), CliError> {
        match value {
            Some(v) => self.set(key, &v.to_string()),
            None => Ok(()),
        }
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).expect("known key")
    }

    pub fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .parse()
            .map_err(|e| CliError::Usage(format!("config `{key}` = `{}`: {e}", self.get(key))))
    }

    /// Canonical `key=value` lines.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.render().as_bytes()))
    }

    pub fn client(&self) -> Result<ClientConfig, CliError> {
        let mode = match self.get("client") {
            "mock" => ClientMode::Mock,
            "live" => ClientMode::Live,
            other => return Err(CliError::Usage(format!("client must be mock or live, got `{other}`"))),
        };
        Ok(ClientConfig {
            endpoint: self.get("endpoint").to_owned(),
            model: self.get("model").to_owned(),
            token_env: self.get("token_env").to_owned(),
            timeout: Duration::from_secs(self.parsed("timeout_secs")?),
            max_retries: self.parsed("max_retries")?,
            parallelism: self.parsed("parallelism")?,
            mode,
            debug: self.parsed("debug")?,
        })
    }
}

/// Seed for one stage: the first eight bytes of `sha256("{seed}:{stage}")`,
/// big-endian.
pub fn stage_seed(seed: u64, stage: &str) -> u64 {
    let digest = Sha256::digest(format!("{seed}:{stage}").as_bytes());
    u64::from_be_bytes(digest[..8].try_into().expect("eight bytes"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_override() {
        let mut cfg = Config::parse("# run\nmin_support = 5\nseed=9 # trailing\n").unwrap();
        assert_eq!(cfg.get("min_support"), "5");
        assert_eq!(cfg.parsed::<u64>("seed").unwrap(), 9);
        cfg.set_opt("min_support", Some(7)).unwrap();
        assert_eq!(cfg.get("min_support"), "7");
        assert!(matches!(Config::parse("bogus = 1"), Err(CliError::Usage(_))));
        assert!(matches!(Config::parse("no equals"), Err(CliError::Usage(_))));
    }

    #[test]
    fn hash_and_seeds_are_stable() {
        assert_eq!(Config::default().hash(), Config::default().hash());
        assert_ne!(stage_seed(1, "select"), stage_seed(1, "generate"));
        assert_eq!(stage_seed(1, "select"), stage_seed(1, "select"));
    }
}
