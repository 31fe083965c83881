//! `key = value` settings files and flag/file/default resolution.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};

/// Keys accepted in a settings file. Names follow the long flags.
pub const KNOWN_KEYS: &[&str] = &[
    "data-dir",
    "out",
    "seed",
    "jobs",
    "bias",
    "offset",
    "epochs",
    "lr",
    "reduction",
    "minibatch",
    "particles",
    "hidden1",
    "hidden2",
    "data-gibbs-steps",
    "model-gibbs-steps",
    "averaging-kc",
    "metrics-interval",
    "subset-n",
    "grid",
    "ais-k",
    "ais-runs",
    "ais-clamped-runs",
    "ais-batch",
    "sigma2",
    "units",
    "directions",
    "mc-samples",
    "direction-kind",
    "count",
    "burn-in",
    "thin",
];

/// Keys written into manifests for provenance; ignored when read back.
const PROVENANCE_KEYS: &[&str] = &[
    "command",
    "version",
    "checkpoint",
    "status",
    "updates",
    "updates-per-epoch",
    "train-checksum",
    "train-n",
    "test-checksum",
    "test-n",
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected `key = value`", lineno + 1))?;
            let key = key.trim().replace('_', "-");
            if PROVENANCE_KEYS.contains(&key.as_str()) {
                continue;
            }
            if !KNOWN_KEYS.contains(&key.as_str()) {
                bail!("line {}: unknown setting `{key}`", lineno + 1);
            }
            values.insert(key, value.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn get<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.values
            .get(key)
            .map(|v| v.parse::<T>().map_err(|e| anyhow!("setting `{key} = {v}`: {e}")))
            .transpose()
    }

    /// Flag value if given, else the file value, else `default`.
    pub fn resolve<T>(&self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        match flag {
            Some(v) => Ok(v),
            None => Ok(self.get(key)?.unwrap_or(default)),
        }
    }

    /// Like [`Settings::resolve`] without a default.
    pub fn resolve_opt<T>(&self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.get(key),
        }
    }
}

/// Ordered `key = value` record of a run.
#[derive(Debug, Clone, Default)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        let mut m = Self::default();
        m.set("command", command);
        m.set("version", env!("CARGO_PKG_VERSION"));
        m
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn render(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        cdbm::data::write_atomic(&dir.join("run_manifest"), self.render().as_bytes())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_underscores() {
        let s = Settings::parse("# header\nlr = 0.001\nsubset_n=500  # trailing\n\n").unwrap();
        assert_eq!(s.get::<f64>("lr").unwrap(), Some(0.001));
        assert_eq!(s.get::<usize>("subset-n").unwrap(), Some(500));
        assert_eq!(s.get::<usize>("epochs").unwrap(), None);
    }

    #[test]
    fn flag_beats_file_beats_default() {
        let s = Settings::parse("epochs = 3").unwrap();
        assert_eq!(s.resolve(Some(5.0), "epochs", 10.0).unwrap(), 5.0);
        assert_eq!(s.resolve(None, "epochs", 10.0).unwrap(), 3.0);
        assert_eq!(s.resolve(None, "lr", 0.5).unwrap(), 0.5);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(Settings::parse("learning_rate = 1").is_err());
        assert!(Settings::parse("just words").is_err());
        let s = Settings::parse("seed = minus one").unwrap();
        assert!(s.get::<u64>("seed").is_err());
    }

    #[test]
    fn manifest_reads_back_as_settings() {
        let mut m = Manifest::new("train");
        m.set("lr", 0.0005);
        m.set("seed", 7);
        m.set("seed", 8);
        let s = Settings::parse(&m.render()).unwrap();
        assert_eq!(s.get::<u64>("seed").unwrap(), Some(8));
        assert_eq!(s.get::<f64>("lr").unwrap(), Some(0.0005));
    }
}
