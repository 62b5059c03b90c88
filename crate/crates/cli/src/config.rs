//! Layered run configuration: command-line flags, then `HYPERHATE_*`
//! environment variables (both resolved by clap), then a flat `key=value`
//! config file, then built-in defaults.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{Context, Result};

use crate::UsageError;

/// Values read from a `key=value` config file.
#[derive(Debug, Default)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
    origin: Option<PathBuf>,
}

impl ConfigFile {
    /// Parses `path` (if any), rejecting keys outside `allowed`. Blank lines
    /// and lines starting with `#` are ignored; keys may use `-` or `_`.
    pub fn load(path: Option<&Path>, allowed: &[&str]) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config file {}", path.display()))?;
        Self::parse(&text, allowed, path)
    }

    fn parse(text: &str, allowed: &[&str], path: &Path) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                UsageError(format!("{}:{}: expected key=value, got '{line}'", path.display(), no + 1))
            })?;
            let key = key.trim().replace('_', "-");
            if !allowed.contains(&key.as_str()) {
                return Err(UsageError(format!(
                    "{}:{}: unknown key '{key}' (expected one of: {})",
                    path.display(),
                    no + 1,
                    allowed.join(", ")
                ))
                .into());
            }
            values.insert(key, value.trim().to_string());
        }
        Ok(Self {
            values,
            origin: Some(path.to_path_buf()),
        })
    }

    /// The flag/env value if present, else the file value parsed as `T`.
    pub fn pick<T>(&self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse().map(Some).map_err(|e| {
                let origin = self.origin.as_deref().unwrap_or(Path::new("<config>"));
                UsageError(format!("{}: invalid value '{raw}' for '{key}': {e}", origin.display())).into()
            }),
        }
    }

    /// As [`pick`](Self::pick), falling back to `default`.
    pub fn pick_or<T>(&self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.pick(flag, key)?.unwrap_or(default))
    }

    /// As [`pick`](Self::pick) for a value that has no default.
    pub fn require<T>(&self, flag: Option<T>, key: &str) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.pick(flag, key)?
            .ok_or_else(|| UsageError(format!("missing required setting --{key}")).into())
    }
}

/// The fully resolved settings of one run, in a stable order. Its text form
/// is itself a valid config file, so `--config run_config.txt` repeats a run.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct RunConfig {
    pub command: String,
    pub entries: Vec<(String, String)>,
}

impl RunConfig {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            entries: Vec::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("# hyperhate {} run configuration\n", self.command);
        for (k, v) in &self.entries {
            out.push_str(&format!("{k}={v}\n"));
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join("run_config.txt");
        std::fs::write(&path, self.to_text()).with_context(|| format!("writing {}", path.display()))
    }
}
