//! Run configuration: defaults, optional key=value config file, and command
//! line flags, merged with the precedence CLI > file > defaults. The manifest
//! written next to every run's outputs uses the same key=value format, so a
//! run can be reproduced with `--config-file <outdir>/manifest.txt`.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, Context, Result};

/// Parsed config file with usage tracking so unknown keys can be reported.
pub struct FileConfig {
    map: BTreeMap<String, String>,
    source: String,
    used: RefCell<BTreeSet<String>>,
}

impl FileConfig {
    pub fn empty() -> Self {
        FileConfig {
            map: BTreeMap::new(),
            source: String::new(),
            used: RefCell::new(BTreeSet::new()),
        }
    }

    /// Parse `key = value` lines; `#` starts a comment, blank lines ignored.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        let mut map = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!(
                    "{}:{}: expected `key = value`, got `{line}`",
                    path.display(),
                    lineno + 1
                );
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if map.insert(key.clone(), value).is_some() {
                bail!("{}: duplicate key `{key}`", path.display());
            }
        }
        Ok(FileConfig {
            map,
            source: path.display().to_string(),
            used: RefCell::new(BTreeSet::new()),
        })
    }

    fn lookup(&self, key: &str) -> Option<&str> {
        self.used.borrow_mut().insert(key.to_string());
        self.map.get(key).map(String::as_str)
    }

    /// Resolve one value: CLI flag beats file value beats default.
    pub fn merge<T>(&self, key: &str, cli: Option<T>, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.merge_opt(key, cli)? {
            Some(v) => Ok(v),
            None => Ok(default),
        }
    }

    /// As `merge` but without a default.
    pub fn merge_opt<T>(&self, key: &str, cli: Option<T>) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        let file_value = self.lookup(key);
        if let Some(v) = cli {
            if file_value.is_some() {
                eprintln!(
                    "note: --{key} from the command line overrides the config file value"
                );
            }
            return Ok(Some(v));
        }
        match file_value {
            Some(raw) => {
                let parsed = raw
                    .parse::<T>()
                    .map_err(|e| anyhow::anyhow!("config key `{key}` = `{raw}`: {e}"))?;
                Ok(Some(parsed))
            }
            None => Ok(None),
        }
    }

    /// Error out on keys that no flag consumed.
    pub fn finish(&self) -> Result<()> {
        let used = self.used.borrow();
        let unknown: Vec<&String> = self.map.keys().filter(|k| !used.contains(*k)).collect();
        if !unknown.is_empty() {
            bail!(
                "{}: unknown key(s): {}",
                if self.source.is_empty() {
                    "config"
                } else {
                    &self.source
                },
                unknown
                    .iter()
                    .map(|s| s.as_str())
                    .collect::<Vec<_>>()
                    .join(", ")
            );
        }
        Ok(())
    }
}

/// Comma-separated list of reals, e.g. `0.5,0.6,0.7,0.8`.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatList(pub Vec<f64>);

impl FromStr for FloatList {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let values = s
            .split(',')
            .map(|part| {
                part.trim()
                    .parse::<f64>()
                    .map_err(|e| format!("`{part}`: {e}"))
            })
            .collect::<std::result::Result<Vec<f64>, String>>()?;
        if values.is_empty() {
            return Err("empty list".to_string());
        }
        Ok(FloatList(values))
    }
}

impl Display for FloatList {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", parts.join(","))
    }
}

/// Write the effective configuration as a reusable config file. `notes` are
/// emitted as comments so they never collide with config keys.
pub fn write_manifest(
    path: &Path,
    subcommand: &str,
    pairs: &[(String, String)],
    notes: &[String],
) -> Result<()> {
    let mut text = String::new();
    text.push_str(&format!("# sae {subcommand} manifest\n"));
    text.push_str(&format!("# code version {}\n", env!("CARGO_PKG_VERSION")));
    text.push_str(&format!(
        "# reusable via: sae {subcommand} --config-file <this file>\n"
    ));
    for note in notes {
        text.push_str(&format!("# {note}\n"));
    }
    for (key, value) in pairs {
        text.push_str(&format!("{key} = {value}\n"));
    }
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}
