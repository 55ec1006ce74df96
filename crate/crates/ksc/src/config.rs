//! Flat `key = value` config files merged with command-line flags.
//!
//! Blank lines and lines starting with `#` are ignored. Lists are
//! comma-separated. A flag given on the command line wins over the file;
//! any file key the command does not consume is rejected by name.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{CliError, CliResult};

/// Key/value pairs read from a config file, drained as a command consumes them.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigFile {
    entries: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key = value", lineno + 1)))?;
            let key = k.trim().replace('-', "_");
            if key.is_empty() {
                return Err(CliError::Config(format!("line {}: empty key", lineno + 1)));
            }
            if entries.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(CliError::Config(format!("duplicate key `{key}`")));
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| CliError::ConfigRead { path: path.to_path_buf(), source })?;
        Self::parse(&text)
    }

    /// `flag` if given, else the file value for `key`, else `default`.
    pub fn take<T>(&mut self, key: &str, flag: Option<T>, default: T) -> CliResult<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        let from_file = self.entries.remove(key);
        if let Some(v) = flag {
            return Ok(v);
        }
        match from_file {
            Some(s) => s.parse().map_err(|e| CliError::Config(format!("key `{key}`: {e}"))),
            None => Ok(default),
        }
    }

    /// List-valued variant of [`take`](Self::take); lists must be nonempty.
    pub fn take_list<T>(&mut self, key: &str, flag: Option<Vec<T>>, default: Vec<T>) -> CliResult<Vec<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        let from_file = self.entries.remove(key);
        let list = match (flag, from_file) {
            (Some(v), _) => v,
            (None, Some(s)) => parse_list(&s).map_err(|e| CliError::Config(format!("key `{key}`: {e}")))?,
            (None, None) => default,
        };
        if list.is_empty() {
            return Err(CliError::Config(format!("key `{key}`: list must be nonempty")));
        }
        Ok(list)
    }

    /// Errors on the first key nobody consumed.
    pub fn finish(self) -> CliResult<()> {
        match self.entries.into_keys().next() {
            Some(k) => Err(CliError::Config(format!("unknown config key `{k}`"))),
            None => Ok(()),
        }
    }
}

/// Parses `a,b,c`.
pub fn parse_list<T>(s: &str) -> Result<Vec<T>, String>
where
    T: FromStr,
    T::Err: Display,
{
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<T>().map_err(|e| format!("`{p}`: {e}")))
        .collect()
}
