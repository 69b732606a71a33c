//! Flag + config-file resolution. Every subcommand collects its flags into a
//! `KeyValues`, layers them over the optional `--config` file, and reads
//! typed values back from the merged set; the merged set is what gets logged.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use spc_core::trainer::{parse_key_values, KeyValues};
use spc_core::{Error, Result};

pub struct Resolved {
    pub kv: KeyValues,
}

impl Resolved {
    /// `file` values first, then every flag that was actually given.
    pub fn new(file: Option<&Path>, flags: KeyValues) -> Result<Self> {
        let mut kv = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::InvalidInput(format!("cannot read config {}: {e}", p.display())))?;
                parse_key_values(&text)?
            }
            None => KeyValues::default(),
        };
        kv.extend(&flags);
        Ok(Self { kv })
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.kv.parsed(key)
    }

    pub fn or<T: FromStr + std::fmt::Display>(&mut self, key: &str, default: T) -> Result<T> {
        match self.kv.parsed(key)? {
            Some(v) => Ok(v),
            None => {
                self.kv.set(key, &default);
                Ok(default)
            }
        }
    }

    pub fn str(&self, key: &str) -> Option<&str> {
        self.kv.get(key)
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.kv.get(key).map(PathBuf::from)
    }

    /// Writes the resolved settings as `key = value` lines.
    pub fn write_run_file(&self, path: &Path, command: &str) -> Result<()> {
        let mut text = format!("# spc {command}\ncommand = {command}\n");
        text.push_str(&self.kv.render());
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// `<out>.run.txt` next to a single-file output.
pub fn run_file_for(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".run.txt");
    PathBuf::from(s)
}

/// Flag collector: only flags the user passed end up in the set.
#[derive(Default)]
pub struct Flags(pub KeyValues);

impl Flags {
    pub fn put<T: std::fmt::Display>(&mut self, key: &str, v: &Option<T>) -> &mut Self {
        if let Some(v) = v {
            self.0.set(key, v);
        }
        self
    }

    pub fn put_path(&mut self, key: &str, v: &Option<PathBuf>) -> &mut Self {
        if let Some(v) = v {
            self.0.set(key, v.display());
        }
        self
    }

    pub fn flag(&mut self, key: &str, on: bool) -> &mut Self {
        if on {
            self.0.set(key, true);
        }
        self
    }

    pub fn done(&mut self) -> KeyValues {
        std::mem::take(&mut self.0)
    }
}
