//! Artifact writing. Numeric outputs never carry timings; those go to a
//! separate telemetry file so reruns are byte-identical.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use crate::config::RunConfig;

pub const SCHEMA_VERSION: u32 = 1;

/// 17 significant digits.
pub fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Serialize)]
pub struct Artifact<'a, T: Serialize> {
    pub schema_version: u32,
    pub command: &'a str,
    pub config_hash: String,
    pub config: &'a RunConfig,
    pub outputs: &'a T,
    pub warnings: &'a [String],
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct Telemetry {
    pub command: String,
    pub wall_ms: u128,
    pub threads: usize,
    /// (label, matrix dimension) pairs.
    pub dims: Vec<(String, usize)>,
}

/// Single writer for one output directory.
pub struct Writer {
    dir: PathBuf,
    pub written: Vec<PathBuf>,
}

impl Writer {
    pub fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: vec![],
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let p = self.path(name);
        let mut w =
            csv::Writer::from_path(&p).with_context(|| format!("writing {}", p.display()))?;
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
        self.written.push(p);
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let p = self.path(name);
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        std::fs::write(&p, s).with_context(|| format!("writing {}", p.display()))?;
        self.written.push(p);
        Ok(())
    }

    pub fn artifact<T: Serialize>(
        &mut self,
        command: &str,
        cfg: &RunConfig,
        outputs: &T,
        warnings: &[String],
    ) -> Result<()> {
        let a = Artifact {
            schema_version: SCHEMA_VERSION,
            command,
            config_hash: cfg.hash(),
            config: cfg,
            outputs,
            warnings,
        };
        self.json(&format!("{command}.json"), &a)
    }
}
