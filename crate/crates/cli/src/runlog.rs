//! Run directories: config echo, step log and evaluation JSON.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use mvrm_core::config::RunConfig;
use mvrm_core::error::{Error, Result};

pub const CONFIG_FILE: &str = "config.json";
pub const LOG_FILE: &str = "train.log";
pub const EVAL_FILE: &str = "eval.json";
pub const CKPT_FILE: &str = "model.ckpt";

/// Config from `path` (defaults when absent) with an optional seed override.
pub fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::Data(format!("{}: {e}", p.display())))?;
            RunConfig::from_json(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

/// Creates `dir` and echoes the config into it.
pub fn prepare(dir: &Path, cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut text = cfg.to_json();
    text.push('\n');
    fs::write(dir.join(CONFIG_FILE), text)?;
    Ok(())
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Mirrors `step=<n> loss=<x>` lines to stdout and the run's log file.
pub struct StepLog {
    path: PathBuf,
    out: BufWriter<File>,
    err: Option<io::Error>,
}

impl StepLog {
    pub fn create(dir: &Path) -> Result<Self> {
        let path = dir.join(LOG_FILE);
        let out = BufWriter::new(File::create(&path)?);
        Ok(Self { path, out, err: None })
    }

    pub fn step(&mut self, step: usize, loss: f64) {
        let line = format!("step={step} loss={loss:.6}");
        println!("{line}");
        if self.err.is_none() {
            if let Err(e) = writeln!(self.out, "{line}") {
                self.err = Some(e);
            }
        }
    }

    pub fn finish(mut self) -> Result<()> {
        if let Some(e) = self.err.take() {
            return Err(Error::Data(format!("{}: {e}", self.path.display())));
        }
        self.out.flush()?;
        Ok(())
    }
}

/// Parses a step log back into `(step, loss)` pairs.
pub fn read_log(path: &Path) -> Result<Vec<(usize, f64)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::Data(format!("{}:{}: expected `step=<n> loss=<x>`", path.display(), i + 1));
        let mut step = None;
        let mut loss = None;
        for field in line.split_whitespace() {
            match field.split_once('=') {
                Some(("step", v)) => step = v.parse::<usize>().ok(),
                Some(("loss", v)) => loss = v.parse::<f64>().ok(),
                _ => {}
            }
        }
        rows.push((step.ok_or_else(bad)?, loss.ok_or_else(bad)?));
    }
    Ok(rows)
}
