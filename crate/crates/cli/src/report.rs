use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use mvrm_core::Error;
use serde_json::{Map, Value};

use crate::runlog::{read_log, CONFIG_FILE, EVAL_FILE, LOG_FILE};
use crate::CmdResult;

pub const REPORT_FILE: &str = "report.md";
pub const LOSS_CSV: &str = "loss.csv";

/// Counts written next to metrics; not metrics themselves.
const COUNT_KEYS: [&str; 2] = ["videos", "windows"];

struct Run {
    name: String,
    config: Map<String, Value>,
    log: Vec<(usize, f64)>,
    metrics: BTreeMap<String, f64>,
}

fn load_run(dir: &Path) -> Result<Run, Error> {
    let read = |file: &str| -> Result<Option<String>, Error> {
        let p = dir.join(file);
        match fs::read_to_string(&p) {
            Ok(t) => Ok(Some(t)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::Data(format!("{}: {e}", p.display()))),
        }
    };
    let log_path = dir.join(LOG_FILE);
    if !log_path.is_file() {
        return Err(Error::Data(format!("{}: missing step log", log_path.display())));
    }
    let log = read_log(&log_path)?;
    let config = match read(CONFIG_FILE)? {
        Some(t) => match serde_json::from_str(&t)? {
            Value::Object(m) => m,
            _ => return Err(Error::Data(format!("{}: expected an object", dir.join(CONFIG_FILE).display()))),
        },
        None => return Err(Error::Data(format!("{}: missing config", dir.join(CONFIG_FILE).display()))),
    };
    let mut metrics = BTreeMap::new();
    if let Some(t) = read(EVAL_FILE)? {
        if let Value::Object(m) = serde_json::from_str(&t)? {
            for (k, v) in m {
                if let (false, Some(x)) = (COUNT_KEYS.contains(&k.as_str()), v.as_f64()) {
                    metrics.insert(k, x);
                }
            }
        }
    }
    let name = dir
        .file_name()
        .map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned());
    Ok(Run { name, config, log, metrics })
}

fn differing_keys(a: &Map<String, Value>, b: &Map<String, Value>) -> Vec<String> {
    let mut keys: Vec<&String> = a.keys().chain(b.keys()).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter().filter(|k| a.get(*k) != b.get(*k)).cloned().collect()
}

fn without_seed(cfg: &Map<String, Value>) -> Map<String, Value> {
    let mut c = cfg.clone();
    c.remove("seed");
    c
}

fn describe_diff(keys: &[String]) -> String {
    match keys {
        [] => "identical".into(),
        [k] if k == "seed" => "identical except seed".into(),
        _ => format!("differ in {}", keys.join(", ")),
    }
}

fn render(runs: &[Run]) -> String {
    let mut md = String::from("# Run report\n");
    for r in runs {
        let _ = writeln!(md, "\n## {}\n", r.name);
        match (r.log.first(), r.log.last()) {
            (Some(first), Some(last)) => {
                let _ = writeln!(
                    md,
                    "{} logged steps; loss {:.6} at step {} to {:.6} at step {}.\n",
                    r.log.len(),
                    first.1,
                    first.0,
                    last.1,
                    last.0
                );
            }
            _ => md.push_str("No steps logged.\n\n"),
        }
        if r.metrics.is_empty() {
            md.push_str("Final metrics: no evaluation.\n\n");
        } else {
            md.push_str("| metric | value |\n|---|---|\n");
            for (k, v) in &r.metrics {
                let _ = writeln!(md, "| {k} | {v:.6} |");
            }
            md.push('\n');
        }
        let cfg = serde_json::to_string_pretty(&Value::Object(r.config.clone())).unwrap_or_default();
        let _ = writeln!(md, "```json\n{cfg}\n```");
    }
    if runs.len() < 2 {
        return md;
    }

    md.push_str("\n## Config differences\n\n");
    for r in &runs[1..] {
        let keys = differing_keys(&runs[0].config, &r.config);
        let _ = writeln!(md, "- {} vs {}: {}", r.name, runs[0].name, describe_diff(&keys));
    }

    // runs sharing everything but the seed form one variant
    let mut variants: Vec<(Map<String, Value>, Vec<&Run>)> = Vec::new();
    for r in runs {
        let key = without_seed(&r.config);
        match variants.iter_mut().find(|(k, _)| *k == key) {
            Some((_, members)) => members.push(r),
            None => variants.push((key, vec![r])),
        }
    }
    let metric_names: Vec<&String> = {
        let mut v: Vec<&String> = runs.iter().flat_map(|r| r.metrics.keys()).collect();
        v.sort();
        v.dedup();
        v
    };
    md.push_str("\n## Comparison\n\n| variant | runs |");
    for m in &metric_names {
        let _ = write!(md, " mean {m} |");
    }
    md.push_str("\n|---|---|");
    md.push_str(&"---|".repeat(metric_names.len()));
    md.push('\n');
    let base = &variants[0].0;
    for (i, (cfg, members)) in variants.iter().enumerate() {
        let keys = differing_keys(base, cfg);
        let label = if keys.is_empty() {
            format!("v{i} (baseline)")
        } else {
            let parts: Vec<String> = keys
                .iter()
                .map(|k| format!("{k}={}", cfg.get(k).map_or("-".into(), Value::to_string)))
                .collect();
            format!("v{i} ({})", parts.join(", "))
        };
        let _ = write!(md, "| {label} | {} |", members.len());
        for m in &metric_names {
            let vals: Vec<f64> = members.iter().filter_map(|r| r.metrics.get(*m).copied()).collect();
            if vals.is_empty() {
                md.push_str(" - |");
            } else {
                let _ = write!(md, " {:.6} |", vals.iter().sum::<f64>() / vals.len() as f64);
            }
        }
        md.push('\n');
    }
    md
}

fn write_loss_csv(path: &Path, runs: &[Run]) -> Result<(), Error> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let csv_err = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
    w.write_record(["run", "step", "loss"]).map_err(csv_err)?;
    for r in runs {
        for (step, loss) in &r.log {
            w.write_record([r.name.clone(), step.to_string(), format!("{loss:.6}")]).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn run(dirs: &[PathBuf], out: Option<&Path>) -> CmdResult {
    let runs: Vec<Run> = dirs.iter().map(|d| load_run(d)).collect::<Result<_, _>>()?;
    let out = out.unwrap_or(&dirs[0]);
    fs::create_dir_all(out)?;
    let md = render(&runs);
    fs::write(out.join(REPORT_FILE), &md)?;
    write_loss_csv(&out.join(LOSS_CSV), &runs)?;
    print!("{md}");
    Ok(())
}
