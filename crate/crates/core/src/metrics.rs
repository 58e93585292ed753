//! Append-only per-iteration CSV log.
//!
//! The file starts with `# key=value` lines echoing the run configuration,
//! followed by a header row and one row per training iteration. Optional
//! values are written as empty cells.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use crate::error::{LvmError, Result};

pub const COLUMNS: &[&str] = &[
    "epoch",
    "env_steps",
    "grad_steps",
    "J_RSSM",
    "J_o",
    "J_r",
    "J_D",
    "J_V1",
    "J_V2",
    "J_pi",
    "collect_return",
    "eval_return",
    "eval_lat_err",
    "eval_length",
    "value_bias",
];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub env_steps: u64,
    pub grad_steps: u64,
    pub j_rssm: f64,
    pub j_o: f64,
    pub j_r: f64,
    pub j_d: f64,
    pub j_v1: f64,
    pub j_v2: Option<f64>,
    pub j_pi: f64,
    pub collect_return: f64,
    pub eval_return: Option<f64>,
    pub eval_lat_err: Option<f64>,
    pub eval_length: Option<f64>,
    pub value_bias: Option<f64>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        [
            self.epoch.to_string(),
            self.env_steps.to_string(),
            self.grad_steps.to_string(),
            self.j_rssm.to_string(),
            self.j_o.to_string(),
            self.j_r.to_string(),
            self.j_d.to_string(),
            self.j_v1.to_string(),
            opt(self.j_v2),
            self.j_pi.to_string(),
            self.collect_return.to_string(),
            opt(self.eval_return),
            opt(self.eval_lat_err),
            opt(self.eval_length),
            opt(self.value_bias),
        ]
        .join(",")
    }

    /// Finiteness of every value that is present.
    pub fn is_finite(&self) -> bool {
        [self.j_rssm, self.j_o, self.j_r, self.j_d, self.j_v1, self.j_pi, self.collect_return]
            .into_iter()
            .chain(self.j_v2)
            .chain(self.eval_return)
            .chain(self.eval_lat_err)
            .chain(self.eval_length)
            .chain(self.value_bias)
            .all(f64::is_finite)
    }
}

/// Writer for the metrics CSV.
pub struct MetricsLog {
    path: PathBuf,
    file: File,
}

impl MetricsLog {
    /// Creates (truncating) `path` and writes the config echo and header.
    pub fn create(path: &Path, config: &[(String, String)]) -> Result<Self> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| LvmError::io(parent, e))?;
        }
        let mut file = File::create(path).map_err(|e| LvmError::io(path, e))?;
        let mut head = String::new();
        for (k, v) in config {
            head.push_str(&format!("# {k}={v}\n"));
        }
        head.push_str(&COLUMNS.join(","));
        head.push('\n');
        file.write_all(head.as_bytes()).map_err(|e| LvmError::io(path, e))?;
        Ok(MetricsLog {
            path: path.to_path_buf(),
            file,
        })
    }

    /// Rewrites `path` with a fresh config echo, keeping only the data rows
    /// with `epoch <= keep_through`, and opens it for appending so a resumed
    /// run continues seamlessly.
    pub fn resume(path: &Path, keep_through: usize, config: &[(String, String)]) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| LvmError::io(path, e))?;
        let mut kept = String::new();
        for (k, v) in config {
            kept.push_str(&format!("# {k}={v}\n"));
        }
        let mut header_seen = false;
        for line in text.lines().filter(|l| !l.starts_with('#')) {
            if !header_seen {
                header_seen = true;
                kept.push_str(line);
                kept.push('\n');
                continue;
            }
            let epoch: Option<usize> = line.split(',').next().and_then(|e| e.parse().ok());
            if epoch.is_some_and(|e| e <= keep_through) {
                kept.push_str(line);
                kept.push('\n');
            }
        }
        if !header_seen {
            return Err(LvmError::InvalidState(format!("{}: missing header row", path.display())));
        }
        fs::write(path, kept).map_err(|e| LvmError::io(path, e))?;
        let file = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| LvmError::io(path, e))?;
        Ok(MetricsLog {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn append(&mut self, row: &MetricsRow) -> Result<()> {
        writeln!(self.file, "{}", row.to_csv()).map_err(|e| LvmError::io(&self.path, e))?;
        self.file.flush().map_err(|e| LvmError::io(&self.path, e))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

/// A parsed metrics file.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsTable {
    pub config: Vec<(String, String)>,
    pub columns: Vec<String>,
    /// One entry per data row; `None` for empty cells.
    pub rows: Vec<Vec<Option<f64>>>,
}

impl MetricsTable {
    pub fn config_value(&self, key: &str) -> Option<&str> {
        self.config.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn column(&self, name: &str) -> Option<Vec<Option<f64>>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }
}

/// Reads a metrics CSV. Malformed rows are reported with their 1-based line
/// number.
pub fn read_metrics(path: &Path) -> Result<MetricsTable> {
    let file = File::open(path).map_err(|e| LvmError::io(path, e))?;
    let bad = |line: usize, reason: String| LvmError::InvalidState(format!("{}: row {line}: {reason}", path.display()));
    let mut config = Vec::new();
    let mut columns: Option<Vec<String>> = None;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| LvmError::io(path, e))?;
        let n = i + 1;
        if let Some(rest) = line.strip_prefix('#') {
            if let Some((k, v)) = rest.trim().split_once('=') {
                config.push((k.to_string(), v.to_string()));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        match &columns {
            None => columns = Some(line.split(',').map(str::to_string).collect()),
            Some(cols) => {
                let cells: Vec<&str> = line.split(',').collect();
                if cells.len() != cols.len() {
                    return Err(bad(n, format!("expected {} fields, found {}", cols.len(), cells.len())));
                }
                let mut row = Vec::with_capacity(cells.len());
                for (c, cell) in cols.iter().zip(cells) {
                    if cell.is_empty() {
                        row.push(None);
                    } else {
                        let v: f64 = cell
                            .parse()
                            .map_err(|_| bad(n, format!("column {c}: cannot parse `{cell}`")))?;
                        row.push(Some(v));
                    }
                }
                rows.push(row);
            }
        }
    }
    let columns = columns.ok_or_else(|| bad(0, "missing header row".into()))?;
    Ok(MetricsTable { config, columns, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(epoch: usize) -> MetricsRow {
        MetricsRow {
            epoch,
            env_steps: 10 * epoch as u64,
            j_rssm: -1.5,
            eval_return: (epoch % 2 == 0).then_some(3.25),
            ..Default::default()
        }
    }

    #[test]
    fn write_read_and_resume() {
        let dir = std::env::temp_dir().join(format!("lvm_metrics_{}", std::process::id()));
        let path = dir.join("metrics.csv");
        let cfg = vec![("seed".to_string(), "3".to_string())];
        let mut log = MetricsLog::create(&path, &cfg).unwrap();
        for e in 1..=4 {
            log.append(&row(e)).unwrap();
        }
        drop(log);
        let full = fs::read_to_string(&path).unwrap();
        let t = read_metrics(&path).unwrap();
        assert_eq!(t.config_value("seed"), Some("3"));
        assert_eq!(t.rows.len(), 4);
        assert_eq!(t.column("eval_return").unwrap()[..2], [None, Some(3.25)]);

        let mut log = MetricsLog::resume(&path, 2, &cfg).unwrap();
        log.append(&row(3)).unwrap();
        log.append(&row(4)).unwrap();
        drop(log);
        assert_eq!(fs::read_to_string(&path).unwrap(), full);

        fs::write(&path, format!("{}1,2\n", full)).unwrap();
        let e = read_metrics(&path).unwrap_err().to_string();
        assert!(e.contains("row 7"), "{e}");
        fs::remove_dir_all(dir).ok();
    }
}
