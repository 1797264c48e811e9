use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// One logged epoch. Epoch 0 of a stage describes the state the stage started from.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub epoch: usize,
    pub stage: String,
    /// Stage objective averaged over the probe set.
    pub objective: f64,
    /// Validation PCKh@0.5 as a fraction; absent for rows that do not validate.
    pub val_pckh: Option<f64>,
    pub div_ww: Option<f64>,
    pub div_tt: Option<f64>,
    pub div_wt: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub records: Vec<LogRecord>,
}

pub const LOG_HEADER: &str = "epoch,stage,objective,val_pckh,div_ww,div_tt,div_wt";

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.10e}")).unwrap_or_default()
}

fn parse_opt(s: &str) -> std::result::Result<Option<f64>, std::num::ParseFloatError> {
    if s.is_empty() {
        Ok(None)
    } else {
        s.parse().map(Some)
    }
}

impl TrainingLog {
    pub fn push(&mut self, r: LogRecord) {
        self.records.push(r);
    }

    pub fn extend(&mut self, other: TrainingLog) {
        self.records.extend(other.records);
    }

    pub fn stage(&self, name: &str) -> impl Iterator<Item = &LogRecord> + '_ {
        let name = name.to_string();
        self.records.iter().filter(move |r| r.stage == name)
    }

    /// Validation column of the given stage, epoch order.
    pub fn val_series(&self, stage: &str) -> Vec<f64> {
        self.stage(stage).filter_map(|r| r.val_pckh).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(LOG_HEADER);
        s.push('\n');
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{},{:.10e},{},{},{},{}",
                r.epoch,
                r.stage,
                r.objective,
                opt(r.val_pckh),
                opt(r.div_ww),
                opt(r.div_tt),
                opt(r.div_wt)
            );
        }
        s
    }

    pub fn from_csv(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(LOG_HEADER) {
            return Err(Error::format(path, "unexpected training log header"));
        }
        let bad = |n: usize| Error::format(path, format!("malformed log row {n}"));
        let mut log = TrainingLog::default();
        for (n, line) in lines.enumerate() {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(bad(n));
            }
            log.push(LogRecord {
                epoch: f[0].parse().map_err(|_| bad(n))?,
                stage: f[1].to_string(),
                objective: f[2].parse().map_err(|_| bad(n))?,
                val_pckh: parse_opt(f[3]).map_err(|_| bad(n))?,
                div_ww: parse_opt(f[4]).map_err(|_| bad(n))?,
                div_tt: parse_opt(f[5]).map_err(|_| bad(n))?,
                div_wt: parse_opt(f[6]).map_err(|_| bad(n))?,
            });
        }
        Ok(log)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text, path)
    }
}
