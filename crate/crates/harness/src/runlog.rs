use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{io_err, HarnessError, Result};

pub const HEADER: &str = "step,lesson,loss,lr";

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    /// Curriculum lesson, or 0 for fine-tuning.
    pub lesson: u8,
    pub loss: f64,
    pub lr: f64,
}

/// Per-step training losses. Steps are strictly increasing and losses finite.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunLog {
    pub steps: Vec<StepRecord>,
}

impl RunLog {
    pub fn push(&mut self, r: StepRecord) -> Result<()> {
        if let Some(last) = self.steps.last() {
            if r.step <= last.step {
                return Err(HarnessError::RunLog(format!(
                    "step {} does not follow step {}",
                    r.step, last.step
                )));
            }
        }
        if !r.loss.is_finite() {
            return Err(HarnessError::RunLog(format!("non-finite loss at step {}", r.step)));
        }
        self.steps.push(r);
        Ok(())
    }

    pub fn last_step(&self) -> u64 {
        self.steps.last().map_or(0, |r| r.step)
    }

    pub fn losses(&self, lesson: u8) -> Vec<f64> {
        self.steps
            .iter()
            .filter(|r| r.lesson == lesson)
            .map(|r| r.loss)
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(HEADER);
        out.push('\n');
        for r in &self.steps {
            out.push_str(&format!("{},{},{},{}\n", r.step, r.lesson, r.loss, r.lr));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(io_err(path))
    }

    pub fn parse_csv(text: &str) -> std::result::Result<Self, String> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(HEADER) {
            return Err(format!("expected header `{HEADER}`"));
        }
        let mut log = RunLog::default();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let fields: Vec<&str> = line.split(',').collect();
            let err = |what: &str| format!("line {}: {what}", i + 2);
            if fields.len() != 4 {
                return Err(err("expected 4 fields"));
            }
            let record = StepRecord {
                step: fields[0].parse().map_err(|_| err("bad step"))?,
                lesson: fields[1].parse().map_err(|_| err("bad lesson"))?,
                loss: fields[2].parse().map_err(|_| err("bad loss"))?,
                lr: fields[3].parse().map_err(|_| err("bad lr"))?,
            };
            log.push(record).map_err(|e| err(&e.to_string()))?;
        }
        Ok(log)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse_csv(&text).map_err(|message| HarnessError::Parse {
            path: path.to_path_buf(),
            message,
        })
    }
}

/// Mean of the first and of the last `frac` share of `xs` (at least one element each).
pub fn head_tail_means(xs: &[f64], frac: f64) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    let k = ((xs.len() as f64 * frac).round() as usize).clamp(1, xs.len());
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    Some((mean(&xs[..k]), mean(&xs[xs.len() - k..])))
}

/// Writes `key=value` lines.
pub fn write_key_values(path: &Path, pairs: &[(String, String)]) -> Result<()> {
    let text: String = pairs.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
    fs::write(path, text).map_err(io_err(path))
}

/// Reads `key=value` lines, skipping blanks.
pub fn read_key_values(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let (k, v) = line.split_once('=').ok_or_else(|| HarnessError::Parse {
            path: path.to_path_buf(),
            message: format!("line {}: expected key=value", i + 1),
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(step: u64, loss: f64) -> StepRecord {
        StepRecord {
            step,
            lesson: 1,
            loss,
            lr: 1e-4,
        }
    }

    #[test]
    fn csv_round_trip() {
        let mut log = RunLog::default();
        log.push(rec(1, 2.5)).unwrap();
        log.push(rec(2, 0.125)).unwrap();
        let back = RunLog::parse_csv(&log.to_csv()).unwrap();
        assert_eq!(back, log);
        assert!(log.to_csv().starts_with("step,lesson,loss,lr\n"));
    }

    #[test]
    fn steps_must_increase_and_losses_be_finite() {
        let mut log = RunLog::default();
        log.push(rec(3, 1.0)).unwrap();
        assert!(log.push(rec(3, 1.0)).is_err());
        assert!(log.push(rec(4, f64::NAN)).is_err());
        assert!(RunLog::parse_csv("step,lesson,loss,lr\n2,1,1.0,0\n1,1,1.0,0\n").is_err());
    }

    #[test]
    fn head_and_tail_means() {
        let xs: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(head_tail_means(&xs, 0.05), Some((1.0, 20.0)));
        assert_eq!(head_tail_means(&xs, 0.1), Some((1.5, 19.5)));
    }
}
