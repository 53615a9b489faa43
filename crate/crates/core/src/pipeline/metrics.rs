//! Per-frame training log and its CSV form.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub const METRICS_HEADER: &str = "frame,t,mi_frame,u,action_reg,action_motion,q_norm,reset_flag,resets_per_1000,tau";

/// One row per processed frame.
///
/// `action_reg` is the quadratic regularizer density of the free action at
/// the new state; `action_motion` is the motion penalty `lambda_M (1/2 q'M q'
/// + q N q' + 1/2 q O q)` of the frame, zero when motion is switched off.
/// `tau` is the detail level the frame was presented with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub frame: usize,
    pub t: f64,
    pub mi_frame: f64,
    pub u: f64,
    pub action_reg: f64,
    pub action_motion: f64,
    pub q_norm: f64,
    pub reset_flag: bool,
    pub resets_per_1000: f64,
    pub tau: f64,
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{:e},{:e},{:e},{},{:e},{:e}",
            self.frame,
            self.t,
            self.mi_frame,
            self.u,
            self.action_reg,
            self.action_motion,
            self.q_norm,
            u8::from(self.reset_flag),
            self.resets_per_1000,
            self.tau
        )
    }

    pub fn from_csv(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 10 {
            return Err(invalid(format!("metrics row needs 10 fields, got {}", f.len())));
        }
        let num = |i: usize| -> Result<f64> { f[i].parse().map_err(|_| invalid(format!("bad number '{}'", f[i]))) };
        Ok(Self {
            frame: f[0]
                .parse()
                .map_err(|_| invalid(format!("bad frame index '{}'", f[0])))?,
            t: num(1)?,
            mi_frame: num(2)?,
            u: num(3)?,
            action_reg: num(4)?,
            action_motion: num(5)?,
            q_norm: num(6)?,
            reset_flag: match f[7] {
                "0" => false,
                "1" => true,
                other => return Err(invalid(format!("bad reset flag '{other}'"))),
            },
            resets_per_1000: num(8)?,
            tau: num(9)?,
        })
    }
}

pub fn write_metrics_csv(mut out: impl Write, rows: &[MetricsRow]) -> Result<()> {
    writeln!(out, "{METRICS_HEADER}")?;
    for r in rows {
        writeln!(out, "{}", r.to_csv())?;
    }
    Ok(())
}

pub fn save_metrics_csv(path: impl AsRef<Path>, rows: &[MetricsRow]) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_metrics_csv(&mut file, rows)?;
    file.flush()?;
    Ok(())
}

pub fn read_metrics_csv(text: &str) -> Result<Vec<MetricsRow>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(METRICS_HEADER) {
        return Err(invalid("metrics CSV header missing or unexpected"));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(MetricsRow::from_csv)
        .collect()
}
