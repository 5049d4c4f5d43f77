//! Per-step run metrics and their CSV contract.
//!
//! The file starts with a schema-version comment line, then a header row,
//! then one row per training step (UTF-8, comma separated, LF endings).
//! Sparse columns (probe cadences, validation) are empty when unmeasured.

use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Version tag written as the first (comment) line of every metrics CSV.
pub const METRICS_SCHEMA: &str = "# preflab-metrics-v1";

/// Column header of the metrics CSV.
pub const METRICS_HEADER: &str = "step,loss,lr,grad_norm,drift_w,drift_l,cw_base,cl_base,cw_fpa,cl_fpa,rw_mean,rl_mean,rw_of_means,rl_of_means,near_zero,near_zero_cum,angle_deg,grad_norm_w,grad_norm_l,val_pass1";

/// One training step's record.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepMetrics {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    /// Pre-clip global gradient norm.
    pub grad_norm: f64,
    /// Batch mean of log π_θ(y_w) − log π_ref(y_w).
    pub drift_w: f64,
    pub drift_l: f64,
    pub cw_base: Option<f64>,
    pub cl_base: Option<f64>,
    pub cw_fpa: Option<f64>,
    pub cl_fpa: Option<f64>,
    /// Mean of per-pair FPA/base ratios.
    pub rw_mean: Option<f64>,
    pub rl_mean: Option<f64>,
    /// Ratio of batch means.
    pub rw_of_means: Option<f64>,
    pub rl_of_means: Option<f64>,
    pub near_zero: Option<usize>,
    pub near_zero_cum: Option<usize>,
    pub angle_deg: Option<f64>,
    pub grad_norm_w: Option<f64>,
    pub grad_norm_l: Option<f64>,
    pub val_pass1: Option<f64>,
    /// Active per-pair C_l values this step (in-memory only, not written
    /// to the CSV; the near-zero counter is audited against these).
    pub active_c_l: Vec<f64>,
}

fn fmt_opt_f(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn fmt_opt_u(v: Option<usize>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl StepMetrics {
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.step,
            self.loss,
            self.lr,
            self.grad_norm,
            self.drift_w,
            self.drift_l,
            fmt_opt_f(self.cw_base),
            fmt_opt_f(self.cl_base),
            fmt_opt_f(self.cw_fpa),
            fmt_opt_f(self.cl_fpa),
            fmt_opt_f(self.rw_mean),
            fmt_opt_f(self.rl_mean),
            fmt_opt_f(self.rw_of_means),
            fmt_opt_f(self.rl_of_means),
            fmt_opt_u(self.near_zero),
            fmt_opt_u(self.near_zero_cum),
            fmt_opt_f(self.angle_deg),
            fmt_opt_f(self.grad_norm_w),
            fmt_opt_f(self.grad_norm_l),
            fmt_opt_f(self.val_pass1),
        )
    }

    pub fn from_csv_row(row: &str) -> Result<Self> {
        let fields: Vec<&str> = row.split(',').collect();
        let ncols = METRICS_HEADER.split(',').count();
        if fields.len() != ncols {
            return Err(Error::Data(format!(
                "metrics row has {} fields, expected {ncols}: {row}",
                fields.len()
            )));
        }
        let req = |i: usize| -> Result<f64> {
            fields[i]
                .parse()
                .map_err(|e| Error::Data(format!("field {i} `{}`: {e}", fields[i])))
        };
        let opt_f = |i: usize| -> Result<Option<f64>> {
            if fields[i].is_empty() {
                Ok(None)
            } else {
                Ok(Some(req(i)?))
            }
        };
        let opt_u = |i: usize| -> Result<Option<usize>> {
            if fields[i].is_empty() {
                Ok(None)
            } else {
                fields[i]
                    .parse()
                    .map(Some)
                    .map_err(|e| Error::Data(format!("field {i}: {e}")))
            }
        };
        Ok(StepMetrics {
            step: fields[0]
                .parse()
                .map_err(|e| Error::Data(format!("step: {e}")))?,
            loss: req(1)?,
            lr: req(2)?,
            grad_norm: req(3)?,
            drift_w: req(4)?,
            drift_l: req(5)?,
            cw_base: opt_f(6)?,
            cl_base: opt_f(7)?,
            cw_fpa: opt_f(8)?,
            cl_fpa: opt_f(9)?,
            rw_mean: opt_f(10)?,
            rl_mean: opt_f(11)?,
            rw_of_means: opt_f(12)?,
            rl_of_means: opt_f(13)?,
            near_zero: opt_u(14)?,
            near_zero_cum: opt_u(15)?,
            angle_deg: opt_f(16)?,
            grad_norm_w: opt_f(17)?,
            grad_norm_l: opt_f(18)?,
            val_pass1: opt_f(19)?,
            active_c_l: Vec::new(),
        })
    }
}

pub fn write_metrics_csv(path: &Path, rows: &[StepMetrics]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut out = BufWriter::new(file);
    writeln!(out, "{METRICS_SCHEMA}")?;
    writeln!(out, "{METRICS_HEADER}")?;
    for row in rows {
        writeln!(out, "{}", row.to_csv_row())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<StepMetrics>> {
    let file = std::fs::File::open(path)?;
    let mut rows = Vec::new();
    for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if lineno == 0 {
            if line != METRICS_SCHEMA {
                return Err(Error::Data(format!(
                    "unexpected metrics schema line: {line}"
                )));
            }
            continue;
        }
        if lineno == 1 {
            if line != METRICS_HEADER {
                return Err(Error::Data("unexpected metrics header".into()));
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        rows.push(StepMetrics::from_csv_row(&line)?);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_preserves_values() {
        let rows = vec![
            StepMetrics {
                step: 0,
                loss: 0.6931471805599453,
                lr: 3.333333333333333e-6,
                grad_norm: 1.25,
                drift_w: -0.1,
                drift_l: 0.0,
                cw_base: Some(0.05),
                cl_base: Some(0.05),
                cw_fpa: Some(0.049999999999999996),
                cl_fpa: Some(0.04),
                rw_mean: Some(1.0),
                rl_mean: Some(0.8),
                rw_of_means: Some(1.0),
                rl_of_means: Some(0.8),
                near_zero: Some(0),
                near_zero_cum: Some(0),
                angle_deg: None,
                grad_norm_w: None,
                grad_norm_l: None,
                val_pass1: None,
                active_c_l: Vec::new(),
            },
            StepMetrics {
                step: 1,
                loss: 0.1,
                lr: 1e-5,
                grad_norm: 0.0,
                drift_w: 0.0,
                drift_l: 0.0,
                val_pass1: Some(0.875),
                ..Default::default()
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        write_metrics_csv(&path, &rows).unwrap();
        let loaded = read_metrics_csv(&path).unwrap();
        assert_eq!(loaded, rows);

        let content = std::fs::read_to_string(&path).unwrap();
        assert!(content.starts_with("# preflab-metrics-v1\nstep,"));
        assert!(!content.contains('\r'));
    }

    #[test]
    fn rejects_malformed_rows() {
        assert!(StepMetrics::from_csv_row("1,2,3").is_err());
        let ok = StepMetrics::from_csv_row("0,1,2,3,4,5,,,,,,,,,,,,,,").unwrap();
        assert_eq!(ok.step, 0);
        assert_eq!(ok.cw_base, None);
    }
}
