use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One logged evaluation point. Columns that do not apply to the task are empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub step: usize,
    pub total_loss: f64,
    pub mlm_loss: Option<f64>,
    pub nsp_loss: Option<f64>,
    pub mlm_acc: Option<f64>,
    /// Next-sentence accuracy when pretraining, recall accuracy otherwise.
    pub task_acc: f64,
    pub ms_per_step: f64,
}

impl fmt::Display for MetricRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "step {:>6}  loss {:.4}", self.step, self.total_loss)?;
        if let (Some(m), Some(n)) = (self.mlm_loss, self.nsp_loss) {
            write!(f, " (mlm {m:.4}, nsp {n:.4})")?;
        }
        if let Some(a) = self.mlm_acc {
            write!(f, "  mlm_acc {a:.3}")?;
        }
        write!(f, "  task_acc {:.3}  {:.1} ms/step", self.task_acc, self.ms_per_step)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricLog {
    pub rows: Vec<MetricRow>,
}

impl MetricLog {
    pub fn push(&mut self, row: MetricRow) -> Result<()> {
        if let Some(last) = self.rows.last() {
            if row.step <= last.step {
                return Err(Error::InvalidArgument(format!(
                    "metric step {} does not follow {}",
                    row.step, last.step
                )));
            }
        }
        if !row.total_loss.is_finite() {
            return Err(Error::NonFinite(format!("loss at step {}", row.step)));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn last(&self) -> Option<&MetricRow> {
        self.rows.last()
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        self.write_csv_with(w, true)
    }

    /// CSV without the wall-clock column, for run-to-run comparisons.
    pub fn write_csv_untimed(&self, w: impl Write) -> Result<()> {
        self.write_csv_with(w, false)
    }

    fn write_csv_with(&self, w: impl Write, timed: bool) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        if timed {
            for row in &self.rows {
                out.serialize(row)?;
            }
            // serde writes no header for an empty log
            if self.rows.is_empty() {
                out.write_record(HEADER)?;
            }
        } else {
            out.write_record(&HEADER[..HEADER.len() - 1])?;
            let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            for r in &self.rows {
                out.write_record([
                    r.step.to_string(),
                    r.total_loss.to_string(),
                    opt(r.mlm_loss),
                    opt(r.nsp_loss),
                    opt(r.mlm_acc),
                    r.task_acc.to_string(),
                ])?;
            }
        }
        out.flush().map_err(|e| Error::io("<metrics>", e))
    }

    pub fn read_csv(r: impl Read) -> Result<Self> {
        let mut rows = Vec::new();
        for row in csv::Reader::from_reader(r).deserialize() {
            rows.push(row?);
        }
        Ok(MetricLog { rows })
    }
}

pub const HEADER: [&str; 7] = [
    "step",
    "total_loss",
    "mlm_loss",
    "nsp_loss",
    "mlm_acc",
    "task_acc",
    "ms_per_step",
];
