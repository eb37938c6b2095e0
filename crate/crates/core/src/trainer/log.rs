use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::features::write_atomic;
use crate::objectives::LossBreakdown;

pub const LOG_HEADER: &str = "step,total,recon,aux,temp,spat,raster,mat,l0_mean,dead,ms_elapsed";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRecord {
    pub step: u64,
    pub loss: LossBreakdown,
    pub l0_mean: f64,
    pub dead: usize,
    pub ms_elapsed: f64,
}

/// Per-batch training records with strictly increasing steps.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
}

impl TrainLog {
    pub fn push(&mut self, record: TrainRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if record.step <= last.step {
                return Err(Error::invalid(format!(
                    "log step {} does not follow {}",
                    record.step, last.step
                )));
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&TrainRecord> {
        self.records.last()
    }

    /// Mean total loss of consecutive runs of `per_epoch` records.
    pub fn epoch_means(&self, per_epoch: usize) -> Vec<f64> {
        self.records
            .chunks(per_epoch.max(1))
            .map(|c| c.iter().map(|r| r.loss.total).sum::<f64>() / c.len() as f64)
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.records.len() + 1));
        out.push_str(LOG_HEADER);
        out.push('\n');
        for r in &self.records {
            let l = &r.loss;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{:.3}",
                r.step, l.total, l.recon, l.aux, l.temp, l.spat, l.raster, l.mat, r.l0_mean, r.dead,
                r.ms_elapsed
            );
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), self.to_csv().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn steps_must_increase() {
        let rec = |step| TrainRecord {
            step,
            loss: LossBreakdown::default(),
            l0_mean: 0.0,
            dead: 0,
            ms_elapsed: 0.0,
        };
        let mut log = TrainLog::default();
        log.push(rec(1)).unwrap();
        log.push(rec(2)).unwrap();
        assert!(log.push(rec(2)).is_err());
        let csv = log.to_csv();
        assert!(csv.starts_with(LOG_HEADER));
        assert_eq!(csv.lines().count(), 3);
    }
}
