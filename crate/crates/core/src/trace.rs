//! Receiver count traces and their CSV form.

use std::fmt::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform sampling grid `t_j = j * dt` for `j in 0..len`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub dt: f64,
    pub len: usize,
}

impl TimeGrid {
    pub fn new(dt: f64, len: usize) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Argument(format!(
                "sampling interval must be positive, got {dt}"
            )));
        }
        if len == 0 {
            return Err(Error::Argument("time grid is empty".into()));
        }
        Ok(TimeGrid { dt, len })
    }

    /// Grid covering `[0, horizon)`; `horizon` must be a whole number of steps.
    pub fn over_horizon(dt: f64, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Argument(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        let steps = (horizon / dt).round();
        if steps < 1.0 || (steps * dt - horizon).abs() > 1e-9 * horizon {
            return Err(Error::Argument(format!(
                "horizon {horizon} s is not a multiple of the sampling interval {dt} s"
            )));
        }
        TimeGrid::new(dt, steps as usize)
    }

    #[inline]
    pub fn time(&self, j: usize) -> f64 {
        j as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len).map(|j| self.time(j)).collect()
    }
}

/// Provenance attached to a trace.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub distances_m: Vec<f64>,
    pub seed: Option<u64>,
    /// One bit string per branch, e.g. `"01101..."`.
    pub sequences: Vec<String>,
    pub n_tx: u64,
    /// Particles released in total; zero for analytic traces.
    pub released: u64,
}

/// Molecule counts at the receiver sampled on a uniform grid. Simulated
/// traces hold integer counts, analytic ones expected values.
#[derive(Debug, Clone, PartialEq)]
pub struct CountTrace {
    pub dt_sample: f64,
    pub counts: Vec<f64>,
    pub meta: TraceMeta,
}

impl CountTrace {
    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn grid(&self) -> TimeGrid {
        TimeGrid {
            dt: self.dt_sample,
            len: self.counts.len(),
        }
    }

    pub fn horizon(&self) -> f64 {
        self.counts.len() as f64 * self.dt_sample
    }

    /// `time_s,<column>` rows. Integer-valued samples are written without a
    /// fractional part.
    pub fn to_csv_string(&self, column: &str) -> String {
        let mut out = String::with_capacity(self.counts.len() * 16);
        writeln!(out, "time_s,{column}").expect("write to string");
        let grid = self.grid();
        for (j, c) in self.counts.iter().enumerate() {
            if c.fract() == 0.0 && c.abs() < 1e15 {
                writeln!(out, "{},{}", grid.time(j), *c as i64).expect("write to string");
            } else {
                writeln!(out, "{},{}", grid.time(j), c).expect("write to string");
            }
        }
        out
    }

    pub fn write_csv(&self, path: &Path, column: &str) -> Result<()> {
        std::fs::write(path, self.to_csv_string(column)).map_err(|e| Error::io(path, e))
    }

    /// Reads a two-column `time_s,<value>` CSV. The sampling interval is
    /// taken from the first two rows.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
        let mut times = Vec::new();
        let mut counts = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| Error::csv(path, e))?;
            if record.len() != 2 {
                return Err(Error::Config(format!(
                    "{}: expected two columns",
                    path.display()
                )));
            }
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("{}: bad number {s:?}", path.display())))
            };
            times.push(parse(&record[0])?);
            counts.push(parse(&record[1])?);
        }
        if times.len() < 2 {
            return Err(Error::Config(format!(
                "{}: trace needs at least two samples",
                path.display()
            )));
        }
        Ok(CountTrace {
            dt_sample: times[1] - times[0],
            counts,
            meta: TraceMeta::default(),
        })
    }
}
