use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative-error thresholds (percent) of the summary tables.
pub const RE_THRESHOLDS: [f64; 3] = [5.0, 10.0, 20.0];

/// `|predicted - gt| / gt` in percent.
pub fn relative_error(predicted: f64, ground_truth: f64) -> Result<f64> {
    if !(ground_truth > 0.0) {
        return Err(Error::Domain(format!(
            "ground truth must be positive, got {ground_truth}"
        )));
    }
    Ok((predicted - ground_truth).abs() / ground_truth * 100.0)
}

/// Percentage of estimates under each relative-error threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReFractions {
    pub re_lt_5: f64,
    pub re_lt_10: f64,
    pub re_lt_20: f64,
}

impl ReFractions {
    pub fn from_errors(errors: &[f64]) -> Result<Self> {
        if errors.is_empty() {
            return Err(Error::Argument("no relative errors to summarize".into()));
        }
        let frac = |limit: f64| {
            errors.iter().filter(|&&e| e < limit).count() as f64 / errors.len() as f64 * 100.0
        };
        Ok(ReFractions {
            re_lt_5: frac(5.0),
            re_lt_10: frac(10.0),
            re_lt_20: frac(20.0),
        })
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.re_lt_5, self.re_lt_10, self.re_lt_20]
    }

    pub fn is_nested(&self) -> bool {
        self.re_lt_5 <= self.re_lt_10 && self.re_lt_10 <= self.re_lt_20
    }
}

/// One estimate vector and its ground truth, both sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub config_id: usize,
    pub ground_truth: Vec<f64>,
    pub estimate: Vec<f64>,
}

impl Prediction {
    pub fn new(
        config_id: usize,
        mut ground_truth: Vec<f64>,
        mut estimate: Vec<f64>,
    ) -> Result<Self> {
        if ground_truth.len() != estimate.len() {
            return Err(Error::Shape(format!(
                "{} estimates for {} ground-truth distances",
                estimate.len(),
                ground_truth.len()
            )));
        }
        ground_truth.sort_by(f64::total_cmp);
        estimate.sort_by(f64::total_cmp);
        Ok(Prediction {
            config_id,
            ground_truth,
            estimate,
        })
    }

    pub fn relative_errors(&self) -> Result<Vec<f64>> {
        self.estimate
            .iter()
            .zip(&self.ground_truth)
            .map(|(&p, &g)| relative_error(p, g))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigRow {
    pub config_id: usize,
    pub branch: usize,
    pub gt_m: f64,
    pub mean_pred_m: f64,
    pub std_pred_m: f64,
}

/// Per-configuration means and spreads plus the global threshold fractions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub estimator: String,
    pub rows: Vec<ConfigRow>,
    pub fractions: ReFractions,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl MetricsReport {
    /// Rows are ordered by configuration, then by sorted branch position.
    /// Standard deviations use the `n - 1` normalization.
    pub fn from_predictions(estimator: &str, predictions: &[Prediction]) -> Result<Self> {
        if predictions.is_empty() {
            return Err(Error::Argument("no predictions to report".into()));
        }
        let mut errors = Vec::new();
        for p in predictions {
            errors.extend(p.relative_errors()?);
        }
        let mut ids: Vec<usize> = predictions.iter().map(|p| p.config_id).collect();
        ids.sort_unstable();
        ids.dedup();
        let mut rows = Vec::new();
        for id in ids {
            let group: Vec<&Prediction> =
                predictions.iter().filter(|p| p.config_id == id).collect();
            let k = group[0].ground_truth.len();
            if group
                .iter()
                .any(|p| p.ground_truth != group[0].ground_truth)
            {
                return Err(Error::Argument(format!(
                    "configuration {id} has inconsistent ground truth"
                )));
            }
            for branch in 0..k {
                let values: Vec<f64> = group.iter().map(|p| p.estimate[branch]).collect();
                let (mean, std) = mean_std(&values);
                rows.push(ConfigRow {
                    config_id: id,
                    branch,
                    gt_m: group[0].ground_truth[branch],
                    mean_pred_m: mean,
                    std_pred_m: std,
                });
            }
        }
        Ok(MetricsReport {
            estimator: estimator.to_string(),
            rows,
            fractions: ReFractions::from_errors(&errors)?,
        })
    }

    pub fn write_report_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
        w.write_record(["config_id", "branch", "gt_m", "mean_pred_m", "std_pred_m"])
            .map_err(|e| Error::csv(path, e))?;
        for r in &self.rows {
            w.write_record([
                r.config_id.to_string(),
                r.branch.to_string(),
                r.gt_m.to_string(),
                r.mean_pred_m.to_string(),
                r.std_pred_m.to_string(),
            ])
            .map_err(|e| Error::csv(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_summary_csv(&self, path: &Path) -> Result<()> {
        write_summaries(path, &[(self.estimator.clone(), self.fractions)])
    }

    /// Reads a report CSV and a one-row summary CSV back into a report.
    pub fn read_csv(report: &Path, summary: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(report).map_err(|e| Error::csv(report, e))?;
        let mut rows = Vec::new();
        for record in r.records() {
            let record = record.map_err(|e| Error::csv(report, e))?;
            let bad = || {
                Error::Config(format!(
                    "{}: malformed report row {record:?}",
                    report.display()
                ))
            };
            if record.len() != 5 {
                return Err(bad());
            }
            let num = |i: usize| record[i].parse::<f64>().map_err(|_| bad());
            rows.push(ConfigRow {
                config_id: record[0].parse().map_err(|_| bad())?,
                branch: record[1].parse().map_err(|_| bad())?,
                gt_m: num(2)?,
                mean_pred_m: num(3)?,
                std_pred_m: num(4)?,
            });
        }
        let mut summaries = read_summaries(summary)?;
        if summaries.len() != 1 {
            return Err(Error::Config(format!(
                "{}: expected one estimator, found {}",
                summary.display(),
                summaries.len()
            )));
        }
        let (estimator, fractions) = summaries.remove(0);
        Ok(MetricsReport {
            estimator,
            rows,
            fractions,
        })
    }
}

pub fn write_summaries(path: &Path, summaries: &[(String, ReFractions)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(["estimator", "re_lt_5", "re_lt_10", "re_lt_20"])
        .map_err(|e| Error::csv(path, e))?;
    for (name, f) in summaries {
        w.write_record([
            name.clone(),
            f.re_lt_5.to_string(),
            f.re_lt_10.to_string(),
            f.re_lt_20.to_string(),
        ])
        .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_summaries(path: &Path) -> Result<Vec<(String, ReFractions)>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let mut out = Vec::new();
    for record in r.records() {
        let record = record.map_err(|e| Error::csv(path, e))?;
        let bad = || {
            Error::Config(format!(
                "{}: malformed summary row {record:?}",
                path.display()
            ))
        };
        if record.len() != 4 {
            return Err(bad());
        }
        let num = |i: usize| record[i].parse::<f64>().map_err(|_| bad());
        out.push((
            record[0].to_string(),
            ReFractions {
                re_lt_5: num(1)?,
                re_lt_10: num(2)?,
                re_lt_20: num(3)?,
            },
        ));
    }
    Ok(out)
}

/// Threshold rows by estimator columns, percentages with two decimals.
pub fn report_tables(summaries: &[(String, ReFractions)]) -> String {
    let mut out = Vec::new();
    let header: Vec<&str> = std::iter::once("metric")
        .chain(summaries.iter().map(|(n, _)| n.as_str()))
        .collect();
    writeln!(out, "{}", header.join(",")).expect("write to vec");
    for (i, t) in RE_THRESHOLDS.iter().enumerate() {
        let mut line = format!("RE < {t}%");
        for (_, f) in summaries {
            line.push_str(&format!(",{:.2}", f.as_array()[i]));
        }
        writeln!(out, "{line}").expect("write to vec");
    }
    String::from_utf8(out).expect("ascii table")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_examples() {
        assert!((relative_error(0.21, 0.20).unwrap() - 5.0).abs() < 1e-9);
        assert_eq!(relative_error(0.2, 0.2).unwrap(), 0.0);
        assert!((relative_error(0.24, 0.12).unwrap() - 100.0).abs() < 1e-12);
        assert!(matches!(relative_error(0.1, 0.0), Err(Error::Domain(_))));
        assert!(relative_error(0.1, -0.1).is_err());
    }

    #[test]
    fn perfect_and_scaled_predictors() {
        let gt = [vec![0.06, 0.12], vec![0.18, 0.24]];
        let perfect: Vec<Prediction> = gt
            .iter()
            .enumerate()
            .map(|(i, g)| Prediction::new(i, g.clone(), g.clone()).unwrap())
            .collect();
        let r = MetricsReport::from_predictions("exact", &perfect).unwrap();
        assert_eq!(r.fractions.as_array(), [100.0; 3]);
        assert!(r
            .rows
            .iter()
            .all(|row| row.std_pred_m == 0.0 && row.mean_pred_m == row.gt_m));

        let scaled: Vec<Prediction> = gt
            .iter()
            .enumerate()
            .map(|(i, g)| {
                Prediction::new(i, g.clone(), g.iter().map(|d| d * 1.07).collect()).unwrap()
            })
            .collect();
        let r = MetricsReport::from_predictions("scaled", &scaled).unwrap();
        assert_eq!(r.fractions.re_lt_5, 0.0);
        assert_eq!(r.fractions.re_lt_10, 100.0);
    }

    #[test]
    fn predictions_are_canonicalized() {
        let p = Prediction::new(0, vec![0.24, 0.12], vec![0.13, 0.23]).unwrap();
        assert_eq!(p.ground_truth, vec![0.12, 0.24]);
        assert_eq!(p.estimate, vec![0.13, 0.23]);
        assert!(Prediction::new(0, vec![0.1], vec![0.1, 0.2]).is_err());
    }

    #[test]
    fn table_layout() {
        let f = ReFractions {
            re_lt_5: 74.55,
            re_lt_10: 80.0,
            re_lt_20: 89.523,
        };
        let one = report_tables(&[("sbrnn".into(), f)]);
        assert_eq!(
            one,
            "metric,sbrnn\nRE < 5%,74.55\nRE < 10%,80.00\nRE < 20%,89.52\n"
        );
        let two = report_tables(&[("sbrnn".into(), f), ("mle".into(), f)]);
        assert_eq!(two.lines().count(), 4);
        assert!(two.lines().skip(1).all(|l| l.split(',').count() == 3));
    }
}
