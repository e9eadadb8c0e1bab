use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Algorithm, ExperimentConfig, ExperimentReport, MetricsRecord};
use crate::error::{Error, Result};
use crate::gaussian::Diagnostics;
use crate::metrics::{empirical_cdf, quantile};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub count: usize,
    pub mean: f64,
    pub p10: f64,
    pub median: f64,
    pub p90: f64,
}

impl MetricSummary {
    fn of(samples: &[f64]) -> Option<Self> {
        Some(Self {
            count: samples.len(),
            mean: samples.iter().sum::<f64>() / samples.len() as f64,
            p10: quantile(samples, 0.1)?,
            median: quantile(samples, 0.5)?,
            p90: quantile(samples, 0.9)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlgoSummary {
    pub algo: Algorithm,
    pub ser: Option<MetricSummary>,
    pub nmse: Option<MetricSummary>,
    pub excluded_links: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub config: ExperimentConfig,
    pub algorithms: Vec<AlgoSummary>,
    /// Numerical repairs summed over every EP run.
    pub diagnostics: Diagnostics,
}

pub(super) fn ser_samples(records: &[MetricsRecord], algo: Algorithm) -> Vec<f64> {
    records.iter().filter(|r| r.algo == algo).filter_map(|r| r.ser).collect()
}

pub(super) fn nmse_samples(records: &[MetricsRecord], algo: Algorithm) -> Vec<f64> {
    records.iter().filter(|r| r.algo == algo && !r.excluded).filter_map(|r| r.nmse).collect()
}

impl ExperimentSummary {
    pub(super) fn new(
        config: ExperimentConfig,
        algos: &[Algorithm],
        records: &[MetricsRecord],
        diagnostics: Diagnostics,
    ) -> Self {
        let algorithms = algos
            .iter()
            .map(|&algo| AlgoSummary {
                algo,
                ser: MetricSummary::of(&ser_samples(records, algo)),
                nmse: MetricSummary::of(&nmse_samples(records, algo)),
                excluded_links: records.iter().filter(|r| r.algo == algo && r.excluded).count(),
            })
            .collect();
        Self { config, algorithms, diagnostics }
    }

    pub fn get(&self, algo: Algorithm) -> Option<&AlgoSummary> {
        self.algorithms.iter().find(|a| a.algo == algo)
    }
}

impl ExperimentReport {
    pub fn ser_samples(&self, algo: Algorithm) -> Vec<f64> {
        ser_samples(&self.records, algo)
    }

    pub fn nmse_samples(&self, algo: Algorithm) -> Vec<f64> {
        nmse_samples(&self.records, algo)
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes `samples.csv`, `summary.json` and one `cdf_<metric>_<algo>.csv`
/// per reported curve into `dir`, creating it if needed.
pub fn write_outputs(report: &ExperimentReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;

    let mut w = csv::Writer::from_path(dir.join("samples.csv"))?;
    w.write_record(["algo", "position_id", "ue_id", "ap_id", "ser", "nmse", "excluded"])?;
    for r in &report.records {
        w.write_record([
            r.algo.name().to_string(),
            r.position_id.to_string(),
            r.ue_id.to_string(),
            r.ap_id.map(|a| a.to_string()).unwrap_or_default(),
            opt(r.ser),
            opt(r.nmse),
            r.excluded.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("writing samples.csv", e))?;

    let summary = serde_json::to_string_pretty(&report.summary)?;
    let path = dir.join("summary.json");
    fs::write(&path, summary + "\n").map_err(|e| Error::io(format!("writing {}", path.display()), e))?;

    for a in &report.summary.algorithms {
        for (metric, samples) in [
            ("ser", report.ser_samples(a.algo)),
            ("nmse", report.nmse_samples(a.algo)),
        ] {
            if samples.is_empty() {
                continue;
            }
            let mut w = csv::Writer::from_path(dir.join(format!("cdf_{metric}_{}.csv", a.algo.name())))?;
            w.write_record(["value", "cdf"])?;
            for (v, f) in empirical_cdf(&samples)? {
                w.write_record([v.to_string(), f.to_string()])?;
            }
            w.flush().map_err(|e| Error::io("writing CDF", e))?;
        }
    }
    Ok(())
}
