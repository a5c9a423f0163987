use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    pub values: Vec<f64>,
}

/// Result of one ablation experiment: named series over shared x-values.
///
/// Categorical experiments (one row per variant) carry `row_labels`; the
/// x-values are then the row indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub experiment: String,
    pub x_label: String,
    pub x: Vec<f64>,
    pub row_labels: Vec<String>,
    pub series: Vec<Series>,
    pub summary: BTreeMap<String, f64>,
    pub artifacts: Vec<PathBuf>,
}

impl AblationReport {
    pub fn new(experiment: impl Into<String>, x_label: impl Into<String>, x: Vec<f64>) -> Self {
        Self {
            experiment: experiment.into(),
            x_label: x_label.into(),
            x,
            row_labels: Vec::new(),
            series: Vec::new(),
            summary: BTreeMap::new(),
            artifacts: Vec::new(),
        }
    }

    /// Rows named by `labels`, indexed `0..n`.
    pub fn categorical(experiment: impl Into<String>, labels: Vec<String>) -> Self {
        let x = (0..labels.len()).map(|i| i as f64).collect();
        Self {
            row_labels: labels,
            ..Self::new(experiment, "variant", x)
        }
    }

    pub fn push_series(&mut self, name: impl Into<String>, values: Vec<f64>) {
        self.series.push(Series {
            name: name.into(),
            values,
        });
    }

    pub fn series(&self, name: &str) -> Option<&[f64]> {
        self.series.iter().find(|s| s.name == name).map(|s| s.values.as_slice())
    }

    /// Row index of a categorical label.
    pub fn row(&self, label: &str) -> Option<usize> {
        self.row_labels.iter().position(|l| l == label)
    }

    /// Series lengths match the x-values and every number is finite.
    pub fn validate(&self) -> Result<()> {
        if !self.row_labels.is_empty() && self.row_labels.len() != self.x.len() {
            return Err(Error::Shape(format!(
                "{}: {} labels for {} rows",
                self.experiment,
                self.row_labels.len(),
                self.x.len()
            )));
        }
        for s in &self.series {
            if s.values.len() != self.x.len() {
                return Err(Error::Shape(format!(
                    "{}: series `{}` has {} values for {} x-values",
                    self.experiment,
                    s.name,
                    s.values.len(),
                    self.x.len()
                )));
            }
        }
        let values = self
            .x
            .iter()
            .chain(self.series.iter().flat_map(|s| &s.values))
            .chain(self.summary.values());
        if let Some(v) = values.into_iter().find(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("{}: non-finite value {v}", self.experiment)));
        }
        Ok(())
    }

    /// One row per x-value: `x_label[,label],<series...>`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec![self.x_label.clone()];
        if !self.row_labels.is_empty() {
            header.push("label".into());
        }
        header.extend(self.series.iter().map(|s| s.name.clone()));
        w.write_record(&header)?;
        for (i, x) in self.x.iter().enumerate() {
            let mut rec = vec![format_num(*x)];
            if let Some(l) = self.row_labels.get(i) {
                rec.push(l.clone());
            }
            rec.extend(self.series.iter().map(|s| format_num(s.values[i])));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// `key,value` lines of the summary scalars.
    pub fn write_summary_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["key", "value"])?;
        for (k, v) in &self.summary {
            w.write_record([k.as_str(), &format_num(*v)])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Writes `<experiment>.csv`, `<experiment>_summary.csv`,
    /// `<experiment>.svg` and `<experiment>.json` into `dir` and records them
    /// as artifacts.
    pub fn write_all(&mut self, dir: impl AsRef<Path>) -> Result<()> {
        self.validate()?;
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv_path = dir.join(format!("{}.csv", self.experiment));
        let summary_path = dir.join(format!("{}_summary.csv", self.experiment));
        let svg_path = dir.join(format!("{}.svg", self.experiment));
        let json_path = dir.join(format!("{}.json", self.experiment));
        self.write_csv(&csv_path)?;
        self.write_summary_csv(&summary_path)?;
        std::fs::write(&svg_path, super::plot::svg(self)).map_err(|e| Error::io(&svg_path, e))?;
        self.artifacts = vec![csv_path, summary_path, svg_path, json_path.clone()];
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Invalid(e.to_string()))?;
        std::fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))?;
        Ok(())
    }
}

fn format_num(v: f64) -> String {
    format!("{v}")
}
