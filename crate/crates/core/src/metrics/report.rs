use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub image: String,
    pub psnr: f64,
    pub ssim: f64,
    pub lpips: f64,
}

/// Per-image metrics plus the name of the perceptual backend that produced
/// the `lpips` column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub backend: String,
    pub rows: Vec<MetricRow>,
}

impl MetricReport {
    pub fn new(backend: impl Into<String>) -> Self {
        Self {
            backend: backend.into(),
            rows: Vec::new(),
        }
    }

    pub fn mean(&self) -> Result<MetricRow> {
        if self.rows.is_empty() {
            return Err(Error::Empty("metric report has no rows".into()));
        }
        let n = self.rows.len() as f64;
        let sum = |f: fn(&MetricRow) -> f64| self.rows.iter().map(f).sum::<f64>() / n;
        Ok(MetricRow {
            image: "MEAN".into(),
            psnr: sum(|r| r.psnr),
            ssim: sum(|r| r.ssim),
            lpips: sum(|r| r.lpips),
        })
    }

    /// `image,psnr,ssim,lpips` rows followed by the `MEAN` row.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e.into(),
        })?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.serialize(self.mean()?)?;
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Reads a CSV written by [`MetricReport::write_csv`], dropping the mean row.
    pub fn read_csv(path: impl AsRef<Path>, backend: impl Into<String>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e.into(),
        })?;
        let rows = r
            .deserialize::<MetricRow>()
            .filter(|row| !matches!(row, Ok(m) if m.image == "MEAN"))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Self {
            backend: backend.into(),
            rows,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_with_mean() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let mut rep = MetricReport::new("x");
        rep.rows.push(MetricRow { image: "a.png".into(), psnr: 30.0, ssim: 0.9, lpips: 0.1 });
        rep.rows.push(MetricRow { image: "b.png".into(), psnr: 20.0, ssim: 0.7, lpips: 0.3 });
        rep.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "image,psnr,ssim,lpips");
        assert!(lines[3].starts_with("MEAN,25"));
        assert_eq!(lines.len(), 4);
        let back = MetricReport::read_csv(&path, "x").unwrap();
        assert_eq!(back, rep);
        assert!(MetricReport::new("x").mean().is_err());
    }
}
