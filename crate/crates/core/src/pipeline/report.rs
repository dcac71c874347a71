use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{PipelineError, SplitTag};
use crate::fsutil::atomic_write;
use crate::metrics::{summarize, MetricSummary, ScorePairs};

/// One scored image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityRecord {
    pub image_id: String,
    pub condition: String,
    pub proxy_mos: f64,
    pub predicted_score: f64,
    pub split_tag: SplitTag,
}

impl QualityRecord {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if !(0.0..=4.0).contains(&self.proxy_mos) || !self.predicted_score.is_finite() {
            return Err(PipelineError::Internal(format!(
                "{}: proxy_mos {} outside [0, 4] or non-finite prediction {}",
                self.image_id, self.proxy_mos, self.predicted_score
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub method: String,
    pub split: SplitTag,
    pub n: usize,
    pub plcc: f64,
    pub srocc: f64,
    pub krocc: f64,
    pub overall: f64,
}

impl SplitSummary {
    pub fn from_records(method: &str, split: SplitTag, records: &[QualityRecord]) -> Result<Self, PipelineError> {
        let rows: Vec<&QualityRecord> = records.iter().filter(|r| r.split_tag == split).collect();
        let s: Vec<f64> = rows.iter().map(|r| r.proxy_mos).collect();
        let s_hat: Vec<f64> = rows.iter().map(|r| r.predicted_score).collect();
        let MetricSummary { plcc, srocc, krocc, overall } = summarize(&ScorePairs::new(&s, &s_hat)?)?;
        Ok(Self { method: method.to_string(), split, n: rows.len(), plcc, srocc, krocc, overall })
    }
}

pub(crate) fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>, PipelineError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| PipelineError::Io(e.to_string()))
}

pub(crate) fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), PipelineError> {
    Ok(atomic_write(path, &csv_bytes(rows)?)?)
}

pub(crate) fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, PipelineError> {
    if !path.exists() {
        return Err(PipelineError::MissingUpstream(path.display().to_string()));
    }
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(PipelineError::from)).collect()
}

/// Two whitespace-separated columns for `plot 'file' using 1:2`.
pub(crate) fn write_scatter(path: &Path, records: &[QualityRecord], split: SplitTag) -> Result<(), PipelineError> {
    let mut out = Vec::new();
    writeln!(out, "# proxy_mos predicted_score ({})", split.as_str())?;
    for r in records.iter().filter(|r| r.split_tag == split) {
        writeln!(out, "{} {}", r.proxy_mos, r.predicted_score)?;
    }
    Ok(atomic_write(path, &out)?)
}

pub fn read_summaries(path: &Path) -> Result<Vec<SplitSummary>, PipelineError> {
    read_csv(path)
}

#[derive(Serialize)]
struct TableRow<'a> {
    method: &'a str,
    #[serde(rename = "PLCC")]
    plcc: f64,
    #[serde(rename = "SROCC")]
    srocc: f64,
    #[serde(rename = "KROCC")]
    krocc: f64,
    #[serde(rename = "Overall")]
    overall: f64,
}

/// Method × metric table over the test split.
pub fn write_method_table(path: &Path, summaries: &[SplitSummary]) -> Result<(), PipelineError> {
    let rows: Vec<TableRow> = summaries
        .iter()
        .filter(|s| s.split == SplitTag::Test)
        .map(|s| TableRow { method: &s.method, plcc: s.plcc, srocc: s.srocc, krocc: s.krocc, overall: s.overall })
        .collect();
    write_csv(path, &rows)
}
