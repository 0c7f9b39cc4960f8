use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::score::ScoreReport;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
    PlotData,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "plotdata" => Ok(ReportFormat::PlotData),
            _ => Err(Error::validation(format!("unknown report format {s:?}"))),
        }
    }
}

/// One line of the summary CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    /// `track` or `roi`
    pub scope: String,
    pub name: String,
    pub n_voxels: usize,
    pub mean_raw_r: f64,
    pub mean_reliability: f64,
    pub mean_normalized: f64,
}

pub const SUMMARY_HEADER: [&str; 6] = [
    "scope",
    "name",
    "n_voxels",
    "mean_raw_r",
    "mean_reliability",
    "mean_normalized",
];

/// Track row first, then ROIs in challenge order.
pub fn summary_rows(report: &ScoreReport) -> Vec<SummaryRow> {
    let track_name = if report.metadata.model.is_empty() {
        "track".to_string()
    } else {
        report.metadata.model.clone()
    };
    let row = |scope: &str, name: String, s: &super::RoiSummary| SummaryRow {
        scope: scope.into(),
        name,
        n_voxels: s.n_voxels,
        mean_raw_r: s.mean_raw_r,
        mean_reliability: s.mean_reliability,
        mean_normalized: s.mean_normalized,
    };
    std::iter::once(row("track", track_name, &report.track))
        .chain(report.per_roi.iter().map(|(roi, s)| row("roi", roi.to_string(), s)))
        .collect()
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| Error::write(path, e.into()))
}

fn write_records<I, R>(path: &Path, header: &[&str], records: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(|e| Error::write(path, e.into()))?;
    for r in records {
        w.write_record(r).map_err(|e| Error::write(path, e.into()))?;
    }
    w.flush().map_err(|e| Error::write(path, e))
}

pub fn emit_report(report: &ScoreReport, format: ReportFormat, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    match format {
        ReportFormat::Csv => emit_summary(std::slice::from_ref(report), path),
        ReportFormat::Json => {
            let mut text = serde_json::to_string_pretty(report)
                .map_err(|e| Error::validation(format!("report is not serializable: {e}")))?;
            text.push('\n');
            fs::write(path, text).map_err(|e| Error::write(path, e))
        }
        ReportFormat::PlotData => emit_plotdata(std::slice::from_ref(report), path),
    }
}

/// Summary rows of several reports under one header.
pub fn emit_summary(reports: &[ScoreReport], path: impl AsRef<Path>) -> Result<()> {
    write_records(
        path.as_ref(),
        &SUMMARY_HEADER,
        reports.iter().flat_map(summary_rows).map(|r| {
            vec![
                r.scope,
                r.name,
                r.n_voxels.to_string(),
                r.mean_raw_r.to_string(),
                r.mean_reliability.to_string(),
                r.mean_normalized.to_string(),
            ]
        }),
    )
}

/// Tidy `(model, roi, score)` rows for grouped bar charts of several models.
pub fn emit_plotdata(reports: &[ScoreReport], path: impl AsRef<Path>) -> Result<()> {
    write_records(
        path.as_ref(),
        &["model", "roi", "score"],
        reports.iter().flat_map(|rep| {
            rep.per_roi.iter().map(move |(roi, s)| {
                vec![rep.metadata.model.clone(), roi.to_string(), s.mean_normalized.to_string()]
            })
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluate::{score_track, RoiPartition, ScoreOptions};
    use crate::rng::Stream;
    use crate::tensorio::{PredictionMatrix, ResponseTensor, RoiName};
    use nalgebra::DMatrix;

    fn mini_track_report(model: &str, seed: u64) -> ScoreReport {
        let mut s = Stream::new(seed);
        let (videos, voxels) = (20, 18);
        let data: Vec<f64> = (0..videos * 2 * voxels).map(|_| s.standard_normal()).collect();
        let truth = ResponseTensor::new(RoiName::WB, 1, [videos, 2, voxels], data).unwrap();
        let pred = PredictionMatrix::new(RoiName::WB, DMatrix::from_fn(videos, voxels, |_, _| s.standard_normal())).unwrap();
        let part: RoiPartition = RoiName::MINI_TRACK
            .iter()
            .enumerate()
            .map(|(i, r)| (*r, vec![2 * i, 2 * i + 1]))
            .collect();
        let mut rep = score_track(&pred, &truth, Some(&part), &ScoreOptions::default()).unwrap();
        rep.metadata.model = model.into();
        rep
    }

    #[test]
    fn csv_has_track_plus_nine_rois() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        emit_report(&mini_track_report("m", 1), ReportFormat::Csv, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], SUMMARY_HEADER.join(","));
        assert_eq!(lines.len(), 1 + 1 + 9);
        assert!(lines[1].starts_with("track,m,18,"));
        assert!(lines[2].starts_with("roi,V1,2,"));
        assert!(lines[10].starts_with("roi,PPA,2,"));
    }

    #[test]
    fn plotdata_grid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        emit_plotdata(&[mini_track_report("a", 2), mini_track_report("b", 3)], &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1 + 2 * 9);
    }

    #[test]
    fn json_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        let rep = mini_track_report("m", 4);
        emit_report(&rep, ReportFormat::Json, &path).unwrap();
        let back: ScoreReport = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(back, rep);
    }

    #[test]
    fn unwritable_path() {
        let err = emit_report(&mini_track_report("m", 5), ReportFormat::Csv, "/nonexistent/dir/r.csv").unwrap_err();
        assert!(matches!(err, Error::Write { .. }));
    }
}
