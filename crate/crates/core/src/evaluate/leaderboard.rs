//! Two-column `method,score` tables in the style of a challenge leaderboard.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::score::ScoreReport;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardRow {
    pub method: String,
    pub score: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Leaderboard {
    pub rows: Vec<LeaderboardRow>,
}

impl Leaderboard {
    pub fn from_reports(reports: &[ScoreReport]) -> Self {
        Leaderboard {
            rows: reports
                .iter()
                .map(|r| LeaderboardRow {
                    method: r.metadata.model.clone(),
                    score: r.track_score(),
                })
                .collect(),
        }
    }

    /// Highest score first; equal scores keep their order.
    pub fn ranked(&self) -> Vec<&LeaderboardRow> {
        let mut rows: Vec<&LeaderboardRow> = self.rows.iter().collect();
        rows.sort_by(|a, b| b.score.total_cmp(&a.score));
        rows
    }
}

pub fn read_leaderboard(path: impl AsRef<Path>) -> Result<Leaderboard> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
    if headers.iter().collect::<Vec<_>>() != ["method", "score"] {
        return Err(Error::format(format!(
            "{}: expected header \"method,score\"",
            path.display()
        )));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
        let score: f64 = record[1]
            .trim()
            .parse()
            .map_err(|_| Error::format(format!("{}: bad score {:?}", path.display(), &record[1])))?;
        rows.push(LeaderboardRow {
            method: record[0].to_string(),
            score,
        });
    }
    Ok(Leaderboard { rows })
}

/// Scores are written in shortest round-trip form, so a parsed table
/// re-emits byte for byte.
pub fn write_leaderboard(board: &Leaderboard, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::write(path, e.into()))?;
    w.write_record(["method", "score"]).map_err(|e| Error::write(path, e.into()))?;
    for row in &board.rows {
        w.write_record([row.method.clone(), row.score.to_string()])
            .map_err(|e| Error::write(path, e.into()))?;
    }
    w.flush().map_err(|e| Error::write(path, e))
}
