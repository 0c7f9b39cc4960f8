//! Challenge scoring: per-voxel Pearson correlation between predicted and
//! measured responses, normalized by the square root of the voxel's
//! split-half noise ceiling, then averaged per ROI and over the track.

mod leaderboard;
pub(crate) mod metrics;
mod report;
mod score;

pub use leaderboard::{read_leaderboard, write_leaderboard, Leaderboard, LeaderboardRow};
pub use metrics::{
    normalized_score, pearson, reliability_all, spearman_brown, split_half_reliability,
    split_half_reliability_with, Correlation, NormalizedScore, SplitRule, RELIABILITY_EPSILON,
};
pub use report::{emit_plotdata, emit_report, emit_summary, summary_rows, ReportFormat, SummaryRow};
pub use score::{
    aggregate_subjects, score_track, CeilingCorrection, ReportMeta, RoiPartition, RoiSummary,
    ScoreOptions, ScoreReport, VoxelScore,
};
