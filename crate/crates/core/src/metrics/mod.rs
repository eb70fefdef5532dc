//! Makespan, utilization and I/O metrics derived from frozen run traces,
//! ratio reports between two sets of runs and run-to-run variation.
//!
//! Utilization counts slot occupancy over the whole run: a slot held by the
//! pool but idle lowers the percentage.

mod export;
mod ratio;
mod repro;
mod summary;
mod timeline;

pub use export::{io_csv, io_svg, utilization_csv, utilization_svg};
pub use ratio::{compute_ratios, ConfigRatio, RatioReport, Spread, DEFAULT_RATIO_TOLERANCE};
pub use repro::{reproducibility_stats, Stat, StageStats, VariationReport};
pub use summary::{summarize, CategoryMetrics, MetricsSummary, TaskMetrics};
pub use timeline::{io_timeline, utilization_timeline, BusyInterval, IoSegment, SlotTimeline};

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("trace holds no task records")]
    EmptyTrace,
    #[error("{original} original summaries but {mini} mini-app summaries")]
    LengthMismatch { original: usize, mini: usize },
    #[error("original {metric} is zero in configuration {config}")]
    ZeroDenominator { metric: String, config: usize },
    #[error("need at least {needed} summaries, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
}

/// Total length covered by a set of intervals.
pub fn union_length(mut intervals: Vec<(f64, f64)>) -> f64 {
    intervals.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut total = 0.0;
    let mut current: Option<(f64, f64)> = None;
    for (s, e) in intervals {
        match current {
            Some((cs, ce)) if s <= ce => current = Some((cs, ce.max(e))),
            Some((cs, ce)) => {
                total += ce - cs;
                current = Some((s, e));
            }
            None => current = Some((s, e)),
        }
    }
    if let Some((cs, ce)) = current {
        total += ce - cs;
    }
    total
}

/// Bytes to decimal gigabytes.
pub fn gigabytes(bytes: u64) -> f64 {
    bytes as f64 / 1e9
}
