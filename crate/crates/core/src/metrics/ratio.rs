use serde::{Deserialize, Serialize};

use super::{MetricsError, MetricsSummary};

/// Default max/min spread allowed across configurations.
pub const DEFAULT_RATIO_TOLERANCE: f64 = 1.15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigRatio {
    pub config: usize,
    pub r_time: f64,
    pub r_read: f64,
    pub r_write: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub time: f64,
    pub read: f64,
    pub write: f64,
}

/// Mini-app over original ratios per configuration, their means and whether
/// each ratio stays within `tolerance` (max/min) across configurations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioReport {
    pub r_time: f64,
    pub r_read: f64,
    pub r_write: f64,
    pub per_config: Vec<ConfigRatio>,
    pub spread: Spread,
    pub tolerance: f64,
    pub constant: bool,
}

fn ratio(mini: f64, original: f64, what: &str, config: usize) -> Result<f64, MetricsError> {
    if original == 0.0 {
        // two empty quantities compare as identical
        if mini == 0.0 {
            return Ok(1.0);
        }
        return Err(MetricsError::ZeroDenominator {
            metric: what.to_string(),
            config,
        });
    }
    Ok(mini / original)
}

fn spread(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    let min = values.fold(f64::INFINITY, f64::min);
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

pub fn compute_ratios(
    original: &[MetricsSummary],
    mini: &[MetricsSummary],
    tolerance: f64,
) -> Result<RatioReport, MetricsError> {
    if original.len() != mini.len() {
        return Err(MetricsError::LengthMismatch {
            original: original.len(),
            mini: mini.len(),
        });
    }
    if original.is_empty() {
        return Err(MetricsError::InsufficientSamples { needed: 1, got: 0 });
    }
    let per_config = original
        .iter()
        .zip(mini)
        .enumerate()
        .map(|(i, (o, m))| {
            Ok(ConfigRatio {
                config: i,
                r_time: ratio(m.makespan, o.makespan, "makespan", i)?,
                r_read: ratio(m.read_bytes as f64, o.read_bytes as f64, "read_bytes", i)?,
                r_write: ratio(m.write_bytes as f64, o.write_bytes as f64, "write_bytes", i)?,
            })
        })
        .collect::<Result<Vec<_>, MetricsError>>()?;
    let n = per_config.len() as f64;
    let spread = Spread {
        time: spread(per_config.iter().map(|c| c.r_time)),
        read: spread(per_config.iter().map(|c| c.r_read)),
        write: spread(per_config.iter().map(|c| c.r_write)),
    };
    let constant = spread.time <= tolerance && spread.read <= tolerance && spread.write <= tolerance;
    Ok(RatioReport {
        r_time: per_config.iter().map(|c| c.r_time).sum::<f64>() / n,
        r_read: per_config.iter().map(|c| c.r_read).sum::<f64>() / n,
        r_write: per_config.iter().map(|c| c.r_write).sum::<f64>() / n,
        per_config,
        spread,
        tolerance,
        constant,
    })
}
