use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{MetricsError, MetricsSummary};

/// Sample statistics of one metric across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator).
    pub std: f64,
    pub cv: f64,
    /// `mean ± std`
    pub display: String,
}

impl Stat {
    /// Summation runs over sorted values so the result does not depend on
    /// input order.
    pub fn of(values: &[f64]) -> Stat {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let mut dev: Vec<f64> = v.iter().map(|x| (x - mean) * (x - mean)).collect();
        dev.sort_by(f64::total_cmp);
        let std = if v.len() > 1 {
            (dev.iter().sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let cv = if mean > 0.0 { std / mean } else { 0.0 };
        Stat {
            mean,
            std,
            cv,
            display: format!("{} ± {}", fmt_sig(mean), fmt_sig(std)),
        }
    }
}

fn fmt_sig(x: f64) -> String {
    if x == 0.0 {
        "0".into()
    } else if x.abs() >= 100.0 {
        format!("{x:.1}")
    } else {
        format!("{x:.3}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageStats {
    pub makespan: Stat,
    pub read_bytes: Stat,
    pub write_bytes: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationReport {
    pub runs: usize,
    pub makespan: Stat,
    pub cpu_util_pct: Stat,
    pub gpu_util_pct: Stat,
    pub read_bytes: Stat,
    pub write_bytes: Stat,
    /// Per task category.
    pub per_stage: BTreeMap<String, StageStats>,
    /// Whether every run started its tasks in the same order.
    pub stage_order_consistent: bool,
}

pub fn reproducibility_stats(summaries: &[MetricsSummary]) -> Result<VariationReport, MetricsError> {
    if summaries.len() < 2 {
        return Err(MetricsError::InsufficientSamples {
            needed: 2,
            got: summaries.len(),
        });
    }
    let col = |f: &dyn Fn(&MetricsSummary) -> f64| Stat::of(&summaries.iter().map(f).collect::<Vec<_>>());

    let mut stages: BTreeMap<&str, [Vec<f64>; 3]> = BTreeMap::new();
    for s in summaries {
        for (cat, c) in &s.per_category {
            let e = stages.entry(cat).or_default();
            e[0].push(c.makespan);
            e[1].push(c.read_bytes as f64);
            e[2].push(c.write_bytes as f64);
        }
    }
    let per_stage = stages
        .into_iter()
        .map(|(cat, [m, r, w])| {
            (
                cat.to_string(),
                StageStats {
                    makespan: Stat::of(&m),
                    read_bytes: Stat::of(&r),
                    write_bytes: Stat::of(&w),
                },
            )
        })
        .collect();

    let first = summaries[0].stage_order();
    let stage_order_consistent = summaries.iter().all(|s| s.stage_order() == first);

    Ok(VariationReport {
        runs: summaries.len(),
        makespan: col(&|s| s.makespan),
        cpu_util_pct: col(&|s| s.cpu_util_pct),
        gpu_util_pct: col(&|s| s.gpu_util_pct),
        read_bytes: col(&|s| s.read_bytes as f64),
        write_bytes: col(&|s| s.write_bytes as f64),
        per_stage,
        stage_order_consistent,
    })
}
