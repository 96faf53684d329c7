//! CSV export. Column layouts are listed in `docs/metrics.md`; every writer
//! is deterministic, so re-exporting the same run gives identical bytes.

use std::fs::{self, File};
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::{EpisodeReplay, EvalSummary, SkillRow};
use crate::learn::{IterStats, LossStats};
use crate::metrics;

pub const SUMMARY_HEADER: [&str; 8] = [
    "treatment",
    "seed",
    "episode",
    "productivity",
    "equality",
    "eq_times_prod",
    "weighted_swf",
    "total_tax",
];

pub const TRAINING_HEADER: [&str; 12] = [
    "iteration",
    "phase",
    "samples",
    "rate_cap",
    "episodes",
    "mean_agent_reward",
    "mean_planner_reward",
    "eq_times_prod",
    "agent_entropy",
    "agent_policy_loss",
    "agent_value_loss",
    "planner_entropy",
];

#[derive(Debug, Error)]
#[error("{path}: {source}")]
pub struct ExportError {
    pub path: PathBuf,
    #[source]
    pub source: csv::Error,
}

fn writer(path: &Path) -> Result<csv::Writer<File>, ExportError> {
    let wrap = |source| ExportError {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| wrap(csv::Error::from(e)))?;
    }
    csv::Writer::from_path(path).map_err(wrap)
}

fn write_rows<I>(path: &Path, header: &[String], rows: I) -> Result<(), ExportError>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let wrap = |source| ExportError {
        path: path.to_path_buf(),
        source,
    };
    let mut w = writer(path)?;
    w.write_record(header).map_err(wrap)?;
    for r in rows {
        w.write_record(&r).map_err(wrap)?;
    }
    w.flush().map_err(|e: io::Error| wrap(e.into()))
}

fn owned(h: &[&str]) -> Vec<String> {
    h.iter().map(|s| s.to_string()).collect()
}

/// Writes `summary.csv` (one row per evaluation episode) and
/// `aggregate.csv` (mean and variance per treatment and metric) into `dir`.
pub fn export_metrics(dir: &Path, runs: &[EvalSummary]) -> Result<Vec<PathBuf>, ExportError> {
    let summary = dir.join("summary.csv");
    write_rows(
        &summary,
        &owned(&SUMMARY_HEADER),
        runs.iter().flat_map(|r| &r.episodes).map(|e| {
            vec![
                e.treatment.to_string(),
                e.seed.to_string(),
                e.episode.to_string(),
                e.productivity.to_string(),
                e.equality.to_string(),
                e.eq_times_prod.to_string(),
                e.weighted_swf.to_string(),
                e.total_tax.to_string(),
            ]
        }),
    )?;
    let aggregate = dir.join("aggregate.csv");
    write_rows(
        &aggregate,
        &owned(&["treatment", "metric", "mean", "variance", "episodes", "excluded"]),
        runs.iter().flat_map(|r| {
            [
                ("productivity", r.productivity),
                ("equality", r.equality),
                ("eq_times_prod", r.eq_times_prod),
                ("weighted_swf", r.weighted_swf),
            ]
            .map(|(name, mv)| {
                vec![
                    r.treatment.to_string(),
                    name.to_string(),
                    mv.mean.to_string(),
                    mv.variance.to_string(),
                    r.episodes.len().to_string(),
                    r.excluded.to_string(),
                ]
            })
        }),
    )?;
    Ok(vec![summary, aggregate])
}

pub fn write_breakdown_csv(path: &Path, rows: &[SkillRow]) -> Result<(), ExportError> {
    write_rows(
        path,
        &owned(&["rank", "skill", "pre_tax_income", "tax_paid", "net_tax", "post_tax_income"]),
        rows.iter().map(|r| {
            vec![
                r.rank.to_string(),
                r.skill.to_string(),
                r.pre_tax_income.to_string(),
                r.tax_paid.to_string(),
                r.net_tax.to_string(),
                r.post_tax_income.to_string(),
            ]
        }),
    )
}

/// Per-tick plot series of one replay: coin totals and the equality of the
/// coin distribution.
pub fn write_tick_series(path: &Path, replay: &EpisodeReplay) -> Result<(), ExportError> {
    write_rows(
        path,
        &owned(&["tick", "productivity", "equality", "eq_times_prod"]),
        replay.ticks.iter().enumerate().map(|(t, r)| {
            vec![
                (t + 1).to_string(),
                metrics::productivity(&r.coin).to_string(),
                metrics::equality(&r.coin).to_string(),
                metrics::swf_eq_times_prod(&r.coin).to_string(),
            ]
        }),
    )
}

/// Training log, one row per iteration; per-agent mean utilities follow the
/// fixed columns as `utility_0..`.
pub fn write_training_csv(path: &Path, history: &[IterStats]) -> Result<(), ExportError> {
    let n = history.iter().map(|h| h.mean_utility.len()).max().unwrap_or(0);
    let mut header = owned(&TRAINING_HEADER);
    header.extend((0..n).map(|i| format!("utility_{i}")));
    write_rows(
        path,
        &header,
        history.iter().map(|h| {
            let planner = h.planner.as_ref().map(|p: &LossStats| p.entropy.to_string()).unwrap_or_default();
            let mut row = vec![
                h.iteration.to_string(),
                h.phase.to_string(),
                h.samples.to_string(),
                h.rate_cap.to_string(),
                h.episodes.to_string(),
                h.mean_agent_reward.to_string(),
                h.mean_planner_reward.to_string(),
                h.mean_eq_times_prod.to_string(),
                h.agent.entropy.to_string(),
                h.agent.policy_loss.to_string(),
                h.agent.value_loss.to_string(),
                planner,
            ];
            row.extend((0..n).map(|i| h.mean_utility.get(i).map(f64::to_string).unwrap_or_default()));
            row
        }),
    )
}
