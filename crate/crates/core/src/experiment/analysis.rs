//! Analyses over completed replays: per-skill breakdowns, tax-gaming
//! detection, paired t-tests and the human-session episode filter.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use super::{EpisodeMetrics, EpisodeReplay};
use crate::tax::PeriodLedger;

/// Human-session episodes below this productivity are dropped before
/// analysis (participants who were idle or disconnected).
pub const HUMAN_MIN_PRODUCTIVITY: f64 = 1000.0;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("no replays given")]
    Empty,
    #[error("replay {0} has a different agent count or skill set")]
    Inconsistent(usize),
    #[error("need at least 2 paired samples, got {0}")]
    TooFewPairs(usize),
    #[error("pairing key appears more than once")]
    DuplicateKey,
    #[error("agent {0} is not in the replay")]
    UnknownAgent(usize),
}

pub fn exclude_low_productivity(episodes: Vec<EpisodeMetrics>, min: f64) -> Vec<EpisodeMetrics> {
    episodes.into_iter().filter(|e| e.productivity >= min).collect()
}

fn ledgers(rep: &EpisodeReplay) -> impl Iterator<Item = &PeriodLedger> {
    rep.ticks.iter().filter_map(|t| t.info.settlement.as_ref())
}

/// Episode totals for one skill rank, averaged over replays.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkillRow {
    /// 0 is the lowest building skill.
    pub rank: usize,
    pub skill: f64,
    pub pre_tax_income: f64,
    pub tax_paid: f64,
    /// Tax paid minus transfers received.
    pub net_tax: f64,
    pub post_tax_income: f64,
}

pub fn per_skill_breakdown(replays: &[EpisodeReplay]) -> Result<Vec<SkillRow>, AnalysisError> {
    let first = replays.first().ok_or(AnalysisError::Empty)?;
    let sorted_skills = |r: &EpisodeReplay| {
        let mut s = r.summary.building_skill.clone();
        s.sort_by(f64::total_cmp);
        s
    };
    let skills = sorted_skills(first);
    let n = skills.len();
    let mut rows: Vec<SkillRow> = skills
        .iter()
        .enumerate()
        .map(|(rank, &skill)| SkillRow {
            rank,
            skill,
            pre_tax_income: 0.0,
            tax_paid: 0.0,
            net_tax: 0.0,
            post_tax_income: 0.0,
        })
        .collect();
    for (k, rep) in replays.iter().enumerate() {
        if sorted_skills(rep) != skills {
            return Err(AnalysisError::Inconsistent(k));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| rep.summary.building_skill[a].total_cmp(&rep.summary.building_skill[b]));
        for l in ledgers(rep) {
            if l.incomes.len() != n {
                return Err(AnalysisError::Inconsistent(k));
            }
            for (rank, &i) in order.iter().enumerate() {
                let row = &mut rows[rank];
                row.pre_tax_income += l.incomes[i];
                row.tax_paid += l.taxes[i];
                row.net_tax += l.taxes[i] - l.transfer;
                row.post_tax_income += l.post_tax[i];
            }
        }
    }
    let k = replays.len() as f64;
    for r in &mut rows {
        r.pre_tax_income /= k;
        r.tax_paid /= k;
        r.net_tax /= k;
        r.post_tax_income /= k;
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaxGamingReport {
    pub agent: usize,
    pub incomes: Vec<f64>,
    pub actual_tax: f64,
    /// Tax owed had the agent reported its mean period income every period
    /// under that period's schedule.
    pub smoothed_tax: f64,
    /// `smoothed_tax - actual_tax`; positive when bunching income saved tax.
    pub saving: f64,
}

impl TaxGamingReport {
    pub fn from_ledgers<'a>(agent: usize, ledgers: impl IntoIterator<Item = &'a PeriodLedger>) -> Result<Self, AnalysisError> {
        let ledgers: Vec<&PeriodLedger> = ledgers.into_iter().collect();
        if ledgers.iter().any(|l| agent >= l.incomes.len()) {
            return Err(AnalysisError::UnknownAgent(agent));
        }
        let incomes: Vec<f64> = ledgers.iter().map(|l| l.incomes[agent]).collect();
        let actual_tax: f64 = ledgers.iter().map(|l| l.taxes[agent]).sum();
        let mean = if incomes.is_empty() {
            0.0
        } else {
            incomes.iter().sum::<f64>() / incomes.len() as f64
        };
        let smoothed_tax: f64 = ledgers.iter().map(|l| l.schedule.tax_due_clamped(mean)).sum();
        Ok(Self {
            agent,
            incomes,
            actual_tax,
            smoothed_tax,
            saving: smoothed_tax - actual_tax,
        })
    }
}

pub fn tax_gaming_report(replay: &EpisodeReplay, agent: usize) -> Result<TaxGamingReport, AnalysisError> {
    TaxGamingReport::from_ledgers(agent, ledgers(replay))
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub n: usize,
    pub mean_diff: f64,
    pub t: f64,
    /// Two-sided p value.
    pub p: f64,
    /// One-sided p value for a positive mean difference.
    pub p_greater: f64,
}

/// Paired t-test on the differences `a - b`. Zero variance yields `t = 0,
/// p = 1` when the mean is zero and an infinite `t` with `p = 0` otherwise.
pub fn paired_ttest_diffs(d: &[f64]) -> Result<TTest, AnalysisError> {
    let n = d.len();
    if n < 2 {
        return Err(AnalysisError::TooFewPairs(n));
    }
    let nf = n as f64;
    let mean = d.iter().sum::<f64>() / nf;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    if var == 0.0 {
        let (t, p, p_greater) = if mean == 0.0 {
            (0.0, 1.0, 0.5)
        } else if mean > 0.0 {
            (f64::INFINITY, 0.0, 0.0)
        } else {
            (f64::NEG_INFINITY, 0.0, 1.0)
        };
        return Ok(TTest { n, mean_diff: mean, t, p, p_greater });
    }
    let t = mean / (var.sqrt() / nf.sqrt());
    let dist = StudentsT::new(0.0, 1.0, nf - 1.0).expect("df >= 1");
    Ok(TTest {
        n,
        mean_diff: mean,
        t,
        p: (2.0 * dist.cdf(-t.abs())).min(1.0),
        p_greater: dist.cdf(-t),
    })
}

/// Pair samples by key (keys present on both sides) and test `a - b`.
pub fn paired_ttest<K: Ord + Clone>(a: &[(K, f64)], b: &[(K, f64)]) -> Result<TTest, AnalysisError> {
    let index = |s: &[(K, f64)]| -> Result<BTreeMap<K, f64>, AnalysisError> {
        let mut m = BTreeMap::new();
        for (k, v) in s {
            if m.insert(k.clone(), *v).is_some() {
                return Err(AnalysisError::DuplicateKey);
            }
        }
        Ok(m)
    };
    let (a, b) = (index(a)?, index(b)?);
    let d: Vec<f64> = a.iter().filter_map(|(k, x)| b.get(k).map(|y| x - y)).collect();
    paired_ttest_diffs(&d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{EnvConfig, StepInfo, TaxController};
    use crate::experiment::{ReplayHeader, TickRecord, Treatment, REPLAY_VERSION};
    use crate::learn::EpisodeSummary;
    use crate::tax::{settle_period, TaxSchedule};

    pub(crate) fn synthetic(periods: &[(Vec<f64>, TaxSchedule)], skills: Vec<f64>) -> EpisodeReplay {
        let n = skills.len();
        let ticks = periods
            .iter()
            .enumerate()
            .map(|(p, (inc, s))| TickRecord {
                actions: vec![0; n],
                planner_action: None,
                rewards: vec![0.0; n],
                planner_reward: 0.0,
                coin: vec![0.0; n],
                labor: vec![0.0; n],
                info: StepInfo {
                    settlement: Some(settle_period(p, inc, s)),
                    ..StepInfo::default()
                },
            })
            .collect();
        EpisodeReplay {
            header: ReplayHeader {
                version: REPLAY_VERSION,
                config_hash: String::new(),
                seed: 0,
                treatment: Treatment::Free,
                rate_cap: 1.0,
                players: Vec::new(),
                env: EnvConfig::default(),
                controller: TaxController::Free,
            },
            ticks,
            summary: EpisodeSummary {
                utility: vec![0.0; n],
                coin: vec![0.0; n],
                labor: vec![0.0; n],
                building_skill: skills,
                productivity: 0.0,
                equality: 1.0,
                eq_times_prod: 0.0,
                total_tax: 0.0,
            },
        }
    }

    fn flat(rate: f64) -> TaxSchedule {
        TaxSchedule::new(vec![0.0], vec![rate]).unwrap()
    }

    #[test]
    fn breakdown_of_a_flat_ten_percent_tax() {
        let rep = synthetic(&[(vec![100.0, 0.0, 0.0, 0.0], flat(0.1))], vec![2.22, 1.13, 1.33, 1.65]);
        let rows = per_skill_breakdown(&[rep]).unwrap();
        let net: Vec<f64> = rows.iter().map(|r| r.net_tax).collect();
        // agent 0 has the top skill, so it lands in the last rank
        assert_eq!(net, vec![-2.5, -2.5, -2.5, 7.5]);
        assert_eq!(rows[3].pre_tax_income, 100.0);
        assert_eq!(rows[3].post_tax_income, 92.5);
        assert_eq!(rows.iter().map(|r| r.net_tax).sum::<f64>(), 0.0);
    }

    #[test]
    fn breakdown_under_zero_tax_and_inconsistent_input() {
        let a = synthetic(&[(vec![5.0, 1.0], flat(0.0))], vec![1.0, 2.0]);
        let rows = per_skill_breakdown(std::slice::from_ref(&a)).unwrap();
        assert!(rows.iter().all(|r| r.tax_paid == 0.0 && r.net_tax == 0.0));
        let b = synthetic(&[(vec![5.0, 1.0], flat(0.0))], vec![1.0, 3.0]);
        assert_eq!(per_skill_breakdown(&[a, b]), Err(AnalysisError::Inconsistent(1)));
        assert_eq!(per_skill_breakdown(&[]), Err(AnalysisError::Empty));
    }

    #[test]
    fn tax_gaming_trivial_cases() {
        let s = TaxSchedule::new(vec![0.0, 50.0], vec![0.1, 0.5]).unwrap();
        let steady = synthetic(&[(vec![60.0], s.clone()), (vec![60.0], s.clone())], vec![1.0]);
        let r = tax_gaming_report(&steady, 0).unwrap();
        assert_eq!(r.saving, 0.0);
        let idle = synthetic(&[(vec![0.0], s.clone()), (vec![0.0], s.clone())], vec![1.0]);
        let r = tax_gaming_report(&idle, 0).unwrap();
        assert_eq!((r.actual_tax, r.smoothed_tax), (0.0, 0.0));
        assert_eq!(tax_gaming_report(&idle, 3), Err(AnalysisError::UnknownAgent(3)));
    }

    #[test]
    fn bunching_costs_under_progressive_and_saves_under_regressive() {
        let progressive = TaxSchedule::new(vec![0.0, 50.0], vec![0.1, 0.5]).unwrap();
        let rep = synthetic(&[(vec![0.0], progressive.clone()), (vec![100.0], progressive)], vec![1.0]);
        let r = tax_gaming_report(&rep, 0).unwrap();
        assert_eq!(r.incomes, vec![0.0, 100.0]);
        assert!(r.actual_tax >= r.smoothed_tax);
        let regressive = TaxSchedule::new(vec![0.0, 50.0], vec![0.5, 0.1]).unwrap();
        let rep = synthetic(&[(vec![0.0], regressive.clone()), (vec![100.0], regressive)], vec![1.0]);
        let r = tax_gaming_report(&rep, 0).unwrap();
        assert!(r.actual_tax < r.smoothed_tax);
        assert!(r.saving > 0.0);
    }

    #[test]
    fn ttest_textbook_case() {
        let d = [2.0, -1.0, 3.0, 0.0, 1.0];
        let r = paired_ttest_diffs(&d).unwrap();
        let mean = 1.0;
        let sd = (((1.0f64) + 4.0 + 4.0 + 1.0 + 0.0) / 4.0).sqrt();
        assert!((r.t - mean / (sd / 5f64.sqrt())).abs() < 1e-12);
        assert!(r.p > 0.0 && r.p < 1.0);
        assert!((r.p - 2.0 * r.p_greater).abs() < 1e-12);
    }

    #[test]
    fn ttest_degenerate_cases() {
        let same = paired_ttest(&[(1, 3.0), (2, 4.0)], &[(1, 3.0), (2, 4.0)]).unwrap();
        assert_eq!((same.t, same.p), (0.0, 1.0));
        let ones = paired_ttest_diffs(&[1.0; 4]).unwrap();
        assert_eq!((ones.t, ones.p, ones.p_greater), (f64::INFINITY, 0.0, 0.0));
        assert_eq!(paired_ttest_diffs(&[1.0]), Err(AnalysisError::TooFewPairs(1)));
        assert_eq!(paired_ttest(&[(1, 1.0), (1, 2.0)], &[(1, 0.0)]), Err(AnalysisError::DuplicateKey));
    }

    #[test]
    fn ttest_pairs_by_key() {
        let a = [("x", 5.0), ("y", 7.0), ("z", 9.0), ("lonely", 100.0)];
        let b = [("z", 8.0), ("x", 3.0), ("y", 7.0)];
        let r = paired_ttest(&a, &b).unwrap();
        assert_eq!(r.n, 3);
        assert!((r.mean_diff - 1.0).abs() < 1e-15);
    }

    #[test]
    fn exclusion_filter() {
        let m = |p: f64| EpisodeMetrics {
            treatment: Treatment::Free,
            seed: 0,
            episode: 0,
            productivity: p,
            equality: 1.0,
            eq_times_prod: p,
            weighted_swf: 0.0,
            total_tax: 0.0,
        };
        let kept = exclude_low_productivity(vec![m(999.0), m(1000.0), m(2500.0)], HUMAN_MIN_PRODUCTIVITY);
        assert_eq!(kept.len(), 2);
    }
}
