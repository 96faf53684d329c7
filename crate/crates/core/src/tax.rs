//! Bracketed marginal income taxes with lump-sum redistribution, and the
//! Saez-formula controller that re-estimates the elasticity of taxable
//! income from a rolling buffer of observed (income, marginal rate) pairs.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// 2018 US single-filer cutoffs in coin (USD 1000 = 1 coin); the final
/// bracket is open-ended.
pub const US_FEDERAL_CUTOFFS: [f64; 7] = [0.0, 9.7, 39.475, 84.2, 160.725, 204.1, 510.3];
pub const US_FEDERAL_RATES: [f64; 7] = [0.1, 0.12, 0.22, 0.24, 0.32, 0.35, 0.37];

#[derive(Debug, Error, PartialEq)]
pub enum TaxError {
    #[error("negative income {0}")]
    NegativeIncome(f64),
    #[error("cutoffs must start at 0 and strictly increase")]
    BadCutoffs,
    #[error("{rates} rates for {brackets} brackets")]
    RateCount { rates: usize, brackets: usize },
    #[error("rate {0} outside [0, 1]")]
    RateRange(f64),
    #[error("unknown schedule `{0}`")]
    UnknownSchedule(String),
    #[error("the camelback schedule needs explicit rates in the configuration")]
    CamelbackRatesRequired,
}

/// Marginal rates over income brackets `[m_b, m_{b+1})`. Only the finite
/// lower edges are stored: `lower_edges[0] == 0` and the top bracket is
/// unbounded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSchedule", into = "RawSchedule")]
pub struct TaxSchedule {
    lower_edges: Vec<f64>,
    rates: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawSchedule {
    cutoffs: Vec<f64>,
    rates: Vec<f64>,
}

impl TryFrom<RawSchedule> for TaxSchedule {
    type Error = TaxError;
    fn try_from(raw: RawSchedule) -> Result<Self, TaxError> {
        TaxSchedule::new(raw.cutoffs, raw.rates)
    }
}

impl From<TaxSchedule> for RawSchedule {
    fn from(s: TaxSchedule) -> Self {
        RawSchedule {
            cutoffs: s.lower_edges,
            rates: s.rates,
        }
    }
}

impl TaxSchedule {
    pub fn new(lower_edges: Vec<f64>, rates: Vec<f64>) -> Result<Self, TaxError> {
        validate_cutoffs(&lower_edges)?;
        if rates.len() != lower_edges.len() {
            return Err(TaxError::RateCount {
                rates: rates.len(),
                brackets: lower_edges.len(),
            });
        }
        if let Some(&r) = rates.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(TaxError::RateRange(r));
        }
        Ok(Self { lower_edges, rates })
    }

    pub fn zero(lower_edges: &[f64]) -> Self {
        Self {
            lower_edges: lower_edges.to_vec(),
            rates: vec![0.0; lower_edges.len()],
        }
    }

    pub fn with_rates(&self, rates: Vec<f64>) -> Result<Self, TaxError> {
        Self::new(self.lower_edges.clone(), rates)
    }

    pub fn lower_edges(&self) -> &[f64] {
        &self.lower_edges
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn brackets(&self) -> usize {
        self.rates.len()
    }

    fn upper_edge(&self, b: usize) -> f64 {
        self.lower_edges.get(b + 1).copied().unwrap_or(f64::INFINITY)
    }

    /// Total tax on period income `z`: each bracket's rate times the part of
    /// `z` falling inside it.
    pub fn tax_due(&self, z: f64) -> Result<f64, TaxError> {
        if z < 0.0 || z.is_nan() {
            return Err(TaxError::NegativeIncome(z));
        }
        Ok(self.tax_due_clamped(z))
    }

    /// `tax_due(max(z, 0))`.
    pub fn tax_due_clamped(&self, z: f64) -> f64 {
        let z = z.max(0.0);
        let mut total = 0.0;
        for (b, &rate) in self.rates.iter().enumerate() {
            let lo = self.lower_edges[b];
            if z <= lo {
                break;
            }
            let hi = self.upper_edge(b);
            total += rate * (z.min(hi) - lo);
        }
        total
    }

    /// Index of the bracket containing `z`; a cutoff belongs to the bracket
    /// that starts there.
    pub fn bracket_of(&self, z: f64) -> usize {
        self.lower_edges.partition_point(|&m| m <= z).saturating_sub(1)
    }

    pub fn marginal_rate_at(&self, z: f64) -> f64 {
        self.rates[self.bracket_of(z.max(0.0))]
    }

    /// Same cutoffs scaled by `factor` (human-play calibration uses 1/3).
    pub fn scaled_cutoffs(&self, factor: f64) -> Self {
        Self {
            lower_edges: self.lower_edges.iter().map(|m| m * factor).collect(),
            rates: self.rates.clone(),
        }
    }
}

fn validate_cutoffs(edges: &[f64]) -> Result<(), TaxError> {
    let starts_at_zero = edges.first() == Some(&0.0);
    let increasing = edges.windows(2).all(|w| w[0] < w[1]);
    if !starts_at_zero || !increasing || edges.iter().any(|m| !m.is_finite()) {
        return Err(TaxError::BadCutoffs);
    }
    Ok(())
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixedScheduleName {
    Free,
    UsFederal,
    Camelback,
}

impl std::str::FromStr for FixedScheduleName {
    type Err = TaxError;
    fn from_str(s: &str) -> Result<Self, TaxError> {
        match s {
            "free" => Ok(Self::Free),
            "us_federal" => Ok(Self::UsFederal),
            "camelback" => Ok(Self::Camelback),
            other => Err(TaxError::UnknownSchedule(other.to_string())),
        }
    }
}

pub fn fixed_schedule(
    name: FixedScheduleName,
    lower_edges: &[f64],
    camelback_rates: Option<&[f64]>,
) -> Result<TaxSchedule, TaxError> {
    match name {
        FixedScheduleName::Free => TaxSchedule::new(lower_edges.to_vec(), vec![0.0; lower_edges.len()]),
        FixedScheduleName::UsFederal => TaxSchedule::new(lower_edges.to_vec(), US_FEDERAL_RATES.to_vec()),
        FixedScheduleName::Camelback => {
            let rates = camelback_rates.ok_or(TaxError::CamelbackRatesRequired)?;
            TaxSchedule::new(lower_edges.to_vec(), rates.to_vec())
        }
    }
}

/// Outcome of collecting and redistributing one period's taxes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodLedger {
    pub period: usize,
    pub schedule: TaxSchedule,
    /// Raw period incomes (may be negative after net purchases).
    pub incomes: Vec<f64>,
    pub taxes: Vec<f64>,
    pub transfer: f64,
    /// `income - tax + transfer`.
    pub post_tax: Vec<f64>,
    /// Marginal rate at each agent's (clamped) income.
    pub marginal_rates: Vec<f64>,
}

impl PeriodLedger {
    /// Coin change applied to each agent at settlement.
    pub fn adjustments(&self) -> impl Iterator<Item = f64> + '_ {
        self.taxes.iter().map(move |t| self.transfer - t)
    }
}

/// Tax every agent on its clamped period income and hand the revenue back in
/// equal shares.
pub fn settle_period(period: usize, incomes: &[f64], schedule: &TaxSchedule) -> PeriodLedger {
    let n = incomes.len();
    let taxes: Vec<f64> = incomes.iter().map(|&z| schedule.tax_due_clamped(z)).collect();
    let transfer = if n == 0 { 0.0 } else { taxes.iter().sum::<f64>() / n as f64 };
    let post_tax = incomes.iter().zip(&taxes).map(|(z, t)| z - t + transfer).collect();
    let marginal_rates = incomes.iter().map(|&z| schedule.marginal_rate_at(z.max(0.0))).collect();
    PeriodLedger {
        period,
        schedule: schedule.clone(),
        incomes: incomes.to_vec(),
        taxes,
        transfer,
        post_tax,
        marginal_rates,
    }
}

/// Rolling window of (income, marginal rate) observations. Pairs that cannot
/// enter the log-log fit (`z <= 0` or `rate >= 1`) are dropped on entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElasticityBuffer {
    capacity: usize,
    pairs: VecDeque<(f64, f64)>,
}

impl ElasticityBuffer {
    pub const DEFAULT_CAPACITY: usize = 30_000;

    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            pairs: VecDeque::with_capacity(capacity.min(1 << 16)),
        }
    }

    /// Returns whether the pair was kept.
    pub fn push(&mut self, income: f64, rate: f64) -> bool {
        if !(income > 0.0 && income.is_finite() && (0.0..1.0).contains(&rate)) {
            return false;
        }
        if self.capacity == 0 {
            return false;
        }
        if self.pairs.len() == self.capacity {
            self.pairs.pop_front();
        }
        self.pairs.push_back((income, rate));
        true
    }

    pub fn extend(&mut self, pairs: impl IntoIterator<Item = (f64, f64)>) {
        for (z, r) in pairs {
            self.push(z, r);
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn pairs(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.pairs.iter().copied()
    }

    pub fn incomes(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| p.0).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElasticityFitConfig {
    pub min_samples: usize,
    pub default_elasticity: f64,
    pub max_rate: f64,
}

impl Default for ElasticityFitConfig {
    fn default() -> Self {
        Self {
            min_samples: 100,
            default_elasticity: 0.5,
            max_rate: 0.99,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElasticityFit {
    pub elasticity: f64,
    /// `log z0`, the fitted log income at zero tax.
    pub log_intercept: f64,
    pub samples: usize,
    pub used_default: bool,
}

/// Ordinary least squares of `log z` on `log(1 - rate)`; the slope is the
/// constant elasticity of taxable income. Falls back to the configured
/// default when the buffer is under-filled or the rates carry no variance.
pub fn fit_elasticity(pairs: impl IntoIterator<Item = (f64, f64)>, cfg: &ElasticityFitConfig) -> ElasticityFit {
    let pts: Vec<(f64, f64)> = pairs
        .into_iter()
        .filter(|&(z, r)| z > 0.0 && r < 1.0)
        .map(|(z, r)| ((1.0 - r.min(cfg.max_rate)).ln(), z.ln()))
        .collect();
    let fallback = |n| ElasticityFit {
        elasticity: cfg.default_elasticity,
        log_intercept: 0.0,
        samples: n,
        used_default: true,
    };
    let n = pts.len();
    if n < cfg.min_samples.max(2) {
        return fallback(n);
    }
    let nf = n as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for &(x, y) in &pts {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if sxx / nf < 1e-12 {
        return fallback(n);
    }
    let slope = sxy / sxx;
    ElasticityFit {
        elasticity: slope,
        log_intercept: my - slope * mx,
        samples: n,
        used_default: false,
    }
}

/// Normalized inverse-income social marginal welfare weights (`1/z`, summing
/// to one). Incomes must be positive.
pub fn inverse_income_weights(incomes: &[f64]) -> Vec<f64> {
    let raw: Vec<f64> = incomes.iter().map(|&z| 1.0 / z).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// `1 - G` at or below this is treated as zero: with equal incomes the
/// weight ratios land within a few ulps of 1.
const G_SLACK: f64 = 1e-12;

/// `(1 - G) / (1 - G + alpha * e)`, clamped to `[0, 1]`.
pub fn saez_rate(g: f64, alpha: f64, elasticity: f64) -> f64 {
    let num = 1.0 - g;
    if num <= G_SLACK {
        return 0.0;
    }
    let den = num + alpha * elasticity;
    if den <= 0.0 {
        return 1.0;
    }
    (num / den).clamp(0.0, 1.0)
}

/// Per-bin statistics of the discretized Saez computation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaezBins {
    pub bin_width: f64,
    /// Bin midpoints.
    pub income: Vec<f64>,
    pub alpha: Vec<f64>,
    pub g: Vec<f64>,
    pub rate: Vec<f64>,
    /// Total income earned inside each bin (aggregation weight).
    pub income_mass: Vec<f64>,
}

/// Share of samples used for the Pareto tail estimate of the top bin.
const TAIL_FRACTION: f64 = 0.05;

/// Histogram-based evaluation of the Saez formula over unit-width income
/// bins on `[0, max income]`. `alpha(z) = z f(z) / (1 - F(z))` and `G(z)` is
/// the normalized inverse-income weight held by incomes at or above the bin,
/// divided by the share of the population there. The top bin uses the Hill
/// estimate of the Pareto tail exponent as its `alpha`.
pub fn saez_bins(incomes: &[f64], elasticity: f64, bin_width: f64) -> Option<SaezBins> {
    let samples: Vec<f64> = incomes.iter().copied().filter(|z| *z > 0.0 && z.is_finite()).collect();
    if samples.is_empty() {
        return None;
    }
    let n = samples.len() as f64;
    let weights = inverse_income_weights(&samples);
    let max = samples.iter().copied().fold(0.0, f64::max);
    let nbins = ((max / bin_width).floor() as usize + 1).max(1);

    let mut count = vec![0.0f64; nbins];
    let mut weight = vec![0.0f64; nbins];
    let mut mass = vec![0.0f64; nbins];
    for (&z, &w) in samples.iter().zip(&weights) {
        let b = ((z / bin_width).floor() as usize).min(nbins - 1);
        count[b] += 1.0;
        weight[b] += w;
        mass[b] += z;
    }

    let tail_alpha = pareto_tail_alpha(&samples);
    let mut bins = SaezBins {
        bin_width,
        income: Vec::with_capacity(nbins),
        alpha: Vec::with_capacity(nbins),
        g: Vec::with_capacity(nbins),
        rate: Vec::with_capacity(nbins),
        income_mass: mass,
    };
    // reverse cumulative sums, bin b covering incomes >= b * width
    let mut above_count = 0.0;
    let mut above_weight = 0.0;
    let mut alpha = vec![0.0; nbins];
    let mut g = vec![0.0; nbins];
    for b in (0..nbins).rev() {
        above_count += count[b];
        above_weight += weight[b];
        let mid = (b as f64 + 0.5) * bin_width;
        if above_count > 0.0 {
            let share_above = above_count / n;
            let density = count[b] / (n * bin_width);
            alpha[b] = mid * density / share_above;
            g[b] = (above_weight / share_above).min(1.0e12);
        }
    }
    if let Some(a) = tail_alpha {
        alpha[nbins - 1] = a;
    }
    for b in 0..nbins {
        let mid = (b as f64 + 0.5) * bin_width;
        bins.income.push(mid);
        bins.alpha.push(alpha[b]);
        bins.g.push(g[b]);
        bins.rate.push(saez_rate(g[b], alpha[b], elasticity));
    }
    Some(bins)
}

/// Hill estimator of the Pareto exponent over the top share of samples.
/// The tail is every sample whose upper-tail share is at most
/// `TAIL_FRACTION`; the reference point is the largest sample outside it.
fn pareto_tail_alpha(samples: &[f64]) -> Option<f64> {
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let n = sorted.len() as f64;
    // largest k (whole groups of ties) with k / n <= TAIL_FRACTION
    let mut k = 0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        if j as f64 / n <= TAIL_FRACTION {
            k = j;
            i = j;
        } else {
            break;
        }
    }
    if k == 0 || k >= sorted.len() {
        return None;
    }
    let reference = sorted[k];
    let log_sum: f64 = sorted[..k].iter().map(|z| (z / reference).ln()).sum();
    if log_sum <= 0.0 {
        return None;
    }
    Some(k as f64 / log_sum)
}

/// Project the per-bin Saez rates onto bracket rates: income-weighted mean
/// of the rates of bins whose midpoint lies in the bracket. Brackets with no
/// income inherit the rate of the nearest lower bracket that has income (or
/// the nearest higher one when no lower bracket does).
pub fn saez_schedule(
    incomes: &[f64],
    elasticity: f64,
    previous: &TaxSchedule,
    bin_width: f64,
) -> TaxSchedule {
    let Some(bins) = saez_bins(incomes, elasticity, bin_width) else {
        return previous.clone();
    };
    let nb = previous.brackets();
    let mut num = vec![0.0; nb];
    let mut den = vec![0.0; nb];
    for i in 0..bins.income.len() {
        let b = previous.bracket_of(bins.income[i]);
        num[b] += bins.income_mass[i] * bins.rate[i];
        den[b] += bins.income_mass[i];
    }
    let mut rates: Vec<Option<f64>> = (0..nb)
        .map(|b| (den[b] > 0.0).then(|| (num[b] / den[b]).clamp(0.0, 1.0)))
        .collect();
    let first = rates.iter().flatten().next().copied().unwrap_or(0.0);
    let mut last = None;
    for r in rates.iter_mut() {
        match r {
            Some(v) => last = Some(*v),
            None => *r = Some(last.unwrap_or(first)),
        }
    }
    previous
        .with_rates(rates.into_iter().map(|r| r.unwrap_or(0.0)).collect())
        .expect("rates clamped to [0, 1]")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaezConfig {
    pub buffer_capacity: usize,
    pub fit: ElasticityFitConfig,
    pub bin_width: f64,
    /// Fitted elasticities are clamped into this range before use.
    pub elasticity_bounds: (f64, f64),
}

impl Default for SaezConfig {
    fn default() -> Self {
        Self {
            buffer_capacity: ElasticityBuffer::DEFAULT_CAPACITY,
            fit: ElasticityFitConfig::default(),
            bin_width: 1.0,
            elasticity_bounds: (0.0, 10.0),
        }
    }
}

/// Multi-period Saez controller: at each period start it refits the
/// elasticity on the buffer and evaluates the formula on the buffered
/// incomes. New observations are staged in `pending` so replicas can be
/// merged into one shared buffer between training iterations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaezController {
    pub config: SaezConfig,
    pub buffer: ElasticityBuffer,
    pub pending: Vec<(f64, f64)>,
    pub last_fit: Option<ElasticityFit>,
}

impl SaezController {
    pub fn new(config: SaezConfig) -> Self {
        let buffer = ElasticityBuffer::new(config.buffer_capacity);
        Self {
            config,
            buffer,
            pending: Vec::new(),
            last_fit: None,
        }
    }

    pub fn next_schedule(&mut self, current: &TaxSchedule) -> TaxSchedule {
        let fit = fit_elasticity(self.buffer.pairs(), &self.config.fit);
        let (lo, hi) = self.config.elasticity_bounds;
        let e = fit.elasticity.clamp(lo, hi);
        self.last_fit = Some(fit);
        saez_schedule(&self.buffer.incomes(), e, current, self.config.bin_width)
    }

    /// Record a settled period. Pairs go to the local buffer and to `pending`.
    pub fn observe(&mut self, ledger: &PeriodLedger) {
        for (&z, &r) in ledger.incomes.iter().zip(&ledger.marginal_rates) {
            let z = z.max(0.0);
            if self.buffer.push(z, r) {
                self.pending.push((z, r));
            }
        }
    }

    pub fn take_pending(&mut self) -> Vec<(f64, f64)> {
        std::mem::take(&mut self.pending)
    }
}
