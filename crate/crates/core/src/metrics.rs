//! Utility, inequality and social-welfare measures.

use serde::{Deserialize, Serialize};

pub const DEFAULT_ETA: f64 = 0.23;

/// Floor applied to coin before inverting it for inverse-income weights.
pub const INVERSE_INCOME_FLOOR: f64 = 1e-6;

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtilityParams {
    pub eta: f64,
}

impl Default for UtilityParams {
    fn default() -> Self {
        Self { eta: DEFAULT_ETA }
    }
}

/// Isoelastic money utility `(z^(1-eta) - 1) / (1 - eta)`.
pub fn crra(z: f64, eta: f64) -> f64 {
    (z.max(0.0).powf(1.0 - eta) - 1.0) / (1.0 - eta)
}

pub fn utility(coin: f64, labor: f64, eta: f64) -> f64 {
    crra(coin, eta) - labor
}

/// Gini index via the sorted form `sum (2i - n - 1) x_(i) / (n sum x)`, which
/// equals the pairwise-difference definition. All-zero input gives 0.
pub fn gini(x: &[f64]) -> f64 {
    let n = x.len();
    let total: f64 = x.iter().sum();
    if n < 2 || total <= 0.0 {
        return 0.0;
    }
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let nf = n as f64;
    let weighted: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, v)| (2.0 * (i as f64 + 1.0) - nf - 1.0) * v)
        .sum();
    weighted / (nf * total)
}

/// `1 - gini * n / (n - 1)`: 1 for perfect equality, 0 when one agent owns
/// everything.
pub fn equality(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 2 {
        return 1.0;
    }
    1.0 - gini(x) * n as f64 / (n as f64 - 1.0)
}

pub fn productivity(x: &[f64]) -> f64 {
    x.iter().sum()
}

pub fn swf_eq_times_prod(x: &[f64]) -> f64 {
    equality(x) * productivity(x)
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WelfareWeights {
    Utilitarian,
    /// All weight on the poorest agent(s), split evenly across ties.
    Rawlsian,
    /// `1 / coin`, normalized to sum 1.
    InverseIncome,
}

pub fn welfare_weights(coin: &[f64], mode: WelfareWeights) -> Vec<f64> {
    match mode {
        WelfareWeights::Utilitarian => vec![1.0; coin.len()],
        WelfareWeights::Rawlsian => {
            let min = coin.iter().copied().fold(f64::INFINITY, f64::min);
            let ties = coin.iter().filter(|&&c| c == min).count() as f64;
            coin.iter().map(|&c| if c == min { 1.0 / ties } else { 0.0 }).collect()
        }
        WelfareWeights::InverseIncome => {
            let raw: Vec<f64> = coin.iter().map(|c| 1.0 / c.max(INVERSE_INCOME_FLOOR)).collect();
            let total: f64 = raw.iter().sum();
            raw.into_iter().map(|w| w / total).collect()
        }
    }
}

pub fn swf_weighted(coin: &[f64], labor: &[f64], mode: WelfareWeights, eta: f64) -> f64 {
    welfare_weights(coin, mode)
        .iter()
        .zip(coin.iter().zip(labor))
        .map(|(w, (&c, &l))| w * utility(c, l, eta))
        .sum()
}
