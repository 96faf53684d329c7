//! Per-player heads-up display values, computed server-side every tick.

use econsim_core::metrics::crra;
use econsim_core::tax::TaxSchedule;
use serde::{Deserialize, Serialize};

/// USD bonus paid per unit of utility.
pub const BONUS_PER_UTILITY: f64 = 0.06;

/// Forward simulation stops here; nothing near it is reachable in an episode.
pub const MAX_PROFITABLE_HOUSES: u32 = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hud {
    pub tick: usize,
    pub ticks_remaining: usize,
    pub seconds_remaining: f64,
    /// Coin owned.
    pub coin: f64,
    pub labor: f64,
    pub utility: f64,
    /// Size of the most recent change to the player's coin (builds and tax
    /// settlements); 0 until the first change.
    pub last_coin_change: f64,
    pub bonus_usd: f64,
    pub ticks_left_in_period: usize,
    pub period_income: f64,
    pub wood: u32,
    pub stone: u32,
    /// Tax information; `None` in qualification sessions.
    pub tax: Option<TaxHud>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaxHud {
    pub cutoffs: Vec<f64>,
    pub rates: Vec<f64>,
    /// Bracket containing this period's income so far.
    pub active_bracket: usize,
    pub marginal_rate: f64,
    pub profitable_houses_left: u32,
}

pub fn bonus_usd(utility: f64) -> f64 {
    utility * BONUS_PER_UTILITY
}

/// How many more houses this period are each worth building on their own.
///
/// House `k` pays `payout` pre-tax; its post-tax value is the payout minus
/// the extra tax it adds at the then-current period income (so it climbs the
/// brackets as houses accumulate). It counts if the money utility it adds at
/// the then-current coin exceeds `build_labor`. Redistribution is ignored:
/// the player cannot count on it. Counting stops at the first house that
/// does not pay.
pub fn profitable_houses_left(
    coin: f64,
    period_income: f64,
    payout: f64,
    schedule: &TaxSchedule,
    build_labor: f64,
    eta: f64,
) -> u32 {
    let (mut coin, mut income) = (coin, period_income);
    let mut k = 0;
    while k < MAX_PROFITABLE_HOUSES {
        let tax = schedule.tax_due_clamped(income + payout) - schedule.tax_due_clamped(income);
        let net = payout - tax;
        if crra(coin + net, eta) - crra(coin, eta) - build_labor <= 0.0 {
            break;
        }
        coin += net;
        income += payout;
        k += 1;
    }
    k
}
