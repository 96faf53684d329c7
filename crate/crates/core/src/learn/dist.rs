//! Masked categorical distributions over logits.

use rand::Rng;

/// Log-probabilities with masked entries set to `-inf`. Panics if the mask
/// permits nothing.
pub fn masked_log_softmax(logits: &[f64], mask: &[bool], out: &mut [f64]) {
    assert_eq!(logits.len(), mask.len());
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(l, _)| *l)
        .fold(f64::NEG_INFINITY, f64::max);
    assert!(max.is_finite(), "every action is masked");
    let sum: f64 = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(l, _)| (l - max).exp())
        .sum();
    let lse = max + sum.ln();
    for ((o, l), &m) in out.iter_mut().zip(logits).zip(mask) {
        *o = if m { l - lse } else { f64::NEG_INFINITY };
    }
}

pub fn entropy(logp: &[f64]) -> f64 {
    -logp
        .iter()
        .filter(|l| l.is_finite())
        .map(|&l| l.exp() * l)
        .sum::<f64>()
}

/// Inverse-CDF draw; masked entries (probability 0) are never returned.
pub fn sample<R: Rng + ?Sized>(logp: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, l) in logp.iter().enumerate() {
        if !l.is_finite() {
            continue;
        }
        acc += l.exp();
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

pub fn argmax(logp: &[f64]) -> usize {
    let mut best = 0;
    for (i, l) in logp.iter().enumerate() {
        if *l > logp[best] {
            best = i;
        }
    }
    best
}
