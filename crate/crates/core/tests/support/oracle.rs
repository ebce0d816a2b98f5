//! Independent reference computations in 192-bit binary floating point.

use astro_float::{BigFloat, Consts, RoundingMode};

const P: usize = 192;
const RM: RoundingMode = RoundingMode::ToEven;

fn big(x: f64) -> BigFloat {
    BigFloat::from_f64(x, P)
}

fn to_f64(x: &BigFloat) -> f64 {
    x.to_string().parse().expect("decimal rendering parses")
}

fn consts() -> Consts {
    Consts::new().expect("constant cache")
}

/// `-Σ p ln p` and `Σ p` over the positive entries.
fn entropy_and_mass(probs: &[f64], cc: &mut Consts) -> (BigFloat, BigFloat) {
    let mut h = big(0.0);
    let mut mass = big(0.0);
    for &p in probs.iter().filter(|&&p| p > 0.0) {
        let bp = big(p);
        let term = bp.mul(&bp.ln(P, RM, cc), P, RM);
        h = h.sub(&term, P, RM);
        mass = mass.add(&bp, P, RM);
    }
    (h, mass)
}

/// Entropy in nats of a full distribution.
#[allow(dead_code)]
pub fn entropy_nats(probs: &[f64]) -> f64 {
    to_f64(&entropy_and_mass(probs, &mut consts()).0)
}

/// Entropy of `probs` over a vocabulary of `vocab`, spreading the missing
/// mass evenly over the unseen tokens.
pub fn residual_entropy_nats(probs: &[f64], vocab: usize) -> f64 {
    let mut cc = consts();
    let (mut h, mass) = entropy_and_mass(probs, &mut cc);
    let residual = big(1.0).sub(&mass, P, RM);
    let unseen = vocab - probs.len();
    if to_f64(&residual) > 0.0 && unseen > 0 {
        let share = residual.div(&big(unseen as f64), P, RM);
        h = h.sub(&residual.mul(&share.ln(P, RM, &mut cc), P, RM), P, RM);
    }
    to_f64(&h)
}

/// Entropy divided by `ln V`, where `V = probs.len()`.
pub fn entropy_uncertainty(probs: &[f64]) -> f64 {
    let mut cc = consts();
    let (h, _) = entropy_and_mass(probs, &mut cc);
    let ln_v = big(probs.len() as f64).ln(P, RM, &mut cc);
    to_f64(&h.div(&ln_v, P, RM))
}

/// One minus the gap between the two largest probabilities.
pub fn pd_uncertainty(probs: &[f64]) -> f64 {
    let mut sorted = probs.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let second = sorted.get(1).copied().unwrap_or(0.0);
    let gap = big(sorted[0]).sub(&big(second), P, RM);
    to_f64(&big(1.0).sub(&gap, P, RM))
}
