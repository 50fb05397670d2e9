//! Choice of measurement dims for the currently available bandwidth.

use std::cmp::Ordering;

use mcl_core::{MaskDims, MaskSpec};

use crate::packet::packet_bytes;

/// Spread of the per-mode fill ratios `dims[k] / max[k]`; smaller is more balanced.
fn spread(dims: &[usize], max: &[usize]) -> f64 {
    let (lo, hi) = dims
        .iter()
        .zip(max)
        .map(|(&d, &m)| d as f64 / m as f64)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r), hi.max(r)));
    hi - lo
}

fn balance_then_lex(a: &MaskDims, b: &MaskDims, max: &[usize]) -> Ordering {
    spread(a, max)
        .total_cmp(&spread(b, max))
        .then_with(|| a.as_slice().cmp(b.as_slice()))
}

/// Best candidate whose packet fits in `budget` bytes: the most elements,
/// then the most balanced shape, then the lexicographically smallest tuple.
/// When nothing fits, the candidate with the fewest elements is returned.
pub fn choose_dims(candidates: &[MaskDims], max: &[usize], budget: f64) -> MaskDims {
    assert!(!candidates.is_empty(), "no candidate dims");
    let best = candidates
        .iter()
        .filter(|d| packet_bytes(d) as f64 <= budget)
        .min_by(|a, b| b.numel().cmp(&a.numel()).then_with(|| balance_then_lex(a, b, max)));
    best.unwrap_or_else(|| {
        candidates
            .iter()
            .min_by(|a, b| a.numel().cmp(&b.numel()).then_with(|| balance_then_lex(a, b, max)))
            .unwrap()
    })
    .clone()
}

/// Dims within `spec` for a channel of `rate` bytes/s and one sample every
/// `deadline` seconds.
pub fn rate_controller(rate: f64, deadline: f64, spec: &MaskSpec) -> MaskDims {
    assert!(deadline > 0.0, "deadline must be positive");
    choose_dims(&spec.enumerate(), &spec.max_dims(), rate * deadline)
}
