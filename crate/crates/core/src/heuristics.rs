//! Deterministic ReLU selection: picks the unfixed unstable neuron whose
//! triangle relaxation is loosest.

use crate::model::NeuronId;
use crate::relax::{NeuronBounds, ReluSpec};

/// Relaxation-gap score of an unstable neuron: `(-l * u) / (u - l)`, the
/// height of the triangle at z = 0. Defined only for l < 0 < u.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitScore {
    pub neuron: NeuronId,
    pub score: f64,
}

pub fn split_score(l: f64, u: f64) -> f64 {
    debug_assert!(l < 0.0 && u > 0.0);
    (-l * u) / (u - l)
}

/// The unfixed unstable neuron maximizing the gap score; ties broken by
/// smallest layer index then smallest neuron index. Returns None when the
/// node is fully split (caller must fall back to the exact decision).
/// Deterministic in (gamma, bounds), which the tree searches rely on.
pub fn select_relu(gamma: &ReluSpec, bounds: &NeuronBounds) -> Option<NeuronId> {
    let mut best: Option<SplitScore> = None;
    for id in bounds.splittable(gamma) {
        let (l, u) = bounds.get(id);
        let score = split_score(l, u);
        let better = match best {
            None => true,
            // Splittable neurons are produced in (layer, neuron) order, so
            // a strict improvement is the only way to replace the incumbent.
            Some(b) => score > b.score,
        };
        if better {
            best = Some(SplitScore { neuron: id, score });
        }
    }
    best.map(|b| b.neuron)
}
