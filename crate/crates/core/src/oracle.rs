//! Exact ground-truth verifier for desk-scale instances: enumerates every
//! ReLU activation pattern and solves the exact LP on each linear piece.

use crate::model::{Network, NeuronId};
use crate::relax::{exact_leaf_optimum, ReluSpec, Sign};
use crate::spec::{InputBox, OutputObjectives};
use crate::{Error, Result};

/// 2^K LPs keep the oracle in the seconds range at desk scale.
pub const ORACLE_RELU_CAP: usize = 16;

#[derive(Debug, Clone)]
pub struct OracleResult {
    pub min_value: f64,
    pub argmin: Vec<f64>,
    pub feasible_patterns: usize,
}

impl OracleResult {
    pub fn certified(&self) -> bool {
        self.min_value > 0.0
    }
}

/// All ReLU neurons in network order; bit k of a pattern index governs
/// the k-th entry (1 = positive branch).
fn relu_neurons(net: &Network) -> Vec<NeuronId> {
    net.relu_layers()
        .enumerate()
        .flat_map(|(li, (_, layer))| {
            (0..layer.out_dim()).map(move |ni| NeuronId { layer_index: li, neuron_index: ni })
        })
        .collect()
}

/// True minimum of `min_form f(N(x))` over the box by exhaustion over all
/// `2^K` sign assignments. Deterministic: ties in the minimum go to the
/// smallest pattern index.
pub fn exact_verify(
    net: &Network,
    box_: &InputBox,
    objectives: &OutputObjectives,
) -> Result<OracleResult> {
    let neurons = relu_neurons(net);
    let k = neurons.len();
    if k > ORACLE_RELU_CAP {
        return Err(Error::Invalid(format!(
            "oracle refuses {k} ReLUs (cap {ORACLE_RELU_CAP})"
        )));
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut feasible_patterns = 0usize;
    for bits in 0u32..(1u32 << k) {
        let mut gamma = ReluSpec::root();
        for (i, &id) in neurons.iter().enumerate() {
            let sign = if bits >> i & 1 == 1 { Sign::Positive } else { Sign::Negative };
            gamma = gamma.refine(id, sign);
        }
        if let Some((value, point)) = exact_leaf_optimum(net, box_, objectives, &gamma)? {
            feasible_patterns += 1;
            if best.as_ref().map_or(true, |(b, _)| value < *b) {
                best = Some((value, point));
            }
        }
    }
    // A nonempty box always realizes at least the pattern of its own
    // corner points.
    let (min_value, argmin) = best.expect("nonempty box has a feasible pattern");
    Ok(OracleResult { min_value, argmin, feasible_patterns })
}
