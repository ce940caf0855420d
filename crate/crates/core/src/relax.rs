//! The approximated verifier: per-neuron pre-activation bounds and the
//! assessment p-hat for a sub-problem, plus the exact decision procedure
//! for fully-split leaves.
//!
//! Two backends share one bound computation:
//! - `BackSub`: symbolic back-substitution through the layers, with the
//!   triangle upper chord and a 0/1 lower slope per unstable neuron.
//! - `TriangleLp`: an explicit LP over the triangle-relaxation polytope,
//!   at least as tight as `BackSub` on the same bounds.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::{Activation, Network, NeuronId};
use crate::numerics::{lp_solve, LinearForm, LpProblem, LpSolution};
use crate::spec::{InputBox, OutputObjectives};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    Positive,
    Negative,
}

/// A partial assignment of sign constraints to ReLU neurons; the empty
/// map identifies the root problem.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReluSpec {
    assignments: BTreeMap<NeuronId, Sign>,
}

impl ReluSpec {
    pub fn root() -> Self {
        Self::default()
    }

    pub fn get(&self, id: NeuronId) -> Option<Sign> {
        self.assignments.get(&id).copied()
    }

    pub fn contains(&self, id: NeuronId) -> bool {
        self.assignments.contains_key(&id)
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    /// The refinement adding one sign constraint; the neuron must be new.
    pub fn refine(&self, id: NeuronId, sign: Sign) -> Self {
        debug_assert!(!self.contains(id), "neuron already fixed");
        let mut assignments = self.assignments.clone();
        assignments.insert(id, sign);
        Self { assignments }
    }

    pub fn iter(&self) -> impl Iterator<Item = (NeuronId, Sign)> + '_ {
        self.assignments.iter().map(|(k, v)| (*k, *v))
    }
}

/// Effective pre-activation bounds per ReLU neuron, indexed by ReLU layer.
#[derive(Debug, Clone)]
pub struct NeuronBounds {
    layers: Vec<Vec<(f64, f64)>>,
    empty: bool,
}

/// How a neuron's output relates to its pre-activation under the current
/// bounds and sign constraints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum NeuronStatus {
    /// y = z exactly (fixed Positive or stable with l >= 0).
    PassThrough,
    /// y = 0 exactly (fixed Negative or stable with u <= 0).
    Zero,
    /// l < 0 < u and unfixed: triangle relaxation applies.
    Unstable,
}

impl NeuronBounds {
    /// Builds bounds directly from per-layer intervals. Mostly useful for
    /// driving the search with scripted assessments.
    pub fn from_layers(layers: Vec<Vec<(f64, f64)>>) -> Self {
        let empty = layers.iter().flatten().any(|&(l, u)| l > u);
        Self { layers, empty }
    }

    pub fn get(&self, id: NeuronId) -> (f64, f64) {
        self.layers[id.layer_index][id.neuron_index]
    }

    /// True when some effective interval came out inverted (l > u): the
    /// sub-region is empty and the sub-problem is vacuously certified.
    pub fn is_empty_region(&self) -> bool {
        self.empty
    }

    pub fn layer(&self, relu_layer: usize) -> &[(f64, f64)] {
        &self.layers[relu_layer]
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    fn status(&self, gamma: &ReluSpec, id: NeuronId) -> NeuronStatus {
        match gamma.get(id) {
            Some(Sign::Positive) => NeuronStatus::PassThrough,
            Some(Sign::Negative) => NeuronStatus::Zero,
            None => {
                let (l, u) = self.get(id);
                if l >= 0.0 {
                    NeuronStatus::PassThrough
                } else if u <= 0.0 {
                    NeuronStatus::Zero
                } else {
                    NeuronStatus::Unstable
                }
            }
        }
    }

    /// Neurons eligible for splitting: unfixed with l < 0 < u.
    pub fn splittable(&self, gamma: &ReluSpec) -> Vec<NeuronId> {
        let mut out = Vec::new();
        for (li, layer) in self.layers.iter().enumerate() {
            for (ni, &(l, u)) in layer.iter().enumerate() {
                let id = NeuronId { layer_index: li, neuron_index: ni };
                if !gamma.contains(id) && l < 0.0 && u > 0.0 {
                    out.push(id);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Backend {
    BackSub,
    TriangleLp,
}

/// Verifier output for one sub-problem.
#[derive(Debug, Clone)]
pub struct Assessment {
    /// Lower bound of the objective over the relaxation; `+inf` when the
    /// sub-region is empty (vacuously certified).
    pub p_hat: f64,
    /// Present iff `p_hat < 0`; lies in the input box.
    pub candidate: Option<Vec<f64>>,
    pub bounds: NeuronBounds,
    /// True when produced by the exact leaf decision.
    pub exact: bool,
}

/// Lower slope for an unstable neuron: 1 when u > |l|, else 0.
fn lower_slope(l: f64, u: f64) -> f64 {
    if u > -l {
        1.0
    } else {
        0.0
    }
}

/// Bounds a linear form over the post-activation outputs of full layer
/// `layer_pos` by back-substituting to the input and evaluating over the
/// box. Returns the bound and the fully substituted input-level form.
fn back_substitute(
    net: &Network,
    box_: &InputBox,
    gamma: &ReluSpec,
    bounds: &NeuronBounds,
    relu_index_of: &[Option<usize>],
    mut form: LinearForm,
    layer_pos: isize,
    want_lower: bool,
) -> (f64, LinearForm) {
    let mut t = layer_pos;
    while t >= 0 {
        let layer = &net.layers()[t as usize];
        if layer.activation == Activation::Relu {
            let relu_layer = relu_index_of[t as usize].expect("relu layer index");
            // Replace each output coefficient by its relaxation over the
            // pre-activation, direction chosen by coefficient sign.
            let mut z_coeffs = vec![0.0; layer.out_dim()];
            let mut offset = form.offset;
            for (j, &a) in form.coeffs.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let id = NeuronId { layer_index: relu_layer, neuron_index: j };
                match bounds.status(gamma, id) {
                    NeuronStatus::PassThrough => z_coeffs[j] += a,
                    NeuronStatus::Zero => {}
                    NeuronStatus::Unstable => {
                        let (l, u) = bounds.get(id);
                        let use_chord = (a < 0.0) == want_lower;
                        if use_chord {
                            let s = u / (u - l);
                            z_coeffs[j] += a * s;
                            offset += -a * s * l;
                        } else {
                            z_coeffs[j] += a * lower_slope(l, u);
                        }
                    }
                }
            }
            form = LinearForm::new(z_coeffs, offset);
        }
        // Substitute z = W . prev + b.
        let mut prev = vec![0.0; layer.in_dim()];
        let mut offset = form.offset;
        for (j, &a) in form.coeffs.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for (k, w) in layer.weights[j].iter().enumerate() {
                prev[k] += a * w;
            }
            offset += a * layer.bias[j];
        }
        form = LinearForm::new(prev, offset);
        t -= 1;
    }
    let mut value = form.offset;
    for (i, &a) in form.coeffs.iter().enumerate() {
        let pick = if (a >= 0.0) == want_lower { box_.lower[i] } else { box_.upper[i] };
        value += a * pick;
    }
    (value, form)
}

fn relu_index_map(net: &Network) -> Vec<Option<usize>> {
    let mut map = vec![None; net.layers().len()];
    let mut idx = 0;
    for (pos, layer) in net.layers().iter().enumerate() {
        if layer.activation == Activation::Relu {
            map[pos] = Some(idx);
            idx += 1;
        }
    }
    map
}

/// Sound pre-activation bounds for every ReLU neuron under the box and
/// the sign constraints of `gamma`. When `parent` is given, each child
/// interval is clamped inside the parent's stored interval, which makes
/// the assessment monotone along refinement chains.
pub fn propagate_bounds(
    net: &Network,
    box_: &InputBox,
    gamma: &ReluSpec,
    parent: Option<&NeuronBounds>,
) -> NeuronBounds {
    let relu_index_of = relu_index_map(net);
    let mut out = NeuronBounds { layers: Vec::new(), empty: false };
    for (pos, layer) in net.layers().iter().enumerate() {
        if layer.activation != Activation::Relu {
            continue;
        }
        let relu_layer = out.layers.len();
        let mut layer_bounds = Vec::with_capacity(layer.out_dim());
        for j in 0..layer.out_dim() {
            let id = NeuronId { layer_index: relu_layer, neuron_index: j };
            let (mut l, mut u) = if out.empty {
                (0.0, 0.0)
            } else {
                let z = LinearForm::new(layer.weights[j].clone(), layer.bias[j]);
                let (l, _) = back_substitute(
                    net, box_, gamma, &out, &relu_index_of, z.clone(), pos as isize - 1, true,
                );
                let (u, _) = back_substitute(
                    net, box_, gamma, &out, &relu_index_of, z, pos as isize - 1, false,
                );
                (l, u)
            };
            match gamma.get(id) {
                Some(Sign::Positive) => l = l.max(0.0),
                Some(Sign::Negative) => u = u.min(0.0),
                None => {}
            }
            if let Some(p) = parent {
                let (pl, pu) = p.get(id);
                l = l.max(pl);
                u = u.min(pu);
            }
            if l > u {
                out.empty = true;
            }
            layer_bounds.push((l, u));
        }
        out.layers.push(layer_bounds);
    }
    out
}

/// Affine expressions for layer outputs in terms of the LP variables:
/// input variables first, then one block of post-activation variables per
/// ReLU layer. Linear-only layers are folded into the expressions.
struct LpLayout {
    /// Per ReLU layer: variable offset of its y block.
    y_offset: Vec<usize>,
    num_vars: usize,
    /// Pre-activation expression per ReLU neuron, over LP variables.
    pre: Vec<Vec<LinearForm>>,
    /// Network output expressions over LP variables.
    outputs: Vec<LinearForm>,
}

fn lp_layout(net: &Network) -> LpLayout {
    let n_in = net.input_dim();
    let mut num_vars = n_in;
    let mut y_offset = Vec::new();
    for (_, layer) in net.relu_layers() {
        y_offset.push(num_vars);
        num_vars += layer.out_dim();
    }
    let mut exprs: Vec<LinearForm> = (0..n_in)
        .map(|i| {
            let mut f = LinearForm::zeros(num_vars);
            f.coeffs[i] = 1.0;
            f
        })
        .collect();
    let mut pre = Vec::new();
    let mut relu_layer = 0;
    for layer in net.layers() {
        let mut z_exprs = Vec::with_capacity(layer.out_dim());
        for (j, row) in layer.weights.iter().enumerate() {
            let mut z = LinearForm::zeros(num_vars);
            z.offset = layer.bias[j];
            for (w, e) in row.iter().zip(&exprs) {
                if *w != 0.0 {
                    z.add_assign(&e.scale(*w));
                }
            }
            z_exprs.push(z);
        }
        if layer.activation == Activation::Relu {
            let off = y_offset[relu_layer];
            exprs = (0..layer.out_dim())
                .map(|j| {
                    let mut f = LinearForm::zeros(num_vars);
                    f.coeffs[off + j] = 1.0;
                    f
                })
                .collect();
            pre.push(z_exprs);
            relu_layer += 1;
        } else {
            exprs = z_exprs;
        }
    }
    LpLayout { y_offset, num_vars, pre, outputs: exprs }
}

/// Builds the relaxation LP for one objective form. With `exact` set,
/// every neuron must be pass-through or zero and the encoding is the
/// exact linear sub-network on the region.
fn build_lp(
    box_: &InputBox,
    bounds: &NeuronBounds,
    gamma: &ReluSpec,
    layout: &LpLayout,
    form: &LinearForm,
    exact: bool,
) -> Result<LpProblem> {
    let n = layout.num_vars;
    let mut lower = vec![0.0; n];
    let mut upper = vec![0.0; n];
    lower[..box_.dim()].copy_from_slice(&box_.lower);
    upper[..box_.dim()].copy_from_slice(&box_.upper);
    let mut halfspaces = Vec::new();

    for (relu_layer, z_exprs) in layout.pre.iter().enumerate() {
        let off = layout.y_offset[relu_layer];
        for (j, z) in z_exprs.iter().enumerate() {
            let id = NeuronId { layer_index: relu_layer, neuron_index: j };
            let (l, u) = bounds.get(id);
            let yv = off + j;
            // z in [l, u]
            let mut ge_l = z.clone();
            ge_l.offset -= l;
            halfspaces.push(ge_l);
            let mut le_u = z.scale(-1.0);
            le_u.offset += u;
            halfspaces.push(le_u);
            match bounds.status(gamma, id) {
                NeuronStatus::PassThrough => {
                    // y = z as two halfspaces.
                    let mut y_minus_z = z.scale(-1.0);
                    y_minus_z.coeffs[yv] += 1.0;
                    halfspaces.push(y_minus_z.clone());
                    halfspaces.push(y_minus_z.scale(-1.0));
                    lower[yv] = l.max(0.0);
                    upper[yv] = u.max(0.0);
                }
                NeuronStatus::Zero => {
                    lower[yv] = 0.0;
                    upper[yv] = 0.0;
                }
                NeuronStatus::Unstable => {
                    if exact {
                        return Err(Error::Invalid(format!(
                            "exact decision with unstable unfixed neuron {id:?}"
                        )));
                    }
                    // y >= 0 via box; y >= z; y <= u (z - l) / (u - l).
                    let mut y_ge_z = z.scale(-1.0);
                    y_ge_z.coeffs[yv] += 1.0;
                    halfspaces.push(y_ge_z);
                    let s = u / (u - l);
                    let mut chord = z.scale(s);
                    chord.offset -= s * l;
                    chord.coeffs[yv] -= 1.0;
                    halfspaces.push(chord);
                    lower[yv] = 0.0;
                    upper[yv] = u.max(0.0);
                }
            }
        }
    }

    let mut objective = LinearForm::zeros(n);
    objective.offset = form.offset;
    for (c, o) in form.coeffs.iter().zip(&layout.outputs) {
        if *c != 0.0 {
            objective.add_assign(&o.scale(*c));
        }
    }
    Ok(LpProblem { objective, lower, upper, halfspaces })
}

fn vacuous(bounds: NeuronBounds, exact: bool) -> Assessment {
    Assessment { p_hat: f64::INFINITY, candidate: None, bounds, exact }
}

/// Clamps a point into the box; LP points can sit a rounding error outside.
fn clamp_into_box(mut x: Vec<f64>, box_: &InputBox) -> Vec<f64> {
    for (v, (l, u)) in x.iter_mut().zip(box_.lower.iter().zip(&box_.upper)) {
        *v = v.clamp(*l, *u);
    }
    x
}

/// Assessment of the sub-problem identified by `gamma`: the minimum of
/// the objective over the relaxation, a candidate counterexample when
/// negative, and the effective neuron bounds.
pub fn assess(
    net: &Network,
    box_: &InputBox,
    objectives: &OutputObjectives,
    gamma: &ReluSpec,
    backend: Backend,
    parent: Option<&NeuronBounds>,
) -> Result<Assessment> {
    let bounds = propagate_bounds(net, box_, gamma, parent);
    if bounds.is_empty_region() {
        return Ok(vacuous(bounds, false));
    }
    match backend {
        Backend::BackSub => {
            let relu_index_of = relu_index_map(net);
            let last = net.layers().len() as isize - 1;
            let mut p_hat = f64::INFINITY;
            let mut worst_form: Option<LinearForm> = None;
            for form in &objectives.forms {
                let (v, input_form) = back_substitute(
                    net, box_, gamma, &bounds, &relu_index_of, form.clone(), last, true,
                );
                if v < p_hat {
                    p_hat = v;
                    worst_form = Some(input_form);
                }
            }
            let candidate = if p_hat < 0.0 {
                let f = worst_form.expect("worst form");
                // Corner of the box minimizing the symbolic lower bound.
                Some(
                    f.coeffs
                        .iter()
                        .enumerate()
                        .map(|(i, &a)| if a > 0.0 { box_.lower[i] } else if a < 0.0 { box_.upper[i] } else { box_.lower[i] })
                        .collect(),
                )
            } else {
                None
            };
            Ok(Assessment { p_hat, candidate, bounds, exact: false })
        }
        Backend::TriangleLp => {
            solve_by_lp(net, box_, objectives, gamma, &bounds, false).map(
                |(p_hat, candidate)| Assessment { p_hat, candidate, bounds, exact: false },
            )
        }
    }
}

/// Exact decision for a leaf whose neurons are all fixed or stable: the
/// sub-network is linear, so the LP minimum is the true minimum of the
/// objective on the sub-region.
pub fn exact_leaf_decision(
    net: &Network,
    box_: &InputBox,
    objectives: &OutputObjectives,
    gamma: &ReluSpec,
    parent: Option<&NeuronBounds>,
) -> Result<Assessment> {
    let bounds = propagate_bounds(net, box_, gamma, parent);
    if bounds.is_empty_region() {
        return Ok(vacuous(bounds, true));
    }
    solve_by_lp(net, box_, objectives, gamma, &bounds, true)
        .map(|(p_hat, candidate)| Assessment { p_hat, candidate, bounds: bounds.clone(), exact: true })
}

/// Exact optimum of a fully-fixed leaf, reported even when positive.
/// Returns None when the sub-region is empty. Shared with the oracle,
/// which needs the optimizer regardless of the verdict's sign.
pub(crate) fn exact_leaf_optimum(
    net: &Network,
    box_: &InputBox,
    objectives: &OutputObjectives,
    gamma: &ReluSpec,
) -> Result<Option<(f64, Vec<f64>)>> {
    let bounds = propagate_bounds(net, box_, gamma, None);
    if bounds.is_empty_region() {
        return Ok(None);
    }
    let layout = lp_layout(net);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for form in &objectives.forms {
        let lp = build_lp(box_, &bounds, gamma, &layout, form, true)?;
        match lp_solve(&lp)? {
            LpSolution::Optimal { value, point } => {
                if best.as_ref().map_or(true, |(b, _)| value < *b) {
                    let x = clamp_into_box(point[..box_.dim()].to_vec(), box_);
                    best = Some((value, x));
                }
            }
            LpSolution::Infeasible => return Ok(None),
        }
    }
    Ok(best)
}

fn solve_by_lp(
    net: &Network,
    box_: &InputBox,
    objectives: &OutputObjectives,
    gamma: &ReluSpec,
    bounds: &NeuronBounds,
    exact: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    let layout = lp_layout(net);
    let mut p_hat = f64::INFINITY;
    let mut best_point: Option<Vec<f64>> = None;
    let mut any_feasible = false;
    for form in &objectives.forms {
        let lp = build_lp(box_, bounds, gamma, &layout, form, exact)?;
        match lp_solve(&lp)? {
            LpSolution::Optimal { value, point } => {
                any_feasible = true;
                if value < p_hat {
                    p_hat = value;
                    best_point = Some(point[..box_.dim()].to_vec());
                }
            }
            LpSolution::Infeasible => {
                // The constraint set is form-independent: empty for one
                // form means empty for all.
                return Ok((f64::INFINITY, None));
            }
        }
    }
    if !any_feasible {
        return Ok((f64::INFINITY, None));
    }
    let candidate = if p_hat < 0.0 {
        best_point.map(|p| clamp_into_box(p, box_))
    } else {
        None
    };
    Ok((p_hat, candidate))
}
