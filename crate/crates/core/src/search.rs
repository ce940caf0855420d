//! The BaB tree, the suspiciousness/CePO machinery, and the three
//! verification drivers: classic FIFO branch-and-bound, greedy
//! counterexample-ordered search, and its simulated-annealing variant.

use std::collections::VecDeque;
use std::time::Instant;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::heuristics::select_relu;
use crate::model::NeuronId;
use crate::relax::{assess, exact_leaf_decision, Assessment, Backend, NeuronBounds, ReluSpec, Sign};
use crate::spec::{validate_counterexample, VerificationProblem};
use crate::Result;

/// Extended-real suspiciousness value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Susp {
    NegInf,
    Finite(f64),
    PosInf,
}

impl Susp {
    pub fn is_neg_inf(&self) -> bool {
        matches!(self, Susp::NegInf)
    }

    pub fn is_pos_inf(&self) -> bool {
        matches!(self, Susp::PosInf)
    }

    pub fn finite(&self) -> Option<f64> {
        match self {
            Susp::Finite(v) => Some(*v),
            _ => None,
        }
    }
}

/// Suspiciousness of a node from its raw attributes: certified nodes map
/// to -inf, nodes with a validated counterexample to +inf, and spurious
/// negative assessments to a blend of split depth and normalized p-hat.
pub fn suspiciousness(
    p_hat: f64,
    valid_cex: bool,
    depth: usize,
    relu_count: usize,
    p_hat_min: f64,
    lambda: f64,
) -> Susp {
    if p_hat > 0.0 {
        return Susp::NegInf;
    }
    if p_hat < 0.0 && valid_cex {
        return Susp::PosInf;
    }
    debug_assert!(relu_count >= 1);
    debug_assert!(p_hat >= 0.0 || p_hat_min < 0.0);
    let depth_part = depth as f64 / relu_count as f64;
    let p_part = if p_hat == 0.0 { 0.0 } else { p_hat / p_hat_min };
    Susp::Finite(lambda * depth_part + (1.0 - lambda) * p_part)
}

/// The CePO order: true iff `a` is strictly less suspicious than `b`.
/// Exact finite ties are resolved by one rng draw; infinite ties are
/// never meaningful for ordering and compare as not-less.
pub fn cepo_less(a: Susp, b: Susp, rng: &mut impl Rng) -> bool {
    match (a, b) {
        (Susp::NegInf, Susp::NegInf) | (Susp::PosInf, Susp::PosInf) => false,
        (Susp::NegInf, _) => true,
        (_, Susp::NegInf) => false,
        (_, Susp::PosInf) => true,
        (Susp::PosInf, _) => false,
        (Susp::Finite(x), Susp::Finite(y)) => {
            if x == y {
                rng.gen_bool(0.5)
            } else {
                x < y
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SearchConfig {
    pub lambda: f64,
    pub t_max: f64,
    pub alpha: f64,
    pub timeout_seconds: f64,
    pub seed: u64,
    pub backend: Backend,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            t_max: 1.0,
            alpha: 0.99,
            timeout_seconds: 1000.0,
            seed: 0,
            backend: Backend::TriangleLp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Bab,
    Greedy,
    Sa,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Bab => "bab",
            Strategy::Greedy => "greedy",
            Strategy::Sa => "sa",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bab" => Ok(Strategy::Bab),
            "greedy" => Ok(Strategy::Greedy),
            "sa" => Ok(Strategy::Sa),
            other => Err(crate::Error::Invalid(format!("unknown strategy {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Certified,
    Falsified(Vec<f64>),
    Timeout,
}

impl Outcome {
    pub fn label(&self) -> &'static str {
        match self {
            Outcome::Certified => "certified",
            Outcome::Falsified(_) => "falsified",
            Outcome::Timeout => "timeout",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchStats {
    pub nodes_expanded: usize,
    pub tree_size: usize,
    pub elapsed_seconds: f64,
    pub strategy: String,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct Verdict {
    pub outcome: Outcome,
    pub stats: SearchStats,
}

/// One node of the BaB tree.
#[derive(Debug)]
pub struct TreeNode {
    pub gamma: ReluSpec,
    pub assessment: Assessment,
    pub depth: usize,
    pub valid_cex: bool,
    pub r: Susp,
    /// (positive branch, negative branch)
    pub children: Option<(usize, usize)>,
    pub split_neuron: Option<NeuronId>,
    pub parent: Option<usize>,
}

#[derive(Debug, Default)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
    /// Nodes in the order they were expanded (index, chosen split neuron).
    pub expansions: Vec<(usize, NeuronId)>,
}

impl Tree {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Everything a tree search needs from the underlying verifier. The
/// production implementation delegates to the relaxation backends; tests
/// drive the searches with scripted assessments.
pub trait Assessor {
    fn relu_count(&self) -> usize;
    fn assess(&mut self, gamma: &ReluSpec, parent: Option<&NeuronBounds>) -> Result<Assessment>;
    fn exact(&mut self, gamma: &ReluSpec, parent: Option<&NeuronBounds>) -> Result<Assessment>;
    fn select_split(&self, gamma: &ReluSpec, bounds: &NeuronBounds) -> Option<NeuronId>;
    fn validate(&self, candidate: &[f64]) -> bool;
}

/// Production assessor over a concrete verification problem.
pub struct RelaxAssessor<'a> {
    problem: &'a VerificationProblem,
    backend: Backend,
}

impl<'a> RelaxAssessor<'a> {
    pub fn new(problem: &'a VerificationProblem, backend: Backend) -> Self {
        Self { problem, backend }
    }
}

impl Assessor for RelaxAssessor<'_> {
    fn relu_count(&self) -> usize {
        self.problem.network.relu_count()
    }

    fn assess(&mut self, gamma: &ReluSpec, parent: Option<&NeuronBounds>) -> Result<Assessment> {
        assess(
            &self.problem.network,
            &self.problem.box_,
            &self.problem.objectives,
            gamma,
            self.backend,
            parent,
        )
    }

    fn exact(&mut self, gamma: &ReluSpec, parent: Option<&NeuronBounds>) -> Result<Assessment> {
        exact_leaf_decision(
            &self.problem.network,
            &self.problem.box_,
            &self.problem.objectives,
            gamma,
            parent,
        )
    }

    fn select_split(&self, gamma: &ReluSpec, bounds: &NeuronBounds) -> Option<NeuronId> {
        select_relu(gamma, bounds)
    }

    fn validate(&self, candidate: &[f64]) -> bool {
        validate_counterexample(self.problem, candidate)
    }
}

struct SearchState {
    tree: Tree,
    /// Most negative finite p-hat seen; equals the root assessment under
    /// enforced monotonicity.
    p_hat_min: f64,
    iterations: u32,
    temperature: f64,
    rng: ChaCha8Rng,
    nodes_expanded: usize,
    started: Instant,
    timeout_seconds: f64,
    counterexample: Option<Vec<f64>>,
    timed_out: bool,
}

impl SearchState {
    fn new(config: &SearchConfig) -> Self {
        Self {
            tree: Tree::default(),
            p_hat_min: f64::INFINITY,
            iterations: 0,
            temperature: config.t_max,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            nodes_expanded: 0,
            started: Instant::now(),
            timeout_seconds: config.timeout_seconds,
            counterexample: None,
            timed_out: false,
        }
    }

    fn out_of_time(&self) -> bool {
        self.started.elapsed().as_secs_f64() >= self.timeout_seconds
    }

    fn observe_p_hat(&mut self, p_hat: f64) {
        if p_hat.is_finite() && p_hat < self.p_hat_min {
            self.p_hat_min = p_hat;
        }
    }

    fn finish(self, outcome: Outcome, strategy: Strategy, seed: u64) -> (Verdict, Tree) {
        let stats = SearchStats {
            nodes_expanded: self.nodes_expanded,
            tree_size: self.tree.nodes.len(),
            elapsed_seconds: self.started.elapsed().as_secs_f64(),
            strategy: strategy.name().to_string(),
            seed,
        };
        (Verdict { outcome, stats }, self.tree)
    }
}

/// Suspiciousness of a stored node, recomputed from raw attributes so the
/// current p-hat-min denominator is always used. Internal nodes return
/// their propagated value.
fn node_r(state: &SearchState, idx: usize, relu_count: usize, lambda: f64) -> Susp {
    let node = &state.tree.nodes[idx];
    if node.children.is_some() {
        node.r
    } else {
        leaf_r(node, relu_count, state.p_hat_min, lambda)
    }
}

fn leaf_r(node: &TreeNode, relu_count: usize, p_hat_min: f64, lambda: f64) -> Susp {
    if node.assessment.exact {
        // Exact leaves are closed: +inf with a validated point, -inf
        // otherwise (a negative optimum whose point fails validation is a
        // tolerance-level disagreement and must not be re-selected).
        return if node.valid_cex { Susp::PosInf } else { Susp::NegInf };
    }
    if node.assessment.p_hat >= 0.0 || node.assessment.p_hat.is_infinite() {
        // Covers p_hat = +inf (vacuous) and the p_hat = 0 boundary, which
        // the FIFO algorithm also treats as certified.
        Susp::NegInf
    } else {
        suspiciousness(
            node.assessment.p_hat,
            node.valid_cex,
            node.depth,
            relu_count,
            p_hat_min,
            lambda,
        )
    }
}

fn push_node(
    state: &mut SearchState,
    gamma: ReluSpec,
    assessment: Assessment,
    valid_cex: bool,
    parent: Option<usize>,
    relu_count: usize,
    lambda: f64,
) -> usize {
    state.observe_p_hat(assessment.p_hat);
    let depth = gamma.len();
    let mut node = TreeNode {
        gamma,
        assessment,
        depth,
        valid_cex,
        r: Susp::NegInf,
        children: None,
        split_neuron: None,
        parent,
    };
    node.r = leaf_r(&node, relu_count, state.p_hat_min, lambda);
    state.tree.nodes.push(node);
    state.tree.nodes.len() - 1
}

/// Assesses `gamma`, validates any candidate, and records the node.
fn assess_into_tree<A: Assessor>(
    assessor: &mut A,
    state: &mut SearchState,
    gamma: ReluSpec,
    parent: Option<usize>,
    lambda: f64,
) -> Result<usize> {
    let parent_bounds = parent.map(|p| state.tree.nodes[p].assessment.bounds.clone());
    let assessment = assessor.assess(&gamma, parent_bounds.as_ref())?;
    state.nodes_expanded += 1;
    let valid = match &assessment.candidate {
        Some(c) if assessment.p_hat < 0.0 => assessor.validate(c),
        _ => false,
    };
    if valid {
        state.counterexample = assessment.candidate.clone();
    }
    let k = assessor.relu_count().max(1);
    Ok(push_node(state, gamma, assessment, valid, parent, k, lambda))
}

/// Resolves a fully-split node in place with the exact decision.
fn exact_in_place<A: Assessor>(
    assessor: &mut A,
    state: &mut SearchState,
    idx: usize,
) -> Result<()> {
    let gamma = state.tree.nodes[idx].gamma.clone();
    let parent_bounds = state.tree.nodes[idx]
        .parent
        .map(|p| state.tree.nodes[p].assessment.bounds.clone());
    let assessment = assessor.exact(&gamma, parent_bounds.as_ref())?;
    state.nodes_expanded += 1;
    state.observe_p_hat(assessment.p_hat);
    let valid = match &assessment.candidate {
        Some(c) if assessment.p_hat < 0.0 => assessor.validate(c),
        _ => false,
    };
    if valid {
        state.counterexample = assessment.candidate.clone();
    }
    let node = &mut state.tree.nodes[idx];
    node.assessment = assessment;
    node.valid_cex = valid;
    // An exact negative optimum whose point still fails validation can
    // only be a tolerance-level disagreement; the leaf closes as
    // certified rather than spinning forever as unexpandable.
    node.r = if valid { Susp::PosInf } else { Susp::NegInf };
    Ok(())
}

/// Splits `idx` on the heuristic's neuron and assesses both children;
/// falls back to the exact decision when nothing is splittable.
fn expand<A: Assessor>(
    assessor: &mut A,
    state: &mut SearchState,
    idx: usize,
    lambda: f64,
) -> Result<()> {
    debug_assert!(state.tree.nodes[idx].children.is_none());
    let gamma = state.tree.nodes[idx].gamma.clone();
    if state.tree.nodes[idx].assessment.p_hat >= 0.0 {
        // Unreachable under normal descent; close the leaf.
        state.tree.nodes[idx].r = Susp::NegInf;
        return Ok(());
    }
    let split = assessor.select_split(&gamma, &state.tree.nodes[idx].assessment.bounds);
    let Some(neuron) = split else {
        return exact_in_place(assessor, state, idx);
    };
    state.tree.expansions.push((idx, neuron));
    let pos = assess_into_tree(assessor, state, gamma.refine(neuron, Sign::Positive), Some(idx), lambda)?;
    if state.out_of_time() {
        state.timed_out = true;
    }
    let neg = assess_into_tree(assessor, state, gamma.refine(neuron, Sign::Negative), Some(idx), lambda)?;
    let node = &mut state.tree.nodes[idx];
    node.children = Some((pos, neg));
    node.split_neuron = Some(neuron);
    Ok(())
}

/// Propagates the larger child suspiciousness to each ancestor along the
/// path from `leaf` to the root.
fn backpropagate(state: &mut SearchState, leaf: usize, relu_count: usize, lambda: f64) {
    let mut cur = Some(leaf);
    while let Some(idx) = cur {
        if let Some((pos, neg)) = state.tree.nodes[idx].children {
            let rp = node_r(state, pos, relu_count, lambda);
            let rn = node_r(state, neg, relu_count, lambda);
            let max = match (rp, rn) {
                (Susp::PosInf, _) | (_, Susp::PosInf) => Susp::PosInf,
                (Susp::NegInf, other) | (other, Susp::NegInf) => other,
                (Susp::Finite(a), Susp::Finite(b)) => Susp::Finite(a.max(b)),
            };
            state.tree.nodes[idx].r = max;
        }
        cur = state.tree.nodes[idx].parent;
    }
}

/// Acceptance probability of the simulated-annealing child selection:
/// `exp((min(r) - max(r)) / T)`.
pub fn sa_accept_probability(r_a: f64, r_b: f64, temperature: f64) -> f64 {
    ((r_a.min(r_b) - r_a.max(r_b)) / temperature).exp()
}

/// Temperature after `iterations` geometric cooling steps.
pub fn temperature_schedule(t_max: f64, alpha: f64, iterations: u32) -> f64 {
    t_max * alpha.powi(iterations as i32)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Branch {
    Positive,
    Negative,
}

/// Greedy child choice: the more suspicious branch, exact ties by one
/// rng draw.
fn choose_greedy(rp: Susp, rn: Susp, rng: &mut impl Rng) -> Branch {
    if cepo_less(rp, rn, rng) {
        Branch::Negative
    } else {
        Branch::Positive
    }
}

/// Simulated-annealing child choice. Infinite suspiciousness
/// short-circuits: a +inf child is always taken and a -inf child is never
/// taken over a finite sibling.
fn choose_sa(rp: Susp, rn: Susp, temperature: f64, rng: &mut impl Rng) -> Branch {
    match (rp, rn) {
        (Susp::PosInf, _) => Branch::Positive,
        (_, Susp::PosInf) => Branch::Negative,
        (Susp::NegInf, _) => Branch::Negative,
        (_, Susp::NegInf) => Branch::Positive,
        (Susp::Finite(a), Susp::Finite(b)) => {
            let dp = sa_accept_probability(a, b, temperature);
            if rng.gen::<f64>() < dp {
                if rng.gen_bool(0.5) {
                    Branch::Positive
                } else {
                    Branch::Negative
                }
            } else if a == b {
                // dp = 1 above makes this unreachable; keep argmax total.
                Branch::Positive
            } else if a > b {
                Branch::Positive
            } else {
                Branch::Negative
            }
        }
    }
}

/// Classic branch-and-bound: first-come-first-served over a FIFO queue
/// of sub-problems.
pub fn run_bab_with<A: Assessor>(
    assessor: &mut A,
    config: &SearchConfig,
) -> Result<(Verdict, Tree)> {
    let lambda = config.lambda;
    let mut state = SearchState::new(config);
    let mut queue: VecDeque<(ReluSpec, Option<usize>)> = VecDeque::new();
    queue.push_back((ReluSpec::root(), None));
    while let Some((gamma, parent)) = queue.pop_front() {
        if state.out_of_time() {
            return Ok(state.finish(Outcome::Timeout, Strategy::Bab, config.seed));
        }
        let idx = assess_into_tree(assessor, &mut state, gamma, parent, lambda)?;
        let node = &state.tree.nodes[idx];
        if node.assessment.p_hat < 0.0 {
            if node.valid_cex {
                let cex = state.counterexample.clone().expect("validated candidate");
                return Ok(state.finish(Outcome::Falsified(cex), Strategy::Bab, config.seed));
            }
            let gamma = node.gamma.clone();
            match assessor.select_split(&gamma, &node.assessment.bounds) {
                Some(neuron) => {
                    state.tree.expansions.push((idx, neuron));
                    state.tree.nodes[idx].split_neuron = Some(neuron);
                    queue.push_back((gamma.refine(neuron, Sign::Positive), Some(idx)));
                    queue.push_back((gamma.refine(neuron, Sign::Negative), Some(idx)));
                }
                None => {
                    exact_in_place(assessor, &mut state, idx)?;
                    if state.tree.nodes[idx].valid_cex {
                        let cex = state.counterexample.clone().expect("validated candidate");
                        return Ok(state.finish(
                            Outcome::Falsified(cex),
                            Strategy::Bab,
                            config.seed,
                        ));
                    }
                }
            }
        }
    }
    Ok(state.finish(Outcome::Certified, Strategy::Bab, config.seed))
}

fn run_ordered_impl<A: Assessor>(
    assessor: &mut A,
    config: &SearchConfig,
    strategy: Strategy,
) -> Result<(Verdict, Tree)> {
    let lambda = config.lambda;
    let k = assessor.relu_count().max(1);
    let mut state = SearchState::new(config);
    let root_idx = assess_into_tree(assessor, &mut state, ReluSpec::root(), None, lambda)?;
    debug_assert_eq!(root_idx, 0);
    {
        let root = &state.tree.nodes[0];
        if root.assessment.p_hat >= 0.0 || root.assessment.p_hat.is_infinite() {
            return Ok(state.finish(Outcome::Certified, strategy, config.seed));
        }
        if root.valid_cex {
            let cex = state.counterexample.clone().expect("validated candidate");
            return Ok(state.finish(Outcome::Falsified(cex), strategy, config.seed));
        }
    }
    loop {
        if state.timed_out || state.out_of_time() {
            return Ok(state.finish(Outcome::Timeout, strategy, config.seed));
        }
        match node_r(&state, 0, k, lambda) {
            Susp::NegInf => return Ok(state.finish(Outcome::Certified, strategy, config.seed)),
            Susp::PosInf => {
                let cex = state.counterexample.clone().expect("validated candidate");
                return Ok(state.finish(Outcome::Falsified(cex), strategy, config.seed));
            }
            Susp::Finite(_) => {}
        }
        if strategy == Strategy::Sa {
            state.iterations += 1;
            state.temperature = temperature_schedule(config.t_max, config.alpha, state.iterations);
        }
        // Descend along max-R (or annealed) children to an unexpanded node.
        let mut idx = 0usize;
        while let Some((pos, neg)) = state.tree.nodes[idx].children {
            let rp = node_r(&state, pos, k, lambda);
            let rn = node_r(&state, neg, k, lambda);
            let branch = match strategy {
                Strategy::Greedy => choose_greedy(rp, rn, &mut state.rng),
                Strategy::Sa => choose_sa(rp, rn, state.temperature, &mut state.rng),
                Strategy::Bab => unreachable!("bab uses the FIFO driver"),
            };
            idx = match branch {
                Branch::Positive => pos,
                Branch::Negative => neg,
            };
        }
        expand(assessor, &mut state, idx, lambda)?;
        backpropagate(&mut state, idx, k, lambda);
        // Under enforced monotonicity the minimum stays at the root.
        debug_assert!(
            state.p_hat_min >= state.tree.nodes[0].assessment.p_hat - 1e-6,
            "p_hat_min {} drifted below root {}",
            state.p_hat_min,
            state.tree.nodes[0].assessment.p_hat
        );
    }
}

/// Greedy exploration: always descend toward the most suspicious child.
pub fn run_greedy_with<A: Assessor>(
    assessor: &mut A,
    config: &SearchConfig,
) -> Result<(Verdict, Tree)> {
    run_ordered_impl(assessor, config, Strategy::Greedy)
}

/// Simulated-annealing exploration: child choice is randomized by the
/// geometric temperature schedule `T <- alpha * T` per outer iteration.
pub fn run_sa_with<A: Assessor>(
    assessor: &mut A,
    config: &SearchConfig,
) -> Result<(Verdict, Tree)> {
    run_ordered_impl(assessor, config, Strategy::Sa)
}

/// Full search result: the verdict plus the recorded tree.
pub struct SearchOutcome {
    pub verdict: Verdict,
    pub tree: Tree,
}

pub fn run_strategy(
    problem: &VerificationProblem,
    strategy: Strategy,
    config: &SearchConfig,
) -> Result<SearchOutcome> {
    let mut assessor = RelaxAssessor::new(problem, config.backend);
    let (verdict, tree) = match strategy {
        Strategy::Bab => run_bab_with(&mut assessor, config)?,
        Strategy::Greedy => run_greedy_with(&mut assessor, config)?,
        Strategy::Sa => run_sa_with(&mut assessor, config)?,
    };
    Ok(SearchOutcome { verdict, tree })
}

pub fn run_bab(problem: &VerificationProblem, config: &SearchConfig) -> Result<SearchOutcome> {
    run_strategy(problem, Strategy::Bab, config)
}

pub fn run_greedy(problem: &VerificationProblem, config: &SearchConfig) -> Result<SearchOutcome> {
    run_strategy(problem, Strategy::Greedy, config)
}

pub fn run_sa(problem: &VerificationProblem, config: &SearchConfig) -> Result<SearchOutcome> {
    run_strategy(problem, Strategy::Sa, config)
}
