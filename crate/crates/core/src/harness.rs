//! Instance/suite management, the epsilon binary search, the suite
//! runner, and the reporting formats behind the CLI.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{load_network, serialize_network, Activation, Layer, Network};
use crate::oracle::{exact_verify, ORACLE_RELU_CAP};
use crate::search::{run_bab, run_strategy, Outcome, SearchConfig, Strategy, Verdict};
use crate::spec::{load_spec, SpecDoc, VerificationProblem};
use crate::{Error, Result};

/// Desk-scale suite runs finish fast; the full protocol budget stays
/// available via the timeout flag.
pub const SUITE_TIMEOUT_SECONDS: f64 = 30.0;
pub const EPSILON_BUDGET: u32 = 10;
pub const EPSILON_HI: f64 = 16.0 / 255.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroundTruth {
    Certified,
    Falsified,
}

/// Provenance of a generated instance, enough to regenerate or re-audit
/// the epsilon choice.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationInfo {
    pub center: Vec<f64>,
    pub epsilon: f64,
    pub epsilon_accepted: bool,
    pub label: usize,
    pub num_classes: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub instance_id: String,
    pub model_path: PathBuf,
    pub spec_path: PathBuf,
    pub ground_truth: Option<GroundTruth>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generation: Option<GenerationInfo>,
}

impl InstanceRecord {
    pub fn load_problem(&self) -> Result<VerificationProblem> {
        let net = load_network(&fs::read(&self.model_path)?)?;
        let doc = load_spec(&fs::read(&self.spec_path)?)?;
        let (box_, objectives) = doc.compile()?;
        VerificationProblem::new(net, box_, objectives, self.instance_id.clone())
    }
}

/// One row of the suite CSV; field order is the column order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub instance: String,
    pub strategy: String,
    pub seed: u64,
    pub verdict: String,
    pub elapsed_s: f64,
    pub nodes_expanded: usize,
    pub tree_size: usize,
}

/// Per-run result document (`verify --out`, suite run files).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultJson {
    pub verdict: String,
    pub elapsed_s: f64,
    pub nodes_expanded: usize,
    pub tree_size: usize,
    pub seed: u64,
    pub strategy: String,
    pub counterexample: Option<Vec<f64>>,
}

impl ResultJson {
    pub fn from_verdict(v: &Verdict) -> Self {
        Self {
            verdict: v.outcome.label().to_string(),
            elapsed_s: v.stats.elapsed_seconds,
            nodes_expanded: v.stats.nodes_expanded,
            tree_size: v.stats.tree_size,
            seed: v.stats.seed,
            strategy: v.stats.strategy.clone(),
            counterexample: match &v.outcome {
                Outcome::Falsified(cex) => Some(cex.clone()),
                _ => None,
            },
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EpsilonSearchResult {
    pub epsilon: f64,
    /// True when the returned value produced a BaB tree larger than one
    /// node; false flags a budget-exhausted last midpoint.
    pub accepted: bool,
    pub iterations: u32,
    pub tree_size: usize,
}

/// Binary search for a perturbation radius that makes the instance
/// non-trivial: accepts the midpoint whose baseline BaB tree has more
/// than one node, shrinking on Falsified and growing on Certified
/// otherwise.
pub fn epsilon_search(
    net: &Network,
    center: &[f64],
    label: usize,
    num_classes: usize,
    clip: Option<(f64, f64)>,
    lo: f64,
    hi: f64,
    budget: u32,
    config: &SearchConfig,
) -> Result<EpsilonSearchResult> {
    if !(lo < hi) {
        return Err(Error::Invalid(format!("epsilon interval [{lo}, {hi}] is empty")));
    }
    if budget < 1 {
        return Err(Error::Invalid("epsilon budget must be at least 1".into()));
    }
    let (mut lo, mut hi) = (lo, hi);
    let mut last = (lo + hi) / 2.0;
    let mut last_tree = 0usize;
    for iteration in 1..=budget {
        let m = (lo + hi) / 2.0;
        last = m;
        let doc = SpecDoc::Robustness {
            center: center.to_vec(),
            epsilon: m,
            clip,
            label,
            num_classes,
        };
        let (box_, objectives) = doc.compile()?;
        let problem = VerificationProblem::new(net.clone(), box_, objectives, "epsilon-probe")?;
        let out = run_bab(&problem, config)?;
        last_tree = out.verdict.stats.tree_size;
        if last_tree > 1 {
            return Ok(EpsilonSearchResult {
                epsilon: m,
                accepted: true,
                iterations: iteration,
                tree_size: last_tree,
            });
        }
        match out.verdict.outcome {
            // A timed-out single-node probe cannot indicate a direction;
            // treat it like "too large" so the next probe is cheaper.
            Outcome::Falsified(_) | Outcome::Timeout => hi = m,
            Outcome::Certified => lo = m,
        }
    }
    Ok(EpsilonSearchResult { epsilon: last, accepted: false, iterations: budget, tree_size: last_tree })
}

#[derive(Debug, Clone, Copy)]
pub struct SuiteDims {
    pub max_inputs: usize,
    pub max_layers: usize,
    pub max_relus: usize,
}

impl Default for SuiteDims {
    fn default() -> Self {
        Self { max_inputs: 4, max_layers: 2, max_relus: 8 }
    }
}

/// Network whose hidden pre-activations sit near their thresholds at
/// `center`: weights are uniform in [-1, 1] and each hidden bias cancels
/// the incoming signal up to a small offset, so perturbations of a few
/// gray levels flip ReLU phases and the instance is actually exercised
/// by branch and bound.
fn random_suite_network(rng: &mut ChaCha8Rng, dims: &SuiteDims, center: &[f64]) -> Network {
    let n_hidden = rng.gen_range(1..=dims.max_layers.max(1));
    let mut widths = Vec::with_capacity(n_hidden);
    let mut remaining = dims.max_relus;
    for i in 0..n_hidden {
        let left = n_hidden - i;
        let cap = (remaining - (left - 1)).min(4).max(1);
        let w = rng.gen_range(1..=cap);
        widths.push(w);
        remaining -= w;
    }
    let classes = rng.gen_range(2..=3);
    let mut layers = Vec::with_capacity(n_hidden + 1);
    let mut act = center.to_vec();
    for &width in &widths {
        let weights: Vec<Vec<f64>> = (0..width)
            .map(|_| (0..act.len()).map(|_| rng.gen_range(-1.0..=1.0)).collect())
            .collect();
        let mut bias = Vec::with_capacity(width);
        let mut next = Vec::with_capacity(width);
        for row in &weights {
            let signal: f64 = row.iter().zip(&act).map(|(w, a)| w * a).sum();
            let offset = rng.gen_range(-0.05..=0.05);
            bias.push(offset - signal);
            next.push(offset.max(0.0));
        }
        layers.push(Layer { weights, bias, activation: Activation::Relu });
        act = next;
    }
    layers.push(Layer {
        weights: (0..classes)
            .map(|_| (0..act.len()).map(|_| rng.gen_range(-1.0..=1.0)).collect())
            .collect(),
        bias: (0..classes).map(|_| rng.gen_range(-0.05..=0.05)).collect(),
        activation: Activation::None,
    });
    Network::new(layers).expect("generated dimension chain is consistent")
}

/// Generates `count` instance directories under `out_dir`: model/spec
/// documents, epsilon chosen by the binary search, oracle ground truth
/// attached. Deterministic under `seed`.
pub fn gen_suite(
    out_dir: &Path,
    seed: u64,
    count: usize,
    dims: &SuiteDims,
    config: &SearchConfig,
) -> Result<Vec<InstanceRecord>> {
    if dims.max_relus > ORACLE_RELU_CAP {
        return Err(Error::Invalid(format!(
            "suite relus {} exceed the oracle cap {ORACLE_RELU_CAP}",
            dims.max_relus
        )));
    }
    if dims.max_inputs > 6 || dims.max_layers > 3 {
        return Err(Error::Invalid("suite dims exceed desk scale (inputs <= 6, layers <= 3)".into()));
    }
    fs::create_dir_all(out_dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(count);
    for index in 0..count {
        // Redraw until the epsilon search accepts, so the suite consists
        // of non-trivial instances; keep the last draw if none accepts.
        let mut chosen = None;
        for _attempt in 0..20 {
            let inputs = rng.gen_range(2..=dims.max_inputs.max(2));
            let center: Vec<f64> = (0..inputs).map(|_| rng.gen_range(0.0..=1.0)).collect();
            let net = random_suite_network(&mut rng, dims, &center);
            let y = net.infer(&center)?;
            let label = y
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite outputs"))
                .map(|(i, _)| i)
                .expect("nonempty output");
            let num_classes = net.output_dim();
            let search = epsilon_search(
                &net,
                &center,
                label,
                num_classes,
                Some((0.0, 1.0)),
                0.0,
                EPSILON_HI,
                EPSILON_BUDGET,
                config,
            )?;
            let accept = search.accepted;
            chosen = Some((net, center, label, num_classes, search));
            if accept {
                break;
            }
        }
        let (net, center, label, num_classes, search) = chosen.expect("at least one draw");
        let instance_id = format!("inst-{index:04}");
        let dir = out_dir.join(&instance_id);
        fs::create_dir_all(&dir)?;
        let model_path = dir.join("model.json");
        let spec_path = dir.join("spec.json");
        fs::write(&model_path, serialize_network(&net)?)?;
        let doc = SpecDoc::Robustness {
            center: center.clone(),
            epsilon: search.epsilon,
            clip: Some((0.0, 1.0)),
            label,
            num_classes,
        };
        fs::write(&spec_path, serde_json::to_vec_pretty(&doc)?)?;
        let (box_, objectives) = doc.compile()?;
        let truth = exact_verify(&net, &box_, &objectives)?;
        let record = InstanceRecord {
            instance_id: instance_id.clone(),
            model_path,
            spec_path,
            ground_truth: Some(if truth.certified() {
                GroundTruth::Certified
            } else {
                GroundTruth::Falsified
            }),
            generation: Some(GenerationInfo {
                center,
                epsilon: search.epsilon,
                epsilon_accepted: search.accepted,
                label,
                num_classes,
                seed,
            }),
        };
        fs::write(dir.join("instance.json"), serde_json::to_vec_pretty(&record)?)?;
        records.push(record);
    }
    Ok(records)
}

/// Loads every `instance.json` below `suite_dir`, sorted by instance id.
pub fn load_suite(suite_dir: &Path) -> Result<Vec<InstanceRecord>> {
    let mut records = Vec::new();
    for entry in fs::read_dir(suite_dir)? {
        let path = entry?.path().join("instance.json");
        if path.is_file() {
            let record: InstanceRecord = serde_json::from_slice(&fs::read(&path)?)?;
            records.push(record);
        }
    }
    records.sort_by(|a, b| a.instance_id.cmp(&b.instance_id));
    if records.is_empty() {
        return Err(Error::Invalid(format!("no instances under {}", suite_dir.display())));
    }
    Ok(records)
}

#[derive(Debug, Clone, Serialize)]
pub struct SpeedupEntry {
    pub strategy_a: String,
    pub strategy_b: String,
    pub instance: String,
    pub seed: u64,
    /// elapsed(a) / elapsed(b); > 1 means `b` was faster. Recomputable
    /// from the CSV elapsed columns.
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub records: Vec<RunRecord>,
    pub solved: BTreeMap<String, usize>,
    pub speedups: Vec<SpeedupEntry>,
    /// Full per-run documents keyed by instance id, for per-run JSON
    /// emission; parallel to `records`.
    #[serde(skip)]
    pub run_results: Vec<(String, ResultJson)>,
}

/// Runs every (instance, strategy, seed) combination; failures become
/// `error` rows instead of aborting the suite. `repeats` widens the seed
/// range `config.seed .. config.seed + repeats` for every strategy.
pub fn run_suite(
    instances: &[InstanceRecord],
    strategies: &[Strategy],
    config: &SearchConfig,
    repeats: u64,
) -> Result<SuiteReport> {
    let mut records = Vec::new();
    let mut run_results = Vec::new();
    let mut by_key: BTreeMap<(String, u64, String), f64> = BTreeMap::new();
    for record in instances {
        let problem = record.load_problem();
        for &strategy in strategies {
            for rep in 0..repeats.max(1) {
                let seed = config.seed + rep;
                let run_config = SearchConfig { seed, ..*config };
                let (row, result) = match &problem {
                    Ok(problem) => match run_strategy(problem, strategy, &run_config) {
                        Ok(out) => {
                            let v = &out.verdict;
                            if matches!(v.outcome, Outcome::Certified | Outcome::Falsified(_)) {
                                by_key.insert(
                                    (record.instance_id.clone(), seed, strategy.name().into()),
                                    v.stats.elapsed_seconds,
                                );
                            }
                            let row = RunRecord {
                                instance: record.instance_id.clone(),
                                strategy: strategy.name().into(),
                                seed,
                                verdict: v.outcome.label().into(),
                                elapsed_s: v.stats.elapsed_seconds,
                                nodes_expanded: v.stats.nodes_expanded,
                                tree_size: v.stats.tree_size,
                            };
                            (row, ResultJson::from_verdict(v))
                        }
                        Err(_) => error_result(record, strategy, seed),
                    },
                    Err(_) => error_result(record, strategy, seed),
                };
                run_results.push((record.instance_id.clone(), result));
                records.push(row);
            }
        }
    }
    let mut solved: BTreeMap<String, usize> = BTreeMap::new();
    for s in strategies {
        solved.insert(s.name().into(), 0);
    }
    for row in &records {
        if row.verdict == "certified" || row.verdict == "falsified" {
            *solved.entry(row.strategy.clone()).or_default() += 1;
        }
    }
    let mut speedups = Vec::new();
    for (ai, a) in strategies.iter().enumerate() {
        for b in &strategies[ai + 1..] {
            for record in instances {
                for rep in 0..repeats.max(1) {
                    let seed = config.seed + rep;
                    let ka = (record.instance_id.clone(), seed, a.name().to_string());
                    let kb = (record.instance_id.clone(), seed, b.name().to_string());
                    if let (Some(&ta), Some(&tb)) = (by_key.get(&ka), by_key.get(&kb)) {
                        speedups.push(SpeedupEntry {
                            strategy_a: a.name().into(),
                            strategy_b: b.name().into(),
                            instance: record.instance_id.clone(),
                            seed,
                            ratio: ta / tb,
                        });
                    }
                }
            }
        }
    }
    Ok(SuiteReport { records, solved, speedups, run_results })
}

fn error_result(record: &InstanceRecord, strategy: Strategy, seed: u64) -> (RunRecord, ResultJson) {
    let row = RunRecord {
        instance: record.instance_id.clone(),
        strategy: strategy.name().into(),
        seed,
        verdict: "error".into(),
        elapsed_s: 0.0,
        nodes_expanded: 0,
        tree_size: 0,
    };
    let result = ResultJson {
        verdict: "error".into(),
        elapsed_s: 0.0,
        nodes_expanded: 0,
        tree_size: 0,
        seed,
        strategy: strategy.name().into(),
        counterexample: None,
    };
    (row, result)
}

/// Header: `instance,strategy,seed,verdict,elapsed_s,nodes_expanded,tree_size`.
pub fn write_csv(path: &Path, records: &[RunRecord]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut writer = csv::Writer::from_path(path).map_err(csv_err)?;
    for record in records {
        writer.serialize(record).map_err(csv_err)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<RunRecord>> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut records = Vec::new();
    for row in reader.deserialize() {
        records.push(row.map_err(csv_err)?);
    }
    Ok(records)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(format!("csv: {e}"))
}
