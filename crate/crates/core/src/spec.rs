//! Input/output specifications, robustness compilation, objective
//! evaluation, and counterexample validation.

use serde::{Deserialize, Serialize};

use crate::model::Network;
use crate::numerics::LinearForm;
use crate::{Error, Result};

/// Membership tolerance when checking that a point lies in the input box.
pub const BOX_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl InputBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Dimension("box lower/upper length mismatch".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| l > u) {
            return Err(Error::Invalid("box lower exceeds upper".into()));
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| *v >= l - BOX_TOL && *v <= u + BOX_TOL)
    }
}

/// Output objective `f(y) = min over forms of form(y)`; the specification is
/// satisfied at `y` iff `f(y) > 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputObjectives {
    pub forms: Vec<LinearForm>,
}

impl OutputObjectives {
    pub fn new(forms: Vec<LinearForm>) -> Result<Self> {
        if forms.is_empty() {
            return Err(Error::Invalid("objective needs at least one form".into()));
        }
        Ok(Self { forms })
    }

    pub fn eval(&self, y: &[f64]) -> f64 {
        self.forms
            .iter()
            .map(|f| f.eval(y))
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn evaluate_objective(objectives: &OutputObjectives, y: &[f64]) -> f64 {
    objectives.eval(y)
}

#[derive(Debug, Clone)]
pub struct VerificationProblem {
    pub network: Network,
    pub box_: InputBox,
    pub objectives: OutputObjectives,
    pub metadata: String,
}

impl VerificationProblem {
    pub fn new(
        network: Network,
        box_: InputBox,
        objectives: OutputObjectives,
        metadata: impl Into<String>,
    ) -> Result<Self> {
        if box_.dim() != network.input_dim() {
            return Err(Error::Dimension("box dimension != network input".into()));
        }
        for f in &objectives.forms {
            if f.dim() != network.output_dim() {
                return Err(Error::Dimension("objective dimension != network output".into()));
            }
        }
        Ok(Self { network, box_, objectives, metadata: metadata.into() })
    }
}

/// Compiles a local-robustness query into a box and margin objectives:
/// box `[center - eps, center + eps]` (clipped), forms `y_label - y_i`
/// for every `i != label`.
pub fn compile_robustness(
    center: &[f64],
    epsilon: f64,
    clip: Option<(f64, f64)>,
    label: usize,
    num_classes: usize,
) -> Result<(InputBox, OutputObjectives)> {
    if epsilon < 0.0 {
        return Err(Error::Invalid("epsilon must be nonnegative".into()));
    }
    if label >= num_classes {
        return Err(Error::Invalid(format!(
            "label {label} out of range for {num_classes} classes"
        )));
    }
    let mut lower = Vec::with_capacity(center.len());
    let mut upper = Vec::with_capacity(center.len());
    for &c in center {
        let (mut lo, mut hi) = (c - epsilon, c + epsilon);
        if let Some((cl, ch)) = clip {
            lo = lo.max(cl);
            hi = hi.min(ch);
        }
        if lo > hi {
            return Err(Error::Invalid("empty box after clipping".into()));
        }
        lower.push(lo);
        upper.push(hi);
    }
    let forms = (0..num_classes)
        .filter(|&i| i != label)
        .map(|i| {
            let mut coeffs = vec![0.0; num_classes];
            coeffs[label] = 1.0;
            coeffs[i] = -1.0;
            LinearForm::new(coeffs, 0.0)
        })
        .collect();
    Ok((InputBox::new(lower, upper)?, OutputObjectives::new(forms)?))
}

/// True iff `candidate` lies in the box and the exact network output
/// violates the objective (`f <= 0`).
pub fn validate_counterexample(problem: &VerificationProblem, candidate: &[f64]) -> bool {
    if !problem.box_.contains(candidate) {
        return false;
    }
    match problem.network.infer(candidate) {
        Ok(y) => problem.objectives.eval(&y) <= 0.0,
        Err(_) => false,
    }
}

/// Spec JSON document: either a robustness query to compile, or a raw
/// box + objectives pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpecDoc {
    Robustness {
        center: Vec<f64>,
        epsilon: f64,
        clip: Option<(f64, f64)>,
        label: usize,
        num_classes: usize,
    },
    Raw {
        #[serde(rename = "box")]
        box_: InputBox,
        objectives: Vec<LinearForm>,
    },
}

impl SpecDoc {
    pub fn compile(&self) -> Result<(InputBox, OutputObjectives)> {
        match self {
            SpecDoc::Robustness { center, epsilon, clip, label, num_classes } => {
                compile_robustness(center, *epsilon, *clip, *label, *num_classes)
            }
            SpecDoc::Raw { box_, objectives } => Ok((
                InputBox::new(box_.lower.clone(), box_.upper.clone())?,
                OutputObjectives::new(objectives.clone())?,
            )),
        }
    }
}

pub fn load_spec(bytes: &[u8]) -> Result<SpecDoc> {
    serde_json::from_slice(bytes).map_err(|e| Error::Parse(format!("spec json: {e}")))
}
