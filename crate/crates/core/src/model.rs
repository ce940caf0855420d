//! Network representation, JSON serialization, and exact inference.

use serde::{Deserialize, Serialize};

use crate::numerics::affine_apply;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    None,
}

/// One dense layer: `activation(weights . x + bias)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Layer {
    /// out x in, row-major by rows.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn out_dim(&self) -> usize {
        self.weights.len()
    }

    pub fn in_dim(&self) -> usize {
        self.weights.first().map_or(0, |r| r.len())
    }
}

/// A feed-forward ReLU network as an ordered list of dense layers.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "NetworkDoc", into = "NetworkDoc")]
pub struct Network {
    layers: Vec<Layer>,
    input_dim: usize,
    output_dim: usize,
    relu_count: usize,
}

#[derive(Serialize, Deserialize)]
struct NetworkDoc {
    layers: Vec<Layer>,
}

impl TryFrom<NetworkDoc> for Network {
    type Error = Error;
    fn try_from(doc: NetworkDoc) -> Result<Self> {
        Network::new(doc.layers)
    }
}

impl From<Network> for NetworkDoc {
    fn from(net: Network) -> Self {
        NetworkDoc { layers: net.layers }
    }
}

/// Identifies a neuron in a ReLU-activated layer: `layer_index` counts
/// ReLU layers only (0-based, in network order).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NeuronId {
    pub layer_index: usize,
    pub neuron_index: usize,
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Invalid("network has no layers".into()));
        }
        let mut relu_count = 0;
        let mut prev_out = None;
        for (i, layer) in layers.iter().enumerate() {
            if layer.weights.is_empty() {
                return Err(Error::Dimension(format!("layer {i} has no rows")));
            }
            let cols = layer.weights[0].len();
            if cols == 0 {
                return Err(Error::Dimension(format!("layer {i} has zero-width rows")));
            }
            if layer.weights.iter().any(|r| r.len() != cols) {
                return Err(Error::Dimension(format!("layer {i} has ragged rows")));
            }
            if layer.bias.len() != layer.weights.len() {
                return Err(Error::Dimension(format!(
                    "layer {i}: bias length {} != row count {}",
                    layer.bias.len(),
                    layer.weights.len()
                )));
            }
            if let Some(prev) = prev_out {
                if cols != prev {
                    return Err(Error::Dimension(format!(
                        "layer {i}: input width {cols} != previous output width {prev}"
                    )));
                }
            }
            if layer.activation == Activation::Relu {
                relu_count += layer.out_dim();
            }
            prev_out = Some(layer.out_dim());
        }
        let input_dim = layers[0].in_dim();
        let output_dim = layers.last().unwrap().out_dim();
        Ok(Self { layers, input_dim, output_dim, relu_count })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    /// K: total number of ReLU neurons.
    pub fn relu_count(&self) -> usize {
        self.relu_count
    }

    /// ReLU-activated layers in order, paired with their full-list positions.
    pub fn relu_layers(&self) -> impl Iterator<Item = (usize, &Layer)> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.activation == Activation::Relu)
    }

    /// Maps a ReLU-layer index (as used by [`NeuronId`]) to the full-list
    /// layer position.
    pub fn relu_layer_position(&self, relu_layer: usize) -> Option<usize> {
        self.relu_layers().nth(relu_layer).map(|(p, _)| p)
    }

    /// Exact forward pass.
    pub fn infer(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim {
            return Err(Error::Dimension(format!(
                "input length {} != input_dim {}",
                x.len(),
                self.input_dim
            )));
        }
        let mut cur = x.to_vec();
        for layer in &self.layers {
            cur = affine_apply(&layer.weights, &layer.bias, &cur)?;
            if layer.activation == Activation::Relu {
                for v in &mut cur {
                    *v = v.max(0.0);
                }
            }
        }
        Ok(cur)
    }
}

pub fn load_network(bytes: &[u8]) -> Result<Network> {
    let net: Network =
        serde_json::from_slice(bytes).map_err(|e| Error::Parse(format!("model json: {e}")))?;
    Ok(net)
}

pub fn serialize_network(net: &Network) -> Result<Vec<u8>> {
    Ok(serde_json::to_vec_pretty(net)?)
}
