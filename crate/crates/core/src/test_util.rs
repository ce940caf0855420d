//! Shared helpers for unit tests: tiny fixture networks, random problem
//! generation, and an input-space vertex-enumeration oracle for fully
//! fixed activation patterns.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::model::{Activation, Layer, Network, NeuronId};
use crate::numerics::LinearForm;
use crate::spec::InputBox;

/// One ReLU neuron feeding an identity output layer.
pub fn tiny_net_a() -> Network {
    Network::new(vec![
        Layer {
            weights: vec![vec![1.0]],
            bias: vec![0.0],
            activation: Activation::Relu,
        },
        Layer {
            weights: vec![vec![1.0]],
            bias: vec![0.0],
            activation: Activation::None,
        },
    ])
    .unwrap()
}

/// Random small network: `hidden` ReLU layers then a linear output layer.
pub fn random_network(rng: &mut ChaCha8Rng, max_inputs: usize, max_width: usize) -> Network {
    let n_hidden = rng.gen_range(1..=2);
    let mut dims = vec![rng.gen_range(1..=max_inputs)];
    for _ in 0..n_hidden {
        dims.push(rng.gen_range(1..=max_width));
    }
    dims.push(rng.gen_range(1..=3));
    let n_layers = dims.len() - 1;
    let layers = (0..n_layers)
        .map(|i| Layer {
            weights: (0..dims[i + 1])
                .map(|_| (0..dims[i]).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect(),
            bias: (0..dims[i + 1]).map(|_| rng.gen_range(-0.5..0.5)).collect(),
            activation: if i + 1 == n_layers { Activation::None } else { Activation::Relu },
        })
        .collect();
    Network::new(layers).unwrap()
}

pub fn random_box(rng: &mut ChaCha8Rng, dim: usize) -> InputBox {
    let mut lo = Vec::new();
    let mut hi = Vec::new();
    for _ in 0..dim {
        let c: f64 = rng.gen_range(-1.0..1.0);
        let r: f64 = rng.gen_range(0.05..0.8);
        lo.push(c - r);
        hi.push(c + r);
    }
    InputBox::new(lo, hi).unwrap()
}

/// Affine closure of the network under a full activation pattern:
/// returns per-ReLU-neuron pre-activation forms over the input, and the
/// output forms over the input. `pattern[k]` gives the sign (true =
/// positive branch) for the k-th ReLU neuron in network order.
pub fn pattern_affine(net: &Network, pattern: &[bool]) -> (Vec<(NeuronId, LinearForm)>, Vec<LinearForm>) {
    let n_in = net.input_dim();
    let mut exprs: Vec<LinearForm> = (0..n_in)
        .map(|i| {
            let mut f = LinearForm::zeros(n_in);
            f.coeffs[i] = 1.0;
            f
        })
        .collect();
    let mut pre_forms = Vec::new();
    let mut k = 0usize;
    let mut relu_layer = 0usize;
    for layer in net.layers() {
        let mut next = Vec::with_capacity(layer.out_dim());
        for (j, row) in layer.weights.iter().enumerate() {
            let mut z = LinearForm::zeros(n_in);
            z.offset = layer.bias[j];
            for (w, e) in row.iter().zip(&exprs) {
                z.add_assign(&e.scale(*w));
            }
            if layer.activation == Activation::Relu {
                pre_forms.push((
                    NeuronId { layer_index: relu_layer, neuron_index: j },
                    z.clone(),
                ));
                if pattern[k] {
                    next.push(z);
                } else {
                    next.push(LinearForm::zeros(n_in));
                }
                k += 1;
            } else {
                next.push(z);
            }
        }
        if layer.activation == Activation::Relu {
            relu_layer += 1;
        }
        exprs = next;
    }
    (pre_forms, exprs)
}

/// Exact minimum of an affine objective over `box` intersected with
/// `constraints` (`form(x) >= 0`), by enumerating candidate vertices.
/// Returns None when the region is empty.
pub fn vertex_min(
    objective: &LinearForm,
    box_: &InputBox,
    constraints: &[LinearForm],
) -> Option<(f64, Vec<f64>)> {
    let n = box_.dim();
    let mut cons: Vec<(Vec<f64>, f64)> = Vec::new();
    for i in 0..n {
        let mut a = vec![0.0; n];
        a[i] = 1.0;
        cons.push((a.clone(), box_.lower[i]));
        cons.push((a, box_.upper[i]));
    }
    for h in constraints {
        cons.push((h.coeffs.clone(), -h.offset));
    }
    let feasible = |x: &[f64]| {
        (0..n).all(|i| x[i] >= box_.lower[i] - 1e-7 && x[i] <= box_.upper[i] + 1e-7)
            && constraints.iter().all(|h| h.eval(x) >= -1e-7)
    };
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut idx = vec![0usize; n];
    enumerate(cons.len(), n, 0, 0, &mut idx, &mut |chosen: &[usize]| {
        let mut a: Vec<Vec<f64>> = chosen.iter().map(|&c| cons[c].0.clone()).collect();
        let mut b: Vec<f64> = chosen.iter().map(|&c| cons[c].1).collect();
        if let Some(x) = solve_dense(&mut a, &mut b) {
            if feasible(&x) {
                let v = objective.eval(&x);
                if best.as_ref().map_or(true, |(bv, _)| v < *bv) {
                    best = Some((v, x));
                }
            }
        }
    });
    best
}

fn enumerate(
    count: usize,
    need: usize,
    start: usize,
    depth: usize,
    idx: &mut Vec<usize>,
    f: &mut dyn FnMut(&[usize]),
) {
    if depth == need {
        f(idx);
        return;
    }
    for i in start..count {
        idx[depth] = i;
        enumerate(count, need, i + 1, depth + 1, idx, f);
    }
}

fn solve_dense(a: &mut Vec<Vec<f64>>, b: &mut Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())?;
        if a[piv][col].abs() < 1e-10 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in 0..n {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..n {
                    a[r][c] -= f * a[col][c];
                }
                b[r] -= f * b[col];
            }
        }
    }
    Some((0..n).map(|i| b[i] / a[i][i]).collect())
}

/// Brute-force minimum of `min_form f(N(x))` over the box by enumerating
/// all activation patterns and vertex-enumerating each linear piece.
pub fn brute_force_min(
    net: &Network,
    box_: &InputBox,
    forms: &[LinearForm],
) -> Option<(f64, Vec<f64>)> {
    let k = net.relu_count();
    assert!(k <= 16, "brute force capped at 16 ReLUs");
    let mut best: Option<(f64, Vec<f64>)> = None;
    for bits in 0..(1u32 << k) {
        let pattern: Vec<bool> = (0..k).map(|i| bits >> i & 1 == 1).collect();
        let (pre, outs) = pattern_affine(net, &pattern);
        let constraints: Vec<LinearForm> = pre
            .iter()
            .enumerate()
            .map(|(i, (_, z))| if pattern[i] { z.clone() } else { z.scale(-1.0) })
            .collect();
        for form in forms {
            let mut obj = LinearForm::zeros(box_.dim());
            obj.offset = form.offset;
            for (c, o) in form.coeffs.iter().zip(&outs) {
                obj.add_assign(&o.scale(*c));
            }
            if let Some((v, x)) = vertex_min(&obj, box_, &constraints) {
                if best.as_ref().map_or(true, |(bv, _)| v < *bv) {
                    best = Some((v, x));
                }
            }
        }
    }
    best
}
