//! Test oracles: a slow, direct `f64` interpreter for network graphs and a
//! central finite-difference gradient checker built on it.
//!
//! Nothing here reuses the optimized kernels of `activecam-core`; only the
//! graph description and parameter names are shared.

use activecam_core::nn::{Graph, LayerSpec, NetParams, Node, Value};
use activecam_core::ControlVector;

/// A dense `f64` array with its shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Array {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Array {
    fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }
}

/// Parameters widened to `f64`, in the same order as the `NetParams`.
#[derive(Debug, Clone, PartialEq)]
pub struct RefParams {
    pub names: Vec<String>,
    pub trainable: Vec<bool>,
    pub tensors: Vec<Array>,
}

impl RefParams {
    pub fn from_net(p: &NetParams) -> Self {
        Self {
            names: p.entries.iter().map(|e| e.name.clone()).collect(),
            trainable: p.entries.iter().map(|e| e.trainable).collect(),
            tensors: p
                .entries
                .iter()
                .map(|e| Array {
                    shape: e.tensor.shape().to_vec(),
                    data: e.tensor.data().iter().map(|&v| v as f64).collect(),
                })
                .collect(),
        }
    }

    fn get(&self, name: &str) -> &Array {
        let i = self
            .names
            .iter()
            .position(|n| n == name)
            .unwrap_or_else(|| panic!("no parameter {name}"));
        &self.tensors[i]
    }
}

fn slot(v: Value) -> usize {
    match v {
        Value::Input => 0,
        Value::Node(i) => i + 1,
    }
}

fn conv(x: &Array, w: &Array, b: &Array, stride: usize, pad: usize) -> Array {
    let (n, c, h, wd) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
    let (f, k) = (w.shape[0], w.shape[2]);
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let mut out = Array::zeros(vec![n, f, oh, ow]);
    for i in 0..n {
        for fi in 0..f {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.data[fi];
                    for ci in 0..c {
                        for ky in 0..k {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix < 0 || ix >= wd as isize {
                                    continue;
                                }
                                acc += w.data[((fi * c + ci) * k + ky) * k + kx]
                                    * x.data[((i * c + ci) * h + iy as usize) * wd + ix as usize];
                            }
                        }
                    }
                    out.data[((i * f + fi) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    out
}

fn batchnorm(x: &Array, p: &RefParams, name: &str, eps: f64, batch_stats: bool) -> Array {
    let gamma = p.get(&format!("{name}.gamma"));
    let beta = p.get(&format!("{name}.beta"));
    let n = x.shape[0];
    let c = x.shape[1];
    let s: usize = x.shape[2..].iter().product();
    let mut out = x.clone();
    for ch in 0..c {
        let idx = |i: usize, j: usize| (i * c + ch) * s + j;
        let (mean, var) = if batch_stats {
            let m = (n * s) as f64;
            let mean = (0..n).flat_map(|i| (0..s).map(move |j| (i, j))).map(|(i, j)| x.data[idx(i, j)]).sum::<f64>() / m;
            let var = (0..n)
                .flat_map(|i| (0..s).map(move |j| (i, j)))
                .map(|(i, j)| (x.data[idx(i, j)] - mean).powi(2))
                .sum::<f64>()
                / m;
            (mean, var)
        } else {
            (
                p.get(&format!("{name}.running_mean")).data[ch],
                p.get(&format!("{name}.running_var")).data[ch],
            )
        };
        for i in 0..n {
            for j in 0..s {
                let k = idx(i, j);
                out.data[k] = gamma.data[ch] * (x.data[k] - mean) / (var + eps).sqrt() + beta.data[ch];
            }
        }
    }
    out
}

/// Forward pass in `f64` with dropout disabled. Batchnorm uses batch
/// statistics when `batch_stats`, running statistics otherwise. Returns the
/// graph output.
pub fn reference_forward(graph: &Graph, p: &RefParams, input: &Array, batch_stats: bool) -> Array {
    let mut values = all_values(graph, p, input, batch_stats);
    values.swap_remove(slot(graph.output))
}

/// The input followed by the output of every node.
fn all_values(graph: &Graph, p: &RefParams, input: &Array, batch_stats: bool) -> Vec<Array> {
    let mut values = vec![input.clone()];
    run_from(graph, p, &mut values, 0, batch_stats);
    values
}

/// Recompute nodes `start..` given the values of everything before them.
fn run_from(graph: &Graph, p: &RefParams, values: &mut Vec<Array>, start: usize, batch_stats: bool) {
    values.truncate(start + 1);
    for node in &graph.nodes[start..] {
        let y = eval_node(node, p, values, batch_stats);
        values.push(y);
    }
}

fn eval_node(node: &Node, p: &RefParams, values: &[Array], batch_stats: bool) -> Array {
    let n = values[0].shape[0];
    let x = &values[slot(node.inputs[0])];
    let name = &node.name;
    match &node.spec {
        LayerSpec::Conv { stride, padding, .. } => conv(
            x,
            p.get(&format!("{name}.weight")),
            p.get(&format!("{name}.bias")),
            *stride,
            *padding,
        ),
        LayerSpec::Dense { units } => {
            let w = p.get(&format!("{name}.weight"));
            let b = p.get(&format!("{name}.bias"));
            let i_dim = x.shape[1];
            let mut out = Array::zeros(vec![n, *units]);
            for r in 0..n {
                for u in 0..*units {
                    let mut acc = b.data[u];
                    for k in 0..i_dim {
                        acc += w.data[u * i_dim + k] * x.data[r * i_dim + k];
                    }
                    out.data[r * units + u] = acc;
                }
            }
            out
        }
        LayerSpec::BatchNorm { eps, .. } => batchnorm(x, p, name, *eps as f64, batch_stats),
        LayerSpec::Relu => map(x, |v| if v > 0.0 { v } else { 0.0 }),
        LayerSpec::LeakyRelu { slope } => {
            let s = *slope as f64;
            map(x, move |v| if v > 0.0 { v } else { s * v })
        }
        LayerSpec::Tanh => map(x, f64::tanh),
        LayerSpec::Dropout { .. } => x.clone(),
        LayerSpec::ChannelMean => {
            let c = x.shape[1];
            let s: usize = x.shape[2..].iter().product();
            let mut shape = x.shape.clone();
            shape[1] = 1;
            let mut out = Array::zeros(shape);
            for i in 0..n {
                for j in 0..s {
                    out.data[i * s + j] = (0..c).map(|ch| x.data[(i * c + ch) * s + j]).sum::<f64>() / c as f64;
                }
            }
            out
        }
        LayerSpec::ElementwiseMul => {
            let b = &values[slot(node.inputs[1])];
            Array {
                shape: x.shape.clone(),
                data: x.data.iter().zip(&b.data).map(|(u, v)| u * v).collect(),
            }
        }
        LayerSpec::Flatten => Array {
            shape: vec![n, x.data.len() / n],
            data: x.data.clone(),
        },
    }
}

fn map(x: &Array, f: impl Fn(f64) -> f64) -> Array {
    Array {
        shape: x.shape.clone(),
        data: x.data.iter().map(|&v| f(v)).collect(),
    }
}

/// Mean Euclidean distance between `[N, 2]` predictions and labels.
pub fn reference_loss(pred: &Array, truth: &[ControlVector]) -> f64 {
    let n = truth.len();
    pred.data
        .chunks(2)
        .zip(truth)
        .map(|(p, t)| ((p[0] - t.mx).powi(2) + (p[1] - t.my).powi(2)).sqrt())
        .sum::<f64>()
        / n as f64
}

/// Central finite-difference derivative of the loss with respect to one
/// parameter scalar.
pub fn numeric_gradient(
    graph: &Graph,
    p: &mut RefParams,
    tensor: usize,
    index: usize,
    input: &Array,
    truth: &[ControlVector],
    h: f64,
    batch_stats: bool,
) -> f64 {
    let orig = p.tensors[tensor].data[index];
    p.tensors[tensor].data[index] = orig + h;
    let up = reference_loss(&reference_forward(graph, p, input, batch_stats), truth);
    p.tensors[tensor].data[index] = orig - h;
    let down = reference_loss(&reference_forward(graph, p, input, batch_stats), truth);
    p.tensors[tensor].data[index] = orig;
    (up - down) / (2.0 * h)
}

/// Sign pattern of every ReLU and leaky-ReLU input.
fn kink_pattern(graph: &Graph, p: &RefParams, input: &Array, batch_stats: bool) -> Vec<bool> {
    let values = all_values(graph, p, input, batch_stats);
    graph
        .nodes
        .iter()
        .filter(|nd| matches!(nd.spec, LayerSpec::Relu | LayerSpec::LeakyRelu { .. }))
        .flat_map(|nd| values[slot(nd.inputs[0])].data.iter().map(|&v| v > 0.0))
        .collect()
}

/// Whether moving one parameter scalar across `[-h, +h]` flips the sign of
/// any rectifier input, so the loss is not smooth on that interval and a
/// central difference of step `h` measures a secant, not the derivative.
#[allow(clippy::too_many_arguments)]
pub fn crosses_kink(
    graph: &Graph,
    p: &mut RefParams,
    tensor: usize,
    index: usize,
    input: &Array,
    h: f64,
    batch_stats: bool,
) -> bool {
    let orig = p.tensors[tensor].data[index];
    p.tensors[tensor].data[index] = orig + h;
    let up = kink_pattern(graph, p, input, batch_stats);
    p.tensors[tensor].data[index] = orig - h;
    let down = kink_pattern(graph, p, input, batch_stats);
    p.tensors[tensor].data[index] = orig;
    up != down
}

/// One analytic-versus-numeric comparison that missed the tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct GradMismatch {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradReport {
    pub checked: usize,
    pub mismatches: Vec<GradMismatch>,
    pub worst_rel_error: f64,
}

/// Relative error with an absolute floor on the denominator.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Compare `analytic` (one tensor per parameter, as returned by the
/// network's backward pass) against finite differences for every trainable
/// scalar.
#[allow(clippy::too_many_arguments)]
pub fn check_gradients(
    graph: &Graph,
    params: &NetParams,
    analytic: &[Vec<f64>],
    input: &Array,
    truth: &[ControlVector],
    h: f64,
    rel_tol: f64,
    abs_floor: f64,
    batch_stats: bool,
) -> GradReport {
    let mut p = RefParams::from_net(params);
    let mut report = GradReport::default();
    let base = all_values(graph, &p, input, batch_stats);
    for t in 0..p.tensors.len() {
        if !p.trainable[t] {
            continue;
        }
        // Only the owning node and its successors see this tensor.
        let owner = graph
            .nodes
            .iter()
            .position(|nd| p.names[t].starts_with(&format!("{}.", nd.name)))
            .unwrap_or(0);
        let mut values = base.clone();
        let mut loss_at = |p: &RefParams| {
            run_from(graph, p, &mut values, owner, batch_stats);
            reference_loss(&values[slot(graph.output)], truth)
        };
        for i in 0..p.tensors[t].data.len() {
            let orig = p.tensors[t].data[i];
            p.tensors[t].data[i] = orig + h;
            let up = loss_at(&p);
            p.tensors[t].data[i] = orig - h;
            let down = loss_at(&p);
            p.tensors[t].data[i] = orig;
            let num = (up - down) / (2.0 * h);
            let ana = analytic[t][i];
            let rel = relative_error(ana, num, abs_floor);
            report.checked += 1;
            report.worst_rel_error = report.worst_rel_error.max(rel);
            if rel > rel_tol {
                report.mismatches.push(GradMismatch {
                    tensor: p.names[t].clone(),
                    index: i,
                    analytic: ana,
                    numeric: num,
                });
            }
        }
    }
    report
}
