//! Layer graph, parameters, and the forward/backward passes.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::geometry::ControlVector;
use crate::seed;

use super::kernels::{self, BnCache, ConvGeom};
use super::loss;
use super::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Conv {
        filters: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    BatchNorm {
        momentum: f32,
        eps: f32,
    },
    Relu,
    LeakyRelu {
        slope: f32,
    },
    Tanh,
    Dense {
        units: usize,
    },
    Dropout {
        rate: f32,
    },
    /// Mean over the channel axis, keeping a single channel.
    ChannelMean,
    /// Product of two inputs of equal shape.
    ElementwiseMul,
    Flatten,
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::BatchNorm { .. } => "batchnorm",
            LayerSpec::Relu => "relu",
            LayerSpec::LeakyRelu { .. } => "leakyrelu",
            LayerSpec::Tanh => "tanh",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::ChannelMean => "channel_mean",
            LayerSpec::ElementwiseMul => "elementwise_mul",
            LayerSpec::Flatten => "flatten",
        }
    }
}

/// Index of a value flowing through the graph: the graph input or the
/// output of a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Value {
    Input,
    Node(usize),
}

impl Value {
    fn slot(self) -> usize {
        match self {
            Value::Input => 0,
            Value::Node(i) => i + 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub name: String,
    pub spec: LayerSpec,
    pub inputs: Vec<Value>,
}

/// A directed acyclic graph of layers in topological order.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    /// Input `(channels, height, width)`.
    pub input: (usize, usize, usize),
    pub nodes: Vec<Node>,
    pub output: Value,
    /// The spatial activity map exposed alongside the output.
    pub activity: Option<Value>,
    /// Per-sample shape of every value, input first.
    shapes: Vec<Vec<usize>>,
    /// Index of each node's first parameter tensor.
    param_offsets: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub name: String,
    pub tensor: Tensor,
    /// Running statistics are buffers, not optimized.
    pub trainable: bool,
}

/// Named parameter tensors in graph order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NetParams {
    pub entries: Vec<ParamTensor>,
}

impl NetParams {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|e| e.name == name).map(|e| &e.tensor)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries
            .iter_mut()
            .find(|e| e.name == name)
            .map(|e| &mut e.tensor)
    }

    /// Total number of scalars, buffers included.
    pub fn count(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.len()).sum()
    }

    pub fn count_trainable(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.tensor.len())
            .sum()
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|e| e.tensor.all_finite())
    }
}

pub(crate) fn is_buffer(name: &str) -> bool {
    name.ends_with(".running_mean") || name.ends_with(".running_var")
}

impl Graph {
    /// Validate the node list and infer every value's shape.
    pub fn new(
        input: (usize, usize, usize),
        nodes: Vec<Node>,
        output: Value,
        activity: Option<Value>,
    ) -> Result<Self> {
        let mut shapes = vec![vec![input.0, input.1, input.2]];
        let mut param_offsets = Vec::with_capacity(nodes.len());
        let mut n_params = 0;
        for (i, node) in nodes.iter().enumerate() {
            for v in &node.inputs {
                if v.slot() > i {
                    return Err(Error::Shape(format!(
                        "node {} reads a value that is not computed yet",
                        node.name
                    )));
                }
            }
            let arity = if node.spec == LayerSpec::ElementwiseMul { 2 } else { 1 };
            if node.inputs.len() != arity {
                return Err(Error::Shape(format!(
                    "node {} expects {arity} input(s), got {}",
                    node.name,
                    node.inputs.len()
                )));
            }
            let x = &shapes[node.inputs[0].slot()];
            let bad = |msg: String| Error::Shape(format!("node {}: {msg}", node.name));
            let out = match &node.spec {
                LayerSpec::Conv {
                    filters,
                    kernel,
                    stride,
                    padding,
                } => {
                    if x.len() != 3 {
                        return Err(bad(format!("conv needs a [C, H, W] input, got {x:?}")));
                    }
                    if kernel % 2 == 0 || *stride == 0 {
                        return Err(bad("conv kernel must be odd and stride >= 1".into()));
                    }
                    let g = ConvGeom {
                        c: x[0],
                        h: x[1],
                        w: x[2],
                        k: *kernel,
                        stride: *stride,
                        pad: *padding,
                    };
                    if x[1] + 2 * padding < *kernel || x[2] + 2 * padding < *kernel {
                        return Err(bad(format!("input {x:?} smaller than kernel")));
                    }
                    let (oh, ow) = g.out_hw();
                    vec![*filters, oh, ow]
                }
                LayerSpec::Dense { units } => {
                    if x.len() != 1 {
                        return Err(bad(format!("dense needs a flat input, got {x:?}")));
                    }
                    vec![*units]
                }
                LayerSpec::ChannelMean => {
                    if x.len() < 2 {
                        return Err(bad(format!("channel mean needs channels, got {x:?}")));
                    }
                    let mut s = x.clone();
                    s[0] = 1;
                    s
                }
                LayerSpec::ElementwiseMul => {
                    let y = &shapes[node.inputs[1].slot()];
                    if x != y {
                        return Err(bad(format!("operand shapes differ: {x:?} vs {y:?}")));
                    }
                    x.clone()
                }
                LayerSpec::Flatten => vec![x.iter().product()],
                LayerSpec::Dropout { rate } => {
                    if !(0.0..1.0).contains(rate) {
                        return Err(bad(format!("dropout rate {rate} outside [0, 1)")));
                    }
                    x.clone()
                }
                LayerSpec::BatchNorm { .. }
                | LayerSpec::Relu
                | LayerSpec::LeakyRelu { .. }
                | LayerSpec::Tanh => x.clone(),
            };
            param_offsets.push(n_params);
            n_params += match node.spec {
                LayerSpec::Conv { .. } | LayerSpec::Dense { .. } => 2,
                LayerSpec::BatchNorm { .. } => 4,
                _ => 0,
            };
            shapes.push(out);
        }
        for v in [Some(output), activity].into_iter().flatten() {
            if v.slot() >= shapes.len() {
                return Err(Error::Shape("graph output refers to a missing node".into()));
            }
        }
        Ok(Self {
            input,
            nodes,
            output,
            activity,
            shapes,
            param_offsets,
        })
    }

    /// Per-sample shape of a value.
    pub fn shape_of(&self, v: Value) -> &[usize] {
        &self.shapes[v.slot()]
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shape_of(self.output)
    }

    pub fn activity_shape(&self) -> Option<&[usize]> {
        self.activity.map(|v| self.shape_of(v))
    }

    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    /// Name, shape and trainability of every parameter tensor, in order.
    pub fn param_layout(&self) -> Vec<(String, Vec<usize>, bool)> {
        let mut out = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            let x = &self.shapes[node.inputs[0].slot()];
            let n = &node.name;
            match node.spec {
                LayerSpec::Conv {
                    filters, kernel, ..
                } => {
                    out.push((format!("{n}.weight"), vec![filters, x[0], kernel, kernel], true));
                    out.push((format!("{n}.bias"), vec![filters], true));
                }
                LayerSpec::Dense { units } => {
                    out.push((format!("{n}.weight"), vec![units, x[0]], true));
                    out.push((format!("{n}.bias"), vec![units], true));
                }
                LayerSpec::BatchNorm { .. } => {
                    let c = self.shapes[i + 1][0];
                    out.push((format!("{n}.gamma"), vec![c], true));
                    out.push((format!("{n}.beta"), vec![c], true));
                    out.push((format!("{n}.running_mean"), vec![c], false));
                    out.push((format!("{n}.running_var"), vec![c], false));
                }
                _ => {}
            }
        }
        out
    }

    /// He-uniform weights, zero biases, unit batchnorm scale.
    pub fn init_params(&self, seed: u64) -> NetParams {
        let mut rng = seed::rng_for(seed, &[0x1417]);
        let entries = self
            .param_layout()
            .into_iter()
            .map(|(name, shape, trainable)| {
                let n: usize = shape.iter().product();
                let data = if name.ends_with(".weight") {
                    let fan_in: usize = shape[1..].iter().product();
                    let limit = (6.0 / fan_in as f64).sqrt() as f32;
                    (0..n).map(|_| rng.random_range(-limit..limit)).collect()
                } else if name.ends_with(".gamma") || name.ends_with(".running_var") {
                    vec![1.0; n]
                } else {
                    vec![0.0; n]
                };
                ParamTensor {
                    tensor: Tensor::from_vec(&shape, data).expect("layout shape"),
                    name,
                    trainable,
                }
            })
            .collect();
        NetParams { entries }
    }

    /// Check that `params` matches this graph's layout exactly.
    pub fn check_params(&self, params: &NetParams) -> Result<()> {
        let layout = self.param_layout();
        for (i, (name, shape, _)) in layout.iter().enumerate() {
            let Some(entry) = params.entries.get(i) else {
                return Err(Error::Shape(format!("missing tensor {name}")));
            };
            if &entry.name != name {
                return Err(Error::Shape(format!(
                    "expected tensor {name} at position {i}, found {}",
                    entry.name
                )));
            }
            if entry.tensor.shape() != shape.as_slice() {
                return Err(Error::Shape(format!(
                    "tensor {name} has shape {:?}, architecture needs {shape:?}",
                    entry.tensor.shape()
                )));
            }
        }
        if params.entries.len() > layout.len() {
            return Err(Error::Shape(format!(
                "unexpected tensor {}",
                params.entries[layout.len()].name
            )));
        }
        Ok(())
    }

    fn param<'p>(&self, params: &'p NetParams, node: usize, k: usize) -> &'p Tensor {
        &params.entries[self.param_offsets[node] + k].tensor
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Full,
    Tiny,
}

impl Scale {
    pub fn widths(self) -> [usize; 6] {
        match self {
            Scale::Full => [16, 32, 64, 96, 128, 128],
            Scale::Tiny => [8, 16, 16, 24, 32, 32],
        }
    }
}

pub const C3NET_STRIDES: [usize; 6] = [2, 2, 2, 2, 1, 1];
pub const C3NET_DROPOUT: f32 = 0.2;
pub const C3NET_LEAKY_SLOPE: f32 = 0.1;
pub const BN_MOMENTUM: f32 = 0.9;
pub const BN_EPS: f32 = 1e-5;

/// C³Net: six conv/relu/batchnorm blocks, then a controller head that
/// multiplies the channel means of blocks 5 and 6 into an activity map and
/// regresses the control through dense layers of 100, 50, 10 and 2 units
/// with a final tanh.
pub fn build_c3net(width: usize, height: usize, scale: Scale, seed: u64) -> Result<(Graph, NetParams)> {
    let total_stride: usize = C3NET_STRIDES.iter().product();
    if width == 0 || height == 0 || !width.is_multiple_of(total_stride) || !height.is_multiple_of(total_stride) {
        return Err(Error::Shape(format!(
            "C3Net input {width}x{height} must be divisible by {total_stride}"
        )));
    }
    let mut nodes: Vec<Node> = Vec::new();
    let mut push = |name: String, spec: LayerSpec, inputs: Vec<Value>| -> Value {
        nodes.push(Node { name, spec, inputs });
        Value::Node(nodes.len() - 1)
    };

    let mut x = Value::Input;
    let mut block_out = Vec::new();
    for (b, (&filters, &stride)) in scale.widths().iter().zip(&C3NET_STRIDES).enumerate() {
        let id = b + 1;
        x = push(
            format!("conv{id}"),
            LayerSpec::Conv {
                filters,
                kernel: 3,
                stride,
                padding: 1,
            },
            vec![x],
        );
        x = push(format!("relu{id}"), LayerSpec::Relu, vec![x]);
        x = push(
            format!("bn{id}"),
            LayerSpec::BatchNorm {
                momentum: BN_MOMENTUM,
                eps: BN_EPS,
            },
            vec![x],
        );
        block_out.push(x);
        if id == 3 {
            x = push(
                "drop3".into(),
                LayerSpec::Dropout {
                    rate: C3NET_DROPOUT,
                },
                vec![x],
            );
        }
    }
    let m5 = push("mean5".into(), LayerSpec::ChannelMean, vec![block_out[4]]);
    let m6 = push("mean6".into(), LayerSpec::ChannelMean, vec![block_out[5]]);
    let activity = push("activity".into(), LayerSpec::ElementwiseMul, vec![m5, m6]);
    let mut h = push("flatten".into(), LayerSpec::Flatten, vec![activity]);
    for (i, units) in [100usize, 50, 10].into_iter().enumerate() {
        let id = i + 1;
        h = push(format!("fc{id}"), LayerSpec::Dense { units }, vec![h]);
        h = push(
            format!("lrelu{id}"),
            LayerSpec::LeakyRelu {
                slope: C3NET_LEAKY_SLOPE,
            },
            vec![h],
        );
        if id < 3 {
            h = push(
                format!("drop_fc{id}"),
                LayerSpec::Dropout {
                    rate: C3NET_DROPOUT,
                },
                vec![h],
            );
        }
    }
    h = push("fc4".into(), LayerSpec::Dense { units: 2 }, vec![h]);
    let out = push("tanh".into(), LayerSpec::Tanh, vec![h]);

    let graph = Graph::new((3, height, width), nodes, out, Some(activity))?;
    let params = graph.init_params(seed);
    Ok((graph, params))
}

/// How batchnorm and dropout behave in a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mode {
    /// Normalize with batch statistics instead of running statistics.
    pub batch_stats: bool,
    /// Seed for dropout masks; `None` disables dropout.
    pub dropout_seed: Option<u64>,
}

impl Mode {
    pub fn infer() -> Self {
        Self {
            batch_stats: false,
            dropout_seed: None,
        }
    }

    pub fn train(dropout_seed: u64) -> Self {
        Self {
            batch_stats: true,
            dropout_seed: Some(dropout_seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Aux {
    None,
    BatchNorm(BnCache),
    Dropout(Vec<f32>),
}

/// New running statistics for one batchnorm layer after a train-mode pass.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStatUpdate {
    pub mean_param: String,
    pub var_param: String,
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

/// All intermediate values of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardPass {
    values: Vec<Tensor>,
    aux: Vec<Aux>,
    output: usize,
    activity: Option<usize>,
}

impl ForwardPass {
    /// Network output, `[N, 2]` for C³Net.
    pub fn output(&self) -> &Tensor {
        &self.values[self.output]
    }

    pub fn activity_map(&self) -> Option<&Tensor> {
        self.activity.map(|i| &self.values[i])
    }

    pub fn value(&self, v: Value) -> &Tensor {
        &self.values[v.slot()]
    }

    pub fn controls(&self) -> Vec<ControlVector> {
        self.output()
            .data()
            .chunks(2)
            .map(|c| ControlVector {
                mx: c[0] as f64,
                my: c[1] as f64,
            })
            .collect()
    }

    /// Blend the batch statistics into the running statistics of `params`.
    pub fn running_stat_updates(&self, graph: &Graph, params: &NetParams) -> Vec<RunningStatUpdate> {
        let mut out = Vec::new();
        for (i, node) in graph.nodes.iter().enumerate() {
            if let (LayerSpec::BatchNorm { momentum, .. }, Aux::BatchNorm(cache)) =
                (&node.spec, &self.aux[i])
            {
                if !cache.batch_stats {
                    continue;
                }
                let rm = graph.param(params, i, 2).data();
                let rv = graph.param(params, i, 3).data();
                out.push(RunningStatUpdate {
                    mean_param: format!("{}.running_mean", node.name),
                    var_param: format!("{}.running_var", node.name),
                    mean: rm
                        .iter()
                        .zip(&cache.batch_mean)
                        .map(|(r, b)| momentum * r + (1.0 - momentum) * b)
                        .collect(),
                    var: rv
                        .iter()
                        .zip(&cache.batch_var)
                        .map(|(r, b)| momentum * r + (1.0 - momentum) * b)
                        .collect(),
                });
            }
        }
        out
    }
}

impl NetParams {
    pub fn apply_running_stats(&mut self, updates: &[RunningStatUpdate]) {
        for u in updates {
            if let Some(t) = self.get_mut(&u.mean_param) {
                t.data_mut().copy_from_slice(&u.mean);
            }
            if let Some(t) = self.get_mut(&u.var_param) {
                t.data_mut().copy_from_slice(&u.var);
            }
        }
    }
}

/// Run the graph on a `[N, C, H, W]` batch.
pub fn forward(graph: &Graph, params: &NetParams, batch: &Tensor, mode: Mode) -> Result<ForwardPass> {
    let (c, h, w) = graph.input;
    if batch.shape().len() != 4 || batch.shape()[1..] != [c, h, w] || batch.shape()[0] == 0 {
        return Err(Error::Shape(format!(
            "expected input [N, {c}, {h}, {w}], got {:?}",
            batch.shape()
        )));
    }
    graph.check_params(params)?;
    let n = batch.shape()[0];
    let mut values: Vec<Tensor> = Vec::with_capacity(graph.nodes.len() + 1);
    values.push(batch.clone());
    let mut aux = Vec::with_capacity(graph.nodes.len());

    for (i, node) in graph.nodes.iter().enumerate() {
        let x = &values[node.inputs[0].slot()];
        let in_shape = graph.shape_of(node.inputs[0]);
        let (out, a) = match &node.spec {
            LayerSpec::Conv {
                kernel,
                stride,
                padding,
                ..
            } => {
                let g = ConvGeom {
                    c: in_shape[0],
                    h: in_shape[1],
                    w: in_shape[2],
                    k: *kernel,
                    stride: *stride,
                    pad: *padding,
                };
                let y = kernels::conv_forward(x, graph.param(params, i, 0), graph.param(params, i, 1), g);
                (y, Aux::None)
            }
            LayerSpec::Dense { .. } => (
                kernels::dense_forward(x, graph.param(params, i, 0), graph.param(params, i, 1)),
                Aux::None,
            ),
            LayerSpec::BatchNorm { eps, .. } => {
                let (y, cache) = kernels::batchnorm_forward(
                    x,
                    graph.param(params, i, 0),
                    graph.param(params, i, 1),
                    graph.param(params, i, 2),
                    graph.param(params, i, 3),
                    *eps,
                    mode.batch_stats,
                );
                (y, Aux::BatchNorm(cache))
            }
            LayerSpec::Relu => (map(x, |v| v.max(0.0)), Aux::None),
            LayerSpec::LeakyRelu { slope } => {
                let s = *slope;
                (map(x, |v| if v > 0.0 { v } else { s * v }), Aux::None)
            }
            LayerSpec::Tanh => (map(x, f32::tanh), Aux::None),
            LayerSpec::Dropout { rate } => match mode.dropout_seed {
                Some(seed) if *rate > 0.0 => {
                    let mut rng = seed::rng_for(seed, &[i as u64]);
                    let keep = 1.0 - rate;
                    let mask: Vec<f32> = (0..x.len())
                        .map(|_| if rng.random::<f32>() < keep { 1.0 / keep } else { 0.0 })
                        .collect();
                    let mut y = x.clone();
                    y.data_mut().iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
                    (y, Aux::Dropout(mask))
                }
                _ => (x.clone(), Aux::None),
            },
            LayerSpec::ChannelMean => (kernels::channel_mean_forward(x), Aux::None),
            LayerSpec::ElementwiseMul => {
                let b = &values[node.inputs[1].slot()];
                let mut y = x.clone();
                y.data_mut().iter_mut().zip(b.data()).for_each(|(u, v)| *u *= v);
                (y, Aux::None)
            }
            LayerSpec::Flatten => (x.clone().reshaped(&[n, x.len() / n])?, Aux::None),
        };
        if !out.all_finite() {
            return Err(Error::NonFinite(format!("forward output of {}", node.name)));
        }
        values.push(out);
        aux.push(a);
    }
    Ok(ForwardPass {
        values,
        aux,
        output: graph.output.slot(),
        activity: graph.activity.map(Value::slot),
    })
}

fn map(x: &Tensor, f: impl Fn(f32) -> f32) -> Tensor {
    let mut y = x.clone();
    y.data_mut().iter_mut().for_each(|v| *v = f(*v));
    y
}

/// Gradients of a scalar objective with respect to every parameter tensor,
/// given the gradient with respect to the graph output. Buffers get zero
/// gradients.
pub fn backward_from(
    graph: &Graph,
    params: &NetParams,
    pass: &ForwardPass,
    grad_output: &Tensor,
) -> Result<Vec<Tensor>> {
    Ok(backward_full(graph, params, pass, grad_output)?.0)
}

/// Like [`backward_from`], also returning the gradient with respect to the
/// graph input.
pub(crate) fn backward_full(
    graph: &Graph,
    params: &NetParams,
    pass: &ForwardPass,
    grad_output: &Tensor,
) -> Result<(Vec<Tensor>, Tensor)> {
    if grad_output.shape() != pass.output().shape() {
        return Err(Error::Shape(format!(
            "output gradient {:?} does not match output {:?}",
            grad_output.shape(),
            pass.output().shape()
        )));
    }
    let mut grads: Vec<Tensor> = params
        .entries
        .iter()
        .map(|e| Tensor::zeros(e.tensor.shape()))
        .collect();
    let mut vgrad: Vec<Option<Tensor>> = vec![None; pass.values.len()];
    vgrad[graph.output.slot()] = Some(grad_output.clone());

    let accumulate = |slot: &mut Option<Tensor>, g: Tensor| match slot {
        Some(t) => t.add_assign(&g),
        None => *slot = Some(g),
    };

    for (i, node) in graph.nodes.iter().enumerate().rev() {
        let Some(go) = vgrad[i + 1].take() else {
            continue;
        };
        let xs = node.inputs[0].slot();
        let x = &pass.values[xs];
        let y = &pass.values[i + 1];
        let off = graph.param_offsets[i];
        let in_shape = graph.shape_of(node.inputs[0]);
        let gx = match &node.spec {
            LayerSpec::Conv {
                kernel,
                stride,
                padding,
                ..
            } => {
                let g = ConvGeom {
                    c: in_shape[0],
                    h: in_shape[1],
                    w: in_shape[2],
                    k: *kernel,
                    stride: *stride,
                    pad: *padding,
                };
                let (gx, gw, gb) = kernels::conv_backward(x, graph.param(params, i, 0), &go, g);
                grads[off] = gw;
                grads[off + 1] = gb;
                gx
            }
            LayerSpec::Dense { .. } => {
                let (gx, gw, gb) = kernels::dense_backward(x, graph.param(params, i, 0), &go);
                grads[off] = gw;
                grads[off + 1] = gb;
                gx
            }
            LayerSpec::BatchNorm { .. } => {
                let Aux::BatchNorm(cache) = &pass.aux[i] else {
                    unreachable!("batchnorm pass without cache")
                };
                let (gx, gg, gb) = kernels::batchnorm_backward(&go, graph.param(params, i, 0), cache);
                grads[off] = gg;
                grads[off + 1] = gb;
                gx
            }
            LayerSpec::Relu => zip_map(&go, x, |g, v| if v > 0.0 { g } else { 0.0 }),
            LayerSpec::LeakyRelu { slope } => {
                let s = *slope;
                zip_map(&go, x, |g, v| if v > 0.0 { g } else { s * g })
            }
            LayerSpec::Tanh => zip_map(&go, y, |g, t| g * (1.0 - t * t)),
            LayerSpec::Dropout { .. } => match &pass.aux[i] {
                Aux::Dropout(mask) => {
                    let mut gx = go.clone();
                    gx.data_mut().iter_mut().zip(mask).for_each(|(g, m)| *g *= m);
                    gx
                }
                _ => go.clone(),
            },
            LayerSpec::ChannelMean => kernels::channel_mean_backward(&go, x.shape()),
            LayerSpec::ElementwiseMul => {
                let bs = node.inputs[1].slot();
                let b = &pass.values[bs];
                let ga = zip_map(&go, b, |g, v| g * v);
                let gb = zip_map(&go, x, |g, v| g * v);
                accumulate(&mut vgrad[bs], gb);
                ga
            }
            LayerSpec::Flatten => go.clone().reshaped(x.shape())?,
        };
        for k in off..graph.param_offsets.get(i + 1).copied().unwrap_or(grads.len()) {
            if !grads[k].all_finite() {
                return Err(Error::NonFinite(format!("gradient of layer {}", node.name)));
            }
        }
        if !gx.all_finite() {
            return Err(Error::NonFinite(format!("input gradient of layer {}", node.name)));
        }
        accumulate(&mut vgrad[xs], gx);
    }
    let gin = vgrad[0]
        .take()
        .unwrap_or_else(|| Tensor::zeros(pass.values[0].shape()));
    Ok((grads, gin))
}

fn zip_map(g: &Tensor, x: &Tensor, f: impl Fn(f32, f32) -> f32) -> Tensor {
    let mut out = g.clone();
    out.data_mut()
        .iter_mut()
        .zip(x.data())
        .for_each(|(a, &b)| *a = f(*a, b));
    out
}

/// Loss and parameter gradients of the Euclidean loss against `truth`.
pub fn backward(
    graph: &Graph,
    params: &NetParams,
    pass: &ForwardPass,
    truth: &[ControlVector],
) -> Result<(f32, Vec<Tensor>)> {
    let pred = pass.output();
    let loss = loss::euclidean_loss(pred, truth)?;
    let g = loss::euclidean_loss_grad(pred, truth)?;
    let grads = backward_from(graph, params, pass, &g)?;
    Ok((loss, grads))
}
