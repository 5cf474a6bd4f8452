//! Backpropagation checked against central finite differences of an
//! independent `f64` forward pass, one layer kind at a time.

use activecam_core::nn::{self, Graph, LayerSpec, Mode, NetParams, Node, Tensor, Value};
use activecam_core::ControlVector;
use activecam_testkit::{check_gradients, reference_forward, reference_loss, Array, RefParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-3;
const REL_TOL: f64 = 1e-2;
const ABS_FLOOR: f64 = 1e-6;

fn node(name: &str, spec: LayerSpec, inputs: Vec<Value>) -> Node {
    Node {
        name: name.into(),
        spec,
        inputs,
    }
}

/// `layers` applied to the input, then flatten and a 2-unit dense head.
fn chain(input: (usize, usize, usize), layers: Vec<(&str, LayerSpec)>) -> Graph {
    let mut nodes = Vec::new();
    let mut v = Value::Input;
    for (name, spec) in layers {
        nodes.push(node(name, spec, vec![v]));
        v = Value::Node(nodes.len() - 1);
    }
    nodes.push(node("flat", LayerSpec::Flatten, vec![v]));
    nodes.push(node(
        "head",
        LayerSpec::Dense { units: 2 },
        vec![Value::Node(nodes.len() - 1)],
    ));
    let out = Value::Node(nodes.len() - 1);
    Graph::new(input, nodes, out, None).unwrap()
}

/// Initialized parameters with every tensor, buffers included, perturbed
/// away from its default so no code path sees trivial values.
fn params_for(graph: &Graph, seed: u64) -> NetParams {
    let mut p = graph.init_params(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for e in &mut p.entries {
        for v in e.tensor.data_mut() {
            if e.name.ends_with(".running_var") || e.name.ends_with(".gamma") {
                *v = rng.random_range(0.5..1.5);
            } else if e.name.ends_with(".weight") {
                *v *= 0.8;
            } else {
                *v = rng.random_range(-0.3..0.3);
            }
        }
    }
    p
}

fn input(shape: [usize; 4], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::from_vec(&shape, (0..n).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
}

fn truth(n: usize) -> Vec<ControlVector> {
    (0..n)
        .map(|i| ControlVector {
            mx: 0.3 - 0.2 * i as f64,
            my: -0.1 + 0.15 * i as f64,
        })
        .collect()
}

fn to_array(t: &Tensor) -> Array {
    Array {
        shape: t.shape().to_vec(),
        data: t.data().iter().map(|&v| v as f64).collect(),
    }
}

fn assert_gradients(graph: &Graph, params: &NetParams, x: &Tensor, batch_stats: bool) {
    assert_gradients_except(graph, params, x, batch_stats, &[]);
}

/// Like `assert_gradients`, but the tensors in `structural_zero` must have a
/// vanishing gradient instead. Their `f32` values are pure rounding noise,
/// which no relative tolerance can judge.
fn assert_gradients_except(
    graph: &Graph,
    params: &NetParams,
    x: &Tensor,
    batch_stats: bool,
    structural_zero: &[&str],
) {
    let n = x.shape()[0];
    let y = truth(n);
    let mode = Mode {
        batch_stats,
        dropout_seed: None,
    };
    let pass = nn::forward(graph, params, x, mode).unwrap();
    let (_, grads) = nn::backward(graph, params, &pass, &y).unwrap();
    let analytic: Vec<Vec<f64>> = grads
        .iter()
        .map(|g| g.data().iter().map(|&v| v as f64).collect())
        .collect();
    let report = check_gradients(graph, params, &analytic, &to_array(x), &y, H, REL_TOL, ABS_FLOOR, batch_stats);
    assert!(report.checked > 0);
    let mut mismatches = report.mismatches.clone();
    mismatches.retain(|m| {
        if structural_zero.contains(&m.tensor.as_str()) {
            assert!(m.numeric.abs() < 1e-9 && m.analytic.abs() < 1e-5, "{m:?}");
            false
        } else {
            true
        }
    });
    assert!(
        mismatches.is_empty(),
        "{} of {} gradients off (worst rel {:.3e}): {:?}",
        mismatches.len(),
        report.checked,
        report.worst_rel_error,
        &mismatches[..mismatches.len().min(5)]
    );
}

fn conv(filters: usize, stride: usize) -> LayerSpec {
    LayerSpec::Conv {
        filters,
        kernel: 3,
        stride,
        padding: 1,
    }
}

#[test]
fn conv_stride_one() {
    let g = chain((2, 5, 6), vec![("c", conv(3, 1))]);
    assert_gradients(&g, &params_for(&g, 1), &input([2, 2, 5, 6], 1), false);
}

#[test]
fn conv_stride_two() {
    let g = chain((2, 8, 6), vec![("c", conv(3, 2))]);
    assert_gradients(&g, &params_for(&g, 2), &input([2, 2, 8, 6], 2), false);
}

#[test]
fn batchnorm_running_statistics() {
    let bn = LayerSpec::BatchNorm {
        momentum: 0.9,
        eps: 1e-5,
    };
    let g = chain((3, 4, 4), vec![("c", conv(2, 1)), ("bn", bn)]);
    assert_gradients(&g, &params_for(&g, 3), &input([2, 3, 4, 4], 3), false);
}

#[test]
fn batchnorm_batch_statistics() {
    let bn = LayerSpec::BatchNorm {
        momentum: 0.9,
        eps: 1e-5,
    };
    let g = chain((3, 4, 4), vec![("c", conv(2, 1)), ("bn", bn)]);
    // Batch-mean subtraction cancels any bias feeding the normalization.
    assert_gradients_except(&g, &params_for(&g, 4), &input([3, 3, 4, 4], 4), true, &["c.bias"]);
}

#[test]
fn relu() {
    let g = chain((2, 4, 4), vec![("c", conv(3, 1)), ("r", LayerSpec::Relu)]);
    assert_gradients(&g, &params_for(&g, 5), &input([2, 2, 4, 4], 5), false);
}

#[test]
fn leaky_relu_and_dense() {
    let g = chain(
        (1, 4, 4),
        vec![
            ("f", LayerSpec::Flatten),
            ("d", LayerSpec::Dense { units: 7 }),
            ("l", LayerSpec::LeakyRelu { slope: 0.1 }),
        ],
    );
    assert_gradients(&g, &params_for(&g, 6), &input([2, 1, 4, 4], 6), false);
}

#[test]
fn tanh_output() {
    let mut g_nodes = vec![
        node("f", LayerSpec::Flatten, vec![Value::Input]),
        node("d", LayerSpec::Dense { units: 2 }, vec![Value::Node(0)]),
    ];
    g_nodes.push(node("t", LayerSpec::Tanh, vec![Value::Node(1)]));
    let g = Graph::new((2, 3, 3), g_nodes, Value::Node(2), None).unwrap();
    assert_gradients(&g, &params_for(&g, 7), &input([2, 2, 3, 3], 7), false);
}

#[test]
fn dropout_disabled_is_identity() {
    let g = chain(
        (2, 4, 4),
        vec![("c", conv(2, 1)), ("drop", LayerSpec::Dropout { rate: 0.2 })],
    );
    assert_gradients(&g, &params_for(&g, 8), &input([2, 2, 4, 4], 8), false);
}

#[test]
fn channel_mean_times_channel_mean() {
    // Two branches reduced to single-channel maps and multiplied, as in the
    // controller head.
    let nodes = vec![
        node("a", conv(3, 1), vec![Value::Input]),
        node("b", conv(4, 1), vec![Value::Node(0)]),
        node("ma", LayerSpec::ChannelMean, vec![Value::Node(0)]),
        node("mb", LayerSpec::ChannelMean, vec![Value::Node(1)]),
        node("mul", LayerSpec::ElementwiseMul, vec![Value::Node(2), Value::Node(3)]),
        node("flat", LayerSpec::Flatten, vec![Value::Node(4)]),
        node("head", LayerSpec::Dense { units: 2 }, vec![Value::Node(5)]),
    ];
    let g = Graph::new((2, 4, 5), nodes, Value::Node(6), Some(Value::Node(4))).unwrap();
    assert_gradients(&g, &params_for(&g, 9), &input([2, 2, 4, 5], 9), false);
}

#[test]
fn zero_loss_gives_tiny_gradients() {
    let g = chain((1, 2, 2), vec![]);
    let p = params_for(&g, 10);
    let x = input([2, 1, 2, 2], 10);
    let pass = nn::forward(&g, &p, &x, Mode::infer()).unwrap();
    let y: Vec<ControlVector> = pass.controls();
    let (loss, grads) = nn::backward(&g, &p, &pass, &y).unwrap();
    assert!(loss.abs() < 1e-6);
    for t in &grads {
        assert!(t.data().iter().all(|v| v.abs() <= 1e-4), "{:?}", t.data());
    }
}

#[test]
fn duplicating_the_batch_keeps_gradients() {
    let g = chain((2, 4, 4), vec![("c", conv(2, 2)), ("r", LayerSpec::Relu)]);
    let p = params_for(&g, 11);
    let x = input([2, 2, 4, 4], 11);
    let mut doubled = x.data().to_vec();
    doubled.extend_from_slice(x.data());
    let x2 = Tensor::from_vec(&[4, 2, 4, 4], doubled).unwrap();
    let y = truth(2);
    let y2: Vec<_> = y.iter().chain(&y).copied().collect();
    let g1 = nn::backward(&g, &p, &nn::forward(&g, &p, &x, Mode::infer()).unwrap(), &y).unwrap().1;
    let g2 = nn::backward(&g, &p, &nn::forward(&g, &p, &x2, Mode::infer()).unwrap(), &y2).unwrap().1;
    for (a, b) in g1.iter().zip(&g2) {
        for (u, v) in a.data().iter().zip(b.data()) {
            assert!((u - v).abs() <= 1e-5 * u.abs().max(1.0));
        }
    }
}

#[test]
fn reference_forward_agrees_with_network() {
    let (g, p) = nn::build_c3net(64, 48, nn::Scale::Tiny, 12).unwrap();
    let p = {
        let mut q = params_for(&g, 12);
        q.entries.iter_mut().zip(&p.entries).for_each(|(a, b)| assert_eq!(a.name, b.name));
        q
    };
    let x = input([2, 3, 48, 64], 12);
    let fast = nn::forward(&g, &p, &x, Mode::infer()).unwrap();
    let slow = reference_forward(&g, &RefParams::from_net(&p), &to_array(&x), false);
    for (a, b) in fast.output().data().iter().zip(&slow.data) {
        assert!((*a as f64 - b).abs() < 1e-4, "{a} vs {b}");
    }
    let y = truth(2);
    let l_fast = nn::euclidean_loss(fast.output(), &y).unwrap() as f64;
    assert!((l_fast - reference_loss(&slow, &y)).abs() < 1e-4);
}
