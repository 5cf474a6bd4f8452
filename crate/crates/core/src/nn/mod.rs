//! A small CPU network stack: just enough layers, backpropagation and
//! optimization to build, train and run the C³Net camera controller.
//!
//! Feature maps are `[N, C, H, W]` row-major `f32` tensors.

mod adam;
mod graph;
mod kernels;
mod loss;
mod tensor;
mod train;
mod weights;

pub use adam::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use graph::{
    backward, backward_from, build_c3net, forward, ForwardPass, Graph, LayerSpec, Mode, NetParams,
    Node, ParamTensor, RunningStatUpdate, Scale, Value, BN_EPS, BN_MOMENTUM, C3NET_DROPOUT,
    C3NET_LEAKY_SLOPE, C3NET_STRIDES,
};
pub use loss::{euclidean_loss, euclidean_loss_grad, LOSS_EPS};
pub use tensor::Tensor;
pub use train::{
    evaluate_loss, images_to_tensor, predict_dataset, train, EpochStats, TrainConfig, TrainData,
    TrainOutcome, MIN_IMPROVEMENT,
};
pub use weights::{load_weights, read_weights, save_weights, write_weights};
