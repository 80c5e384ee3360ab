"""Tiny super-resolution network: graph, autodiff, training, uint8 inference."""

from .autograd import Tensor
from .infer import upscale
from .io import WeightFileError, load_model, load_weights, save_weights
from .loss import LossConfig, compute_loss, loss_tensor, ssim_tensor
from .network import (
    OPERATORS,
    NetworkSpec,
    Node,
    build_network,
    check_weights,
    forward,
    init_weights,
    run_graph,
    zero_weights,
)
from .quant import QuantizedNetwork, QuantParams, calibrate, calibrate_and_quantize, fake_quantize
from .train import TrainConfig, TrainingError, TrainLog, backward_gradients, mean_l1, train
