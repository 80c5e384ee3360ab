"""Central finite differences against reverse mode on a tiny network.

ReLU and the L1 term are piecewise linear, so a perturbation that moves a
pre-activation or a residual across zero makes the difference quotient
meaningless there. The check records the sign pattern of every kink at
both perturbed points and reports how many parameters crossed one.
"""

import numpy as np

from ipsr.srnet import LossConfig, build_network, init_weights
from ipsr.srnet import autograd as ag
from ipsr.srnet.loss import loss_tensor
from ipsr.srnet.network import as_params, run_graph
from ipsr.srnet.train import backward_gradients

EPS = 1e-3
LOSS = LossConfig(1.0, 0.3, 0.0)


def instance(seed: int):
    spec = build_network(4, 1, 3)
    rng = np.random.default_rng(seed)
    w = init_weights(spec, seed=seed, dtype=np.float64)
    x = rng.random((1, 3, 8, 8))
    hr = 0.25 + 0.75 * rng.random((1, 3, 24, 24))
    return spec, w, x, hr


def _eval(spec, w, x, hr):
    env = run_graph(spec, as_params(w), ag.Tensor(x), keep=True)
    out = env[spec.output].data
    pre = [env[n.inputs[0]].data for n in spec.nodes if n.op == "relu"]
    signs = np.concatenate([(p > 0).ravel() for p in pre] + [(hr - out > 0).ravel()])
    return float(loss_tensor(env[spec.output], hr, LOSS)[0].data), signs


def check(seed: int, stop_on_crossing: bool = False):
    """Return (crossings, worst relative error over kink-free parameters, n params)."""
    spec, w, x, hr = instance(seed)
    _, grads = backward_gradients(spec, w, x, hr, LOSS)
    _, sig0 = _eval(spec, w, x, hr)
    crossings, worst, count = 0, 0.0, 0
    for node in spec.trainable:
        for j, arr in enumerate(w[node.name]):
            ana = grads[node.name][j]
            for i in np.ndindex(arr.shape):
                o = arr[i]
                arr[i] = o + EPS
                fp, sp = _eval(spec, w, x, hr)
                arr[i] = o - EPS
                fm, sm = _eval(spec, w, x, hr)
                arr[i] = o
                count += 1
                if (sp != sig0).any() or (sm != sig0).any():
                    crossings += 1
                    if stop_on_crossing:
                        return crossings, worst, count
                    continue
                num = (fp - fm) / (2 * EPS)
                worst = max(worst, abs(num - ana[i]) / max(abs(num), abs(ana[i]), 1e-12))
    return crossings, worst, count


def kink_free(max_seed: int = 50):
    """First seed whose instance has no kink crossings, with its check result."""
    for seed in range(max_seed):
        crossings, worst, count = check(seed, stop_on_crossing=True)
        if crossings == 0:
            return seed, worst, count
    raise RuntimeError("no kink-free instance found")
