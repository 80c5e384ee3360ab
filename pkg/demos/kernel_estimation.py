"""Recover a blur kernel from an (HR, LR) pair made with a known Gaussian.

    python demos/kernel_estimation.py [image.png]

The estimate is written to ./demo_kernel.txt, ready for the ``blur.kernel_files``
list of a degradation config.
"""

import time

import numpy as np

from _scene import image_from_argv
from ipsr.filters import IsoGaussian, make_blur_kernel, save_kernel
from ipsr.kernest import EstimationProblem, estimate_kernel, synthesize_lr

hr = image_from_argv(240)
true_k = make_blur_kernel(IsoGaussian(1.2, 13))
lr = synthesize_lr(hr, true_k, 3)
print(f"source {hr.width}x{hr.height}, observed LR {lr.width}x{lr.height}")

t = time.time()
est = estimate_kernel(EstimationProblem(hr, target=lr, seed=0))
print(f"{len(est.losses) - 1} iterations in {time.time() - t:.1f}s; "
      f"loss {est.losses[0]:.5f} -> {est.losses[-1]:.5f}; raw kernel sum {est.raw_sum:.4f}")

err = np.abs(est.kernel.weights - true_k.weights).sum()
print(f"L1 distance to the true kernel: {err:.4f}")

np.set_printoptions(precision=3, suppress=True)
print("central 5x5 of the estimate:\n", est.kernel.weights[4:9, 4:9])
print("central 5x5 of the truth:\n", true_k.weights[4:9, 4:9])

# single-image mode: no observed LR, the target is the ideal bicubic downscale
single = estimate_kernel(EstimationProblem(hr, iterations=1000))
save_kernel(single.kernel, "demo_kernel.txt")
print("single-image estimate written to demo_kernel.txt")
