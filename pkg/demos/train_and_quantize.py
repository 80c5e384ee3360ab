"""Train the tiny SR network briefly, quantize it to uint8 and compare.

    python demos/train_and_quantize.py [image.png]

Takes about a minute. Writes float and quantized weight files plus an
upscaled image to ./demo_sr/.
"""

import os
import time

import numpy as np

from _scene import image_from_argv
from ipsr.filters import resample
from ipsr.imgcore import PlanarImage, save_image
from ipsr.metrics import EvalProtocol, psnr
from ipsr.srnet import TrainConfig, build_network, calibrate_and_quantize, forward, load_weights, save_weights, train, upscale
from ipsr.srnet.train import mean_l1

out_dir = "demo_sr"
os.makedirs(out_dir, exist_ok=True)
img = image_from_argv(192)
rng = np.random.default_rng(0)


def crops(n):
    pairs = []
    for _ in range(n):
        y, x = rng.integers(0, min(img.height, img.width) - 48, 2)
        hr = PlanarImage(img.data[:, y : y + 48, x : x + 48])
        pairs.append((resample(hr, 16, 16, "bicubic").data.astype(np.float32), hr.data.astype(np.float32)))
    return pairs


pairs = crops(16)
spec = build_network(channels=32, blocks=4, scale=3)
print(f"network: {len(spec.nodes)} nodes, {spec.parameter_count()} parameters")

t = time.time()
w, log = train(spec, pairs, TrainConfig(epochs=200, max_steps=200, seed=0))
print(f"200 Adam steps in {time.time() - t:.0f}s; L1 {log.step_l1[0]:.4f} -> {mean_l1(spec, w, pairs):.4f}")

# post-training quantization from ten LR crops, checked on ten others
calib = [lr for lr, _ in crops(10)]
held = [lr for lr, _ in crops(10)]
q = calibrate_and_quantize(spec, w, calib)
diff = np.mean([np.abs(q.forward(x[None]) - forward(spec, w, x[None])).mean() for x in held])
print(f"quantized vs float mean abs difference on held-out crops: {diff:.4f} (= {diff * 255:.2f}/255)")

save_weights(os.path.join(out_dir, "float.ipsr"), spec, w)
save_weights(os.path.join(out_dir, "uint8.ipsr"), spec, w, q)
assert type(load_weights(os.path.join(out_dir, "uint8.ipsr"))).__name__ == "QuantizedNetwork"

# whole-image comparison against plain bicubic upscaling; 200 steps on 16
# crops is far from converged, so expect the network to trail bicubic here
h, wd = img.height, img.width
lr = resample(img, h // 3, wd // 3, "bicubic")
proto = EvalProtocol("y", shave=3)
results = {
    "bicubic": resample(lr, h, wd, "bicubic"),
    "float net": upscale(spec, w, lr),
    "uint8 net": upscale(spec, q, lr),
}
for name, sr in results.items():
    print(f"{name:>10}: Y-PSNR {psnr(PlanarImage(np.clip(sr.data, 0, 1)), img, proto):.2f} dB")
save_image(results["uint8 net"], os.path.join(out_dir, "sr_uint8.png"))
print(f"files in {out_dir}/")
