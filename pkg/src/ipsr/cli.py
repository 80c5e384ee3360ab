"""``ipsr`` command line: dataset synthesis, kernel estimation, training, inference.

Exit status is 0 on success, 1 for usage or configuration errors and 2 when
input data cannot be used. See ``docs/config.md`` for the config format.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import re
import sys

from . import degrade, kernest
from .filters import save_kernel
from .imgcore import ImageError, PlanarImage, load_image, save_image
from .metrics import EvalProtocol, evaluate_pairs
from .srnet import io as wio
from .srnet.infer import upscale
from .srnet.loss import LossConfig
from .srnet.network import build_network
from .srnet.quant import calibrate_and_quantize
from .srnet.train import TrainConfig, TrainingError, train

log = logging.getLogger("ipsr")

DEFAULT_SEED = 0
LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
IMAGE_EXTS = (".png", ".ppm", ".pgm", ".pnm")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------- config

def parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(cfg: dict, item: str) -> None:
    """Set ``a.b.c=value`` in a nested dict; the value is JSON or a bare string."""
    key, sep, raw = item.partition("=")
    if not sep or not key:
        raise UsageError(f"override {item!r} is not of the form key=value")
    node = cfg
    parts = key.split(".")
    for p in parts[:-1]:
        nxt = node.setdefault(p, {})
        if not isinstance(nxt, dict):
            raise UsageError(f"override {key!r}: {p!r} is not a section")
        node = nxt
    node[parts[-1]] = parse_value(raw)


def load_config(args) -> dict:
    cfg = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                cfg = json.load(fh)
        except OSError as e:
            raise UsageError(f"cannot read config {args.config}: {e}") from None
        except json.JSONDecodeError as e:
            raise UsageError(f"config {args.config} is not valid JSON: {e}") from None
        if not isinstance(cfg, dict):
            raise UsageError("config file must hold a JSON object")
    for item in args.set or []:
        apply_override(cfg, item)
    if args.seed is not None:
        cfg["seed"] = args.seed
    cfg.setdefault("seed", DEFAULT_SEED)
    seed = cfg["seed"]
    if not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise UsageError(f"seed must be an integer in [0, 2**64), got {seed!r}")
    return cfg


def _take(cfg: dict, cls, section: str | None = None) -> object:
    """Build dataclass ``cls`` from the keys of ``cfg`` it knows; unknown keys are errors."""
    known = {f.name for f in dataclasses.fields(cls)}
    bad = set(cfg) - known
    if bad:
        where = f" in section {section!r}" if section else ""
        raise UsageError(f"unknown config key(s) {sorted(bad)}{where}; allowed: {sorted(known)}")
    try:
        return cls(**cfg)
    except (TypeError, ValueError) as e:
        raise UsageError(f"invalid {section or 'config'}: {e}") from None


def _list_images(d: str) -> list[str]:
    if not os.path.isdir(d):
        raise DataError(f"{d} is not a directory")
    return sorted(f for f in os.listdir(d) if f.lower().endswith(IMAGE_EXTS))


def _load(path: str) -> PlanarImage:
    try:
        return load_image(path)
    except (ImageError, OSError) as e:
        raise DataError(f"{path}: {e}") from None


# ---------------------------------------------------------------- commands

def cmd_degrade(args, cfg: dict) -> int:
    count = cfg.pop("count", 1)
    if args.count is not None:
        count = args.count
    jobs = args.jobs
    try:
        dcfg = degrade.DegradationConfig.from_dict(cfg)
    except (TypeError, ValueError) as e:
        raise UsageError(f"invalid degradation config: {e}") from None
    if not os.path.isdir(args.hr):
        raise DataError(f"{args.hr} is not a directory")
    try:
        res = degrade.Resources.from_config(dcfg)
    except (OSError, ValueError, ImageError) as e:
        raise DataError(f"cannot load degradation resources: {e}") from None
    summary = degrade.generate_dataset(args.hr, args.out, dcfg, count=count, jobs=jobs, resources=res)
    log.info("%d images, %d LR written, %d failures", summary.images, summary.lr_written, len(summary.failures))
    for name, err in summary.failures:
        log.error("%s: %s", name, err)
    if summary.images == 0:
        raise DataError(f"no HR images in {args.hr}")
    return 0 if not summary.failures else 2


def cmd_collect_noise(args, cfg: dict) -> int:
    cfg.pop("seed")
    opts = {"patch_size": 64, "stride": 32, "variance_cap": 0.002}
    bad = set(cfg) - set(opts)
    if bad:
        raise UsageError(f"unknown config key(s) {sorted(bad)}; allowed: {sorted(opts)}")
    opts.update(cfg)
    flags = {"patch_size": args.patch, "stride": args.stride, "variance_cap": args.var}
    opts.update({k: v for k, v in flags.items() if v is not None})
    images = [_load(os.path.join(args.lr, f)) for f in _list_images(args.lr)]
    if not images:
        raise DataError(f"no images in {args.lr}")
    try:
        bank = degrade.collect_noise_patches(images, opts["patch_size"], opts["stride"], opts["variance_cap"])
    except degrade.EmptyBankError as e:
        raise DataError(str(e)) from None
    bank.save(args.out)
    log.info("kept %d patches of %dpx", len(bank), opts["patch_size"])
    return 0


def cmd_estimate_kernel(args, cfg: dict) -> int:
    src = _load(args.src)
    target = _load(args.lr) if args.lr else None
    problem = _take({"source": src, "target": target, **cfg}, kernest.EstimationProblem)
    try:
        est = kernest.estimate_kernel(problem)
    except kernest.EstimationError as e:
        raise DataError(str(e)) from None
    save_kernel(est.kernel, args.out)
    if args.loss_csv:
        kernest.save_loss_history(est.losses, args.loss_csv)
    log.info("final loss %.6f, raw kernel sum %.4f", est.losses[-1], est.raw_sum)
    return 0


_PAIR_RE = re.compile(r"^(?P<stem>.+)_(?P<k>\d+|real)_lr\.png$")


def load_pairs(d: str):
    """Pairs from a directory written by ``degrade``: ``{stem}_hr.png`` + ``{stem}_{k}_lr.png``."""
    names = _list_images(d)
    pairs = []
    for name in names:
        m = _PAIR_RE.match(name)
        if not m:
            continue
        hr_path = os.path.join(d, f"{m['stem']}_hr.png")
        if not os.path.exists(hr_path):
            log.warning("no HR image for %s", name)
            continue
        pairs.append((_load(os.path.join(d, name)).data, _load(hr_path).data))
    return pairs


def _net_and_train_config(cfg: dict):
    arch = cfg.pop("arch", {})
    loss = cfg.pop("loss", {})
    if not isinstance(arch, dict) or not isinstance(loss, dict):
        raise UsageError("'arch' and 'loss' must be sections")
    bad = set(arch) - {"channels", "blocks", "scale", "anchor"}
    if bad:
        raise UsageError(f"unknown arch key(s) {sorted(bad)}")
    try:
        spec = build_network(**arch)
    except (TypeError, ValueError) as e:
        raise UsageError(f"invalid arch: {e}") from None
    lcfg = _take(loss, LossConfig, "loss")
    if lcfg.feature_extractor is not None:
        raise UsageError("a feature extractor cannot be set from the config file")
    tcfg = _take({**cfg, "loss": lcfg}, TrainConfig)
    return spec, tcfg


def cmd_train(args, cfg: dict) -> int:
    spec, tcfg = _net_and_train_config(cfg)
    pairs = load_pairs(args.data)
    if not pairs:
        raise DataError(f"no (HR, LR) pairs found in {args.data}")
    val = load_pairs(args.val) if args.val else None
    try:
        w, tlog = train(spec, pairs, tcfg, val_pairs=val)
    except TrainingError as e:
        raise DataError(str(e)) from None
    except ValueError as e:
        raise DataError(f"training data: {e}") from None
    wio.save_weights(args.out, spec, w)
    if args.log_csv:
        with open(args.log_csv, "w", encoding="utf-8", newline="") as fh:
            fh.write(tlog.to_csv())
    return 0


def _load_model(path: str):
    try:
        spec, w, qnet = wio.load_model(path)
    except OSError as e:
        raise DataError(f"cannot read weights {path}: {e}") from None
    except wio.WeightFileError as e:
        raise DataError(f"{path}: {e}") from None
    return spec, (w if qnet is None else qnet)


def cmd_infer(args, cfg: dict) -> int:
    spec, model = _load_model(args.weights)
    if os.path.isdir(args.input):
        os.makedirs(args.out, exist_ok=True)
        jobs = [(os.path.join(args.input, f), os.path.join(args.out, f)) for f in _list_images(args.input)]
        if not jobs:
            raise DataError(f"no images in {args.input}")
    else:
        jobs = [(args.input, args.out)]
    for src, dst in jobs:
        img = _load(src)
        try:
            out = upscale(spec, model, img)
        except ValueError as e:
            raise DataError(f"{src}: {e}") from None
        save_image(out, dst)
        log.info("%s -> %s (%dx%d)", src, dst, out.width, out.height)
    return 0


def cmd_quantize(args, cfg: dict) -> int:
    spec, model = _load_model(args.weights)
    if not isinstance(model, dict):
        raise DataError(f"{args.weights} is already quantized")
    names = _list_images(args.calib)[: args.count]
    if not names:
        raise DataError(f"no calibration images in {args.calib}")
    images = []
    for n in names:
        img = _load(os.path.join(args.calib, n))
        if img.channels != spec.in_channels:
            raise DataError(f"{n}: calibration images must have {spec.in_channels} channels")
        images.append(img)
    qnet = calibrate_and_quantize(spec, model, images)
    wio.save_weights(args.out, spec, model, qnet)
    log.info("calibrated on %d images", len(images))
    return 0


def cmd_eval(args, cfg: dict) -> int:
    proto = EvalProtocol.for_mode(args.mode, args.scale)
    if args.shave is not None:
        proto = dataclasses.replace(proto, shave=args.shave)
    for d in (args.sr, args.hr):
        if not os.path.isdir(d):
            raise DataError(f"{d} is not a directory")
    report = evaluate_pairs(args.sr, args.hr, proto, jobs=args.jobs)
    print(report.to_table())
    if args.csv:
        with open(args.csv, "w", encoding="utf-8", newline="") as fh:
            fh.write(report.to_csv())
    if not report.rows:
        raise DataError("no image pairs could be scored")
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config value (dotted keys; JSON values); repeatable")
    common.add_argument("--seed", type=int, help=f"random seed (default {DEFAULT_SEED})")

    p = _Parser(prog="ipsr", description="Degradation, kernel estimation and tiny-SR toolkit.")
    sub = p.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("degrade", parents=[common], help="synthesize LR/HR training pairs")
    s.add_argument("--hr", required=True, help="directory of HR images")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--count", type=int, help="LR copies per HR image (default 1)")
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_degrade)

    s = sub.add_parser("collect-noise", parents=[common], help="build a noise patch bank from real LR images")
    s.add_argument("--lr", required=True, help="directory of real LR images")
    s.add_argument("--out", required=True, help="output bank file")
    s.add_argument("--patch", type=int, help="patch size (default 64)")
    s.add_argument("--stride", type=int, help="window stride (default 32)")
    s.add_argument("--var", type=float, help="per-channel variance cap (default 0.002)")
    s.set_defaults(func=cmd_collect_noise)

    s = sub.add_parser("estimate-kernel", parents=[common], help="estimate a blur kernel")
    s.add_argument("--src", required=True, help="source image")
    s.add_argument("--lr", help="observed LR image of the same scene (paired mode)")
    s.add_argument("--out", required=True, help="output kernel text file")
    s.add_argument("--loss-csv", help="write the loss history here")
    s.set_defaults(func=cmd_estimate_kernel)

    s = sub.add_parser("train", parents=[common], help="train the network")
    s.add_argument("--data", required=True, help="directory written by 'degrade'")
    s.add_argument("--val", help="validation directory in the same layout")
    s.add_argument("--out", required=True, help="output weight file")
    s.add_argument("--log-csv", help="write per-epoch log here")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("infer", parents=[common], help="upscale an image or a directory")
    s.add_argument("--weights", required=True)
    s.add_argument("--in", dest="input", required=True, help="input image or directory")
    s.add_argument("--out", required=True, help="output image or directory")
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("quantize", parents=[common], help="post-training uint8 quantization")
    s.add_argument("--weights", required=True, help="float weight file")
    s.add_argument("--calib", required=True, help="directory of LR calibration images")
    s.add_argument("--count", type=int, default=10, help="number of calibration images")
    s.add_argument("--out", required=True, help="output quantized weight file")
    s.set_defaults(func=cmd_quantize)

    s = sub.add_parser("eval", parents=[common], help="PSNR/SSIM of SR images against HR")
    s.add_argument("--sr", required=True)
    s.add_argument("--hr", required=True)
    s.add_argument("--mode", choices=("y", "rgb"), default="y")
    s.add_argument("--scale", type=int, default=3, help="sets the default shave in y mode")
    s.add_argument("--shave", type=int)
    s.add_argument("--csv", help="write the CSV report here")
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_eval)
    return p


def _setup_logging() -> None:
    level = os.environ.get("IPSR_LOG", "info").lower()
    logging.basicConfig(level=LOG_LEVELS.get(level, logging.INFO), format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)
    if level not in LOG_LEVELS:
        log.warning("IPSR_LOG=%s not understood; using info", level)


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    _setup_logging()
    try:
        if getattr(args, "jobs", 1) is not None and getattr(args, "jobs", 1) < 1:
            raise UsageError("--jobs must be >= 1")
        cfg = load_config(args)
        if args.command in ("infer", "quantize", "eval"):
            # these take no tunables beyond the seed
            extra = set(cfg) - {"seed"}
            if extra:
                raise UsageError(f"{args.command} takes no config keys, got {sorted(extra)}")
        return args.func(args, cfg)
    except UsageError as e:
        print(f"ipsr {args.command}: {e}", file=sys.stderr)
        return 1
    except (DataError, ImageError, wio.WeightFileError) as e:
        print(f"ipsr {args.command}: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"ipsr {args.command}: {e}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
