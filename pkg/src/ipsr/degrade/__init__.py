"""Practical degradation pipeline: blur, noise, downsampling, JPEG, shuffle."""

from .dataset import DatasetSummary, generate_dataset, modcrop, pair_seed
from .jpeg import jpeg_simulate, scaled_table
from .noise import (
    EmptyBankError,
    GaussianNoise,
    NoisePatchBank,
    PatchNoise,
    PoissonNoise,
    add_noise,
    collect_noise_patches,
    inject_noise_patch,
)
from .pipeline import (
    BlurConfig,
    DegradationConfig,
    DownsampleConfig,
    JpegConfig,
    NoiseConfig,
    PipelineTrace,
    Resources,
    SharpenConfig,
    apply_stage,
    degrade_pipeline,
    replay_trace,
)
