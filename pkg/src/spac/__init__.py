"""Video rain removal by superpixel alignment and compensation."""

__version__ = "0.1.0"

from .core import (
    DimensionMismatchError,
    Frame,
    InvalidInputError,
    SpacConfig,
    SpacError,
    load_sequence,
    rgb_to_ycbcr,
    save_sequence,
    ycbcr_to_rgb,
)
from .superpixel import Segmentation, SpRegion, extract_regions, slic_segment
from .alignment import (
    MatchTensorT0,
    MatchTensorT1,
    RainMask,
    build_buffer,
    detect_rain,
    spatiotemporal_match,
    temporal_match,
)
from .rpca import RpcaResult, rpca_alm
from .derain import (
    SpFeatures,
    derain_frame,
    derain_video,
    detect_frame_rain,
    mask_blend_compensator,
    zero_compensator,
)
from .synth import RainParams, render_rain, synth_translating_sequence
from .evaluation import align_bench, pr_curve, psnr, ssim

__all__ = [
    "__version__",
    "DimensionMismatchError", "Frame", "InvalidInputError", "SpacConfig", "SpacError",
    "load_sequence", "rgb_to_ycbcr", "save_sequence", "ycbcr_to_rgb",
    "Segmentation", "SpRegion", "extract_regions", "slic_segment",
    "MatchTensorT0", "MatchTensorT1", "RainMask", "build_buffer", "detect_rain",
    "spatiotemporal_match", "temporal_match",
    "RpcaResult", "rpca_alm",
    "SpFeatures", "derain_frame", "derain_video", "detect_frame_rain",
    "mask_blend_compensator", "zero_compensator",
    "RainParams", "render_rain", "synth_translating_sequence",
    "align_bench", "pr_curve", "psnr", "ssim",
]
