"""Supported matcher roster and per-run adapter configuration.

Every wrapped method honors the same output contract: a CSV with header
``x1,y1,x2,y2,score``, 0-based pixel coordinates (x = sample, y = line)
in the original full-image frame, one row per correspondence, scores in
[0, 1].  Methods differ in protocol: detector-based ones emit sparse
keypoint matches, detector-free ones emit semi-dense grids, and methods
estimating a dense warp are subsampled by confidence so downstream
robust estimation stays bounded.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import AdapterError, UnknownMethodError

MIN_TILE = 256
MAX_DENSE_MATCHES = 10_000


@dataclass(frozen=True)
class MethodInfo:
    """Static description of one supported matcher."""

    name: str
    protocol: str  # "sparse", "semidense", or "densewarp"
    weights_file: str
    source: str  # where the pretrained weights are published


METHODS: dict[str, MethodInfo] = {
    info.name: info
    for info in (
        MethodInfo("superglue", "sparse", "superglue_outdoor.pth",
                   "https://github.com/magicleap/SuperGluePretrainedNetwork"),
        MethodInfo("lightglue", "sparse", "superpoint_lightglue.pth",
                   "https://github.com/cvg/LightGlue"),
        MethodInfo("loftr", "semidense", "loftr_outdoor_ds.ckpt",
                   "https://github.com/zju3dv/LoFTR"),
        MethodInfo("aspanformer", "semidense", "aspanformer_outdoor.ckpt",
                   "https://github.com/apple/ml-aspanformer"),
        MethodInfo("dkm", "densewarp", "DKMv3_outdoor.pth",
                   "https://github.com/Parskatt/DKM"),
        MethodInfo("gim-lightglue", "sparse", "gim_lightglue_100h.ckpt",
                   "https://github.com/xuelunshen/gim"),
        MethodInfo("gim-dkm", "densewarp", "gim_dkm_100h.ckpt",
                   "https://github.com/xuelunshen/gim"),
    )
}

ROSTER: tuple[str, ...] = tuple(METHODS)


@dataclass(frozen=True)
class AdapterSpec:
    """One adapter invocation: which method, which weights, how to tile.

    ``weights`` may be an explicit checkpoint path; when None the file
    named in the method's :class:`MethodInfo` is looked up in the weights
    directory.  ``tile`` bounds the image area handed to one inference
    call; large inputs are split into tiles and the offsets undone in the
    output.  Matches scoring below ``score_threshold`` are dropped.
    """

    method: str
    weights: str | None = None
    tile: int = 1024
    score_threshold: float = 0.0

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise UnknownMethodError(
                f"unknown method {self.method!r}; supported: {', '.join(ROSTER)}")
        if self.tile < MIN_TILE:
            raise AdapterError(
                f"tile size {self.tile} is below the minimum of {MIN_TILE}")
        if not 0.0 <= self.score_threshold <= 1.0:
            raise AdapterError(
                f"score threshold {self.score_threshold} outside [0, 1]")

    @property
    def info(self) -> MethodInfo:
        return METHODS[self.method]
