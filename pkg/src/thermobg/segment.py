"""Background/foreground decision per pixel plus mask post-filtering.

The background posterior follows the unnormalized Bayes form

    p(bg | x) = p(x | bg) * p_bg / (p(x | bg) + p(x | fg))

with a uniform foreground model p(x | fg) = 1/L over the L intensity levels.
The denominator is kept exactly in this form (no prior weighting inside it);
the result is clamped to [0, 1] defensively.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .adapt import match_component, spawn_component, update_matched
from .core import MixtureModel, mixture_density

BACKGROUND = 0
FOREGROUND = 1

_STRUCTURE_4 = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
_STRUCTURE_8 = np.ones((3, 3), dtype=bool)


@dataclass
class SegmentationConfig:
    p_bg: float = 0.6
    decision_threshold: float = 0.5
    min_blob_area: int = 15
    connectivity: int = 8

    def __post_init__(self):
        if not (0.5 < self.p_bg < 1.0):
            raise ValueError("p_bg must lie in (0.5, 1)")
        if not (0.0 < self.decision_threshold < 1.0):
            raise ValueError("decision_threshold must lie in (0, 1)")
        if self.min_blob_area < 0:
            raise ValueError("min_blob_area must be nonnegative")
        if self.connectivity not in (4, 8):
            raise ValueError("connectivity must be 4 or 8")


@dataclass
class MaskFrame:
    """Binary labels for one frame, optionally with the background posterior."""

    width: int
    height: int
    labels: np.ndarray                 # (height, width) uint8, 0=bg 1=fg
    posterior: np.ndarray | None = None  # (height, width) float64 in [0, 1]

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        if self.labels.shape != (self.height, self.width):
            raise ValueError("label array does not match the declared size")
        if self.posterior is not None:
            self.posterior = np.asarray(self.posterior, dtype=np.float64)
            if self.posterior.shape != (self.height, self.width):
                raise ValueError("posterior array does not match the declared size")

    def foreground_count(self) -> int:
        return int(self.labels.sum())


def posterior_bg(model: MixtureModel, x: float, cfg: SegmentationConfig) -> float:
    """Background posterior for one sample, in [0, 1]."""
    d = mixture_density(model, float(x))
    u = 1.0 / model.intensity_levels
    p = cfg.p_bg * d / (d + u)
    return min(max(p, 0.0), 1.0)


def classify_pixel(model: MixtureModel, x: float, cfg: SegmentationConfig) -> int:
    """BACKGROUND when the posterior reaches the decision threshold."""
    return BACKGROUND if posterior_bg(model, x, cfg) >= cfg.decision_threshold \
        else FOREGROUND


def blob_filter(mask: MaskFrame, cfg: SegmentationConfig) -> MaskFrame:
    """Relabel connected foreground blobs smaller than min_blob_area as
    background.  Idempotent; never adds foreground."""
    labels = np.asarray(mask.labels, dtype=np.uint8)
    if cfg.min_blob_area <= 1:
        return MaskFrame(mask.width, mask.height, labels.copy(), mask.posterior)
    structure = _STRUCTURE_8 if cfg.connectivity == 8 else _STRUCTURE_4
    blobs, n_blobs = ndimage.label(labels == FOREGROUND, structure=structure)
    if n_blobs == 0:
        return MaskFrame(mask.width, mask.height, labels.copy(), mask.posterior)
    areas = np.bincount(blobs.ravel(), minlength=n_blobs + 1)
    small = areas < cfg.min_blob_area
    small[0] = False  # index 0 is the background
    out = labels.copy()
    out[small[blobs]] = BACKGROUND
    return MaskFrame(mask.width, mask.height, out, mask.posterior)


@dataclass
class StandingObjectScenario:
    """A constant new intensity appears in front of an established background
    model and stays: the trace of the switching dynamics in the paper's
    pedestrian case study.

    The default background is a single component at 16 with sigma 1.5 (the
    toy background used throughout the adaptation experiments) and the object
    appears at intensity 21.
    """

    background: list[tuple[float, float, float]] = field(
        default_factory=lambda: [(1.0, 16.0, 2.25)])  # (weight, mean, variance)
    object_intensity: float = 21.0
    history_len: int = 100
    epsilon_star: int = 2
    intensity_levels: int = 256
    horizon: int = 10_000


def frames_to_background(scenario: StandingObjectScenario,
                         cfg: SegmentationConfig) -> int | float:
    """Number of frames until the standing object is classified background.

    Builds the background model, spawns a component for the object with the
    scenario's epsilon, then repeats: classify, and absorb the sample into
    the matched component.  Returns the first 1-based frame index whose
    posterior reaches the threshold, or math.inf within the horizon.
    """
    model = MixtureModel(
        weights=[w for w, _, _ in scenario.background],
        means=[m for _, m, _ in scenario.background],
        variances=[v for _, _, v in scenario.background],
        history_len=scenario.history_len,
        intensity_levels=scenario.intensity_levels,
    )
    x = float(scenario.object_intensity)
    model = spawn_component(model, x, scenario.epsilon_star)
    for frame in range(1, scenario.horizon + 1):
        if posterior_bg(model, x, cfg) >= cfg.decision_threshold:
            return frame
        c, _ = match_component(model, x)
        model = update_matched(model, c, x)
    return math.inf
