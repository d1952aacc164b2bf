"""Clip-aware post-processing of per-frame filter decisions.

Frame-level removal flags come straight from the standard engine run on
frame features with clip-atomic bags. This module then closes small
temporal holes in the anomalous mask (a frame flanked by anomalous frames
is treated as anomalous too), splits clips around anomalous spans, and
discards fragments shorter than five frames.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.ndimage import binary_dilation, binary_erosion

from .data import FeatureDataset
from .errors import ParameterError

MIN_CLIP_LEN = 5
DEFAULT_CLOSE_WINDOW = 3


def close_anomaly_mask(flags: Sequence[bool], window: int = DEFAULT_CLOSE_WINDOW) -> np.ndarray:
    """Morphological closing (dilation then erosion) along the frame axis.

    ``window`` is the width of the centered structuring element and must be
    odd. Closing never clears an originally set flag and never reaches
    across gaps wider than the element.
    """
    mask = np.asarray(flags, dtype=bool)
    if mask.ndim != 1:
        raise ParameterError("mask must be one-dimensional")
    if window % 2 == 0 or window < 1:
        raise ParameterError(f"window must be odd and >= 1, got {window}")
    if window > mask.size:
        raise ParameterError(f"window {window} exceeds mask length {mask.size}")
    if window == 1:
        return mask.copy()
    element = np.ones(window, dtype=bool)
    dilated = binary_dilation(mask, structure=element)
    # erode with the outside treated as anomalous so the closing stays
    # extensive at the clip boundaries
    return binary_erosion(dilated, structure=element, border_value=1)


def segment_clips(removed_flags: Sequence[bool], min_len: int = MIN_CLIP_LEN) -> tuple[tuple[int, int], ...]:
    """Split one clip's kept frames into sub-clips, dropping short fragments.

    Maximal runs of kept (False) frames become sub-clips as inclusive
    ``(start, end)`` frame-position intervals; runs shorter than ``min_len``
    are discarded. An empty result is legal.
    """
    removed = np.asarray(removed_flags, dtype=bool)
    if removed.ndim != 1:
        raise ParameterError("flags must be one-dimensional")
    intervals: list[tuple[int, int]] = []
    start = None
    for pos, r in enumerate(removed):
        if not r and start is None:
            start = pos
        elif r and start is not None:
            intervals.append((start, pos - 1))
            start = None
    if start is not None:
        intervals.append((start, len(removed) - 1))
    return tuple((a, b) for a, b in intervals if b - a + 1 >= min_len)


@dataclass(frozen=True)
class ClipDecision:
    """Per-clip outcome: closed removal flags and the surviving sub-clips."""

    clip_id: str
    removed: tuple[bool, ...]
    sub_clips: tuple[tuple[int, int], ...]
    min_len: int = MIN_CLIP_LEN

    def __post_init__(self):
        prev_end = -1
        for start, end in self.sub_clips:
            if start <= prev_end:
                raise ParameterError("sub-clips must be disjoint and ordered")
            if end - start + 1 < self.min_len:
                raise ParameterError("sub-clip shorter than the minimum length")
            if any(self.removed[start : end + 1]):
                raise ParameterError("sub-clip contains a removed frame")
            prev_end = end


def clip_decisions(
    dataset: FeatureDataset,
    removed_ids: Iterable[str],
    window: int = DEFAULT_CLOSE_WINDOW,
    min_len: int = MIN_CLIP_LEN,
) -> tuple[ClipDecision, ...]:
    """Apply closing and segmentation to every clip of a video dataset.

    ``removed_ids`` are the engine's removed sample ids; the result is a
    per-clip segmentation report in clip order.
    """
    if dataset.clip_of is None:
        raise ParameterError("dataset has no clip structure")
    removed_set = set(removed_ids)
    unknown = removed_set - set(dataset.sample_ids)
    if unknown:
        raise ParameterError(f"unknown removed ids: {sorted(unknown)[:3]}")

    frames_by_clip: dict[str, list[str]] = {}
    for s in dataset.sample_ids:
        frames_by_clip.setdefault(dataset.clip_of[s], []).append(s)

    decisions = []
    for clip in dataset.clip_ids():
        flags = [s in removed_set for s in frames_by_clip[clip]]
        w = min(window, len(flags) if len(flags) % 2 == 1 else len(flags) - 1)
        closed = close_anomaly_mask(flags, max(1, w))
        decisions.append(ClipDecision(
            clip_id=clip,
            removed=tuple(bool(f) for f in closed),
            sub_clips=segment_clips(closed, min_len),
            min_len=min_len,
        ))
    return tuple(decisions)
