"""Per-image calibration of the strongest obfuscation a detector still tolerates.

Strength is an integer where 0 means "untouched" and larger always means
more obfuscation:

* gaussian_blur: kernel size k = 2 * strength + 1
* pixelation:    target size s = roi_size - strength

Search doubles (or halves) from an initial strength until detection flips,
then bisects the integer bracket down to adjacent values.
"""

from __future__ import annotations

import enum
import logging
import math
import statistics
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping

from .detect import Detector
from .imgops import FaceBox, ImageBuffer, ObfuscationMethod, blur_roi, pixelate_roi

log = logging.getLogger(__name__)


class LevelFlag(str, enum.Enum):
    EXACT = "exact"
    CAPPED_AT_MAX = "capped_at_max"
    UNDETECTABLE_AT_MIN = "undetectable_at_min"


@dataclass(frozen=True)
class ObfuscationLevel:
    image_id: str
    method: ObfuscationMethod
    strength: int
    normalized: float
    flag: LevelFlag

    def to_dict(self) -> dict:
        return {
            "image_id": self.image_id,
            "method": self.method.value,
            "strength": self.strength,
            "normalized": self.normalized,
            "flag": self.flag.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ObfuscationLevel":
        return cls(
            d["image_id"],
            ObfuscationMethod(d["method"]),
            int(d["strength"]),
            float(d["normalized"]),
            LevelFlag(d["flag"]),
        )


def kernel_for(strength: int) -> int:
    return 2 * strength + 1


def target_size_for(strength: int, roi_size: int) -> int:
    return roi_size - strength


def max_strength(method: ObfuscationMethod, roi_size: int) -> int:
    if method is ObfuscationMethod.GAUSSIAN_BLUR:
        # smallest v with 2v + 1 >= 2 * roi_size
        return math.ceil((2 * roi_size - 1) / 2)
    return roi_size - 1


def initial_strength(method: ObfuscationMethod, roi_size: int) -> int:
    if method is ObfuscationMethod.GAUSSIAN_BLUR:
        target = 0.05 * roi_size
        # odd integer nearest the target; exact ties go to the larger kernel
        k = 2 * math.floor((target - 1) / 2 + 0.5) + 1
        return (max(k, 3) - 1) // 2
    return roi_size - max(1, roi_size // 2)


def normalized_level(method: ObfuscationMethod, strength: int, roi_size: int) -> float:
    if method is ObfuscationMethod.GAUSSIAN_BLUR:
        return kernel_for(strength) / roi_size
    return target_size_for(strength, roi_size) / roi_size


def obfuscate(img: ImageBuffer, box: FaceBox, method: ObfuscationMethod, strength: int) -> ImageBuffer:
    """Apply ``method`` at integer ``strength``; strength 0 returns the input."""
    if strength < 0:
        raise ValueError(f"strength must be >= 0, got {strength}")
    if strength == 0:
        return img
    if method is ObfuscationMethod.GAUSSIAN_BLUR:
        return blur_roi(img, box, kernel_for(strength))
    return pixelate_roi(img, box, target_size_for(strength, box.roi_size))


def search_strength(probe: Callable[[int], bool], v0: int, v_max: int) -> tuple[int, LevelFlag]:
    """Largest strength in [1, v_max] for which ``probe`` holds, assuming monotonicity.

    Returns ``(v_max, CAPPED_AT_MAX)`` if the probe never fails and
    ``(0, UNDETECTABLE_AT_MIN)`` if it fails even at strength 1.
    """
    if v_max < 1:
        return 0, LevelFlag.CAPPED_AT_MAX
    v = min(max(v0, 1), v_max)
    if probe(v):
        lo = v
        while True:
            if v >= v_max:
                return v_max, LevelFlag.CAPPED_AT_MAX
            v = min(2 * v, v_max)
            if not probe(v):
                hi = v
                break
            lo = v
    else:
        hi = v
        while True:
            if v == 1:
                return 0, LevelFlag.UNDETECTABLE_AT_MIN
            v = max(v // 2, 1)
            if probe(v):
                lo = v
                break
            hi = v
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if probe(mid):
            lo = mid
        else:
            hi = mid
    return lo, LevelFlag.EXACT


def calibrate(
    img: ImageBuffer,
    box: FaceBox,
    method: ObfuscationMethod,
    detector: Detector,
    image_id: str = "",
    obfuscator: Callable[[ImageBuffer, FaceBox, ObfuscationMethod, int], ImageBuffer] = obfuscate,
) -> ObfuscationLevel:
    """Find the strongest obfuscation of ``box`` at which ``detector`` still finds a face.

    Detector transport errors propagate; no partial level is produced.
    ``obfuscator`` is injectable so tests can drive the search with a
    detector that reads the strength directly.
    """
    roi = box.roi_size

    def detected(v: int) -> bool:
        return len(detector.detect(obfuscator(img, box, method, v))) >= 1

    strength, flag = search_strength(detected, initial_strength(method, roi), max_strength(method, roi))
    return ObfuscationLevel(image_id, method, strength, normalized_level(method, strength, roi), flag)


# --- statistics --------------------------------------------------------------


def summarize(values: Iterable[float]) -> dict:
    """Five-number summary; quartiles by the inclusive method."""
    xs = sorted(values)
    if not xs:
        raise ValueError("cannot summarize an empty sample")
    if len(xs) == 1:
        q1 = q3 = xs[0]
    else:
        q1, _, q3 = statistics.quantiles(xs, n=4, method="inclusive")
    return {"n": len(xs), "min": xs[0], "q1": q1, "median": statistics.median(xs), "q3": q3, "max": xs[-1]}


def level_statistics(
    levels: Iterable[ObfuscationLevel],
    grouping: Mapping[str, str],
    groups: Iterable[str] | None = None,
) -> dict[str, dict]:
    """Per-group summaries of normalized levels.

    ``grouping`` maps image_id to a group label. Groups listed in ``groups``
    without any level are skipped with a warning.
    """
    by_group: dict[str, list[float]] = {}
    for lvl in levels:
        by_group.setdefault(grouping[lvl.image_id], []).append(lvl.normalized)
    if groups is None:
        groups = sorted(by_group)
    out = {}
    for g in groups:
        if not by_group.get(g):
            log.warning("no calibration levels for group %r; omitted", g)
            continue
        out[g] = summarize(by_group[g])
    return out
