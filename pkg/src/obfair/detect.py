"""Face detectors: an external plugin backend and a gradient-energy oracle."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .errors import PluginProtocolError
from .imgops import FaceBox, ImageBuffer, full_box
from .plugin import PluginClient, image_to_b64


class Detector(Protocol):
    def detect(self, img: ImageBuffer) -> list[FaceBox]: ...


def luma(img: ImageBuffer) -> np.ndarray:
    """Integer luma plane, 0.299R + 0.587G + 0.114B rounded half up."""
    arr = img.to_array().astype(np.float64)
    if img.channels == 1:
        return arr[:, :, 0]
    y = 0.299 * arr[:, :, 0] + 0.587 * arr[:, :, 1] + 0.114 * arr[:, :, 2]
    return np.floor(y + 0.5)


def gradient_rms(img: ImageBuffer) -> float:
    """RMS of first-difference gradient magnitude over the luma plane.

    Differences are taken on the (h-1) x (w-1) grid where both exist; images
    with a single row or column have no such grid and score 0.
    """
    y = luma(img)
    if y.shape[0] < 2 or y.shape[1] < 2:
        return 0.0
    gx = y[:-1, 1:] - y[:-1, :-1]
    gy = y[1:, :-1] - y[:-1, :-1]
    return float(np.sqrt(np.mean(gx * gx + gy * gy)))


@dataclass(frozen=True)
class OracleDetectorConfig:
    contrast_threshold: float

    def __post_init__(self):
        if not self.contrast_threshold >= 0:
            raise ValueError(f"contrast_threshold must be >= 0, got {self.contrast_threshold}")


def oracle_detect(cfg: OracleDetectorConfig, img: ImageBuffer) -> list[FaceBox]:
    if gradient_rms(img) >= cfg.contrast_threshold:
        return [full_box(img)]
    return []


class OracleDetector:
    """Deterministic stand-in that "sees a face" while the image keeps enough edge energy."""

    def __init__(self, contrast_threshold: float):
        self.cfg = OracleDetectorConfig(contrast_threshold)

    def detect(self, img: ImageBuffer) -> list[FaceBox]:
        return oracle_detect(self.cfg, img)

    def close(self) -> None:
        pass


def parse_boxes(reply: dict, width: int, height: int) -> list[FaceBox]:
    boxes = reply.get("boxes")
    if not isinstance(boxes, list):
        raise PluginProtocolError(f"detect reply lacks a 'boxes' list: {reply!r}")
    out = []
    for raw in boxes:
        try:
            vals = [raw[key] for key in ("x", "y", "w", "h")]
        except (KeyError, TypeError) as exc:
            raise PluginProtocolError(f"malformed box {raw!r}") from exc
        if not all(isinstance(v, int) and not isinstance(v, bool) for v in vals):
            raise PluginProtocolError(f"box coordinates must be integers: {raw!r}")
        box = FaceBox(*vals)
        if not box.fits(width, height):
            raise PluginProtocolError(f"box {box} outside {width}x{height} image")
        out.append(box)
    return out


def subprocess_detect(client: PluginClient, img: ImageBuffer) -> list[FaceBox]:
    reply = client.request({"op": "detect", "image": image_to_b64(img)})
    return parse_boxes(reply, img.width, img.height)


class PluginDetector:
    def __init__(self, client: PluginClient):
        client.require("detect")
        self.client = client

    def detect(self, img: ImageBuffer) -> list[FaceBox]:
        return subprocess_detect(self.client, img)

    def close(self) -> None:
        self.client.close()
