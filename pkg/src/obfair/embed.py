"""128-d face encodings from an external plugin or a seeded synthetic model."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Mapping, Protocol, Sequence

import numpy as np

from .errors import PluginProtocolError
from .imgops import FaceBox, ImageBuffer
from .plugin import PluginClient, image_to_b64

ENCODING_DIM = 128


@dataclass(frozen=True)
class Encoding:
    image_id: str
    vector: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=np.float64)
        if v.shape != (ENCODING_DIM,):
            raise ValueError(f"encoding must have {ENCODING_DIM} components, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("encoding has non-finite components")
        v.setflags(write=False)
        object.__setattr__(self, "vector", v)


def _key(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "big")


# domain tags keep the centroid and per-image streams independent
_CENTROID, _IMAGE = 0, 1


@dataclass(frozen=True)
class SyntheticEmbedderConfig:
    seed: int
    identity_scale: float = 1.0
    noise_scale: float = 0.25
    obfuscation_noise: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not (math.isfinite(self.identity_scale) and self.identity_scale > 0):
            raise ValueError("identity_scale must be finite and > 0")
        if not (math.isfinite(self.noise_scale) and self.noise_scale >= 0):
            raise ValueError("noise_scale must be finite and >= 0")
        for g, s in self.obfuscation_noise.items():
            if not (math.isfinite(s) and s >= 0):
                raise ValueError(f"obfuscation_noise[{g!r}] must be finite and >= 0")

    def noise_for(self, groups: str | Sequence[str]) -> float:
        """Obfuscation noise for the first label in ``groups`` with a configured value."""
        if isinstance(groups, str):
            groups = [groups]
        for g in groups:
            if g in self.obfuscation_noise:
                return float(self.obfuscation_noise[g])
        return 0.0


def identity_centroid(cfg: SyntheticEmbedderConfig, identity_id: str) -> np.ndarray:
    rng = np.random.default_rng([cfg.seed, _CENTROID, _key(identity_id)])
    return cfg.identity_scale * rng.standard_normal(ENCODING_DIM)


def synthetic_embed(
    cfg: SyntheticEmbedderConfig,
    identity_id: str,
    image_id: str,
    group: str | Sequence[str],
    is_obfuscated: bool,
) -> Encoding:
    """centroid(identity) + image noise, plus group-dependent noise when obfuscated.

    ``group`` may be a single label or several (e.g. intersection, race,
    gender); the first one present in ``cfg.obfuscation_noise`` applies.
    """
    rng = np.random.default_rng([cfg.seed, _IMAGE, _key(image_id)])
    eta1 = rng.standard_normal(ENCODING_DIM)
    eta2 = rng.standard_normal(ENCODING_DIM)
    v = identity_centroid(cfg, identity_id) + cfg.noise_scale * eta1
    if is_obfuscated:
        v = v + cfg.noise_for(group) * eta2
    return Encoding(image_id, v)


def parse_encoding(reply: dict, image_id: str) -> Encoding:
    raw = reply.get("encoding")
    if not isinstance(raw, list):
        raise PluginProtocolError(f"embed reply lacks an 'encoding' list: {str(reply)[:200]}")
    if len(raw) != ENCODING_DIM:
        raise PluginProtocolError(f"encoding has {len(raw)} components, expected {ENCODING_DIM}")
    if not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in raw):
        raise PluginProtocolError("encoding components must be numbers")
    v = np.asarray(raw, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise PluginProtocolError("encoding has non-finite components")
    return Encoding(image_id, v)


def subprocess_embed(client: PluginClient, img: ImageBuffer, box: FaceBox, image_id: str = "") -> Encoding:
    reply = client.request({"op": "embed", "image": image_to_b64(img), "box": box.to_dict()})
    return parse_encoding(reply, image_id)


class Embedder(Protocol):
    def embed(self, img: ImageBuffer | None, box: FaceBox | None, *, image_id: str, identity_id: str,
              groups: Sequence[str], obfuscated: bool) -> Encoding: ...


class SyntheticEmbedder:
    """Ignores pixels; encodings depend only on ids, group and the obfuscation flag."""

    needs_pixels = False

    def __init__(self, cfg: SyntheticEmbedderConfig):
        self.cfg = cfg

    def embed(self, img, box, *, image_id, identity_id, groups, obfuscated) -> Encoding:
        return synthetic_embed(self.cfg, identity_id, image_id, groups, obfuscated)

    def close(self) -> None:
        pass


class PluginEmbedder:
    needs_pixels = True

    def __init__(self, client: PluginClient):
        client.require("embed")
        self.client = client

    def embed(self, img, box, *, image_id, identity_id, groups, obfuscated) -> Encoding:
        return subprocess_embed(self.client, img, box, image_id)

    def close(self) -> None:
        self.client.close()
