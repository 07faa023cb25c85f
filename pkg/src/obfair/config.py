"""Run configuration: loading, validation and digests.

A config is one JSON or YAML document. Keys (relative paths resolve against
the config file's directory)::

    manifest: manifest.csv            # required
    output_dir: out                   # required
    seed: 0
    workers: 1
    methods: [blur, pixelate]         # blur | pixelate | gaussian_blur | pixelation
    cv_folds: 3
    classifiers:                      # at least one
      - kind: knn                     # knn | gnb | svc | mlp
        name: knn                     # optional, defaults to kind; must be unique
        params: {k: 1}                # optional hyperparameter overrides
        grid: false                   # true = default grid, mapping = custom grid
    detector:
      backend: oracle                 # oracle | plugin
      threshold: 12.0                 # oracle only
      command: [python, -m, obfair.plugins.reference]   # plugin only
      timeout: 30
    embedder:
      backend: synthetic              # synthetic | plugin
      seed: null                      # null = follow the run seed
      identity_scale: 1.0
      noise_scale: 0.25
      obfuscation_noise: {White: 0.0, Non-White: 4.0}
      command: [...]                  # plugin only
      timeout: 30
"""

from __future__ import annotations

import hashlib
import json
import shlex
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

import yaml

from .classify import DEFAULT_GRIDS, KINDS, ClassifierSpec
from .dataset import canonical_group_label
from .errors import ConfigError
from .imgops import ObfuscationMethod
from .plugin import DEFAULT_TIMEOUT


@dataclass(frozen=True)
class ClassifierConfig:
    name: str
    kind: str
    params: Mapping[str, Any] = field(default_factory=dict)
    grid: Mapping[str, list] | None = None

    def to_dict(self) -> dict:
        return {"name": self.name, "kind": self.kind, "params": dict(self.params), "grid": self.grid}


@dataclass(frozen=True)
class DetectorConfig:
    backend: str = "oracle"
    threshold: float = 12.0
    command: tuple[str, ...] = ()
    timeout: float = DEFAULT_TIMEOUT

    def to_dict(self) -> dict:
        if self.backend == "oracle":
            return {"backend": "oracle", "threshold": self.threshold}
        return {"backend": "plugin", "command": list(self.command), "timeout": self.timeout}


@dataclass(frozen=True)
class EmbedderConfig:
    backend: str = "synthetic"
    seed: int | None = None
    identity_scale: float = 1.0
    noise_scale: float = 0.25
    obfuscation_noise: Mapping[str, float] = field(default_factory=dict)
    command: tuple[str, ...] = ()
    timeout: float = DEFAULT_TIMEOUT

    def to_dict(self) -> dict:
        if self.backend == "synthetic":
            return {
                "backend": "synthetic",
                "seed": self.seed,
                "identity_scale": self.identity_scale,
                "noise_scale": self.noise_scale,
                "obfuscation_noise": dict(sorted(self.obfuscation_noise.items())),
            }
        return {"backend": "plugin", "command": list(self.command), "timeout": self.timeout}


@dataclass(frozen=True)
class RunConfig:
    manifest: Path
    output_dir: Path
    methods: tuple[ObfuscationMethod, ...]
    classifiers: tuple[ClassifierConfig, ...]
    detector: DetectorConfig = DetectorConfig()
    embedder: EmbedderConfig = EmbedderConfig()
    seed: int = 0
    workers: int = 1
    cv_folds: int = 3

    def to_dict(self) -> dict:
        return {
            "manifest": str(self.manifest),
            "output_dir": str(self.output_dir),
            "seed": self.seed,
            "workers": self.workers,
            "cv_folds": self.cv_folds,
            "methods": [m.value for m in self.methods],
            "classifiers": [c.to_dict() for c in self.classifiers],
            "detector": self.detector.to_dict(),
            "embedder": self.embedder.to_dict(),
        }

    def digest(self) -> str:
        """Hash of everything that can change results (not paths of outputs, not worker count)."""
        doc = self.to_dict()
        del doc["output_dir"], doc["workers"]
        return stable_digest(doc)

    def with_overrides(self, seed=None, workers=None, methods=None) -> "RunConfig":
        cfg = self
        if seed is not None:
            cfg = replace(cfg, seed=int(seed))
        if workers is not None:
            if workers < 1:
                raise ConfigError("workers must be >= 1")
            cfg = replace(cfg, workers=int(workers))
        if methods is not None:
            cfg = replace(cfg, methods=_methods(methods))
        return cfg


def stable_digest(doc: Any) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()).hexdigest()[:16]


def _methods(raw) -> tuple[ObfuscationMethod, ...]:
    if isinstance(raw, str):
        raw = ["blur", "pixelate"] if raw == "both" else [raw]
    try:
        methods = tuple(dict.fromkeys(ObfuscationMethod.parse(m) for m in raw))
    except ValueError as exc:
        raise ConfigError(f"unknown obfuscation method: {exc}") from None
    if not methods:
        raise ConfigError("at least one obfuscation method is required")
    return methods


def _command(raw) -> tuple[str, ...]:
    if isinstance(raw, str):
        return tuple(shlex.split(raw))
    if isinstance(raw, list) and raw and all(isinstance(x, str) for x in raw):
        return tuple(raw)
    raise ConfigError("plugin command must be a string or a non-empty list of strings")


def _classifiers(raw) -> tuple[ClassifierConfig, ...]:
    if not isinstance(raw, list) or not raw:
        raise ConfigError("at least one classifier is required")
    out = []
    for entry in raw:
        if isinstance(entry, str):
            entry = {"kind": entry}
        kind = entry.get("kind")
        if kind not in KINDS:
            raise ConfigError(f"classifier kind must be one of {KINDS}, got {kind!r}")
        params = dict(entry.get("params") or {})
        grid = entry.get("grid", False)
        if grid is True:
            grid = DEFAULT_GRIDS[kind]
        elif grid is False or grid is None:
            grid = None
        elif not isinstance(grid, dict) or not grid:
            raise ConfigError(f"classifier {kind}: grid must be true/false or a non-empty mapping")
        try:
            ClassifierSpec(kind, params)
            if grid:
                for point_key in grid:
                    ClassifierSpec(kind, {**params, point_key: grid[point_key][0]})
        except (ValueError, IndexError, TypeError) as exc:
            raise ConfigError(f"classifier {kind}: {exc}") from None
        out.append(ClassifierConfig(str(entry.get("name", kind)), kind, params, grid))
    names = [c.name for c in out]
    if len(set(names)) != len(names):
        raise ConfigError(f"classifier names must be unique, got {names}")
    return tuple(out)


def _detector(raw: Mapping) -> DetectorConfig:
    backend = raw.get("backend", "oracle")
    if backend == "oracle":
        threshold = float(raw.get("threshold", DetectorConfig.threshold))
        if threshold < 0:
            raise ConfigError("detector threshold must be >= 0")
        return DetectorConfig("oracle", threshold)
    if backend == "plugin":
        return DetectorConfig("plugin", command=_command(raw.get("command")), timeout=float(raw.get("timeout", DEFAULT_TIMEOUT)))
    raise ConfigError(f"detector backend must be 'oracle' or 'plugin', got {backend!r}")


def _embedder(raw: Mapping) -> EmbedderConfig:
    backend = raw.get("backend", "synthetic")
    if backend == "synthetic":
        try:
            noise = {canonical_group_label(k): float(v) for k, v in (raw.get("obfuscation_noise") or {}).items()}
        except ValueError as exc:
            raise ConfigError(f"embedder obfuscation_noise: {exc}") from None
        seed = raw.get("seed")
        cfg = EmbedderConfig(
            "synthetic",
            seed=None if seed is None else int(seed),
            identity_scale=float(raw.get("identity_scale", EmbedderConfig.identity_scale)),
            noise_scale=float(raw.get("noise_scale", EmbedderConfig.noise_scale)),
            obfuscation_noise=noise,
        )
        if cfg.identity_scale <= 0 or cfg.noise_scale < 0 or any(v < 0 for v in noise.values()):
            raise ConfigError("embedder scales must be positive (identity) or non-negative (noise)")
        return cfg
    if backend == "plugin":
        return EmbedderConfig("plugin", command=_command(raw.get("command")), timeout=float(raw.get("timeout", DEFAULT_TIMEOUT)))
    raise ConfigError(f"embedder backend must be 'synthetic' or 'plugin', got {backend!r}")


KNOWN_KEYS = {"manifest", "output_dir", "seed", "workers", "methods", "classifiers", "detector", "embedder", "cv_folds"}


def config_from_dict(doc: Mapping, base_dir: Path = Path(".")) -> RunConfig:
    if not isinstance(doc, Mapping):
        raise ConfigError("config must be a mapping")
    unknown = set(doc) - KNOWN_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for key in ("manifest", "output_dir"):
        if not doc.get(key):
            raise ConfigError(f"missing required key {key!r}")

    def resolve(p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else (base_dir / p)

    try:
        seed, workers, folds = int(doc.get("seed", 0)), int(doc.get("workers", 1)), int(doc.get("cv_folds", 3))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"seed, workers and cv_folds must be integers: {exc}") from None
    if seed < 0 or seed >= 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    if workers < 1 or folds < 2:
        raise ConfigError("workers must be >= 1 and cv_folds >= 2")
    return RunConfig(
        manifest=resolve(doc["manifest"]),
        output_dir=resolve(doc["output_dir"]),
        methods=_methods(doc.get("methods", ["blur", "pixelate"])),
        classifiers=_classifiers(doc.get("classifiers")),
        detector=_detector(doc.get("detector") or {}),
        embedder=_embedder(doc.get("embedder") or {}),
        seed=seed,
        workers=workers,
        cv_folds=folds,
    )


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        doc = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from None
    return config_from_dict(doc, path.parent)
