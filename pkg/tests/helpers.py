"""Shared builders for end-to-end tests."""

import json
from pathlib import Path

from obfair.config import config_from_dict
from obfair.synth import make_cohort


def cohort(root: Path, identities=8, images=5, size=24, seed=0) -> Path:
    return make_cohort(root / "cohort", identities, images, size, seed)


def config_doc(manifest: Path, out: Path, **overrides) -> dict:
    doc = {
        "manifest": str(manifest),
        "output_dir": str(out),
        "seed": 0,
        "methods": ["blur"],
        "classifiers": [{"kind": "knn"}],
        "detector": {"backend": "oracle", "threshold": 12.0},
        "embedder": {"backend": "synthetic"},
    }
    doc.update(overrides)
    return doc


def make_config(manifest: Path, out: Path, **overrides):
    return config_from_dict(config_doc(manifest, out, **overrides))


def write_config(path: Path, doc: dict) -> Path:
    path.write_text(json.dumps(doc), encoding="utf-8")
    return path
