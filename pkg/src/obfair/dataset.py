"""Manifest ingestion, single-face filtering and per-identity train/test splits."""

from __future__ import annotations

import csv
import enum
import hashlib
import json
import logging
import math
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .detect import Detector
from .errors import ManifestError
from .imgops import FaceBox, ImageBuffer, load_image
from .workers import map_owned

log = logging.getLogger(__name__)

MANIFEST_COLUMNS = ["image_id", "file_path", "md5", "identity_id", "gender", "race"]
TEST_FRACTION = 0.2
_MD5 = re.compile(r"^[0-9a-fA-F]{32}$")


class Gender(str, enum.Enum):
    MALE = "male"
    FEMALE = "female"


class Race(str, enum.Enum):
    WHITE = "white"
    NON_WHITE = "non_white"


class Split(str, enum.Enum):
    TRAIN = "train"
    TEST = "test"
    EXCLUDED = "excluded"


class ExclusionReason(str, enum.Enum):
    DUPLICATE_CHECKSUM = "duplicate_checksum"
    ZERO_FACES = "zero_faces"
    MULTIPLE_FACES = "multiple_faces"
    UNDETECTABLE = "undetectable"
    TOO_FEW_IMAGES = "too_few_images"


RACE_LABELS = {Race.WHITE: "White", Race.NON_WHITE: "Non-White"}
GENDER_LABELS = {Gender.MALE: "Male", Gender.FEMALE: "Female"}
# table order for the three groupings
RACE_ORDER = ["White", "Non-White"]
GENDER_ORDER = ["Male", "Female"]
INTERSECTION_ORDER = ["Non-White Female", "Non-White Male", "White Female", "White Male"]


def canonical_group_label(name: str) -> str:
    """Accept "non_white_female", "Non-White Female", "white", ... and return the table label."""
    key = name.strip().lower().replace("-", "_").replace(" ", "_")
    table = {lbl.lower().replace("-", "_").replace(" ", "_"): lbl for lbl in RACE_ORDER + GENDER_ORDER + INTERSECTION_ORDER}
    if key not in table:
        raise ValueError(f"unknown group label {name!r}")
    return table[key]


@dataclass(frozen=True)
class Identity:
    identity_id: str
    gender: Gender
    race: Race

    @property
    def race_label(self) -> str:
        return RACE_LABELS[self.race]

    @property
    def gender_label(self) -> str:
        return GENDER_LABELS[self.gender]

    @property
    def intersection_label(self) -> str:
        return f"{self.race_label} {self.gender_label}"

    def group_labels(self) -> tuple[str, str, str]:
        """Most specific first."""
        return self.intersection_label, self.race_label, self.gender_label


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    file_path: Path
    checksum: str
    identity_id: str
    face_box: FaceBox | None = None
    split: Split | None = None
    exclusion_reason: ExclusionReason | None = None

    def __post_init__(self):
        if (self.split is Split.EXCLUDED) != (self.exclusion_reason is not None):
            raise ValueError(f"{self.image_id}: split=excluded iff an exclusion reason is set")

    @property
    def retained(self) -> bool:
        return self.split is not Split.EXCLUDED

    def excluded(self, reason: ExclusionReason) -> "ImageRecord":
        return replace(self, split=Split.EXCLUDED, exclusion_reason=reason)


def ingest_manifest(path: str | Path) -> tuple[list[Identity], list[ImageRecord]]:
    """Parse the manifest CSV; later rows repeating a checksum are excluded.

    Relative file paths resolve against the manifest's directory.
    """
    path = Path(path)
    identities: dict[str, Identity] = {}
    records: list[ImageRecord] = []
    seen_ids: set[str] = set()
    seen_md5: set[str] = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ManifestError("empty manifest", 1) from None
        if [h.strip() for h in header] != MANIFEST_COLUMNS:
            raise ManifestError(f"header must be {','.join(MANIFEST_COLUMNS)}, got {','.join(header)}", 1)
        for row in reader:
            line = reader.line_num
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(MANIFEST_COLUMNS):
                raise ManifestError(f"expected {len(MANIFEST_COLUMNS)} fields, got {len(row)}", line)
            image_id, file_path, md5, identity_id, gender, race = (cell.strip() for cell in row)
            if not image_id or not identity_id or not file_path:
                raise ManifestError("image_id, file_path and identity_id must be non-empty", line)
            if image_id in seen_ids:
                raise ManifestError(f"duplicate image_id {image_id!r}", line)
            if not _MD5.match(md5):
                raise ManifestError(f"md5 must be 32 hex characters, got {md5!r}", line)
            try:
                ident = Identity(identity_id, Gender(gender), Race(race))
            except ValueError as exc:
                raise ManifestError(f"unknown attribute value: {exc}", line) from None
            prior = identities.setdefault(identity_id, ident)
            if prior != ident:
                raise ManifestError(f"identity {identity_id!r} has conflicting attributes", line)
            fp = Path(file_path)
            if not fp.is_absolute():
                fp = path.parent / fp
            rec = ImageRecord(image_id, fp, md5.lower(), identity_id)
            if rec.checksum in seen_md5:
                rec = rec.excluded(ExclusionReason.DUPLICATE_CHECKSUM)
            seen_md5.add(rec.checksum)
            seen_ids.add(image_id)
            records.append(rec)
    return sorted(identities.values(), key=lambda i: i.identity_id), records


def _detect_one(rec: ImageRecord, detector: Detector, loader: Callable[[Path], ImageBuffer]) -> ImageRecord:
    try:
        img = loader(rec.file_path)
    except Exception as exc:  # undecodable files must not abort a long batch
        log.warning("cannot read %s (%s): %s; treating as zero faces", rec.image_id, rec.file_path, exc)
        return rec.excluded(ExclusionReason.ZERO_FACES)
    boxes = detector.detect(img)
    if len(boxes) == 0:
        return rec.excluded(ExclusionReason.ZERO_FACES)
    if len(boxes) > 1:
        return rec.excluded(ExclusionReason.MULTIPLE_FACES)
    return replace(rec, face_box=boxes[0])


def filter_single_face(
    records: Sequence[ImageRecord],
    detector: Detector,
    workers: int = 1,
    detector_factory: Callable[[], Detector] | None = None,
    loader: Callable[[Path], ImageBuffer] = load_image,
) -> list[ImageRecord]:
    """Keep images with exactly one detected face and attach its box.

    With ``workers > 1`` and a ``detector_factory``, every worker thread
    gets its own detector. Already-excluded records pass through.
    """
    pending = [r for r in records if r.retained]
    if workers > 1 and detector_factory is not None:
        done = map_owned(lambda r, det: _detect_one(r, det, loader), pending, detector_factory, workers)
    else:
        done = [_detect_one(r, detector, loader) for r in pending]
    results = {r.image_id: r for r in done}
    return [results.get(r.image_id, r) for r in records]


@dataclass(frozen=True)
class SplitPlan:
    seed: int
    per_identity: dict[str, tuple[tuple[str, ...], tuple[str, ...]]]

    def to_json(self) -> str:
        doc = {
            "seed": self.seed,
            "identities": {
                ident: {"train": list(train), "test": list(test)}
                for ident, (train, test) in sorted(self.per_identity.items())
            },
        }
        return json.dumps(doc, sort_keys=True, indent=1)

    @classmethod
    def from_dict(cls, doc: dict) -> "SplitPlan":
        return cls(
            int(doc["seed"]),
            {k: (tuple(v["train"]), tuple(v["test"])) for k, v in doc["identities"].items()},
        )

    def train_ids(self) -> set[str]:
        return {i for train, _ in self.per_identity.values() for i in train}

    def test_ids(self) -> set[str]:
        return {i for _, test in self.per_identity.values() for i in test}


def n_test_images(n: int) -> int:
    return max(1, math.floor(TEST_FRACTION * n + 0.5))


def _identity_seed(seed: int, identity_id: str) -> list[int]:
    digest = hashlib.sha256(identity_id.encode("utf-8")).digest()
    return [seed, int.from_bytes(digest[:8], "big")]


def make_split(records: Iterable[ImageRecord], seed: int) -> SplitPlan:
    """Seeded per-identity 80/20 split of the retained records.

    Independent of input order: each identity's images are sorted by id and
    shuffled with a stream derived from (seed, identity_id). Identities with
    fewer than 2 images are left out.
    """
    by_identity: dict[str, list[str]] = {}
    for r in records:
        if r.retained:
            by_identity.setdefault(r.identity_id, []).append(r.image_id)
    plan = {}
    for ident in sorted(by_identity):
        ids = sorted(by_identity[ident])
        if len(ids) < 2:
            log.warning("identity %r has %d usable image(s); excluded from the split", ident, len(ids))
            continue
        rng = np.random.default_rng(_identity_seed(seed, ident))
        order = [ids[i] for i in rng.permutation(len(ids))]
        n_test = n_test_images(len(ids))
        plan[ident] = (tuple(sorted(order[n_test:])), tuple(sorted(order[:n_test])))
    return SplitPlan(seed, plan)


def apply_split(records: Sequence[ImageRecord], plan: SplitPlan) -> list[ImageRecord]:
    train, test = plan.train_ids(), plan.test_ids()
    out = []
    for r in records:
        if not r.retained:
            out.append(r)
        elif r.image_id in train:
            out.append(replace(r, split=Split.TRAIN))
        elif r.image_id in test:
            out.append(replace(r, split=Split.TEST))
        else:
            out.append(r.excluded(ExclusionReason.TOO_FEW_IMAGES))
    return out


def records_to_jsonl_rows(records: Iterable[ImageRecord]) -> list[dict]:
    return [
        {
            "image_id": r.image_id,
            "identity_id": r.identity_id,
            "md5": r.checksum,
            "face_box": r.face_box.to_dict() if r.face_box else None,
            "split": r.split.value if r.split else None,
            "exclusion_reason": r.exclusion_reason.value if r.exclusion_reason else None,
        }
        for r in records
    ]
