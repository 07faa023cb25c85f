import hashlib
import random

import numpy as np
import pytest

from obfair.dataset import (
    ExclusionReason,
    Gender,
    Race,
    Split,
    SplitPlan,
    apply_split,
    canonical_group_label,
    filter_single_face,
    ingest_manifest,
    make_split,
    n_test_images,
)
from obfair.errors import ManifestError
from obfair.imgops import FaceBox, ImageBuffer, save_png

HEADER = "image_id,file_path,md5,identity_id,gender,race\n"


def md5(tag: str) -> str:
    return hashlib.md5(tag.encode()).hexdigest()


def write_manifest(tmp_path, rows, name="manifest.csv"):
    path = tmp_path / name
    path.write_text(HEADER + "".join(",".join(r) + "\n" for r in rows), encoding="utf-8")
    return path


def row(i, ident="p1", gender="male", race="white", checksum=None):
    return [f"img{i}", f"images/img{i}.png", checksum or md5(str(i)), ident, gender, race]


class TestIngest:
    def test_distinct_rows(self, tmp_path):
        idents, recs = ingest_manifest(write_manifest(tmp_path, [row(1), row(2, "p2", "female", "non_white"), row(3)]))
        assert [r.retained for r in recs] == [True] * 3
        assert [(i.identity_id, i.gender, i.race) for i in idents] == [
            ("p1", Gender.MALE, Race.WHITE), ("p2", Gender.FEMALE, Race.NON_WHITE)]
        assert recs[0].file_path == tmp_path / "images" / "img1.png"

    def test_duplicate_checksum(self, tmp_path):
        dup = "ab" + "0" * 28 + "ff"
        _, recs = ingest_manifest(write_manifest(tmp_path, [row(1, checksum=dup), row(2), row(3, checksum=dup.upper())]))
        assert [r.retained for r in recs] == [True, True, False]
        assert recs[2].split is Split.EXCLUDED and recs[2].exclusion_reason is ExclusionReason.DUPLICATE_CHECKSUM

    def test_unknown_gender_names_line(self, tmp_path):
        path = write_manifest(tmp_path, [row(1), row(2, gender="other")])
        with pytest.raises(ManifestError, match="line 3"):
            ingest_manifest(path)

    @pytest.mark.parametrize(
        "bad",
        [
            ["img9", "x.png", "nothex", "p1", "male", "white"],
            ["img9", "x.png", md5("9"), "p1", "male"],
            ["img9", "x.png", md5("9"), "p1", "female", "white"],  # conflicts with p1's row
            ["img1", "x.png", md5("9"), "p1", "male", "white"],  # repeated image_id
            ["img9", "x.png", md5("9"), "p1", "male", "asian"],
        ],
    )
    def test_malformed_rows(self, tmp_path, bad):
        with pytest.raises(ManifestError, match="line 3"):
            ingest_manifest(write_manifest(tmp_path, [row(1), bad]))

    def test_bad_header(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("id,path\n", encoding="utf-8")
        with pytest.raises(ManifestError, match="line 1"):
            ingest_manifest(path)


class TestLabels:
    @pytest.mark.parametrize("raw,want", [("non_white_female", "Non-White Female"), ("white", "White"), ("Male", "Male")])
    def test_canonical(self, raw, want):
        assert canonical_group_label(raw) == want

    def test_unknown_label(self):
        with pytest.raises(ValueError):
            canonical_group_label("purple")


class BoxCountDetector:
    def __init__(self, counts):
        self.counts = counts

    def detect(self, img: ImageBuffer):
        n = self.counts[img.width]
        return [FaceBox(0, 0, 2, 2)] * n


class TestFilter:
    def records(self, tmp_path, n=3):
        _, recs = ingest_manifest(write_manifest(tmp_path, [row(i) for i in range(n)]))
        return recs

    @staticmethod
    def loader_by_index(path):
        i = int(path.stem.removeprefix("img"))
        return ImageBuffer.from_array(np.zeros((4, 4 + i), np.uint8))

    @pytest.mark.parametrize("workers", [1, 3])
    def test_outcomes(self, tmp_path, workers):
        det = BoxCountDetector({4: 1, 5: 2, 6: 0})
        out = filter_single_face(self.records(tmp_path), det, workers=workers,
                                 detector_factory=lambda: det, loader=self.loader_by_index)
        assert out[0].retained and out[0].face_box == FaceBox(0, 0, 2, 2)
        assert out[1].exclusion_reason is ExclusionReason.MULTIPLE_FACES
        assert out[2].exclusion_reason is ExclusionReason.ZERO_FACES and out[2].face_box is None

    def test_unreadable_image(self, tmp_path, caplog):
        (tmp_path / "images").mkdir()
        (tmp_path / "images" / "img0.png").write_bytes(b"not an image")
        recs = self.records(tmp_path, 1)
        out = filter_single_face(recs, BoxCountDetector({}))
        assert out[0].exclusion_reason is ExclusionReason.ZERO_FACES
        assert "img0" in caplog.text

    def test_real_file(self, tmp_path):
        (tmp_path / "images").mkdir()
        save_png(ImageBuffer.from_array(np.zeros((4, 4), np.uint8)), tmp_path / "images" / "img0.png")
        out = filter_single_face(self.records(tmp_path, 1), BoxCountDetector({4: 1}))
        assert out[0].retained

    def test_excluded_records_skip_detection(self, tmp_path):
        recs = [r.excluded(ExclusionReason.DUPLICATE_CHECKSUM) for r in self.records(tmp_path, 2)]

        class Boom:
            def detect(self, img):
                raise AssertionError("should not run")

        assert filter_single_face(recs, Boom(), loader=self.loader_by_index) == recs


def cohort_records(tmp_path, sizes: dict[str, int]):
    rows, k = [], 0
    for ident, n in sizes.items():
        for _ in range(n):
            rows.append(row(k, ident))
            k += 1
    return ingest_manifest(write_manifest(tmp_path, rows))[1]


class TestSplit:
    @pytest.mark.parametrize("n,test", [(10, 2), (5, 1), (2, 1), (3, 1), (7, 1), (8, 2), (13, 3)])
    def test_counts(self, n, test):
        assert n_test_images(n) == test

    def test_ten_and_five(self, tmp_path):
        plan = make_split(cohort_records(tmp_path, {"a": 10, "b": 5}), seed=1)
        assert [len(x) for x in plan.per_identity["a"]] == [8, 2]
        assert [len(x) for x in plan.per_identity["b"]] == [4, 1]

    def test_order_independent(self, tmp_path):
        recs = cohort_records(tmp_path, {"a": 10, "b": 7, "c": 3})
        shuffled = list(recs)
        random.Random(4).shuffle(shuffled)
        assert make_split(recs, 99).to_json() == make_split(shuffled, 99).to_json()

    def test_seed_changes_split(self, tmp_path):
        recs = cohort_records(tmp_path, {"a": 20})
        assert make_split(recs, 1).per_identity != make_split(recs, 2).per_identity

    def test_invariants_and_serialization(self, tmp_path):
        sizes = {f"p{i}": n for i, n in enumerate([1, 2, 3, 5, 9, 14, 20])}
        recs = cohort_records(tmp_path, sizes)
        recs[4] = recs[4].excluded(ExclusionReason.ZERO_FACES)
        plan = make_split(recs, 2**64 - 1)
        assert "p0" not in plan.per_identity
        retained = {r.image_id for r in recs if r.retained and r.identity_id != "p0"}
        for ident, (train, test) in plan.per_identity.items():
            assert train and test and not set(train) & set(test)
        assert plan.train_ids() | plan.test_ids() == retained
        assert SplitPlan.from_dict(__import__("json").loads(plan.to_json())) == plan
        assert plan.to_json() == make_split(recs, 2**64 - 1).to_json()

    def test_apply_split(self, tmp_path, caplog):
        recs = cohort_records(tmp_path, {"a": 5, "solo": 1})
        out = apply_split(recs, make_split(recs, 0))
        assert sum(r.split is Split.TEST for r in out) == 1
        assert sum(r.split is Split.TRAIN for r in out) == 4
        assert out[-1].exclusion_reason is ExclusionReason.TOO_FEW_IMAGES
        assert "solo" in caplog.text
