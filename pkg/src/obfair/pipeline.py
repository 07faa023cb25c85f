"""End-to-end experiment: filter, split, calibrate, embed, attack, report.

Artifacts written to the output directory (each carries seed and config
digest in a header line or ``meta`` field):

    run.json                         config, digest, artifact index
    identities.json                  identity attributes
    records.jsonl                    every manifest row with split / exclusion
    split.json                       per-identity train/test image ids
    calibration_<method>.jsonl       per-image obfuscation level
    encodings_train.jsonl            clean encodings
    encodings_<method>.jsonl         obfuscated test encodings
    level_stats_<method>.json        per-group level summaries
    models/<classifier>.json         trained model
    predictions_<method>_<clf>.jsonl truth / prediction per test image
    report_<method>_<clf>.csv|.json  group table with Bias row
    plot_data/...                    histogram, box-plot and bias CSVs
    run.log                          timestamped log (not deterministic)
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import fairmetrics as fm
from .calib import ObfuscationLevel, calibrate, level_statistics, obfuscate, summarize
from .classify import ClassifierSpec, TrainingSet, dumps_model, grid_search, predict, train
from .config import RunConfig, stable_digest
from .dataset import (
    GENDER_ORDER,
    INTERSECTION_ORDER,
    RACE_ORDER,
    Identity,
    ImageRecord,
    Split,
    apply_split,
    filter_single_face,
    ingest_manifest,
    make_split,
    records_to_jsonl_rows,
)
from .detect import OracleDetector, PluginDetector
from .embed import Encoding, PluginEmbedder, SyntheticEmbedder, SyntheticEmbedderConfig
from .errors import StageError
from .imgops import ObfuscationMethod, load_image
from .plugin import PluginClient
from .workers import map_owned

log = logging.getLogger(__name__)

FAILED_MARKER = "FAILED"
GROUPINGS = {"race": RACE_ORDER, "gender": GENDER_ORDER, "intersection": INTERSECTION_ORDER}
HIST_BINS = 20


# --- small persistence helpers -----------------------------------------------


def _meta(cfg: RunConfig, **extra) -> dict:
    return {"seed": cfg.seed, "config_digest": cfg.digest(), **extra}


def write_jsonl(path: Path, meta: dict, rows: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"meta": meta}, sort_keys=True) + "\n")
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def read_jsonl(path: Path) -> tuple[dict, list[dict]]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ValueError(f"{path} is empty")
    meta = json.loads(lines[0]).get("meta", {})
    return meta, [json.loads(ln) for ln in lines[1:] if ln.strip()]


def write_json(path: Path, doc: dict) -> None:
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _header(meta: dict) -> str:
    return " ".join(f"{k}={meta[k]}" for k in sorted(meta))


def _slug(label: str) -> str:
    return label.lower().replace("-", "_").replace(" ", "_")


# --- backends ----------------------------------------------------------------


def detector_factory(cfg: RunConfig):
    d = cfg.detector
    if d.backend == "oracle":
        return lambda: OracleDetector(d.threshold)
    return lambda: PluginDetector(PluginClient(d.command, d.timeout).start())


def embedder_factory(cfg: RunConfig):
    e = cfg.embedder
    if e.backend == "synthetic":
        seed = cfg.seed if e.seed is None else e.seed
        scfg = SyntheticEmbedderConfig(seed, e.identity_scale, e.noise_scale, dict(e.obfuscation_noise))
        return lambda: SyntheticEmbedder(scfg)
    return lambda: PluginEmbedder(PluginClient(e.command, e.timeout).start())


# --- reports -----------------------------------------------------------------


def identity_groupings(identities: Iterable[Identity]) -> dict[str, fm.Grouping]:
    idents = list(identities)
    return {
        "race": fm.Grouping("race", {i.identity_id: i.race_label for i in idents}),
        "gender": fm.Grouping("gender", {i.identity_id: i.gender_label for i in idents}),
        "intersection": fm.Grouping("intersection", {i.identity_id: i.intersection_label for i in idents}),
    }


def build_report(truth: Sequence[str], pred: Sequence[str], identities: Iterable[Identity]):
    """Group table rows (Overall, race, gender, intersections, Bias) for one prediction run."""
    conf = fm.build_confusion(truth, pred)
    groupings = identity_groupings(identities)
    sections = [
        fm.group_metrics(conf, groupings["race"], RACE_ORDER, include_overall=True),
        fm.group_metrics(conf, groupings["gender"], GENDER_ORDER, include_overall=False),
    ]
    inter = fm.group_metrics(conf, groupings["intersection"], INTERSECTION_ORDER, include_overall=False)
    sections.append(inter)
    gaps = fm.bias(inter) if len(inter.groups()) >= 2 else None
    if gaps is None:
        log.warning("fewer than two intersectional groups evaluated; no Bias row")
    return fm.table_rows(sections, gaps), gaps


# --- plot data ---------------------------------------------------------------


def emit_plot_data(
    out_dir: Path,
    tag: str,
    levels: Sequence[ObfuscationLevel],
    groupings: Mapping[str, Mapping[str, str]],
    bias_reports: Mapping[str, fm.BiasReport] | None = None,
    header: str | None = None,
) -> list[Path]:
    """Write histogram, five-number-summary and bias-summary CSVs.

    ``groupings`` maps a grouping name to an image_id -> group label
    mapping. One histogram file per (grouping, group); bin edges are shared
    inside a grouping so the histograms overlay.
    """
    if not levels:
        raise ValueError(f"no calibration records for {tag}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    def open_csv():
        buf = io.StringIO()
        if header:
            buf.write(f"# {header}\n")
        return buf, csv.writer(buf, lineterminator="\n")

    def flush(name: str, buf: io.StringIO):
        path = out_dir / name
        path.write_text(buf.getvalue(), encoding="utf-8")
        written.append(path)

    top = max(lvl.normalized for lvl in levels)
    edges = np.linspace(0.0, top, HIST_BINS + 1)
    for gname, assignment in groupings.items():
        by_group: dict[str, list[float]] = {}
        for lvl in levels:
            by_group.setdefault(assignment[lvl.image_id], []).append(lvl.normalized)
        box_buf, box = open_csv()
        box.writerow(["group", "n", "min", "q1", "median", "q3", "max"])
        for label in sorted(by_group):
            counts, _ = np.histogram(by_group[label], bins=edges)
            buf, w = open_csv()
            w.writerow(["bin_lo", "bin_hi", "count"])
            for lo, hi, c in zip(edges[:-1], edges[1:], counts):
                w.writerow([f"{lo:.6f}", f"{hi:.6f}", int(c)])
            flush(f"levels_hist_{tag}_{gname}_{_slug(label)}.csv", buf)
            s = summarize(by_group[label])
            box.writerow([label, s["n"]] + [f"{s[k]:.6f}" for k in ("min", "q1", "median", "q3", "max")])
        flush(f"levels_box_{tag}_{gname}.csv", box_buf)
    if bias_reports:
        buf, w = open_csv()
        w.writerow(["classifier"] + [fm.METRIC_HEADERS[m] for m in fm.METRICS])
        for name in sorted(bias_reports):
            gaps = bias_reports[name].gaps
            w.writerow([name] + [f"{gaps[m]:.6f}" if m in gaps else "" for m in fm.METRICS])
        flush(f"bias_summary_{tag}.csv", buf)
    return written


# --- the run -----------------------------------------------------------------


@dataclass
class RunArtifacts:
    output_dir: Path
    config_digest: str
    seed: int
    split_path: Path
    calibration: dict[str, list[ObfuscationLevel]] = field(default_factory=dict)
    reports: dict[tuple[str, str], list[tuple[str, dict]]] = field(default_factory=dict)
    bias: dict[tuple[str, str], fm.BiasReport] = field(default_factory=dict)
    level_stats: dict[str, dict] = field(default_factory=dict)
    files: list[Path] = field(default_factory=list)

    def report_path(self, method: str, classifier: str) -> Path:
        return self.output_dir / f"report_{method}_{classifier}.csv"


def _stage(name: str):
    def wrap(fn):
        def inner(*args, **kwargs):
            log.info("stage %s: start", name)
            try:
                out = fn(*args, **kwargs)
            except StageError:
                raise
            except Exception as exc:
                raise StageError(name, f"{type(exc).__name__}: {exc}") from exc
            log.info("stage %s: done", name)
            return out

        return inner

    return wrap


class _Run:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.out = Path(cfg.output_dir)
        self.meta = _meta(cfg)
        self.header = _header(self.meta)
        self.images: dict = {}

    def path(self, name: str) -> Path:
        return self.out / name

    def load(self, rec: ImageRecord):
        if rec.image_id not in self.images:
            self.images[rec.image_id] = load_image(rec.file_path)
        return self.images[rec.image_id]

    @_stage("ingest")
    def ingest(self):
        identities, records = ingest_manifest(self.cfg.manifest)
        write_json(self.path("identities.json"), {
            "meta": self.meta,
            "identities": [{"identity_id": i.identity_id, "gender": i.gender.value, "race": i.race.value} for i in identities],
        })
        return identities, records

    @_stage("detect")
    def detect(self, records):
        factory = detector_factory(self.cfg)
        if self.cfg.workers > 1:
            return filter_single_face(records, None, self.cfg.workers, factory, loader=load_image)
        det = factory()
        try:
            return filter_single_face(records, det, loader=load_image)
        finally:
            det.close()

    @_stage("split")
    def split(self, records):
        plan = make_split(records, self.cfg.seed)
        records = apply_split(records, plan)
        doc = json.loads(plan.to_json())
        doc["config_digest"] = self.meta["config_digest"]
        write_json(self.path("split.json"), doc)
        write_jsonl(self.path("records.jsonl"), self.meta, records_to_jsonl_rows(records))
        return plan, records

    @_stage("calibrate")
    def calibrate(self, method: ObfuscationMethod, test: list[ImageRecord]) -> list[ObfuscationLevel]:
        path = self.path(f"calibration_{method.value}.jsonl")
        key = stable_digest({"manifest": str(self.cfg.manifest), "seed": self.cfg.seed,
                             "detector": self.cfg.detector.to_dict(), "method": method.value})
        cached = _resume(path, key, {r.image_id for r in test})
        if cached is not None:
            log.info("reusing %s", path.name)
            levels = [ObfuscationLevel.from_dict(row) for row in cached]
        else:
            levels = map_owned(
                lambda r, det: calibrate(self.load(r), r.face_box, method, det, r.image_id),
                test, detector_factory(self.cfg), self.cfg.workers,
            )
            write_jsonl(path, {**self.meta, "stage_key": key}, [lvl.to_dict() for lvl in levels])
        return levels

    @_stage("embed")
    def embed(self, tag: str, items: list[tuple[ImageRecord, object]], identities: dict[str, Identity],
              obfuscated: bool, key_extra: dict) -> list[Encoding]:
        path = self.path(f"encodings_{tag}.jsonl")
        key = stable_digest({"manifest": str(self.cfg.manifest), "seed": self.cfg.seed,
                             "embedder": self.cfg.embedder.to_dict(), **key_extra})
        cached = _resume(path, key, {r.image_id for r, _ in items})
        if cached is not None:
            log.info("reusing %s", path.name)
            return [Encoding(row["image_id"], np.asarray(row["vector"])) for row in cached]

        def one(item, emb):
            rec, img_fn = item
            ident = identities[rec.identity_id]
            img = img_fn() if emb.needs_pixels else None
            return emb.embed(img, rec.face_box, image_id=rec.image_id, identity_id=rec.identity_id,
                             groups=ident.group_labels(), obfuscated=obfuscated)

        encs = map_owned(one, items, embedder_factory(self.cfg), self.cfg.workers)
        write_jsonl(path, {**self.meta, "stage_key": key}, [
            {"image_id": e.image_id, "obfuscated": obfuscated, "vector": e.vector.tolist()} for e in encs
        ])
        return encs

    @_stage("train")
    def train(self, clf, data: TrainingSet):
        if clf.grid:
            spec = grid_search(clf.kind, clf.grid, data, folds=self.cfg.cv_folds, seed=self.cfg.seed, base=clf.params)
            log.info("grid search %s picked %s", clf.name, spec.hyperparameters)
        else:
            spec = ClassifierSpec(clf.kind, clf.params)
        model = train(spec, data)
        (self.out / "models").mkdir(exist_ok=True)
        doc = json.loads(dumps_model(model))
        doc["meta"] = self.meta
        write_json(self.out / "models" / f"{clf.name}.json", doc)
        return model


def _resume(path: Path, key: str, expected_ids: set[str]) -> list[dict] | None:
    if not path.exists():
        return None
    try:
        meta, rows = read_jsonl(path)
    except (ValueError, json.JSONDecodeError):
        return None
    if meta.get("stage_key") != key or {r["image_id"] for r in rows} != expected_ids:
        return None
    return rows


def _attach_run_log(out: Path) -> logging.Handler:
    handler = logging.FileHandler(out / "run.log", mode="a", encoding="utf-8")
    handler.setLevel(logging.INFO)
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    pkg = logging.getLogger("obfair")
    pkg.addHandler(handler)
    if pkg.getEffectiveLevel() > logging.INFO:
        pkg.setLevel(logging.INFO)
    return handler


def run(cfg: RunConfig, fresh: bool = False) -> RunArtifacts:
    """Execute the whole experiment for every (method, classifier) pair.

    On failure a FAILED marker is written next to the partial artifacts and
    the StageError propagates.
    """
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    marker = out / FAILED_MARKER
    if marker.exists():
        marker.unlink()
    if fresh:
        for stale in out.glob("*.jsonl"):
            stale.unlink()
    handler = _attach_run_log(out)
    try:
        return _run(cfg)
    except Exception as exc:
        marker.write_text(f"{exc}\n", encoding="utf-8")
        log.error("run failed: %s", exc)
        raise
    finally:
        logging.getLogger("obfair").removeHandler(handler)
        handler.close()


def _run(cfg: RunConfig) -> RunArtifacts:
    r = _Run(cfg)
    log.info("run seed=%s digest=%s", cfg.seed, r.meta["config_digest"])
    identities, records = r.ingest()
    records = r.detect(records)
    plan, records = r.split(records)
    ident_by_id = {i.identity_id: i for i in identities}
    train_recs = sorted((x for x in records if x.split is Split.TRAIN), key=lambda x: x.image_id)
    test_recs = sorted((x for x in records if x.split is Split.TEST), key=lambda x: x.image_id)
    if not train_recs or not test_recs:
        raise StageError("split", "no usable train/test images after filtering")
    art = RunArtifacts(r.out, r.meta["config_digest"], cfg.seed, r.path("split.json"))

    train_items = [(x, (lambda x=x: r.load(x))) for x in train_recs]
    train_encs = r.embed("train", train_items, ident_by_id, False, {"set": "train"})
    data = TrainingSet(np.stack([e.vector for e in train_encs]), tuple(x.identity_id for x in train_recs))
    train_ids = {x.image_id for x in train_recs}

    models = {clf.name: r.train(clf, data) for clf in cfg.classifiers}
    groupings = identity_groupings(identities)
    image_groups = {
        g: {x.image_id: grouping.assignment[x.identity_id] for x in test_recs}
        for g, grouping in groupings.items()
    }

    for method in cfg.methods:
        levels = r.calibrate(method, test_recs)
        art.calibration[method.value] = levels
        by_id = {lvl.image_id: lvl for lvl in levels}
        stats = {g: level_statistics(levels, image_groups[g], GROUPINGS[g]) for g in GROUPINGS}
        art.level_stats[method.value] = stats
        write_json(r.path(f"level_stats_{method.value}.json"), {"meta": r.meta, "groups": stats})

        def obfuscated_image(x, method=method):
            return obfuscate(r.load(x), x.face_box, method, by_id[x.image_id].strength)

        test_items = [(x, (lambda x=x: obfuscated_image(x))) for x in test_recs]
        test_encs = r.embed(method.value, test_items, ident_by_id, True, {"set": "test", "method": method.value,
                                                                          "detector": cfg.detector.to_dict()})
        Q = np.stack([e.vector for e in test_encs])
        truth = [x.identity_id for x in test_recs]
        method_bias = {}
        for name, model in models.items():
            evaluated = {e.image_id for e in test_encs}
            if evaluated & train_ids:
                raise StageError("evaluate", f"train/test leakage: {sorted(evaluated & train_ids)[:5]}")
            pred = predict(model, Q)
            write_jsonl(r.path(f"predictions_{method.value}_{name}.jsonl"), r.meta, [
                {"image_id": x.image_id, "truth": t, "pred": p} for x, t, p in zip(test_recs, truth, pred)
            ])
            rows, gaps = build_report(truth, pred, identities)
            _write_report(r.out, method.value, name, rows, r.meta)
            art.reports[(method.value, name)] = rows
            if gaps is not None:
                art.bias[(method.value, name)] = gaps
                method_bias[name] = gaps
        emit_plot_data(r.path("plot_data"), method.value, levels, image_groups, method_bias, r.header)
        r.images = {k: v for k, v in r.images.items() if k in train_ids}

    art.files = sorted(p for p in r.out.rglob("*") if p.is_file() and p.name != "run.log")
    write_json(r.path("run.json"), {
        "meta": r.meta,
        "config": cfg.to_dict(),
        "methods": [m.value for m in cfg.methods],
        "classifiers": [c.name for c in cfg.classifiers],
        "counts": {
            "records": len(records),
            "train": len(train_recs),
            "test": len(test_recs),
            "excluded": sum(1 for x in records if x.split is Split.EXCLUDED),
        },
    })
    return art


def _write_report(out: Path, method: str, name: str, rows, meta: dict) -> None:
    (out / f"report_{method}_{name}.csv").write_text(fm.to_csv(rows, _header(meta)), encoding="utf-8")
    (out / f"report_{method}_{name}.json").write_text(fm.to_json(rows, meta) + "\n", encoding="utf-8")


# --- re-reporting from persisted artifacts -----------------------------------


def _load_identities(art_dir: Path) -> list[Identity]:
    from .dataset import Gender, Race

    doc = json.loads((art_dir / "identities.json").read_text(encoding="utf-8"))
    return [Identity(d["identity_id"], Gender(d["gender"]), Race(d["race"])) for d in doc["identities"]]


def _load_run(art_dir: Path) -> dict:
    path = Path(art_dir) / "run.json"
    if not path.exists():
        raise FileNotFoundError(f"{path} not found; is {art_dir} a completed run directory?")
    return json.loads(path.read_text(encoding="utf-8"))


def rebuild_reports(art_dir: str | Path) -> dict[tuple[str, str], list[tuple[str, dict]]]:
    """Recompute every report table from the persisted predictions."""
    art_dir = Path(art_dir)
    run_doc = _load_run(art_dir)
    identities = _load_identities(art_dir)
    out = {}
    for method in run_doc["methods"]:
        for name in run_doc["classifiers"]:
            meta, rows = read_jsonl(art_dir / f"predictions_{method}_{name}.jsonl")
            table, _ = build_report([x["truth"] for x in rows], [x["pred"] for x in rows], identities)
            _write_report(art_dir, method, name, table, meta)
            out[(method, name)] = table
    return out


def rebuild_plot_data(art_dir: str | Path) -> list[Path]:
    art_dir = Path(art_dir)
    run_doc = _load_run(art_dir)
    identities = {i.identity_id: i for i in _load_identities(art_dir)}
    _, rec_rows = read_jsonl(art_dir / "records.jsonl")
    owner = {row["image_id"]: row["identity_id"] for row in rec_rows}
    groupings = identity_groupings(identities.values())
    written = []
    for method in run_doc["methods"]:
        meta, rows = read_jsonl(art_dir / f"calibration_{method}.jsonl")
        levels = [ObfuscationLevel.from_dict(row) for row in rows]
        image_groups = {g: {lvl.image_id: gp.assignment[owner[lvl.image_id]] for lvl in levels}
                        for g, gp in groupings.items()}
        bias_reports = {}
        for name in run_doc["classifiers"]:
            table = fm.read_csv_table((art_dir / f"report_{method}_{name}.csv").read_text(encoding="utf-8"))
            if fm.BIAS in table:
                bias_reports[name] = fm.BiasReport({k: v for k, v in table[fm.BIAS].items() if v is not None})
        meta = {k: meta[k] for k in ("seed", "config_digest") if k in meta}
        written += emit_plot_data(art_dir / "plot_data", method, levels, image_groups, bias_reports, _header(meta))
    return written
