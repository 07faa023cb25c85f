"""Confusion counts, per-group recognition metrics, PDR and the max-gap bias.

From the subject's point of view a *high* value is bad here: every metric
measures how often the attacker names someone.

Averaging inside a group:

* balanced accuracy: unweighted mean of per-class recall (zero-support classes skipped)
* recall, precision, F1: per-class values weighted by support (TP + FN)
* PDR: sum of TP + FP over the group's classes, divided by *all* predictions

FP counts come from the full prediction run, so a wrong guess naming a
member of group G counts against G whoever the true subject was. That keeps
the PDRs of any partition summing to one.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

log = logging.getLogger(__name__)

METRICS = ("balanced_accuracy", "recall", "precision", "f1", "pdr")
METRIC_HEADERS = {
    "balanced_accuracy": "Balanced Accuracy",
    "recall": "Recall",
    "precision": "Precision",
    "f1": "F1-score",
    "pdr": "PDR",
}
OVERALL = "Overall"
BIAS = "Bias"


@dataclass(frozen=True)
class Confusion:
    tp: Mapping[str, int]
    fp: Mapping[str, int]
    fn: Mapping[str, int]
    n: int

    @property
    def classes(self) -> list[str]:
        return sorted(set(self.tp) | set(self.fp) | set(self.fn))

    def support(self, c: str) -> int:
        return self.tp.get(c, 0) + self.fn.get(c, 0)


def build_confusion(truth: Sequence[str], pred: Sequence[str]) -> Confusion:
    if len(truth) != len(pred):
        raise ValueError(f"truth and pred lengths differ: {len(truth)} != {len(pred)}")
    if not truth:
        raise ValueError("need at least one prediction")
    labels = set(truth) | set(pred)
    tp = dict.fromkeys(labels, 0)
    fp = dict.fromkeys(labels, 0)
    fn = dict.fromkeys(labels, 0)
    for t, p in zip(truth, pred):
        if t == p:
            tp[t] += 1
        else:
            fp[p] += 1
            fn[t] += 1
    return Confusion(tp, fp, fn, len(truth))


def pdr(conf: Confusion, classes: Iterable[str]) -> float:
    """Share of all predictions that named someone in ``classes`` (right or wrong)."""
    named = sum(conf.tp.get(c, 0) + conf.fp.get(c, 0) for c in set(classes))
    return named / conf.n


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def class_metrics(conf: Confusion, c: str) -> dict[str, float]:
    tp, fp, fn = conf.tp.get(c, 0), conf.fp.get(c, 0), conf.fn.get(c, 0)
    recall = _ratio(tp, tp + fn)
    precision = _ratio(tp, tp + fp)
    f1 = _ratio(2 * precision * recall, precision + recall)
    return {"recall": recall, "precision": precision, "f1": f1}


def metric_block(conf: Confusion, classes: Iterable[str], with_pdr: bool = True) -> dict[str, float] | None:
    """Metrics for one set of classes, or None when none of them has support."""
    classes = sorted(set(classes))
    supported = [c for c in classes if conf.support(c) > 0]
    if not supported:
        return None
    undefined = [c for c in supported if conf.tp.get(c, 0) + conf.fp.get(c, 0) == 0]
    if undefined:
        log.warning("precision undefined (never predicted) for %d class(es); counted as 0", len(undefined))
    per = {c: class_metrics(conf, c) for c in supported}
    total = sum(conf.support(c) for c in supported)
    block = {
        "balanced_accuracy": sum(per[c]["recall"] for c in supported) / len(supported),
        "recall": sum(conf.support(c) * per[c]["recall"] for c in supported) / total,
        "precision": sum(conf.support(c) * per[c]["precision"] for c in supported) / total,
        "f1": sum(conf.support(c) * per[c]["f1"] for c in supported) / total,
    }
    if with_pdr:
        block["pdr"] = pdr(conf, classes)
    return block


@dataclass(frozen=True)
class Grouping:
    name: str
    assignment: Mapping[str, str]

    def members(self, label: str) -> list[str]:
        return sorted(c for c, g in self.assignment.items() if g == label)

    def labels(self) -> list[str]:
        return sorted(set(self.assignment.values()))


@dataclass(frozen=True)
class GroupReport:
    """Ordered rows of metric blocks; the Overall row carries no PDR."""

    rows: Mapping[str, Mapping[str, float]]

    def value(self, group: str, metric: str) -> float:
        return self.rows[group][metric]

    def groups(self) -> list[str]:
        return [g for g in self.rows if g != OVERALL]


def group_metrics(
    conf: Confusion,
    grouping: Grouping,
    order: Sequence[str] | None = None,
    include_overall: bool = True,
) -> GroupReport:
    missing = [c for c in conf.classes if c not in grouping.assignment]
    if missing:
        raise ValueError(f"identities missing from grouping {grouping.name!r}: {missing[:5]}")
    rows: dict[str, dict[str, float]] = {}
    if include_overall:
        rows[OVERALL] = metric_block(conf, conf.classes, with_pdr=False)
    for label in order if order is not None else grouping.labels():
        block = metric_block(conf, grouping.members(label))
        if block is None:
            log.warning("group %r has no support in grouping %r; omitted", label, grouping.name)
            continue
        rows[label] = block
    return GroupReport(rows)


@dataclass(frozen=True)
class BiasReport:
    gaps: Mapping[str, float]


def bias(report: GroupReport | Mapping[str, Mapping[str, float]]) -> BiasReport:
    """Largest difference between any two groups, per metric (max - min)."""
    rows = report.rows if isinstance(report, GroupReport) else report
    groups = {g: r for g, r in rows.items() if g != OVERALL}
    if len(groups) < 2:
        raise ValueError(f"bias needs at least 2 groups, got {len(groups)}")
    gaps = {}
    for m in METRICS:
        vals = [r[m] for r in groups.values() if m in r and r[m] is not None]
        if len(vals) >= 2:
            gaps[m] = max(vals) - min(vals)
    return BiasReport(gaps)


# --- table output ------------------------------------------------------------


def table_rows(sections: Sequence[GroupReport], bias_report: BiasReport | None) -> list[tuple[str, dict]]:
    rows: list[tuple[str, dict]] = []
    seen = set()
    for rep in sections:
        for g, r in rep.rows.items():
            if g not in seen:
                rows.append((g, dict(r)))
                seen.add(g)
    if bias_report is not None:
        rows.append((BIAS, dict(bias_report.gaps)))
    return rows


def _fmt(x) -> str:
    return "" if x is None else f"{x:.6f}"


def to_csv(rows: Sequence[tuple[str, dict]], header_comment: str | None = None) -> str:
    buf = io.StringIO()
    if header_comment:
        buf.write(f"# {header_comment}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["group"] + [METRIC_HEADERS[m] for m in METRICS])
    for g, r in rows:
        w.writerow([g] + [_fmt(r.get(m)) for m in METRICS])
    return buf.getvalue()


def read_csv_table(text: str) -> dict[str, dict[str, float | None]]:
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader)
    back = {v: k for k, v in METRIC_HEADERS.items()}
    keys = [back[h] for h in header[1:]]
    out = {}
    for row in reader:
        out[row[0]] = {k: (float(v) if v else None) for k, v in zip(keys, row[1:])}
    return out


def to_json(rows: Sequence[tuple[str, dict]], meta: Mapping | None = None) -> str:
    doc = {"rows": [{"group": g, **{m: r.get(m) for m in METRICS}} for g, r in rows]}
    if meta is not None:
        doc = {"meta": dict(meta), **doc}
    return json.dumps(doc, indent=2, sort_keys=True)
