"""Multi-class identity classifiers written against numpy only.

Four families: k-nearest neighbours, Gaussian naive Bayes, one-vs-rest
linear SVC (Pegasos-style sub-gradient descent) and a one-hidden-layer
ReLU MLP. All are deterministic for a fixed seed, and every prediction tie
resolves to the lexicographically smallest identity.
"""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

log = logging.getLogger(__name__)

KINDS = ("knn", "gnb", "svc", "mlp")
FORMAT_VERSION = 1

DEFAULTS: dict[str, dict[str, Any]] = {
    "knn": {"k": 5, "weighting": "uniform"},
    "gnb": {"var_smoothing": 1e-9},
    "svc": {"C": 1.0, "epochs": 20, "seed": 0},
    "mlp": {
        "hidden": 100,
        "step": 1e-3,
        "epochs": 200,
        "batch_size": 200,
        "alpha": 1e-4,
        "solver": "adam",
        "seed": 0,
    },
}

DEFAULT_GRIDS: dict[str, dict[str, list]] = {
    "knn": {"k": [1, 3, 5, 7, 9], "weighting": ["uniform", "distance"]},
    "gnb": {"var_smoothing": [1e-9]},
    "svc": {"C": [1.0]},
    "mlp": {"hidden": [64, 128], "step": [1e-3, 1e-2]},
}


@dataclass(frozen=True)
class ClassifierSpec:
    kind: str
    hyperparameters: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown classifier kind {self.kind!r}; expected one of {KINDS}")
        unknown = set(self.hyperparameters) - set(DEFAULTS[self.kind])
        if unknown:
            raise ValueError(f"unknown {self.kind} hyperparameters: {sorted(unknown)}")
        hp = {**DEFAULTS[self.kind], **self.hyperparameters}
        _validate(self.kind, hp)
        object.__setattr__(self, "hyperparameters", hp)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "hyperparameters": dict(self.hyperparameters)}


def _validate(kind: str, hp: dict) -> None:
    if kind == "knn":
        if int(hp["k"]) < 1:
            raise ValueError("knn k must be >= 1")
        if hp["weighting"] not in ("uniform", "distance"):
            raise ValueError("knn weighting must be 'uniform' or 'distance'")
    elif kind == "gnb":
        if not hp["var_smoothing"] > 0:
            raise ValueError("gnb var_smoothing must be > 0")
    elif kind == "svc":
        if not hp["C"] > 0:
            raise ValueError("svc C must be > 0")
        if int(hp["epochs"]) < 1:
            raise ValueError("svc epochs must be >= 1")
    elif kind == "mlp":
        if int(hp["hidden"]) < 1:
            raise ValueError("mlp hidden width must be >= 1")
        if not hp["step"] > 0:
            raise ValueError("mlp step must be > 0")
        if int(hp["epochs"]) < 1 or int(hp["batch_size"]) < 1:
            raise ValueError("mlp epochs and batch_size must be >= 1")
        if hp["alpha"] < 0:
            raise ValueError("mlp alpha must be >= 0")
        if hp["solver"] not in ("adam", "sgd"):
            raise ValueError("mlp solver must be 'adam' or 'sgd'")


@dataclass(frozen=True)
class TrainingSet:
    X: np.ndarray
    y: tuple[str, ...]

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] != len(self.y):
            raise ValueError(f"X shape {X.shape} does not match {len(self.y)} labels")
        if len(set(self.y)) < 2:
            raise ValueError("training set needs at least 2 distinct identities")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", tuple(self.y))

    @property
    def classes(self) -> list[str]:
        return sorted(set(self.y))

    def subset(self, idx: Sequence[int]) -> "TrainingSet":
        return TrainingSet(self.X[list(idx)], tuple(self.y[i] for i in idx))


@dataclass(frozen=True)
class TrainedModel:
    spec: ClassifierSpec
    classes: tuple[str, ...]
    params: Mapping[str, np.ndarray]

    @property
    def kind(self) -> str:
        return self.spec.kind

    @property
    def dim(self) -> int:
        return int(self.params["dim"][0])


def _label_indices(y: Sequence[str], classes: Sequence[str]) -> np.ndarray:
    pos = {c: i for i, c in enumerate(classes)}
    return np.array([pos[label] for label in y], dtype=np.int64)


# --- k nearest neighbours ----------------------------------------------------


def _pairwise_distances(Q: np.ndarray, X: np.ndarray, chunk: int = 256) -> np.ndarray:
    out = np.empty((Q.shape[0], X.shape[0]))
    for start in range(0, Q.shape[0], chunk):
        diff = Q[start : start + chunk, None, :] - X[None, :, :]
        out[start : start + chunk] = np.sqrt(np.einsum("qnd,qnd->qn", diff, diff))
    return out


def _knn_vote(dists: np.ndarray, labels: np.ndarray, weighting: str) -> int:
    """Winning class index among the given neighbours.

    Ranking: most votes, then smallest summed distance, then smallest index
    (classes are sorted, so smallest index = lexicographically smallest id).
    """
    if weighting == "distance":
        zero = dists == 0
        weights = zero.astype(float) if zero.any() else 1.0 / dists
    else:
        weights = np.ones_like(dists)
    best = None
    for c in np.unique(labels):
        mask = labels == c
        key = (-float(weights[mask].sum()), float(dists[mask].sum()), int(c))
        if best is None or key < best:
            best = key
    return best[2]


def _predict_knn(model: TrainedModel, Q: np.ndarray) -> np.ndarray:
    X, y = model.params["X"], model.params["y"]
    k = min(int(model.spec.hyperparameters["k"]), X.shape[0])
    weighting = model.spec.hyperparameters["weighting"]
    D = _pairwise_distances(Q, X)
    out = np.empty(Q.shape[0], dtype=np.int64)
    for i, row in enumerate(D):
        nn = np.argsort(row, kind="stable")[:k]
        out[i] = _knn_vote(row[nn], y[nn], weighting)
    return out


# --- Gaussian naive Bayes ----------------------------------------------------


def _train_gnb(hp: dict, X: np.ndarray, yi: np.ndarray, n_classes: int) -> dict:
    max_var = float(np.var(X, axis=0).max())
    # keep epsilon strictly positive even when every feature is constant
    eps = hp["var_smoothing"] * max_var if max_var > 0 else hp["var_smoothing"]
    means = np.zeros((n_classes, X.shape[1]))
    variances = np.zeros((n_classes, X.shape[1]))
    priors = np.zeros(n_classes)
    for c in range(n_classes):
        Xc = X[yi == c]
        means[c] = Xc.mean(axis=0)
        variances[c] = Xc.var(axis=0) + eps
        priors[c] = len(Xc) / len(X)
    return {"means": means, "variances": variances, "log_priors": np.log(priors), "epsilon": np.array([eps])}


def _scores_gnb(p: Mapping[str, np.ndarray], Q: np.ndarray) -> np.ndarray:
    means, variances = p["means"], p["variances"]
    log_norm = -0.5 * np.log(2 * np.pi * variances).sum(axis=1)
    sq = ((Q[:, None, :] - means[None]) ** 2 / variances[None]).sum(axis=2)
    return p["log_priors"][None] + log_norm[None] - 0.5 * sq


# --- linear SVC --------------------------------------------------------------


def _augment(X: np.ndarray) -> np.ndarray:
    return np.hstack([X, np.ones((X.shape[0], 1))])


def _train_svc(hp: dict, X: np.ndarray, yi: np.ndarray, n_classes: int) -> dict:
    """One-vs-rest L2-regularized hinge loss, step 1/(lambda t), lambda = 1/(C n).

    The bias rides along as a constant input feature and is regularized
    with the weights.
    """
    Xa = _augment(X)
    n, d = Xa.shape
    lam = 1.0 / (hp["C"] * n)
    Y = -np.ones((n, n_classes))
    Y[np.arange(n), yi] = 1.0
    W = np.zeros((n_classes, d))
    rng = np.random.default_rng(int(hp["seed"]))
    radius = 1.0 / np.sqrt(lam)
    t = 0
    for _ in range(int(hp["epochs"])):
        for i in rng.permutation(n):
            t += 1
            eta = 1.0 / (lam * t)
            x, yrow = Xa[i], Y[i]
            violated = yrow * (W @ x) < 1.0
            W *= 1.0 - eta * lam
            W[violated] += eta * yrow[violated, None] * x[None, :]
            norms = np.linalg.norm(W, axis=1)
            shrink = np.minimum(1.0, radius / np.maximum(norms, 1e-300))
            W *= shrink[:, None]
    return {"W": W}


def _scores_svc(p: Mapping[str, np.ndarray], Q: np.ndarray) -> np.ndarray:
    return _augment(Q) @ p["W"].T


# --- MLP ---------------------------------------------------------------------

MLP_PARAM_NAMES = ("W1", "b1", "W2", "b2")


def mlp_init(dim: int, hidden: int, n_classes: int, seed: int) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    b1 = np.sqrt(6.0 / (dim + hidden))
    b2 = np.sqrt(6.0 / (hidden + n_classes))
    return {
        "W1": rng.uniform(-b1, b1, (dim, hidden)),
        "b1": rng.uniform(-b1, b1, hidden),
        "W2": rng.uniform(-b2, b2, (hidden, n_classes)),
        "b2": rng.uniform(-b2, b2, n_classes),
    }


def mlp_forward(p: Mapping[str, np.ndarray], X: np.ndarray) -> np.ndarray:
    """Class logits."""
    h = np.maximum(X @ p["W1"] + p["b1"], 0.0)
    return h @ p["W2"] + p["b2"]


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def mlp_loss_and_grad(p: Mapping[str, np.ndarray], X: np.ndarray, yi: np.ndarray, alpha: float):
    """Mean cross-entropy plus 0.5 * alpha * ||W||^2, and its gradient."""
    n = X.shape[0]
    pre = X @ p["W1"] + p["b1"]
    h = np.maximum(pre, 0.0)
    probs = _softmax(h @ p["W2"] + p["b2"])
    loss = -np.mean(np.log(probs[np.arange(n), yi] + 1e-300))
    loss += 0.5 * alpha * (np.sum(p["W1"] ** 2) + np.sum(p["W2"] ** 2))
    dz = probs.copy()
    dz[np.arange(n), yi] -= 1.0
    dz /= n
    dh = (dz @ p["W2"].T) * (pre > 0)
    grads = {
        "W2": h.T @ dz + alpha * p["W2"],
        "b2": dz.sum(axis=0),
        "W1": X.T @ dh + alpha * p["W1"],
        "b1": dh.sum(axis=0),
    }
    return float(loss), grads


def _train_mlp(hp: dict, X: np.ndarray, yi: np.ndarray, n_classes: int) -> dict:
    seed = int(hp["seed"])
    p = mlp_init(X.shape[1], int(hp["hidden"]), n_classes, seed)
    rng = np.random.default_rng([seed, 1])
    n = X.shape[0]
    bs = min(int(hp["batch_size"]), n)
    lr, alpha = float(hp["step"]), float(hp["alpha"])
    adam = hp["solver"] == "adam"
    m = {k: np.zeros_like(v) for k, v in p.items()}
    v2 = {k: np.zeros_like(v) for k, v in p.items()}
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    t = 0
    for _ in range(int(hp["epochs"])):
        order = rng.permutation(n)
        for start in range(0, n, bs):
            batch = order[start : start + bs]
            _, grads = mlp_loss_and_grad(p, X[batch], yi[batch], alpha)
            t += 1
            for k in MLP_PARAM_NAMES:
                if adam:
                    m[k] = beta1 * m[k] + (1 - beta1) * grads[k]
                    v2[k] = beta2 * v2[k] + (1 - beta2) * grads[k] ** 2
                    mhat = m[k] / (1 - beta1**t)
                    vhat = v2[k] / (1 - beta2**t)
                    p[k] = p[k] - lr * mhat / (np.sqrt(vhat) + eps)
                else:
                    p[k] = p[k] - lr * grads[k]
    return p


# --- public API --------------------------------------------------------------

_TRAINERS = {"gnb": _train_gnb, "svc": _train_svc, "mlp": _train_mlp}
_SCORERS = {"gnb": _scores_gnb, "svc": _scores_svc, "mlp": mlp_forward}


def train(spec: ClassifierSpec, data: TrainingSet) -> TrainedModel:
    classes = data.classes
    yi = _label_indices(data.y, classes)
    if spec.kind == "knn":
        params = {"X": data.X.copy(), "y": yi}
    else:
        params = _TRAINERS[spec.kind](dict(spec.hyperparameters), data.X, yi, len(classes))
    params["dim"] = np.array([data.X.shape[1]])
    return TrainedModel(spec, tuple(classes), params)


def decision_scores(model: TrainedModel, queries) -> np.ndarray:
    """(n_queries, n_classes) scores for gnb/svc/mlp; higher wins."""
    if model.kind == "knn":
        raise ValueError("knn has no decision scores")
    return _SCORERS[model.kind](model.params, _as_queries(model, queries))


def _as_queries(model: TrainedModel, queries) -> np.ndarray:
    Q = np.asarray(queries, dtype=np.float64)
    if Q.ndim == 1 and Q.size == 0:
        Q = Q.reshape(0, model.dim)
    if Q.ndim != 2 or Q.shape[1] != model.dim:
        raise ValueError(f"queries must have shape (n, {model.dim}), got {Q.shape}")
    return Q


def predict(model: TrainedModel, queries) -> list[str]:
    Q = _as_queries(model, queries)
    if Q.shape[0] == 0:
        return []
    if model.kind == "knn":
        idx = _predict_knn(model, Q)
    else:
        # argmax takes the first maximum, i.e. the smallest identity among exact ties
        idx = np.argmax(_SCORERS[model.kind](model.params, Q), axis=1)
    return [model.classes[i] for i in idx]


def accuracy(model: TrainedModel, data: TrainingSet) -> float:
    pred = predict(model, data.X)
    return float(np.mean([p == t for p, t in zip(pred, data.y)]))


# --- grid search -------------------------------------------------------------


def grid_points(grid: Mapping[str, Sequence]) -> list[dict]:
    keys = list(grid)
    return [dict(zip(keys, values)) for values in itertools.product(*(grid[k] for k in keys))]


def fold_assignment(y: Sequence[str], folds: int, seed: int = 0) -> np.ndarray:
    """Per-identity round-robin fold ids after a seeded shuffle.

    Identities with fewer samples than folds simply appear in fewer
    validation folds.
    """
    out = np.empty(len(y), dtype=np.int64)
    rng = np.random.default_rng(seed)
    by_class: dict[str, list[int]] = {}
    for i, label in enumerate(y):
        by_class.setdefault(label, []).append(i)
    for label in sorted(by_class):
        idx = np.array(by_class[label])[rng.permutation(len(by_class[label]))]
        out[idx] = np.arange(len(idx)) % folds
    return out


def cross_val_accuracy(spec: ClassifierSpec, data: TrainingSet, folds: int = 3, seed: int = 0) -> float:
    assign = fold_assignment(data.y, folds, seed)
    scores = []
    for f in range(folds):
        val = np.flatnonzero(assign == f)
        tr = np.flatnonzero(assign != f)
        if len(val) == 0 or len({data.y[i] for i in tr}) < 2:
            continue
        model = train(spec, data.subset(tr))
        scores.append(accuracy(model, data.subset(val)))
    if not scores:
        raise ValueError("no usable cross-validation fold")
    return float(np.mean(scores))


def grid_search(
    kind: str,
    grid: Mapping[str, Sequence] | None,
    data: TrainingSet,
    folds: int = 3,
    seed: int = 0,
    base: Mapping[str, Any] | None = None,
) -> ClassifierSpec:
    """Grid point with the best mean CV accuracy; ties keep the earlier point."""
    if grid is None:
        grid = DEFAULT_GRIDS[kind]
    points = grid_points(grid)
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise ValueError("empty grid")
    best_spec, best_score = None, -1.0
    for point in points:
        spec = ClassifierSpec(kind, {**(base or {}), **point})
        score = cross_val_accuracy(spec, data, folds, seed)
        log.debug("grid %s %s -> %.4f", kind, point, score)
        if score > best_score:
            best_spec, best_score = spec, score
    return best_spec


# --- serialization -----------------------------------------------------------


def model_to_dict(model: TrainedModel) -> dict:
    params = {}
    for name in sorted(model.params):
        arr = np.asarray(model.params[name])
        params[name] = {"shape": list(arr.shape), "dtype": arr.dtype.kind, "data": arr.ravel().tolist()}
    return {
        "format_version": FORMAT_VERSION,
        "kind": model.kind,
        "hyperparameters": dict(model.spec.hyperparameters),
        "classes": list(model.classes),
        "params": params,
    }


def model_from_dict(doc: dict) -> TrainedModel:
    if doc.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {doc.get('format_version')!r}")
    params = {}
    for name, blob in doc["params"].items():
        dtype = np.int64 if blob["dtype"] in "iu" else np.float64
        params[name] = np.asarray(blob["data"], dtype=dtype).reshape(blob["shape"])
    return TrainedModel(ClassifierSpec(doc["kind"], doc["hyperparameters"]), tuple(doc["classes"]), params)


def dumps_model(model: TrainedModel) -> str:
    return json.dumps(model_to_dict(model), sort_keys=True)
