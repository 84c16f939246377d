"""k-nearest-neighbour profile classification and catalogue size matching."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import Untrained

CLASSES = ("smooth", "horizontal_wavy", "vertical_wavy")

# catalogue plate sizes: (length, width) in metres
MODEL_SIZES = {
    "model_1": (0.80, 0.40),
    "model_2": (0.60, 0.40),
    "model_3": (0.615, 0.48),
    "model_4": (0.755, 0.48),
    "model_5": (0.56, 0.38),
    "model_6": (0.55, 0.365),
}
# typical class profiles (var_horiz, var_vert) in mm^2
CLASS_CENTROIDS = {
    "smooth": (0.7, 0.8),
    "horizontal_wavy": (5.8, 1.4),
    "vertical_wavy": (1.1, 6.3),
}


@dataclass(frozen=True)
class TrainingSample:
    features: tuple
    label: str

    def __post_init__(self):
        feats = tuple(float(f) for f in self.features)
        if not all(math.isfinite(f) and f >= 0 for f in feats):
            raise ValueError(f"features must be finite and non-negative: {self.features!r}")
        if not isinstance(self.label, str) or not self.label:
            raise ValueError(f"label must be a non-empty string: {self.label!r}")
        object.__setattr__(self, "features", feats)


@dataclass(frozen=True, eq=False)
class KnnClassifier:
    """Majority vote of the ``k`` nearest samples in z-scored feature space.

    The z-score statistics are taken over distinct feature vectors, so an
    exact duplicate sample does not rescale the metric.  Immutable: :func:`add_sample` returns a new classifier.
    """

    samples: tuple = ()
    k: int = 3
    mean: np.ndarray = field(init=False, repr=False)
    std: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.k < 1 or self.k % 2 == 0:
            raise ValueError("k must be an odd positive integer")
        samples = tuple(self.samples)
        object.__setattr__(self, "samples", samples)
        if samples:
            X = np.unique(np.array([s.features for s in samples], dtype=float), axis=0)
            mean = X.mean(axis=0)
            std = X.std(axis=0)
            std[std == 0] = 1.0
        else:
            mean = std = None
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    @property
    def trained(self):
        return len(self.samples) >= self.k

    def standardize(self, features):
        return (np.asarray(features, dtype=float) - self.mean) / self.std

    def neighbours(self, features):
        """The ``k`` nearest samples as ``(distance, sample)`` pairs.

        Equal distances are ordered by label and then feature values, so the
        result never depends on the order samples were added in.
        """
        if not self.trained:
            raise Untrained(f"classifier has {len(self.samples)} samples, needs >= {self.k}")
        X = self.standardize([s.features for s in self.samples])
        q = self.standardize(features)
        dist = np.sqrt(((X - q) ** 2).sum(axis=1))
        order = sorted(range(len(self.samples)),
                       key=lambda i: (dist[i], self.samples[i].label, self.samples[i].features))
        return [(float(dist[i]), self.samples[i]) for i in order[: self.k]]


def classify(clf: KnnClassifier, features):
    """Return ``(label, confidence)`` where confidence is the vote fraction.

    Vote ties go to the class with the smaller summed neighbour distance,
    then to the lexicographically smaller label.
    """
    if hasattr(features, "profile"):
        features = features.profile
    near = clf.neighbours(features)
    votes = Counter(s.label for _, s in near)
    dist_sum = Counter()
    for d, s in near:
        dist_sum[s.label] += d
    label = min(votes, key=lambda c: (-votes[c], dist_sum[c], c))
    return label, votes[label] / len(near)


def add_sample(clf: KnnClassifier, sample: TrainingSample) -> KnnClassifier:
    return KnnClassifier(clf.samples + (sample,), clf.k)


def leave_one_out(samples, k=3):
    """Leave-one-out accuracy; ``None`` if no fold has enough samples."""
    samples = list(samples)
    hits = total = 0
    for idx, s in enumerate(samples):
        rest = KnnClassifier(tuple(samples[:idx] + samples[idx + 1:]), k)
        if not rest.trained:
            continue
        label, _ = classify(rest, s.features)
        hits += label == s.label
        total += 1
    return hits / total if total else None


# -- training-set file ---------------------------------------------------------

def parse_sample(record, where="record"):
    if not isinstance(record, dict):
        raise ValueError(f"{where}: expected an object")
    feats = record.get("features")
    if not isinstance(feats, (list, tuple)) or len(feats) != 2:
        raise ValueError(f"{where}: 'features' must be [var_horiz, var_vert]")
    label = record.get("label")
    if not isinstance(label, str) or not label.strip():
        raise ValueError(f"{where}: 'label' must be a non-empty string")
    try:
        return TrainingSample(tuple(feats), label)
    except (TypeError, ValueError) as exc:
        raise ValueError(f"{where}: {exc}") from None


def load_training_set(path, k=None) -> KnnClassifier:
    """Read a training file: a bare list of samples, or an object with
    ``samples`` (and optionally ``k``)."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    records = data.get("samples") if isinstance(data, dict) else data
    if not isinstance(records, list):
        raise ValueError(f"{path}: expected a list of samples")
    samples = tuple(parse_sample(r, f"{path}[{n}]") for n, r in enumerate(records))
    if k is None:
        k = data.get("k", 3) if isinstance(data, dict) else 3
    return KnnClassifier(samples, int(k))


def training_set_to_dict(clf: KnnClassifier, loo_accuracy=None):
    out = {
        "schema": 1,
        "k": clf.k,
        "samples": [{"features": list(s.features), "label": s.label} for s in clf.samples],
    }
    if clf.samples:
        out["standardization"] = {"mean": clf.mean.tolist(), "std": clf.std.tolist()}
    if loo_accuracy is not None:
        out["loo_accuracy"] = loo_accuracy
    return out


# -- model catalogue -----------------------------------------------------------

@dataclass(frozen=True)
class CatalogEntry:
    model_id: str
    cls: str
    length: float
    width: float


@dataclass(frozen=True)
class ModelMatch:
    """Outcome of a size lookup; ``model_id`` is ``None`` for NoMatch."""

    model_id: str | None
    nearest: str | None
    rel_error: float

    @property
    def matched(self):
        return self.model_id is not None


@dataclass(frozen=True)
class ModelCatalog:
    entries: tuple
    match_tolerance: float = 0.05

    def __post_init__(self):
        ids = [e.model_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("catalogue model ids must be unique")
        for e in self.entries:
            if not (e.length > 0 and e.width > 0):
                raise ValueError(f"{e.model_id}: dimensions must be positive")

    def get(self, model_id):
        for e in self.entries:
            if e.model_id == model_id:
                return e
        raise KeyError(model_id)

    def of_class(self, cls):
        return [e for e in self.entries if e.cls == cls]


def default_catalog(match_tolerance=0.05) -> ModelCatalog:
    """The catalogue sizes for every profile class.

    The horizontal-wavy entries keep the plain ids ``model_1..model_6``;
    the other classes get ``<class>_<n>`` ids with the same sizes.
    """
    entries = []
    for cls in CLASSES:
        for mid, (length, width) in MODEL_SIZES.items():
            n = mid.split("_")[1]
            entry_id = mid if cls == "horizontal_wavy" else f"{cls}_{n}"
            entries.append(CatalogEntry(entry_id, cls, length, width))
    return ModelCatalog(tuple(entries), match_tolerance)


def size_error(entry: CatalogEntry, dims):
    length, width = dims
    return max(abs(length - entry.length) / entry.length, abs(width - entry.width) / entry.width)


def match_model(catalog: ModelCatalog, cls, dims) -> ModelMatch:
    """Closest catalogue entry of ``cls`` under max relative size error."""
    length, width = dims
    if not (length > 0 and width > 0):
        raise ValueError("dimensions must be positive")
    candidates = catalog.of_class(cls)
    if not candidates:
        return ModelMatch(None, None, math.inf)
    best = min(candidates, key=lambda e: (size_error(e, dims), e.model_id))
    err = size_error(best, dims)
    if err <= catalog.match_tolerance:
        return ModelMatch(best.model_id, best.model_id, err)
    return ModelMatch(None, best.model_id, err)


def catalog_to_dict(catalog: ModelCatalog):
    return {
        "schema": 1,
        "match_tolerance": catalog.match_tolerance,
        "models": [{"id": e.model_id, "class": e.cls, "length_m": e.length, "width_m": e.width}
                   for e in catalog.entries],
    }


def load_catalog(path) -> ModelCatalog:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    try:
        entries = tuple(CatalogEntry(m["id"], m["class"], float(m["length_m"]), float(m["width_m"]))
                        for m in data["models"])
    except (KeyError, TypeError) as exc:
        raise ValueError(f"{path}: malformed catalogue ({exc})") from None
    return ModelCatalog(entries, float(data.get("match_tolerance", 0.05)))
