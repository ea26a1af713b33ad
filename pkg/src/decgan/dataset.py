"""Tabular patient records: CSV I/O, standardization, splitting and a surrogate generator.

A :class:`Dataset` is backed by numpy arrays (features ``(N, 6)``, labels and a
provenance flag per row) and is immutable once built.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

FEATURES = ("FP", "OC", "SPL", "COC", "lOCL", "lOCR")
LABEL = "label"
PROVENANCE = "provenance"
N_FEATURES = len(FEATURES)
OC_INDEX = FEATURES.index("OC")

# features with a smaller std are mean-shifted only
DEGENERATE_STD = 1e-12


class DatasetError(ValueError):
    pass


class SchemaError(DatasetError):
    def __init__(self, column, message=None):
        self.column = column
        super().__init__(message or f"missing or renamed column {column!r}")


class ParseError(DatasetError):
    def __init__(self, row, message):
        self.row = row
        super().__init__(f"row {row}: {message}")


class EmptyDatasetError(DatasetError):
    pass


class Provenance(str, Enum):
    REAL = "real"
    SYNTHETIC = "synthetic"


@dataclass(frozen=True)
class PatientRecord:
    fp: float
    oc: float
    spl: float
    coc: float
    locl: float
    locr: float
    label: int
    provenance: Provenance = Provenance.REAL

    def __post_init__(self):
        if not all(math.isfinite(v) for v in self.features):
            raise DatasetError(f"non-finite feature in {self.features}")
        if self.label not in (0, 1):
            raise DatasetError(f"label must be 0 or 1, got {self.label!r}")

    @property
    def features(self) -> tuple[float, ...]:
        return (self.fp, self.oc, self.spl, self.coc, self.locl, self.locr)


@dataclass(frozen=True)
class StandardizationParams:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64).copy()
        std = np.asarray(self.std, dtype=np.float64).copy()
        if mean.shape != std.shape or mean.ndim != 1:
            raise DatasetError("mean and std must be 1-d arrays of equal length")
        if np.any(std < 0):
            raise DatasetError("standard deviations must be non-negative")
        mean.flags.writeable = False
        std.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    @classmethod
    def identity(cls, width=N_FEATURES):
        return cls(np.zeros(width), np.ones(width))

    def transform(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        scale = np.where(self.std < DEGENERATE_STD, 1.0, self.std)
        return (x - self.mean) / scale

    def inverse(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        scale = np.where(self.std < DEGENERATE_STD, 1.0, self.std)
        return z * scale + self.mean

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["mean"], dtype=np.float64), np.array(d["std"], dtype=np.float64))

    def __eq__(self, other):
        if not isinstance(other, StandardizationParams):
            return NotImplemented
        return np.array_equal(self.mean, other.mean) and np.array_equal(self.std, other.std)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Dataset:
    """Ordered records with labels and real/synthetic provenance.

    ``synthetic`` is a boolean mask; ``standardization`` is set when the
    features are expressed in standardized units.
    """

    features: np.ndarray
    labels: np.ndarray
    synthetic: np.ndarray = None
    standardization: StandardizationParams | None = None
    name: str = ""

    def __post_init__(self):
        x = np.array(self.features, dtype=np.float64)
        if x.ndim == 1 and x.size == 0:
            x = x.reshape(0, N_FEATURES)
        if x.ndim != 2:
            raise DatasetError(f"features must be 2-d, got shape {x.shape}")
        y = np.array(self.labels, dtype=np.int64).reshape(-1)
        if y.shape[0] != x.shape[0]:
            raise DatasetError(f"{x.shape[0]} feature rows but {y.shape[0]} labels")
        if self.synthetic is None:
            s = np.zeros(len(y), dtype=bool)
        else:
            s = np.array(self.synthetic, dtype=bool).reshape(-1)
            if s.shape[0] != len(y):
                raise DatasetError("provenance mask length does not match record count")
        if not np.all(np.isfinite(x)):
            raise DatasetError("features must be finite")
        if not np.all((y == 0) | (y == 1)):
            raise DatasetError("labels must be 0 or 1")
        for arr in (x, y, s):
            arr.flags.writeable = False
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "synthetic", s)

    @classmethod
    def from_records(cls, records: Iterable[PatientRecord], name="", standardization=None):
        records = list(records)
        x = np.array([r.features for r in records], dtype=np.float64).reshape(-1, N_FEATURES)
        y = np.array([r.label for r in records], dtype=np.int64)
        s = np.array([r.provenance == Provenance.SYNTHETIC for r in records], dtype=bool)
        return cls(x, y, s, standardization=standardization, name=name)

    @classmethod
    def empty(cls, width=N_FEATURES, name=""):
        return cls(np.zeros((0, width)), np.zeros(0, dtype=np.int64), name=name)

    def __len__(self):
        return len(self.labels)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.synthetic, other.synthetic)
            and self.standardization == other.standardization
        )

    __hash__ = None

    @property
    def width(self) -> int:
        return self.features.shape[1]

    @property
    def records(self) -> list[PatientRecord]:
        if self.width != N_FEATURES:
            raise DatasetError(f"records need {N_FEATURES} features, dataset has {self.width}")
        return [
            PatientRecord(*map(float, row), label=int(lab),
                          provenance=Provenance.SYNTHETIC if syn else Provenance.REAL)
            for row, lab, syn in zip(self.features, self.labels, self.synthetic)
        ]

    @property
    def n_real(self) -> int:
        return int(np.count_nonzero(~self.synthetic))

    @property
    def n_synthetic(self) -> int:
        return int(np.count_nonzero(self.synthetic))

    def class_counts(self) -> tuple[int, int]:
        n1 = int(self.labels.sum())
        return len(self) - n1, n1

    def subset(self, index, name=None) -> "Dataset":
        index = np.asarray(index)
        return Dataset(self.features[index], self.labels[index], self.synthetic[index],
                       standardization=self.standardization,
                       name=self.name if name is None else name)

    def real_only(self) -> "Dataset":
        return self.subset(np.flatnonzero(~self.synthetic))

    def replace(self, **changes) -> "Dataset":
        fields = dict(features=self.features, labels=self.labels, synthetic=self.synthetic,
                      standardization=self.standardization, name=self.name)
        fields.update(changes)
        return Dataset(**fields)

    def shuffled(self, seed) -> "Dataset":
        perm = np.random.default_rng(seed).permutation(len(self))
        return self.subset(perm)

    @staticmethod
    def concat(parts: Sequence["Dataset"], name="") -> "Dataset":
        if not parts:
            raise EmptyDatasetError("nothing to concatenate")
        widths = {p.width for p in parts}
        if len(widths) != 1:
            raise DatasetError(f"feature arity mismatch: {sorted(widths)}")
        return Dataset(
            np.concatenate([p.features for p in parts]),
            np.concatenate([p.labels for p in parts]),
            np.concatenate([p.synthetic for p in parts]),
            standardization=parts[0].standardization,
            name=name,
        )


# CSV ------------------------------------------------------------------------


def _format_float(v: float) -> str:
    # repr is the shortest string that round-trips (at most 17 significant digits)
    return repr(float(v))


def write_csv(data: Dataset, path, provenance=False):
    if data.width != N_FEATURES:
        raise DatasetError(f"CSV format needs {N_FEATURES} features")
    header = list(FEATURES) + [LABEL] + ([PROVENANCE] if provenance else [])
    lines = [",".join(header)]
    for row, lab, syn in zip(data.features, data.labels, data.synthetic):
        cells = [_format_float(v) for v in row] + [str(int(lab))]
        if provenance:
            cells.append(Provenance.SYNTHETIC.value if syn else Provenance.REAL.value)
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="")


def load_csv(path, name=None) -> Dataset:
    """Read a dataset in the ``FP,OC,SPL,COC,lOCL,lOCR,label`` CSV format.

    A trailing ``provenance`` column (as written for hybrid datasets) is
    accepted; without it every record is tagged real.  Row numbers in
    :class:`ParseError` count data rows from 1.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EmptyDatasetError(f"{path}: file is empty")
        header = [h.strip() for h in header]
        expected = list(FEATURES) + [LABEL]
        for col in expected:
            if col not in header:
                raise SchemaError(col)
        has_prov = PROVENANCE in header
        allowed = expected + ([PROVENANCE] if has_prov else [])
        if header != allowed:
            extra = [h for h in header if h not in allowed]
            if extra:
                raise SchemaError(extra[0], f"unexpected column {extra[0]!r}")
            raise SchemaError(header[0], f"columns out of order: expected {','.join(allowed)}")

        feats, labels, synth = [], [], []
        for rownum, row in enumerate(reader, start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(header):
                raise ParseError(rownum, f"expected {len(header)} cells, got {len(row)}")
            try:
                values = [float(c) for c in row[:N_FEATURES]]
            except ValueError as exc:
                raise ParseError(rownum, f"non-numeric feature ({exc})") from None
            if not all(math.isfinite(v) for v in values):
                raise ParseError(rownum, "non-finite feature value")
            lab = row[N_FEATURES].strip()
            if lab not in ("0", "1"):
                raise ParseError(rownum, f"label must be 0 or 1, got {lab!r}")
            syn = False
            if has_prov:
                tag = row[N_FEATURES + 1].strip()
                if tag not in (Provenance.REAL.value, Provenance.SYNTHETIC.value):
                    raise ParseError(rownum, f"unknown provenance {tag!r}")
                syn = tag == Provenance.SYNTHETIC.value
            feats.append(values)
            labels.append(int(lab))
            synth.append(syn)
    if not labels:
        raise EmptyDatasetError(f"{path}: no data rows")
    return Dataset(np.array(feats), np.array(labels), np.array(synth),
                   name=path.stem if name is None else name)


# standardization ------------------------------------------------------------


def fit_standardizer(data: Dataset) -> StandardizationParams:
    """Per-feature mean and population standard deviation over all records."""
    if len(data) == 0:
        raise EmptyDatasetError("cannot fit a standardizer on an empty dataset")
    return StandardizationParams(data.features.mean(axis=0), data.features.std(axis=0))


def _check_arity(data, params):
    if data.width != params.mean.shape[0]:
        raise DatasetError(f"standardizer has {params.mean.shape[0]} features, data has {data.width}")


def apply_standardizer(data: Dataset, params: StandardizationParams) -> Dataset:
    _check_arity(data, params)
    return data.replace(features=params.transform(data.features), standardization=params)


def invert_standardizer(data: Dataset, params: StandardizationParams) -> Dataset:
    _check_arity(data, params)
    return data.replace(features=params.inverse(data.features), standardization=None)


# splitting ------------------------------------------------------------------


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def largest_remainder(total: int, weights: Sequence[float]) -> list[int]:
    """Integer apportionment of ``total`` proportional to ``weights``."""
    w = np.asarray(weights, dtype=np.float64)
    if total == 0 or w.sum() == 0:
        return [0] * len(w)
    quotas = total * w / w.sum()
    counts = np.floor(quotas).astype(int)
    short = total - counts.sum()
    # ties go to the lower index
    order = sorted(range(len(w)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[:short]:
        counts[i] += 1
    return counts.tolist()


@dataclass(frozen=True)
class SplitSpec:
    test_fraction: float = 0.2
    seed: int = 0
    stratified: bool = True

    def __post_init__(self):
        if not 0.0 < self.test_fraction < 1.0:
            raise DatasetError(f"test fraction must lie in (0, 1), got {self.test_fraction}")


def split_indices(labels: np.ndarray, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray]:
    n = len(labels)
    if n < 2:
        raise DatasetError(f"need at least 2 records to split, got {n}")
    n_test = min(max(round_half_up(spec.test_fraction * n), 1), n - 1)
    rng = np.random.default_rng(spec.seed)
    if spec.stratified:
        classes = [np.flatnonzero(labels == c) for c in (0, 1)]
        quotas = largest_remainder(n_test, [len(c) for c in classes])
        test = []
        for members, k in zip(classes, quotas):
            test.append(members[rng.permutation(len(members))[:k]])
        test = np.sort(np.concatenate(test))
    else:
        test = np.sort(rng.permutation(n)[:n_test])
    mask = np.zeros(n, dtype=bool)
    mask[test] = True
    return np.flatnonzero(~mask), test


def split(data: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    """Seeded partition into (train, test); both keep the input order."""
    train_idx, test_idx = split_indices(data.labels, spec)
    return data.subset(train_idx), data.subset(test_idx)


# surrogate data ---------------------------------------------------------------


@dataclass(frozen=True)
class SurrogateSpec:
    count: int = 600
    seed: int = 0
    center: float = 0.0
    half_width: float = 0.25
    p_flip: float = 0.4
    p_keep: float = 0.3

    def __post_init__(self):
        if self.count < 1:
            raise DatasetError("record count must be positive")
        if not self.half_width > 0:
            raise DatasetError("half-width must be positive")
        if not 0.0 <= self.p_flip <= 1.0:
            raise DatasetError(f"p_flip must lie in [0, 1], got {self.p_flip}")
        if not 0.0 < self.p_keep <= 1.0:
            raise DatasetError(f"p_keep must lie in (0, 1], got {self.p_keep}")


def linear_rule(x: np.ndarray) -> np.ndarray:
    """Noise-free surrogate label: fp + 0.5 spl - 0.5 coc > 0."""
    x = np.atleast_2d(x)
    return (x[:, 0] + 0.5 * x[:, 2] - 0.5 * x[:, 3] > 0).astype(np.int64)


def in_hard_band(x: np.ndarray, center=0.0, half_width=0.25) -> np.ndarray:
    return np.abs(np.atleast_2d(x)[:, OC_INDEX] - center) < half_width


def generate_surrogate(spec: SurrogateSpec = SurrogateSpec()) -> Dataset:
    """Standard-normal features with a sparse, label-noisy band on the OC axis.

    Candidates are drawn in chunks until ``spec.count`` records survive the
    band retention step, so the output always has exactly ``count`` rows.
    """
    rng = np.random.default_rng(spec.seed)
    feats, labels = [], []
    have = 0
    while have < spec.count:
        chunk = max(2 * (spec.count - have), 16)
        x = rng.standard_normal((chunk, N_FEATURES))
        flip_u = rng.random(chunk)
        keep_u = rng.random(chunk)
        y = linear_rule(x)
        band = in_hard_band(x, spec.center, spec.half_width)
        y = np.where(band & (flip_u < spec.p_flip), 1 - y, y)
        keep = ~band | (keep_u < spec.p_keep)
        feats.append(x[keep])
        labels.append(y[keep])
        have += int(keep.sum())
    x = np.concatenate(feats)[: spec.count]
    y = np.concatenate(labels)[: spec.count]
    return Dataset(x, y, name=f"surrogate-{spec.seed}")
