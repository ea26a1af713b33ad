"""Train-synthetic-test-real evaluation: metrics, Monte Carlo runs, proportion tests, reports."""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .classifier import ClassifierConfig, train_classifier
from .dataset import Dataset


class EvaluationError(ValueError):
    pass


class ProvenanceError(EvaluationError):
    """Raised when a test set contains synthetic records."""

    def __init__(self, n_synthetic, n_total):
        self.n_synthetic = n_synthetic
        self.n_total = n_total
        super().__init__(f"test set must be real-only: {n_synthetic} of {n_total} records are synthetic")


# metrics ---------------------------------------------------------------------


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise EvaluationError("confusion counts must be non-negative")

    @property
    def n(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    @classmethod
    def from_labels(cls, y_true, y_pred) -> "ConfusionCounts":
        t = np.asarray(y_true).astype(bool)
        p = np.asarray(y_pred).astype(bool)
        return cls(int(np.sum(t & p)), int(np.sum(~t & ~p)), int(np.sum(~t & p)), int(np.sum(t & ~p)))


def _ratio(num, den):
    return num / den if den else 0.0


def metrics(counts: ConfusionCounts) -> tuple[float, float, float]:
    """(accuracy, balanced accuracy, F1); any 0/0 term counts as 0."""
    if counts.n == 0:
        raise EvaluationError("metrics need at least one record")
    tp, tn, fp, fn = counts.tp, counts.tn, counts.fp, counts.fn
    accuracy = (tp + tn) / counts.n
    recall = _ratio(tp, tp + fn)
    balanced = 0.5 * (recall + _ratio(tn, tn + fp))
    precision = _ratio(tp, tp + fp)
    f1 = _ratio(2 * precision * recall, precision + recall)
    return accuracy, balanced, f1


def is_degenerate(counts: ConfusionCounts) -> bool:
    return 0 in (counts.tp + counts.fn, counts.tn + counts.fp, counts.tp + counts.fp)


# Monte Carlo -------------------------------------------------------------------


@dataclass(frozen=True)
class RunResult:
    run: int
    seed: int
    accuracy: float
    balanced_accuracy: float
    f1: float
    tp: int
    tn: int
    fp: int
    fn: int
    degenerate: bool = False
    stopped_epoch: int = 0


def _mean_std(values):
    values = np.asarray(values, dtype=np.float64)
    mean = float(values.mean())
    std = float(values.std(ddof=1)) if len(values) > 1 else 0.0
    return mean, std


@dataclass
class ExperimentReport:
    model: str
    runs: list
    config_digest: str = ""
    notes: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.runs:
            raise EvaluationError(f"report {self.model!r} has no runs")
        self.runs = sorted(self.runs, key=lambda r: r.run)

    @property
    def n_runs(self):
        return len(self.runs)

    @property
    def std_defined(self) -> bool:
        return len(self.runs) > 1

    def values(self, metric) -> list[float]:
        return [getattr(r, metric) for r in self.runs]

    def summary(self, metric) -> tuple[float, float]:
        """(mean, sample std); std is 0 for a single run."""
        return _mean_std(self.values(metric))

    @property
    def n_degenerate(self) -> int:
        return sum(r.degenerate for r in self.runs)

    def to_dict(self):
        out = {"model": self.model, "config_digest": self.config_digest, "notes": self.notes,
               "std_defined": self.std_defined, "n_degenerate": self.n_degenerate,
               "runs": [asdict(r) for r in self.runs]}
        for m in ("accuracy", "f1", "balanced_accuracy"):
            mean, std = self.summary(m)
            out[f"{m}_mean"] = mean
            out[f"{m}_std"] = std
        return out

    @classmethod
    def from_dict(cls, d):
        return cls(d["model"], [RunResult(**r) for r in d["runs"]], d.get("config_digest", ""),
                   d.get("notes", {}))


def check_test_set(test: Dataset):
    if len(test) == 0:
        raise EvaluationError("test set is empty")
    if test.n_synthetic:
        raise ProvenanceError(test.n_synthetic, len(test))


def run_once(train: Dataset, test: Dataset, config: ClassifierConfig, run: int, seed: int) -> RunResult:
    """One Monte Carlo run: shuffle, train a fresh classifier with ``seed``, score on ``test``."""
    model = train_classifier(train.shuffled(seed), config.with_seed(seed))
    counts = ConfusionCounts.from_labels(test.labels, model.predict_labels(test.features))
    acc, bal, f1 = metrics(counts)
    return RunResult(run, seed, acc, bal, f1, counts.tp, counts.tn, counts.fp, counts.fn,
                     is_degenerate(counts), model.stopped_epoch)


def _run_star(args):
    return run_once(*args)


def monte_carlo(train, test: Dataset, config: ClassifierConfig = ClassifierConfig(), runs=200,
                base_seed=0, model="model", jobs=1, config_digest="") -> ExperimentReport:
    """Train ``runs`` classifiers (run i uses seed ``base_seed + i``) and test each on real data.

    ``train`` may be a Dataset or anything with a ``.data`` Dataset (a hybrid).
    Results do not depend on ``jobs``.
    """
    check_test_set(test)
    if runs < 1:
        raise EvaluationError("runs must be positive")
    train = getattr(train, "data", train)
    tasks = [(train, test, config, i, base_seed + i) for i in range(runs)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_star, tasks))
    else:
        results = [_run_star(t) for t in tasks]
    return ExperimentReport(model, results, config_digest)


def optimal_frequency(report: ExperimentReport, threshold=None) -> int:
    """Runs reaching accuracy 1.0 (``threshold=None``) or at least ``threshold``."""
    if not report.runs:
        raise EvaluationError("empty report")
    t = 1.0 if threshold is None else threshold
    return sum(r.accuracy >= t for r in report.runs)


# proportion test ---------------------------------------------------------------------


def normal_sf_two_sided(z: float) -> float:
    """2 * (1 - Phi(|z|)) via erfc, accurate in the tails."""
    return math.erfc(abs(z) / math.sqrt(2.0))


@dataclass(frozen=True)
class ProportionTestResult:
    z: float
    p_value: float
    significant: bool
    p_gan: float
    p_dist: float
    n: int
    model: str = ""
    squared: bool = False


def p_value_from_z(z: float, table_decimals=None) -> float:
    """Two-tailed normal p-value.

    ``table_decimals`` rounds |z| before the lookup (half-up), emulating a
    printed z-table; ``None`` uses the exact CDF.
    """
    a = abs(z)
    if table_decimals is not None:
        scale = 10 ** table_decimals
        a = math.floor(a * scale + 0.5) / scale
    return min(1.0, normal_sf_two_sided(a))


def proportion_test(count_a: int, count_b: int, n: int, squared=False, table_decimals=None,
                    model="", level=0.05) -> ProportionTestResult:
    """One-sample proportion z test of ``count_a/n`` against ``count_b/n``.

    z = (P_gan - P_dist) / sqrt(P_gan * (1 - P_gan) / n).  ``squared=True``
    squares the numerator instead (loses the sign).
    """
    if n < 1:
        raise EvaluationError("n must be positive")
    if not (0 <= count_a <= n and 0 <= count_b <= n):
        raise EvaluationError(f"counts must lie in [0, {n}]")
    p_gan = count_a / n
    p_dist = count_b / n
    if p_gan in (0.0, 1.0):
        raise EvaluationError(f"proportion test undefined for P_gan = {p_gan:g} (zero standard error)")
    sd = math.sqrt(p_gan * (1.0 - p_gan) / n)
    diff = p_gan - p_dist
    z = (diff * diff if squared else diff) / sd
    p = p_value_from_z(z, table_decimals)
    return ProportionTestResult(z, p, p < level, p_gan, p_dist, n, model, squared)


# report emission ---------------------------------------------------------------


def _g6(x) -> str:
    return f"{x:.6g}"


def box_stats(values) -> dict:
    """Midpoint-interpolated quartiles with 1.5 IQR whiskers.

    ``min``/``max`` are the extreme values inside the whisker fences, or the
    box edge when no value lies inside (zero IQR with spread-out tails).
    """
    v = np.sort(np.asarray(values, dtype=np.float64))
    q1, med, q3 = np.quantile(v, [0.25, 0.5, 0.75], method="midpoint")
    iqr = q3 - q1
    lo, hi = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    inside = v[(v >= lo) & (v <= hi)]
    outliers = v[(v < lo) | (v > hi)]
    low = float(inside.min()) if inside.size else float(q1)
    high = float(inside.max()) if inside.size else float(q3)
    return {"min": low, "q1": float(q1), "median": float(med), "q3": float(q3),
            "max": high, "outliers": outliers.tolist()}


def _write_csv(path, header, rows):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def summary_rows(reports):
    rows = []
    for r in reports:
        row = [r.model]
        for m in ("accuracy", "f1", "balanced_accuracy"):
            mean, std = r.summary(m)
            row += [_g6(mean), _g6(std)]
        rows.append(row)
    return rows


SUMMARY_HEADER = ["model", "accuracy_mean", "accuracy_std", "f1_mean", "f1_std",
                  "balanced_accuracy_mean", "balanced_accuracy_std"]


def emit_report(reports, tests, out_dir, optimal_threshold=None, extra=None) -> dict:
    """Write summary, proportion-test, box-plot, optimal-frequency CSVs and runs.json.

    Returns a mapping of artifact name to path.
    """
    if not reports:
        raise EvaluationError("no reports to emit")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise EvaluationError(f"cannot create output directory {out}: {exc}") from exc
    paths = {name: out / name for name in
             ("summary.csv", "proportion_tests.csv", "boxplot.csv", "optimal_freq.csv", "runs.json")}
    criterion = "perfect" if optimal_threshold is None else f"threshold={optimal_threshold:g}"
    try:
        _write_csv(paths["summary.csv"], SUMMARY_HEADER, summary_rows(reports))

        rows = []
        for t in tests:
            if t.z is None:
                rows.append([t.model, "", "", "undefined", _g6(t.p_gan), _g6(t.p_dist), t.n])
            else:
                rows.append([t.model, _g6(t.z), _g6(t.p_value),
                             "p<0.05" if t.significant else "p>0.05",
                             _g6(t.p_gan), _g6(t.p_dist), t.n])
        _write_csv(paths["proportion_tests.csv"],
                   ["model", "z", "p", "significant", "p_gan", "p_dist", "n"], rows)

        rows = []
        for r in reports:
            b = box_stats(r.values("accuracy"))
            rows.append([r.model] + [_g6(b[k]) for k in ("min", "q1", "median", "q3", "max")]
                        + [";".join(_g6(o) for o in b["outliers"])])
        _write_csv(paths["boxplot.csv"], ["model", "min", "q1", "median", "q3", "max", "outliers"], rows)

        _write_csv(paths["optimal_freq.csv"], ["model", "optimal_count", "runs", "criterion"],
                   [[r.model, optimal_frequency(r, optimal_threshold), r.n_runs, criterion]
                    for r in reports])

        doc = {"optimal_criterion": criterion,
               "reports": [r.to_dict() for r in reports],
               "proportion_tests": [asdict(t) for t in tests]}
        if extra:
            doc["extra"] = extra
        paths["runs.json"].write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as exc:
        raise EvaluationError(f"cannot write report to {out}: {exc}") from exc
    return paths


def load_runs(path) -> list[ExperimentReport]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return [ExperimentReport.from_dict(d) for d in doc["reports"]]


def undefined_test(model, count_a, count_b, n) -> ProportionTestResult:
    """Placeholder row for a comparison whose P_gan is 0 or 1."""
    return ProportionTestResult(None, None, False, count_a / n, count_b / n, n, model)
