"""Diversity-enhancing augmentation: classifier-flagged records -> CGAN -> hybrid training set.

:func:`prepare` runs the expensive stages once (split, mislabelled-record
identification, CGAN training); :meth:`PreparedPipeline.hybrid` then draws
``round(alpha * |train|)`` synthetic records for any alpha.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .cgan import CganConfig, CganModel, sample, train_cgan
from .classifier import ClassifierConfig, mislabel_indices
from .dataset import Dataset, DatasetError, SplitSpec, largest_remainder, round_half_up, split_indices

SPLIT_FIRST = "split-first"
PAPER_LITERAL = "paper-literal"
MODES = (SPLIT_FIRST, PAPER_LITERAL)

# which records the CGAN learns from
SOURCE_MISLABELLED = "mislabelled"
SOURCE_FULL = "full"

_TAGS = {"split": 1, "mislabel": 2, "cgan": 3, "sample": 4, "hybrid": 5}


class PipelineError(RuntimeError):
    pass


class NoMislabelledError(PipelineError):
    def __init__(self):
        super().__init__("no mislabelled examples to model")


def derive_seed(seed: int, tag: str) -> int:
    """Independent 63-bit child seed for a named pipeline stage."""
    ss = np.random.SeedSequence([int(seed), _TAGS[tag]])
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


def config_digest(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class PipelineConfig:
    alpha: float = 0.10
    classifier: ClassifierConfig = ClassifierConfig()
    cgan: CganConfig = CganConfig()
    repeats: int = 1
    tau: float = 1.0
    mode: str = SPLIT_FIRST
    seed: int = 0
    test_fraction: float = 0.2
    fallback: bool = False
    cgan_source: str = SOURCE_MISLABELLED

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError(f"alpha must be non-negative, got {self.alpha}")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError(f"tau must lie in (0, 1], got {self.tau}")
        if self.repeats < 1:
            raise ValueError("repeats must be positive")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.cgan_source not in (SOURCE_MISLABELLED, SOURCE_FULL):
            raise ValueError(f"unknown CGAN source {self.cgan_source!r}")

    def to_dict(self):
        return {
            "alpha": self.alpha, "classifier": self.classifier.to_dict(), "cgan": self.cgan.to_dict(),
            "repeats": self.repeats, "tau": self.tau, "mode": self.mode, "seed": self.seed,
            "test_fraction": self.test_fraction, "fallback": self.fallback,
            "cgan_source": self.cgan_source,
        }


@dataclass
class HybridDataset:
    data: Dataset
    alpha: float
    alpha_achieved: float
    n_mislabelled: int
    lineage: dict = field(default_factory=dict)

    @property
    def n_synthetic(self) -> int:
        return self.data.n_synthetic

    @property
    def n_real(self) -> int:
        return self.data.n_real


def synthetic_count(alpha: float, n_train: int) -> int:
    return round_half_up(alpha * n_train)


def assemble_hybrid(train: Dataset, synth: Dataset, seed=0) -> Dataset:
    """Concatenate real and synthetic records, then apply a seeded shuffle."""
    if train.width != synth.width:
        raise DatasetError(f"schema mismatch: {train.width} vs {synth.width} features")
    merged = Dataset.concat([train, synth], name=f"{train.name}-hybrid")
    return merged.shuffled(seed)


@dataclass
class PreparedPipeline:
    config: PipelineConfig
    train: Dataset
    test: Dataset
    train_index: np.ndarray
    test_index: np.ndarray
    mislabelled_index: np.ndarray  # rows of the original input
    cgan_train_index: np.ndarray
    classifiers: list
    cgan: CganModel | None
    cgan_labels: np.ndarray  # labels of the CGAN training records
    fallback_used: bool = False

    def label_mix(self, count: int) -> list[int]:
        """Synthetic per-class counts mirroring the CGAN training labels."""
        n1 = int(self.cgan_labels.sum())
        return largest_remainder(count, [len(self.cgan_labels) - n1, n1])

    def hybrid(self, alpha: float) -> HybridDataset:
        if alpha < 0:
            raise ValueError(f"alpha must be non-negative, got {alpha}")
        n_synth = synthetic_count(alpha, len(self.train))
        seed = self.config.seed
        if n_synth == 0:
            synth = Dataset.empty(self.train.width)
        else:
            if self.cgan is None:
                raise NoMislabelledError()
            synth = sample(self.cgan, self.label_mix(n_synth), derive_seed(seed, "sample"))
        data = assemble_hybrid(self.train, synth, derive_seed(seed, "hybrid"))
        lineage = {
            "mode": self.config.mode,
            "alpha": alpha,
            "alpha_definition": "n_synthetic / n_real_train",
            "n_synthetic_of_hybrid": n_synth / len(data) if len(data) else 0.0,
            "seed": seed,
            "stage_seeds": {t: derive_seed(seed, t) for t in _TAGS},
            "config_digest": config_digest(self.config.to_dict()),
            "classifier_digest": config_digest(self.config.classifier.to_dict()),
            "cgan_digest": config_digest(self.config.cgan.to_dict()),
            "cgan_source": self.config.cgan_source,
            "fallback_used": self.fallback_used,
            "mislabelled_rows": self.mislabelled_index.tolist(),
            "cgan_training_rows": self.cgan_train_index.tolist(),
            "train_rows": self.train_index.tolist(),
            "test_rows": self.test_index.tolist(),
            "synthetic_label_mix": [int(len(synth) - synth.labels.sum()), int(synth.labels.sum())],
        }
        return HybridDataset(data, alpha, n_synth / len(self.train), len(self.mislabelled_index), lineage)


def real_split(data: Dataset, config: PipelineConfig) -> tuple[Dataset, Dataset]:
    """The (train, test) split every variant built from ``config.seed`` shares."""
    train_idx, test_idx = split_indices(data.labels, SplitSpec(config.test_fraction, derive_seed(config.seed, "split")))
    return data.subset(train_idx, name=f"{data.name}-train"), data.subset(test_idx, name=f"{data.name}-test")


def prepare(data: Dataset, config: PipelineConfig, alphas=None) -> PreparedPipeline:
    """Split, flag mislabelled records and train the CGAN once for a set of alphas.

    In split-first mode every stage sees only the training split.  In
    paper-literal mode mislabelled records are identified on the full input
    before the split, so the CGAN may see future test records.
    """
    alphas = [config.alpha] if alphas is None else list(alphas)
    if any(a < 0 for a in alphas):
        raise ValueError("alphas must be non-negative")
    seed = config.seed
    if data.n_synthetic:
        raise DatasetError("pipeline input must contain real records only")
    train_idx, test_idx = split_indices(data.labels, SplitSpec(config.test_fraction, derive_seed(seed, "split")))
    train = data.subset(train_idx, name=f"{data.name}-train")
    test = data.subset(test_idx, name=f"{data.name}-test")

    clf_config = config.classifier.with_seed(derive_seed(seed, "mislabel"))
    pool_idx = train_idx if config.mode == SPLIT_FIRST else np.arange(len(data))
    pool = data.subset(pool_idx)
    local, classifiers = mislabel_indices(pool, clf_config, config.repeats, config.tau)
    mislabelled = pool_idx[local]

    if config.cgan_source == SOURCE_FULL:
        cgan_idx = train_idx
    else:
        cgan_idx = mislabelled
    fallback_used = False
    needs_cgan = any(synthetic_count(a, len(train)) > 0 for a in alphas)
    if needs_cgan and len(cgan_idx) == 0:
        if not config.fallback:
            raise NoMislabelledError()
        cgan_idx = train_idx
        fallback_used = True

    model = None
    if needs_cgan:
        model = train_cgan(data.subset(cgan_idx), config.cgan.with_seed(derive_seed(seed, "cgan")))
    return PreparedPipeline(config, train, test, train_idx, test_idx, mislabelled,
                            np.asarray(cgan_idx), classifiers, model, data.labels[cgan_idx],
                            fallback_used)


def run_pipeline(data: Dataset, config: PipelineConfig):
    """Returns ``(hybrid, test, prepared)``; ``prepared`` holds the trained models."""
    prepared = prepare(data, config)
    return prepared.hybrid(config.alpha), prepared.test, prepared


def alpha_sweep(data: Dataset, alphas, config: PipelineConfig) -> list[HybridDataset]:
    """One hybrid per alpha, all sharing a single split, mislabelled subset and CGAN."""
    prepared = prepare(data, config, alphas)
    return [prepared.hybrid(a) for a in alphas]
