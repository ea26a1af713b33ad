"""Conditional GAN: generator G(z, y) and discriminator D(x | y) over standardized features.

The class label is one-hot encoded (width 2) and concatenated to the input of
both networks.  Training alternates one discriminator step and one
non-saturating generator step per mini-batch for a fixed number of epochs.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .dataset import (
    Dataset,
    DatasetError,
    EmptyDatasetError,
    StandardizationParams,
    fit_standardizer,
)
from .nn_core import (
    AdamState,
    DenseNetwork,
    adam_step,
    backward,
    bce_loss,
    forward,
    init_network,
    load_checkpoint,
    mlp_layers,
    save_checkpoint,
)

N_CLASSES = 2


@dataclass(frozen=True)
class CganConfig:
    latent_dim: int = 100
    generator_hidden: tuple = (128, 64)
    discriminator_hidden: tuple = (64, 32)
    slope: float = 0.2
    discriminator_lr: float = 2e-4
    generator_lr: float = 2e-4
    batch_size: int = 32
    epochs: int = 2000
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "generator_hidden", tuple(int(w) for w in self.generator_hidden))
        object.__setattr__(self, "discriminator_hidden", tuple(int(w) for w in self.discriminator_hidden))
        if self.latent_dim < 1:
            raise ValueError("latent dimension must be >= 1")
        if not self.generator_hidden or not self.discriminator_hidden:
            raise ValueError("hidden width lists must be non-empty")
        if min(self.generator_hidden + self.discriminator_hidden) < 1:
            raise ValueError("hidden widths must be >= 1")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch size and epochs must be positive")
        if not (self.discriminator_lr > 0 and self.generator_lr > 0):
            raise ValueError("learning rates must be positive")

    def with_seed(self, seed) -> "CganConfig":
        return replace(self, seed=int(seed))

    def to_dict(self):
        d = asdict(self)
        d["generator_hidden"] = list(self.generator_hidden)
        d["discriminator_hidden"] = list(self.discriminator_hidden)
        return d


def one_hot(y) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    out = np.zeros((len(y), N_CLASSES))
    out[np.arange(len(y)), y] = 1.0
    return out


def build_generator(config: CganConfig, n_features: int, seed) -> DenseNetwork:
    widths = [config.latent_dim + N_CLASSES, *config.generator_hidden, n_features]
    return init_network(mlp_layers(widths, "leaky_relu", "linear", slope=config.slope), seed)


def build_discriminator(config: CganConfig, n_features: int, seed) -> DenseNetwork:
    widths = [n_features + N_CLASSES, *config.discriminator_hidden, 1]
    return init_network(mlp_layers(widths, "leaky_relu", "sigmoid", slope=config.slope), seed)


@dataclass
class CganModel:
    generator: DenseNetwork
    discriminator: DenseNetwork
    config: CganConfig
    standardization: StandardizationParams
    history: dict = field(default_factory=lambda: {
        "g_loss": [], "d_loss": [], "d_acc_real": [], "d_acc_fake": []})

    def __post_init__(self):
        n_features = self.standardization.mean.shape[0]
        if self.generator.in_width != self.config.latent_dim + N_CLASSES:
            raise ValueError("generator input width must equal latent_dim + 2")
        if self.generator.out_width != n_features:
            raise ValueError(f"generator must emit {n_features} features")
        if self.discriminator.in_width != n_features + N_CLASSES or self.discriminator.out_width != 1:
            raise ValueError(f"discriminator must map {n_features + N_CLASSES} inputs to 1 output")

    @property
    def n_features(self) -> int:
        return self.generator.out_width

    def generate(self, z, y) -> np.ndarray:
        """Generator output in standardized space."""
        out, _ = forward(self.generator, np.hstack([z, one_hot(y)]))
        return out

    def score(self, x_std, y) -> np.ndarray:
        out, _ = forward(self.discriminator, np.hstack([x_std, one_hot(y)]))
        return out[:, 0]

    def save(self, path, seed=None):
        save_checkpoint(
            path,
            {"generator": self.generator, "discriminator": self.discriminator},
            extra={"config": self.config.to_dict(),
                   "standardization": self.standardization.to_dict(),
                   "history": self.history,
                   "seed": self.config.seed if seed is None else seed},
        )

    @classmethod
    def load(cls, path):
        nets, _, extra = load_checkpoint(path)
        return cls(nets["generator"], nets["discriminator"], CganConfig(**extra["config"]),
                   StandardizationParams.from_dict(extra["standardization"]), extra["history"])


def fit_cgan(x, y, config: CganConfig, standardization: StandardizationParams | None = None) -> CganModel:
    """Train on raw-unit features ``x`` (any width) with binary labels ``y``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if x.ndim != 2 or len(x) == 0:
        raise EmptyDatasetError("cannot train a CGAN on an empty dataset")
    if standardization is None:
        standardization = StandardizationParams(x.mean(axis=0), x.std(axis=0))
    xs = standardization.transform(x)
    n, width = xs.shape
    rng = np.random.default_rng([config.seed, 0x6A4])
    gen = build_generator(config, width, rng)
    disc = build_discriminator(config, width, rng)
    g_opt = AdamState.for_params(gen.params, lr=config.generator_lr)
    d_opt = AdamState.for_params(disc.params, lr=config.discriminator_lr)
    model = CganModel(gen, disc, config, standardization)
    hist = model.history
    batch = min(config.batch_size, n)
    y_real_oh = one_hot(y)

    for _ in range(config.epochs):
        order = rng.permutation(n)
        g_sum = d_sum = acc_r = acc_f = 0.0
        nb = 0
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            b = len(idx)

            # discriminator: real -> 1, generated -> 0
            z = rng.standard_normal((b, config.latent_dim))
            y_fake = y[rng.integers(0, n, size=b)]
            fake, _ = forward(gen, np.hstack([z, one_hot(y_fake)]))
            real_in = np.hstack([xs[idx], y_real_oh[idx]])
            fake_in = np.hstack([fake, one_hot(y_fake)])
            p_real, tr_real = forward(disc, real_in)
            p_fake, tr_fake = forward(disc, fake_in)
            g_real, _ = backward(disc, tr_real, (p_real - 1.0) / b, wrt_preactivation=True)
            g_fake, _ = backward(disc, tr_fake, p_fake / b, wrt_preactivation=True)
            adam_step(disc.params, [a + c for a, c in zip(g_real, g_fake)], d_opt)
            d_sum += float(bce_loss(p_real, 1.0).mean() + bce_loss(p_fake, 0.0).mean())
            acc_r += float((p_real >= 0.5).mean())
            acc_f += float((p_fake < 0.5).mean())

            # generator: non-saturating, D(G(z, y) | y) -> 1
            z = rng.standard_normal((b, config.latent_dim))
            y_fake = y[rng.integers(0, n, size=b)]
            oh = one_hot(y_fake)
            fake, tr_gen = forward(gen, np.hstack([z, oh]))
            p, tr_d = forward(disc, np.hstack([fake, oh]))
            _, d_input = backward(disc, tr_d, (p - 1.0) / b, wrt_preactivation=True)
            g_grads, _ = backward(gen, tr_gen, d_input[:, :width])
            adam_step(gen.params, g_grads, g_opt)
            g_sum += float(bce_loss(p, 1.0).mean())
            nb += 1
        hist["g_loss"].append(g_sum / nb)
        hist["d_loss"].append(d_sum / nb)
        hist["d_acc_real"].append(acc_r / nb)
        hist["d_acc_fake"].append(acc_f / nb)
    return model


def train_cgan(data: Dataset, config: CganConfig = CganConfig()) -> CganModel:
    """Train on ``data`` in the standardized space fitted to ``data`` itself."""
    if len(data) == 0:
        raise EmptyDatasetError("cannot train a CGAN on an empty dataset")
    return fit_cgan(data.features, data.labels, config, fit_standardizer(data))


def sample_array(model: CganModel, label_counts, seed) -> tuple[np.ndarray, np.ndarray]:
    """Standardized samples and their labels: ``label_counts[c]`` rows for class c."""
    counts = [int(c) for c in label_counts]
    if len(counts) != N_CLASSES or min(counts) < 0:
        raise ValueError(f"label_counts must be {N_CLASSES} non-negative counts")
    y = np.repeat(np.arange(N_CLASSES), counts)
    if len(y) == 0:
        return np.zeros((0, model.n_features)), y
    rng = np.random.default_rng([int(seed), 0x5A3])
    z = rng.standard_normal((len(y), model.config.latent_dim))
    return model.generate(z, y), y


def sample(model: CganModel, label_counts, seed) -> Dataset:
    """Synthetic records in original units, labelled with their conditioning class."""
    xs, y = sample_array(model, label_counts, seed)
    x = model.standardization.inverse(xs)
    return Dataset(x, y, np.ones(len(y), dtype=bool), name="synthetic")


def discriminator_score(model: CganModel, record) -> float:
    """D(x | y) for one record given in original units."""
    x = np.asarray(record.features, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise DatasetError("record features must be finite")
    return float(model.score(model.standardization.transform(x)[None, :], [record.label])[0])
