"""Rebalancing strategies with exact per-class target counts.

* random under-sampling (RU)
* SMOTE-NC for mixed continuous/nominal features
* CTGAN over-sampling, conditioned on the label
* CTGAN-RU: RU of the large classes, then CTGAN trained on the reduced set
  fills the small ones

Targets are given per label class, either as ``{category_name: count}``,
``{code: count}`` or a sequence indexed by class code. Classes left out keep
their current count.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.neighbors import NearestNeighbors

from .ctgan import CTGAN, CtganConfig
from .exceptions import ConfigError
from .tabular import Dataset

METHODS = ("none", "ru", "smote_nc", "ctgan", "ctgan_ru")


def resolve_targets(data: Dataset, targets) -> np.ndarray:
    """Per-class target counts as an int array indexed by class code."""
    label = data.schema.label
    current = data.category_counts(label.name)
    out = current.copy()
    if targets is None:
        return out
    if isinstance(targets, dict):
        for key, n in targets.items():
            out[_class_code(data, key)] = int(n)
    else:
        t = np.asarray(targets, dtype=np.int64).reshape(-1)
        if len(t) != label.n_categories:
            raise ConfigError(f"expected {label.n_categories} targets, got {len(t)}")
        out = t.copy()
    if np.any(out < 1):
        raise ConfigError("every class target must be >= 1")
    return out


def ratio_targets(counts, ratios, multiplier=1.0) -> np.ndarray:
    """Targets ``ratio_c * multiplier * min(counts)`` rounded to integers.

    With ``multiplier=2``, a 317/15 set and ratio 2:1 gives 60/30; 317/63/63
    with 1:1:1 gives 126/126/126.
    """
    counts = np.asarray(counts, dtype=float)
    ratios = np.asarray(ratios, dtype=float)
    if counts.shape != ratios.shape:
        raise ConfigError("counts and ratios must have the same length")
    if np.any(ratios <= 0) or multiplier <= 0:
        raise ConfigError("ratios and multiplier must be positive")
    base = multiplier * counts.min()
    return np.maximum(np.floor(ratios * base + 0.5), 1).astype(np.int64)


@dataclass
class ResamplePlan:
    """Everything needed to reproduce one rebalancing run."""

    method: str
    targets: object = None
    seed: int = 0
    k_neighbors: int = 5
    ru_targets: object = None
    ctgan: CtganConfig = field(default_factory=CtganConfig)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown resampling method {self.method!r}; choose from {METHODS}")
        if self.k_neighbors < 1:
            raise ConfigError("k_neighbors must be >= 1")


# --------------------------------------------------------------------------- RU


def random_undersample(data: Dataset, targets, seed: int = 0) -> Dataset:
    """Keep a uniform random subset of each class with exactly ``targets`` rows.

    Surviving rows keep their original relative order.
    """
    t = resolve_targets(data, targets)
    current = data.category_counts(data.schema.label_column)
    over = np.flatnonzero(t > current)
    if over.size:
        c = over[0]
        raise ConfigError(f"RU target {t[c]} exceeds the {current[c]} rows of class {data.schema.label.categories[c]!r}")
    rng = np.random.default_rng(seed)
    labels = data.labels
    keep = []
    for c in range(len(t)):
        idx = np.flatnonzero(labels == c)
        if t[c] < len(idx):
            idx = rng.choice(idx, size=t[c], replace=False)
        keep.append(idx)
    return data.take(np.sort(np.concatenate(keep)))


# --------------------------------------------------------------------------- SMOTE-NC


def _smote_space(data: Dataset, rows):
    """Features in which plain Euclidean distance equals the SMOTE-NC distance.

    Continuous columns are standardized by their minority-class std. Each
    nominal column becomes a one-hot block scaled by ``med / sqrt(2)`` so a
    mismatch adds ``med**2`` to the squared distance.
    """
    schema = data.schema
    cont = [c.name for c in schema.continuous]
    nom = [c for c in schema.discrete if c.name != schema.label_column]
    X = np.column_stack([data.column(n)[rows] for n in cont])
    sd = X.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    Z = X / sd
    med = float(np.median(Z.std(axis=0)))
    blocks = [Z]
    for col in nom:
        onehot = np.zeros((len(rows), col.n_categories))
        onehot[np.arange(len(rows)), data.codes(col.name)[rows]] = med / np.sqrt(2.0)
        blocks.append(onehot)
    return np.hstack(blocks), cont, nom


def smote_nc(data: Dataset, minority_class, k_neighbors: int = 5, n_synthetic: int = 0, seed: int = 0) -> Dataset:
    """Append ``n_synthetic`` SMOTE-NC rows of ``minority_class``.

    Each synthetic row picks a seed uniformly among minority rows and one of
    its ``k_neighbors`` nearest minority neighbours; continuous columns are
    interpolated at ``t ~ U(0, 1)`` along the seed-neighbour segment and every
    nominal column takes the majority value among the ``k`` neighbours (ties to
    the lowest category index).
    """
    schema = data.schema
    if not schema.continuous:
        raise ConfigError("SMOTE-NC needs at least one continuous column")
    code = _class_code(data, minority_class)
    if n_synthetic < 0:
        raise ConfigError("n_synthetic must be >= 0")
    if n_synthetic == 0:
        return data
    rows = data.where_label(code)
    if len(rows) <= k_neighbors:
        raise ConfigError(f"SMOTE-NC needs more than k_neighbors={k_neighbors} minority rows, got {len(rows)}")
    space, cont, nom = _smote_space(data, rows)
    nn = NearestNeighbors(n_neighbors=k_neighbors).fit(space)
    neigh = nn.kneighbors(return_distance=False)  # excludes each point itself

    rng = np.random.default_rng(seed)
    seeds = rng.integers(len(rows), size=n_synthetic)
    pick = neigh[seeds, rng.integers(k_neighbors, size=n_synthetic)]
    t = rng.random(n_synthetic)

    minority = data.values[rows]
    out = minority[seeds].copy()
    for name in cont:
        j = schema.index(name)
        a, b = minority[seeds, j], minority[pick, j]
        out[:, j] = a + t * (b - a)
    for col in nom:
        j = schema.index(col.name)
        votes = minority[:, j].astype(np.int64)[neigh]  # (m, k)
        counts = np.zeros((len(rows), col.n_categories), dtype=np.int64)
        np.add.at(counts, (np.repeat(np.arange(len(rows)), k_neighbors), votes.ravel()), 1)
        out[:, j] = np.argmax(counts, axis=1)[seeds]  # argmax returns the lowest index on ties
    out[:, schema.index(schema.label_column)] = code
    return data.concat(Dataset(schema, out, validate=False))


def smote_nc_to_targets(data: Dataset, targets, k_neighbors: int = 5, seed: int = 0) -> Dataset:
    """Grow every class below its target with SMOTE-NC (one stream per class)."""
    t = resolve_targets(data, targets)
    current = data.category_counts(data.schema.label_column)
    _check_oversample(data, t, current)
    out = data
    for c in np.flatnonzero(t > current):
        extra = smote_nc(data, int(c), k_neighbors, int(t[c] - current[c]), seed=_sub_seed(seed, c))
        out = out.concat(extra.take(np.arange(len(data), len(extra))))
    return out


# --------------------------------------------------------------------------- CTGAN


def ctgan_generate_classes(model: CTGAN, counts: dict, seed: int = 0) -> Dataset:
    """Rows conditioned on ``label = c`` for each ``{code: n}``; the label is then forced to ``c``."""
    schema = model.schema_
    parts = []
    for c, n in sorted(counts.items()):
        if n <= 0:
            continue
        syn = model.sample(int(n), condition=(schema.label_column, int(c)), random_state=_sub_seed(seed, c))
        parts.append(syn.with_column(schema.label_column, np.full(int(n), int(c))))
    return parts[0].concat(*parts[1:]) if parts else None


def ctgan_oversample_to_targets(data: Dataset, targets, config: CtganConfig, seed: int = 0, model=None):
    """Fill every class up to its target with CTGAN rows conditioned on the label.

    A CTGAN is trained on ``data`` unless a fitted ``model`` is supplied.
    """
    t = resolve_targets(data, targets)
    current = data.category_counts(data.schema.label_column)
    _check_oversample(data, t, current)
    need = {int(c): int(t[c] - current[c]) for c in range(len(t)) if t[c] > current[c]}
    if not need:
        return data
    if model is None:
        model = CTGAN.from_config(config).fit(data)
    return data.concat(ctgan_generate_classes(model, need, seed))


def ctgan_oversample(data: Dataset, minority_class, target_count: int, config: CtganConfig, seed: int = 0) -> Dataset:
    """Expand one class to ``target_count`` with CTGAN; all other rows untouched."""
    code = _class_code(data, minority_class)
    return ctgan_oversample_to_targets(data, {code: target_count}, config, seed)


def ctgan_ru(data: Dataset, ru_targets, final_targets, config: CtganConfig, seed: int = 0,
             train_on: str = "reduced", model=None) -> Dataset:
    """RU to ``ru_targets``, then CTGAN fills ``final_targets``.

    ``ru_targets=None`` reduces each class to ``min(current, final)``. The
    CTGAN is trained on the reduced set by default; ``train_on="full"`` trains
    it on the input instead, and ``model`` skips training altogether.
    """
    if train_on not in ("reduced", "full"):
        raise ConfigError(f"train_on must be 'reduced' or 'full', got {train_on!r}")
    final = resolve_targets(data, final_targets)
    current = data.category_counts(data.schema.label_column)
    ru = np.minimum(current, final) if ru_targets is None else resolve_targets(data, ru_targets)
    if np.any(final < ru):
        raise ConfigError("final targets must not fall below the RU targets")
    reduced = random_undersample(data, ru, seed=_sub_seed(seed, "ru"))
    if model is None and train_on == "full" and np.any(final > ru):
        model = CTGAN.from_config(config).fit(data)
    return ctgan_oversample_to_targets(reduced, final, config, seed=_sub_seed(seed, "gen"), model=model)


def resample(data: Dataset, plan: ResamplePlan) -> Dataset:
    """Apply ``plan`` and return the rebalanced dataset."""
    m = plan.method
    if m == "none":
        return data
    if m == "ru":
        return random_undersample(data, plan.targets, plan.seed)
    if m == "smote_nc":
        return smote_nc_to_targets(data, plan.targets, plan.k_neighbors, plan.seed)
    if m == "ctgan":
        return ctgan_oversample_to_targets(data, plan.targets, plan.ctgan, plan.seed)
    return ctgan_ru(data, plan.ru_targets, plan.targets, plan.ctgan, plan.seed)


def _class_code(data: Dataset, cls) -> int:
    label = data.schema.label
    if isinstance(cls, str):
        if cls in label.categories:
            return label.categories.index(cls)
        if not cls.isdigit():
            raise ConfigError(f"unknown class {cls!r}")
    code = int(cls)
    if not 0 <= code < label.n_categories:
        raise ConfigError(f"class code {code} out of range")
    return code


def _check_oversample(data, t, current):
    under = np.flatnonzero(t < current)
    if under.size:
        c = under[0]
        raise ConfigError(
            f"over-sampling target {t[c]} is below the {current[c]} rows of class "
            f"{data.schema.label.categories[c]!r}"
        )


def _sub_seed(seed, tag) -> int:
    key = int(tag) if isinstance(tag, (int, np.integer)) else zlib.crc32(str(tag).encode())
    return int(np.random.SeedSequence([int(seed), key]).generate_state(1)[0])


# --------------------------------------------------------------------------- estimators


class _Resampler(BaseEstimator):
    def fit_resample(self, X: Dataset, y=None) -> Dataset:
        if not isinstance(X, Dataset):
            raise TypeError(f"{type(self).__name__}.fit_resample expects a Dataset")
        self.n_input_counts_ = X.class_counts()
        out = self._resample(X)
        self.n_output_counts_ = out.class_counts()
        return out


class RandomUnderSampler(_Resampler):
    def __init__(self, targets=None, random_state=0):
        self.targets = targets
        self.random_state = random_state

    def _resample(self, X):
        return random_undersample(X, self.targets, self.random_state)


class SMOTENC(_Resampler):
    def __init__(self, targets=None, k_neighbors=5, random_state=0):
        self.targets = targets
        self.k_neighbors = k_neighbors
        self.random_state = random_state

    def _resample(self, X):
        return smote_nc_to_targets(X, self.targets, self.k_neighbors, self.random_state)


class CTGANOverSampler(_Resampler):
    def __init__(self, targets=None, config=None, random_state=0):
        self.targets = targets
        self.config = config
        self.random_state = random_state

    def _resample(self, X):
        return ctgan_oversample_to_targets(X, self.targets, self.config or CtganConfig(), self.random_state)


class CTGANRUSampler(_Resampler):
    """Mixed sampling; ``ru_targets=None`` under-samples each class to its final target."""

    def __init__(self, targets=None, ru_targets=None, config=None, random_state=0):
        self.targets = targets
        self.ru_targets = ru_targets
        self.config = config
        self.random_state = random_state

    def _resample(self, X):
        return ctgan_ru(X, self.ru_targets, self.targets, self.config or CtganConfig(), self.random_state)
