"""Conditional tabular GAN with training-by-sampling and a packed discriminator.

Generator (input ``z (+) cond``)::

    h1 = h0 (+) ReLU(BN(FC(h0)))
    h2 = h1 (+) ReLU(BN(FC(h1)))
    h3 = leaky(BN(FC(h2)))
    h4 = leaky(FC(h3))
    out = tanh for every alpha unit, Gumbel-softmax for every mode/category block

Discriminator (input ``r_1 (+) ... (+) r_pac (+) cond_1 (+) ... (+) cond_pac``):
four ``drop(leaky(FC))`` layers and a final linear unit read through a
sigmoid. Losses are the non-saturating GAN pair; the generator additionally
pays ``-log p`` for the probability its Gumbel-softmax block assigns to the
conditioned category.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import ConfigError, NonFiniteError
from .mode_norm import ModeModel
from .neural import (
    Activation,
    Adam,
    BatchNorm,
    ConcatSkip,
    Dense,
    Dropout,
    MixedOutput,
    Network,
    Sequential,
)
from .tabular import DataSchema, Dataset, TabularEncoder, decode_matrix, encoding_layout

BUNDLE_MAGIC = b"CTGANRU-BUNDLE\n"
BUNDLE_VERSION = 1


@dataclass
class CtganConfig:
    epochs: int = 200
    lr_generator: float = 1e-4
    lr_discriminator: float = 5e-4
    batch_size: int = 500
    pac: int = 10
    z_dim: int = 128
    gumbel_temperature: float = 0.2
    leaky_ratio: float = 0.2
    dropout_rate: float = 0.2
    seed: int = 0
    generator_dims: tuple = (256, 256, 256, 128)
    discriminator_dims: tuple = (256, 256, 128, 64)
    adam_beta1: float = 0.5
    adam_beta2: float = 0.9
    adam_eps: float = 1e-8
    max_modes: int = 10
    weight_threshold: float = 0.005

    def __post_init__(self):
        self.generator_dims = tuple(int(d) for d in self.generator_dims)
        self.discriminator_dims = tuple(int(d) for d in self.discriminator_dims)
        self.validate()

    def validate(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.pac < 1 or self.batch_size < self.pac or self.batch_size % self.pac:
            raise ConfigError("batch_size must be a positive multiple of pac")
        if self.z_dim < 1:
            raise ConfigError("z_dim must be >= 1")
        for name in ("lr_generator", "lr_discriminator", "gumbel_temperature"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("leaky_ratio", "dropout_rate"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1)")
        if len(self.generator_dims) != 4 or len(self.discriminator_dims) != 4:
            raise ConfigError("generator_dims and discriminator_dims need four widths each")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["generator_dims"] = list(self.generator_dims)
        d["discriminator_dims"] = list(self.discriminator_dims)
        return d

    @classmethod
    def from_dict(cls, d) -> "CtganConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown CTGAN config keys: {sorted(unknown)}")
        return cls(**d)


# --------------------------------------------------------------------------- conditions


@dataclass(frozen=True)
class CondVector:
    values: np.ndarray
    column: str
    category: int


def cond_offsets(schema: DataSchema) -> dict:
    """Start position of every discrete column's block in the cond vector."""
    out, pos = {}, 0
    for col in schema.discrete:
        out[col.name] = pos
        pos += col.n_categories
    return out


def cond_width(schema: DataSchema) -> int:
    return sum(c.n_categories for c in schema.discrete)


def build_cond_vector(schema: DataSchema, column: str, category: int) -> CondVector:
    col = schema.column(column)
    if not col.is_discrete:
        raise ConfigError(f"cannot condition on continuous column {column!r}")
    if not 0 <= int(category) < col.n_categories:
        raise ConfigError(f"category {category} out of range for column {column!r}")
    v = np.zeros(cond_width(schema))
    v[cond_offsets(schema)[column] + int(category)] = 1.0
    return CondVector(v, column, int(category))


def log_frequency_probs(counts) -> np.ndarray:
    w = np.log1p(np.asarray(counts, dtype=float))
    return w / w.sum()


def sample_training_condition(data: Dataset, schema: DataSchema, rng: np.random.Generator):
    """Pick a discrete column uniformly, then a category with probability
    proportional to ``log(1 + count)``. Returns ``(column_name, category)``."""
    cols = schema.discrete
    if not cols:
        raise ConfigError("training-by-sampling needs a discrete column")
    col = cols[rng.integers(len(cols))]
    probs = log_frequency_probs(data.category_counts(col.name))
    return col.name, int(rng.choice(col.n_categories, p=probs))


class CondSampler:
    """Vectorized condition and real-row sampling over a training set."""

    def __init__(self, schema: DataSchema, counts: dict, codes: dict | None = None):
        self.schema = schema
        self.columns = schema.discrete
        self.offsets = cond_offsets(schema)
        self.width = cond_width(schema)
        self.counts = {c.name: np.asarray(counts[c.name], dtype=np.int64) for c in self.columns}
        self._log_cdf = [np.cumsum(log_frequency_probs(self.counts[c.name])) for c in self.columns]
        self._raw_cdf = [np.cumsum(self.counts[c.name] / self.counts[c.name].sum()) for c in self.columns]
        self._rows = None
        if codes is not None:
            self._rows = {
                c.name: [np.flatnonzero(codes[c.name] == k) for k in range(c.n_categories)] for c in self.columns
            }

    @classmethod
    def from_data(cls, data: Dataset) -> "CondSampler":
        s = data.schema
        return cls(
            s,
            {c.name: data.category_counts(c.name) for c in s.discrete},
            {c.name: data.codes(c.name) for c in s.discrete},
        )

    def _draw(self, n, rng, cdfs):
        col = rng.integers(len(self.columns), size=n)
        u = rng.random(n)
        cat = np.empty(n, dtype=np.int64)
        for j, cdf in enumerate(cdfs):
            m = col == j
            if m.any():
                cat[m] = np.minimum(np.searchsorted(cdf, u[m] * cdf[-1], side="right"), len(cdf) - 1)
        return col, cat

    def sample_train(self, n, rng):
        """Training-by-sampling conditions: log-frequency category weights."""
        return self._draw(n, rng, self._log_cdf)

    def sample_original(self, n, rng):
        """Conditions matching the empirical category frequencies."""
        return self._draw(n, rng, self._raw_cdf)

    def matrix(self, col, cat):
        out = np.zeros((len(col), self.width))
        starts = np.array([self.offsets[c.name] for c in self.columns])
        out[np.arange(len(col)), starts[col] + cat] = 1.0
        return out

    def sample_rows(self, col, cat, rng):
        """A uniformly drawn training row carrying each requested category."""
        if self._rows is None:
            raise ConfigError("this sampler holds no training rows")
        idx = np.empty(len(col), dtype=np.int64)
        for i, (j, k) in enumerate(zip(col, cat)):
            rows = self._rows[self.columns[j].name][k]
            idx[i] = rows[rng.integers(len(rows))]
        return idx


# --------------------------------------------------------------------------- networks


def output_segments(schema: DataSchema, mode_models) -> list:
    segs = []
    for seg in encoding_layout(schema, mode_models):
        segs.append(("tanh" if seg.kind == "alpha" else "gumbel", seg.size))
    return segs


def build_generator(cfg: CtganConfig, n_cond: int, segments, rng) -> Network:
    d0 = cfg.z_dim + n_cond
    r1, r2, w3, w4 = cfg.generator_dims
    out_dim = sum(s for _, s in segments)
    root = Sequential(
        [
            ConcatSkip(Sequential([Dense(d0, r1, rng), BatchNorm(r1), Activation("relu")])),
            ConcatSkip(Sequential([Dense(d0 + r1, r2, rng), BatchNorm(r2), Activation("relu")])),
            Dense(d0 + r1 + r2, w3, rng),
            BatchNorm(w3),
            Activation("leaky_relu", cfg.leaky_ratio),
            Dense(w3, w4, rng),
            Activation("leaky_relu", cfg.leaky_ratio),
            Dense(w4, out_dim, rng),
            MixedOutput(segments, cfg.gumbel_temperature),
        ]
    )
    return Network(root, "generator")


def build_discriminator(cfg: CtganConfig, row_dim: int, n_cond: int, rng) -> Network:
    layers = []
    width = cfg.pac * (row_dim + n_cond)
    for h in cfg.discriminator_dims:
        layers += [Dense(width, h, rng), Activation("leaky_relu", cfg.leaky_ratio), Dropout(cfg.dropout_rate)]
        width = h
    layers.append(Dense(width, 1, rng))
    return Network(Sequential(layers), "discriminator")


def pack(rows, conds, pac):
    """Group consecutive rows into pacs: ``r_1 (+) ... (+) r_pac (+) c_1 (+) ... (+) c_pac``."""
    n = rows.shape[0]
    if n % pac:
        raise ConfigError(f"{n} rows cannot be split into pacs of {pac}")
    g = n // pac
    return np.concatenate([rows.reshape(g, -1), conds.reshape(g, -1)], axis=1)


def unpack_rows_grad(grad, pac, row_dim):
    return grad[:, : pac * row_dim].reshape(-1, row_dim)


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# --------------------------------------------------------------------------- estimator


class CTGAN(BaseEstimator):
    """Conditional tabular GAN over a :class:`~ctganru.tabular.Dataset`.

    Constructor arguments mirror :class:`CtganConfig` (``random_state`` is its
    ``seed``). After ``fit`` the estimator exposes ``schema_``,
    ``mode_models_``, ``generator_``, ``discriminator_``, ``cond_sampler_``
    and ``history_`` (one dict of mean losses per epoch).
    """

    def __init__(
        self,
        epochs=200,
        lr_generator=1e-4,
        lr_discriminator=5e-4,
        batch_size=500,
        pac=10,
        z_dim=128,
        gumbel_temperature=0.2,
        leaky_ratio=0.2,
        dropout_rate=0.2,
        generator_dims=(256, 256, 256, 128),
        discriminator_dims=(256, 256, 128, 64),
        max_modes=10,
        weight_threshold=0.005,
        random_state=0,
        verbose=False,
    ):
        self.epochs = epochs
        self.lr_generator = lr_generator
        self.lr_discriminator = lr_discriminator
        self.batch_size = batch_size
        self.pac = pac
        self.z_dim = z_dim
        self.gumbel_temperature = gumbel_temperature
        self.leaky_ratio = leaky_ratio
        self.dropout_rate = dropout_rate
        self.generator_dims = generator_dims
        self.discriminator_dims = discriminator_dims
        self.max_modes = max_modes
        self.weight_threshold = weight_threshold
        self.random_state = random_state
        self.verbose = verbose

    @classmethod
    def from_config(cls, cfg: CtganConfig, verbose=False) -> "CTGAN":
        d = cfg.to_dict()
        seed = d.pop("seed")
        for k in ("adam_beta1", "adam_beta2", "adam_eps"):
            d.pop(k)
        est = cls(random_state=seed, verbose=verbose, **d)
        est._adam = (cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
        return est

    def config(self) -> CtganConfig:
        beta1, beta2, eps = getattr(self, "_adam", (0.5, 0.9, 1e-8))
        return CtganConfig(
            epochs=self.epochs,
            lr_generator=self.lr_generator,
            lr_discriminator=self.lr_discriminator,
            batch_size=self.batch_size,
            pac=self.pac,
            z_dim=self.z_dim,
            gumbel_temperature=self.gumbel_temperature,
            leaky_ratio=self.leaky_ratio,
            dropout_rate=self.dropout_rate,
            seed=self.random_state,
            generator_dims=self.generator_dims,
            discriminator_dims=self.discriminator_dims,
            adam_beta1=beta1,
            adam_beta2=beta2,
            adam_eps=eps,
            max_modes=self.max_modes,
            weight_threshold=self.weight_threshold,
        )

    # -- setup ----------------------------------------------------------------

    def _setup(self, schema, mode_models, counts, codes=None):
        cfg = self.config_ = self.config()
        seeds = np.random.SeedSequence(cfg.seed).spawn(3)
        init_rng = np.random.default_rng(seeds[0])
        self.schema_ = schema
        self.mode_models_ = dict(mode_models)
        self.layout_ = encoding_layout(schema, self.mode_models_)
        self.row_dim_ = self.layout_[-1].stop
        self.cond_sampler_ = CondSampler(schema, counts, codes)
        n_cond = self.cond_sampler_.width
        self.generator_ = build_generator(cfg, n_cond, output_segments(schema, self.mode_models_), init_rng)
        self.discriminator_ = build_discriminator(cfg, self.row_dim_, n_cond, init_rng)
        self._seeds = seeds
        # start of each discrete column's block inside the encoded row
        self._block_start = np.array(
            [next(s.start for s in self.layout_ if s.column == c.name) for c in schema.discrete]
        )

    def fit(self, X: Dataset, y=None):
        """Fit mixtures, encode the data and run the adversarial training loop."""
        if not isinstance(X, Dataset):
            raise TypeError("CTGAN.fit expects a Dataset")
        cfg = self.config()
        if len(X) < cfg.pac:
            raise ConfigError(f"need at least pac={cfg.pac} rows to train, got {len(X)}")
        schema = X.schema
        if not schema.discrete:
            raise ConfigError("CTGAN needs at least one discrete column")
        for col in schema.discrete:
            if X.category_counts(col.name).sum() == 0:
                raise ConfigError(f"column {col.name!r} has no populated category")
        encoder = TabularEncoder(cfg.max_modes, cfg.weight_threshold, random_state=cfg.seed).fit(X)
        self._setup(
            schema,
            encoder.mode_models_,
            {c.name: X.category_counts(c.name) for c in schema.discrete},
            {c.name: X.codes(c.name) for c in schema.discrete},
        )
        encoded = encoder.transform(X, rng=np.random.default_rng(self._seeds[1]))
        self.history_ = []
        self._train(encoded, len(X), np.random.default_rng(self._seeds[2]))
        self.n_training_rows_ = len(X)
        return self

    # -- training ---------------------------------------------------------------

    def _train(self, encoded, n_rows, rng):
        cfg = self.config_
        G, D = self.generator_, self.discriminator_
        opt_g = Adam(G, cfg.lr_generator, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
        opt_d = Adam(D, cfg.lr_discriminator, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
        B, pac = cfg.batch_size, cfg.pac
        sampler = self.cond_sampler_
        steps = int(np.ceil(n_rows / B))
        rows_b = np.arange(B)
        for epoch in range(cfg.epochs):
            sums = np.zeros(3)
            for step in range(steps):
                # discriminator update
                col, cat = sampler.sample_train(B, rng)
                cond = sampler.matrix(col, cat)
                real = encoded[sampler.sample_rows(col, cat, rng)]
                z = rng.standard_normal((B, cfg.z_dim))
                fake = G.forward(np.concatenate([z, cond], axis=1), training=True, rng=rng)
                _clear_caches(G.root)
                scores = D.forward(
                    np.concatenate([pack(real, cond, pac), pack(fake, cond, pac)]), training=True, rng=rng
                )[:, 0]
                p = B // pac
                s_real, s_fake = scores[:p], scores[p:]
                loss_d = _softplus(-s_real).mean() + _softplus(s_fake).mean()
                grad = np.concatenate([(_sigmoid(s_real) - 1.0) / p, _sigmoid(s_fake) / p])[:, None]
                D.backward(grad)
                self._check_finite(loss_d, epoch, step, "discriminator")
                opt_d.step()

                # generator update
                col, cat = sampler.sample_train(B, rng)
                cond = sampler.matrix(col, cat)
                z = rng.standard_normal((B, cfg.z_dim))
                fake = G.forward(np.concatenate([z, cond], axis=1), training=True, rng=rng)
                s = D.forward(pack(fake, cond, pac), training=True, rng=rng)[:, 0]
                loss_adv = _softplus(-s).mean()
                g_packed = D.backward(((_sigmoid(s) - 1.0) / p)[:, None])
                grad_fake = unpack_rows_grad(g_packed, pac, self.row_dim_)
                pos = self._block_start[col] + cat
                prob = fake[rows_b, pos]
                safe = np.maximum(prob, 1e-12)
                loss_ce = -np.log(safe).mean()
                grad_fake[rows_b, pos] -= np.where(prob > 1e-12, 1.0 / (safe * B), 0.0)
                G.backward(grad_fake)
                self._check_finite(loss_adv + loss_ce, epoch, step, "generator")
                opt_g.step()
                sums += (loss_d, loss_adv, loss_ce)
            mean = sums / max(steps, 1)
            self.history_.append(
                {"epoch": epoch, "loss_d": float(mean[0]), "loss_g": float(mean[1]), "loss_ce": float(mean[2])}
            )
            if self.verbose:
                print(f"epoch {epoch + 1}/{cfg.epochs} D={mean[0]:.4f} G={mean[1]:.4f} CE={mean[2]:.4f}")

    @staticmethod
    def _check_finite(loss, epoch, step, net):
        if not np.isfinite(loss):
            raise NonFiniteError(f"non-finite {net} loss", where=f"epoch {epoch}, step {step}")

    # -- generation -------------------------------------------------------------

    def generate_encoded(self, n, condition=None, random_state=None):
        """Raw generator outputs (before decoding) and the cond vectors used."""
        check_is_fitted(self, "generator_")
        if n < 1:
            raise ConfigError("n must be >= 1")
        rng = np.random.default_rng(random_state)
        sampler = self.cond_sampler_
        if condition is not None:
            column, category = condition
            if isinstance(category, str):
                category = self.schema_.column(column).categories.index(category)
            fixed = build_cond_vector(self.schema_, column, category).values
        outs, conds = [], []
        B = self.config_.batch_size
        left = n
        while left > 0:
            b = min(B, left)
            if condition is None:
                cond = sampler.matrix(*sampler.sample_original(b, rng))
            else:
                cond = np.tile(fixed, (b, 1))
            z = rng.standard_normal((b, self.config_.z_dim))
            outs.append(self.generator_.forward(np.concatenate([z, cond], axis=1), training=False, rng=rng))
            conds.append(cond)
            left -= b
        return np.vstack(outs), np.vstack(conds)

    def sample(self, n, condition=None, random_state=None) -> Dataset:
        """Generate ``n`` schema-valid rows, optionally with a fixed ``(column, category)``."""
        raw, _ = self.generate_encoded(n, condition, random_state)
        return decode_matrix(raw, self.schema_, self.mode_models_)

    def discriminator_score(self, rows, conds) -> np.ndarray:
        """Sigmoid scores in (0, 1), one per pac of encoded rows."""
        check_is_fitted(self, "discriminator_")
        logits = self.discriminator_.forward(pack(rows, conds, self.config_.pac), training=False)[:, 0]
        return _sigmoid(logits)

    # -- persistence ------------------------------------------------------------

    def save(self, path) -> None:
        save_bundle(self, path)

    @classmethod
    def load(cls, path) -> "CTGAN":
        return load_bundle(path)


def _clear_caches(layer):
    layer._cache = None
    for sub in layer.sublayers():
        _clear_caches(sub)


def train(data: Dataset, config: CtganConfig, verbose=False) -> CTGAN:
    return CTGAN.from_config(config, verbose=verbose).fit(data)


def generate(model: CTGAN, n: int, condition=None, seed=None) -> Dataset:
    return model.sample(n, condition=condition, random_state=seed)


# --------------------------------------------------------------------------- bundle


def save_bundle(model: CTGAN, path) -> None:
    """Write a self-describing model file.

    Layout: magic line, little-endian uint32 version, uint64 header length,
    UTF-8 JSON header, then every array as contiguous little-endian float64
    in header order.
    """
    check_is_fitted(model, "generator_")
    arrays, index, offset = [], [], 0
    for net in (model.generator_, model.discriminator_):
        for name, arr in net.state_dict().items():
            a = np.ascontiguousarray(arr, dtype="<f8")
            index.append({"name": name, "shape": list(a.shape), "offset": offset, "count": int(a.size)})
            arrays.append(a)
            offset += a.size
    header = {
        "format": "ctganru-bundle",
        "version": BUNDLE_VERSION,
        "schema": model.schema_.to_dict(),
        "mode_models": {k: m.to_dict() for k, m in model.mode_models_.items()},
        "config": model.config_.to_dict(),
        "generator_spec": model.generator_.spec(),
        "discriminator_spec": model.discriminator_.spec(),
        "category_counts": {k: v.tolist() for k, v in model.cond_sampler_.counts.items()},
        "history": model.history_,
        "n_training_rows": model.n_training_rows_,
        "arrays": index,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(BUNDLE_MAGIC)
        fh.write(struct.pack("<IQ", BUNDLE_VERSION, len(blob)))
        fh.write(blob)
        for a in arrays:
            fh.write(a.tobytes())


def load_bundle(path) -> CTGAN:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"model bundle not found: {path}")
    with open(path, "rb") as fh:
        if fh.read(len(BUNDLE_MAGIC)) != BUNDLE_MAGIC:
            raise ConfigError(f"{path} is not a model bundle")
        version, hlen = struct.unpack("<IQ", fh.read(12))
        if version != BUNDLE_VERSION:
            raise ConfigError(f"unsupported bundle version {version}")
        header = json.loads(fh.read(hlen).decode("utf-8"))
        payload = np.frombuffer(fh.read(), dtype="<f8")
    state = {}
    for entry in header["arrays"]:
        a = payload[entry["offset"] : entry["offset"] + entry["count"]]
        if a.size != entry["count"]:
            raise ConfigError(f"truncated bundle {path}")
        state[entry["name"]] = a.reshape(entry["shape"]).astype(float)
    cfg = CtganConfig.from_dict(header["config"])
    model = CTGAN.from_config(cfg)
    schema = DataSchema.from_dict(header["schema"])
    mode_models = {k: ModeModel.from_dict(v) for k, v in header["mode_models"].items()}
    model._setup(schema, mode_models, header["category_counts"])
    model.generator_.load_state_dict(state)
    model.discriminator_.load_state_dict(state)
    model.history_ = header["history"]
    model.n_training_rows_ = header["n_training_rows"]
    return model
