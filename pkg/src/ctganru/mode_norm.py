"""Per-column Gaussian mixtures and mode-specific normalization.

A continuous value ``v`` is represented by the pair ``(alpha, mode)`` where
``mode`` is drawn from the mixture posterior at ``v`` and
``alpha = (v - mean[mode]) / (4 * std[mode])`` clipped to ``[-1, 1]``.

Mode indices are 0-based throughout the code.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .exceptions import ConfigError

STD_FLOOR = 1e-4
ALPHA_SCALE = 4.0
DEFAULT_MAX_MODES = 10
DEFAULT_WEIGHT_THRESHOLD = 0.005


@dataclass(frozen=True)
class ModeModel:
    """Fitted 1-D Gaussian mixture for one continuous column."""

    weights: np.ndarray
    means: np.ndarray
    stds: np.ndarray
    column: str = ""
    degenerate: bool = False
    # mean per-sample log-likelihood after every EM iteration of the selected fit
    ll_trace: tuple = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        for name in ("weights", "means", "stds"):
            arr = np.array(getattr(self, name), dtype=float).reshape(-1)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not (len(self.weights) == len(self.means) == len(self.stds) >= 1):
            raise ConfigError("mode model needs matching, non-empty weights/means/stds")
        if np.any(self.weights <= 0) or abs(self.weights.sum() - 1.0) > 1e-9:
            raise ConfigError("mode weights must be positive and sum to 1")
        if np.any(self.stds < STD_FLOOR * (1 - 1e-12)):
            raise ConfigError(f"mode stds must be >= {STD_FLOOR}")

    def __eq__(self, other):
        if not isinstance(other, ModeModel):
            return NotImplemented
        return (
            self.column == other.column
            and self.degenerate == other.degenerate
            and all(np.array_equal(getattr(self, k), getattr(other, k)) for k in ("weights", "means", "stds"))
        )

    __hash__ = None

    @property
    def n_modes(self) -> int:
        return len(self.weights)

    def log_joint(self, values) -> np.ndarray:
        """log(w_k * N(v | mu_k, sd_k)) as an (n, k) array."""
        v = np.asarray(values, dtype=float).reshape(-1, 1)
        z = (v - self.means) / self.stds
        return np.log(self.weights) - 0.5 * z * z - np.log(self.stds) - 0.5 * np.log(2 * np.pi)

    def responsibilities(self, values) -> np.ndarray:
        lj = self.log_joint(values)
        return np.exp(lj - logsumexp(lj, axis=1, keepdims=True))

    def log_likelihood(self, values) -> float:
        return float(logsumexp(self.log_joint(values), axis=1).mean())

    def to_dict(self) -> dict:
        return {
            "column": self.column,
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "stds": self.stds.tolist(),
            "degenerate": self.degenerate,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModeModel":
        return cls(
            weights=d["weights"],
            means=d["means"],
            stds=d["stds"],
            column=d.get("column", ""),
            degenerate=bool(d.get("degenerate", False)),
        )


def _em(x, k, max_iter, tol):
    n = len(x)
    mu = np.quantile(x, (np.arange(k) + 0.5) / k)
    sd = np.full(k, max(x.std() / k, STD_FLOOR))
    w = np.full(k, 1.0 / k)
    trace = []
    prev = -np.inf
    for _ in range(max_iter):
        z = (x[:, None] - mu) / sd
        lj = np.log(np.maximum(w, 1e-300)) - 0.5 * z * z - np.log(sd) - 0.5 * np.log(2 * np.pi)
        lse = logsumexp(lj, axis=1)
        ll = float(lse.mean())
        trace.append(ll)
        if ll - prev < tol:
            break
        prev = ll
        resp = np.exp(lj - lse[:, None])
        nk = resp.sum(axis=0)
        alive = nk > 1e-10
        w = nk / n
        new_mu = resp.T @ x / np.where(alive, nk, 1.0)
        mu = np.where(alive, new_mu, mu)
        var = (resp * (x[:, None] - mu) ** 2).sum(axis=0) / np.where(alive, nk, 1.0)
        # clipping the variance is the constrained M-step, so EM stays monotone
        sd = np.where(alive, np.sqrt(np.maximum(var, STD_FLOOR**2)), sd)
    return w, mu, sd, trace


def fit_vgm(
    values,
    max_modes: int = DEFAULT_MAX_MODES,
    weight_threshold: float = DEFAULT_WEIGHT_THRESHOLD,
    seed: int = 0,
    *,
    column: str = "",
    max_iter: int = 300,
    tol: float = 1e-6,
    max_fit_samples: int | None = 5000,
    patience: int = 2,
) -> ModeModel:
    """Fit a pruned Gaussian mixture to one continuous column.

    EM is run for every component count ``k = 1..max_modes`` and the count
    with the lowest BIC is kept (the search stops early once BIC has failed
    to improve ``patience`` times in a row). Components whose weight then
    falls below ``weight_threshold`` are dropped and the remaining weights
    renormalized.
    Columns longer than ``max_fit_samples`` are fitted on a seeded subsample.

    A constant column yields a single mode with ``std = STD_FLOOR`` and
    ``degenerate=True`` (a warning is also emitted).
    """
    x = np.asarray(values, dtype=float).reshape(-1)
    if x.size == 0:
        raise ConfigError(f"cannot fit a mixture to an empty column {column!r}")
    if not np.all(np.isfinite(x)):
        raise ConfigError(f"column {column!r} contains non-finite values")
    if max_modes < 1:
        raise ConfigError("max_modes must be >= 1")
    if np.ptp(x) == 0:
        warnings.warn(f"column {column!r} is constant; using a single degenerate mode")
        return ModeModel([1.0], [x[0]], [STD_FLOOR], column=column, degenerate=True)

    if max_fit_samples is not None and x.size > max_fit_samples:
        rng = np.random.default_rng(seed)
        x = x[np.sort(rng.choice(x.size, size=max_fit_samples, replace=False))]

    n = x.size
    best = None
    worse = 0
    for k in range(1, min(max_modes, n) + 1):
        w, mu, sd, trace = _em(x, k, max_iter, tol)
        bic = -2.0 * n * trace[-1] + (3 * k - 1) * np.log(n)
        if best is None or bic < best[0]:
            best = (bic, w, mu, sd, trace)
            worse = 0
        else:
            worse += 1
            if worse >= patience:
                break
    _, w, mu, sd, trace = best

    keep = w >= weight_threshold
    if not keep.any():
        keep = w == w.max()
    w = w[keep] / w[keep].sum()
    order = np.argsort(mu[keep], kind="stable")
    return ModeModel(
        weights=w[order],
        means=mu[keep][order],
        stds=sd[keep][order],
        column=column,
        ll_trace=tuple(trace),
    )


def normalize_many(values, model: ModeModel, rng: np.random.Generator):
    """Vectorized :func:`normalize`; returns ``(alpha, mode_index)`` arrays."""
    v = np.asarray(values, dtype=float).reshape(-1)
    resp = model.responsibilities(v)
    cum = np.cumsum(resp, axis=1)
    u = rng.random(len(v))[:, None] * cum[:, -1:]
    mode = np.minimum((u >= cum).sum(axis=1), model.n_modes - 1)
    alpha = (v - model.means[mode]) / (ALPHA_SCALE * model.stds[mode])
    return np.clip(alpha, -1.0, 1.0), mode


def normalize(value: float, model: ModeModel, rng: np.random.Generator):
    """Sample a mode from the posterior at ``value`` and scale within it."""
    alpha, mode = normalize_many([value], model, rng)
    return float(alpha[0]), int(mode[0])


def denormalize(alpha, mode_index, model: ModeModel):
    """``mean + 4 * std * alpha`` for the given mode; works on arrays too."""
    idx = np.asarray(mode_index)
    if np.any(idx < 0) or np.any(idx >= model.n_modes):
        raise IndexError(f"mode index out of range for a {model.n_modes}-mode model")
    out = model.means[idx] + ALPHA_SCALE * model.stds[idx] * np.asarray(alpha, dtype=float)
    return float(out) if np.ndim(out) == 0 else out
