"""Classification metrics, real-vs-synthetic distribution diagnostics and VIF."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .exceptions import ConfigError
from .tabular import Dataset

DEFAULT_BINS = 30


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def as_array(self) -> np.ndarray:
        """``[[TN, FP], [FN, TP]]`` (rows = truth, columns = prediction)."""
        return np.array([[self.tn, self.fp], [self.fn, self.tp]])


@dataclass
class MetricsReport:
    sensitivity: float
    specificity: float
    g_mean: float
    degenerate: bool = False
    per_class: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = {
            "sensitivity": self.sensitivity,
            "specificity": self.specificity,
            "g_mean": self.g_mean,
            "degenerate": self.degenerate,
        }
        if self.per_class:
            d["per_class"] = self.per_class
        return d


def g_mean(sensitivity: float, specificity: float) -> float:
    return float(np.sqrt(sensitivity * specificity))


def _ratio(num, den):
    return (num / den, False) if den > 0 else (0.0, True)


def score(y_true, y_pred, positive_class=1):
    """Binary confusion counts plus sensitivity, specificity and G-mean.

    A rate whose denominator is zero is reported as 0 with ``degenerate=True``.
    """
    yt = np.asarray(y_true).reshape(-1)
    yp = np.asarray(y_pred).reshape(-1)
    if yt.shape != yp.shape:
        raise ConfigError(f"y_true has {len(yt)} entries but y_pred has {len(yp)}")
    pos_t, pos_p = yt == positive_class, yp == positive_class
    cm = ConfusionMatrix(
        tp=int(np.sum(pos_t & pos_p)),
        fp=int(np.sum(~pos_t & pos_p)),
        fn=int(np.sum(pos_t & ~pos_p)),
        tn=int(np.sum(~pos_t & ~pos_p)),
    )
    sens, d1 = _ratio(cm.tp, cm.tp + cm.fn)
    spec, d2 = _ratio(cm.tn, cm.tn + cm.fp)
    return cm, MetricsReport(float(sens), float(spec), g_mean(sens, spec), d1 or d2)


def confusion_multiclass(y_true, y_pred, M: int) -> np.ndarray:
    yt = np.asarray(y_true, dtype=np.int64).reshape(-1)
    yp = np.asarray(y_pred, dtype=np.int64).reshape(-1)
    if yt.shape != yp.shape:
        raise ConfigError(f"y_true has {len(yt)} entries but y_pred has {len(yp)}")
    if yt.size and (min(yt.min(), yp.min()) < 0 or max(yt.max(), yp.max()) >= M):
        raise ConfigError(f"labels must lie in 0..{M - 1}")
    cm = np.zeros((M, M), dtype=np.int64)
    np.add.at(cm, (yt, yp), 1)
    return cm


def score_multiclass(y_true, y_pred, M: int):
    """One-vs-rest rates per class; overall G-mean is the geometric mean of per-class sensitivities."""
    if M < 3:
        raise ConfigError("score_multiclass needs M >= 3; use score for binary labels")
    cm = confusion_multiclass(y_true, y_pred, M)
    total = cm.sum()
    per_class, sens_all, degenerate = [], [], False
    for m in range(M):
        tp = cm[m, m]
        fn = cm[m].sum() - tp
        fp = cm[:, m].sum() - tp
        tn = total - tp - fn - fp
        sens, d1 = _ratio(tp, tp + fn)
        spec, d2 = _ratio(tn, tn + fp)
        degenerate |= d1 or d2
        sens_all.append(sens)
        per_class.append(
            {"class": m, "sensitivity": float(sens), "specificity": float(spec), "g_mean": g_mean(sens, spec),
             "degenerate": d1 or d2}
        )
    overall = float(np.prod(sens_all) ** (1.0 / M))
    macro_spec = float(np.mean([c["specificity"] for c in per_class]))
    return cm, MetricsReport(float(np.mean(sens_all)), macro_spec, overall, degenerate, per_class)


# --------------------------------------------------------------------------- diagnostics


@dataclass
class HistogramGrid:
    """Counts of two sources on shared bins.

    1-D grids carry ``edges`` (continuous) or ``labels`` (discrete); 2-D grids
    carry one entry per axis in ``edges``/``labels`` and count matrices.
    """

    columns: tuple
    real: np.ndarray
    synthetic: np.ndarray
    edges: list
    labels: list

    @property
    def ndim(self) -> int:
        return self.real.ndim


def _axis(real: Dataset, synthetic: Dataset, column: str, bins: int):
    """Codes for both sources on a shared axis, plus edges/labels for that axis."""
    if real.schema.column(column) != synthetic.schema.column(column):
        raise ConfigError(f"column {column!r} differs between the two schemas")
    col = real.schema.column(column)
    if col.is_discrete:
        return real.codes(column), synthetic.codes(column), col.n_categories, None, list(col.categories)
    if bins < 2:
        raise ConfigError("continuous histograms need bins >= 2")
    a, b = real.column(column), synthetic.column(column)
    pooled = np.concatenate([a, b])
    lo, hi = float(pooled.min()), float(pooled.max())
    if hi <= lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)

    def code(v):
        return np.clip(np.searchsorted(edges, v, side="right") - 1, 0, bins - 1)

    return code(a), code(b), bins, edges, None


def marginal_histogram(real: Dataset, synthetic: Dataset, column: str, bins: int = DEFAULT_BINS) -> HistogramGrid:
    """Shared-bin counts; discrete columns get one bin per category."""
    ca, cb, k, edges, labels = _axis(real, synthetic, column, bins)
    return HistogramGrid(
        (column,), np.bincount(ca, minlength=k), np.bincount(cb, minlength=k), [edges], [labels]
    )


def joint_density(real: Dataset, synthetic: Dataset, col_a: str, col_b: str, bins: int = DEFAULT_BINS) -> HistogramGrid:
    """Shared 2-D grid counts for a column pair (rows index ``col_a``)."""
    a1, b1, k1, e1, l1 = _axis(real, synthetic, col_a, bins)
    a2, b2, k2, e2, l2 = _axis(real, synthetic, col_b, bins)
    r = np.zeros((k1, k2), dtype=np.int64)
    s = np.zeros((k1, k2), dtype=np.int64)
    np.add.at(r, (a1, a2), 1)
    np.add.at(s, (b1, b2), 1)
    return HistogramGrid((col_a, col_b), r, s, [e1, e2], [l1, l2])


def tv_distance(p, q) -> float:
    """Total variation between two count (or weight) arrays after normalization."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.sum() <= 0 or q.sum() <= 0:
        raise ConfigError("both sources must be non-empty")
    return float(0.5 * np.abs(p / p.sum() - q / q.sum()).sum())


def divergence(grid: HistogramGrid) -> dict:
    """TV distance plus per-bin residuals ``p_real - p_synthetic``."""
    r = grid.real.astype(float)
    s = grid.synthetic.astype(float)
    if r.sum() <= 0 or s.sum() <= 0:
        raise ConfigError("both sources must be non-empty")
    resid = r / r.sum() - s / s.sum()
    return {"tv_distance": float(0.5 * np.abs(resid).sum()), "residuals": resid}


def count_dense_regions(counts, quantile: float = 50.0) -> int:
    """Connected (4-neighbour) regions of cells whose count exceeds the given percentile."""
    c = np.asarray(counts, dtype=float)
    mask = c > np.percentile(c, quantile)
    _, n = ndimage.label(mask)
    return int(n)


# --------------------------------------------------------------------------- VIF


def vif(X, names=None, intercept: bool | None = None) -> dict:
    """``1 / (1 - R^2_j)`` from regressing each feature on the others (with a constant).

    A leading all-ones column is treated as the intercept and skipped. Perfect
    collinearity gives ``inf`` rather than an error.
    """
    from .glm import DesignMatrix

    if isinstance(X, DesignMatrix):
        names = X.names if names is None else names
        intercept = X.intercept if intercept is None else intercept
        X = X.X
    X = np.asarray(X, dtype=float)
    names = list(names) if names is not None else [f"x{j + 1}" for j in range(X.shape[1])]
    if intercept is None:
        intercept = X.shape[1] > 0 and np.all(X[:, 0] == 1.0)
    if intercept:
        X, names = X[:, 1:], names[1:]
    if X.shape[1] < 2:
        raise ConfigError("VIF needs at least two features")
    const = np.flatnonzero(np.ptp(X, axis=0) == 0)
    if const.size:
        raise ConfigError(f"feature {names[const[0]]!r} is constant")
    out = {}
    ones = np.ones((len(X), 1))
    for j in range(X.shape[1]):
        y = X[:, j]
        others = np.hstack([ones, np.delete(X, j, axis=1)])
        coef, *_ = np.linalg.lstsq(others, y, rcond=None)
        resid = y - others @ coef
        ss_res = float(resid @ resid)
        ss_tot = float(((y - y.mean()) ** 2).sum())
        r2 = 1.0 - ss_res / ss_tot
        out[names[j]] = float("inf") if r2 >= 1.0 - 1e-10 else 1.0 / (1.0 - r2)
    return out
