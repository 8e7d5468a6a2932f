"""Parameter-recovery simulations with known ground truth.

Features: ``X1, X2 ~ N(0, 1)`` and ``X3 ~ Bernoulli(0.2)``. Binary outcomes
follow ``Y ~ Bernoulli(expit(b0 + X'b))``; ordered outcomes threshold the
latent ``Y* = X'b + e`` with standard logistic ``e``. The intercept and the
thresholds are calibrated by bisection on a large pilot sample so the
simulated classes hit configured proportions.

A replication simulates a benchmark sample, optionally thins it into an
imbalanced training set, optionally rebalances it, fits the logit model and
scores the fitted class probabilities against the true ones on the benchmark
rows. AMSE averages the squared probability error over replications, rows
and classes.
"""
from __future__ import annotations

import logging
import zlib
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.special import expit

from .ctgan import CTGAN, CtganConfig
from .exceptions import ConfigError, NumericalError
from .glm import design_from_dataset, fit_binary_logit, fit_ordered_logit, ordered_probs
from .resampling import (
    ctgan_oversample_to_targets,
    ctgan_ru,
    random_undersample,
    ratio_targets,
    smote_nc_to_targets,
)
from .tabular import Dataset, make_schema

log = logging.getLogger(__name__)

FEATURES = ("x1", "x2", "x3")
MAX_FAILURE_RATE = 0.05


@dataclass
class DgpConfig:
    """Data-generating process.

    ``proportions`` are target class shares used to calibrate ``intercept``
    (binary) or ``thresholds`` (ordered) whenever those are left as ``None``.
    """

    n: int = 4000
    beta: tuple = (2.0, 2.0, 2.0)
    kind: str = "binary"
    n_classes: int = 2
    intercept: float | None = None
    thresholds: tuple | None = None
    proportions: tuple | None = None
    x3_prob: float = 0.2
    pilot_n: int = 100_000
    calibration_seed: int = 20240101
    seed: int = 0

    def __post_init__(self):
        self.beta = tuple(float(b) for b in self.beta)
        if self.thresholds is not None:
            self.thresholds = tuple(float(t) for t in self.thresholds)
        if self.proportions is not None:
            self.proportions = tuple(float(p) for p in self.proportions)
        if self.n < 100:
            raise ConfigError("DGP sample size must be >= 100")
        if len(self.beta) != 3:
            raise ConfigError("beta needs one slope per feature (x1, x2, x3)")
        if self.kind not in ("binary", "ordered"):
            raise ConfigError(f"unknown DGP kind {self.kind!r}")
        if self.kind == "binary":
            self.n_classes = 2
        elif self.n_classes < 3:
            raise ConfigError("ordered DGPs need n_classes >= 3")
        if self.proportions is not None:
            p = np.asarray(self.proportions)
            if len(p) != self.n_classes or np.any(p <= 0) or abs(p.sum() - 1) > 1e-9:
                raise ConfigError(f"proportions must be {self.n_classes} positive shares summing to 1")
        if self.thresholds is not None and (
            len(self.thresholds) != self.n_classes - 1 or np.any(np.diff(self.thresholds) <= 0)
        ):
            raise ConfigError("thresholds must be strictly increasing, one fewer than classes")

    def to_dict(self) -> dict:
        return asdict(self)


def draw_features(n, rng, x3_prob=0.2) -> np.ndarray:
    return np.column_stack([rng.standard_normal(n), rng.standard_normal(n), (rng.random(n) < x3_prob).astype(float)])


def _bisect(fn, target, lo=-60.0, hi=60.0, tol=1e-12):
    """Root of the increasing function ``fn(t) - target``."""
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if fn(mid) < target:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


def calibrate(config: DgpConfig) -> DgpConfig:
    """Fill in ``intercept`` / ``thresholds`` so expected class shares match ``proportions``.

    Expected shares are averaged over a pilot feature sample of ``pilot_n``
    rows drawn from ``calibration_seed``; equal shares are the default target.
    """
    if config.kind == "binary" and config.intercept is not None:
        return config
    if config.kind == "ordered" and config.thresholds is not None:
        return config
    props = np.asarray(config.proportions or np.full(config.n_classes, 1.0 / config.n_classes))
    X = draw_features(config.pilot_n, np.random.default_rng(config.calibration_seed), config.x3_prob)
    eta = X @ np.asarray(config.beta)
    if config.kind == "binary":
        b0 = _bisect(lambda b: expit(b + eta).mean(), props[1])
        return replace(config, intercept=float(b0))
    cum = np.cumsum(props)[:-1]
    gam = [_bisect(lambda g: expit(g - eta).mean(), c) for c in cum]
    return replace(config, thresholds=tuple(float(g) for g in gam))


@dataclass
class SimulatedData:
    data: Dataset
    true_probs: np.ndarray  # (n, M)
    config: DgpConfig

    @property
    def X(self) -> np.ndarray:
        return np.column_stack([self.data.column(f) for f in FEATURES])


def dgp_schema(kind: str, n_classes: int):
    labels = [str(m) for m in range(n_classes)]
    return make_schema(["x1", "x2"], {"x3": ["0", "1"], "y": labels}, "y", kind)


def true_probabilities(config: DgpConfig, X) -> np.ndarray:
    eta = np.asarray(X) @ np.asarray(config.beta)
    if config.kind == "binary":
        p = expit(config.intercept + eta)
        return np.column_stack([1.0 - p, p])
    return ordered_probs(X, config.beta, config.thresholds)


def _simulate(config: DgpConfig, seed) -> SimulatedData:
    config = calibrate(config)
    seed = config.seed if seed is None else seed
    schema = dgp_schema(config.kind, config.n_classes)
    for attempt in range(100):
        rng = np.random.default_rng([int(seed), attempt] if attempt else int(seed))
        X = draw_features(config.n, rng, config.x3_prob)
        P = true_probabilities(config, X)
        if config.kind == "binary":
            y = (rng.random(config.n) < P[:, 1]).astype(float)
        else:
            ystar = X @ np.asarray(config.beta) + rng.logistic(size=config.n)
            y = np.searchsorted(np.asarray(config.thresholds), ystar, side="left").astype(float)
        if len(np.unique(y)) == config.n_classes:
            break
        log.warning("seed %s draw %d missed a class; redrawing with the next sub-seed", seed, attempt)
    else:
        raise ConfigError("could not draw a sample containing every class")
    data = Dataset.from_columns(schema, {"x1": X[:, 0], "x2": X[:, 1], "x3": X[:, 2], "y": y})
    return SimulatedData(data, P, config)


def simulate_binary(config: DgpConfig, seed=None) -> SimulatedData:
    """Benchmark sample with the true ``P(Y = m | x)`` stored per row."""
    if config.kind != "binary":
        raise ConfigError("simulate_binary needs a binary DGP")
    return _simulate(config, seed)


def simulate_ordered(config: DgpConfig, seed=None) -> SimulatedData:
    if config.kind != "ordered":
        raise ConfigError("simulate_ordered needs an ordered DGP")
    return _simulate(config, seed)


def simulate(config: DgpConfig, seed=None) -> SimulatedData:
    return _simulate(config, seed)


# --------------------------------------------------------------------------- scenarios


@dataclass
class Scenario:
    """One Monte Carlo cell.

    ``imbalance`` thins the benchmark sample to the given class ratios (the
    largest subset with those ratios). ``method`` then rebalances it to
    ``ratio_targets(counts, ratios, multiplier)``; ``ru_first`` only matters
    for ``ctgan_ru`` and is implied by it.
    """

    name: str
    dgp: DgpConfig = field(default_factory=DgpConfig)
    imbalance: tuple | None = None
    method: str = "none"
    ratios: tuple | None = None
    multiplier: float = 2.0
    k_neighbors: int = 5
    ctgan: CtganConfig = field(default_factory=CtganConfig)
    train_on: str = "reduced"

    def __post_init__(self):
        if self.method not in ("none", "ru", "smote_nc", "ctgan", "ctgan_ru"):
            raise ConfigError(f"unknown method {self.method!r}")
        if self.method != "none" and self.ratios is None:
            raise ConfigError(f"scenario {self.name!r}: method {self.method!r} needs ratios")
        for attr in ("imbalance", "ratios"):
            v = getattr(self, attr)
            if v is not None:
                v = tuple(float(x) for x in v)
                if len(v) != self.dgp.n_classes or min(v) <= 0:
                    raise ConfigError(f"scenario {self.name!r}: {attr} needs {self.dgp.n_classes} positive entries")
                setattr(self, attr, v)


def imbalance_counts(counts, ratios) -> np.ndarray:
    """Largest per-class counts proportional to ``ratios`` that fit inside ``counts``."""
    counts = np.asarray(counts, dtype=float)
    ratios = np.asarray(ratios, dtype=float)
    scale = np.min(counts / ratios)
    return np.maximum(np.floor(ratios * scale + 1e-9), 1).astype(np.int64)


def sub_seed(seed: int, tag: str) -> int:
    return int(np.random.SeedSequence([int(seed), zlib.crc32(tag.encode())]).generate_state(1)[0])


def prepare_training(scenario: Scenario, sim: SimulatedData, seed: int, cache: dict | None = None) -> Dataset:
    """Imbalance, then rebalance, one replication's benchmark sample.

    With ``train_on="full"`` the CTGAN fitted to the imbalanced set is stored
    in ``cache`` so scenarios sharing that set and config reuse it.
    """
    data = sim.data
    if scenario.imbalance is not None:
        target = imbalance_counts(data.category_counts("y"), scenario.imbalance)
        data = random_undersample(data, target, seed=sub_seed(seed, "imbalance"))
    if scenario.method == "none":
        return data
    counts = data.category_counts("y")
    target = ratio_targets(counts, scenario.ratios, scenario.multiplier)
    cfg = replace(scenario.ctgan, seed=sub_seed(seed, "ctgan"))
    rs = sub_seed(seed, "resample")
    if scenario.method == "ru":
        return random_undersample(data, np.minimum(target, counts), rs)
    if scenario.method == "smote_nc":
        return smote_nc_to_targets(random_undersample(data, np.minimum(target, counts), rs), target,
                                   scenario.k_neighbors, rs)
    if scenario.method == "ctgan":
        return ctgan_oversample_to_targets(data, np.maximum(target, counts), cfg, rs)
    model = None
    if scenario.train_on == "full":
        key = (seed, scenario.imbalance, repr(cfg), scenario.dgp.n)
        if cache is not None and key in cache:
            model = cache[key]
        else:
            model = CTGAN.from_config(cfg).fit(data)
            if cache is not None:
                cache[key] = model
    return ctgan_ru(data, None, target, cfg, rs, train_on=scenario.train_on, model=model)


@dataclass
class Replication:
    index: int
    seed: int
    ok: bool
    coef: np.ndarray | None = None  # slopes (x1, x2, x3)
    cuts: np.ndarray | None = None  # intercept (binary) or thresholds (ordered)
    mse: float = float("nan")
    train_counts: tuple = ()
    error: str = ""
    pred_probs: np.ndarray | None = None
    true_probs: np.ndarray | None = None


def run_one(scenario: Scenario, index: int, base_seed: int, keep_probs: bool = False,
            cache: dict | None = None) -> Replication:
    seed = int(base_seed) + int(index)
    sim = simulate(scenario.dgp, seed)
    try:
        train = prepare_training(scenario, sim, seed, cache)
        counts = tuple(int(c) for c in train.category_counts("y"))
        X = sim.X
        if scenario.dgp.kind == "binary":
            fit = fit_binary_logit(design_from_dataset(train, FEATURES))
            coef, cuts = fit.slopes.copy(), np.array([fit.intercept_])
            p1 = expit(fit.intercept_ + X @ coef)
            pred = np.column_stack([1 - p1, p1])
        else:
            fit = fit_ordered_logit(design_from_dataset(train, FEATURES, intercept=False), scenario.dgp.n_classes)
            coef, cuts = fit.coef.copy(), fit.thresholds.copy()
            pred = ordered_probs(X, coef, cuts)
    except NumericalError as exc:
        return Replication(index, seed, False, error=f"{type(exc).__name__}: {exc}")
    mse = float(np.mean((sim.true_probs - pred) ** 2))
    return Replication(
        index, seed, True, coef, cuts, mse, counts,
        pred_probs=pred if keep_probs else None,
        true_probs=sim.true_probs if keep_probs else None,
    )


def amse(true_probs, pred_probs) -> float:
    """``(1/R) sum_r (1/N) sum_i (1/M) sum_m (P - P_hat)^2`` over matching (N, M) records."""
    t = [np.asarray(a, dtype=float) for a in true_probs]
    p = [np.asarray(a, dtype=float) for a in pred_probs]
    if not t or len(t) != len(p):
        raise ConfigError("amse needs the same non-zero number of true and predicted records")
    shape = t[0].shape
    for a, b in zip(t, p):
        if a.ndim != 2 or a.shape != shape or b.shape != shape:
            raise ConfigError("every replication record must share the same (N, M) shape")
    return float(np.mean([np.mean((a - b) ** 2) for a, b in zip(t, p)]))


def boxplot_stats(values) -> dict:
    """Mean, quartiles and Tukey whiskers (most extreme points within 1.5 IQR)."""
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        return {k: float("nan") for k in ("mean", "q1", "median", "q3", "whisker_low", "whisker_high")} | {"n": 0}
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    iqr = q3 - q1
    lo = v[v >= q1 - 1.5 * iqr].min()
    hi = v[v <= q3 + 1.5 * iqr].max()
    return {"mean": float(v.mean()), "q1": float(q1), "median": float(med), "q3": float(q3),
            "whisker_low": float(lo), "whisker_high": float(hi), "n": int(v.size)}


@dataclass
class ReplicationSummary:
    scenario: str
    replications: list
    dgp: DgpConfig

    @property
    def ok(self) -> list:
        return [r for r in self.replications if r.ok]

    @property
    def n_failed(self) -> int:
        return sum(not r.ok for r in self.replications)

    @property
    def amse(self) -> float:
        mses = [r.mse for r in self.ok]
        if not mses:
            raise NumericalError(f"scenario {self.scenario!r}: every replication failed")
        return float(np.mean(mses))

    @property
    def cut_names(self) -> list:
        return ["const"] if self.dgp.kind == "binary" else [f"cut{m + 1}" for m in range(self.dgp.n_classes - 1)]

    def estimates(self) -> dict:
        """``{parameter: array over successful replications}``."""
        ok = self.ok
        out = {f: np.array([r.coef[j] for r in ok]) for j, f in enumerate(FEATURES)}
        for j, c in enumerate(self.cut_names):
            out[c] = np.array([r.cuts[j] for r in ok])
        out["mse"] = np.array([r.mse for r in ok])
        return out

    def boxplot_table(self) -> list:
        return [{"scenario": self.scenario, "parameter": k} | boxplot_stats(v) for k, v in self.estimates().items()]

    def replication_rows(self) -> list:
        rows = []
        for r in self.replications:
            row = {"scenario": self.scenario, "replication": r.index, "seed": r.seed, "ok": r.ok, "mse": r.mse}
            names = list(FEATURES) + self.cut_names
            vals = list(r.coef) + list(r.cuts) if r.ok else [float("nan")] * len(names)
            row.update(dict(zip(names, vals)))
            row["train_counts"] = "/".join(str(c) for c in r.train_counts)
            row["error"] = r.error
            rows.append(row)
        return rows


class ReplicationFailure(NumericalError):
    def __init__(self, summary: ReplicationSummary):
        self.summary = summary
        super().__init__(
            f"scenario {summary.scenario!r}: {summary.n_failed} of {len(summary.replications)} replications "
            f"failed (limit {MAX_FAILURE_RATE:.0%})"
        )


def run_replications(scenario: Scenario, R: int, base_seed: int = 0, n_jobs: int = 1,
                     keep_probs: bool = False, indices=None) -> ReplicationSummary:
    """Run replications ``0..R-1`` (or ``indices``); replication ``r`` uses seed ``base_seed + r``.

    Fits that fail numerically are recorded, not dropped. More than 5% failures
    raises :class:`ReplicationFailure`.
    """
    if R < 1:
        raise ConfigError("R must be >= 1")
    scenario = replace(scenario, dgp=calibrate(scenario.dgp))
    idx = list(range(R)) if indices is None else [int(i) for i in indices]
    if n_jobs == 1:
        reps = [run_one(scenario, i, base_seed, keep_probs) for i in idx]
    else:
        from joblib import Parallel, delayed

        reps = Parallel(n_jobs=n_jobs)(delayed(run_one)(scenario, i, base_seed, keep_probs) for i in idx)
    reps.sort(key=lambda r: r.index)
    summary = ReplicationSummary(scenario.name, reps, scenario.dgp)
    if summary.n_failed > MAX_FAILURE_RATE * len(reps):
        raise ReplicationFailure(summary)
    return summary


def run_grid(scenarios, R: int, base_seed: int = 0, keep_probs: bool = False, indices=None,
             progress=None) -> dict:
    """Run several scenarios replication by replication.

    Scenarios that train CTGAN on the full imbalanced set share one fitted
    model per replication. Results equal running each scenario on its own.
    """
    if R < 1:
        raise ConfigError("R must be >= 1")
    scenarios = [replace(s, dgp=calibrate(s.dgp)) for s in scenarios]
    names = [s.name for s in scenarios]
    if len(set(names)) != len(names):
        raise ConfigError("scenario names must be unique")
    idx = list(range(R)) if indices is None else [int(i) for i in indices]
    reps = {s.name: [] for s in scenarios}
    for i in idx:
        cache = {}
        for s in scenarios:
            reps[s.name].append(run_one(s, i, base_seed, keep_probs, cache))
        if progress is not None:
            progress(i)
    out = {}
    for s in scenarios:
        summary = ReplicationSummary(s.name, reps[s.name], s.dgp)
        if summary.n_failed > MAX_FAILURE_RATE * len(idx):
            raise ReplicationFailure(summary)
        out[s.name] = summary
    return out


# --------------------------------------------------------------------------- standard designs


def binary_dgp(n=4000, prevalence=0.5, **kw) -> DgpConfig:
    return DgpConfig(n=n, kind="binary", proportions=(1 - prevalence, prevalence), **kw)


def ordered_dgp(n=6000, proportions=(1 / 3, 1 / 3, 1 / 3), **kw) -> DgpConfig:
    return DgpConfig(n=n, kind="ordered", n_classes=len(proportions), proportions=tuple(proportions), **kw)


RATIO_GRID = (1, 2, 4, 5, 8, 10)


def standard_scenarios(ctgan: CtganConfig | None = None, source_imbalance=20.0, train_on="full") -> list:
    """The binary, ratio-grid and ordered cells with their imbalanced comparators.

    The ratio grid thins a balanced benchmark to ``source_imbalance : 1`` and
    rebalances it by CTGAN-RU to ``r : 1`` with targets ``r * 2m : 2m`` where
    ``m`` is the minority count. With ``train_on="full"`` every grid cell of a
    replication draws its synthetic minority rows from one CTGAN fitted to the
    thinned set, so cells differ only in how many majority rows RU keeps.
    """
    ctgan = ctgan or CtganConfig()
    b, o = binary_dgp(), ordered_dgp()
    out = [
        Scenario("binary_balanced", b, (source_imbalance, 1), "ctgan_ru", (1, 1), 2.0, ctgan=ctgan, train_on=train_on),
        Scenario("binary_imbalanced_10", b, (10, 1)),
    ]
    for r in RATIO_GRID[1:]:
        out.append(
            Scenario(f"ratio_{r}", b, (source_imbalance, 1), "ctgan_ru", (r, 1), 2.0, ctgan=ctgan, train_on=train_on)
        )
    out += [
        Scenario("ordered_exp1_balanced", o, (5, 1, 1), "ctgan_ru", (1, 1, 1), 2.0, ctgan=ctgan, train_on=train_on),
        Scenario("ordered_exp1_imbalanced", o, (5, 1, 1)),
        Scenario("ordered_exp2_balanced", o, (5, 5, 1), "ctgan_ru", (1, 1, 1), 2.0, ctgan=ctgan, train_on=train_on),
        Scenario("ordered_exp2_imbalanced", o, (5, 5, 1)),
    ]
    return out
