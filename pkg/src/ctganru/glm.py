"""Maximum-likelihood binary and ordered logit with Wald inference.

Binary logit: ``logit(p) = b0 + x'b`` fitted by Newton-Raphson with
step-halving. Ordered logit: ``P(Y = m | x) = F(g_m - x'b) - F(g_{m-1} - x'b)``
with logistic ``F``; thresholds are optimized as ``g_1`` plus log-increments
so they stay strictly increasing. Both report the inverse observed
information as covariance.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, stats
from scipy.special import expit, log_expit
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .exceptions import ConfigError, ConvergenceError, SeparationError, SingularInformationError
from .tabular import Dataset

SEPARATION_BOUND = 25.0
SCORE_TOL = 1e-8
STEP_TOL = 1e-10


@dataclass
class DesignMatrix:
    """Feature matrix, names and response. ``intercept`` marks a leading ones column."""

    X: np.ndarray
    names: list
    y: np.ndarray
    intercept: bool = True

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y).astype(np.int64).reshape(-1)
        if self.X.ndim != 2:
            raise ConfigError("design matrix must be 2-D")
        if len(self.names) != self.X.shape[1]:
            raise ConfigError("one name per design column is required")
        if self.X.shape[0] != len(self.y):
            raise ConfigError("design rows and response length differ")
        if not np.all(np.isfinite(self.X)):
            raise ConfigError("design matrix has non-finite entries")
        if self.X.shape[0] < self.X.shape[1] + 1:
            raise ConfigError("need more rows than design columns")
        if self.y.min(initial=0) < 0:
            raise ConfigError("response codes must be non-negative")

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    @classmethod
    def from_arrays(cls, X, y, names=None, intercept=True) -> "DesignMatrix":
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        names = list(names) if names is not None else [f"x{j + 1}" for j in range(X.shape[1])]
        if intercept:
            X = np.column_stack([np.ones(len(X)), X])
            names = ["const"] + names
        return cls(X, names, y, intercept)


def design_from_dataset(data: Dataset, features=None, intercept=True) -> DesignMatrix:
    """Continuous columns as-is; each discrete feature dummy-coded against its first category."""
    schema = data.schema
    features = [c.name for c in schema.columns if c.name != schema.label_column] if features is None else features
    cols, names = [], []
    for name in features:
        col = schema.column(name)
        if name == schema.label_column:
            raise ConfigError("the label column cannot be a feature")
        if col.is_discrete:
            codes = data.codes(name)
            for k in range(1, col.n_categories):
                cols.append((codes == k).astype(float))
                names.append(f"{name}={col.categories[k]}")
        else:
            cols.append(data.column(name))
            names.append(name)
    X = np.column_stack(cols) if cols else np.empty((len(data), 0))
    return DesignMatrix.from_arrays(X, data.labels, names, intercept)


def _dependent_column(X):
    """Index of the first column that is a linear combination of earlier ones."""
    for j in range(1, X.shape[1] + 1):
        if np.linalg.matrix_rank(X[:, :j]) < j:
            return j - 1
    return None


def _solve_information(info, g, X, names):
    try:
        c = linalg.cho_factor(info)
    except linalg.LinAlgError:
        j = _dependent_column(X)
        raise SingularInformationError(
            "information matrix is singular" + (f"; column {names[j]!r} is collinear" if j is not None else ""),
            column=None if j is None else names[j],
        ) from None
    return linalg.cho_solve(c, g), c


# --------------------------------------------------------------------------- binary


@dataclass
class LogitFit:
    coef: np.ndarray
    cov: np.ndarray
    names: list
    loglik: float
    null_loglik: float
    converged: bool
    n_iter: int
    n_obs: int
    intercept: bool = True
    ll_trace: list = field(default_factory=list, repr=False)

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov))

    @property
    def mcfadden_r2(self) -> float:
        return 1.0 - self.loglik / self.null_loglik if self.null_loglik != 0 else 0.0

    @property
    def intercept_(self) -> float:
        return float(self.coef[0]) if self.intercept else 0.0

    @property
    def slopes(self) -> np.ndarray:
        return self.coef[1:] if self.intercept else self.coef


def _logit_ll(X, y, beta):
    eta = X @ beta
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def fit_binary_logit(design: DesignMatrix, max_iter: int = 100) -> LogitFit:
    """Newton-Raphson MLE; raises on separation, singular information or non-convergence."""
    X, y = design.X, design.y
    if np.any(y > 1):
        raise ConfigError("binary logit needs a 0/1 response")
    n1 = int(y.sum())
    if n1 == 0 or n1 == len(y):
        raise ConfigError("binary logit needs both classes present")
    beta = np.zeros(X.shape[1])
    ll = _logit_ll(X, y, beta)
    trace = [ll]
    converged = False
    for it in range(1, max_iter + 1):
        p = expit(X @ beta)
        g = X.T @ (y - p)
        if np.max(np.abs(g)) < SCORE_TOL:
            converged = True
            break
        info = (X * (p * (1 - p))[:, None]).T @ X
        step, _ = _solve_information(info, g, X, design.names)
        t = 1.0
        for _ in range(40):
            cand = beta + t * step
            ll_new = _logit_ll(X, y, cand)
            if ll_new >= ll - 1e-12 * abs(ll):
                break
            t *= 0.5
        beta, ll = cand, ll_new
        trace.append(ll)
        big = np.flatnonzero(np.abs(beta) > SEPARATION_BOUND)
        if big.size:
            name = design.names[big[0]]
            raise SeparationError(
                f"coefficient {name!r} exceeded |{SEPARATION_BOUND:g}| (quasi-complete separation)", coefficient=name
            )
        if np.max(np.abs(t * step)) < STEP_TOL * (1.0 + np.max(np.abs(beta))):
            converged = True
            break
    if not converged:
        raise ConvergenceError(f"binary logit did not converge in {max_iter} iterations")
    p = expit(X @ beta)
    info = (X * (p * (1 - p))[:, None]).T @ X
    _, c = _solve_information(info, np.eye(len(beta)), X, design.names)
    cov = linalg.cho_solve(c, np.eye(len(beta)))
    pbar = n1 / len(y)
    null = n1 * np.log(pbar) + (len(y) - n1) * np.log1p(-pbar)
    return LogitFit(
        coef=beta,
        cov=(cov + cov.T) / 2,
        names=list(design.names),
        loglik=ll,
        null_loglik=float(null),
        converged=True,
        n_iter=it,
        n_obs=len(y),
        intercept=design.intercept,
        ll_trace=trace,
    )


def predict_prob(fit: LogitFit, x) -> np.ndarray:
    """``1 / (1 + exp(-(b0 + x'b)))`` for feature rows without the intercept column."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    slopes = fit.slopes
    if x.shape[1] != len(slopes):
        raise ConfigError(f"expected {len(slopes)} features, got {x.shape[1]}")
    p = expit(fit.intercept_ + x @ slopes)
    return float(p[0]) if single else p


# --------------------------------------------------------------------------- ordered


@dataclass
class OrderedFit:
    coef: np.ndarray
    thresholds: np.ndarray
    cov: np.ndarray  # over (coef, thresholds)
    names: list
    loglik: float
    null_loglik: float
    converged: bool
    n_iter: int
    n_obs: int
    ll_trace: list = field(default_factory=list, repr=False)

    @property
    def n_classes(self) -> int:
        return len(self.thresholds) + 1

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov))

    @property
    def mcfadden_r2(self) -> float:
        return 1.0 - self.loglik / self.null_loglik if self.null_loglik != 0 else 0.0

    @property
    def param_names(self) -> list:
        return list(self.names) + [f"cut{m + 1}" for m in range(len(self.thresholds))]


def ordered_probs(X, coef, thresholds) -> np.ndarray:
    """Class probabilities, shape (n, M); rows sum to 1."""
    eta = np.asarray(X, dtype=float) @ np.asarray(coef, dtype=float)
    cum = expit(np.asarray(thresholds)[None, :] - eta[:, None])
    cum = np.column_stack([np.zeros(len(eta)), cum, np.ones(len(eta))])
    return np.diff(cum, axis=1)


def _theta_to_gamma(tail):
    return np.concatenate([[tail[0]], tail[0] + np.cumsum(np.exp(tail[1:]))])


def _gamma_to_theta(gamma):
    return np.concatenate([[gamma[0]], np.log(np.diff(gamma))])


def _cell_prob(a, b):
    """``F(a) - F(b)`` for ``a > b``, evaluated on the tail that avoids cancellation."""
    upper = b > 0
    p = np.where(upper, expit(-b) - expit(-a), expit(a) - expit(b))
    return np.maximum(p, 1e-300)


def _ordered_terms(X, y, beta, gamma):
    """Log-likelihood, gradient and Hessian in ``(beta, gamma)`` coordinates."""
    n, M1 = len(y), len(gamma)
    eta = X @ beta
    ext = np.concatenate([[-np.inf], gamma, [np.inf]])
    a = ext[y + 1] - eta
    b = ext[y] - eta
    P = _cell_prob(a, b)
    ll = float(np.sum(np.log(P)))

    def dens(u):
        F = expit(u)
        f = np.where(np.isfinite(u), F * (1 - F), 0.0)
        return f, f * (1 - 2 * F)

    fa, dfa = dens(a)
    fb, dfb = dens(b)
    la, lb = fa / P, -fb / P
    laa = dfa / P - la * la
    lbb = -dfb / P - lb * lb
    lab = -la * lb

    U = np.zeros((n, M1))
    L = np.zeros((n, M1))
    rows = np.arange(n)
    up, lo = y < M1, y > 0
    U[rows[up], y[up]] = 1.0
    L[rows[lo], y[lo] - 1] = 1.0

    g_beta = -X.T @ (la + lb)
    g_gamma = U.T @ la + L.T @ lb
    H_bb = (X * (laa + 2 * lab + lbb)[:, None]).T @ X
    H_bg = -X.T @ (U * (laa + lab)[:, None] + L * (lab + lbb)[:, None])
    H_gg = (U * laa[:, None]).T @ U + (L * lbb[:, None]).T @ L
    cross = (U * lab[:, None]).T @ L
    H_gg = H_gg + cross + cross.T
    g = np.concatenate([g_beta, g_gamma])
    H = np.block([[H_bb, H_bg], [H_bg.T, H_gg]])
    return ll, g, H


def fit_ordered_logit(design: DesignMatrix, M: int | None = None, max_iter: int = 200) -> OrderedFit:
    """Proportional-odds MLE by Newton in ``(beta, g_1, log increments)``."""
    if design.intercept:
        raise ConfigError("ordered logit takes no intercept column; thresholds play that role")
    X, y = design.X, design.y
    M = int(y.max()) + 1 if M is None else int(M)
    if M < 3:
        raise ConfigError("ordered logit needs M >= 3 classes")
    if y.max() >= M:
        raise ConfigError(f"response code {y.max()} out of range for M={M}")
    counts = np.bincount(y, minlength=M)
    if np.any(counts == 0):
        raise ConfigError(f"class {int(np.flatnonzero(counts == 0)[0])} is empty")
    p = X.shape[1]
    cum = np.cumsum(counts)[:-1] / len(y)
    gamma = np.log(cum / (1 - cum))
    null_ll = float(np.sum(counts * np.log(counts / len(y))))
    theta = np.concatenate([np.zeros(p), _gamma_to_theta(gamma)])

    def unpack(th):
        return th[:p], _theta_to_gamma(th[p:])

    def jac(th):
        # d gamma / d theta_tail: gamma_j = t_0 + sum_{m<=j} exp(t_m)
        e = np.exp(th[p + 1 :])
        J = np.zeros((M - 1, M - 1))
        J[:, 0] = 1.0
        for m in range(1, M - 1):
            J[m:, m] = e[m - 1]
        return J

    beta, gamma = unpack(theta)
    ll, g, H = _ordered_terms(X, y, beta, gamma)
    trace = [ll]
    converged = False
    names = list(design.names)
    for it in range(1, max_iter + 1):
        T = np.eye(p + M - 1)
        T[p:, p:] = jac(theta)
        g_t = T.T @ g
        if np.max(np.abs(g_t)) < SCORE_TOL:
            converged = True
            break
        # Gauss-Newton in theta: the dropped curvature of the reparameterization vanishes at the optimum
        info = -(T.T @ H @ T)
        step, _ = _solve_information(info, g_t, np.column_stack([X, np.ones((len(y), M - 1))]), names + [f"cut{m + 1}" for m in range(M - 1)])
        t = 1.0
        for _ in range(40):
            cand = theta + t * step
            b_c, g_c = unpack(cand)
            ll_c, g_new, H_new = _ordered_terms(X, y, b_c, g_c)
            if ll_c >= ll - 1e-12 * abs(ll):
                break
            t *= 0.5
        theta, ll, g, H = cand, ll_c, g_new, H_new
        trace.append(ll)
        beta, gamma = unpack(theta)
        big = np.flatnonzero(np.abs(beta) > SEPARATION_BOUND)
        if big.size:
            raise SeparationError(
                f"coefficient {names[big[0]]!r} exceeded |{SEPARATION_BOUND:g}| (quasi-complete separation)",
                coefficient=names[big[0]],
            )
        if np.max(np.abs(t * step)) < STEP_TOL * (1.0 + np.max(np.abs(theta))):
            converged = True
            break
    if not converged:
        raise ConvergenceError(f"ordered logit did not converge in {max_iter} iterations")
    beta, gamma = unpack(theta)
    try:
        cov = linalg.inv(-H)
    except linalg.LinAlgError:
        raise SingularInformationError("ordered-logit information matrix is singular") from None
    return OrderedFit(
        coef=beta,
        thresholds=gamma,
        cov=(cov + cov.T) / 2,
        names=names,
        loglik=ll,
        null_loglik=null_ll,
        converged=True,
        n_iter=it,
        n_obs=len(y),
        ll_trace=trace,
    )


# --------------------------------------------------------------------------- reporting


def stars(p: float) -> str:
    if p < 0.01:
        return "***"
    if p < 0.05:
        return "**"
    if p < 0.1:
        return "*"
    return ""


@dataclass
class InferenceReport:
    rows: list
    pseudo_r2: float
    loglik: float
    null_loglik: float
    n_obs: int
    kind: str

    def to_text(self) -> str:
        lines = [
            f"{self.kind} model, N = {self.n_obs}, log-likelihood = {self.loglik:.4f}",
            f"McFadden pseudo R-squared (1 - LL/LL0) = {self.pseudo_r2:.4f}",
            f"{'variable':<28}{'coef':>11}{'std.err':>11}{'z':>9}{'p-value':>10}",
        ]
        for r in self.rows:
            lines.append(
                f"{r['name']:<28}{r['coefficient']:>11.4f}{r['std_error']:>11.4f}{r['z']:>9.3f}{r['p_value']:>10.4f} {r['stars']}"
            )
        lines.append("*** p < 0.01; ** p < 0.05; * p < 0.1")
        return "\n".join(lines)

    def to_csv_rows(self) -> list:
        return [[r["name"], r["coefficient"], r["std_error"], r["z"], r["p_value"], r["stars"]] for r in self.rows]


def inference_report(fit) -> InferenceReport:
    """Wald z, two-sided normal p-values and significance stars for every parameter."""
    if not fit.converged:
        raise ConfigError("cannot report on an unconverged fit")
    if isinstance(fit, OrderedFit):
        est = np.concatenate([fit.coef, fit.thresholds])
        names, kind = fit.param_names, "ordered logit"
    else:
        est, names, kind = fit.coef, fit.names, "binary logit"
    se = fit.se
    z = est / se
    pv = 2 * stats.norm.sf(np.abs(z))
    rows = [
        {"name": n, "coefficient": float(b), "std_error": float(s), "z": float(zz), "p_value": float(pp), "stars": stars(pp)}
        for n, b, s, zz, pp in zip(names, est, se, z, pv)
    ]
    return InferenceReport(rows, fit.mcfadden_r2, fit.loglik, fit.null_loglik, fit.n_obs, kind)


# --------------------------------------------------------------------------- estimators


class BinaryLogit(ClassifierMixin, BaseEstimator):
    """Unpenalized logit estimator.

    Parameters
    ----------
    threshold : float
        Probability cut-off used by ``predict``.
    max_iter : int
    """

    def __init__(self, threshold=0.5, max_iter=100):
        self.threshold = threshold
        self.max_iter = max_iter

    def fit(self, X, y, feature_names=None):
        X, y = check_X_y(X, y)
        self.classes_ = np.unique(y)
        if len(self.classes_) != 2:
            raise ConfigError("BinaryLogit needs exactly two classes")
        yy = (y == self.classes_[1]).astype(int)
        self.fit_ = fit_binary_logit(DesignMatrix.from_arrays(X, yy, feature_names), self.max_iter)
        self.coef_ = self.fit_.slopes.copy()
        self.intercept_ = self.fit_.intercept_
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "fit_")
        p = predict_prob(self.fit_, check_array(X))
        return np.column_stack([1 - p, p])

    def predict(self, X):
        return self.classes_[(self.predict_proba(X)[:, 1] >= self.threshold).astype(int)]


class OrderedLogit(ClassifierMixin, BaseEstimator):
    """Proportional-odds estimator; classes are ordered as sorted labels."""

    def __init__(self, max_iter=200):
        self.max_iter = max_iter

    def fit(self, X, y, feature_names=None):
        X, y = check_X_y(X, y)
        self.classes_, codes = np.unique(y, return_inverse=True)
        d = DesignMatrix.from_arrays(X, codes, feature_names, intercept=False)
        self.fit_ = fit_ordered_logit(d, len(self.classes_), self.max_iter)
        self.coef_ = self.fit_.coef.copy()
        self.thresholds_ = self.fit_.thresholds.copy()
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "fit_")
        return ordered_probs(check_array(X), self.coef_, self.thresholds_)

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]
