"""Exact GP regression on scalar time series with a linear (dot-product) kernel.

The covariance is ``k(t, t') = sigma_l**2 * (t - c) * (t' - c)`` with a single
offset ``c`` shared by both arguments, so the Gram matrix is symmetric PSD and
has rank one.  Because of that, diagonal jitter is always needed before the
Cholesky factorization; see :func:`fit_posterior`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy import linalg
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .exceptions import FactorizationFailure, OptimizationDiverged

__all__ = [
    "LinearKernelParams",
    "TrainingSet",
    "GpPosterior",
    "Prediction",
    "SearchResult",
    "DEFAULT_BOUNDS",
    "JITTER_START",
    "JITTER_MAX",
    "kernel_eval",
    "gram_matrix",
    "fit_posterior",
    "predict",
    "predict_arrays",
    "log_marginal_likelihood",
    "search_hyperparams",
    "optimize_hyperparams",
    "LinearKernelGPRegressor",
]

LOG_2PI = math.log(2.0 * math.pi)

# relative to trace(K) / m
JITTER_START = 1e-8
JITTER_MAX = 1e-2

DEFAULT_BOUNDS = {
    "sigma_l": (1e-3, 1e3),
    "noise_var": (1e-8, 1e2),
    "c": (-10.0, 10.0),
}


@dataclass(frozen=True)
class LinearKernelParams:
    """Hyperparameters of the linear kernel plus Gaussian observation noise.

    Parameters
    ----------
    sigma_l : float
        Signal scale in feet per second; the kernel uses ``sigma_l**2``.
    c : float
        Time offset in seconds at which every sample path passes through 0.
    noise_var : float
        Observation-noise variance in square feet.
    """

    sigma_l: float
    c: float = 0.0
    noise_var: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.sigma_l) and self.sigma_l > 0):
            raise ValueError(f"sigma_l must be positive and finite, got {self.sigma_l!r}")
        if not math.isfinite(self.c):
            raise ValueError(f"c must be finite, got {self.c!r}")
        if not (math.isfinite(self.noise_var) and self.noise_var >= 0):
            raise ValueError(f"noise_var must be non-negative, got {self.noise_var!r}")

    def as_dict(self) -> dict[str, float]:
        return {"sigma_l": self.sigma_l, "c": self.c, "noise_var": self.noise_var}


@dataclass(frozen=True, eq=False)
class TrainingSet:
    """Ordered observations ``(t, y)`` tagged with the maneuver they came from.

    Times may repeat across maneuvers but ``(source, t)`` pairs must be unique.
    """

    times: np.ndarray
    values: np.ndarray
    sources: tuple[str, ...] = field(default=())

    def __post_init__(self):
        t = np.array(self.times, dtype=float).reshape(-1)
        y = np.array(self.values, dtype=float).reshape(-1)
        if t.size == 0:
            raise ValueError("TrainingSet needs at least one observation")
        if t.shape != y.shape:
            raise ValueError(f"times and values differ in length: {t.size} != {y.size}")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(y))):
            raise ValueError("TrainingSet contains non-finite entries")
        sources = tuple(self.sources) if len(self.sources) else ("",) * t.size
        if len(sources) != t.size:
            raise ValueError("one source tag per observation is required")
        if len(set(zip(sources, t.tolist()))) != t.size:
            raise ValueError("duplicate (source, t) pair in TrainingSet")
        t.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", y)
        object.__setattr__(self, "sources", sources)

    def __len__(self) -> int:
        return self.times.size

    @classmethod
    def from_arrays(cls, times, values, source: str = "") -> "TrainingSet":
        times = np.asarray(times, dtype=float).reshape(-1)
        return cls(times, values, (source,) * times.size)

    @classmethod
    def concat(cls, parts: Sequence["TrainingSet"]) -> "TrainingSet":
        parts = list(parts)
        return cls(
            np.concatenate([p.times for p in parts]),
            np.concatenate([p.values for p in parts]),
            tuple(s for p in parts for s in p.sources),
        )

    def times_from(self, source: str) -> np.ndarray:
        mask = np.fromiter((s == source for s in self.sources), bool, len(self.sources))
        return self.times[mask]


class Prediction(NamedTuple):
    t: float
    mean: float
    variance: float


@dataclass(frozen=True, eq=False)
class GpPosterior:
    """GP conditioned on a training set.

    ``factor`` is the lower Cholesky factor of ``K + (noise_var + jitter) I``
    and ``weights`` solves that system against the training targets.
    """

    params: LinearKernelParams
    train: TrainingSet
    factor: np.ndarray
    weights: np.ndarray
    jitter: float

    def predict(self, times) -> list[Prediction]:
        return predict(self, times)

    def regularized_gram(self) -> np.ndarray:
        K = gram_matrix(self.params, self.train.times)
        K[np.diag_indices_from(K)] += self.params.noise_var + self.jitter
        return K


def kernel_eval(params: LinearKernelParams, t: float, t2: float) -> float:
    return params.sigma_l**2 * (t - params.c) * (t2 - params.c)


def _cross_cov(params: LinearKernelParams, t1: np.ndarray, t2: np.ndarray) -> np.ndarray:
    # (a*b) * c with a*b shared keeps K[i, j] == K[j, i] bit for bit
    return np.multiply.outer(t1 - params.c, t2 - params.c) * params.sigma_l**2


def gram_matrix(params: LinearKernelParams, times) -> np.ndarray:
    times = np.asarray(times, dtype=float).reshape(-1)
    if times.size == 0:
        raise ValueError("gram_matrix needs at least one time point")
    return _cross_cov(params, times, times)


def _base_jitter(params: LinearKernelParams, times: np.ndarray, scale: float) -> float:
    tau = times - params.c
    return scale * params.sigma_l**2 * float(tau @ tau) / times.size


def _factorize(params: LinearKernelParams, times: np.ndarray, jitter_scale: float):
    K = gram_matrix(params, times)
    diag = np.diag_indices_from(K)
    base = K.copy()
    scale = jitter_scale
    while True:
        jitter = _base_jitter(params, times, scale)
        A = base.copy()
        A[diag] += params.noise_var + jitter
        try:
            L = linalg.cholesky(A, lower=True, check_finite=False)
        except linalg.LinAlgError:
            L = None
        if L is not None and np.all(np.diag(L) > 0):
            return L, jitter
        if scale >= JITTER_MAX * (1 - 1e-12):
            raise FactorizationFailure(
                f"regularized Gram matrix (m={times.size}) is not positive definite "
                f"with jitter up to {JITTER_MAX:g} * trace(K)/m"
            )
        scale = min(max(scale * 10.0, JITTER_START), JITTER_MAX)


def fit_posterior(
    params: LinearKernelParams, train: TrainingSet, jitter: float = JITTER_START
) -> GpPosterior:
    """Condition the zero-mean GP on ``train``.

    ``jitter`` is the starting diagonal regularization relative to
    ``trace(K) / m``; it is escalated by factors of 10 up to ``JITTER_MAX``
    before giving up with :class:`FactorizationFailure`.
    """
    L, used = _factorize(params, train.times, jitter)
    weights = linalg.cho_solve((L, True), train.values, check_finite=False)
    L.flags.writeable = False
    weights.flags.writeable = False
    return GpPosterior(params, train, L, weights, used)


def predict_arrays(post: GpPosterior, times) -> tuple[np.ndarray, np.ndarray]:
    """Predictive mean and latent variance at ``times`` as two arrays."""
    ts = np.asarray(times, dtype=float).reshape(-1)
    Ks = _cross_cov(post.params, post.train.times, ts)
    mean = Ks.T @ post.weights
    v = linalg.solve_triangular(post.factor, Ks, lower=True, check_finite=False)
    prior = post.params.sigma_l**2 * (ts - post.params.c) ** 2
    var = prior - np.einsum("ij,ij->j", v, v)
    return mean, np.maximum(var, 0.0)


def predict(post: GpPosterior, times) -> list[Prediction]:
    ts = np.asarray(times, dtype=float).reshape(-1)
    mean, var = predict_arrays(post, ts)
    return [Prediction(float(t), float(m), float(v)) for t, m, v in zip(ts, mean, var)]


def log_marginal_likelihood(
    params: LinearKernelParams, train: TrainingSet, jitter: float = JITTER_START
) -> float:
    post = fit_posterior(params, train, jitter)
    L = post.factor
    y = train.values
    return float(-0.5 * y @ post.weights - np.log(np.diag(L)).sum() - 0.5 * y.size * LOG_2PI)


def _lml_rank_one(
    sigma_l: float, c: float, noise_var: float, t: np.ndarray, y: np.ndarray, yy: float
) -> float:
    """Closed-form log evidence for ``a I + s tau tau^T`` (Sherman-Morrison).

    Agrees with :func:`log_marginal_likelihood` whenever the latter needs no
    jitter escalation; used as the cheap search objective.
    """
    m = t.size
    tau = t - c
    s = sigma_l * sigma_l
    tt = float(tau @ tau)
    ty = float(tau @ y)
    a = noise_var + JITTER_START * s * tt / m
    if not a > 0:
        return -math.inf
    b = a + s * tt
    quad = yy / a - s * ty * ty / (a * b)
    logdet = (m - 1) * math.log(a) + math.log(b)
    return -0.5 * quad - 0.5 * logdet - 0.5 * m * LOG_2PI


@dataclass(frozen=True)
class SearchResult:
    params: LinearKernelParams
    log_likelihood: float
    n_evals: int
    trace: tuple[float, ...]


def search_hyperparams(
    train: TrainingSet,
    init: LinearKernelParams,
    budget: int = 200,
    *,
    seed: int = 0,
    n_starts: int = 8,
    fix_c: bool = False,
    bounds: dict | None = None,
) -> SearchResult:
    """Maximize the log marginal likelihood with a multi-start compass search.

    The search runs over ``(log sigma_l, log noise_var, c)``.  ``init`` is the
    first start; ``n_starts - 1`` more are drawn uniformly in the box from
    ``seed``.  The three best starts get a short coordinate-wise refinement
    with step halving; the best of them continues until ``budget`` objective
    evaluations are spent.  Only strict improvements are accepted, so
    ``trace`` (values of the winning run's accepted iterates) is
    non-decreasing.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    bounds = {**DEFAULT_BOUNDS, **(bounds or {})}
    t, y = train.times, train.values
    yy = float(y @ y)
    lo = np.array([math.log(bounds["sigma_l"][0]), math.log(bounds["noise_var"][0]), bounds["c"][0]])
    hi = np.array([math.log(bounds["sigma_l"][1]), math.log(bounds["noise_var"][1]), bounds["c"][1]])
    free = np.array([True, True, not fix_c])

    def objective(z) -> float:
        return _lml_rank_one(math.exp(z[0]), float(z[2]), math.exp(z[1]), t, y, yy)

    try:
        init_val = log_marginal_likelihood(init, train)
    except FactorizationFailure:
        init_val = -math.inf
    n_evals = 1

    z_init = np.clip(
        [math.log(init.sigma_l), math.log(max(init.noise_var, bounds["noise_var"][0])), init.c],
        lo,
        hi,
    )
    if fix_c:
        z_init[2] = init.c
    rng = np.random.default_rng(seed)
    starts = [z_init] + [rng.uniform(lo, hi) for _ in range(n_starts - 1)]
    scored = []
    for cand in starts:
        if n_evals >= budget:
            break
        if fix_c:
            cand[2] = init.c
        scored.append((objective(cand), len(scored), cand))
        n_evals += 1

    def compass(z, z_val, step, n_max, trace):
        used = 0
        while used < n_max and np.any(step[free] > 1e-6):
            improved = False
            for i in np.flatnonzero(free):
                for sign in (1.0, -1.0):
                    if used >= n_max:
                        break
                    cand = z.copy()
                    cand[i] = np.clip(cand[i] + sign * step[i], lo[i], hi[i])
                    if cand[i] == z[i]:
                        continue
                    val = objective(cand)
                    used += 1
                    if val > z_val:
                        z, z_val = cand, val
                        trace.append(val)
                        improved = True
                        break
            if not improved:
                step = step * 0.5
        return z, z_val, step, used

    # short refinement of the best few starts, then the winner takes the rest
    scored.sort(key=lambda s: (-s[0], s[1]))
    leaders = [s for s in scored[:3] if math.isfinite(s[0])]
    step0 = np.array([0.5, 1.0, 0.25])
    runs = []
    share = (budget - n_evals) // (2 * len(leaders)) if len(leaders) > 1 else 0
    for val, _, z in leaders:
        trace = [val]
        z, val, step, used = compass(z, val, step0, share, trace)
        n_evals += used
        runs.append((val, z, step, trace))
    if runs:
        runs.sort(key=lambda r: -r[0])
        z_val, z, step, trace = runs[0]
        z, z_val, _, used = compass(z, z_val, step, budget - n_evals, trace)
        n_evals += used
    else:
        z, z_val, trace = z_init, -math.inf, []

    if not (math.isfinite(z_val) or math.isfinite(init_val)):
        raise OptimizationDiverged("no probed hyperparameters gave a finite likelihood")

    best_params, best_val = init, init_val
    if z_val > init_val:
        cand_params = LinearKernelParams(math.exp(z[0]), float(z[2]), math.exp(z[1]))
        try:
            exact = log_marginal_likelihood(cand_params, train)
        except FactorizationFailure:
            exact = -math.inf
        # the rank-one objective skips jitter escalation; confirm on the exact path
        if exact >= init_val:
            best_params, best_val = cand_params, exact
    return SearchResult(best_params, best_val, n_evals, tuple(trace))


def optimize_hyperparams(
    train: TrainingSet,
    init: LinearKernelParams,
    budget: int = 200,
    *,
    seed: int = 0,
    n_starts: int = 8,
    fix_c: bool = False,
    bounds: dict | None = None,
) -> LinearKernelParams:
    """Return hyperparameters whose evidence is never below that of ``init``."""
    return search_hyperparams(
        train, init, budget, seed=seed, n_starts=n_starts, fix_c=fix_c, bounds=bounds
    ).params


def _check_times(X, **kwargs) -> np.ndarray:
    X = check_array(X, ensure_2d=False, dtype=np.float64, **kwargs)
    if X.ndim == 2:
        if X.shape[1] != 1:
            raise ValueError(f"expected a single time feature, got {X.shape[1]} columns")
        X = X[:, 0]
    return X


class LinearKernelGPRegressor(RegressorMixin, BaseEstimator):
    """Scikit-learn style wrapper around the linear-kernel GP.

    ``X`` is a column of times (or a 1-D array), ``y`` the targets.  With
    ``optimize=True`` the hyperparameters are tuned by :func:`search_hyperparams`
    starting from ``(sigma_l, c, noise_var)``.

    Examples
    --------
    >>> import numpy as np
    >>> t = np.linspace(0.1, 3.0, 30)[:, None]
    >>> gp = LinearKernelGPRegressor(optimize=False, noise_var=1e-4).fit(t, 2 * t.ravel())
    >>> float(np.round(gp.predict([[4.0]])[0], 3))
    8.0
    """

    def __init__(
        self,
        sigma_l=3.0,
        c=0.0,
        noise_var=0.01,
        optimize=True,
        budget=200,
        n_starts=8,
        fix_c=False,
        random_state=0,
    ):
        self.sigma_l = sigma_l
        self.c = c
        self.noise_var = noise_var
        self.optimize = optimize
        self.budget = budget
        self.n_starts = n_starts
        self.fix_c = fix_c
        self.random_state = random_state

    def fit(self, X, y, groups=None):
        if np.ndim(X) == 1:
            X = np.asarray(X)[:, None]
        X, y = check_X_y(X, y, y_numeric=True)
        t = _check_times(X)
        if groups is None:
            train = TrainingSet(t, y, tuple(str(i) for i in range(t.size)))
        else:
            train = TrainingSet(t, y, tuple(str(g) for g in groups))
        init = LinearKernelParams(self.sigma_l, self.c, self.noise_var)
        if self.optimize:
            result = search_hyperparams(
                train, init, self.budget, seed=self.random_state,
                n_starts=self.n_starts, fix_c=self.fix_c,
            )
            self.params_ = result.params
        else:
            self.params_ = init
        self.posterior_ = fit_posterior(self.params_, train)
        self.log_marginal_likelihood_value_ = log_marginal_likelihood(self.params_, train)
        self.n_features_in_ = 1
        return self

    def predict(self, X, return_std=False):
        check_is_fitted(self, "posterior_")
        t = _check_times(X)
        mean, var = predict_arrays(self.posterior_, t)
        if return_std:
            return mean, np.sqrt(var)
        return mean
