"""Forecasters: constant-speed baseline, linear-kernel GP, and their compound."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from sklearn.base import BaseEstimator

from .exceptions import InsufficientPrefix
from .gp import (
    GpPosterior,
    LinearKernelParams,
    Prediction,
    TrainingSet,
    fit_posterior,
    optimize_hyperparams,
    predict,
)

MAX_HORIZON = 3.0
CURRENT = "current"


class ForecasterKind(str, Enum):
    CONSTANT_SPEED = "baseline"
    GP = "gp"
    COMPOUND = "compound"


@dataclass(frozen=True, eq=False)
class ForecastRequest:
    """Observed prefix of the ongoing maneuver and horizons (s) to forecast."""

    t: np.ndarray
    y: np.ndarray
    horizons: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float).reshape(-1)
        y = np.asarray(self.y, dtype=float).reshape(-1)
        h = np.asarray(self.horizons, dtype=float).reshape(-1)
        if t.shape != y.shape:
            raise ValueError("prefix times and values differ in length")
        if t.size == 0:
            raise InsufficientPrefix("empty observed prefix")
        if np.any(np.diff(t) <= 0):
            raise ValueError("prefix times must be strictly increasing")
        if h.size == 0:
            raise ValueError("at least one horizon is required")
        samples = h * 10.0
        if np.any(h <= 0) or np.any(h > MAX_HORIZON + 1e-9):
            raise ValueError(f"horizons must lie in (0, {MAX_HORIZON}] s")
        if np.any(np.abs(samples - np.round(samples)) > 1e-6):
            raise ValueError("horizons must be multiples of 0.1 s")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "horizons", h)

    @property
    def t_last(self) -> float:
        return float(self.t[-1])

    @property
    def target_times(self) -> np.ndarray:
        return self.t_last + self.horizons

    def as_training_set(self, source: str = CURRENT) -> TrainingSet:
        return TrainingSet.from_arrays(self.t, self.y, source)


def constant_speed_forecast(req: ForecastRequest, velocity_window: int = 2) -> list[Prediction]:
    """Extrapolate the last sample at a constant velocity.

    The velocity is the finite difference of the last two samples, or the
    least-squares slope over the last ``velocity_window`` samples when that is
    larger than 2.  Variance is reported as 0.
    """
    if velocity_window < 2:
        raise ValueError("velocity_window must be >= 2")
    if req.t.size < 2:
        raise InsufficientPrefix("constant-speed forecast needs at least 2 observations")
    if velocity_window == 2 or req.t.size == 2:
        v = (req.y[-1] - req.y[-2]) / (req.t[-1] - req.t[-2])
    else:
        tt = req.t[-velocity_window:]
        yy = req.y[-velocity_window:]
        v = np.polyfit(tt, yy, 1)[0]
    y_last = req.y[-1]
    return [
        Prediction(float(req.t_last + h), float(y_last + v * h), 0.0) for h in req.horizons
    ]


def fit_gp_forecaster(
    req: ForecastRequest,
    history_train: TrainingSet | None,
    init: LinearKernelParams,
    *,
    budget: int = 50,
    seed: int = 0,
    fix_c: bool = False,
) -> GpPosterior:
    """Posterior over the history plus the observed prefix, hyperparameters warm-started."""
    prefix = req.as_training_set()
    train = prefix if history_train is None else TrainingSet.concat([history_train, prefix])
    params = init
    if budget > 1:
        params = optimize_hyperparams(train, init, budget, seed=seed, fix_c=fix_c)
    return fit_posterior(params, train)


def gp_forecast(
    req: ForecastRequest,
    history_train: TrainingSet | None,
    init: LinearKernelParams,
    *,
    budget: int = 50,
    seed: int = 0,
    fix_c: bool = False,
) -> list[Prediction]:
    post = fit_gp_forecaster(req, history_train, init, budget=budget, seed=seed, fix_c=fix_c)
    return predict(post, req.target_times)


def select_compound(horizons, baseline: list, gp: list, threshold: float) -> list:
    """Baseline entries for ``h < threshold``, GP entries from the threshold on."""
    if not 0 < threshold <= MAX_HORIZON:
        raise ValueError(f"threshold must lie in (0, {MAX_HORIZON}] s")
    return [g if h >= threshold - 1e-9 else b for h, b, g in zip(horizons, baseline, gp)]


def compound_forecast(
    req: ForecastRequest,
    history_train: TrainingSet | None,
    init: LinearKernelParams,
    threshold: float = 1.0,
    *,
    velocity_window: int = 2,
    budget: int = 50,
    seed: int = 0,
    fix_c: bool = False,
) -> list[Prediction]:
    base = constant_speed_forecast(req, velocity_window)
    gp = gp_forecast(req, history_train, init, budget=budget, seed=seed, fix_c=fix_c)
    return select_compound(req.horizons, base, gp, threshold)


class ConstantSpeedForecaster(BaseEstimator):
    kind = ForecasterKind.CONSTANT_SPEED

    def __init__(self, velocity_window=2):
        self.velocity_window = velocity_window

    def forecast(self, request: ForecastRequest, history_train=None) -> list[Prediction]:
        return constant_speed_forecast(request, self.velocity_window)


class GpForecaster(BaseEstimator):
    """History-augmented GP forecaster; ``(sigma_l, c, noise_var)`` is the warm start."""

    kind = ForecasterKind.GP

    def __init__(self, sigma_l=3.0, c=0.0, noise_var=0.01, budget=50, fix_c=False, random_state=0):
        self.sigma_l = sigma_l
        self.c = c
        self.noise_var = noise_var
        self.budget = budget
        self.fix_c = fix_c
        self.random_state = random_state

    @property
    def init_params(self) -> LinearKernelParams:
        return LinearKernelParams(self.sigma_l, self.c, self.noise_var)

    def forecast(self, request: ForecastRequest, history_train=None) -> list[Prediction]:
        return gp_forecast(
            request, history_train, self.init_params,
            budget=self.budget, seed=self.random_state, fix_c=self.fix_c,
        )


class CompoundForecaster(BaseEstimator):
    kind = ForecasterKind.COMPOUND

    def __init__(
        self, threshold=1.0, velocity_window=2, sigma_l=3.0, c=0.0, noise_var=0.01,
        budget=50, fix_c=False, random_state=0,
    ):
        self.threshold = threshold
        self.velocity_window = velocity_window
        self.sigma_l = sigma_l
        self.c = c
        self.noise_var = noise_var
        self.budget = budget
        self.fix_c = fix_c
        self.random_state = random_state

    def forecast(self, request: ForecastRequest, history_train=None) -> list[Prediction]:
        return compound_forecast(
            request, history_train, LinearKernelParams(self.sigma_l, self.c, self.noise_var),
            self.threshold, velocity_window=self.velocity_window, budget=self.budget,
            seed=self.random_state, fix_c=self.fix_c,
        )
