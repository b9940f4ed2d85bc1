"""Bayesian optimisation of detector parameters for F1 at IoU 0.5.

The search runs in the unit cube: every parameter is an affine image of
``[0, 1]`` and integer parameters are rounded to the nearest integer only
when a point is decoded. A Gaussian process with a squared-exponential
kernel models the objective, and the next point maximises expected
improvement over a seeded batch of uniform candidates.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import linalg
from scipy.stats import norm

from rotorfp.errors import ContractViolation, ValidationError
from rotorfp.events import DEFAULT_WINDOW_US, SensorGeometry
from rotorfp.evaluation import MatchReport, score_frames
from rotorfp.fingerprint import DetectorParams
from rotorfp.pipeline import detect_stream
from rotorfp.segmentation import Box

log = logging.getLogger(__name__)

PARAM_ORDER = ("tau_sf", "tau_comb", "M", "delta_k", "h_min", "n_min", "A_min", "alpha")
INTEGER_PARAMS = frozenset({"M", "delta_k", "h_min", "n_min", "A_min"})

DEFAULT_BOUNDS = {
    "tau_sf": (0.3, 0.98),
    "tau_comb": (1.5, 6.0),
    "M": (4, 16),
    "delta_k": (0, 4),
    "h_min": (2, 8),
    "n_min": (2, 10),
    "A_min": (9, 196),
    "alpha": (3.0, 20.0),
}


@dataclass(frozen=True)
class SearchSpace:
    """Box bounds per tuned parameter.

    A parameter whose lower and upper bounds coincide is held fixed; its
    coordinate is carried along but ignored by the surrogate. ``base``
    supplies the untuned fields (``K``, ``omega_min``).
    """

    bounds: Mapping[str, tuple[float, float]] = field(default_factory=lambda: dict(DEFAULT_BOUNDS))
    base: DetectorParams = DetectorParams()

    def __post_init__(self):
        bounds = {}
        for name in PARAM_ORDER:
            lo, hi = self.bounds.get(name, DEFAULT_BOUNDS[name])
            if lo > hi:
                raise ValidationError(f"bounds for {name} are reversed: {lo} > {hi}")
            bounds[name] = (float(lo), float(hi))
        extra = set(self.bounds) - set(PARAM_ORDER)
        if extra:
            raise ValidationError(f"not tunable: {', '.join(sorted(extra))}")
        object.__setattr__(self, "bounds", bounds)

    @property
    def dim(self) -> int:
        return len(PARAM_ORDER)

    @property
    def active(self) -> np.ndarray:
        """Indices of coordinates with a non-degenerate range."""
        return np.array([i for i, n in enumerate(PARAM_ORDER) if self.bounds[n][0] < self.bounds[n][1]],
                        dtype=np.int64)

    def decode(self, point) -> DetectorParams:
        """Map a unit-cube point to parameters, rounding integer fields.

        ``h_min`` is clipped to ``M`` so every point decodes to a valid
        parameter set.
        """
        u = np.clip(np.asarray(point, dtype=np.float64), 0.0, 1.0)
        if u.shape != (self.dim,):
            raise ContractViolation(f"point must have {self.dim} coordinates")
        values = {}
        for ui, name in zip(u, PARAM_ORDER):
            lo, hi = self.bounds[name]
            v = lo + float(ui) * (hi - lo)
            values[name] = int(round(v)) if name in INTEGER_PARAMS else v
        values["h_min"] = min(values["h_min"], values["M"])
        return replace(self.base, **values)

    def encode(self, params: DetectorParams) -> np.ndarray:
        u = np.zeros(self.dim)
        for i, name in enumerate(PARAM_ORDER):
            lo, hi = self.bounds[name]
            u[i] = 0.0 if hi == lo else (getattr(params, name) - lo) / (hi - lo)
        return u

    @classmethod
    def from_dict(cls, data: Mapping, base: DetectorParams = DetectorParams()) -> "SearchSpace":
        try:
            return cls({k: (v[0], v[1]) for k, v in data.items()}, base)
        except (TypeError, IndexError) as exc:
            raise ValidationError(f"bad search space: {exc}") from None

    @classmethod
    def load(cls, path, base: DetectorParams = DetectorParams()) -> "SearchSpace":
        with open(path) as fh:
            return cls.from_dict(json.load(fh), base)


@dataclass
class TrialHistory:
    points: list[np.ndarray] = field(default_factory=list)
    values: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.values)

    def add(self, point, value: float) -> None:
        self.points.append(np.asarray(point, dtype=np.float64).copy())
        self.values.append(float(value))

    def best_index(self) -> int:
        # first occurrence wins ties, keeping the result independent of later trials
        return int(np.argmax(self.values))

    def best_so_far(self) -> np.ndarray:
        return np.maximum.accumulate(np.asarray(self.values, dtype=np.float64))

    def to_csv(self, space: SearchSpace) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iter", *PARAM_ORDER, "f1"])
        for i, (u, v) in enumerate(zip(self.points, self.values)):
            p = space.decode(u)
            w.writerow([i, *(repr(getattr(p, n)) for n in PARAM_ORDER), repr(v)])
        return buf.getvalue()


# ---------------------------------------------------------------- objective

@dataclass
class LabeledRecording:
    """Events of one recording with per-window ground-truth boxes."""

    events: np.ndarray
    geometry: SensorGeometry
    truth: Mapping[int, Sequence[Box]]
    t_len: int = DEFAULT_WINDOW_US
    t_end: int | None = None


def evaluate_objective(params: DetectorParams, dataset: Sequence[LabeledRecording],
                       iou_thresh: float = 0.5) -> float:
    """Micro-averaged F1 of the detector over every window of every recording."""
    if not dataset:
        raise ContractViolation("dataset is empty")
    total = MatchReport(0, 0, 0)
    for rec in dataset:
        dets, _ = detect_stream(rec.events, rec.geometry, params, rec.t_len, rec.t_end)
        preds = {d.window_index: d.boxes for d in dets}
        total += score_frames(preds, rec.truth, iou_thresh)
    return total.f1


# ---------------------------------------------------------------- surrogate

@dataclass(frozen=True)
class GPConfig:
    length_scale: float = 0.2
    noise: float = 1e-4
    n_candidates: int = 1024
    xi: float = 0.0


def _se_kernel(a: np.ndarray, b: np.ndarray, ell: float) -> np.ndarray:
    d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1)
    return np.exp(-0.5 * d2 / (ell * ell))


def expected_improvement(mu, sigma, best, xi=0.0):
    sigma = np.maximum(sigma, 1e-12)
    z = (mu - best - xi) / sigma
    return (mu - best - xi) * norm.cdf(z) + sigma * norm.pdf(z)


def gp_posterior(X: np.ndarray, y: np.ndarray, Xq: np.ndarray, cfg: GPConfig):
    """Posterior mean and standard deviation at ``Xq``, on standardised targets."""
    K = _se_kernel(X, X, cfg.length_scale) + cfg.noise * np.eye(X.shape[0])
    c = linalg.cho_factor(K, lower=True)
    alpha = linalg.cho_solve(c, y)
    Ks = _se_kernel(Xq, X, cfg.length_scale)
    mu = Ks @ alpha
    v = linalg.solve_triangular(c[0], Ks.T, lower=True)
    var = np.clip(1.0 - (v * v).sum(axis=0), 0.0, None)
    return mu, np.sqrt(var)


def propose(history: TrialHistory, space: SearchSpace, rng: np.random.Generator,
            n_random: int = 50, cfg: GPConfig = GPConfig()) -> np.ndarray:
    """Next point to evaluate.

    Uniform while the history holds fewer than ``n_random`` trials, then the
    expected-improvement maximiser among ``cfg.n_candidates`` uniform points.
    """
    if len(history) < n_random:
        return rng.random(space.dim)
    cands = rng.random((cfg.n_candidates, space.dim))
    act = space.active
    if act.size == 0:
        return cands[0]
    X = np.array(history.points)[:, act]
    y = np.asarray(history.values, dtype=np.float64)
    sd = y.std()
    ys = (y - y.mean()) / sd if sd > 0 else np.zeros_like(y)
    try:
        mu, sigma = gp_posterior(X, ys, cands[:, act], cfg)
    except (linalg.LinAlgError, ValueError) as exc:
        log.warning("GP fit failed (%s); falling back to a uniform sample", exc)
        return cands[0]
    ei = expected_improvement(mu, sigma, ys.max(), cfg.xi)
    return cands[int(np.argmax(ei))]


def run_bo(space: SearchSpace, n_random: int, n_bo: int,
           dataset: Sequence[LabeledRecording] | None = None, seed: int = 0,
           objective: Callable[[DetectorParams], float] | None = None,
           cfg: GPConfig = GPConfig(), callback=None):
    """Random warm-up followed by ``n_bo`` GP-EI steps.

    The objective defaults to :func:`evaluate_objective` on ``dataset``.
    Returns ``(best_params, history)``.
    """
    if n_random < 1 or n_bo < 0:
        raise ContractViolation("need n_random >= 1 and n_bo >= 0")
    if objective is None:
        if not dataset:
            raise ContractViolation("either a dataset or an objective is required")
        objective = lambda p: evaluate_objective(p, dataset)  # noqa: E731
    rng = np.random.default_rng(seed)
    history = TrialHistory()
    for i in range(n_random + n_bo):
        u = propose(history, space, rng, n_random, cfg)
        value = float(objective(space.decode(u)))
        history.add(u, value)
        if callback is not None:
            callback(i, space.decode(u), value)
    return space.decode(history.points[history.best_index()]), history
