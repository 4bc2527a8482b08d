"""Exact Gaussian process regression with an anisotropic RBF kernel.

Targets are standardized internally; posterior moments come back in the
caller's units.  Inputs are used as given, so callers working over
ProfileParams should map them to the unit box first.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import ConditioningError, ParameterError, ShapeError, StateError

MIN_NOISE = 1e-6
MAX_JITTER = 1e-2


@dataclass
class KernelHyper:
    signal_variance: float = 1.0
    lengthscales: np.ndarray = field(default_factory=lambda: np.ones(1))
    noise_variance: float = MIN_NOISE

    def __post_init__(self):
        self.lengthscales = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        if self.signal_variance <= 0 or np.any(self.lengthscales <= 0):
            raise ParameterError("kernel hyperparameters must be positive")
        self.noise_variance = max(float(self.noise_variance), MIN_NOISE)

    def to_dict(self) -> dict:
        return {
            "signal_variance": float(self.signal_variance),
            "lengthscales": [float(v) for v in self.lengthscales],
            "noise_variance": float(self.noise_variance),
        }

    def to_log_vector(self) -> np.ndarray:
        return np.log(np.concatenate([[self.signal_variance], self.lengthscales, [self.noise_variance]]))

    @classmethod
    def from_log_vector(cls, v) -> "KernelHyper":
        v = np.exp(np.asarray(v, dtype=float))
        return cls(signal_variance=v[0], lengthscales=v[1:-1], noise_variance=v[-1])


def rbf_kernel(p, q, hyper: KernelHyper) -> np.ndarray:
    """k(p, q) = s2 * exp(-0.5 * sum_d ((p_d - q_d) / l_d)^2).

    ``p`` and ``q`` may be single points (1-D) or stacks (2-D); the result
    has shape ``(len(p), len(q))`` for stacks and is a float for points.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    single = p.ndim == 1 and q.ndim == 1
    p2, q2 = np.atleast_2d(p), np.atleast_2d(q)
    if p2.shape[1] != q2.shape[1]:
        raise ShapeError(f"dimension mismatch: {p2.shape[1]} vs {q2.shape[1]}")
    ls = np.broadcast_to(hyper.lengthscales, (p2.shape[1],))
    diff = (p2[:, None, :] - q2[None, :, :]) / ls
    d2 = (diff * diff).sum(-1)
    k = hyper.signal_variance * np.exp(-0.5 * d2)
    return float(k[0, 0]) if single else k


def median_lengthscale(x: np.ndarray) -> float:
    if len(x) < 2:
        return 1.0
    d = np.sqrt(((x[:, None, :] - x[None, :, :]) ** 2).sum(-1))
    med = float(np.median(d[np.triu_indices(len(x), 1)]))
    return med if med > 0 else 1.0


class GPModel:
    """GP posterior over a fixed training set.

    Use :func:`fit` to build one; :meth:`posterior` answers queries.
    """

    def __init__(self, dim: int, hyper: KernelHyper | None = None, standardize: bool = True):
        self.dim = int(dim)
        self.hyper = hyper or KernelHyper(lengthscales=np.ones(self.dim))
        if len(self.hyper.lengthscales) == 1 and self.dim > 1:
            self.hyper.lengthscales = np.full(self.dim, self.hyper.lengthscales[0])
        self.standardize = standardize
        self.x = np.zeros((0, self.dim))
        self.y = np.zeros(0)
        self.y_mean = 0.0
        self.y_std = 1.0
        self.jitter = 0.0
        self._chol = None
        self._alpha = None
        self.fitted = False

    # -- data ------------------------------------------------------------
    def set_data(self, x, y):
        y = np.asarray(y, dtype=float).ravel()
        x = np.asarray(x, dtype=float)
        if x.size != len(y) * self.dim:
            raise ShapeError(f"{x.size} coordinates do not match {len(y)} values in {self.dim} dims")
        x = x.reshape(len(y), self.dim)
        if not np.all(np.isfinite(y)) or not np.all(np.isfinite(x)):
            raise ParameterError("training data must be finite")
        self.x, self.y = x, y
        if self.standardize and len(y) >= 1:
            self.y_mean = float(y.mean())
            s = float(y.std()) if len(y) >= 2 else 0.0
            self.y_std = s if s > 0 else 1.0
        else:
            self.y_mean, self.y_std = 0.0, 1.0
        self._chol = None
        self.fitted = False

    @property
    def y_std_space(self) -> np.ndarray:
        return (self.y - self.y_mean) / self.y_std

    def factorize(self):
        n = len(self.y)
        if n == 0:
            self._chol = np.zeros((0, 0))
            self._alpha = np.zeros(0)
            self.fitted = True
            return
        k = rbf_kernel(self.x, self.x, self.hyper)
        base = self.hyper.noise_variance
        jitter = 0.0
        while True:
            try:
                chol = linalg.cholesky(k + (base + jitter) * np.eye(n), lower=True)
                break
            except linalg.LinAlgError:
                jitter = MIN_NOISE if jitter == 0 else jitter * 10
                if jitter > MAX_JITTER:
                    raise ConditioningError(
                        f"kernel matrix not positive definite after jitter {MAX_JITTER:g}"
                    ) from None
        self.jitter = jitter
        self._chol = chol
        self._alpha = linalg.cho_solve((chol, True), self.y_std_space)
        self.fitted = True

    # -- inference -------------------------------------------------------
    def posterior(self, q, return_std: bool = True):
        """Posterior mean and std at query point(s) ``q`` in caller units."""
        if not self.fitted:
            raise StateError("GP has not been fitted")
        q = np.asarray(q, dtype=float)
        single = q.ndim == 1
        q2 = np.atleast_2d(q)
        if q2.shape[1] != self.dim:
            raise ShapeError(f"query has {q2.shape[1]} dims, model has {self.dim}")
        sv = self.hyper.signal_variance
        if len(self.y) == 0:
            mu = np.zeros(len(q2))
            var = np.full(len(q2), sv)
        else:
            ks = rbf_kernel(self.x, q2, self.hyper)
            mu = ks.T @ self._alpha
            v = linalg.solve_triangular(self._chol, ks, lower=True)
            var = sv - (v * v).sum(0)
        if np.any(var < -1e-10 * max(sv, 1.0)):
            raise ConditioningError(f"negative posterior variance {var.min():.3g}")
        sigma = np.sqrt(np.maximum(var, 0.0)) * self.y_std
        mu = mu * self.y_std + self.y_mean
        if single:
            return (float(mu[0]), float(sigma[0])) if return_std else float(mu[0])
        return (mu, sigma) if return_std else mu

    def log_marginal_likelihood(self) -> float:
        """-0.5 y'K^-1 y - 0.5 log|K| - n/2 log(2 pi), standardized targets."""
        if not self.fitted:
            raise StateError("GP has not been fitted")
        n = len(self.y)
        if n == 0:
            return 0.0
        y = self.y_std_space
        return float(
            -0.5 * y @ self._alpha
            - np.log(np.diag(self._chol)).sum()
            - 0.5 * n * math.log(2.0 * math.pi)
        )

    # -- persistence -----------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "points": self.x.tolist(),
            "values": self.y.tolist(),
            "standardize": self.standardize,
            "hyper": self.hyper.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "GPModel":
        h = d["hyper"]
        hyper = KernelHyper(h["signal_variance"], np.array(h["lengthscales"]), h["noise_variance"])
        gp = cls(d["dim"], hyper, d.get("standardize", True))
        gp.set_data(np.array(d["points"]).reshape(-1, d["dim"]), d["values"])
        gp.factorize()
        return gp


# search box for hyperparameters in log space: signal var, lengthscales, noise
_LOG_LO_SV, _LOG_HI_SV = math.log(1e-2), math.log(1e2)
_LOG_LO_LS, _LOG_HI_LS = math.log(1e-2), math.log(1e2)
_LOG_LO_NZ, _LOG_HI_NZ = math.log(MIN_NOISE), math.log(1.0)


def _clip_log(theta: np.ndarray) -> np.ndarray:
    out = theta.copy()
    out[0] = np.clip(out[0], _LOG_LO_SV, _LOG_HI_SV)
    out[1:-1] = np.clip(out[1:-1], _LOG_LO_LS, _LOG_HI_LS)
    out[-1] = np.clip(out[-1], _LOG_LO_NZ, _LOG_HI_NZ)
    return out


def _lml_at(gp: GPModel, theta: np.ndarray) -> float:
    gp.hyper = KernelHyper.from_log_vector(theta)
    try:
        gp.factorize()
    except ConditioningError:
        return -np.inf
    return gp.log_marginal_likelihood()


def optimize_hyper(gp: GPModel, starts=None, max_sweeps: int = 20) -> KernelHyper:
    """Multi-start coordinate search on the log marginal likelihood.

    Default starts: lengthscale = c * median pairwise distance for
    c in {0.5, 1, 2}, signal variance 1 and noise 1e-4.  Each coordinate
    tries steps of +/- delta in log space; delta starts at log 4 and halves
    whenever a full sweep brings no improvement, stopping below log 1.05.
    """
    if starts is None:
        med = median_lengthscale(gp.x)
        starts = [KernelHyper(1.0, np.full(gp.dim, c * med), 1e-4) for c in (0.5, 1.0, 2.0)]
    best_theta, best_val = None, -np.inf
    for start in starts:
        theta = _clip_log(start.to_log_vector())
        val = _lml_at(gp, theta)
        delta = math.log(4.0)
        sweeps = 0
        while delta > math.log(1.05) and sweeps < max_sweeps:
            improved = False
            for i in range(len(theta)):
                for sgn in (1.0, -1.0):
                    trial = theta.copy()
                    trial[i] += sgn * delta
                    trial = _clip_log(trial)
                    if trial[i] == theta[i]:
                        continue
                    v = _lml_at(gp, trial)
                    if v > val + 1e-12:
                        theta, val, improved = trial, v, True
                        break
            sweeps += 1
            if not improved:
                delta /= 2.0
        if best_theta is None or val > best_val:
            best_theta, best_val = theta, val
    return KernelHyper.from_log_vector(best_theta)


def fit(
    points,
    values,
    hyper: KernelHyper | None = None,
    hyper_opt: bool = False,
    standardize: bool = True,
    dim: int | None = None,
) -> GPModel:
    """Condition a GP on ``(points, values)``.

    Without ``hyper`` and without ``hyper_opt`` the lengthscale comes from
    the median pairwise distance, signal variance is 1 and noise is 1e-6.
    With no data at all ``dim`` (or ``hyper``) fixes the input dimension.
    """
    values = np.asarray(values, dtype=float).ravel()
    pts = np.asarray(points, dtype=float)
    if dim is None:
        if len(values):
            dim = pts.size // len(values)
        elif hyper is not None:
            dim = len(hyper.lengthscales)
        else:
            raise ParameterError("cannot infer dimension from an empty dataset")
    gp = GPModel(dim, standardize=standardize)
    gp.set_data(pts, values)
    if hyper is not None:
        ls = np.broadcast_to(hyper.lengthscales, (dim,)).copy()
        gp.hyper = KernelHyper(hyper.signal_variance, ls, hyper.noise_variance)
    elif hyper_opt and len(values) >= 2:
        gp.hyper = optimize_hyper(gp)
    else:
        gp.hyper = KernelHyper(1.0, np.full(dim, median_lengthscale(gp.x)), MIN_NOISE)
    gp.factorize()
    return gp


__all__ = [
    "KernelHyper",
    "GPModel",
    "rbf_kernel",
    "fit",
    "optimize_hyper",
    "median_lengthscale",
]
