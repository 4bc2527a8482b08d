"""ELBO objective, mini-batch training and evaluation for the surrogate.

The KL term of the MC-dropout variational family is realized as
``lam * sum ||W||^2`` over weight matrices (biases excluded).  The
likelihood is Gaussian with observation noise ``sigma_obs`` in
normalized temperature units.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import DegenerateInputError, ParameterError, ShapeError, TrainingDivergenceError
from .data import WindowDataset, denormalize_temp
from .model import BayesianLSTM

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class ElboTerms:
    log_lik: float
    kl: float
    n_points: int

    @property
    def loss(self) -> float:
        return -(self.log_lik - self.kl)


def kl_term(model: BayesianLSTM | None, lam: float) -> float:
    if model is None or lam == 0:
        return 0.0
    return float(lam * sum(np.sum(model.params[k] ** 2) for k in model.weight_names()))


def gaussian_log_lik(pred, target, sigma_obs: float) -> float:
    if sigma_obs <= 0:
        raise ParameterError("sigma_obs must be positive")
    r = np.asarray(target, dtype=float) - np.asarray(pred, dtype=float)
    n = r.size
    return float(-0.5 * np.sum(r * r) / sigma_obs**2 - n * math.log(sigma_obs) - 0.5 * n * LOG_2PI)


def elbo_loss(predictions, targets, model=None, sigma_obs: float = 0.05, lam: float = 1e-5) -> ElboTerms:
    predictions = np.asarray(predictions, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if predictions.shape != targets.shape:
        raise ShapeError(f"predictions {predictions.shape} and targets {targets.shape} differ")
    return ElboTerms(gaussian_log_lik(predictions, targets, sigma_obs), kl_term(model, lam), predictions.size)


@dataclass
class TrainConfig:
    epochs: int = 30
    batch: int = 32
    lr: float = 0.01
    seed: int = 0
    optimizer: str = "sgd"  # or "adam"
    clip: float | None = 1.0
    sigma_obs: float = 0.05
    lam: float = 1e-5
    learn_sigma: bool = False
    steps_per_epoch: int | None = None  # default: ceil(N / batch)

    def __post_init__(self):
        if self.epochs < 0 or self.batch < 1 or self.lr < 0:
            raise ParameterError("epochs >= 0, batch >= 1 and lr >= 0 required")
        if self.sigma_obs <= 0:
            raise ParameterError("sigma_obs must be positive")
        if self.optimizer not in ("sgd", "adam"):
            raise ParameterError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    log_lik: float
    kl: float


@dataclass
class TrainResult:
    curve: list = field(default_factory=list)

    @property
    def losses(self) -> np.ndarray:
        return np.array([r.loss for r in self.curve])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "loss", "log_lik", "kl"])
        for r in self.curve:
            w.writerow([r.epoch, repr(float(r.loss)), repr(float(r.log_lik)), repr(float(r.kl))])
        return buf.getvalue()


def loss_and_grads(model: BayesianLSTM, x, s, y, masks, sigma_obs: float, lam: float, n_total: int):
    """Per-point batch objective and its gradients.

    objective = -log_lik(batch) / n_batch + kl / n_total, an unbiased
    per-point estimate of the full negative ELBO.
    """
    pred, cache = model.forward(x, s, masks)
    r = pred - y
    n_b = r.size
    obj = (0.5 * np.sum(r * r) / sigma_obs**2) / n_b + math.log(sigma_obs) + 0.5 * LOG_2PI
    obj += kl_term(model, lam) / n_total
    grads = model.backward(cache, r / (sigma_obs**2 * n_b))
    if lam:
        for k in model.weight_names():
            grads[k] = grads[k] + (2.0 * lam / n_total) * model.params[k]
    # d obj / d log(sigma)
    g_sigma = 1.0 - np.sum(r * r) / (sigma_obs**2 * n_b)
    return obj, grads, g_sigma


def dataset_elbo(model: BayesianLSTM, data: WindowDataset, sigma_obs: float, lam: float, chunk: int = 256) -> ElboTerms:
    """Full-dataset ELBO terms with dropout off."""
    ll = 0.0
    for i in range(0, len(data), chunk):
        pred, _ = model.forward(data.x[i : i + chunk], data.s[i : i + chunk])
        ll += gaussian_log_lik(pred, data.y[i : i + chunk], sigma_obs)
    return ElboTerms(ll, kl_term(model, lam), data.y.size)


class _Adam:
    def __init__(self, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m, self.v, self.t = {}, {}, 0

    def update(self, params, grads):
        self.t += 1
        for k, g in grads.items():
            m = self.m.get(k, 0.0) * self.b1 + (1 - self.b1) * g
            v = self.v.get(k, 0.0) * self.b2 + (1 - self.b2) * g * g
            self.m[k], self.v[k] = m, v
            mh = m / (1 - self.b1**self.t)
            vh = v / (1 - self.b2**self.t)
            params[k] -= self.lr * mh / (np.sqrt(vh) + self.eps)


def _global_norm(grads) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))


def train(model: BayesianLSTM, data: WindowDataset, config: TrainConfig = TrainConfig(), callback=None):
    """Train ``model`` in place.  Returns ``(model, TrainResult)``.

    Each step draws ``batch`` windows uniformly with replacement, samples
    fresh dropout masks and takes one clipped gradient step.  After every
    epoch the full-dataset ELBO (dropout off) is appended to the curve.
    """
    if len(data) == 0:
        raise ParameterError("training dataset is empty")
    if data.horizon != model.config.horizon or data.x.shape[2] != model.config.n_inputs:
        raise ShapeError(
            f"dataset windows (horizon {data.horizon}, {data.x.shape[2]} channels) do not fit the model"
        )
    cfg = config
    rng = np.random.default_rng(cfg.seed)
    n = len(data)
    steps = cfg.steps_per_epoch or math.ceil(n / cfg.batch)
    n_total = data.y.size
    log_sigma = math.log(cfg.sigma_obs) if model.log_sigma_obs is None or not cfg.learn_sigma else model.log_sigma_obs
    adam = _Adam(cfg.lr) if cfg.optimizer == "adam" else None
    result = TrainResult()

    for epoch in range(1, cfg.epochs + 1):
        for it in range(steps):
            idx = rng.integers(0, n, size=cfg.batch)
            masks = model.sample_masks(cfg.batch, rng, dropout_on=True)
            sigma = math.exp(log_sigma)
            obj, grads, g_sigma = loss_and_grads(
                model, data.x[idx], data.s[idx], data.y[idx], masks, sigma, cfg.lam, n_total
            )
            gnorm = _global_norm(grads)
            if not (math.isfinite(obj) and math.isfinite(gnorm)):
                raise TrainingDivergenceError(
                    f"non-finite loss at epoch {epoch}, step {it}",
                    {"epoch": epoch, "step": it, "objective": obj, "grad_norm": gnorm, "sigma_obs": sigma},
                )
            if cfg.clip is not None and gnorm > cfg.clip:
                scale = cfg.clip / gnorm
                grads = {k: g * scale for k, g in grads.items()}
            if adam is not None:
                adam.update(model.params, grads)
            else:
                for k, g in grads.items():
                    model.params[k] -= cfg.lr * g
            if cfg.learn_sigma:
                log_sigma -= cfg.lr * g_sigma
        if cfg.learn_sigma:
            model.log_sigma_obs = log_sigma
        terms = dataset_elbo(model, data, math.exp(log_sigma), cfg.lam)
        if not math.isfinite(terms.loss):
            raise TrainingDivergenceError(
                f"non-finite epoch loss at epoch {epoch}", {"epoch": epoch, "log_lik": terms.log_lik, "kl": terms.kl}
            )
        rec = EpochRecord(epoch, terms.loss, terms.log_lik, terms.kl)
        result.curve.append(rec)
        if callback is not None:
            callback(rec)
    return model, result


def r2_score(pred, target) -> float:
    pred = np.asarray(pred, dtype=float).ravel()
    target = np.asarray(target, dtype=float).ravel()
    if target.size < 2:
        raise ParameterError("R2 needs at least two targets")
    ss_tot = float(np.sum((target - target.mean()) ** 2))
    if ss_tot == 0:
        raise DegenerateInputError("targets have zero variance; R2 is undefined")
    return 1.0 - float(np.sum((target - pred) ** 2)) / ss_tot


def predict_dataset(model: BayesianLSTM, data: WindowDataset, chunk: int = 256) -> np.ndarray:
    """Deterministic (dropout off) teacher-forced predictions in degrees C."""
    out = [model.forward(data.x[i : i + chunk], data.s[i : i + chunk])[0] for i in range(0, len(data), chunk)]
    return denormalize_temp(np.concatenate(out), data.stats)


def evaluate_r2(model: BayesianLSTM, data: WindowDataset) -> float:
    """Teacher-forced R2 over all held-out horizon points, in degrees C."""
    return r2_score(predict_dataset(model, data), data.targets_c())
