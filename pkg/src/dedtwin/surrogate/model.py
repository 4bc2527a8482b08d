"""Bayesian LSTM temperature surrogate.

Two input paths feed a shared head:

* time-variant channels (DN_t, DL_t, LP_t, past temperature) run through
  a stack of LSTM layers and are pooled over time by single-query
  attention;
* time-invariant channels (T_birth, LP_birth) pass through one tanh
  dense layer.

The two summaries are concatenated, passed through a tanh fusion layer
and a linear output layer that emits the next ``horizon`` temperatures.

Monte Carlo dropout masks (inverted scaling, shared across time for the
recurrent outputs) are applied to the output of every hidden layer.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import ParameterError, ShapeError
from ..npzio import save_npz
from .layers import attention_backward, attention_pool, lstm_layer_backward, lstm_layer_forward

CHECKPOINT_VERSION = 1

# dropout sites, in forward order after the LSTM layers
_DENSE_SITES = ("attn", "static", "fusion")


@dataclass
class ModelConfig:
    n_inputs: int = 4
    n_static: int = 2
    hidden: int = 32
    n_layers: int = 2
    attn_dim: int | None = None
    static_width: int = 100
    fusion_width: int = 64
    window_len: int = 100
    horizon: int = 50
    dropout: float = 0.1

    def __post_init__(self):
        if not 0 <= self.dropout < 1:
            raise ParameterError("dropout rate must lie in [0, 1)")
        if self.n_layers < 1 or self.hidden < 1 or self.horizon < 1:
            raise ParameterError("n_layers, hidden and horizon must be >= 1")
        if self.horizon >= self.window_len:
            raise ParameterError("horizon must be shorter than window_len")
        if self.attn_dim is None:
            self.attn_dim = self.hidden

    @property
    def context_len(self) -> int:
        return self.window_len - self.horizon


@dataclass
class NormStats:
    """Per-channel mean/std for inputs and the temperature target."""

    x_mean: np.ndarray
    x_std: np.ndarray
    s_mean: np.ndarray
    s_std: np.ndarray
    y_mean: float
    y_std: float

    def __post_init__(self):
        for name in ("x_mean", "x_std", "s_mean", "s_std"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        if np.any(self.x_std <= 0) or np.any(self.s_std <= 0) or self.y_std <= 0:
            raise ParameterError("normalization stds must be positive")

    @classmethod
    def identity(cls, n_inputs=4, n_static=2) -> "NormStats":
        return cls(np.zeros(n_inputs), np.ones(n_inputs), np.zeros(n_static), np.ones(n_static), 0.0, 1.0)

    def to_dict(self) -> dict:
        return {
            "x_mean": self.x_mean.tolist(),
            "x_std": self.x_std.tolist(),
            "s_mean": self.s_mean.tolist(),
            "s_std": self.s_std.tolist(),
            "y_mean": float(self.y_mean),
            "y_std": float(self.y_std),
        }

    @classmethod
    def from_dict(cls, d) -> "NormStats":
        return cls(**d)


@dataclass
class Masks:
    lstm: list  # per layer, (B, H)
    dense: dict  # site -> (B, width)


class BayesianLSTM:
    def __init__(self, config: ModelConfig | None = None, seed=0, stats: NormStats | None = None):
        self.config = config or ModelConfig()
        self.stats = stats or NormStats.identity(self.config.n_inputs, self.config.n_static)
        self.params = self._init_params(np.random.default_rng(seed))
        self.log_sigma_obs = None  # set when the observation noise is learned

    # -- parameters ------------------------------------------------------
    def _init_params(self, rng) -> dict:
        c = self.config
        p = {}

        def uni(shape, fan_in):
            lim = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-lim, lim, size=shape)

        width = c.n_inputs
        for layer in range(c.n_layers):
            fan = width + c.hidden
            p[f"lstm{layer}_W"] = uni((fan, 4 * c.hidden), fan)
            b = uni((4 * c.hidden,), fan)
            b[c.hidden : 2 * c.hidden] = 1.0  # forget-gate bias
            p[f"lstm{layer}_b"] = b
            width = c.hidden
        p["attn_Wk"] = uni((c.hidden, c.attn_dim), c.hidden)
        p["attn_Wv"] = uni((c.hidden, c.attn_dim), c.hidden)
        p["attn_bv"] = uni((c.attn_dim,), c.hidden)
        p["attn_q"] = uni((c.attn_dim,), c.attn_dim)
        p["static_W"] = uni((c.n_static, c.static_width), c.n_static)
        p["static_b"] = uni((c.static_width,), c.n_static)
        fan = c.attn_dim + c.static_width
        p["fusion_W"] = uni((fan, c.fusion_width), fan)
        p["fusion_b"] = uni((c.fusion_width,), fan)
        p["out_W"] = uni((c.fusion_width, c.horizon), c.fusion_width)
        p["out_b"] = uni((c.horizon,), c.fusion_width)
        return p

    def weight_names(self) -> list:
        """Matrix-valued parameters (the ones the KL surrogate penalizes)."""
        return [k for k, v in self.params.items() if v.ndim == 2]

    def n_params(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def copy(self) -> "BayesianLSTM":
        m = BayesianLSTM.__new__(BayesianLSTM)
        m.config = ModelConfig(**asdict(self.config))
        m.stats = NormStats.from_dict(self.stats.to_dict())
        m.params = {k: v.copy() for k, v in self.params.items()}
        m.log_sigma_obs = self.log_sigma_obs
        return m

    # -- dropout -----------------------------------------------------------
    def sample_masks(self, batch: int, rng=None, dropout_on: bool = True) -> Masks:
        c = self.config
        widths = {"attn": c.attn_dim, "static": c.static_width, "fusion": c.fusion_width}
        p = c.dropout if dropout_on else 0.0
        if p == 0.0:
            ones = lambda w: np.ones((batch, w))  # noqa: E731
            return Masks([ones(c.hidden) for _ in range(c.n_layers)], {k: ones(w) for k, w in widths.items()})
        rng = np.random.default_rng(rng)
        keep = 1.0 - p

        def draw(w):
            return (rng.uniform(size=(batch, w)) < keep) / keep

        lstm = [draw(c.hidden) for _ in range(c.n_layers)]
        return Masks(lstm, {k: draw(widths[k]) for k in _DENSE_SITES})

    # -- forward / backward ---------------------------------------------
    def forward(self, x, s, masks: Masks | None = None):
        """Normalized inputs ``x`` (B, L, n_inputs), ``s`` (B, n_static) ->
        normalized predictions (B, horizon) and a cache for :meth:`backward`."""
        c = self.config
        p = self.params
        x = np.asarray(x, dtype=float)
        s = np.asarray(s, dtype=float)
        if x.ndim != 3 or x.shape[2] != c.n_inputs or s.shape != (x.shape[0], c.n_static):
            raise ShapeError(f"expected x (B, L, {c.n_inputs}) and s (B, {c.n_static}); got {x.shape}, {s.shape}")
        if masks is None:
            masks = self.sample_masks(x.shape[0], dropout_on=False)
        caches = []
        h = x
        for layer in range(c.n_layers):
            hseq, lc = lstm_layer_forward(h, p[f"lstm{layer}_W"], p[f"lstm{layer}_b"])
            m = masks.lstm[layer][:, None, :]
            caches.append((lc, m))
            h = hseq * m
        ctx, attn_w, ac = attention_pool(h, p["attn_Wk"], p["attn_Wv"], p["attn_bv"], p["attn_q"])
        ctx_d = ctx * masks.dense["attn"]
        u = np.tanh(s @ p["static_W"] + p["static_b"])
        u_d = u * masks.dense["static"]
        z = np.concatenate([ctx_d, u_d], axis=1)
        f = np.tanh(z @ p["fusion_W"] + p["fusion_b"])
        f_d = f * masks.dense["fusion"]
        y = f_d @ p["out_W"] + p["out_b"]
        cache = dict(lstm=caches, attn=ac, attn_w=attn_w, s=s, u=u, z=z, f=f, f_d=f_d, masks=masks)
        return y, cache

    def backward(self, cache, dy) -> dict:
        """Gradients of a scalar loss w.r.t. every parameter given dL/dy."""
        c = self.config
        p = self.params
        masks = cache["masks"]
        g = {}
        g["out_W"] = cache["f_d"].T @ dy
        g["out_b"] = dy.sum(0)
        df = (dy @ p["out_W"].T) * masks.dense["fusion"]
        dfz = df * (1.0 - cache["f"] ** 2)
        g["fusion_W"] = cache["z"].T @ dfz
        g["fusion_b"] = dfz.sum(0)
        dz = dfz @ p["fusion_W"].T
        A = c.attn_dim
        dctx = dz[:, :A] * masks.dense["attn"]
        du = dz[:, A:] * masks.dense["static"] * (1.0 - cache["u"] ** 2)
        g["static_W"] = cache["s"].T @ du
        g["static_b"] = du.sum(0)
        dH, g["attn_Wk"], g["attn_Wv"], g["attn_bv"], g["attn_q"] = attention_backward(
            dctx, cache["attn"]
        )
        for layer in reversed(range(c.n_layers)):
            lc, m = cache["lstm"][layer]
            dH, g[f"lstm{layer}_W"], g[f"lstm{layer}_b"] = lstm_layer_backward(dH * m, lc)
        return g

    # -- persistence -----------------------------------------------------
    def save(self, path) -> None:
        meta = {
            "version": CHECKPOINT_VERSION,
            "config": asdict(self.config),
            "stats": self.stats.to_dict(),
            "log_sigma_obs": self.log_sigma_obs,
            "shapes": {k: list(v.shape) for k, v in self.params.items()},
        }
        arrays = {k: np.ascontiguousarray(v, dtype="<f8") for k, v in self.params.items()}
        save_npz(path, __meta__=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8), **arrays)

    @classmethod
    def load(cls, path) -> "BayesianLSTM":
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(bytes(z["__meta__"]).decode())
            if meta.get("version") != CHECKPOINT_VERSION:
                raise ParameterError(f"unsupported checkpoint version {meta.get('version')}")
            m = cls.__new__(cls)
            m.config = ModelConfig(**meta["config"])
            m.stats = NormStats.from_dict(meta["stats"])
            m.log_sigma_obs = meta.get("log_sigma_obs")
            m.params = {k: z[k].astype(float) for k in meta["shapes"]}
        for k, shape in meta["shapes"].items():
            if list(m.params[k].shape) != shape:
                raise ShapeError(f"checkpoint array {k} has shape {m.params[k].shape}, expected {shape}")
        return m


@dataclass
class FeatureWindow:
    """One normalized model input.  ``target`` is optional (inference)."""

    tv: np.ndarray  # (L, n_inputs)
    ti: np.ndarray  # (n_static,)
    target: np.ndarray | None = None  # (horizon,)
    meta: dict = field(default_factory=dict)

    @property
    def window_len(self) -> int:
        return self.tv.shape[0]


def forward(model: BayesianLSTM, window, dropout_on: bool = False, seed=None) -> np.ndarray:
    """Normalized horizon prediction for a FeatureWindow (or a batch tuple ``(x, s)``)."""
    if isinstance(window, FeatureWindow):
        x, s = window.tv[None], window.ti[None]
        single = True
    else:
        x, s = window
        single = False
    masks = model.sample_masks(x.shape[0], np.random.default_rng(seed), dropout_on)
    y, _ = model.forward(x, s, masks)
    return y[0] if single else y
