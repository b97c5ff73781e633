"""Value network: a shared per-time reward encoder and learnable time weights.

    r_k = w2 . act(W1 f_k + b1) + b2          (same parameters at every k)
    V   = sum_k gamma[k] * r_k

with ``act`` a leaky rectifier.  Gradients are computed in closed form; the
parameter vector layout is ``W1 (row-major), b1, w2, b2, gamma``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import (
    ContractViolation,
    DimensionMismatchError,
    GridMismatchError,
    ModelFormatError,
    NonFiniteParameterError,
    VersionMismatchError,
)
from .scenario import N_FEATURES, N_TIMES, NormTable, default_time_grid

MODEL_FORMAT_VERSION = 1
N_HIDDEN = 15
DEFAULT_SLOPE = 0.05


def _arr(x) -> np.ndarray:
    return np.array(x, dtype=float)


@dataclass(eq=False)
class ValueModel:
    W1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: float
    gamma: np.ndarray
    slope: float = DEFAULT_SLOPE
    time_grid: np.ndarray = field(default_factory=default_time_grid)
    norm_table: NormTable = field(default_factory=NormTable.default)

    def __post_init__(self):
        self.W1, self.b1, self.w2, self.gamma = map(_arr, (self.W1, self.b1, self.w2, self.gamma))
        self.b2 = float(self.b2)
        self.time_grid = _arr(self.time_grid)
        H, F = self.W1.shape
        if self.b1.shape != (H,) or self.w2.shape != (H,):
            raise DimensionMismatchError(f"b1/w2 must have {H} entries")
        if self.gamma.shape != self.time_grid.shape:
            raise DimensionMismatchError(
                f"gamma has {self.gamma.size} entries for a {self.time_grid.size}-point time grid")
        if len(self.norm_table) != F:
            raise DimensionMismatchError(f"normalization table has {len(self.norm_table)} channels, W1 has {F}")
        if not all(np.all(np.isfinite(p)) for p in (self.W1, self.b1, self.w2, self.gamma, self.b2)):
            raise NonFiniteParameterError("model parameters must be finite")

    @property
    def n_hidden(self) -> int:
        return self.W1.shape[0]

    @property
    def n_features(self) -> int:
        return self.W1.shape[1]

    @property
    def n_times(self) -> int:
        return self.gamma.size

    @property
    def n_params(self) -> int:
        H, F = self.W1.shape
        return H * F + 2 * H + 1 + self.n_times

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.W1.ravel(), self.b1, self.w2, [self.b2], self.gamma])

    def with_vector(self, theta: np.ndarray) -> "ValueModel":
        H, F = self.W1.shape
        T = self.n_times
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_params,):
            raise DimensionMismatchError(f"expected {self.n_params} parameters, got {theta.shape}")
        i = H * F
        return replace(self, W1=theta[:i].reshape(H, F), b1=theta[i:i + H], w2=theta[i + H:i + 2 * H],
                       b2=float(theta[i + 2 * H]), gamma=theta[i + 2 * H + 1:i + 2 * H + 1 + T])

    def copy(self) -> "ValueModel":
        return self.with_vector(self.to_vector().copy())

    def equals(self, other: "ValueModel") -> bool:
        return (
            np.array_equal(self.to_vector(), other.to_vector())
            and self.slope == other.slope
            and np.array_equal(self.time_grid, other.time_grid)
            and np.array_equal(self.norm_table.center, other.norm_table.center)
            and np.array_equal(self.norm_table.scale, other.norm_table.scale)
        )

    def check_grid(self, time_grid) -> None:
        if not np.array_equal(self.time_grid, np.asarray(time_grid, dtype=float)):
            raise GridMismatchError("model was trained for a different time grid")

    def values(self, blocks) -> np.ndarray:
        """Scores for normalized blocks of shape ``(..., T, F)``."""
        return value_batch(self, blocks)


def init_model(seed: int = 0, n_features: int = N_FEATURES, n_hidden: int = N_HIDDEN,
               time_grid=None, norm_table: NormTable | None = None, slope: float = DEFAULT_SLOPE) -> ValueModel:
    """Fan-in-scaled uniform encoder weights, unit time weights."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x1417]))
    tg = default_time_grid() if time_grid is None else _arr(time_grid)
    lim1 = 1.0 / math.sqrt(n_features)
    lim2 = 1.0 / math.sqrt(n_hidden)
    norm = norm_table if norm_table is not None else (
        NormTable.default() if n_features == N_FEATURES else NormTable.identity(n_features))
    return ValueModel(
        W1=rng.uniform(-lim1, lim1, size=(n_hidden, n_features)),
        b1=rng.uniform(-lim1, lim1, size=n_hidden),
        w2=rng.uniform(-lim2, lim2, size=n_hidden),
        b2=0.0,
        gamma=np.ones(tg.size),
        slope=slope,
        time_grid=tg,
        norm_table=norm,
    )


def _act(z, slope):
    return np.where(z >= 0, z, slope * z)


def _check_input(model: ValueModel, x: np.ndarray, trailing: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim < trailing or x.shape[-1] != model.n_features:
        raise ContractViolation(f"expected {model.n_features} features per row, got shape {x.shape}")
    if trailing == 2 and x.shape[-2] != model.n_times:
        raise ContractViolation(f"expected {model.n_times} rows per block, got {x.shape[-2]}")
    if not np.all(np.isfinite(x)):
        raise ContractViolation("feature inputs must be finite")
    return x


def encode_reward(model: ValueModel, feature_row) -> float | np.ndarray:
    """Encoded per-time reward; accepts one row or any batch ``(..., F)``."""
    f = _check_input(model, feature_row, 1)
    r = _act(f @ model.W1.T + model.b1, model.slope) @ model.w2 + model.b2
    return float(r) if np.ndim(r) == 0 else r


def value_batch(model: ValueModel, blocks) -> np.ndarray:
    x = _check_input(model, blocks, 2)
    r = _act(x @ model.W1.T + model.b1, model.slope) @ model.w2 + model.b2
    return r @ model.gamma


def value(model: ValueModel, block) -> float:
    return float(value_batch(model, block))


def backward(model: ValueModel, blocks: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Gradient of ``sum_b upstream[b] * V(blocks[b])`` over the flat parameter vector.

    ``blocks`` is ``(B, T, F)`` and already validated.
    """
    z = blocks @ model.W1.T + model.b1  # (B, T, H)
    h = _act(z, model.slope)
    dh = np.where(z >= 0, 1.0, model.slope)
    r = h @ model.w2 + model.b2  # (B, T)
    g_bt = upstream[:, None] * model.gamma[None, :]  # dL/dr
    g_gamma = upstream @ r
    g_b2 = g_bt.sum()
    g_w2 = np.einsum("bt,bth->h", g_bt, h)
    g_z = g_bt[..., None] * dh * model.w2  # (B, T, H)
    g_b1 = g_z.sum(axis=(0, 1))
    g_W1 = np.einsum("bth,btf->hf", g_z, blocks)
    return np.concatenate([g_W1.ravel(), g_b1, g_w2, [g_b2], g_gamma])


def value_with_gradient(model: ValueModel, block) -> tuple[float, np.ndarray]:
    x = _check_input(model, block, 2)
    if x.ndim != 2:
        raise ContractViolation("value_with_gradient takes a single (T, F) block")
    v = value(model, x)
    return v, backward(model, x[None], np.ones(1))


def _value_extended(theta: np.ndarray, shape: tuple[int, int, int], slope: float, x: np.ndarray):
    """V evaluated in extended precision from a flat parameter vector."""
    H, F, T = shape
    th = theta.astype(np.longdouble)
    i = H * F
    W1, b1, w2 = th[:i].reshape(H, F), th[i:i + H], th[i + H:i + 2 * H]
    b2, gamma = th[i + 2 * H], th[i + 2 * H + 1:]
    z = x.astype(np.longdouble) @ W1.T + b1
    r = np.where(z >= 0, z, np.longdouble(slope) * z) @ w2 + b2
    return r @ gamma


def finite_difference_gradient(model: ValueModel, block, step: float = 1e-5):
    """Central differences of V, one-sided where a ±step move crosses a rectifier kink.

    Perturbed values are evaluated in extended precision so the difference
    quotient is not swamped by double rounding on small components.  Returns
    ``(gradient, one_sided_mask)``; entries with kinks on both sides are NaN.
    """
    x = np.asarray(block, dtype=float)
    theta = model.to_vector().astype(np.longdouble)
    H, F = model.W1.shape
    shape = (H, F, model.n_times)
    z = x @ model.W1.T + model.b1  # (T, H)
    h = np.longdouble(step)
    grad = np.empty(theta.size)
    one_sided = np.zeros(theta.size, dtype=bool)

    def f(th):
        return _value_extended(th, shape, model.slope, x)

    f0 = f(theta)
    for p in range(theta.size):
        # rate at which the pre-activations move with parameter p
        if p < H * F:
            hi, fi = divmod(p, F)
            dz, zc = x[:, fi], z[:, hi]
        elif p < H * F + H:
            dz, zc = np.ones(x.shape[0]), z[:, p - H * F]
        else:
            dz = zc = None
        up, down = theta.copy(), theta.copy()
        up[p] += h
        down[p] -= h
        if dz is not None:
            cross_up = np.any((zc >= 0) != (zc + step * dz >= 0))
            cross_down = np.any((zc >= 0) != (zc - step * dz >= 0))
        else:
            cross_up = cross_down = False
        if cross_up and cross_down:
            grad[p] = np.nan
            one_sided[p] = True
        elif cross_up:
            grad[p] = float((f0 - f(down)) / h)
            one_sided[p] = True
        elif cross_down:
            grad[p] = float((f(up) - f0) / h)
            one_sided[p] = True
        else:
            grad[p] = float((f(up) - f(down)) / (2 * h))
    return grad, one_sided


# -- model files ------------------------------------------------------------

def model_to_dict(model: ValueModel) -> dict:
    return {
        "format_version": MODEL_FORMAT_VERSION,
        "time_grid": model.time_grid.tolist(),
        "norm_table": model.norm_table.to_dict(),
        "slope": model.slope,
        "W1": model.W1.tolist(),
        "b1": model.b1.tolist(),
        "w2": model.w2.tolist(),
        "b2": model.b2,
        "gamma": model.gamma.tolist(),
    }


def model_from_dict(d: dict) -> ValueModel:
    if d.get("format_version") != MODEL_FORMAT_VERSION:
        raise VersionMismatchError(
            f"model format_version {d.get('format_version')!r}, expected {MODEL_FORMAT_VERSION}")
    try:
        arrays = {k: np.array(d[k], dtype=float) for k in ("W1", "b1", "w2", "gamma", "time_grid")}
        b2 = float(d["b2"])
        norm = d["norm_table"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"malformed model document: {exc!r}") from exc
    W1 = arrays["W1"]
    if W1.ndim != 2 or arrays["time_grid"].ndim != 1:
        raise DimensionMismatchError("W1 must be a matrix and time_grid a vector")
    if arrays["gamma"].shape != arrays["time_grid"].shape:
        raise DimensionMismatchError(
            f"gamma has {arrays['gamma'].size} entries, time grid has {arrays['time_grid'].size}")
    if arrays["time_grid"].size != N_TIMES:
        raise DimensionMismatchError(f"model time grid must have {N_TIMES} points")
    params = [W1, arrays["b1"], arrays["w2"], arrays["gamma"], np.array([b2])]
    if not all(np.all(np.isfinite(p)) for p in params):
        raise NonFiniteParameterError("model file contains non-finite parameters")
    try:
        table = NormTable.from_dict(norm)
    except (KeyError, ContractViolation) as exc:
        raise ModelFormatError(f"bad normalization table: {exc}") from exc
    return ValueModel(W1, arrays["b1"], arrays["w2"], b2, arrays["gamma"], float(d.get("slope", DEFAULT_SLOPE)),
                      arrays["time_grid"], table)


def save_model(model: ValueModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1) + "\n")


def load_model(path) -> ValueModel:
    try:
        # NaN/Infinity literals parse here and are rejected by the finiteness check
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"cannot read model {path}: {exc}") from exc
    return model_from_dict(d)
