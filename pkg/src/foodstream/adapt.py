"""Trainable feature adapter: two linear layers around a group-normalized
nonlinearity, a linear predictor head, and hand-derived gradients for two
self-supervised pairing losses (negative-cosine with stop-gradient, and
cross-correlation redundancy reduction).

No autodiff framework is used; every backward pass here is checked against
central finite differences in the test suite and by the ``gradcheck`` CLI.
"""
from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Callable, Sequence

import numpy as np

from .core import DataError, NumericalError, as_feature
from .replay import FeaturePair

_ZERO_NORM = 1e-30

LOSSES = ("simsiam", "barlow")


@dataclass
class AdapterParams:
    """Projection g (W1, b1, W2, b2) plus predictor head P; dim must divide by group_count."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    P: np.ndarray
    group_count: int = 8
    gn_eps: float = 1e-5
    activation: str = "relu"

    def __post_init__(self) -> None:
        d = self.W1.shape[0]
        for name in ("W1", "W2", "P"):
            mat = getattr(self, name)
            if mat.shape != (d, d):
                raise DataError(f"{name} must be {d}x{d}, got {mat.shape}")
        for name in ("b1", "b2"):
            vec = getattr(self, name)
            if vec.shape != (d,):
                raise DataError(f"{name} must have length {d}")
        if d % self.group_count != 0:
            raise DataError(f"dimension {d} is not divisible by group_count {self.group_count}")
        if self.activation != "relu":
            raise DataError(f"unsupported activation {self.activation!r}")
        if not all(np.all(np.isfinite(getattr(self, n))) for n in ("W1", "b1", "W2", "b2", "P")):
            raise DataError("adapter parameters must be finite")

    @property
    def dim(self) -> int:
        return self.W1.shape[0]

    def copy(self) -> "AdapterParams":
        return AdapterParams(
            W1=self.W1.copy(),
            b1=self.b1.copy(),
            W2=self.W2.copy(),
            b2=self.b2.copy(),
            P=self.P.copy(),
            group_count=self.group_count,
            gn_eps=self.gn_eps,
            activation=self.activation,
        )


@dataclass
class AdapterGrads:
    """Gradients shaped like the trainable tensors of AdapterParams."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    P: np.ndarray

    TENSORS = ("W1", "b1", "W2", "b2", "P")

    @classmethod
    def zeros_like(cls, params: AdapterParams) -> "AdapterGrads":
        return cls(
            W1=np.zeros_like(params.W1),
            b1=np.zeros_like(params.b1),
            W2=np.zeros_like(params.W2),
            b2=np.zeros_like(params.b2),
            P=np.zeros_like(params.P),
        )

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(getattr(self, n))) for n in self.TENSORS)


@dataclass(frozen=True)
class OptimConfig:
    learning_rate: float = 0.001
    weight_decay: float = 0.0001
    loss: str = "simsiam"
    barlow_lambda: float = 0.005

    def __post_init__(self) -> None:
        if not self.learning_rate > 0:
            raise DataError("learning_rate must be positive")
        if self.weight_decay < 0:
            raise DataError("weight_decay must be >= 0")
        if self.loss not in LOSSES:
            raise DataError(f"loss must be one of {LOSSES}, got {self.loss!r}")


def init_adapter(
    dim: int,
    group_count: int = 8,
    rng: np.random.Generator | None = None,
    init_scale: float = 0.01,
) -> AdapterParams:
    """Near-identity initialization: identity + N(0, init_scale^2) entries, zero biases.

    Keeps the freshly built classifier indistinguishable from the raw-feature
    baseline at the first time steps.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    eye = np.eye(dim)
    return AdapterParams(
        W1=eye + rng.normal(0.0, init_scale, size=(dim, dim)),
        b1=np.zeros(dim),
        W2=eye + rng.normal(0.0, init_scale, size=(dim, dim)),
        b2=np.zeros(dim),
        P=eye + rng.normal(0.0, init_scale, size=(dim, dim)),
        group_count=group_count,
    )


def group_normalize(v, groups: int, eps: float = 1e-5) -> np.ndarray:
    """Standardize ``v`` within each of ``groups`` contiguous groups: (x - mu)/sqrt(var + eps)."""
    arr = as_feature(v)
    if eps <= 0:
        raise DataError("eps must be positive")
    if arr.size % groups != 0:
        raise DataError(f"length {arr.size} is not divisible by {groups} groups")
    return _gn_rows(arr[None, :], groups, eps)[0][0]


def _gn_rows(x: np.ndarray, groups: int, eps: float) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise group standardization. Returns (xhat, inv_std per row-group)."""
    n, d = x.shape
    g = x.reshape(n, groups, d // groups)
    mu = g.mean(axis=2, keepdims=True)
    var = g.var(axis=2, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (g - mu) * inv_std
    return xhat.reshape(n, d), inv_std


def _gn_rows_backward(
    d_xhat: np.ndarray, xhat: np.ndarray, inv_std: np.ndarray, groups: int
) -> np.ndarray:
    # For y = (x - mu)/s with s = sqrt(var + eps):
    #   dL/dx = (1/s) * (g - mean(g) - y * mean(g * y)),   g = dL/dy, means per group.
    n, d = d_xhat.shape
    gg = d_xhat.reshape(n, groups, d // groups)
    yy = xhat.reshape(n, groups, d // groups)
    mean_g = gg.mean(axis=2, keepdims=True)
    mean_gy = (gg * yy).mean(axis=2, keepdims=True)
    dx = inv_std * (gg - mean_g - yy * mean_gy)
    return dx.reshape(n, d)


class _ForwardCache:
    __slots__ = ("x", "xhat", "inv_std", "a", "z")

    def __init__(self, x, xhat, inv_std, a, z):
        self.x = x
        self.xhat = xhat
        self.inv_std = inv_std
        self.a = a
        self.z = z


def _forward_rows(params: AdapterParams, x: np.ndarray) -> _ForwardCache:
    u = x @ params.W1.T + params.b1
    xhat, inv_std = _gn_rows(u, params.group_count, params.gn_eps)
    a = np.maximum(xhat, 0.0)
    z = a @ params.W2.T + params.b2
    return _ForwardCache(x, xhat, inv_std, a, z)


def forward(params: AdapterParams, f) -> np.ndarray:
    """Project one feature: W2 . relu(groupnorm(W1 . f + b1)) + b2."""
    x = as_feature(f, dim=params.dim)
    return _forward_rows(params, x[None, :]).z[0]


def forward_batch(params: AdapterParams, features: np.ndarray) -> np.ndarray:
    """Project a stacked (n, d) feature matrix in one pass."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.dim:
        raise DataError(f"expected (n, {params.dim}) matrix, got {x.shape}")
    return _forward_rows(params, x).z


def _adapter_backward(
    params: AdapterParams, cache: _ForwardCache, d_z: np.ndarray, grads: AdapterGrads
) -> None:
    """Accumulate d(loss)/d(W1, b1, W2, b2) for one branch into ``grads``."""
    grads.W2 += d_z.T @ cache.a
    grads.b2 += d_z.sum(axis=0)
    d_a = d_z @ params.W2
    d_xhat = d_a * (cache.xhat > 0.0)
    d_u = _gn_rows_backward(d_xhat, cache.xhat, cache.inv_std, params.group_count)
    grads.W1 += d_u.T @ cache.x
    grads.b1 += d_u.sum(axis=0)


def _stack_pairs(params: AdapterParams, batch: Sequence[FeaturePair]) -> tuple[np.ndarray, np.ndarray]:
    if not batch:
        raise DataError("batch must be non-empty")
    f1 = np.stack([as_feature(p.first, dim=params.dim) for p in batch])
    f2 = np.stack([as_feature(p.second, dim=params.dim) for p in batch])
    return f1, f2


def _row_norms(m: np.ndarray, what: str) -> np.ndarray:
    norms = np.linalg.norm(m, axis=1)
    if np.any(norms < _ZERO_NORM):
        raise NumericalError(f"zero-norm {what} rows: embedding collapse")
    return norms


def simsiam_loss(
    params: AdapterParams,
    batch: Sequence[FeaturePair],
    target_params: AdapterParams | None = None,
) -> float:
    """Loss only (shared by the finite-difference oracle and descent checks).

    ``target_params`` pins the stop-gradient branch: the target embeddings are
    computed from it while the predicted branch uses ``params``. Probing this
    with ``params`` perturbed and ``target_params`` held at the base point is
    what makes a finite-difference check of a stop-gradient loss well defined.
    """
    tp = params if target_params is None else target_params
    f1, f2 = _stack_pairs(params, batch)
    z1 = _forward_rows(params, f1).z
    z2 = _forward_rows(params, f2).z
    t1 = z1 if tp is params else _forward_rows(tp, f1).z
    t2 = z2 if tp is params else _forward_rows(tp, f2).z
    p1 = z1 @ params.P.T
    p2 = z2 @ params.P.T
    np1 = _row_norms(p1, "predictor")
    np2 = _row_norms(p2, "predictor")
    nt1 = _row_norms(t1, "projection")
    nt2 = _row_norms(t2, "projection")
    cos1 = np.einsum("ij,ij->i", p1, t2) / (np1 * nt2)
    cos2 = np.einsum("ij,ij->i", p2, t1) / (np2 * nt1)
    return float(-0.5 * np.mean(cos1 + cos2))


def simsiam_loss_and_grads(
    params: AdapterParams, batch: Sequence[FeaturePair]
) -> tuple[float, AdapterGrads]:
    """Mean over pairs of -(cos(P z1, sg(z2)) + cos(P z2, sg(z1)))/2 and its exact gradients.

    sg marks stop-gradient: the target embedding of each term is treated as a
    constant during differentiation, so gradients flow only through the
    predicted branch.
    """
    f1, f2 = _stack_pairs(params, batch)
    n = len(batch)
    c1 = _forward_rows(params, f1)
    c2 = _forward_rows(params, f2)
    z1, z2 = c1.z, c2.z
    p1 = z1 @ params.P.T
    p2 = z2 @ params.P.T
    np1 = _row_norms(p1, "predictor")[:, None]
    np2 = _row_norms(p2, "predictor")[:, None]
    nz1 = _row_norms(z1, "projection")[:, None]
    nz2 = _row_norms(z2, "projection")[:, None]
    p1h = p1 / np1
    p2h = p2 / np2
    z1h = z1 / nz1
    z2h = z2 / nz2
    cos1 = np.einsum("ij,ij->i", p1h, z2h)[:, None]
    cos2 = np.einsum("ij,ij->i", p2h, z1h)[:, None]
    loss = float(-0.5 * np.mean(cos1 + cos2))

    # d(-cos(p, c))/dp = -(c_hat - cos * p_hat)/|p| with c held constant.
    d_p1 = -(z2h - cos1 * p1h) / np1 / (2.0 * n)
    d_p2 = -(z1h - cos2 * p2h) / np2 / (2.0 * n)
    grads = AdapterGrads.zeros_like(params)
    grads.P += d_p1.T @ z1 + d_p2.T @ z2
    d_z1 = d_p1 @ params.P
    d_z2 = d_p2 @ params.P
    _adapter_backward(params, c1, d_z1, grads)
    _adapter_backward(params, c2, d_z2, grads)
    return loss, grads


def _standardize_cols(z: np.ndarray, eps: float) -> tuple[np.ndarray, np.ndarray]:
    mu = z.mean(axis=0)
    var = z.var(axis=0)
    inv_std = 1.0 / np.sqrt(var + eps)
    return (z - mu) * inv_std, inv_std


def _standardize_cols_backward(
    d_zh: np.ndarray, zh: np.ndarray, inv_std: np.ndarray
) -> np.ndarray:
    # Same standardization backward as _gn_rows_backward, over the batch axis.
    mean_g = d_zh.mean(axis=0)
    mean_gy = (d_zh * zh).mean(axis=0)
    return inv_std * (d_zh - mean_g - zh * mean_gy)


def barlow_loss(params: AdapterParams, batch: Sequence[FeaturePair], lam: float) -> float:
    f1, f2 = _stack_pairs(params, batch)
    if len(batch) < 2:
        raise DataError("cross-correlation loss needs batch size >= 2")
    n = len(batch)
    z1 = _forward_rows(params, f1).z
    z2 = _forward_rows(params, f2).z
    zh1, _ = _standardize_cols(z1, params.gn_eps)
    zh2, _ = _standardize_cols(z2, params.gn_eps)
    c = zh1.T @ zh2 / n
    diag = np.diagonal(c)
    off = c - np.diag(diag)
    return float(np.sum((1.0 - diag) ** 2) + lam * np.sum(off**2))


def barlow_loss_and_grads(
    params: AdapterParams, batch: Sequence[FeaturePair], lam: float
) -> tuple[float, AdapterGrads]:
    """Sum((1 - C_ii)^2) + lam * Sum(C_ij^2, i != j) over the batch cross-correlation
    of per-dimension standardized embeddings, with exact gradients for both branches.
    """
    f1, f2 = _stack_pairs(params, batch)
    if len(batch) < 2:
        raise DataError("cross-correlation loss needs batch size >= 2")
    n = len(batch)
    c1 = _forward_rows(params, f1)
    c2 = _forward_rows(params, f2)
    zh1, inv1 = _standardize_cols(c1.z, params.gn_eps)
    zh2, inv2 = _standardize_cols(c2.z, params.gn_eps)
    c = zh1.T @ zh2 / n
    diag = np.diagonal(c)
    off = c - np.diag(diag)
    loss = float(np.sum((1.0 - diag) ** 2) + lam * np.sum(off**2))

    d_c = 2.0 * lam * c
    np.fill_diagonal(d_c, -2.0 * (1.0 - diag))
    d_zh1 = zh2 @ d_c.T / n
    d_zh2 = zh1 @ d_c / n
    d_z1 = _standardize_cols_backward(d_zh1, zh1, inv1)
    d_z2 = _standardize_cols_backward(d_zh2, zh2, inv2)
    grads = AdapterGrads.zeros_like(params)
    _adapter_backward(params, c1, d_z1, grads)
    _adapter_backward(params, c2, d_z2, grads)
    return loss, grads


def loss_and_grads(
    params: AdapterParams, batch: Sequence[FeaturePair], optim: OptimConfig
) -> tuple[float, AdapterGrads]:
    if optim.loss == "simsiam":
        return simsiam_loss_and_grads(params, batch)
    return barlow_loss_and_grads(params, batch, optim.barlow_lambda)


def sgd_step(params: AdapterParams, grads: AdapterGrads, config: OptimConfig) -> AdapterParams:
    """One decayed-SGD update: theta <- theta - lr * (grad + weight_decay * theta).

    Refuses non-finite gradients outright rather than corrupting the model.
    """
    if not grads.is_finite():
        raise NumericalError("non-finite gradients: update refused")
    new = params.copy()
    lr = config.learning_rate
    wd = config.weight_decay
    for name in AdapterGrads.TENSORS:
        theta = getattr(new, name)
        g = getattr(grads, name)
        if theta.shape != g.shape:
            raise DataError(f"gradient shape mismatch on {name}")
        theta -= lr * (g + wd * theta)
    return new


def finite_difference_grads(
    loss_fn: Callable[[AdapterParams], float], params: AdapterParams, step: float = 1e-5
) -> AdapterGrads:
    """Central finite differences of ``loss_fn`` w.r.t. every trainable entry."""
    grads = AdapterGrads.zeros_like(params)
    for name in AdapterGrads.TENSORS:
        base = getattr(params, name)
        out = getattr(grads, name)
        it = np.nditer(base, flags=["multi_index"])
        for _ in it:
            ix = it.multi_index
            probe = params.copy()
            getattr(probe, name)[ix] = base[ix] + step
            up = loss_fn(probe)
            getattr(probe, name)[ix] = base[ix] - step
            down = loss_fn(probe)
            out[ix] = (up - down) / (2.0 * step)
    return grads


def max_relative_error(
    analytic: AdapterGrads, numeric: AdapterGrads, skip_below: float = 1e-8
) -> tuple[float, int]:
    """Worst relative disagreement across entries; entries tiny on both sides are skipped."""
    worst = 0.0
    checked = 0
    for name in AdapterGrads.TENSORS:
        a = getattr(analytic, name).ravel()
        b = getattr(numeric, name).ravel()
        for x, y in zip(a, b):
            if abs(x) < skip_below and abs(y) < skip_below:
                continue
            checked += 1
            rel = abs(x - y) / max(abs(x), abs(y))
            worst = max(worst, rel)
    return worst, checked


def gradcheck_report(
    dim: int = 8,
    groups: int = 2,
    instances: int = 20,
    batch_size: int = 6,
    seed: int = 2024,
    rel_tol: float = 1e-4,
    barlow_lambda: float = 0.005,
) -> dict:
    """Run the finite-difference suite over random small instances of both losses."""
    rng = np.random.default_rng(seed)
    results = {}
    for loss_name in LOSSES:
        worst = 0.0
        total_checked = 0
        for _ in range(instances):
            params = init_adapter(dim, group_count=groups, rng=rng, init_scale=0.05)
            batch = [
                FeaturePair(
                    first=rng.normal(size=dim),
                    second=rng.normal(size=dim),
                    label="x",
                )
                for _ in range(batch_size)
            ]
            if loss_name == "simsiam":
                _, analytic = simsiam_loss_and_grads(params, batch)
                numeric = finite_difference_grads(
                    lambda q: simsiam_loss(q, batch, target_params=params), params
                )
            else:
                _, analytic = barlow_loss_and_grads(params, batch, barlow_lambda)
                numeric = finite_difference_grads(
                    lambda q: barlow_loss(q, batch, barlow_lambda), params
                )
            rel, checked = max_relative_error(analytic, numeric)
            worst = max(worst, rel)
            total_checked += checked
        results[loss_name] = {
            "max_rel_err": worst,
            "entries_checked": total_checked,
            "ok": bool(worst < rel_tol),
        }
    results["ok"] = all(results[name]["ok"] for name in LOSSES)
    results["rel_tol"] = rel_tol
    return results
