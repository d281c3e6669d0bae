"""Shared test utilities: independent oracles and gradient checking.

The oracles here are deliberately naive re-derivations (double loops, path
enumeration) so they cannot share a bug with the library implementations.
"""

from __future__ import annotations

import numpy as np

from periocast.model import SampleWindow, WindowConfig
from periocast.neural import ParamStore


# --- independent oracles ----------------------------------------------------

def acf_naive(x, k_max: int) -> np.ndarray:
    """Autocorrelation by the definition, scalar double loop."""
    x = [float(v) for v in x]
    n = len(x)
    mean = sum(x) / n
    denom = sum((v - mean) ** 2 for v in x)
    out = []
    for k in range(k_max + 1):
        num = 0.0
        for t in range(k, n):
            num += (x[t] - mean) * (x[t - k] - mean)
        out.append(num / denom)
    return np.array(out)


def dtw_exhaustive(a, b) -> float:
    """Minimum alignment cost by enumerating every monotone path."""
    a = [float(v) for v in a]
    b = [float(v) for v in b]
    n, m = len(a), len(b)
    best = [np.inf]

    def walk(i, j, cost):
        cost += (a[i] - b[j]) ** 2
        if cost >= best[0]:
            return
        if i == n - 1 and j == m - 1:
            best[0] = cost
            return
        if i + 1 < n and j + 1 < m:
            walk(i + 1, j + 1, cost)
        if i + 1 < n:
            walk(i + 1, j, cost)
        if j + 1 < m:
            walk(i, j + 1, cost)

    walk(0, 0, 0.0)
    return best[0]


# --- gradient checking ------------------------------------------------------

def max_rel_err(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """Worst elementwise relative error; elements where both grads are below
    `floor` in magnitude count as exact."""
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    numeric = np.asarray(numeric, dtype=np.float64).ravel()
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    err = np.abs(analytic - numeric)
    ok = scale < floor
    rel = np.where(ok, 0.0, err / np.maximum(scale, floor))
    return float(rel.max()) if rel.size else 0.0


def fd_param_grad(f, store: ParamStore, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar f() over every parameter."""
    base = store.get_flat()
    grad = np.empty_like(base)
    for idx in range(base.size):
        theta = base.copy()
        theta[idx] = base[idx] + h
        store.set_flat(theta)
        up = f()
        theta[idx] = base[idx] - h
        store.set_flat(theta)
        down = f()
        grad[idx] = (up - down) / (2.0 * h)
    store.set_flat(base)
    return grad


def fd_array_grad(f, arr: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar f(arr) over every element."""
    grad = np.empty_like(arr, dtype=np.float64)
    flat = arr.ravel()
    gflat = grad.ravel()
    for idx in range(flat.size):
        orig = flat[idx]
        flat[idx] = orig + h
        up = f(arr)
        flat[idx] = orig - h
        down = f(arr)
        flat[idx] = orig
        gflat[idx] = (up - down) / (2.0 * h)
    return grad


# --- model fixtures ---------------------------------------------------------

def tiny_config(**overrides) -> WindowConfig:
    base = dict(i=6, m=12, j=2, hidden=4, layers=2, ds_step=4, ds_window=12)
    base.update(overrides)
    return WindowConfig(**base)


def random_window(cfg: WindowConfig, rng: np.random.Generator,
                  sentinel: bool = False, machine: str = "m0") -> SampleWindow:
    x_long = rng.uniform(0.0, 1.0, cfg.m)
    y_period = np.full(cfg.j, -1.0) if sentinel else rng.uniform(0.0, 1.0, cfg.j)
    return SampleWindow(
        machine_id=machine,
        start=0,
        x_long=x_long,
        x_short=x_long[cfg.m - cfg.i:],
        y_period=y_period,
        target=rng.uniform(0.0, 1.0, cfg.j),
        heavy=rng.uniform(size=cfg.j) > 0.7,
    )
