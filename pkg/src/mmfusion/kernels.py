"""Hot loops of the interpolation network.

Every kernel exists twice: an ``@njit`` loop version and a broadcasting
numpy version. :data:`USE_NUMBA` (see ``_jit``) picks which one the
public dispatchers call; tests exercise both directly.

Shapes: padded observations ``times``, ``values``, ``mask`` are
``(B, D, L)``; ``grid`` is ``(T,)``; ``alpha`` is ``(D,)``.
"""
from __future__ import annotations

import math

import numpy as np

from ._jit import USE_NUMBA, njit

GUARD = 1e-12


# --- smooth / transient / intensity over the reference grid ----------------

@njit
def _smooth_fwd_jit(times, values, mask, grid, alpha, kappa):
    B, D, L = times.shape
    T = grid.shape[0]
    out = np.zeros((B, 3, D, T))
    for b in range(B):
        for d in range(D):
            a_s = alpha[d]
            a_t = kappa * a_s
            for k in range(T):
                r = grid[k]
                ls = 0.0
                ns = 0.0
                lt = 0.0
                nt = 0.0
                for j in range(L):
                    if mask[b, d, j] == 0.0:
                        continue
                    dt = r - times[b, d, j]
                    sq = dt * dt
                    ws = math.exp(-a_s * sq)
                    wt = math.exp(-a_t * sq)
                    x = values[b, d, j]
                    ls += ws
                    ns += ws * x
                    lt += wt
                    nt += wt * x
                if ls >= GUARD:
                    out[b, 0, d, k] = ns / ls
                if lt >= GUARD:
                    out[b, 1, d, k] = nt / lt
                out[b, 2, d, k] = ls
    return out


@njit
def _smooth_bwd_jit(times, values, mask, grid, alpha, kappa, g):
    B, D, L = times.shape
    T = grid.shape[0]
    glog = np.zeros(D)
    for b in range(B):
        for d in range(D):
            a_s = alpha[d]
            a_t = kappa * a_s
            acc = 0.0
            for k in range(T):
                r = grid[k]
                ls = 0.0
                ns = 0.0
                lt = 0.0
                nt = 0.0
                dls = 0.0
                dns = 0.0
                dlt = 0.0
                dnt = 0.0
                for j in range(L):
                    if mask[b, d, j] == 0.0:
                        continue
                    dt = r - times[b, d, j]
                    sq = dt * dt
                    ws = math.exp(-a_s * sq)
                    wt = math.exp(-a_t * sq)
                    x = values[b, d, j]
                    ls += ws
                    ns += ws * x
                    lt += wt
                    nt += wt * x
                    # d w / d log(alpha) = -alpha * sq * w
                    es = -a_s * sq * ws
                    et = -a_t * sq * wt
                    dls += es
                    dns += es * x
                    dlt += et
                    dnt += et * x
                if ls >= GUARD:
                    acc += g[b, 0, d, k] * (dns - (ns / ls) * dls) / ls
                if lt >= GUARD:
                    acc += g[b, 1, d, k] * (dnt - (nt / lt) * dlt) / lt
                acc += g[b, 2, d, k] * dls
            glog[d] += acc
    return glog


def _smooth_terms_np(times, values, mask, grid, alpha, kappa):
    sq = (grid[None, None, :, None] - times[:, :, None, :]) ** 2  # (B, D, T, L)
    m = mask[:, :, None, :]
    x = values[:, :, None, :]
    a = alpha[None, :, None, None]
    ws = np.exp(-a * sq) * m
    wt = np.exp(-kappa * a * sq) * m
    return sq, x, a, ws, wt


def _guarded(num, den):
    ok = den >= GUARD
    return np.where(ok, num / np.where(ok, den, 1.0), 0.0), ok


def _smooth_fwd_np(times, values, mask, grid, alpha, kappa):
    _, x, _, ws, wt = _smooth_terms_np(times, values, mask, grid, alpha, kappa)
    ls, lt = ws.sum(-1), wt.sum(-1)
    sig, _ = _guarded((ws * x).sum(-1), ls)
    gam, _ = _guarded((wt * x).sum(-1), lt)
    return np.stack([sig, gam, ls], axis=1)


def _smooth_bwd_np(times, values, mask, grid, alpha, kappa, g):
    sq, x, a, ws, wt = _smooth_terms_np(times, values, mask, grid, alpha, kappa)
    ls, lt = ws.sum(-1), wt.sum(-1)
    es = -a * sq * ws
    et = -kappa * a * sq * wt
    dls, dlt = es.sum(-1), et.sum(-1)
    sig, oks = _guarded((ws * x).sum(-1), ls)
    gam, okt = _guarded((wt * x).sum(-1), lt)
    dsig, _ = _guarded((es * x).sum(-1) - sig * dls, ls)
    dgam, _ = _guarded((et * x).sum(-1) - gam * dlt, lt)
    total = g[:, 0] * dsig * oks + g[:, 1] * dgam * okt + g[:, 2] * dls
    return total.sum(axis=(0, 2))


# --- leave-one-out kernel sums --------------------------------------------

@njit
def _loo_fwd_jit(times, values, mask, alpha):
    B, D, L = times.shape
    out = np.zeros((B, D, L, D, 2))
    for b in range(B):
        for dq in range(D):
            for jq in range(L):
                if mask[b, dq, jq] == 0.0:
                    continue
                tq = times[b, dq, jq]
                for d in range(D):
                    a = alpha[d]
                    lam = 0.0
                    num = 0.0
                    for j in range(L):
                        if mask[b, d, j] == 0.0 or (d == dq and j == jq):
                            continue
                        dt = tq - times[b, d, j]
                        w = math.exp(-a * dt * dt)
                        lam += w
                        num += w * values[b, d, j]
                    out[b, dq, jq, d, 0] = lam
                    out[b, dq, jq, d, 1] = num
    return out


@njit
def _loo_bwd_jit(times, values, mask, alpha, g):
    B, D, L = times.shape
    glog = np.zeros(D)
    for b in range(B):
        for dq in range(D):
            for jq in range(L):
                if mask[b, dq, jq] == 0.0:
                    continue
                tq = times[b, dq, jq]
                for d in range(D):
                    a = alpha[d]
                    dlam = 0.0
                    dnum = 0.0
                    for j in range(L):
                        if mask[b, d, j] == 0.0 or (d == dq and j == jq):
                            continue
                        dt = tq - times[b, d, j]
                        sq = dt * dt
                        e = -a * sq * math.exp(-a * sq)
                        dlam += e
                        dnum += e * values[b, d, j]
                    glog[d] += g[b, dq, jq, d, 0] * dlam + g[b, dq, jq, d, 1] * dnum
    return glog


def _loo_terms_np(times, values, mask, alpha):
    B, D, L = times.shape
    # query (b, dq, jq) against source (b, d, j)
    sq = (times[:, :, :, None, None] - times[:, None, None, :, :]) ** 2  # (B,D,L,D,L)
    keep = mask[:, :, :, None, None] * mask[:, None, None, :, :]
    eye = np.eye(D)[:, None, :, None] * np.eye(L)[None, :, None, :]  # (D,L,D,L)
    keep = keep * (1.0 - eye[None])
    a = alpha[None, None, None, :, None]
    w = np.exp(-a * sq) * keep
    return sq, a, w, values[:, None, None, :, :]


def _loo_fwd_np(times, values, mask, alpha):
    _, _, w, x = _loo_terms_np(times, values, mask, alpha)
    return np.stack([w.sum(-1), (w * x).sum(-1)], axis=-1)


def _loo_bwd_np(times, values, mask, alpha, g):
    sq, a, w, x = _loo_terms_np(times, values, mask, alpha)
    e = -a * sq * w
    total = g[..., 0] * e.sum(-1) + g[..., 1] * (e * x).sum(-1)  # (B,D,L,D)
    return total.sum(axis=(0, 1, 2))


IMPLEMENTATIONS = {
    "numba": {
        "smooth_fwd": _smooth_fwd_jit, "smooth_bwd": _smooth_bwd_jit,
        "loo_fwd": _loo_fwd_jit, "loo_bwd": _loo_bwd_jit,
    },
    "numpy": {
        "smooth_fwd": _smooth_fwd_np, "smooth_bwd": _smooth_bwd_np,
        "loo_fwd": _loo_fwd_np, "loo_bwd": _loo_bwd_np,
    },
}


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"


def kernel(name: str, impl: str | None = None):
    return IMPLEMENTATIONS[impl or backend()][name]
