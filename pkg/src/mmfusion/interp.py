"""Interpolation network: irregular channels -> fixed (3D, T) interpolant block.

Layer one works per channel with a squared-exponential kernel
``exp(-alpha_d (r - t)^2)``: a smooth interpolant ``sigma`` (bandwidth
``alpha_d``), a narrow transient interpolant ``gamma`` (bandwidth
``kappa * alpha_d``) and an intensity ``lambda`` (sum of smooth weights).
Layer two mixes the smooth interpolants across channels with nonnegative
weights ``rho = rho_raw ** 2``. Block rows are ``[chi_1..chi_D,
tau_1..tau_D, lambda_1..lambda_D]`` with ``tau = gamma - chi``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .core import ParameterStore, ShapeError, Tensor, apply, ops
from .core.tensor import primitive
from .series import ChannelSeries, EpisodeRecord

KAPPA = 10.0
DEFAULT_T = 64
LOG_ALPHA = "interp.log_alpha"
RHO_RAW = "interp.rho_raw"


def reference_grid(hours: float, T: int = DEFAULT_T) -> np.ndarray:
    if T < 2:
        raise ValueError("reference grid needs T >= 2")
    if hours <= 0:
        raise ValueError("reference grid needs a positive window")
    return np.linspace(0.0, float(hours), T)


def kernel_weight(r, t, alpha):
    """Squared-exponential weight exp(-alpha (r - t)^2)."""
    if np.any(np.asarray(alpha) <= 0):
        raise ValueError("alpha must be positive")
    return np.exp(-alpha * (np.asarray(r) - np.asarray(t)) ** 2)


@dataclass
class ObservationBatch:
    """Channels of B records padded to a common length L."""

    times: np.ndarray   # (B, D, L)
    values: np.ndarray  # (B, D, L)
    mask: np.ndarray    # (B, D, L), 1.0 where observed

    @property
    def shape(self):
        return self.times.shape

    def take(self, idx) -> "ObservationBatch":
        m = self.mask[idx]
        L = int(m.sum(-1).max()) if m.size else 0
        L = max(L, 1)
        return ObservationBatch(self.times[idx][..., :L], self.values[idx][..., :L], m[..., :L])

    @classmethod
    def from_records(cls, records, D: int | None = None) -> "ObservationBatch":
        records = list(records)
        if D is None:
            D = len(records[0].channels) if records else 0
        L = max([len(c) for r in records for c in r.channels] + [1])
        B = len(records)
        times = np.zeros((B, D, L))
        values = np.zeros((B, D, L))
        mask = np.zeros((B, D, L))
        for b, r in enumerate(records):
            for d, c in enumerate(r.channels):
                n = len(c)
                times[b, d, :n] = c.times
                values[b, d, :n] = c.values
                mask[b, d, :n] = 1.0
        return cls(times, values, mask)


# --- differentiable primitives backed by the kernels ----------------------

@primitive("kernel_smooth")
def _kernel_smooth(log_alpha, times=None, values=None, mask=None, grid=None,
                   kappa=KAPPA, impl=None):
    B, D, L = times.shape
    if log_alpha.shape != (D,):
        raise kernels_shape_error("kernel_smooth", log_alpha, times)
    alpha = np.exp(log_alpha)
    out = kernels.kernel("smooth_fwd", impl)(times, values, mask, grid, alpha, kappa)

    def back(g):
        g = np.ascontiguousarray(g)
        return (kernels.kernel("smooth_bwd", impl)(times, values, mask, grid, alpha, kappa, g),)

    return out, back


@primitive("loo_sums")
def _loo_sums(log_alpha, times=None, values=None, mask=None, impl=None):
    B, D, L = times.shape
    if log_alpha.shape != (D,):
        raise kernels_shape_error("loo_sums", log_alpha, times)
    alpha = np.exp(log_alpha)
    out = kernels.kernel("loo_fwd", impl)(times, values, mask, alpha)

    def back(g):
        g = np.ascontiguousarray(g)
        return (kernels.kernel("loo_bwd", impl)(times, values, mask, alpha, g),)

    return out, back


def kernels_shape_error(name, log_alpha, times):
    return ShapeError(f"{name}: incompatible shapes {log_alpha.shape}, {times.shape}")


# --- parameters ------------------------------------------------------------

def init_interp_params(store: ParameterStore, D: int, grid: np.ndarray) -> None:
    gap = float(np.mean(np.diff(grid)))
    store.set(LOG_ALPHA, np.full(D, math.log(1.0 / gap ** 2)))
    rho = np.full((D, D), 0.01) + np.eye(D) * 0.99
    store.set(RHO_RAW, np.sqrt(rho))


def rho_matrix(store: ParameterStore) -> Tensor:
    return ops.square(store[RHO_RAW])


# --- network -----------------------------------------------------------------

def layer_one(obs: ObservationBatch, grid, log_alpha, kappa=KAPPA, impl=None) -> Tensor:
    """(B, 3, D, T) stack of sigma, gamma, lambda."""
    return apply("kernel_smooth", log_alpha, times=obs.times, values=obs.values,
                 mask=obs.mask, grid=np.asarray(grid, dtype=np.float64), kappa=kappa, impl=impl)


def cross_channel(sigma, lam, rho) -> Tensor:
    """chi_d = sum_d' rho_dd' lam_d' sigma_d' / sum_d' rho_dd' lam_d' (0 if denominator < 1e-12).

    ``sigma`` and ``lam`` are (..., D, T); ``rho`` is (D, D).
    """
    num = ops.matmul(rho, ops.mul(lam, sigma))
    den = ops.matmul(rho, lam)
    return ops.safe_div(num, den)


def interpolate(obs: ObservationBatch, grid, store: ParameterStore, kappa=KAPPA,
                impl=None) -> Tensor:
    """Interpolant blocks, shape (B, 3D, T)."""
    stack = layer_one(obs, grid, store[LOG_ALPHA], kappa, impl)
    sigma, gamma, lam = stack[:, 0], stack[:, 1], stack[:, 2]
    chi = cross_channel(sigma, lam, rho_matrix(store))
    tau = ops.sub(gamma, chi)
    return ops.concat([chi, tau, lam], axis=1)


def reconstruction_losses(obs: ObservationBatch, store: ParameterStore, impl=None):
    """Per-record leave-one-out reconstruction MSE, shape (B,), and a has-data mask.

    Each observed point is predicted by the cross-channel smooth interpolant
    at its own time with that single point removed from its channel.
    """
    sums = apply("loo_sums", store[LOG_ALPHA], times=obs.times, values=obs.values,
                 mask=obs.mask, impl=impl)  # (B, D, L, D, 2)
    lam = sums[..., 0]
    sigma = ops.safe_div(sums[..., 1], lam)
    rho = rho_matrix(store)
    D = rho.shape[0]
    rho_rows = ops.reshape(rho, (1, D, 1, D))  # rho[query channel, source channel]
    num = ops.sum(ops.mul(rho_rows, ops.mul(lam, sigma)), axis=-1)
    den = ops.sum(ops.mul(rho_rows, lam), axis=-1)
    chi = ops.safe_div(num, den)  # (B, D, L)
    err = ops.mul(ops.square(ops.sub(chi, obs.values)), obs.mask)
    counts = obs.mask.sum(axis=(1, 2))
    has = counts > 0
    per_record = ops.mul(ops.sum(err, axis=(1, 2)), 1.0 / np.maximum(counts, 1.0))
    return per_record, has


# --- single-record conveniences ------------------------------------------------

def channel_interpolants(series: ChannelSeries, grid, alpha: float, kappa: float = KAPPA,
                         impl=None):
    """(sigma, gamma, lambda) of one channel on ``grid``; zeros for an empty channel."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if kappa <= 1:
        raise ValueError("kappa must exceed 1")
    n = max(len(series), 1)
    times = np.zeros((1, 1, n))
    values = np.zeros((1, 1, n))
    mask = np.zeros((1, 1, n))
    times[0, 0, :len(series)] = series.times
    values[0, 0, :len(series)] = series.values
    mask[0, 0, :len(series)] = 1.0
    out = kernels.kernel("smooth_fwd", impl)(times, values, mask, np.asarray(grid, float),
                                             np.array([float(alpha)]), float(kappa))
    return out[0, 0, 0], out[0, 1, 0], out[0, 2, 0]


def assemble_block(record: EpisodeRecord, grid, store: ParameterStore, impl=None) -> Tensor:
    """Interpolant block of one record, shape (3D, T)."""
    obs = ObservationBatch.from_records([record])
    if store[LOG_ALPHA].shape[0] != obs.shape[1]:
        raise ValueError("record channel count does not match interpolation parameters")
    return interpolate(obs, grid, store, impl=impl)[0]


def reconstruction_loss(record: EpisodeRecord, store: ParameterStore, impl=None) -> Tensor:
    """Leave-one-out reconstruction MSE of one record (scalar Tensor)."""
    if record.n_observations == 0:
        raise ValueError(f"record {record.id!r} has no observations")
    per_record, _ = reconstruction_losses(ObservationBatch.from_records([record]), store, impl)
    return per_record[0]
