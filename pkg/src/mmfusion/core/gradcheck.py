"""Central finite-difference verification of reverse-mode gradients."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .params import ParameterStore
from .tensor import Graph, backward


def relative_error(a, b, floor=1e-8):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


@dataclass
class GradCheckReport:
    tolerance: float
    max_error: dict[str, float] = field(default_factory=dict)
    analytic: dict[str, np.ndarray] = field(default_factory=dict)
    numeric: dict[str, np.ndarray] = field(default_factory=dict)
    flagged: dict[str, list[tuple[int, ...]]] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return not any(self.flagged.values())

    @property
    def worst(self) -> float:
        return max(self.max_error.values(), default=0.0)

    def __str__(self):
        lines = [f"grad_check tol={self.tolerance:g} passed={self.passed}"]
        for name, err in self.max_error.items():
            lines.append(f"  {name}: max rel err {err:.3e} ({len(self.flagged[name])} flagged)")
        return "\n".join(lines)


def grad_check(loss_fn, params: ParameterStore, step: float = 1e-5,
               tolerance: float = 1e-4) -> GradCheckReport:
    """Compare reverse-mode gradients of ``loss_fn()`` with central differences.

    ``loss_fn`` takes no arguments, reads ``params`` and returns a scalar
    Tensor. Frozen entries are reported with their (zero) reverse-mode
    gradient and are not perturbed.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    params.zero_grad()
    with Graph() as g:
        loss = loss_fn()
    backward(g, loss)
    report = GradCheckReport(tolerance)
    for name, t in params.items():
        analytic = t.grad.copy()
        report.analytic[name] = analytic
        if params.is_frozen(name):
            report.numeric[name] = np.zeros_like(analytic)
            report.max_error[name] = 0.0
            report.flagged[name] = []
            continue
        numeric = np.zeros_like(analytic)
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_fn().item()
            flat[i] = orig - step
            down = loss_fn().item()
            flat[i] = orig
            numeric.reshape(-1)[i] = (up - down) / (2.0 * step)
        err = relative_error(analytic, numeric)
        report.numeric[name] = numeric
        report.max_error[name] = float(err.max()) if err.size else 0.0
        report.flagged[name] = [tuple(ix) for ix in np.argwhere(err > tolerance)]
    params.zero_grad()
    return report
