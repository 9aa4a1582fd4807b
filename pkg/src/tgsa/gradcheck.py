"""Central finite-difference gradient checking.

The numeric side never touches the tape: it re-runs the caller's forward
function with perturbed parameter entries, so it stays an independent oracle
for the analytic gradients produced by ``tensor.backward``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np

from . import tensor as ops
from .tensor import Tensor


@dataclass
class EntryCheck:
    param: str
    index: tuple[int, ...]
    analytic: float
    numeric: float
    rel_error: float
    passed: bool


@dataclass
class GradCheckReport:
    passed: bool
    max_rel_error: float
    checks: list[EntryCheck] = field(default_factory=list)

    @property
    def failures(self) -> list[EntryCheck]:
        return [c for c in self.checks if not c.passed]

    def __str__(self) -> str:
        lines = [f"gradient check: {'PASS' if self.passed else 'FAIL'} "
                 f"(max rel error {self.max_rel_error:.3e}, {len(self.checks)} entries)"]
        for c in self.failures:
            lines.append(
                f"  {c.param}{list(c.index)}: analytic={c.analytic:.12e} "
                f"numeric={c.numeric:.12e} rel_error={c.rel_error:.3e}"
            )
        return "\n".join(lines)


def numerical_gradient(loss_fn: Callable[[], float], t: Tensor,
                       index: tuple[int, ...], h: float = 1e-5) -> float:
    """Central difference d loss / d t[index], restoring t afterwards."""
    original = t.data[index]
    t.data[index] = original + h
    f_plus = loss_fn()
    t.data[index] = original - h
    f_minus = loss_fn()
    t.data[index] = original
    return (f_plus - f_minus) / (2.0 * h)


def check_gradients(loss_fn: Callable[[], Tensor],
                    params: Mapping[str, Tensor],
                    h: float = 1e-5,
                    tol: float = 1e-5,
                    abs_floor: float = 1e-8,
                    max_entries_per_param: int = 8,
                    rng: Optional[np.random.Generator] = None) -> GradCheckReport:
    """Compare backward() gradients against central finite differences.

    Checks every entry of small parameters and a random sample of large
    ones.  An entry passes when the relative error is below `tol`, or when
    the absolute difference sits below the central-difference resolution
    floor eps * |loss| / (2h) (with a safety factor), which is the best any
    finite-difference oracle can certify for near-zero gradients.
    """
    rng = rng or np.random.default_rng(0)
    for t in params.values():
        t.zero_grad()
    loss = loss_fn()
    ops.backward(loss)
    analytic = {name: np.array(t.grad, copy=True) for name, t in params.items()}
    f0 = abs(loss.item())
    fd_resolution = max(abs_floor, 100.0 * np.finfo(np.float64).eps * max(1.0, f0) / (2.0 * h))

    def loss_value() -> float:
        return loss_fn().item()

    checks: list[EntryCheck] = []
    for name, t in params.items():
        n_entries = t.data.size
        if n_entries <= max_entries_per_param:
            flat_indices = np.arange(n_entries)
        else:
            flat_indices = rng.choice(n_entries, size=max_entries_per_param, replace=False)
        for flat in flat_indices:
            index = np.unravel_index(int(flat), t.data.shape)
            a = float(analytic[name][index])
            n = numerical_gradient(loss_value, t, index, h=h)
            denom = max(abs(a), abs(n))
            if denom < abs_floor:
                rel = 0.0
                passed = abs(a - n) < abs_floor
            else:
                rel = abs(a - n) / denom
                passed = rel < tol or abs(a - n) <= fd_resolution
            checks.append(EntryCheck(name, tuple(int(i) for i in index), a, n, rel, passed))

    max_rel = max((c.rel_error for c in checks), default=0.0)
    return GradCheckReport(all(c.passed for c in checks), max_rel, checks)
