"""Central finite-difference checks of tape gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DeterminismError
from .tensor import Tape, Tensor


@dataclass
class GradCheckReport:
    max_rel_error: dict = field(default_factory=dict)
    tol: float = 1e-4

    @property
    def passed(self):
        return all(err < self.tol for err in self.max_rel_error.values())

    @property
    def worst(self):
        return max(self.max_rel_error.values(), default=0.0)

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        lines = [f"{status} (tol {self.tol:g})"]
        lines += [f"  {name}: {err:.3e}" for name, err in self.max_rel_error.items()]
        return "\n".join(lines)


def relative_error(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(1e-12, np.abs(a) + np.abs(b))


def _value(f):
    out = f()
    return float(np.asarray(out.data if isinstance(out, Tensor) else out).reshape(()))


def finite_difference_check(f, params, step=1e-6, tol=1e-4, max_entries=None, seed=0):
    """Compare tape gradients of the scalar ``f()`` against central differences.

    ``f`` takes no arguments and reads the tensors in ``params``. With
    ``max_entries`` only that many randomly chosen entries per parameter are
    perturbed.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    base = _value(f)
    if _value(f) != base:
        raise DeterminismError("two baseline evaluations of f differ")

    with Tape() as tape:
        loss = f()
    if isinstance(loss, Tensor) and loss._tape is tape:
        analytic = tape.backward(loss, wrt=params)
    else:
        analytic = {p: np.zeros_like(p.data) for p in params}

    rng = np.random.default_rng(seed)
    report = GradCheckReport(tol=tol)
    for k, p in enumerate(params):
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        numeric = np.empty(idx.size)
        for n, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + step
            fp = _value(f)
            flat[i] = orig - step
            fm = _value(f)
            flat[i] = orig
            numeric[n] = (fp - fm) / (2.0 * step)
        a = analytic[p].reshape(-1)[idx]
        err = float(relative_error(a, numeric).max()) if idx.size else 0.0
        report.max_rel_error[p.name or f"param{k}"] = err
    return report
