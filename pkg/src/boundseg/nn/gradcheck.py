"""Finite-difference verification of analytic gradients.

The checker reduces any op to a scalar through a fixed random projection
r: L(inputs) = <f(inputs), r>.  The analytic gradient of L w.r.t. each
input comes from the op's VJP evaluated at gy = r; the numeric gradient
is a central difference per coordinate.  Run in float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class GradCheckReport:
    max_rel_err: float = 0.0
    per_input: dict[str, float] = field(default_factory=dict)
    tolerance: float = 1e-6

    @property
    def ok(self) -> bool:
        return self.max_rel_err < self.tolerance

    def merge(self, name: str, err: float) -> None:
        self.per_input[name] = err
        self.max_rel_err = max(self.max_rel_err, err)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    a = np.asarray(analytic, dtype=np.float64).ravel()
    b = np.asarray(numeric, dtype=np.float64).ravel()
    denom = np.maximum(np.abs(a) + np.abs(b), 1e-8)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def numeric_gradient(f, x: np.ndarray, step: float = 1e-5,
                     max_coords: int | None = None,
                     rng: np.random.Generator | None = None):
    """Central-difference gradient of scalar f at x.

    Returns (grad, coords): the gradient evaluated at the checked
    coordinates and their flat indices (all coordinates unless
    max_coords subsamples them).
    """
    flat = x.reshape(-1)
    n = flat.size
    if max_coords is not None and n > max_coords:
        if rng is None:
            rng = np.random.default_rng(0)
        coords = np.sort(rng.choice(n, size=max_coords, replace=False))
    else:
        coords = np.arange(n)
    grad = np.empty(coords.size, dtype=np.float64)
    for k, i in enumerate(coords):
        orig = flat[i]
        flat[i] = orig + step
        fp = f()
        flat[i] = orig - step
        fm = f()
        flat[i] = orig
        grad[k] = (fp - fm) / (2.0 * step)
    return grad, coords


def grad_check(forward, vjp, inputs: dict[str, np.ndarray], step: float = 1e-5,
               tolerance: float = 1e-6, seed: int = 0,
               max_coords: int | None = None) -> GradCheckReport:
    """Check vjp against central differences for every entry of `inputs`.

    forward(**inputs) must return an array; vjp(gy, **inputs) must return
    a dict mapping the same input names to analytic gradients.  Inputs
    should be float64 for the stated tolerances to be meaningful.
    """
    rng = np.random.default_rng(seed)
    y = forward(**inputs)
    r = rng.standard_normal(y.shape)
    analytic = vjp(r, **inputs)

    report = GradCheckReport(tolerance=tolerance)
    for name, x in inputs.items():
        if name not in analytic:
            continue

        def scalar():
            return float(np.sum(forward(**inputs) * r))

        num, coords = numeric_gradient(scalar, x, step=step, max_coords=max_coords, rng=rng)
        ana = np.asarray(analytic[name], dtype=np.float64).reshape(-1)[coords]
        report.merge(name, relative_error(ana, num))
    return report
