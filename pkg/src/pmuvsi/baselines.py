"""Local Thevenin index (LTI), the measurement-based baseline.

A window of (V, I) phasor pairs at one bus is fitted to ``E = V + Z I``,
with ``I`` the current drawn by the bus from the grid. The index compares the
apparent load impedance with the fitted source impedance and reaches zero
at maximum power transfer.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

MAX_CONDITION = 1e12


class RankDeficientWindowError(ValueError):
    """The sample window cannot separate E from Z (e.g. identical samples)."""

    def __init__(self, message, conditioning):
        super().__init__(message)
        self.conditioning = conditioning


@dataclass(frozen=True)
class TheveninEstimate:
    e_th: complex
    z_th: complex
    window: int
    conditioning: float

    def residual(self, v: complex, i: complex) -> complex:
        return self.e_th - (v + self.z_th * i)


def estimate_thevenin(samples: Sequence[tuple[complex, complex]], max_condition: float = MAX_CONDITION) -> TheveninEstimate:
    """Least-squares (E, Z) from ``[(V_k, I_k), ...]``."""
    if len(samples) < 2:
        raise ValueError("need at least two samples")
    arr = np.asarray(samples, dtype=complex)
    v, i = arr[:, 0], arr[:, 1]
    A = np.column_stack([np.ones_like(i), -i])
    cond = float(np.linalg.cond(A))
    if not np.isfinite(cond) or cond > max_condition:
        raise RankDeficientWindowError(
            f"Thevenin window is rank deficient (condition number {cond:.3g})", cond
        )
    (e, z), *_ = np.linalg.lstsq(A, v, rcond=None)
    return TheveninEstimate(complex(e), complex(z), len(samples), cond)


def lti_index(estimate: TheveninEstimate, v: complex, i: complex) -> float:
    """``(|Zapp| - |Zth|) / |Zapp|`` with ``Zapp = V / I``; 1 at zero current."""
    if i == 0:
        return 1.0
    z_app = abs(v / i)
    if z_app == 0:
        return -np.inf
    return float((z_app - abs(estimate.z_th)) / z_app)
