"""Reference solutions for one-dimensional transient conduction.

The slab ``0 <= x <= L`` starts at 0 K, has its face ``x = 0`` raised to
``T_step`` at ``t = 0`` and is insulated at ``x = L``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

SHORT_TIME_FO = 0.05
TERM_TOL = 1e-14


@dataclass(frozen=True)
class SlabProblem:
    L: float
    alpha_diff: float
    T_step: float = 1.0
    series_terms: int = 200

    def __post_init__(self):
        if not (self.L > 0 and self.alpha_diff > 0 and self.T_step > 0):
            raise ValueError("L, alpha_diff and T_step must be positive")
        if self.series_terms < 20:
            raise ValueError("series_terms must be >= 20")

    def fourier(self, t):
        return self.alpha_diff * np.asarray(t, dtype=float) / self.L**2

    def time_at(self, fo):
        return np.asarray(fo, dtype=float) * self.L**2 / self.alpha_diff


def _series(problem: SlabProblem, x: float, fo: float) -> float:
    total = 0.0
    for n in range(problem.series_terms):
        m = 2 * n + 1
        term = (4 / math.pi) / m * math.sin(m * math.pi * x / (2 * problem.L)) \
            * math.exp(-(m * math.pi / 2) ** 2 * fo)
        total += term
        if abs(term) < TERM_TOL:
            break
    return problem.T_step * (1.0 - total)


def _images(problem: SlabProblem, x: float, fo: float) -> float:
    # method of images, mirrored about the insulated face
    s = 2 * problem.L * math.sqrt(fo)
    total = 0.0
    for n in range(problem.series_terms):
        term = (-1) ** n * (erfc((2 * n * problem.L + x) / s) + erfc((2 * (n + 1) * problem.L - x) / s))
        total += term
        if abs(term) < TERM_TOL:
            break
    return problem.T_step * total


def slab_profile(problem: SlabProblem, x: float, t: float) -> float:
    """Temperature at depth ``x`` from the heated face at time ``t``.

    Uses the error-function image sum for Fourier numbers below
    ``SHORT_TIME_FO`` and the eigenfunction series otherwise.
    """
    if t < 0:
        raise ValueError("t must be >= 0")
    if not 0 <= x <= problem.L:
        raise ValueError("x outside the slab")
    if t == 0:
        return problem.T_step if x == 0 else 0.0
    fo = float(problem.fourier(t))
    if fo < SHORT_TIME_FO:
        return _images(problem, x, fo)
    return _series(problem, x, fo)


def slab_response(problem: SlabProblem, t):
    """Temperature at the insulated end; accepts scalar or array ``t``."""
    if np.ndim(t) == 0:
        return slab_profile(problem, problem.L, float(t))
    return np.array([slab_profile(problem, problem.L, float(s)) for s in np.ravel(t)]).reshape(np.shape(t))


def fd1d_solve(cells: int, spacing: float, alpha_diff: float, tau: float, steps: int,
               T_step: float = 1.0, initial=None, *, record_end: bool = False):
    """Explicit central-difference solution of the slab problem.

    Nodes sit at ``x_i = i * spacing``, ``i = 0..cells``; node 0 is held at
    ``T_step`` from ``t = 0`` and the last node is insulated by a
    mirror ghost node. Passing ``initial`` (length ``cells + 1``) together
    with ``T_step=None`` runs a fully insulated rod instead.

    Returns the node temperatures after ``steps`` steps, or with
    ``record_end`` a tuple ``(T, end_trace)`` where ``end_trace[n]`` is the
    insulated-end temperature after ``n`` steps.
    """
    if cells < 1 or steps < 0:
        raise ValueError("need cells >= 1 and steps >= 0")
    limit = spacing**2 / (2 * alpha_diff)
    if not 0 < tau <= limit:
        raise ValueError(f"time step {tau} outside the explicit stability range (0, {limit}]")
    r = alpha_diff * tau / spacing**2
    T = np.zeros(cells + 1) if initial is None else np.array(initial, dtype=float)
    if T.shape != (cells + 1,):
        raise ValueError("initial field needs cells + 1 values")
    if T_step is not None:
        T[0] = T_step
    trace = [T[-1]]
    for _ in range(steps):
        new = T.copy()
        new[1:-1] = T[1:-1] + r * (T[2:] - 2 * T[1:-1] + T[:-2])
        new[-1] = T[-1] + 2 * r * (T[-2] - T[-1])
        if T_step is None:
            new[0] = T[0] + 2 * r * (T[1] - T[0])
        else:
            new[0] = T_step
        T = new
        if record_end:
            trace.append(T[-1])
    if record_end:
        return T, np.array(trace)
    return T
