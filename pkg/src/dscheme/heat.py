"""DSC heat-propagation scheme on hexahedral meshes.

Every cell carries, per face ``iota`` and local direction ``mu``, a node
state ``z_n[iota, mu]`` and a port state ``z_p[iota, mu]`` (kelvin). The
normal slot ``mu = iota // 2`` holds ``2 (-1)^iota`` times the nodal
(``z_n``) or face (``z_p``) temperature; the two other slots hold the
temperature difference between the cell's opposite faces along ``mu``.

One cycle is a connection half-step, which solves every interface for the
face temperature that makes the heat current continuous, followed by a
reflection half-step, which integrates the nodal temperatures with those
currents. The face current into a cell is

    J = sum_mu s[iota, mu] * (z_n[iota, mu] - delta(mu, iota // 2) * z_p[iota, mu])

with ``s[iota] = lambda_H * gamma.T @ f[iota]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .core import PassivityFunctional, Propagator, PropagatorPair
from .hexmesh import FACE_AXIS, FACE_SIGN, BoundaryCondition, HexCell, Mesh, MeshError

# tangential slots: TANGENTIAL[iota, mu] is True for mu != iota // 2
TANGENTIAL = np.ones((6, 3), dtype=bool)
TANGENTIAL[np.arange(6), FACE_AXIS] = False
_FACES = np.arange(6)


class SchemeError(RuntimeError):
    """Configuration or numerical failure inside the heat scheme."""


@dataclass(frozen=True, eq=False)
class SchemeCoefficients:
    """Per-cell geometry factors consumed by the stepping kernels.

    Attributes:
        s: (n_cells, 6, 3) face coefficients in W/K.
        normal: (n_cells, 6) cached ``s[:, iota, iota // 2]``.
        volume, c_v, lambda_H: per-cell arrays.
        gamma: (n_cells, 3, 3) dual-basis matrices.
    """

    s: np.ndarray
    normal: np.ndarray
    volume: np.ndarray
    c_v: np.ndarray
    lambda_H: np.ndarray
    gamma: np.ndarray

    @property
    def capacity(self) -> np.ndarray:
        """Heat capacity ``c_v * V`` per cell (J/K)."""
        return self.c_v * self.volume


def face_coefficients(cell: HexCell) -> np.ndarray:
    """``s[iota, mu] = lambda_H * f[iota, nu] * gamma[nu, mu]`` for one cell."""
    return cell.material.lambda_H * cell.f @ cell.gamma


def compute_coefficients(mesh: Mesh) -> SchemeCoefficients:
    cells = mesh.cells
    s = np.stack([face_coefficients(c) for c in cells]) if cells else np.zeros((0, 6, 3))
    normal = s[:, _FACES, FACE_AXIS]
    return SchemeCoefficients(
        s=s,
        normal=normal,
        volume=np.array([c.volume for c in cells]),
        c_v=np.array([c.material.c_v for c in cells]),
        lambda_H=np.array([c.material.lambda_H for c in cells]),
        gamma=np.stack([c.gamma for c in cells]) if cells else np.zeros((0, 3, 3)),
    )


@dataclass
class CellSource:
    """Heat power per cell in watts.

    ``power`` is either an array of per-cell wattages or a callable
    ``power(t) -> array``; ``None`` means no sources.
    """

    power: object = None

    def at(self, t: float, n_cells: int) -> np.ndarray:
        if self.power is None:
            return np.zeros(n_cells)
        value = self.power(t) if callable(self.power) else self.power
        out = np.broadcast_to(np.asarray(value, dtype=float), (n_cells,)).copy()
        if not np.all(np.isfinite(out)):
            bad = int(np.flatnonzero(~np.isfinite(out))[0])
            raise SchemeError(f"non-finite heat source in cell {bad}")
        return out


NO_SOURCE = CellSource()


def dielectric_source(cell: HexCell, sigma: float, U_n) -> float:
    """Dielectric loss power ``(1/2) sigma V |gamma @ U_n|^2`` in watts.

    ``U_n`` are the three complex nodal voltages (scalar products of the
    node vectors with the electric field); ``sigma = 2 pi f eps tan(delta)``
    is the effective loss conductivity in S/m.
    """
    if sigma < 0:
        raise SchemeError("loss conductivity must be non-negative")
    E = cell.gamma @ np.asarray(U_n, dtype=complex)
    return 0.5 * sigma * cell.volume * float(np.sum(E.real**2 + E.imag**2))


@dataclass
class SchemeState:
    """Port and node states of every cell.

    ``time`` is the time of the latest nodal update; ``cycles`` counts full
    connection-reflection cycles. ``J`` keeps the face currents (W) used by
    the most recent reflection, which the energy audit reads back.
    """

    z_n: np.ndarray
    z_p: np.ndarray
    T_n: np.ndarray
    tau: float
    time: float = 0.0
    cycles: int = 0
    ports_current: bool = False
    J: np.ndarray = field(default=None)

    def copy(self) -> SchemeState:
        return replace(
            self,
            z_n=self.z_n.copy(),
            z_p=self.z_p.copy(),
            T_n=self.T_n.copy(),
            J=None if self.J is None else self.J.copy(),
        )

    @property
    def T_p(self) -> np.ndarray:
        """Face temperatures (n_cells, 6) recovered from the port states."""
        return FACE_SIGN * self.z_p[:, _FACES, FACE_AXIS] / 2.0


class HeatScheme:
    """Mesh, coefficients and precomputed link/boundary index arrays."""

    def __init__(self, mesh: Mesh, coefficients: SchemeCoefficients | None = None):
        self.mesh = mesh
        self.coef = coefficients if coefficients is not None else compute_coefficients(mesh)
        links = mesh.links
        self.zeta, self.iota, self.chi, self.kappa = (links[:, i] for i in range(4))
        self.parity = np.where((self.iota + self.kappa) % 2 == 0, 1.0, -1.0)
        sn = self.coef.normal
        den = sn[self.zeta, self.iota] + self.parity * sn[self.chi, self.kappa]
        scale = np.abs(sn[self.zeta, self.iota]) + np.abs(sn[self.chi, self.kappa])
        singular = np.abs(den) <= 1e-13 * scale
        if np.any(singular):
            n = int(np.flatnonzero(singular)[0])
            raise SchemeError(f"singular interface denominator at link {tuple(int(x) for x in links[n])}")
        self.denominator = den

        keys = sorted(mesh.boundary)
        self.b_cell = np.array([k[0] for k in keys], dtype=np.int64)
        self.b_face = np.array([k[1] for k in keys], dtype=np.int64)
        self.b_conditions = [mesh.boundary[k] for k in keys]
        self.b_fixed_value = np.array([2.0 * FACE_SIGN[f] * bc.T_fix for (c, f), bc in zip(keys, self.b_conditions)])
        self.b_onset = np.array([bc.onset if bc.kind == "fixed" else math.inf for bc in self.b_conditions])
        bn = sn[self.b_cell, self.b_face]
        if np.any(np.abs(bn) == 0):
            raise SchemeError("boundary face with vanishing normal coefficient")

    @property
    def n_cells(self) -> int:
        return self.mesh.n_cells

    # -- state construction -------------------------------------------------

    def initial_state(self, T0, tau: float, *, static_iterations: int = 200) -> SchemeState:
        """Embed an initial nodal temperature field.

        Face temperatures come from repeated connection solves with all outer
        faces adiabatic until the tangential differences settle; a uniform
        field embeds exactly with zero differences.
        """
        if not tau > 0 or not math.isfinite(tau):
            raise SchemeError(f"time step must be positive and finite, got {tau}")
        nc = self.n_cells
        T = np.broadcast_to(np.asarray(T0, dtype=float), (nc,)).copy()
        if not np.all(np.isfinite(T)):
            raise SchemeError("initial temperatures must be finite")
        z_n = np.zeros((nc, 6, 3))
        z_n[:, _FACES, FACE_AXIS] = 2.0 * FACE_SIGN * T[:, None]
        state = SchemeState(z_n=z_n, z_p=np.zeros((nc, 6, 3)), T_n=T, tau=float(tau))
        scale = max(float(np.max(np.abs(T))) if nc else 0.0, 1e-300)
        for _ in range(static_iterations):
            z_p = self._ports(state.z_n, t=-math.inf)
            D = self._tangential(z_p)
            old = state.z_n[:, TANGENTIAL].copy()
            state.z_n[:, TANGENTIAL] = D[:, np.nonzero(TANGENTIAL)[1]]
            if np.max(np.abs(state.z_n[:, TANGENTIAL] - old), initial=0.0) <= 1e-15 * scale:
                break
        state.z_p = self._ports(state.z_n, t=-math.inf)
        state.ports_current = False
        state.J = np.zeros((nc, 6))
        return state

    def state_from_fields(self, T_n, T_p, D, tau: float) -> SchemeState:
        """State with explicitly given nodal, face and tangential-difference fields.

        ``T_p`` is (n_cells, 6) and ``D`` (n_cells, 3) with
        ``D[:, mu] = T_p[:, 2 mu + 1] - T_p[:, 2 mu]`` for consistent input.
        """
        nc = self.n_cells
        T_n = np.asarray(T_n, dtype=float).reshape(nc)
        z_n = np.zeros((nc, 6, 3))
        z_n[:] = np.asarray(D, dtype=float).reshape(nc, 1, 3)
        z_n[:, _FACES, FACE_AXIS] = 2.0 * FACE_SIGN * T_n[:, None]
        z_p = z_n.copy()
        z_p[:, _FACES, FACE_AXIS] = 2.0 * FACE_SIGN * np.asarray(T_p, dtype=float).reshape(nc, 6)
        return SchemeState(z_n=z_n, z_p=z_p, T_n=T_n.copy(), tau=float(tau), J=np.zeros((nc, 6)))

    # -- kernels ------------------------------------------------------------

    def _flux_numerator(self, z_n: np.ndarray) -> np.ndarray:
        return np.einsum("cfm,cfm->cf", self.coef.s, z_n)

    def _ports(self, z_n: np.ndarray, t: float) -> np.ndarray:
        q = self._flux_numerator(z_n)
        z_p = z_n.copy()
        normal = np.empty_like(q)
        val = (q[self.zeta, self.iota] + q[self.chi, self.kappa]) / self.denominator
        normal[self.zeta, self.iota] = val
        normal[self.chi, self.kappa] = self.parity * val
        if len(self.b_cell):
            adiabatic = q[self.b_cell, self.b_face] / self.coef.normal[self.b_cell, self.b_face]
            normal[self.b_cell, self.b_face] = np.where(t >= self.b_onset, self.b_fixed_value, adiabatic)
        z_p[:, _FACES, FACE_AXIS] = normal
        return z_p

    @staticmethod
    def _tangential(z_p: np.ndarray) -> np.ndarray:
        """Opposite-face differences ``-(z_p[2mu+1, mu] + z_p[2mu, mu]) / 2``, shape (n, 3)."""
        mu = np.arange(3)
        return -0.5 * (z_p[:, 2 * mu + 1, mu] + z_p[:, 2 * mu, mu])

    def connection_step(self, state: SchemeState) -> SchemeState:
        """Update port states in place; returns ``state``."""
        if state.ports_current:
            raise SchemeError("connection step out of order: ports already updated")
        state.z_p = self._ports(state.z_n, t=state.time + state.tau / 2)
        state.ports_current = True
        return state

    def face_currents(self, state: SchemeState) -> np.ndarray:
        """Heat current (W) into every cell through every face, (n_cells, 6)."""
        q = self._flux_numerator(state.z_n)
        return q - self.coef.normal * state.z_p[:, _FACES, FACE_AXIS]

    def reflection_step(self, state: SchemeState, sources: CellSource = NO_SOURCE) -> SchemeState:
        """Advance nodal temperatures by one time step in place; returns ``state``."""
        if not state.ports_current:
            raise SchemeError("reflection step out of order: ports are stale")
        S = sources.at(state.time + state.tau / 2, self.n_cells)
        J = self.face_currents(state)
        T = state.T_n + state.tau / self.coef.capacity * (S + J.sum(axis=1))
        state.z_n[:, _FACES, FACE_AXIS] = 2.0 * FACE_SIGN * T[:, None]
        D = self._tangential(state.z_p)
        state.z_n[:, TANGENTIAL] = D[:, np.nonzero(TANGENTIAL)[1]]
        state.T_n = T
        state.J = J
        state.time = (state.cycles + 1) * state.tau
        state.cycles += 1
        state.ports_current = False
        return state

    def cycle(self, state: SchemeState, sources: CellSource = NO_SOURCE) -> SchemeState:
        self.connection_step(state)
        return self.reflection_step(state, sources)

    def run(self, state: SchemeState, cycles: int, sources: CellSource = NO_SOURCE) -> SchemeState:
        for _ in range(cycles):
            self.cycle(state, sources)
        return state

    # -- diagnostics --------------------------------------------------------

    def face_gradients(self, state: SchemeState) -> np.ndarray:
        """Recovered temperature gradients ``gamma @ grad_B T`` per face, (n, 6, 3).

        ``grad_B T[iota, mu] = z_n[iota, mu] - delta(mu, iota // 2) z_p[iota, mu]``.
        """
        gB = state.z_n.copy()
        gB[:, _FACES, FACE_AXIS] -= state.z_p[:, _FACES, FACE_AXIS]
        return np.einsum("cnm,cfm->cfn", self.coef.gamma, gB)

    def boundary_current(self, state: SchemeState) -> float:
        """Total heat current (W) entering through outer faces in the last cycle."""
        if state.J is None or not len(self.b_cell):
            return 0.0
        return float(state.J[self.b_cell, self.b_face].sum())

    def energy(self, state: SchemeState) -> float:
        return float(np.dot(self.coef.capacity, state.T_n))

    def minimal_state(self, state: SchemeState) -> np.ndarray:
        """Non-redundant node-side state: nodal temperatures then tangential differences."""
        mu = np.arange(3)
        D = state.z_n[:, (2 * mu + 2) % 6, mu]
        return np.concatenate([state.T_n, D.reshape(-1)])

    def state_from_minimal(self, x: np.ndarray, tau: float) -> SchemeState:
        nc = self.n_cells
        x = np.asarray(x, dtype=float)
        T = x[:nc]
        D = x[nc:].reshape(nc, 3)
        z_n = np.zeros((nc, 6, 3))
        z_n[:] = D[:, None, :]
        z_n[:, _FACES, FACE_AXIS] = 2.0 * FACE_SIGN * T[:, None]
        return SchemeState(z_n=z_n, z_p=np.zeros((nc, 6, 3)), T_n=T.copy(), tau=float(tau), J=np.zeros((nc, 6)))


def connection_step(state: SchemeState, coefficients: SchemeCoefficients, mesh: Mesh) -> SchemeState:
    return HeatScheme(mesh, coefficients).connection_step(state)


def reflection_step(state: SchemeState, coefficients: SchemeCoefficients, sources: CellSource, mesh: Mesh) -> SchemeState:
    return HeatScheme(mesh, coefficients).reflection_step(state, sources)


def stable_timestep(mesh: Mesh, coefficients: SchemeCoefficients | None = None, safety: float = 0.5) -> float:
    """Heuristic step ``safety * min(c_v V / sum_iota |s[iota, iota // 2]|)``.

    Not a proof of stability; see :func:`empirical_stability_limit`.
    """
    if safety < 0:
        raise SchemeError("safety factor must be non-negative")
    coef = coefficients if coefficients is not None else compute_coefficients(mesh)
    return float(safety * np.min(coef.capacity / np.abs(coef.normal).sum(axis=1)))


def energy_audit(
    scheme: HeatScheme,
    before: SchemeState,
    after: SchemeState,
    sources: CellSource = NO_SOURCE,
    boundary_flux: float | None = None,
) -> float:
    """Energy balance residual (J) over the cycle(s) between two states.

    ``residual = sum c_v V dT - tau (sum S + boundary current)``. The boundary
    current defaults to the one recorded in ``after`` and is only meaningful
    for states exactly one cycle apart.
    """
    if boundary_flux is None:
        boundary_flux = scheme.boundary_current(after)
    S = sources.at(before.time + before.tau / 2, scheme.n_cells)
    dE = float(np.dot(scheme.coef.capacity, after.T_n - before.T_n))
    return dE - after.tau * (float(S.sum()) + boundary_flux)


# --- passivity harness hookup ---------------------------------------------

TANGENTIAL_WEIGHT = 0.25


def homogeneous(mesh: Mesh) -> Mesh:
    """Copy of ``mesh`` with every fixed boundary temperature set to zero.

    The cycle map is affine in the state; its linear part, which governs
    stability, is the cycle on this mesh without sources.
    """
    assignments = {
        key: BoundaryCondition.fixed(0.0, bc.onset)
        for key, bc in mesh.boundary.items() if bc.kind == "fixed"
    }
    return mesh.with_boundary(assignments) if assignments else mesh


def energy_weights(scheme: HeatScheme, tangential_weight: float = TANGENTIAL_WEIGHT) -> np.ndarray:
    """Scaling that turns the minimal state into energy coordinates.

    Nodal temperatures are weighted by ``sqrt(c_v V)``; the tangential
    differences by ``tangential_weight * sqrt(c_v V)``. The default weight
    makes the cycle a Euclidean contraction at the heuristic step on every
    mesh family tried (cube, sheared, jittered); it is a modelling choice.
    """
    root = np.sqrt(scheme.coef.capacity)
    return np.concatenate([root, tangential_weight * np.repeat(root, 3)])


def cycle_propagator_pair(scheme: HeatScheme, tau: float,
                          tangential_weight: float = TANGENTIAL_WEIGHT):
    """Wrap one heat cycle as a DSC propagator pair in energy coordinates.

    The state space is the weighted minimal node-side state (see
    :func:`energy_weights`), so ``alpha = ||.||^2`` is an energy functional.
    Port states are a deterministic function of the node states they are
    solved from, so the port-side sample is represented by that node state:
    ``F_C`` is the pure exchange and ``F_R`` evaluates the ports and
    reflects. Their composition is one full cycle.

    Returns ``(pair, alpha)`` with ``alpha = ||.||^2`` and constants
    ``a = 0, b = 1, c = 1/2``.
    """
    lin = HeatScheme(homogeneous(scheme.mesh), scheme.coef)
    w = energy_weights(lin, tangential_weight)

    def cycle(window):
        st = lin.state_from_minimal(window[0] / w, tau)
        lin.cycle(st)
        return lin.minimal_state(st) * w

    pair = PropagatorPair(F_R=Propagator(cycle, 1, "heat cycle"), F_C=Propagator.identity())
    return pair, PassivityFunctional.norm_power(2.0)


def empirical_stability_limit(scheme: HeatScheme, tau_lo: float, tau_hi: float, *,
                              cycles: int = 2000, growth: float = 10.0, rel_tol: float = 1e-3,
                              seed: int = 0) -> float:
    """Bisect the largest step for which a random start does not blow up.

    A step counts as unstable when the energy-weighted state norm grows by
    more than ``growth`` within ``cycles`` cycles. ``tau_hi`` must be
    unstable and ``tau_lo`` stable.
    """
    lin = HeatScheme(homogeneous(scheme.mesh), scheme.coef)
    w = energy_weights(lin)
    x0 = np.random.default_rng(seed).uniform(-1, 1, size=4 * lin.n_cells)

    def diverges(tau):
        st = lin.state_from_minimal(x0, tau)
        n0 = np.linalg.norm(w * x0)
        for _ in range(cycles):
            lin.cycle(st)
            if not np.linalg.norm(w * lin.minimal_state(st)) <= growth * n0:
                return True
        return False

    if diverges(tau_lo):
        raise SchemeError(f"lower bracket tau = {tau_lo} already unstable")
    if not diverges(tau_hi):
        raise SchemeError(f"upper bracket tau = {tau_hi} is stable")
    lo, hi = tau_lo, tau_hi
    while hi - lo > rel_tol * lo:
        mid = 0.5 * (lo + hi)
        if diverges(mid):
            hi = mid
        else:
            lo = mid
    return lo
