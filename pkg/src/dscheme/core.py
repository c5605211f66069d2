"""Discrete timelines, causal propagators and the connection-reflection recursion.

Times are kept as integer counts of half steps (``t = k * tau / 2``) so
that shifts and grid membership are exact: even ``k`` lie on the integer
grid ``I``, odd ``k`` on the half-shifted grid ``J``. The discrete measure
gives every sample of ``I`` or ``J`` the weight ``tau``.

Passivity checking here is a falsifier: it evaluates the running
functional sums on a finite set of probe signals and reports the worst
slack. A pass does not prove passivity of the map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

GRID_KINDS = ("I", "J", "H")


class DscError(ValueError):
    """Invalid timeline, signal or process configuration."""


@dataclass(frozen=True)
class Timeline:
    """Sampling grid with step ``tau`` (s).

    ``kind`` is ``"I"`` (multiples of ``tau``), ``"J"`` (odd multiples of
    ``tau / 2``) or ``"H"`` (their union).
    """

    tau: float
    kind: str = "I"

    def __post_init__(self):
        if not (self.tau > 0 and math.isfinite(self.tau)):
            raise DscError(f"tau must be positive and finite, got {self.tau}")
        if self.kind not in GRID_KINDS:
            raise DscError(f"grid kind must be one of {GRID_KINDS}, got {self.kind!r}")

    @property
    def stride(self) -> int:
        """Sample spacing in half steps."""
        return 1 if self.kind == "H" else 2

    @property
    def weight(self) -> float:
        """Measure of one sample."""
        return self.tau

    def contains_half(self, k: int) -> bool:
        if self.kind == "H":
            return True
        return (k % 2 == 0) == (self.kind == "I")

    def to_half(self, t: float) -> int:
        """Convert seconds to half steps, rejecting off-grid values."""
        k = t / (self.tau / 2)
        r = round(k)
        if abs(k - r) > 1e-9 * max(1.0, abs(k)):
            raise DscError(f"{t} s is not a multiple of tau/2 = {self.tau / 2} s")
        return int(r)

    def seconds(self, k) -> float:
        return k * self.tau / 2

    def shifted(self, half_steps: int) -> Timeline:
        if self.kind == "H" or half_steps % 2 == 0:
            return self
        return Timeline(self.tau, "J" if self.kind == "I" else "I")


@dataclass(frozen=True, eq=False)
class SignalHistory:
    """Finite back-in-time sequence of state vectors.

    ``values[0]`` is the sample at the anchor time, ``values[n]`` the one
    ``n`` grid steps earlier. Samples before the oldest stored one are zero.
    """

    values: np.ndarray
    anchor_half: int
    timeline: Timeline

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[1] < 1:
            raise DscError("signal values must have shape (samples, dim)")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "anchor_half", int(self.anchor_half))
        if not self.timeline.contains_half(self.anchor_half):
            raise DscError(f"anchor {self.anchor_half} half steps is not on grid {self.timeline.kind}")

    @classmethod
    def from_chronological(cls, values, start: float = 0.0, timeline: Timeline | None = None,
                           tau: float | None = None) -> SignalHistory:
        """Signal whose oldest sample sits at ``start`` seconds."""
        if timeline is None:
            if tau is None:
                raise DscError("need a timeline or tau")
            timeline = Timeline(tau, "I")
        v = np.array(values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        first = timeline.to_half(start)
        anchor = first + timeline.stride * (len(v) - 1)
        return cls(v[::-1].copy(), anchor, timeline)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def tau(self) -> float:
        return self.timeline.tau

    @property
    def anchor(self) -> float:
        return self.timeline.seconds(self.anchor_half)

    def __len__(self) -> int:
        return len(self.values)

    def times_half(self) -> np.ndarray:
        """Sample times in half steps, most recent first."""
        return self.anchor_half - self.timeline.stride * np.arange(len(self.values))

    def chronological(self) -> tuple[np.ndarray, np.ndarray]:
        return self.times_half()[::-1], self.values[::-1]

    def sample_half(self, k: int) -> np.ndarray:
        """Value at half-step time ``k`` (zero outside the stored window)."""
        if not self.timeline.contains_half(k):
            raise DscError(f"time {k} half steps is not on grid {self.timeline.kind}")
        n = (self.anchor_half - k) // self.timeline.stride
        if 0 <= n < len(self.values):
            return self.values[n]
        return np.zeros(self.dim)

    def window(self, k: int, depth: int) -> np.ndarray:
        """``depth`` samples ending at time ``k``, most recent first."""
        return np.stack([self.sample_half(k - self.timeline.stride * n) for n in range(depth)])

    def truncate(self, t: float) -> SignalHistory:
        """``[f]_{<=t}``: zero every sample later than ``t`` seconds."""
        return self.truncate_half(math.floor(t / (self.tau / 2) + 1e-9))

    def truncate_half(self, k: int) -> SignalHistory:
        v = self.values.copy()
        v[self.times_half() > k] = 0.0
        return SignalHistory(v, self.anchor_half, self.timeline)

    def allclose(self, other: SignalHistory, **kw) -> bool:
        return (self.anchor_half == other.anchor_half and self.timeline == other.timeline
                and self.values.shape == other.values.shape and np.allclose(self.values, other.values, **kw))

    def __eq__(self, other):
        if not isinstance(other, SignalHistory):
            return NotImplemented
        return (self.anchor_half == other.anchor_half and self.timeline == other.timeline
                and np.array_equal(self.values, other.values))

    __hash__ = None


def shift(signal: SignalHistory, q: float | None = None, *, half_steps: int | None = None) -> SignalHistory:
    """Shift operator ``T_q: f(t) -> f(t + q)``.

    The stored samples are unchanged; the anchor moves to ``anchor - q``
    and an odd number of half steps swaps the ``I`` and ``J`` grids.
    """
    if (q is None) == (half_steps is None):
        raise DscError("give exactly one of q (seconds) or half_steps")
    k = signal.timeline.to_half(q) if half_steps is None else int(half_steps)
    return SignalHistory(signal.values, signal.anchor_half - k, signal.timeline.shifted(k))


@dataclass(frozen=True)
class DscState:
    """Incident and outgoing components of a propagating field."""

    incident: np.ndarray
    outgoing: np.ndarray

    def nb(self) -> DscState:
        """Node-boundary map: swap the components."""
        return DscState(self.outgoing, self.incident)

    def norm(self, norm: Callable[[np.ndarray], float] = np.linalg.norm) -> float:
        return math.sqrt(norm(self.incident) ** 2 + norm(self.outgoing) ** 2)

    @property
    def total(self) -> np.ndarray:
        """Total field ``z_in + z_out`` (port type on I, node type on J)."""
        return np.asarray(self.incident) + np.asarray(self.outgoing)


class Propagator:
    """Causal map driven by the most recent ``depth`` samples of its input.

    ``fn`` receives a ``(depth, dim)`` window, most recent sample first, and
    returns the output vector at the window's time. Calling the propagator
    on a whole :class:`SignalHistory` maps it sample by sample.
    """

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], depth: int = 1, name: str = ""):
        if depth < 1:
            raise DscError("history depth must be >= 1")
        self.fn = fn
        self.depth = int(depth)
        self.name = name or getattr(fn, "__name__", "propagator")

    def latest(self, history: SignalHistory) -> np.ndarray:
        return np.asarray(self.fn(history.window(history.anchor_half, self.depth)), dtype=float)

    def __call__(self, signal: SignalHistory) -> SignalHistory:
        out = [np.asarray(self.fn(signal.window(k, self.depth)), dtype=float) for k in signal.times_half()]
        return SignalHistory(np.stack(out), signal.anchor_half, signal.timeline)

    def __repr__(self):
        return f"Propagator({self.name!r}, depth={self.depth})"

    @classmethod
    def identity(cls) -> Propagator:
        return cls(lambda w: w[0], 1, "identity")

    @classmethod
    def linear(cls, matrix, name: str = "linear") -> Propagator:
        A = np.asarray(matrix, dtype=float)
        return cls(lambda w: A @ w[0], 1, name)


SignalMap = Callable[[SignalHistory], SignalHistory]


def compose(F: SignalMap, G: SignalMap) -> SignalMap:
    """``F G f = F[G[f]]``."""
    def FG(f):
        return F(G(f))
    return FG


def shifted(F: SignalMap, r: float, s: float) -> SignalMap:
    """``T_r o F o T_s``."""
    def TFT(f):
        return shift(F(shift(f, s)), r)
    return TFT


def is_causal(F: SignalMap, probes: Iterable[SignalHistory], atol: float = 0.0) -> bool:
    """Truncation test: ``F f (t) == F [f]_{<=t} (t)`` at every probe sample time."""
    for f in probes:
        full = F(f)
        for k in f.times_half():
            trunc = F(f.truncate_half(int(k)))
            for kk in full.times_half():
                if kk <= k and not np.allclose(full.sample_half(int(kk)), trunc.sample_half(int(kk)), rtol=0, atol=atol):
                    return False
    return True


@dataclass(frozen=True)
class PropagatorPair:
    """Reflection map (switching on J) and connection map (switching on I)."""

    F_R: Propagator
    F_C: Propagator

    @property
    def depth(self) -> int:
        return max(self.F_R.depth, self.F_C.depth)


@dataclass
class Trajectory:
    """DSC process samples on H; row ``k`` holds the state at ``k * tau / 2``."""

    tau: float
    incident: np.ndarray
    outgoing: np.ndarray

    def __len__(self):
        return len(self.incident)

    def __getitem__(self, k: int) -> DscState:
        return DscState(self.incident[k], self.outgoing[k])

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self.incident)) * self.tau / 2

    def on_I(self) -> np.ndarray:
        """Incident component at the integer step times."""
        return self.incident[::2]

    def pair_norms(self, norm: Callable = np.linalg.norm) -> np.ndarray:
        return np.array([self[k].norm(norm) for k in range(len(self))])


def run_process(pair: PropagatorPair, excitation: SignalHistory, steps: int, *,
                retain: int | None = None) -> Trajectory:
    """DSC process excited by ``excitation`` and generated by ``pair``.

    Starting from ``z = 0`` at ``t = 0``, each integer-grid time ``t``
    produces ``z_out(t + tau/2)`` from the shifted history
    ``T_{-tau/2} [e + z_in]_{<=t}`` through ``F_R``, and each half-grid time
    produces ``z_in(t + tau/2)`` from ``T_{-tau/2} [z_out]_{<=t}`` through
    ``F_C``; the component not updated carries over. ``steps`` full cycles
    are run, giving ``2 * steps + 1`` samples.

    ``excitation`` lives on I and is read as zero outside its stored samples.
    """
    if excitation.timeline.kind != "I":
        raise DscError("excitation must be sampled on the integer grid I")
    retain = pair.depth if retain is None else int(retain)
    if pair.depth > retain:
        raise DscError(f"propagator needs {pair.depth} samples of history, only {retain} retained")
    tau = excitation.tau
    dim = excitation.dim
    n = 2 * steps + 1
    z_in = np.zeros((n, dim))
    z_out = np.zeros((n, dim))
    grid_I = Timeline(tau, "I")
    grid_J = Timeline(tau, "J")

    def history(rows, k, grid, extra=None):
        # samples at k, k-2, ... down to the retained depth
        ks = [k - 2 * m for m in range(retain)]
        vals = [rows[kk] if 0 <= kk < n else np.zeros(dim) for kk in ks]
        if extra is not None:
            vals = [v + extra.sample_half(kk) for v, kk in zip(vals, ks)]
        return SignalHistory(np.stack(vals), k, grid)

    for k in range(2 * steps):
        if k % 2 == 0:
            h = shift(history(z_in, k, grid_I, excitation), half_steps=-1)
            z_out[k + 1] = pair.F_R.latest(h)
            z_in[k + 1] = z_in[k]
        else:
            h = shift(history(z_out, k, grid_J), half_steps=-1)
            z_in[k + 1] = pair.F_C.latest(h)
            z_out[k + 1] = z_out[k]
    return Trajectory(tau, z_in, z_out)


@dataclass(frozen=True)
class PassivityFunctional:
    """Non-negative functional ``alpha`` with ``||z|| <= a + b alpha(z)^c``."""

    alpha: Callable[[np.ndarray], float]
    a: float = 0.0
    b: float = 1.0
    c: float = 1.0
    norm: Callable[[np.ndarray], float] = np.linalg.norm

    def __post_init__(self):
        if not (self.a >= 0 and self.b > 0 and self.c > 0):
            raise DscError("delimiting constants need a >= 0, b > 0, c > 0")

    def __call__(self, z) -> float:
        return float(self.alpha(np.asarray(z, dtype=float)))

    @classmethod
    def norm_power(cls, p: float = 1.0, norm: Callable = np.linalg.norm) -> PassivityFunctional:
        """``alpha = ||.||^p`` with the exact constants ``a=0, b=1, c=1/p``."""
        if p <= 0:
            raise DscError("power must be positive")
        return cls(lambda z: norm(z) ** p, 0.0, 1.0, 1.0 / p, norm)

    def delimits(self, z, rtol: float = 1e-12) -> bool:
        lhs = self.norm(np.asarray(z, dtype=float))
        rhs = self.a + self.b * self(z) ** self.c
        return lhs <= rhs * (1 + rtol) + rtol


@dataclass
class PassivityReport:
    passive: bool
    worst_margin: float
    margins: list = field(default_factory=list)
    worst_probe: int = -1

    def __bool__(self):
        return self.passive


def _running_sums(signal: SignalHistory, alpha: PassivityFunctional) -> tuple[np.ndarray, np.ndarray]:
    times, values = signal.chronological()
    weights = np.array([alpha(v) for v in values]) * signal.timeline.weight
    return times, weights


def check_alpha_passivity(F: SignalMap, alpha: PassivityFunctional, probes: Sequence[SignalHistory],
                          horizon: int | None = None, rtol: float = 1e-12) -> PassivityReport:
    """Falsification test of ``sum_{s<t} alpha(Ff(s)) tau <= sum_{s<t} alpha(f(s)) tau``.

    Each probe is cut to its first ``horizon`` samples and the inequality
    is evaluated at every sample time of input or output, plus once past
    the end. The margin is the smallest slack found; the map is reported
    passive when no margin falls below ``-rtol`` times the probe's total.
    """
    margins = []
    passive = True
    for f in probes:
        if horizon is not None and len(f) > horizon:
            times, vals = f.chronological()
            f = SignalHistory(vals[:horizon][::-1], int(times[horizon - 1]), f.timeline)
        out = F(f)
        t_in, w_in = _running_sums(f, alpha)
        t_out, w_out = _running_sums(out, alpha)
        events = np.union1d(t_in, t_out)
        events = np.append(events, events[-1] + 1)
        c_in = np.concatenate([[0.0], np.cumsum(w_in)])
        c_out = np.concatenate([[0.0], np.cumsum(w_out)])
        # sums over samples strictly earlier than each event time
        s_in = c_in[np.searchsorted(t_in, events, side="left")]
        s_out = c_out[np.searchsorted(t_out, events, side="left")]
        # the first event has both sums empty
        slack = (s_in - s_out)[1:]
        m = float(slack.min())
        margins.append(m)
        if m < -rtol * max(float(c_in[-1]), 1e-300):
            passive = False
    worst = int(np.argmin(margins)) if margins else -1
    return PassivityReport(passive, min(margins) if margins else math.inf, margins, worst)


def stability_bound(alpha: PassivityFunctional, excitation: SignalHistory,
                    g: np.ndarray | None = None, *, integral: float | None = None) -> float:
    """Uniform bound ``a + (b/tau * int_[0,N tau) alpha(e+g) - alpha(g) dmu)^c`` on ``||g(t)||``.

    ``g`` holds the process values at the excitation's sample times
    (chronological); omitted, it is taken as zero, which is exact for a
    single-sample (Dirac) excitation. A non-positive integral yields ``a``.
    """
    tau = excitation.tau
    if integral is None:
        _, e = excitation.chronological()
        g = np.zeros_like(e) if g is None else np.asarray(g, dtype=float).reshape(e.shape)
        integral = tau * sum(alpha(ek + gk) - alpha(gk) for ek, gk in zip(e, g))
    if integral <= 0:
        return alpha.a
    return alpha.a + (alpha.b / tau * integral) ** alpha.c


def make_probes(dim: int, tau: float, *, n_random: int = 8, length: int = 6,
                dirac_axes: Iterable[int] | None = None, seed: int = 0) -> list[SignalHistory]:
    """Random signals uniform in ``[-1, 1]^dim`` plus single-sample axis Diracs."""
    rng = np.random.default_rng(seed)
    grid = Timeline(tau, "I")
    probes = [SignalHistory.from_chronological(rng.uniform(-1, 1, size=(length, dim)), 0.0, grid)
              for _ in range(n_random)]
    axes = range(dim) if dirac_axes is None else dirac_axes
    for i in axes:
        e = np.zeros((1, dim))
        e[0, i] = 1.0
        probes.append(SignalHistory.from_chronological(e, 0.0, grid))
    return probes
