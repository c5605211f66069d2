import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import seeds
from dscheme.core import (
    DscError,
    DscState,
    PassivityFunctional,
    Propagator,
    PropagatorPair,
    SignalHistory,
    Timeline,
    check_alpha_passivity,
    compose,
    is_causal,
    make_probes,
    run_process,
    shift,
    shifted,
    stability_bound,
)

TAU = 0.1


def signal(values, start=0.0, kind="I", tau=TAU):
    return SignalHistory.from_chronological(values, start, Timeline(tau, kind))


def contraction(rng, dim, norm=0.95):
    A = rng.normal(size=(dim, dim))
    return norm * A / np.linalg.norm(A, 2)


class TestTimeline:
    def test_grids(self):
        assert Timeline(TAU, "I").contains_half(4) and not Timeline(TAU, "I").contains_half(3)
        assert Timeline(TAU, "J").contains_half(3)
        assert Timeline(TAU, "H").contains_half(3) and Timeline(TAU, "H").stride == 1

    def test_off_grid_time_rejected(self):
        with pytest.raises(DscError):
            Timeline(TAU).to_half(0.033)

    @pytest.mark.parametrize("tau", [0.0, -1.0, float("inf")])
    def test_bad_tau(self, tau):
        with pytest.raises(DscError):
            Timeline(tau)

    def test_bad_kind(self):
        with pytest.raises(DscError):
            Timeline(TAU, "K")


class TestShift:
    def test_zero_shift_identity(self):
        f = signal([[1.0], [2.0], [3.0]])
        assert shift(f, 0.0) == f

    @given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=8), st.integers(-6, 6))
    def test_inverse_pair(self, vals, k):
        f = signal(np.array(vals)[:, None])
        q = k * TAU / 2
        assert shift(shift(f, q), -q) == f

    def test_anchor_moves(self):
        f = signal([[1.0], [2.0], [3.0]], start=TAU)
        assert f.anchor == pytest.approx(3 * TAU)
        g = shift(f, -TAU / 2)
        assert g.anchor == pytest.approx(3.5 * TAU)
        assert g.timeline.kind == "J"
        np.testing.assert_array_equal(g.sample_half(7), [3.0])

    def test_value_semantics(self):
        # T_q f (t) = f(t + q)
        f = signal(np.arange(5.0)[:, None])
        g = shift(f, 2 * TAU)
        for k in (-4, -2, 0, 2):
            np.testing.assert_array_equal(g.sample_half(k), f.sample_half(k + 4))

    def test_needs_exactly_one_amount(self):
        with pytest.raises(DscError):
            shift(signal([[1.0]]))


class TestSignal:
    def test_truncation(self):
        f = signal(np.arange(1.0, 5.0)[:, None])
        g = f.truncate(TAU)
        np.testing.assert_array_equal(g.chronological()[1][:, 0], [1.0, 2.0, 0.0, 0.0])

    def test_zero_outside_window(self):
        f = signal([[1.0, 2.0]])
        np.testing.assert_array_equal(f.sample_half(-2), [0.0, 0.0])
        np.testing.assert_array_equal(f.sample_half(10), [0.0, 0.0])

    def test_off_grid_sample(self):
        with pytest.raises(DscError):
            signal([[1.0]]).sample_half(1)

    def test_window_most_recent_first(self):
        f = signal(np.arange(4.0)[:, None])
        np.testing.assert_array_equal(f.window(6, 3)[:, 0], [3.0, 2.0, 1.0])


class TestPropagators:
    def test_identity_and_linear(self):
        f = signal(np.random.default_rng(0).normal(size=(4, 2)))
        assert Propagator.identity()(f) == f
        A = np.array([[0.0, 1.0], [2.0, 0.0]])
        np.testing.assert_allclose(Propagator.linear(A)(f).values, f.values @ A.T)

    def test_compose(self):
        f = signal(np.ones((3, 1)))
        F = compose(Propagator.linear([[2.0]]), Propagator.linear([[3.0]]))
        np.testing.assert_array_equal(F(f).values, 6.0)

    def test_causal_maps(self):
        probes = make_probes(2, TAU, n_random=3, length=5)
        running_mean = Propagator(lambda w: w.mean(axis=0), depth=3)
        assert is_causal(Propagator.identity(), probes)
        assert is_causal(running_mean, probes)
        assert is_causal(shifted(running_mean, -TAU / 2, -TAU / 2), probes)

    def test_anticausal_map_detected(self):
        def lookahead(f):
            vals = np.array([f.sample_half(int(k) + 2) for k in f.times_half()])
            return SignalHistory(vals, f.anchor_half, f.timeline)

        assert not is_causal(lookahead, make_probes(1, TAU, n_random=2))

    def test_depth_positive(self):
        with pytest.raises(DscError):
            Propagator(lambda w: w[0], depth=0)


class TestRunProcess:
    def test_zero_excitation(self):
        pair = PropagatorPair(Propagator.identity(), Propagator.identity())
        traj = run_process(pair, signal(np.zeros((1, 3))), 5)
        assert not traj.incident.any() and not traj.outgoing.any()

    def test_identity_pair_circulates_dirac(self):
        e0 = np.array([1.0, -2.0])
        pair = PropagatorPair(Propagator.identity(), Propagator.identity())
        traj = run_process(pair, signal(e0[None]), 2)
        np.testing.assert_array_equal(traj.incident, [0 * e0, 0 * e0, e0, e0, e0])
        np.testing.assert_array_equal(traj.outgoing, [0 * e0, e0, e0, e0, e0])
        np.testing.assert_allclose(traj.times, [0, TAU / 2, TAU, 1.5 * TAU, 2 * TAU])

    @given(seeds, st.integers(1, 4))
    def test_incident_recursion(self, seed, n_exc):
        # z_in(t + tau) = F_C F_R [e + z_in](t) on I for memoryless maps
        rng = np.random.default_rng(seed)
        A, B = rng.normal(size=(3, 3)) * 0.5, rng.normal(size=(3, 3)) * 0.5
        e = signal(rng.normal(size=(n_exc, 3)))
        traj = run_process(PropagatorPair(Propagator.linear(A), Propagator.linear(B)), e, 6)
        z = traj.on_I()
        for n in range(6):
            expected = B @ (A @ (e.sample_half(2 * n) + z[n]))
            np.testing.assert_allclose(z[n + 1], expected, rtol=1e-12, atol=1e-12)

    def test_depth_longer_than_retained(self):
        pair = PropagatorPair(Propagator(lambda w: w[0] + w[2], depth=3), Propagator.identity())
        with pytest.raises(DscError):
            run_process(pair, signal([[1.0]]), 2, retain=2)

    def test_depth_two_memory(self):
        pair = PropagatorPair(Propagator(lambda w: 0.5 * (w[0] + w[1]), depth=2), Propagator.identity())
        traj = run_process(pair, signal([[1.0]]), 3, retain=2)
        np.testing.assert_allclose(traj.on_I()[:, 0], [0.0, 0.5, 0.75, 0.625])

    def test_excitation_must_be_on_I(self):
        pair = PropagatorPair(Propagator.identity(), Propagator.identity())
        with pytest.raises(DscError):
            run_process(pair, signal([[1.0]], start=TAU / 2, kind="J"), 2)

    def test_state_swap(self):
        s = DscState(np.array([1.0]), np.array([2.0]))
        assert s.nb().nb() == s and s.nb().incident[0] == 2.0
        assert s.norm() == pytest.approx(np.sqrt(5.0))


class TestPassivity:
    def test_zero_map_passive(self):
        alpha = PassivityFunctional.norm_power(2)
        probes = make_probes(3, TAU, n_random=3)
        zero = Propagator(lambda w: np.zeros(3))
        report = check_alpha_passivity(zero, alpha, probes)
        assert report.passive
        for f, margin in zip(probes, report.margins):
            _, v = f.chronological()
            assert margin == pytest.approx(alpha(v[0]) * TAU)

    def test_scaling_fails(self):
        alpha = PassivityFunctional.norm_power(1)
        F = Propagator.linear(1.5 * np.eye(2))
        for f in make_probes(2, TAU, n_random=4):
            assert not check_alpha_passivity(F, alpha, [f])

    @given(seeds)
    def test_contraction_passive(self, seed):
        rng = np.random.default_rng(seed)
        F = Propagator.linear(contraction(rng, 4))
        alpha = PassivityFunctional.norm_power(2)
        probes = make_probes(4, TAU, n_random=4, seed=seed)
        assert check_alpha_passivity(F, alpha, probes)
        assert check_alpha_passivity(shifted(F, -TAU / 2, -TAU / 2), alpha, probes)

    def test_delays_are_passive(self):
        # a pure delay moves every sample later, so the output sums lag
        alpha = PassivityFunctional.norm_power(2)
        delay = shifted(Propagator.identity(), -TAU, 0.0)
        assert check_alpha_passivity(delay, alpha, make_probes(2, TAU))
        advance = shifted(Propagator.identity(), TAU, 0.0)
        assert not check_alpha_passivity(advance, alpha, make_probes(2, TAU, n_random=2, dirac_axes=[]))

    def test_horizon(self):
        alpha = PassivityFunctional.norm_power(1)
        scale = Propagator.linear([[1.5]])
        f = signal([[0.0], [0.0], [1.0]])
        assert check_alpha_passivity(scale, alpha, [f], horizon=2)
        assert not check_alpha_passivity(scale, alpha, [f])

    def test_delimiting_constants(self):
        with pytest.raises(DscError):
            PassivityFunctional(lambda z: 0.0, a=-1.0)
        with pytest.raises(DscError):
            PassivityFunctional.norm_power(0)
        alpha = PassivityFunctional.norm_power(2)
        assert (alpha.a, alpha.b, alpha.c) == (0.0, 1.0, 0.5)
        assert alpha.delimits(np.array([3.0, 4.0]))


class TestStabilityBound:
    def test_norm_dirac(self):
        alpha = PassivityFunctional.norm_power(1)
        e = signal([[3.0, 4.0]])
        assert stability_bound(alpha, e) == pytest.approx(5.0)

    def test_norm_multi_sample_triangle(self):
        alpha = PassivityFunctional.norm_power(1)
        e = signal([[3.0, 4.0], [0.0, 1.0]])
        assert stability_bound(alpha, e) == pytest.approx(6.0)

    def test_zero_excitation(self):
        alpha = PassivityFunctional(lambda z: float(z @ z), a=0.25, b=2.0, c=0.5)
        assert stability_bound(alpha, signal(np.zeros((2, 2)))) == 0.25

    def test_dirac_general_constants(self):
        alpha = PassivityFunctional(lambda z: float(z @ z), a=0.5, b=2.0, c=0.5)
        e0 = np.array([1.0, 2.0])
        assert stability_bound(alpha, signal(e0[None])) == pytest.approx(0.5 + np.sqrt(2.0 * 5.0))

    @given(seeds, st.integers(1, 4))
    def test_bound_holds_for_passive_process(self, seed, n_exc):
        rng = np.random.default_rng(seed)
        alpha = PassivityFunctional.norm_power(2)
        pair = PropagatorPair(Propagator.linear(contraction(rng, 3)), Propagator.linear(contraction(rng, 3, 1.0)))
        e = signal(rng.normal(size=(n_exc, 3)))
        g = run_process(pair, e, 20).on_I()
        bound = stability_bound(alpha, e, g[:n_exc])
        assert np.all(np.linalg.norm(g[n_exc:], axis=1) <= bound * (1 + 1e-12))

    def test_bound_fails_for_expanding_process(self):
        alpha = PassivityFunctional.norm_power(2)
        pair = PropagatorPair(Propagator.linear(1.2 * np.eye(2)), Propagator.identity())
        e = signal([[1.0, 0.0]])
        g = run_process(pair, e, 10).on_I()
        assert np.linalg.norm(g[-1]) > stability_bound(alpha, e)


def test_make_probes():
    probes = make_probes(5, TAU, n_random=2, length=3, dirac_axes=[1, 4])
    assert len(probes) == 4
    assert len(probes[0]) == 3 and probes[0].dim == 5
    np.testing.assert_array_equal(probes[3].values, [[0, 0, 0, 0, 1]])
