import numpy as np
import pytest

from liqimpulse import solver as solver_mod
from liqimpulse.costs import CostSpec, cost
from liqimpulse.errors import InputError, PolicyError, SolverInvariantError
from liqimpulse.lattice import GridSpec, PolicyField, problem_grid
from liqimpulse.market import MarketModel
from liqimpulse.payoff import UtilitySpec, value
from liqimpulse.solver import (SolverConfig, SolveResult, bar_operator, extract_policy, hat_step, solve_vn,
                               terminal_layer)

from oracles import stopping_value, tree_value
from toys import BINOMIAL_DOWN, BINOMIAL_MARKET, BINOMIAL_UP, TOY_COST, binomial_grid

U = UtilitySpec("bounded_slope", 0.5, 1.5)
SQRT = CostSpec("power", c0=1.0, alpha=0.5, M=1.0)


def grid5():
    return GridSpec.build(1.0, 4, (0.0, 2.0), 5, (-3.0, 3.0), 13, 1.0, 5)


def test_terminal_layer():
    g = grid5()
    v = terminal_layer(g, U, SQRT)
    assert np.allclose(v[:, :, g.zero_index], value(U, g.y)[None, :])
    j, i = int(np.argmin(np.abs(g.y - 1.0))), g.z_index(1.0)
    assert v[0, j, i] == pytest.approx(-np.log(2))
    assert np.all(v == v[:1])  # no x dependence


def test_bar_of_terminal_is_identity_for_subadditive_cost():
    g = grid5()
    v = terminal_layer(g, U, SQRT)
    bar, psi = bar_operator(v, g, SQRT, y_slopes=(1.5, 0.5))
    assert np.array_equal(bar, v)
    assert np.all(psi == np.arange(g.z.size))


def test_bar_dominant_target():
    g = GridSpec([0.0, 1.0], [0.0, 1.0], [0.0, 1.0, 2.0], [-0.1, 0.0, 0.1])
    free = CostSpec("power", c0=0.0, alpha=0.5, M=0.1)
    phi = np.zeros((2, 3, 3))
    phi[..., 1] = 5.0
    bar, psi = bar_operator(phi, g, free)
    assert np.all(bar == 5.0) and np.all(psi == 1)


def test_bar_tie_break_order():
    g = GridSpec([0.0, 1.0], [0.0, 1.0], [0.0, 1.0], [-1.0, -0.5, 0.0, 0.5, 1.0])
    free = CostSpec("power", c0=0.0, alpha=0.5, M=1.0)
    phi = np.ones((2, 2, 5))
    _, psi = bar_operator(phi, g, free)
    assert np.all(psi == np.arange(5))  # stay wins ties
    _, psi = bar_operator(phi, g, free, tie_break=("to_zero", "stay", "nearest"))
    assert np.all(psi == 2)
    _, psi = bar_operator(phi, g, free, tie_break=("nearest", "stay", "to_zero"))
    assert np.all(psi == np.arange(5))
    phi[..., 2] = 0.0  # zero unavailable: nearest, then smaller z
    phi[..., 2] = 1.0
    phi2 = np.ones((2, 2, 5))
    phi2[..., 2] = 0.0
    _, psi = bar_operator(phi2, g, free, tie_break=("to_zero", "nearest", "stay"))
    assert psi[0, 0, 2] == 1  # from z=0: equidistant -0.5 and 0.5, smaller wins


def test_hat_constant_fixed_point():
    g = grid5()
    m = MarketModel.constant(0.1, 0.3)
    k = np.full((g.x.size, g.y.size, g.z.size), 2.5)
    hat, keep = hat_step(k, k, m, g, 0.0, 0.25)
    assert np.allclose(hat, 2.5, atol=1e-14) and keep.all()


def test_hat_zero_position_no_transport():
    g = grid5()
    m = MarketModel.constant(0.0, 0.3)
    rng = np.random.default_rng(0)
    nxt = rng.normal(size=(g.x.size, g.y.size, g.z.size))
    low = np.full_like(nxt, -1e9)
    hat, _ = hat_step(nxt, low, m, g, 0.0, 0.01, y_slopes=(1.5, 0.5))
    from liqimpulse.market import transition_nodes
    from liqimpulse.lattice import x_stencil
    xn, w = transition_nodes(m, 0.0, g.x, 0.01, 7)
    st = x_stencil(g.x, xn)
    col = nxt[:, :, g.zero_index]
    ref = np.einsum("aq,q,aqj->aj", np.ones_like(xn), w,
                    st.w_lo[:, :, None] * col[st.i0] + st.w_hi[:, :, None] * col[st.i0 + 1])
    assert np.allclose(hat[:, :, g.zero_index], ref, atol=1e-13)


def test_hat_deterministic_running_max():
    g = grid5()
    m = MarketModel.constant(0.0, 0.0)
    rng = np.random.default_rng(3)
    bars = rng.normal(size=(g.t.size, g.x.size, g.y.size, g.z.size))
    cur = bars[-1]
    for n in range(g.t.size - 2, -1, -1):
        cur, _ = hat_step(cur, bars[n], m, g, g.t[n], 0.25)
    assert np.allclose(cur, bars.max(axis=0))


def test_degenerate_market_gives_liquidation_value():
    m = MarketModel.constant(0.0, 0.0)
    g = GridSpec.build(1.0, 2, (0.0, 2.0), 5, (-3.0, 3.0), 13, 1.0, 5)
    res = solve_vn(SolverConfig(g, n_max=4, full_depth=True), m, SQRT, U)
    liq = terminal_layer(g, U, SQRT)
    for s in res.surfaces:
        assert np.max(np.abs(s.values - liq[None])) <= 1e-12


def test_v1_matches_direct_stopping_solver():
    g = binomial_grid(2)
    res = solve_vn(SolverConfig(g, n_max=1, n_quad=2), BINOMIAL_MARKET, TOY_COST, U)
    a = int(np.flatnonzero(g.x == 0.0)[0])
    for y in (-2.0, 0.0, 1.5):
        j = int(np.flatnonzero(g.y == y)[0])
        for i, z in enumerate(g.z):
            ref = stopping_value(0, 0.0, y, z, n_steps=2, up=BINOMIAL_UP, down=BINOMIAL_DOWN,
                                 c=lambda d: cost(TOY_COST, d), U=lambda w: value(U, w))
            assert res.surfaces[0].values[0, a, j, i] == pytest.approx(ref, abs=1e-12)


def test_v2_matches_tree_enumeration_small():
    g = binomial_grid(2)
    res = solve_vn(SolverConfig(g, n_max=2, n_quad=2, full_depth=True), BINOMIAL_MARKET, TOY_COST, U)
    a = int(np.flatnonzero(g.x == 0.0)[0])
    j = int(np.flatnonzero(g.y == 0.0)[0])
    for i, z in enumerate(g.z):
        ref = tree_value(2, 0, 0.0, 0.0, z, n_steps=2, up=BINOMIAL_UP, down=BINOMIAL_DOWN, zs=list(g.z),
                         c=lambda d: cost(TOY_COST, d), U=lambda w: value(U, w))
        assert res.surfaces[1].values[0, a, j, i] == pytest.approx(ref, abs=1e-9)


def test_monotone_invariant_violation_aborts(monkeypatch):
    real = solver_mod.hat_step

    def broken(*a, **kw):
        hat, keep = real(*a, **kw)
        return hat - 1.0, keep

    monkeypatch.setattr(solver_mod, "hat_step", broken)
    g = grid5()
    with pytest.raises(SolverInvariantError) as err:
        solve_vn(SolverConfig(g, n_max=2), MarketModel.constant(0.0, 0.1), SQRT, U)
    assert err.value.diagnostic["k"] == 1


def test_config_validation():
    g = grid5()
    with pytest.raises(InputError):
        SolverConfig(g, stop_tol=0.0)
    with pytest.raises(InputError):
        SolverConfig(g, n_max=0)
    with pytest.raises(InputError):
        SolverConfig(g, tie_break=("stay", "stay", "nearest"))


def test_prohibitive_cost_allows_only_liquidation():
    m = MarketModel.constant(0.3, 0.2)
    huge = CostSpec("power", c0=1e6, alpha=0.5, M=1.0)
    g = GridSpec.build(1.0, 5, (0.0, 2.0), 7, (-3.0, 3.0), 13, 1.0, 5)
    res = solve_vn(SolverConfig(g, n_max=3, full_depth=True), m, huge, U)
    pol = extract_policy(res, huge)
    # the closing cost is paid anyway, so the only early trades are liquidations
    # (shorts under positive drift); no intermediate repositioning, longs hold to T
    assert np.all(pol.target[:-1][pol.exercise[:-1]] == 0.0)
    assert not pol.exercise[:-1][..., g.z > 0].any()
    assert np.array_equal(pol.exercise[-1], np.broadcast_to(g.z != 0, pol.exercise[-1].shape))
    assert np.all(pol.target[-1] == 0.0)


def test_free_trading_jumps_at_once_to_best_position():
    # cost 0 and strong drift: buying the maximum at t=0 is myopically best
    m = MarketModel.constant(1.0, 0.0)
    free = CostSpec("power", c0=0.0, alpha=0.5, M=1.0)
    g = GridSpec.build(1.0, 2, (-1.0, 3.0), 9, (-6.0, 6.0), 49, 1.0, 5)
    res = solve_vn(SolverConfig(g, n_max=3, full_depth=True), m, free, U)
    pol = extract_policy(res, free)
    j = int(np.argmin(np.abs(g.y)))
    for i, z in enumerate(g.z):
        if z != 1.0:
            assert pol.exercise[0, 4, j, i] and pol.target[0, 4, j, i] == 1.0


def test_policy_targets_are_nodes_and_hold_means_stay():
    m = MarketModel.constant(0.5, 0.2)
    c = CostSpec("power", c0=0.05, alpha=0.5, M=2.0)
    g = problem_grid(m, c, 1.0, 10, 1.0, 0.0, 9, 17, 9, 0.01)
    res = solve_vn(SolverConfig(g, n_max=4, full_depth=True), m, c, U)
    pol = extract_policy(res, c)
    assert np.all(np.isin(pol.target, g.z))
    zfull = np.broadcast_to(g.z, g.shape)
    assert np.array_equal(pol.target[~pol.exercise], zfull[~pol.exercise])
    assert pol.exercise[:-1].any()
    inc = res.increments
    assert inc[0] > 0 and all(v >= 0 for v in inc)


def test_small_jumps_land_at_zero_with_inner_nodes():
    # extra nodes inside (-eps1, eps1) make small jumps representable
    from liqimpulse.costs import checkable_constants
    m = MarketModel.constant(0.5, 0.2)
    c = CostSpec("power", c0=0.1, alpha=0.5, M=2.0)
    k = checkable_constants(c, m, 0.5, 1.5, 1.0)
    g0 = problem_grid(m, c, 1.0, 10, 1.0, 0.0, 9, 17, 9, k.eps1)
    inner = [k.eps1 * f for f in (0.25, 0.5, 0.75)]
    z = np.unique(np.concatenate([g0.z, inner, [-v for v in inner]]))
    g = GridSpec(g0.t, g0.x, g0.y, z)
    res = solve_vn(SolverConfig(g, n_max=4, full_depth=True), m, c, U)
    pol = extract_policy(res, c)
    zfull = np.broadcast_to(g.z, g.shape)
    d = np.abs(pol.target - zfull)
    small = pol.exercise & (d > 0) & (d < k.eps1)
    assert np.all(pol.target[small] == 0.0)


def test_chain_cycle_detected():
    g = GridSpec([0.0, 1.0], [0.0, 1.0], [0.0, 1.0], [-1.0, 0.0, 1.0])
    free = CostSpec("power", c0=0.0, alpha=0.5, M=1.0)
    ex = np.zeros(g.shape, dtype=bool)
    ex[0] = True
    psi = np.zeros(g.shape, dtype=np.intp)
    psi[0, ..., 0], psi[0, ..., 1], psi[0, ..., 2] = 2, 2, 0  # -1 -> 1 -> -1 ...
    surf = solver_mod.ValueSurface(g, 1, np.zeros(g.shape))
    res = SolveResult(g, [surf], np.zeros(g.shape[1:]), ex, psi)
    with pytest.raises(PolicyError, match="cycle"):
        extract_policy(res, free)
