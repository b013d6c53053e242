import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from gibbs_ldp.diagnostics import count_b_dense, hc_violations
from gibbs_ldp.errors import ConfigError, InfeasibleStart, IntensityAssumptionViolated, PreconditionViolated
from gibbs_ldp.models import HamiltonianSpec, HardCore, KWise, Strauss, TruncatedHardCore, hamiltonian, pair_count_Sr
from gibbs_ldp.samplers import (
    McmcConfig,
    ResampleCoupling,
    RngStream,
    ThinSprinkleCoupling,
    build_resample_coupling,
    build_thin_sprinkle,
    detect_event_E_delete,
    detect_event_E_move,
    map_replicas,
    mcmc_canonical,
    mcmc_chain,
    move_context,
    sample_binomial,
    sample_conditioned_resample,
    sample_poisson,
)
from gibbs_ldp.torus import TorusWindow

from conftest import config

seeds = st.integers(0, 2**32 - 1)


def test_rng_streams_are_reproducible_and_distinct():
    a = RngStream(7, 1).generator.random(5)
    assert np.array_equal(a, RngStream(7, 1).generator.random(5))
    assert not np.array_equal(a, RngStream(7, 2).generator.random(5))
    assert not np.array_equal(RngStream(7, 1).child(0).generator.random(5),
                              RngStream(7, 1).child(1).generator.random(5))


def test_map_replicas_keeps_order():
    assert map_replicas(lambda x: x * x, list(range(10)), threads=4) == [x * x for x in range(10)]


def test_binomial_single_point_mean():
    w = TorusWindow(2, 1.0, 1)
    g = RngStream(3).generator
    xs = np.array([sample_binomial(w, g).points[0] for _ in range(100000)])
    se = w.side / math.sqrt(12 * len(xs))
    assert np.all(np.abs(xs.mean(0)) < 4 * se)
    assert xs.min() >= -0.5 and xs.max() < 0.5


def test_poisson_count_moments():
    w = TorusWindow(2, 2.0, 50)
    g = RngStream(4).generator
    counts = np.array([len(sample_poisson(w, g)) for _ in range(20000)])
    assert abs(counts.mean() - 50) < 4 * math.sqrt(50 / len(counts))
    assert counts.var() == pytest.approx(50, rel=0.05)


def test_ideal_gas_chain_matches_binomial():
    w = TorusWindow(2, 1.0, 20)
    r = 0.6
    chain_samples = mcmc_canonical(Strauss(1.0, r), None, w, McmcConfig(5, 2, 3000), RngStream(1))
    chain_stat = [pair_count_Sr(om, r) for om in chain_samples]
    g = RngStream(2).generator
    direct = [pair_count_Sr(sample_binomial(w, g), r) for _ in range(3000)]
    assert stats.ks_2samp(chain_stat, direct).pvalue > 0.001


def test_chain_accepts_everything_at_zero_energy():
    chain = mcmc_chain(Strauss(1.0, 0.5), None, TorusWindow(2, 1.0, 10), McmcConfig(), RngStream(0))
    chain.run(5000)
    assert chain.accepted == 5000


@pytest.mark.parametrize("V", [Strauss(0.5, 0.5), KWise(3, 0.6, 0.7), KWise(3, 0.6, 1.0, "clique"),
                               TruncatedHardCore(0.4, 2.0), HardCore(0.3)])
def test_chain_energy_bookkeeping(V):
    w = TorusWindow(2, 1.0, 40)
    chain = mcmc_chain(V, None, w, McmcConfig(), RngStream(5))
    energies, _ = chain.run(4000, record_every=400)
    assert chain.H == pytest.approx(hamiltonian(None, V, chain.configuration()), abs=1e-8)
    assert np.all(np.isfinite(energies))


def test_boundary_chain_energy_bookkeeping():
    w = TorusWindow(2, 1.0, 36)
    g = np.random.default_rng(0)
    bc = np.vstack([g.uniform(3.0, 3.5, (15, 2)), -g.uniform(3.0, 3.5, (15, 2))])
    for spec in (HamiltonianSpec.boundary1(bc), HamiltonianSpec.boundary2(bc)):
        chain = mcmc_chain(Strauss(0.5, 0.5), spec, w, McmcConfig(), RngStream(1))
        chain.run(3000)
        assert chain.H == pytest.approx(hamiltonian(spec, Strauss(0.5, 0.5), chain.configuration()), abs=1e-8)


def test_chain_is_deterministic():
    w = TorusWindow(2, 1.0, 30)
    runs = [mcmc_chain(Strauss(0.5, 0.5), None, w, McmcConfig(), RngStream(9, 3)).run(2000, 100)[0]
            for _ in range(2)]
    assert np.array_equal(*runs)


@pytest.mark.parametrize("R,n", [(0.3, 50), (0.5, 100)])
def test_hardcore_samples_never_violate(R, n):
    w = TorusWindow(2, 1.0, n)
    out = mcmc_canonical(HardCore(R), None, w, McmcConfig(20, 2, 30), RngStream(n))
    assert all(hc_violations(om, R).count == 0 for om in out)


def test_hardcore_guards():
    with pytest.raises(IntensityAssumptionViolated):
        mcmc_chain(HardCore(0.6), None, TorusWindow(2, 1.0, 100), McmcConfig(), RngStream(0))
    w = TorusWindow(2, 1.0, 100)
    crowded = config(w, np.random.default_rng(0).uniform(-0.2, 0.2, (100, 2)))
    with pytest.raises(InfeasibleStart):
        mcmc_chain(HardCore(0.3), None, w, McmcConfig(), RngStream(0), start=crowded)


def test_mcmc_config_validation():
    with pytest.raises(ConfigError):
        McmcConfig(proposal="grid", grid_points=1)
    with pytest.raises(ConfigError):
        McmcConfig(burn_in=0)


# couplings ------------------------------------------------------------------


def test_resample_small_epsilon_keeps_base():
    w = TorusWindow(2, 1.0, 50)
    base = sample_binomial(w, RngStream(0))
    c = build_resample_coupling(base, 1e-12, RngStream(1))
    assert np.array_equal(c.partner_points, base.points)


def test_thin_sprinkle_small_delta_keeps_base():
    w = TorusWindow(2, 1.0, 50)
    c = build_thin_sprinkle(w, 0.0, RngStream(1))
    assert np.array_equal(c.combined.points, c.base.points)


def _cluster_base(n=100, k=5, r=0.1, seed=0):
    w = TorusWindow(2, 1.0, n)
    g = np.random.default_rng(seed)
    pts = g.uniform(-w.half, w.half, (n, 2))
    pts[:k] = g.uniform(-0.03, 0.03, (k, 2)) + 2.0
    return config(w, pts)


def test_move_event_no_dense_points():
    w = TorusWindow(2, 1.0, 100)
    base = config(w, np.stack(np.meshgrid(np.arange(-5, 5), np.arange(-5, 5)), -1).reshape(-1, 2) + 0.5)
    n = len(base)
    c = ResampleCoupling(base, np.full(n, 0.5), base.points.copy(), 0.1)
    assert detect_event_E_move(c, 4, 0.1).holds


def test_move_event_with_one_dense_point():
    w = TorusWindow(2, 1.0, 100)
    pts = np.stack(np.meshgrid(np.arange(-5, 5), np.arange(-5, 5)), -1).reshape(-1, 2) + 0.5
    pts[:3] = [[0.52, 0.51], [0.48, 0.5], [0.5, 0.53]]  # a 4-cluster around (0.5, 0.5)
    base = config(w, pts)
    ctx = move_context(base, 4, 0.1)
    assert ctx.N == 4
    marks = np.full(100, 0.5)
    marks[ctx.dense] = 0.01
    repl = base.points.copy()
    centers = ctx.cubes.centers
    repl[ctx.dense] = centers[:4] + 0.01
    c = ResampleCoupling(base, marks, repl, 0.1)
    assert detect_event_E_move(c, 4, 0.1, ctx=ctx).holds
    repl[ctx.dense] = centers[0] + 0.01  # both into the same small cube
    bad = ResampleCoupling(base, marks, repl, 0.1)
    assert detect_event_E_move(bad, 4, 0.1, ctx=ctx).failed_clauses() == ["iii"]


def test_move_event_fails_when_sparse_point_moves():
    base = _cluster_base()
    ctx = move_context(base, 4, 0.1)
    c = sample_conditioned_resample(base, 0.1, ctx, RngStream(0))
    marks = c.marks.copy()
    marks[np.flatnonzero(~ctx.dense)[0]] = 0.0
    moved = ResampleCoupling(base, marks, c.replacements, 0.1)
    assert detect_event_E_move(moved, 4, 0.1, ctx=ctx).failed_clauses() == ["i"]


def test_move_requires_b_above_K():
    with pytest.raises(PreconditionViolated):
        move_context(_cluster_base(), 3, 0.1)


@settings(max_examples=30, deadline=None)
@given(seeds, st.integers(0, 8))
def test_conditioned_coupling_always_on_event(seed, k):
    base = _cluster_base(k=k, seed=seed % 1000)
    ctx = move_context(base, 4, 0.1)
    c = sample_conditioned_resample(base, 0.2, ctx, RngStream(seed))
    assert detect_event_E_move(c, 4, 0.1, ctx=ctx).holds
    assert count_b_dense(c.partner, 0.1, 4).count == 0


def test_delete_event_examples():
    w = TorusWindow(2, 1.0, 50)
    base = config(w, [[0, 0], [2, 2], [-2, 1]])
    ok = ThinSprinkleCoupling(base, np.array([0.5, 0.6, 0.9]), np.empty((0, 2)), 0.1)
    assert detect_event_E_delete(ok, 0.3)
    pair = config(w, [[0, 0], [0.2, 0], [-2, 1]])
    bad = ThinSprinkleCoupling(pair, np.array([0.05, 0.6, 0.9]), np.empty((0, 2)), 0.1)
    assert not detect_event_E_delete(bad, 0.3)
    good = ThinSprinkleCoupling(pair, np.array([0.05, 0.01, 0.9]), np.empty((0, 2)), 0.1)
    assert detect_event_E_delete(good, 0.3)
