import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_net
from pmuopt.netmodel import build_ybus, operating_point
from pmuopt.placement import (
    BASELINE_PLACEMENTS_39,
    GAConfig,
    Objective,
    Placement,
    PlacementError,
    count_preserving_crossover,
    exhaustive_search,
    ga_optimize,
    is_induced_tree,
    objective_delta,
    shuffle_mutation,
    strategy_degree,
    strategy_full,
    strategy_scattered,
    strategy_tree,
)
from pmuopt.sampling import AngleSampleSet, RandomStream, sample_operating_points


def straight_line_delta(net, base, samples, bits, fill="zero"):
    """Mean |‖J‖_F − ‖J_S‖_F| written out element by element."""
    y = build_ybus(net).values
    n = net.n_bus
    ref = net.reference_index

    def norm(theta, vmag, observed):
        total = 0.0
        for m in range(n):
            if m == ref:
                continue
            row_sum = 0.0
            for k in range(n):
                if k == m or y[m, k] == 0:
                    continue
                if observed is not None and not (observed[m] and observed[k]):
                    continue
                mag, ang = abs(y[m, k]), math.atan2(y[m, k].imag, y[m, k].real)
                e = vmag[m] * vmag[k] * mag * math.sin(theta[m] - theta[k] - ang)
                row_sum += e
                if k != ref:
                    total += e * e
            if observed is None or observed[m]:
                total += row_sum * row_sum
        return math.sqrt(total)

    vals = []
    for th, vm in zip(samples.theta, samples.vmag):
        full = norm(th, vm, None)
        if fill == "zero":
            part = norm(th, vm, bits)
        else:
            mth = [th[i] if bits[i] else base.theta[i] for i in range(n)]
            mvm = [vm[i] if bits[i] else base.vmag[i] for i in range(n)]
            part = norm(mth, mvm, None)
        vals.append(abs(full - part))
    return sum(vals) / len(vals)


@pytest.fixture
def tri_setup(triangle):
    base = operating_point(triangle)
    samples = sample_operating_points(triangle, base, 0.5, 1.0, 50, RandomStream(4, 1))
    return triangle, base, samples


@pytest.mark.parametrize("fill", ["zero", "base"])
def test_objective_matches_straight_line(tri_setup, fill):
    net, base, samples = tri_setup
    for combo in itertools.combinations(range(3), 2):
        bits = [int(i in combo) for i in range(3)]
        rep = objective_delta(net, base, samples, Placement(tuple(bits)), fill=fill)
        assert abs(rep.delta - straight_line_delta(net, base, samples, bits, fill)) < 1e-12
        assert rep.delta == pytest.approx(float(np.mean(rep.per_sample)), rel=0, abs=0)


def test_objective_matches_straight_line_case9(case9):
    base = operating_point(case9)
    samples = sample_operating_points(case9, base, 0.05, 1.0, 20, RandomStream(2, 1))
    rng = np.random.default_rng(1)
    for _ in range(3):
        bits = [int(b) for b in rng.random(9) < 0.5]
        got = objective_delta(case9, base, samples, Placement(tuple(bits))).delta
        assert abs(got - straight_line_delta(case9, base, samples, bits)) < 1e-10


def test_full_placement_zero(case39):
    base = operating_point(case39)
    samples = sample_operating_points(case39, base, m=30, stream=RandomStream(0, 1))
    for fill in ("zero", "base"):
        assert objective_delta(case39, base, samples, Placement.full(39), fill=fill).delta == 0.0


def test_samples_at_base_base_fill_zero(case14):
    base = operating_point(case14)
    samples = AngleSampleSet(np.tile(base.theta, (5, 1)), np.tile(base.vmag, (5, 1)), base, 0.01, 1 / 30)
    rng = np.random.default_rng(2)
    for _ in range(5):
        pl = Placement.from_mask(rng.random(14) < 0.4)
        assert objective_delta(case14, base, samples, pl, fill="base").delta == 0.0


def test_objective_nonnegative_and_fewer_pmus_worse(case14):
    base = operating_point(case14)
    samples = sample_operating_points(case14, base, m=40, stream=RandomStream(1, 1))
    obj = Objective(case14, base, samples)
    rng = np.random.default_rng(5)
    for _ in range(20):
        mask = rng.random(14) < 0.5
        assert obj(mask) >= 0.0
    assert obj(np.zeros(14, dtype=bool)) > obj(np.ones(14, dtype=bool)) == 0.0


def test_objective_rejects_bad_fill(case9):
    base = operating_point(case9)
    samples = sample_operating_points(case9, base, m=3)
    with pytest.raises(ValueError):
        Objective(case9, base, samples, fill="flat")


def test_placement_type(case39):
    pl = Placement.from_buses(case39, BASELINE_PLACEMENTS_39["degree"])
    assert pl.n_p == 20 and len(pl) == 39
    assert pl.buses(case39) == sorted(BASELINE_PLACEMENTS_39["degree"])
    with pytest.raises(PlacementError):
        Placement.from_buses(case39, [40])
    with pytest.raises(PlacementError):
        Placement((0, 2, 1))


@pytest.mark.parametrize("fill", ["zero", "base"])
def test_exhaustive_triangle_by_hand(tri_setup, fill):
    net, base, samples = tri_setup
    candidates = [tuple(int(i == k) for i in range(3)) for k in range(3)]
    by_hand = {bits: straight_line_delta(net, base, samples, bits, fill) for bits in candidates}
    pl, delta = exhaustive_search(net, base, samples, 1, fill=fill)
    assert delta == pytest.approx(min(by_hand.values()), abs=1e-12)
    # ties (exact under zero fill: one PMU computes no off-diagonal) go to the smallest bit vector
    winners = [b for b in candidates if abs(by_hand[b] - delta) < 1e-12]
    assert pl.bits == min(winners)


def test_exhaustive_edge_counts(case9):
    base = operating_point(case9)
    samples = sample_operating_points(case9, base, m=10, stream=RandomStream(3, 1))
    pl, d = exhaustive_search(case9, base, samples, 9)
    assert pl == Placement.full(9) and d == 0.0
    pl, d = exhaustive_search(case9, base, samples, 0)
    assert pl.n_p == 0 and d > 0
    pl, _ = exhaustive_search(case9, base, samples, 2, exclude_reference=True)
    assert not pl.mask[case9.reference_index]
    with pytest.raises(PlacementError):
        exhaustive_search(case9, base, samples, 10)


def test_exhaustive_limit(case39):
    base = operating_point(case39)
    samples = sample_operating_points(case39, base, m=2)
    with pytest.raises(PlacementError, match="limit"):
        exhaustive_search(case39, base, samples, 20)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 40), st.floats(0, 1))
def test_shuffle_mutation_preserves_count(seed, n, prob):
    rng = np.random.default_rng(seed)
    ind = rng.random(n) < 0.5
    out = shuffle_mutation(ind, rng, prob)
    assert out.sum() == ind.sum()
    allowed = np.arange(1, n)
    out = shuffle_mutation(ind, rng, prob, allowed)
    assert out.sum() == ind.sum() and out[0] == ind[0]


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 30))
def test_crossover_preserves_count(seed, n):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(0, n + 1))
    a = np.zeros(n, dtype=bool)
    b = np.zeros(n, dtype=bool)
    a[rng.choice(n, k, replace=False)] = True
    b[rng.choice(n, k, replace=False)] = True
    child = count_preserving_crossover(a, b, rng)
    assert child.sum() == k
    assert np.all(child[a & b])
    assert not np.any(child[~a & ~b])


@pytest.fixture(scope="module")
def c14_setup():
    from pmuopt.netmodel import load_case

    net = load_case("case14")
    base = operating_point(net)
    samples = sample_operating_points(net, base, m=200, stream=RandomStream(0, 1))
    return net, base, samples, Objective(net, base, samples)


def test_ga_constraints_and_history(c14_setup):
    net, base, samples, obj = c14_setup
    cfg = GAConfig(generations=20, seed=3)
    res = ga_optimize(net, base, samples, 5, cfg, objective=obj)
    assert res.placement.n_p == 5
    assert all(p.n_p == 5 for p in res.final_population)
    assert len(res.history) == cfg.generations + 1
    assert all(b <= a for a, b in zip(res.history, res.history[1:]))
    assert res.history[-1] == res.delta == pytest.approx(obj(res.placement.mask))
    top = res.top(30)
    assert top == sorted(top) and len(top) <= 30
    assert res.delta <= top[0]


def test_ga_deterministic(c14_setup):
    net, base, samples, obj = c14_setup
    a = ga_optimize(net, base, samples, 4, GAConfig(generations=10, seed=9), objective=obj)
    b = ga_optimize(net, base, samples, 4, GAConfig(generations=10, seed=9), objective=obj)
    assert a.placement == b.placement and a.history == b.history


def test_ga_full_and_empty(c14_setup):
    net, base, samples, obj = c14_setup
    res = ga_optimize(net, base, samples, 14, GAConfig(generations=2), objective=obj)
    assert res.delta == 0.0 and res.placement == Placement.full(14)
    res = ga_optimize(net, base, samples, 0, GAConfig(generations=2), objective=obj)
    assert res.placement.n_p == 0
    with pytest.raises(PlacementError):
        ga_optimize(net, base, samples, 15, GAConfig(generations=2), objective=obj)


def test_ga_exclude_reference(c14_setup):
    net, base, samples, obj = c14_setup
    res = ga_optimize(net, base, samples, 4, GAConfig(generations=5, exclude_reference=True), objective=obj)
    assert all(not p.mask[net.reference_index] for p in res.final_population)


def test_ga_with_crossover(c14_setup):
    net, base, samples, obj = c14_setup
    res = ga_optimize(net, base, samples, 4, GAConfig(generations=10, crossover_prob=0.5), objective=obj)
    assert all(p.n_p == 4 for p in res.final_population)


def test_ga_finds_exhaustive_optimum_small(c14_setup):
    net, base, samples, obj = c14_setup
    _, best = exhaustive_search(net, base, samples, 3, objective=obj)
    hits = sum(ga_optimize(net, base, samples, 3, GAConfig(seed=s), objective=obj).delta == best
               for s in range(10))
    assert hits >= 9


@pytest.mark.parametrize("kwargs", [
    dict(generations=0), dict(population=0), dict(mutate_prob=1.5), dict(shuffle_prob=-0.1),
    dict(tournament_size=0), dict(crossover_prob=2.0),
])
def test_ga_config_validation(kwargs):
    with pytest.raises(ValueError):
        GAConfig(**kwargs)


def test_scattered(case39):
    a = strategy_scattered(case39, 20, RandomStream(1, 2))
    b = strategy_scattered(case39, 20, RandomStream(1, 2))
    assert a == b and a.n_p == 20
    assert a != strategy_scattered(case39, 20, RandomStream(2, 2))


def test_tree_on_path():
    path = make_net(8, [(k, k + 1) for k in range(1, 8)])
    for seed in range(10):
        pl = strategy_tree(path, 4, RandomStream(seed))
        idx = np.flatnonzero(pl.mask)
        assert pl.n_p == 4 and idx[-1] - idx[0] == 3
        assert is_induced_tree(path, pl)


def test_tree_triangle_fails(triangle):
    with pytest.raises(PlacementError):
        strategy_tree(triangle, 3, RandomStream(0), max_tries=20)
    assert strategy_tree(triangle, 2, RandomStream(0)).n_p == 2


def test_tree_case39(case39):
    for seed in range(5):
        pl = strategy_tree(case39, 20, RandomStream(seed))
        assert pl.n_p == 20 and is_induced_tree(case39, pl)


def test_tree_table_row_has_one_cycle(case39):
    # the published tree row is connected but closes the loop 3-4-14-15-16-17-18
    row = BASELINE_PLACEMENTS_39["tree"]
    assert not is_induced_tree(case39, Placement.from_buses(case39, row))
    assert is_induced_tree(case39, Placement.from_buses(case39, [b for b in row if b != 18]))
    assert not is_induced_tree(case39, Placement.full(39))


def test_degree_case39(case39):
    assert strategy_degree(case39, 20).buses(case39) == [
        1, 2, 3, 4, 5, 6, 7, 8, 10, 11, 13, 14, 16, 17, 19, 22, 23, 25, 26, 29]


def test_full_strategy(case9):
    assert strategy_full(case9) == Placement.full(9)
