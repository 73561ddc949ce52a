import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_system
from qtrk.corruption import (
    CorruptionPlan,
    MagnitudeLaw,
    adversarial_mqtrk,
    apply,
    generate_plan,
)
from qtrk.errors import ConfigError, ShapeError
from qtrk.solvers import SolverConfig, SolverState, Variant, mqtrk_step, solve
from qtrk.tensor_core import frobenius, tprod

LAW = MagnitudeLaw("normal", 100, 20)


def test_magnitude_law_parse_and_sample():
    law = MagnitudeLaw.parse("abs_normal(3, 2)")
    assert law == MagnitudeLaw("abs_normal", 3.0, 2.0)
    assert MagnitudeLaw.parse(str(law)) == law
    assert np.all(law.sample(np.random.default_rng(0), 1000) >= 0)
    with pytest.raises(ConfigError):
        MagnitudeLaw.parse("uniform(0, 1)")
    with pytest.raises(ConfigError):
        MagnitudeLaw("normal", 0, 0)


def test_empty_plan():
    plan = generate_plan((25, 4, 10), 0.0, 0.2, LAW, 1)
    assert plan.entries == ()
    assert plan.uncorrupted_rows == tuple(range(25))
    assert plan.beta == 0 and plan.beta_row == 0


def test_plan_counts_on_reference_shape():
    plan = generate_plan((25, 4, 10), 0.025, 0.2, LAW, 3)
    rows = {i for i, _, _, _ in plan.entries}
    assert len(rows) <= 5 and 0 < len(plan.entries) <= 25
    assert plan.beta <= 0.025 and plan.beta_row <= 0.2


def test_non_integer_counts_rejected():
    with pytest.raises(ConfigError, match="m \\* beta_row_tilde"):
        generate_plan((25, 4, 10), 0.025, 0.1, LAW, 0)
    with pytest.raises(ConfigError, match="beta_tilde \\* m \\* p \\* n"):
        generate_plan((25, 4, 10), 0.0251, 0.2, LAW, 0)
    with pytest.raises(ConfigError):
        generate_plan((25, 4, 10), 1.5, 0.2, LAW, 0)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 8), st.integers(1, 4), st.integers(1, 5), st.data())
def test_plan_invariants(m, p, n, data):
    n_rows = data.draw(st.integers(1, m))
    n_draws = data.draw(st.integers(0, m * p * n))
    seed = data.draw(st.integers(0, 2**63))
    plan = generate_plan((m, p, n), n_draws / (m * p * n), n_rows / m, LAW, seed)
    assert len(plan.entries) <= n_rows * p * n
    assert plan.beta <= n_draws / (m * p * n) + 1e-15
    assert plan.beta_row <= n_rows / m + 1e-15
    rows_hit = {i for i, _, _, _ in plan.entries}
    for i in range(m):
        assert (i in plan.uncorrupted_rows) == (not plan.corrupted_columns(i)) == (i not in rows_hit)
    assert len(plan.corrupted_set) == len(plan.entries)


def test_realized_beta_matches_collision_oracle():
    shape, bt = (25, 4, 10), 0.075
    betas = np.array([generate_plan(shape, bt, 0.2, LAW, s).beta for s in range(2000)])
    # Monte-Carlo oracle: 75 uniform draws with replacement over 5 * 4 * 10 cells
    g = np.random.default_rng(12345)
    draws = g.integers(0, 200, size=(20000, 75))
    oracle = np.array([np.unique(d).size for d in draws]) / 1000
    se = np.sqrt(betas.var() / betas.size + oracle.var() / oracle.size)
    assert abs(betas.mean() - oracle.mean()) < 3 * se


def test_plan_validation():
    with pytest.raises(ShapeError):
        CorruptionPlan((2, 2, 2), ((2, 0, 0, 1.0),))
    with pytest.raises(ConfigError):
        CorruptionPlan((2, 2, 2), ((0, 0, 0, 1.0), (0, 0, 0, 2.0)))


def test_plan_json_roundtrip():
    plan = generate_plan((10, 3, 4), 0.05, 0.2, LAW, 9)
    back = CorruptionPlan.from_json(plan.to_json())
    assert back == plan and back.digest() == plan.digest()
    assert generate_plan((10, 3, 4), 0.05, 0.2, LAW, 9).digest() == plan.digest()
    assert generate_plan((10, 3, 4), 0.05, 0.2, LAW, 10).digest() != plan.digest()


def test_apply_examples(rng):
    Bstar = rng.standard_normal((4, 3, 5))
    assert np.array_equal(apply(Bstar, CorruptionPlan((4, 3, 5), ())), Bstar)
    B = apply(np.zeros((2, 2, 2)), CorruptionPlan((2, 2, 2), ((1, 1, 1, 5.0),)))
    assert B[1, 1, 1] == 5.0 and np.count_nonzero(B) == 1
    with pytest.raises(ShapeError):
        apply(Bstar, CorruptionPlan((4, 3, 4), ()))


def test_apply_matches_dense_oracle(rng):
    shape = (10, 3, 4)
    plan = generate_plan(shape, 0.2, 0.3, LAW, 4)
    Bstar = rng.standard_normal(shape)
    dense = np.zeros(shape)
    for i, j, h, v in plan.to_dict()["entries"]:
        dense[i, j, h] = v
    B = apply(Bstar, plan)
    assert np.array_equal(B, Bstar + dense)
    # applying twice adds twice
    assert not np.array_equal(apply(B, plan), B)
    untouched = np.ones(shape, bool)
    for i, j, h in plan.corrupted_set:
        untouched[i, j, h] = False
    assert np.array_equal(B[untouched], Bstar[untouched])


def test_adversarial_instance(rng):
    A, Xstar = random_system(rng, 25, 5, 4, 10)
    inst = adversarial_mqtrk(A, Xstar)
    assert len(inst.plan.entries) == 25
    assert inst.plan.beta == pytest.approx(1 / 40, abs=1e-15)
    assert np.count_nonzero(inst.X0 - Xstar) == 1 and inst.X0[0, 0, 0] != Xstar[0, 0, 0]
    assert 1 - 1 / 40 - 1 / 1000 < inst.q_suggested < 1 - inst.plan.beta


def test_adversarial_mqtrk_makes_no_progress(rng):
    A, Xstar = random_system(rng, 25, 5, 4, 10)
    inst = adversarial_mqtrk(A, Xstar)
    cfg = SolverConfig(Variant.MQTRK, inst.q_suggested, 100, seed=1)
    state = SolverState.start(A, inst.B, inst.X0, cfg.seed)
    for _ in range(100):
        ev = mqtrk_step(state, A, inst.B, cfg)
        assert 0 in ev.masked_cols
    assert np.array_equal(state.X[:, 0], inst.X0[:, 0])
    e0 = frobenius(inst.X0 - Xstar) / frobenius(Xstar)
    e1 = frobenius(state.X - Xstar) / frobenius(Xstar)
    assert abs(e1 - e0) < 1e-12


def test_adversarial_instance_qtrk_contrast(rng):
    # QTRK stalls on the same instance: every row is flagged
    A, Xstar = random_system(rng, 25, 5, 4, 10)
    inst = adversarial_mqtrk(A, Xstar)
    X, rec = solve(A, inst.B, SolverConfig(Variant.QTRK, inst.q_suggested, 20, seed=1), Xstar, X0=inst.X0)
    assert rec.stall_iterations == 20 and np.array_equal(X, inst.X0)
