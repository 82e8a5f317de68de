import numpy as np
import pytest

from pclmi.mc_control import (
    mc_assess_stability,
    mc_max_decay_rate,
    mc_synthesize_feasible,
    mc_synthesize_optimal,
    repeat_study,
    sub_seed,
)
from pclmi.params_basis import build_parameter_space
from pclmi.sysmodel import CostWeights, MatrixPolynomial, UncertainLinearSystem, eval_matrix, sample_parameters

from oracles import deterministic_system, model

U = build_parameter_space([{"distribution": "uniform", "support": [-1, 1]}])


def growth_plus_u():
    return UncertainLinearSystem(
        1, 1, U, MatrixPolynomial.from_terms([((1,), [[1.0]])]), MatrixPolynomial.from_terms([((0,), [[1.0]])])
    )


def test_duplicate_samples_match_single():
    system = deterministic_system(np.array([[-1.0, 2.0], [0.0, -3.0]]), np.ones((2, 1)))
    one = mc_assess_stability(system, np.zeros((1, 0)), 0.5)
    many = mc_assess_stability(system, np.zeros((7, 0)), 0.5)
    np.testing.assert_allclose(one.P, many.P, atol=1e-6)


def test_stability_examples():
    stable, _ = model("scalar_stable")
    assert mc_assess_stability(stable, sample_parameters(stable.space, 200, 3), 0.9) is not None
    growth, _ = model("scalar_growth")
    assert mc_assess_stability(growth, np.array([[-0.5], [0.5]]), 0.1) is None
    with pytest.raises(ValueError):
        mc_assess_stability(growth, np.zeros((0, 1)), 0.1)


def test_feasible_examples():
    det = deterministic_system(np.eye(1), np.eye(1))
    res = mc_synthesize_feasible(det, np.zeros((4, 0)), 1.0)
    assert 2 * (1 + res.K[0, 0]) <= -1 + 1e-6
    system = growth_plus_u()
    samples = sample_parameters(U, 100, 5)
    res = mc_synthesize_feasible(system, samples, 1.0)
    P = res.P
    for d in samples:
        a = eval_matrix(system.A, d) + eval_matrix(system.B, d) @ res.K
        assert np.linalg.eigvalsh(a.T @ P + P @ a + P)[-1] <= 1e-6
    unforced = UncertainLinearSystem(1, 1, U, system.A, MatrixPolynomial.from_terms([((0,), [[0.0]])]))
    assert mc_synthesize_feasible(unforced, np.array([[0.5], [0.9]]), 1.0) is None


def test_optimal_deterministic():
    det = deterministic_system(-np.eye(1), np.eye(1))
    res = mc_synthesize_optimal(det, np.zeros((3, 0)), CostWeights(3 * np.eye(1), np.eye(1)))
    assert res.K[0, 0] == pytest.approx(-1.0, abs=1e-4)
    assert res.P[0, 0] == pytest.approx(1.0, abs=1e-4)


def test_optimal_requires_samples_and_weights(f16):
    system, weights = f16
    with pytest.raises(ValueError):
        mc_synthesize_optimal(system, np.zeros((0, 1)), weights)
    with pytest.raises(ValueError):
        mc_synthesize_optimal(system, np.zeros((3, 1)), None)


def test_f16_mc_close_to_pc(f16):
    system, weights = f16
    res = mc_synthesize_optimal(system, sample_parameters(system.space, 100, 7), weights)
    # PC order-10 value, see the convergence study
    assert abs(res.p_star_norm - 1328.84) / 1328.84 < 0.10
    assert res.residual <= 1e-6


def test_constraint_growth(f16):
    stable, _ = model("scalar_stable")
    big = sample_parameters(stable.space, 40, 1)
    small = big[:10]
    a_big = mc_max_decay_rate(stable, big, (0, 4), 1e-4).alpha
    a_small = mc_max_decay_rate(stable, small, (0, 4), 1e-4).alpha
    assert a_big <= a_small + 1e-4
    # the sampled rate is bounded by the worst sample's own rate 2(1 - 0.5|delta|)
    assert a_big == pytest.approx(2 * (1 - 0.5 * np.max(big[:, 0])), abs=2e-4)


def test_repeat_study_deterministic_system():
    det = deterministic_system(-np.eye(2), np.eye(2)[:, :1])
    rep = repeat_study(det, CostWeights(np.eye(2), np.eye(1)), [2, 5], 3, seed=1)
    assert [c.stddev for c in rep.cells] == [0.0, 0.0]
    assert rep.failures == 0


def test_repeat_study_reproducible(f16):
    system, weights = f16
    a = repeat_study(system, weights, [5, 10], 3, seed=11)
    b = repeat_study(system, weights, [5, 10], 3, seed=11)
    assert [(r.seed, r.p_star_norm) for r in a.runs] == [(r.seed, r.p_star_norm) for r in b.runs]
    assert len({r.seed for r in a.runs}) == 6
    assert sub_seed(11, 5, 0) == a.runs[0].seed
    with pytest.raises(ValueError):
        repeat_study(system, weights, [5], 0, 1)
