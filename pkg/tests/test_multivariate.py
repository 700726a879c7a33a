import itertools

import numpy as np
import pytest
from helpers import chain_scores, naive_log_joint, naive_rows, random_chain_structure, random_normalized

from mmbn import barrier
from mmbn.barrier import BarrierConfig
from mmbn.dataset import DiscreteDataset
from mmbn.errors import DimensionMismatch, InvalidLabelVector, NotAChain
from mmbn.margin import build_delta
from mmbn.multivariate import (ChainLabelModel, ConstraintPool, CuttingPlaneConfig, cutting_plane_solve,
                               generate_constraint, hamming_margin, map_labels, max_violation, viterbi,
                               violation_score)
from mmbn.network import NetworkStructure, uniform_params
from mmbn.synth import ancestral_sample, hmm_chain, skewed_params


def test_hamming_margin():
    assert hamming_margin((0, 1, 0), (0, 1, 0)) == 0
    assert hamming_margin((0, 1, 0), (1, 0, 1)) == 3
    assert hamming_margin((0, 1, 0), (0, 0, 0)) == 1
    with pytest.raises(DimensionMismatch):
        hamming_margin((0, 1), (0, 1, 0))


# ---------------------------------------------------------------- violation score


def _chain_data(rng, length=3, n=4):
    s = random_chain_structure(rng, length)
    w = random_normalized(s, rng)
    data = DiscreteDataset(s, rng.integers(0, s.arities, size=(n, s.n_nodes)))
    return s, w, data


def test_violation_at_true_labels():
    rng = np.random.default_rng(1)
    s, w, data = _chain_data(rng)
    assert violation_score(0, data.labels[0], w, 0.7, 0.25, s, data) == pytest.approx(-0.25, abs=1e-12)


def test_violation_matches_rows():
    rng = np.random.default_rng(2)
    s, w, data = _chain_data(rng)
    for i, y, row, dl in naive_rows(s, data, hamming=True):
        assert violation_score(i, y, w, 0.0, 0.0, s, data) == pytest.approx(-(row @ w), abs=1e-12)
        assert violation_score(i, y, w, 0.4, 0.1, s, data) == pytest.approx(0.4 * dl - 0.1 - row @ w, abs=1e-12)


def test_violation_rejects_bad_labels():
    rng = np.random.default_rng(3)
    s, w, data = _chain_data(rng)
    with pytest.raises(InvalidLabelVector):
        violation_score(0, [0] * (len(s.class_vars) + 1), w, 1.0, 0.0, s, data)
    with pytest.raises(InvalidLabelVector):
        violation_score(0, [9] * len(s.class_vars), w, 1.0, 0.0, s, data)


# ---------------------------------------------------------------- generation


def _first_argmax(scores: dict):
    best = max(scores.values())
    return next(y for y, v in scores.items() if v == best)


def test_single_position_chain():
    rng = np.random.default_rng(4)
    for _ in range(20):
        s, w, data = _chain_data(rng, length=1, n=1)
        g = float(rng.uniform(0, 2))
        scores = chain_scores(s, w, data.rows[0], data.labels[0], g)
        expected = _first_argmax(scores)
        assert tuple(generate_constraint(s, data, 0, w, g)) == expected
        assert tuple(generate_constraint(s, data, 0, w, g, "exhaustive")) == expected


def test_viterbi_matches_exhaustive_on_random_chains():
    rng = np.random.default_rng(5)
    for _ in range(100):
        s = random_chain_structure(rng, 3, max_arity=2)
        w = rng.normal(-1.0, 1.0, s.n_features)
        data = DiscreteDataset(s, rng.integers(0, s.arities, size=(1, s.n_nodes)))
        g = float(rng.uniform(0, 3))
        scores = chain_scores(s, w, data.rows[0], data.labels[0], g)
        y = tuple(generate_constraint(ChainLabelModel.from_structure(s), data, 0, w, g))
        assert scores[y] == pytest.approx(max(scores.values()), abs=1e-10)


def test_uniform_weights_flip_every_position():
    s = hmm_chain(4, 2)
    data = DiscreteDataset(s, np.array([[0, 1, 0, 1] + [0] * 8]))
    y = generate_constraint(s, data, 0, uniform_params(s), 0.5)
    np.testing.assert_array_equal(y, [1, 0, 1, 0])
    s3 = hmm_chain(3, 1, arity=3)
    data3 = DiscreteDataset(s3, np.array([[0, 1, 2, 0, 0, 0]]))
    np.testing.assert_array_equal(generate_constraint(s3, data3, 0, uniform_params(s3), 0.5), [1, 0, 0])


def test_zero_gamma_gives_map():
    rng = np.random.default_rng(6)
    s, w, data = _chain_data(rng, length=4, n=6)
    model = ChainLabelModel.from_structure(s)
    maps = map_labels(model, w, data.rows)
    for i in range(len(data)):
        scores = chain_scores(s, w, data.rows[i], data.labels[i], 0.0)
        assert tuple(maps[i]) == _first_argmax(scores)
        np.testing.assert_array_equal(generate_constraint(model, data, i, w, 0.0), maps[i])


def test_viterbi_tie_break_is_lexicographic():
    path, best = viterbi([np.zeros(2), np.zeros(2)], [np.zeros((2, 2))])
    np.testing.assert_array_equal(path, [0, 0])
    assert best == 0.0


def test_non_chains_rejected():
    branch = NetworkStructure.from_nodes([("a", 2, []), ("b", 2, [])], ["a", "b"])
    fork = NetworkStructure.from_nodes([("a", 2, []), ("b", 2, ["a"]), ("c", 2, ["a"])], ["a", "b", "c"])
    skip = NetworkStructure.from_nodes([("a", 2, []), ("b", 2, ["a"]), ("c", 2, ["b"]), ("x", 2, ["a", "c"])],
                                       ["a", "b", "c"])
    for s in (branch, fork, skip):
        with pytest.raises(NotAChain):
            ChainLabelModel.from_structure(s)


def test_chain_order_differs_from_class_order():
    s = NetworkStructure.from_nodes([("b", 2, ["a"]), ("a", 2, []), ("x", 2, ["b"])], ["b", "a"])
    rng = np.random.default_rng(7)
    w = rng.normal(-1.0, 1.0, s.n_features)
    data = DiscreteDataset(s, np.array([[1, 0, 1]]))
    scores = chain_scores(s, w, data.rows[0], data.labels[0], 0.3)
    assert tuple(generate_constraint(s, data, 0, w, 0.3)) == _first_argmax(scores)


# ---------------------------------------------------------------- pool


def test_pool_rejects_duplicates_and_dumps(tmp_path):
    pool = ConstraintPool()
    pool.add(1, [0, 1], 0.5, 2)
    pool.add(0, [1, 1], 0.25, 1)
    with pytest.raises(ValueError):
        pool.add(1, (0, 1), 0.1, 3)
    assert (1, (0, 1)) in pool and len(pool) == 2
    ex, lab = pool.pairs()
    np.testing.assert_array_equal(ex, [0, 1])
    pool.dump(tmp_path / "pool.txt")
    assert (tmp_path / "pool.txt").read_text() == "0 1,1 0.25 1\n1 0,1 0.5 2\n"


# ---------------------------------------------------------------- cutting plane


def test_single_position_matches_univariate_solve():
    s = hmm_chain(1, 2)
    data = DiscreteDataset(s, np.array([[0, 1, 0]]))
    res = cutting_plane_solve(s, data, 1.0)
    ref = barrier.solve(build_delta(s, data, "hamming"), s)
    assert res.converged
    np.testing.assert_allclose(res.solution.w, ref.w, atol=1e-8)
    assert res.solution.gamma == pytest.approx(ref.gamma, abs=1e-8)
    np.testing.assert_allclose(res.solution.eps, ref.eps, atol=1e-8)


def test_hmm_chain_terminates_and_is_complete():
    s = hmm_chain(5, 2)
    data = ancestral_sample(s, skewed_params(s, 0.85, 0), 10, 1)
    res = cutting_plane_solve(s, data, 1.0)
    sol = res.solution
    assert res.converged and res.rounds <= 50
    assert max_violation(s, data, sol.w, sol.gamma, sol.eps) <= 1e-6
    # Every generated row was violated when it was added.
    assert all(e.violation > 1e-6 for e in res.pool.entries.values() if e.round_added > 0)
    # Adding rows can only raise the restricted optimum; the barrier solution
    # sits within its duality gap of it.
    hist = res.pool.history
    mu = BarrierConfig().mu_initial / BarrierConfig().mu_shrink ** (BarrierConfig().outer_iters - 1)
    for a, b in zip(hist, hist[1:]):
        assert b["objective"] >= a["objective"] - a["n_constraints"] * mu


def test_exhaustive_method_agrees():
    s = hmm_chain(3, 1)
    data = ancestral_sample(s, skewed_params(s, 0.8, 2), 6, 3)
    a = cutting_plane_solve(s, data, 1.0)
    b = cutting_plane_solve(s, data, 1.0, cp_config=CuttingPlaneConfig(method="exhaustive"))
    assert a.converged and b.converged
    assert a.solution.objective == pytest.approx(b.solution.objective, rel=1e-6)


def test_batch_generation_and_warm_start():
    s = hmm_chain(3, 1)
    data = ancestral_sample(s, skewed_params(s, 0.8, 4), 6, 5)
    ref = cutting_plane_solve(s, data, 1.0)
    for cp in (CuttingPlaneConfig(per_example=2), CuttingPlaneConfig(warm_start=True)):
        res = cutting_plane_solve(s, data, 1.0, cp_config=cp)
        assert res.converged
        sol = res.solution
        assert max_violation(s, data, sol.w, sol.gamma, sol.eps) <= 1e-6
        assert sol.objective == pytest.approx(ref.solution.objective, rel=1e-4)


def test_max_violation_matches_enumeration():
    rng = np.random.default_rng(8)
    s, w, data = _chain_data(rng, length=3, n=3)
    eps = rng.uniform(0, 1, len(data))
    expected = max(0.6 * sum(int(a != b) for a, b in zip(data.labels[i], y)) - eps[i]
                   - (naive_log_joint(s, w, data.rows[i]) - naive_log_joint(s, w, _with_labels(s, data.rows[i], y)))
                   for i in range(len(data))
                   for y in itertools.product(*(range(s.arities[c]) for c in s.class_vars)))
    assert max_violation(s, data, w, 0.6, eps) == pytest.approx(expected, abs=1e-12)


def _with_labels(s, x, y):
    alt = x.copy()
    alt[list(s.class_vars)] = y
    return alt
