import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cellfree.pilot import (CompactAssignment, PermutationSpec, assignment_from_json,
                            canonical_labels, check_assignment, compact, discretize,
                            dumps_assignment, expand, gram, is_permutation, labels_to_matrix,
                            matrix_to_labels, permutation_matrix, psi)

labels_st = st.integers(1, 8).flatmap(lambda K: st.lists(st.integers(0, K - 1), min_size=K, max_size=K))


def test_psi_counts_used_rows():
    X = labels_to_matrix([0, 0, 2, 2, 3])
    assert psi(X) == 3.0
    assert psi(np.eye(4)) == 4.0


def test_psi_soft_value():
    X = np.array([[0.5, 0.5], [0.5, 0.5]])
    assert psi(X) == pytest.approx(2 * (1 - 0.25))


def test_gram_overlap():
    X = labels_to_matrix([0, 1, 0])
    assert np.array_equal(gram(X), [[1, 0, 1], [0, 1, 0], [1, 0, 1]])


@pytest.mark.parametrize("X", [
    np.array([[1, 1], [1, 0]]),
    np.array([[0.5, 1], [0.0, 0]]),
    np.array([[2.0, 0], [-1, 1]]),
    np.ones(3),
])
def test_invalid_assignments(X):
    with pytest.raises(ValueError):
        check_assignment(X)


def test_soft_assignment_allowed_when_not_binary():
    check_assignment(np.full((2, 3), 0.5), binary=False)


@given(labels_st)
def test_compact_expand_round_trip(labels):
    X = labels_to_matrix(labels)
    ca = compact(X)
    assert ca.tau_p == len(set(labels)) == int(psi(X))
    Y = expand(ca)
    assert np.array_equal(gram(Y), gram(X))
    assert psi(Y) == psi(X)
    back = CompactAssignment.from_json(json.loads(json.dumps(ca.to_json())))
    assert np.array_equal(back.X_o, ca.X_o)


def test_compact_json_mismatch():
    with pytest.raises(ValueError):
        CompactAssignment.from_json({"tau_p": 3, "X_o": [[1, 1]]})
    with pytest.raises(ValueError):
        expand(CompactAssignment(4, np.ones((4, 2))), K=2)


def test_discretize_ties_to_lowest():
    X = np.array([[0.4, 0.2], [0.4, 0.8], [0.2, 0.0]])
    assert np.array_equal(discretize(X), [[1, 0], [0, 1], [0, 0]])


@given(labels_st)
def test_labels_matrix_round_trip(labels):
    assert list(matrix_to_labels(labels_to_matrix(labels))) == labels


def test_canonical_labels():
    assert canonical_labels([3, 3, 1, 0, 1]) == (0, 0, 1, 2, 1)


def test_assignment_json():
    X = labels_to_matrix([1, 0, 1])
    assert np.array_equal(assignment_from_json(json.loads(dumps_assignment(X))), X)
    with pytest.raises(ValueError):
        assignment_from_json({"K": 2, "X": X.tolist()})


@given(st.permutations(list(range(6))))
def test_permutation_matrix_convention(p):
    p = np.array(p)
    X = np.random.default_rng(0).standard_normal((6, 3))
    Pi = permutation_matrix(p)
    assert np.array_equal(Pi.T @ X, X[p])
    assert is_permutation(p)


def test_is_permutation_rejects():
    assert not is_permutation([0, 0, 1])
    with pytest.raises(ValueError):
        PermutationSpec(np.array([0, 0]), np.arange(2), np.arange(2))


@given(st.integers(0, 10_000))
@settings(max_examples=40)
def test_permutation_actions_match_matrices(seed):
    rng = np.random.default_rng(seed)
    M, K, G = 3, 4, 5
    spec = PermutationSpec.random(rng, M, K, G)
    Pa, Pu, Pg = (permutation_matrix(p) for p in (spec.pi_ap, spec.pi_ue, spec.pi_ps))
    Z = rng.standard_normal((M, K))
    X = rng.standard_normal((G, K))
    assert np.allclose(spec.ap_ue(Z), Pa.T @ Z @ Pu)
    assert np.allclose(spec.ps_ue(X), Pg.T @ X @ Pu)
    # power vectorization: permuting the matrix equals the vec action
    assert np.allclose(spec.power_vec(Z.reshape(-1)), spec.ap_ue(Z).reshape(-1))
    inv = spec.inverse()
    assert np.array_equal(inv.ap_ue(spec.ap_ue(Z)), Z)
    Gm = rng.standard_normal((M, K, K))
    Ge = spec.equivalent(Gm)
    for m in range(M):
        for i in range(K):
            for k in range(K):
                assert Ge[m, i, k] == Gm[spec.pi_ap[m], spec.pi_ue[i], spec.pi_ue[k]]


def test_permutation_dimension_mismatch():
    spec = PermutationSpec.identity(2, 3)
    with pytest.raises(ValueError, match="UE dimension"):
        spec.ap_ue(np.ones((2, 4)))
    with pytest.raises(ValueError, match="PS dimension"):
        spec.ps(np.ones((4, 3)))
