import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from ligflow.errors import ContractError, FormatError
from ligflow.molgraph import (MolecularGraph, Permutation, RigidTransform, apply_permutation, apply_rigid,
                              devectorize, permute_vector, rotate_vector, rotation_about_axis,
                              sample_random_permutation, sample_random_rigid, vectorize)

finite = st.floats(-50, 50, allow_nan=False)


def random_graph(rng, n=5, d=3):
    edges = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < 0.4]
    return MolecularGraph(rng.standard_normal((n, 3)), rng.standard_normal((n, d)),
                          np.asarray(edges, dtype=np.int64).reshape(-1, 2), rng.standard_normal((len(edges), 2)),
                          (np.array([0.0, 1.0]), np.array([1.0, 0.0, 0.0])))


def test_graph_invariants_are_enforced():
    x, h = np.zeros((3, 3)), np.zeros((3, 1))
    with pytest.raises(ContractError):
        MolecularGraph(x, h, [[1, 0]], [[1.0]])
    with pytest.raises(ContractError):
        MolecularGraph(x, h, [[0, 3]], [[1.0]])
    with pytest.raises(ContractError):
        MolecularGraph(x, h, [[0, 1], [0, 1]], [[1.0], [1.0]])
    with pytest.raises(ContractError):
        MolecularGraph(x, np.zeros((2, 1)))
    g = MolecularGraph(x, h, [[0, 1], [1, 2]], [[1.0], [2.0]])
    assert g.n_atoms == 3 and g.feature_dim == 1 and g.edge_dim == 1
    assert g.neighbours() == [{1}, {0, 2}, {1}]


def test_identity_rigid_leaves_graph_unchanged(rng):
    g = random_graph(rng)
    assert apply_rigid(g, RigidTransform.identity()).same_as(g)


def test_quarter_turn_about_z():
    g = MolecularGraph([[1.0, 0.0, 0.0]], [[7.0]])
    R = rotation_about_axis([0, 0, 1], np.pi / 2)
    out = apply_rigid(g, RigidTransform(R))
    np.testing.assert_allclose(out.positions, [[0.0, 1.0, 0.0]], atol=1e-15)
    np.testing.assert_array_equal(out.features, g.features)


def test_rigid_composition_matches_homogeneous_matrices(rng):
    for _ in range(20):
        g = random_graph(rng)
        T1, T2 = sample_random_rigid(rng), sample_random_rigid(rng)
        seq = apply_rigid(apply_rigid(g, T1), T2)
        M = T2.homogeneous() @ T1.homogeneous()
        pts = np.c_[g.positions, np.ones(g.n_atoms)] @ M.T
        np.testing.assert_allclose(seq.positions, pts[:, :3], atol=1e-12)
        np.testing.assert_allclose(apply_rigid(g, T2.compose(T1)).positions, pts[:, :3], atol=1e-12)


def test_rigid_transform_rejects_non_orthogonal():
    with pytest.raises(ContractError):
        RigidTransform(np.diag([1.0, 1.0, 1.1]))


def test_rigid_leaves_features_edges_globals_bit_identical(rng):
    g = random_graph(rng)
    out = apply_rigid(g, sample_random_rigid(rng))
    np.testing.assert_array_equal(out.features, g.features)
    np.testing.assert_array_equal(out.edge_index, g.edge_index)
    np.testing.assert_array_equal(out.edge_attr, g.edge_attr)
    for a, b in zip(out.globals, g.globals):
        np.testing.assert_array_equal(a, b)


def test_inverse_rigid(rng):
    T = sample_random_rigid(rng)
    x = rng.standard_normal((4, 3))
    np.testing.assert_allclose(T.inverse().apply(T.apply(x)), x, atol=1e-12)


def test_identity_permutation(rng):
    g = random_graph(rng)
    assert apply_permutation(g, Permutation.identity(g.n_atoms)).same_as(g)


def test_swap_on_two_atom_graph_keeps_undirected_edge():
    g = MolecularGraph([[0.0, 0, 0], [1.0, 0, 0]], [[1.0], [2.0]], [[0, 1]], [[0.5, 0.25]])
    out = apply_permutation(g, Permutation([1, 0]))
    np.testing.assert_array_equal(out.features, [[2.0], [1.0]])
    np.testing.assert_array_equal(out.positions, [[1.0, 0, 0], [0.0, 0, 0]])
    np.testing.assert_array_equal(out.edge_index, [[0, 1]])
    np.testing.assert_array_equal(out.edge_attr, [[0.5, 0.25]])


def test_permutation_then_inverse_is_bit_exact(rng):
    for _ in range(20):
        g = random_graph(rng, n=7)
        p = sample_random_permutation(rng, 7)
        assert apply_permutation(apply_permutation(g, p), p.inverse()).same_as(g)


def test_permutation_relabels_edges_consistently(rng):
    g = random_graph(rng, n=6)
    p = sample_random_permutation(rng, 6)
    out = apply_permutation(g, p)
    # an edge between new vertices a and b must join old vertices p[a] and p[b]
    old = {tuple(sorted((int(i), int(j)))): tuple(e) for (i, j), e in zip(g.edge_index, g.edge_attr)}
    for (a, b), e in zip(out.edge_index, out.edge_attr):
        assert a < b
        assert old[tuple(sorted((int(p.mapping[a]), int(p.mapping[b]))))] == tuple(e)


def test_permutation_composition(rng):
    g = random_graph(rng, n=6)
    p, q = sample_random_permutation(rng, 6), sample_random_permutation(rng, 6)
    seq = apply_permutation(apply_permutation(g, p), q)
    assert apply_permutation(g, q.compose(p)).same_as(seq)


def test_permutation_size_mismatch(rng):
    with pytest.raises(ContractError):
        apply_permutation(random_graph(rng, n=4), Permutation.identity(3))
    with pytest.raises(ContractError):
        Permutation([0, 0, 2])


def test_vectorize_layout():
    np.testing.assert_array_equal(vectorize([[1.0, 2.0, 3.0]], [[4.0]]), [1.0, 2.0, 3.0, 4.0])
    v = vectorize([[1.0, 2, 3], [5, 6, 7]], [[4.0], [8.0]])
    np.testing.assert_array_equal(v, [1, 2, 3, 5, 6, 7, 4, 8])


@given(st.integers(1, 6), st.integers(0, 4), st.data())
def test_vectorize_round_trip_bit_exact(n, d, data):
    x = data.draw(arrays(np.float64, (n, 3), elements=finite))
    h = data.draw(arrays(np.float64, (n, d), elements=finite))
    x2, h2 = devectorize(vectorize(x, h), d)
    np.testing.assert_array_equal(x2, x)
    np.testing.assert_array_equal(h2, h)


def test_devectorize_rejects_bad_length():
    with pytest.raises(FormatError):
        devectorize(np.zeros(7), 1)


def test_vectorize_commutes_with_permutation_block_matrix(rng):
    n, d = 5, 2
    x, h = rng.standard_normal((n, 3)), rng.standard_normal((n, d))
    p = sample_random_permutation(rng, n)
    P = p.matrix()
    block = np.block([[np.kron(P, np.eye(3)), np.zeros((3 * n, d * n))],
                      [np.zeros((d * n, 3 * n)), np.kron(P, np.eye(d))]])
    np.testing.assert_array_equal(vectorize(x[p.mapping], h[p.mapping]), block @ vectorize(x, h))
    np.testing.assert_array_equal(permute_vector(vectorize(x, h), p, d), block @ vectorize(x, h))


def test_rotate_vector_touches_positions_only(rng):
    x, h = rng.standard_normal((3, 3)), rng.standard_normal((3, 2))
    T = sample_random_rigid(rng)
    x2, h2 = devectorize(rotate_vector(vectorize(x, h), T.rotation, 2), 2)
    np.testing.assert_allclose(x2, x @ T.rotation.T, atol=1e-14)
    np.testing.assert_array_equal(h2, h)


def test_random_rigid_is_orthogonal_with_both_determinants():
    r = np.random.default_rng(0)
    dets = []
    for _ in range(200):
        T = sample_random_rigid(r)
        np.testing.assert_allclose(T.rotation.T @ T.rotation, np.eye(3), atol=1e-10)
        dets.append(np.linalg.det(T.rotation))
    np.testing.assert_allclose(np.abs(dets), 1.0, atol=1e-10)
    assert min(dets) < 0 < max(dets)


def test_random_translation_mean():
    r = np.random.default_rng(1)
    t = np.array([sample_random_rigid(r).translation for _ in range(10_000)])
    assert np.all(np.abs(t.mean(axis=0)) < 0.2)
    np.testing.assert_allclose(t.std(axis=0), 5.0, rtol=0.05)


def test_permutation_histogram_over_s3():
    r = np.random.default_rng(2)
    counts = dict.fromkeys(itertools.permutations(range(3)), 0)
    draws = 10_000
    for _ in range(draws):
        counts[tuple(int(k) for k in sample_random_permutation(r, 3).mapping)] += 1
    p = 1 / 6
    sigma = np.sqrt(draws * p * (1 - p))
    for c in counts.values():
        assert abs(c - draws * p) <= 3 * sigma
