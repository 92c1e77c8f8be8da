import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given
from hypothesis import strategies as st

from conftest import path_graph
from lrmds import dictio
from lrmds.dictio import Dictionary, Family
from lrmds.matio import GraphSpec
from lrmds.numerics import DegenerateAtomError


def _ramanujan_oracle(q, n):
    # direct definition: sum over k coprime to q of exp(2 pi i k n / q)
    ks = [k for k in range(1, q + 1) if math.gcd(k, q) == 1]
    return np.real(sum(np.exp(2j * np.pi * k * np.asarray(n) / q) for k in ks))


def _random_graph(n, p, seed):
    r = np.random.default_rng(seed)
    adj = np.triu(r.random((n, n)) < p, 1).astype(float)
    return GraphSpec.from_adjacency(adj + adj.T)


def test_gft_path3():
    d = dictio.build_gft(path_graph(3))
    evals, _ = dictio.graph_spectrum(path_graph(3))
    np.testing.assert_allclose(evals, [0.0, 1.0, 3.0], atol=1e-12)
    np.testing.assert_allclose(np.abs(d.atoms[:, 0]), np.ones(3) / math.sqrt(3), atol=1e-12)
    assert d.family is Family.GFT


def test_gft_single_node():
    d = dictio.build_gft(GraphSpec.from_edges(1, []))
    assert d.atoms.shape == (1, 1) and abs(d.atoms[0, 0]) == pytest.approx(1.0)


def test_gft_eigen_equation(rng):
    g = _random_graph(15, 0.3, 1)
    evals, vecs = dictio.graph_spectrum(g)
    np.testing.assert_allclose(g.laplacian() @ vecs, vecs * evals, atol=1e-10)
    assert np.all(np.diff(evals) >= -1e-12)


@given(st.integers(1, 25), st.floats(0.0, 1.0), st.integers(0, 10**6))
def test_gft_orthonormal(n, p, seed):
    d = dictio.build_gft(_random_graph(n, p, seed))
    np.testing.assert_allclose(d.atoms.T @ d.atoms, np.eye(n), atol=1e-8)


def test_haar_two_nodes():
    d = dictio.build_graph_haar(path_graph(2))
    expect = np.array([[1, 1], [1, -1]]) / math.sqrt(2)
    for col in range(2):
        assert min(np.abs(d.atoms[:, col] - expect[:, col]).max(),
                   np.abs(d.atoms[:, col] + expect[:, col]).max()) < 1e-12


def test_haar_first_split_separates_cliques():
    g = GraphSpec.from_edges(4, [(0, 1), (2, 3), (1, 2)])
    # oracle: Fiedler vector from an independent dense eigensolver
    _, vecs = scipy.linalg.eigh(g.laplacian())
    side = vecs[:, 1] >= 0
    a, b = dictio.haar_tree(g)[0]
    assert {frozenset(a.tolist()), frozenset(b.tolist())} == {
        frozenset(np.flatnonzero(side).tolist()), frozenset(np.flatnonzero(~side).tolist())}
    assert {frozenset(a.tolist()), frozenset(b.tolist())} == {frozenset({0, 1}), frozenset({2, 3})}


def test_haar_atoms_constant_on_children():
    g = _random_graph(11, 0.4, 3)
    d = dictio.build_graph_haar(g)
    for col, (a, b) in enumerate(dictio.haar_tree(g), start=1):
        atom = d.atoms[:, col]
        assert np.ptp(atom[a]) < 1e-12 and atom[a][0] > 0
        assert np.ptp(atom[b]) < 1e-12 and atom[b][0] < 0
        rest = np.setdiff1d(np.arange(11), np.r_[a, b])
        assert np.all(atom[rest] == 0)


@given(st.integers(2, 25), st.floats(0.0, 1.0), st.integers(0, 10**6))
def test_haar_orthonormal(n, p, seed):
    d = dictio.build_graph_haar(_random_graph(n, p, seed))
    np.testing.assert_allclose(d.atoms.T @ d.atoms, np.eye(n), atol=1e-8)


def test_haar_needs_two_nodes():
    with pytest.raises(ValueError):
        dictio.build_graph_haar(GraphSpec.from_edges(1, []))


def test_totient_and_mobius_against_brute_force():
    for q in range(1, 60):
        assert dictio.totient(q) == sum(1 for k in range(1, q + 1) if math.gcd(k, q) == 1)
    assert [dictio.mobius(n) for n in range(1, 11)] == [1, -1, -1, 0, -1, 1, -1, 0, 0, 1]


def test_ramanujan_sum_matches_definition():
    n = np.arange(40)
    for q in range(1, 25):
        np.testing.assert_allclose(dictio.ramanujan_sum(q, n), _ramanujan_oracle(q, n), atol=1e-9)


def test_ramanujan_small_blocks():
    d = dictio.build_ramanujan(10, 2)
    assert d.atoms.shape == (10, 2)
    assert np.all(d.atoms[:, 0] == 1.0)
    assert np.array_equal(d.atoms[:, 1], (-1.0) ** np.arange(10))


def test_ramanujan_column_count():
    assert dictio.build_ramanujan(16, 5).n_atoms == 10
    assert dictio.build_ramanujan(8, 3).atoms.shape == (8, 4)
    for q in range(1, 40):
        assert dictio.ramanujan_column_count(q) == sum(dictio.totient(p) for p in range(1, q + 1))
    assert dictio.ramanujan_period_for_columns(10) == 5
    assert dictio.ramanujan_period_for_columns(11) == 6


@given(st.integers(1, 60), st.integers(1, 20))
def test_ramanujan_blocks_are_periodic(length, max_period):
    try:
        d = dictio.build_ramanujan(length, max_period)
    except DegenerateAtomError:
        assert length < max_period  # a shift can miss every nonzero sample
        return
    n = np.arange(length)
    for col, q in enumerate(d.params["periods"]):
        atom = d.atoms[:, col]
        ext = d.atoms[n % q, col] if length >= q else None
        if ext is not None:
            assert np.array_equal(atom, ext)
        assert np.all(atom == np.round(atom))


def test_ramanujan_block_is_shifted_sum():
    d = dictio.build_ramanujan(24, 6)
    periods = np.array(d.params["periods"])
    block = d.atoms[:, periods == 6]
    base = _ramanujan_oracle(6, np.arange(24))
    for s in range(block.shape[1]):
        np.testing.assert_allclose(block[:, s], np.roll(base, s), atol=1e-9)


def test_spline_degree0_indicators():
    d = dictio.build_spline(8, [4], degree=0)
    assert d.atoms.shape == (8, 4)
    assert np.array_equal(d.atoms.sum(axis=1), np.ones(8))
    assert np.all((d.atoms == 0) | (d.atoms == 1))
    assert np.array_equal((d.atoms > 0).sum(axis=0), [2, 2, 2, 2])


def test_spline_partition_of_unity_and_support():
    d = dictio.build_spline(64, [4, 8, 16], degree=3)
    start = 0
    for count in (4, 8, 16):
        block = d.atoms[:, start:start + count]
        np.testing.assert_allclose(block.sum(axis=1), 1.0, atol=1e-10)
        assert np.all(block >= 0)
        for col in block.T:
            nz = np.flatnonzero(col)
            assert nz.size < 64 or count == 4
            assert np.all(col[nz.min():nz.max() + 1] > 0)  # contiguous support
        start += count


def test_spline_default_scales_and_errors():
    d = dictio.build_spline(32)
    assert d.params["knots_per_scale"] == dictio.dyadic_knots(32, 3) == [4, 8, 16]
    with pytest.raises(ValueError):
        dictio.build_spline(8, [2], degree=3)
    with pytest.raises(ValueError):
        dictio.build_spline(8, [64], degree=3)


def test_stack(rng):
    g = _random_graph(6, 0.5, 2)
    gft, haar = dictio.build_gft(g), dictio.build_graph_haar(g)
    assert dictio.stack([gft]) is gft
    s = dictio.stack([gft, haar])
    assert s.shape == (6, 12) and s.family is Family.COMPOSITE
    assert np.array_equal(s.atoms[:, :6], gft.atoms)
    assert np.array_equal(s.atoms[:, 6:], haar.atoms)
    with pytest.raises(ValueError):
        dictio.stack([gft, dictio.build_ramanujan(5, 2)])


def test_dictionary_validation(rng):
    with pytest.raises(DegenerateAtomError):
        Dictionary(np.array([[1.0, 0.0], [0.0, 0.0]]))
    with pytest.raises(ValueError):
        Dictionary(np.array([[2.0]]), normalized=True)
    d = Dictionary(rng.standard_normal((4, 3)))
    n = d.normalized_copy()
    np.testing.assert_allclose(np.linalg.norm(n.atoms, axis=0), 1.0)
    assert n.normalized and n.normalized_copy() is n


def test_build_from_params():
    g = path_graph(4)
    assert dictio.build_from_params("gft", graph=g).family is Family.GFT
    assert dictio.build_from_params("haar", graph=g).family is Family.GRAPH_HAAR
    assert dictio.build_from_params("ramanujan", length=8, max_period=3).n_atoms == 4
    assert dictio.build_from_params("spline", length=16).family is Family.SPLINE
    with pytest.raises(ValueError):
        dictio.build_from_params("gft")
    with pytest.raises(ValueError):
        dictio.build_from_params("ramanujan", length=8)
