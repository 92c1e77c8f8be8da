import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_dict
from lrmds.selection import (EmptySelectionError, SelectionState, project, screen,
                             select_1d, select_random, select_top_k)


def _naive_top_k(p, state, k):
    # oracle: full stable sort on (-|p|, flat index)
    n_left, n_right = p.shape
    order = sorted(range(p.size), key=lambda f: (-abs(p.flat[f]), f))
    left, right = list(state.left), list(state.right)
    cnt = 0
    for f in order:
        if cnt >= k:
            break
        i, j = divmod(f, n_right)
        if i not in left:
            left.append(i)
            cnt += 1
        if j not in right:
            right.append(j)
            cnt += 1
    return left, right


def test_project_small_example():
    psi = np.eye(2)
    phi = np.array([[1.0], [0.0]])
    r = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_allclose(project(r, psi, phi), [[1.0], [3.0]])


def test_project_matches_per_pair_loop(rng):
    psi, phi = random_dict(rng, 7, 9).atoms, random_dict(rng, 5, 3).atoms
    r = rng.standard_normal((7, 5))
    p = project(r, psi, phi)
    for i in range(9):
        for j in range(3):
            assert p[i, j] == pytest.approx(float(np.sum(r * np.outer(psi[:, i], phi[:, j]))), abs=1e-12)


def test_project_shape_mismatch(rng):
    with pytest.raises(ValueError):
        project(np.zeros((3, 3)), np.eye(4), np.eye(3))


def test_top_k_sign_and_tie_breaks():
    p = np.array([[1.0, -3.0], [3.0, 0.5]])
    out = select_top_k(p, SelectionState(), 2)
    # |-3| at (0,1) ties |3| at (1,0); row-major order picks (0,1) first
    assert out.left == [0] and out.right == [1]


def test_top_k_may_add_k_plus_one():
    p = np.array([[5.0, 0.0], [0.0, 4.0]])
    out = select_top_k(p, SelectionState(), 3)
    assert out.n_atoms == 4


def test_top_k_saturated_returns_copy():
    s = SelectionState([0, 1], [0])
    out = select_top_k(np.ones((2, 1)), s, 3)
    assert out == s and out is not s


def test_top_k_rejects_bad_k():
    with pytest.raises(ValueError):
        select_top_k(np.ones((2, 2)), SelectionState(), 0)


@given(st.integers(1, 12), st.integers(1, 12), st.integers(1, 8), st.integers(0, 10**6),
       st.booleans())
def test_top_k_properties(n_left, n_right, k, seed, coarse):
    rng = np.random.default_rng(seed)
    p = rng.standard_normal((n_left, n_right))
    if coarse:
        p = np.round(p)  # plenty of ties
    base = SelectionState(
        rng.choice(n_left, size=rng.integers(0, n_left + 1), replace=False).tolist(),
        rng.choice(n_right, size=rng.integers(0, n_right + 1), replace=False).tolist())
    out = select_top_k(p, base, k)
    added = out.n_atoms - base.n_atoms
    free = n_left + n_right - base.n_atoms
    assert out.left[: len(base.left)] == base.left and out.right[: len(base.right)] == base.right
    assert added <= k + 1
    assert added >= min(k, free)
    assert (out.left, out.right) == _naive_top_k(p, base, k)


def test_select_1d_energy_order(rng):
    psi = np.eye(3)
    phi = np.eye(2)
    r = np.array([[0.1, 0.0], [3.0, 0.0], [1.0, 2.5]])
    out = select_1d(r, psi, phi, SelectionState([1], []), 1, 1)
    assert out.left == [1, 2]
    assert out.right == [0]


def test_select_1d_ties_lowest_index():
    out = select_1d(np.ones((3, 3)), np.eye(3), np.eye(3), SelectionState(), 2, 1)
    assert out.left == [0, 1] and out.right == [0]


def test_select_random_reproducible_and_disjoint():
    s = SelectionState([0, 3], [1])
    a = select_random(s, 10, 5, 4, 2, seed=[7, 1])
    b = select_random(s, 10, 5, 4, 2, seed=[7, 1])
    assert a == b
    assert len(set(a.left)) == 6 and a.left[:2] == [0, 3]
    with pytest.raises(ValueError):
        select_random(s, 4, 5, 3, 0, seed=0)


def test_selection_state_validation():
    with pytest.raises(ValueError):
        SelectionState([1, 1], [])
    with pytest.raises(IndexError):
        SelectionState([5], []).check_bounds(5, 1)


def test_screen_threshold():
    x = np.diag([4.0, 2.0, 1.0])
    s = screen(x, np.eye(3), np.eye(3), 0.5)
    assert s.left == [0, 1] and s.right == [0, 1]
    with pytest.raises(EmptySelectionError):
        screen(np.zeros((3, 3)), np.eye(3), np.eye(3), 0.5)
    with pytest.raises(ValueError):
        screen(x, np.eye(3), np.eye(3), 0.0)
