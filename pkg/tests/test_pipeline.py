from dataclasses import replace

import numpy as np
import pytest

from conftest import random_dict
from lrmds.coder import CoderConfig
from lrmds import coder
from lrmds.pipeline import (FingerprintMismatch, PipelineConfig, PipelineError, SelectionMode,
                            default_max_outer_iters, resume, run_lrmds)


def _problem(seed=0, n=20, m=15, i=30, j=25, rank=2, noise=0.0):
    rng = np.random.default_rng(seed)
    psi, phi = random_dict(rng, n, i, normalized=True), random_dict(rng, m, j, normalized=True)
    a, b = min(4, i), min(3, j)
    li = rng.choice(i, a, replace=False)
    rj = rng.choice(j, b, replace=False)
    x = psi.atoms[:, li] @ rng.standard_normal((a, rank)) @ rng.standard_normal((rank, b)) \
        @ phi.atoms[:, rj].T
    x = x + noise * rng.standard_normal(x.shape)
    return x, psi, phi


def test_config_validation():
    with pytest.raises(ValueError):
        PipelineConfig(k_per_iter=0)
    with pytest.raises(ValueError):
        PipelineConfig(selection_mode="1d")
    assert PipelineConfig(selection_mode="random", k_left=1).selection_mode is SelectionMode.RANDOM


def test_zero_input_stops_immediately():
    _, psi, phi = _problem()
    model, trace = run_lrmds(np.zeros((20, 15)), psi, phi)
    assert trace.stop_reason == "converged" and len(trace.rows) == 1
    assert model.selection.n_atoms == 0


def test_shape_mismatch():
    x, psi, phi = _problem()
    with pytest.raises(ValueError):
        run_lrmds(x.T, psi, phi)


def test_trace_invariants():
    x, psi, phi = _problem(1, noise=0.05)
    cfg = PipelineConfig(k_per_iter=3, residual_tol=0.0, max_outer_iters=6)
    model, trace = run_lrmds(x, psi, phi, cfg)
    atoms = [r.n_atoms for r in trace.rows]
    assert trace.rows[0].residual_norm == pytest.approx(np.linalg.norm(x))
    assert all(0 < b - a <= 4 for a, b in zip(atoms, atoms[1:]))
    assert [r.iteration for r in trace.rows] == list(range(len(trace.rows)))
    times = [r.wall_time_s for r in trace.rows]
    assert times == sorted(times)
    assert (len(model.selection.left), len(model.selection.right)) == \
        (trace.last.n_left, trace.last.n_right)


def test_noiseless_recovery_converges():
    x, psi, phi = _problem(2)
    cfg = PipelineConfig(k_per_iter=3, rank=2, coder=CoderConfig(max_inner_iters=300, tol=1e-12),
                         residual_tol=1e-8)
    _, trace = run_lrmds(x, psi, phi, cfg)
    assert trace.stop_reason == "converged"
    assert trace.relative_residuals()[-1] < 1e-8


def test_atom_budget_stop():
    x, psi, phi = _problem(3, noise=0.1)
    _, trace = run_lrmds(x, psi, phi, PipelineConfig(k_per_iter=4, max_atoms=10, residual_tol=0))
    assert trace.stop_reason == "atom_budget" and 10 <= trace.last.n_atoms <= 14


def test_default_outer_budget():
    _, psi, phi = _problem()
    assert default_max_outer_iters(psi, phi, 5) == 11


def test_resume_matches_single_run():
    x, psi, phi = _problem(4, noise=0.05)
    cfg = PipelineConfig(k_per_iter=3, residual_tol=0.0, max_outer_iters=6)
    full_model, full_trace = run_lrmds(x, psi, phi, cfg)
    part = run_lrmds(x, psi, phi, replace(cfg, max_outer_iters=2))
    model, trace = resume(x, psi, phi, replace(cfg, max_outer_iters=4), part)
    assert model.selection == full_model.selection
    np.testing.assert_allclose(model.coefficients, full_model.coefficients, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose([r.residual_norm for r in trace.rows],
                               [r.residual_norm for r in full_trace.rows], rtol=1e-10)
    assert len(part[1].rows) == 3  # the prior trace is not mutated


def test_resume_rejects_other_data():
    x, psi, phi = _problem(5)
    prior = run_lrmds(x, psi, phi, PipelineConfig(max_outer_iters=1))
    with pytest.raises(FingerprintMismatch):
        resume(x + 1.0, psi, phi, PipelineConfig(), prior)


def test_one_d_and_random_modes():
    x, psi, phi = _problem(6, noise=0.05)
    for mode in ("1d", "random"):
        cfg = PipelineConfig(selection_mode=mode, k_left=2, k_right=1, max_outer_iters=3,
                             residual_tol=0.0, seed=11)
        model, trace = run_lrmds(x, psi, phi, cfg)
        assert [(r.n_left, r.n_right) for r in trace.rows] == [(0, 0), (2, 1), (4, 2), (6, 3)]
        again, _ = run_lrmds(x, psi, phi, cfg)
        assert again.selection == model.selection


def test_random_mode_stalls_when_exhausted():
    x, psi, phi = _problem(7, i=4, j=3)
    cfg = PipelineConfig(selection_mode="random", k_left=2, k_right=2, residual_tol=0.0,
                         max_outer_iters=10)
    _, trace = run_lrmds(x, psi, phi, cfg)
    assert trace.last.n_atoms == 7 and trace.stop_reason == "stalled"


def test_joint_mode_stalls_when_every_atom_selected():
    x, psi, phi = _problem(8, n=6, m=5, i=3, j=2, noise=0.3)
    _, trace = run_lrmds(x, psi, phi, PipelineConfig(k_per_iter=2, residual_tol=0.0,
                                                     max_outer_iters=10))
    assert trace.last.n_atoms == 5 and trace.stop_reason == "stalled"


def test_errors_carry_iteration(monkeypatch):
    x, psi, phi = _problem(9, noise=0.05)
    real_fit = coder.fit
    calls = []

    def flaky(*args, **kwargs):
        calls.append(1)
        if len(calls) == 2:
            raise np.linalg.LinAlgError("SVD did not converge")
        return real_fit(*args, **kwargs)

    monkeypatch.setattr(coder, "fit", flaky)
    with pytest.raises(PipelineError) as info:
        run_lrmds(x, psi, phi, PipelineConfig(residual_tol=0.0))
    assert info.value.iteration == 2
    assert isinstance(info.value.cause, np.linalg.LinAlgError)


def test_callback_sees_every_iteration():
    x, psi, phi = _problem(10, noise=0.05)
    seen = []
    run_lrmds(x, psi, phi, PipelineConfig(max_outer_iters=3, residual_tol=0),
              on_iteration=lambda it, model, res: seen.append((it, res.shape)))
    assert seen == [(1, x.shape), (2, x.shape), (3, x.shape)]
