import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lrmds.pipeline import PipelineConfig
from lrmds.synthlab import (DenoiseSpec, SynthSpec, ablation_spec, block_labels, build_problem,
                            denoise_problem, generate_sbm, near_orthogonal_dictionary,
                            noise_coefficient_point, run_denoise_experiment,
                            run_noise_coefficient_experiment)

SMALL = dict(n_nodes=60, sbm_blocks=3, gt_left_atoms=5, gt_right_atoms=4, signal_length=32,
             max_period=8)
SMALL_DENOISE = DenoiseSpec(n=60, m=8, i=120, j=16)


def test_spec_validation():
    with pytest.raises(ValueError):
        SynthSpec(p_in=0.1, p_out=0.2)
    with pytest.raises(ValueError):
        SynthSpec(snr_db=0)
    with pytest.raises(ValueError):
        SynthSpec(seed=-1)
    with pytest.raises(ValueError):
        DenoiseSpec(noise_divisor=0)
    assert ablation_spec(3).seed == 3


def test_sbm_default_in_block_density():
    spec = SynthSpec()
    g = generate_sbm(spec)
    labels = block_labels(spec)
    same = labels[g.u] == labels[g.v]
    sizes = np.bincount(labels)
    in_pairs = int(np.sum(sizes * (sizes - 1) // 2))
    out_pairs = spec.n_nodes * (spec.n_nodes - 1) // 2 - in_pairs
    assert 0.18 <= same.sum() / in_pairs <= 0.22
    assert 0.018 <= (~same).sum() / out_pairs <= 0.022


def test_sbm_extremes_give_cliques():
    spec = SynthSpec(n_nodes=12, sbm_blocks=3, p_in=1.0, p_out=0.0)
    g = generate_sbm(spec)
    labels = block_labels(spec)
    assert g.u.size == 3 * 6
    assert np.all(labels[g.u] == labels[g.v])
    assert np.bincount(labels).tolist() == [4, 4, 4]


@settings(max_examples=15)
@given(st.integers(0, 10**6), st.sampled_from([1.0, 3.0, 10.0, 100.0]))
def test_exact_snr_and_rank(seed, snr):
    p = build_problem(SynthSpec(seed=seed, snr_db=snr, **SMALL))
    ratio = np.sum(p.clean ** 2) / np.sum(p.noise ** 2)
    assert ratio == pytest.approx(snr, rel=0.01)
    assert abs(p.noise.mean()) < 1e-12
    assert np.linalg.matrix_rank(p.clean) <= 3
    assert len(p.gt.left) == 5 and len(p.gt.right) == 4
    assert p.gt.left == sorted(p.gt.left)


def test_noiseless_option():
    p = build_problem(SynthSpec(snr_db=math.inf, **SMALL))
    assert np.array_equal(p.x, p.clean)


def test_determinism_and_seed_sensitivity():
    a = build_problem(SynthSpec(seed=4, **SMALL))
    b = build_problem(SynthSpec(seed=4, **SMALL))
    c = build_problem(SynthSpec(seed=5, **SMALL))
    assert np.array_equal(a.x, b.x) and a.gt == b.gt
    assert not np.array_equal(a.x, c.x)


def test_default_dictionary_shapes():
    p = build_problem(SynthSpec(n_nodes=30, signal_length=256, max_period=24, gt_left_atoms=5,
                                gt_right_atoms=5))
    assert p.psi.shape == (30, 30) and p.phi.shape == (256, 180)
    np.testing.assert_allclose(np.linalg.norm(p.phi.atoms, axis=0), 1.0)
    ab = ablation_spec()
    assert sum(__import__("lrmds").dictio.totient(q) for q in range(1, ab.max_period + 1)) \
        > ab.signal_length


def test_too_many_gt_atoms():
    with pytest.raises(ValueError):
        build_problem(SynthSpec(n_nodes=10, sbm_blocks=2, gt_left_atoms=11, signal_length=16,
                                max_period=4, gt_right_atoms=2))


def test_near_orthogonal_dictionary():
    rng = np.random.default_rng(0)
    d = near_orthogonal_dictionary(40, 30, 10, 20.0, rng)
    assert d.shape == (40, 40)
    np.testing.assert_allclose(np.linalg.norm(d, axis=0), 1.0)
    gram = d[:, :30].T @ d[:, :30]
    off = np.abs(gram - np.diag(np.diag(gram)))
    assert off.max() < 0.6  # perturbation at power ratio 20 keeps columns close to orthogonal
    assert np.median(off) < 0.1


def test_denoise_problem_structure():
    psi, phi, gt, clean, q = denoise_problem(SMALL_DENOISE)
    assert psi.shape == (60, 120) and phi.shape == (8, 16)
    assert len(gt.left) == 6 and len(gt.right) == 3
    assert max(gt.left) < 60 and max(gt.right) < 8
    assert np.linalg.matrix_rank(clean) <= 3
    assert np.std(q) == pytest.approx(np.std(clean) / 20, rel=0.2)


def test_denoise_small_run_passes():
    rep = run_denoise_experiment(SMALL_DENOISE, PipelineConfig(k_per_iter=3, rank=3))
    assert rep.curves_pass and rep.histogram_pass
    assert rep.atoms == sorted(rep.atoms)
    assert len(rep.atoms) == len(rep.clean_rmse) == len(rep.noisy_rmse)
    s = rep.summary()
    assert s["curves_pass"] is True and sum(s["histogram"]["clean_vs_noise"]) == rep.diff_pure.size


def test_denoise_without_noise_curves_coincide():
    spec = DenoiseSpec(n=60, m=8, i=120, j=16, noise_divisor=1e12)
    rep = run_denoise_experiment(spec, PipelineConfig(k_per_iter=3, rank=3))
    assert rep.curve_gaps.max() < 1e-6


def test_noise_coefficient_scales_linearly():
    a = noise_coefficient_point(40, 30, seed=1, target_pairs=5)
    b = noise_coefficient_point(40, 30, seed=1, target_pairs=5, scale=3.0)
    assert b == pytest.approx(3.0 * a, rel=1e-9)


def test_noise_coefficient_experiment_small():
    rep = run_noise_coefficient_experiment([20, 80], m=40, seeds=(0, 1, 2), target_pairs=5)
    assert len(rep.max_coef) == 2 and len(rep.max_coef[0]) == 3
    assert rep.summary()["median_max_coef"] == rep.medians
    with pytest.raises(ValueError):
        run_noise_coefficient_experiment([80, 20], m=40)
