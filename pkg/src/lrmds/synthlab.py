"""Synthetic data and the two theory-validation experiments.

The default synthetic problem couples a GFT dictionary built on a stochastic
block model graph with a Ramanujan periodic dictionary. A random subset of
atoms on each side carries a rank-``r`` coefficient matrix ``Y W`` and
Gaussian noise is added at an exact signal-to-noise power ratio.

All randomness is drawn from named sub-streams of ``spec.seed`` (see
:func:`lrmds.numerics.substream`).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import dictio
from .baselines import run_omp2d
from .coder import reconstruct
from .dictio import Dictionary, Family
from .matio import GraphSpec
from .numerics import frobenius_norm, normalize_columns, substream
from .pipeline import PipelineConfig, PipelineTrace, resume, run_lrmds
from .selection import SelectionState


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of the default synthetic protocol.

    ``snr_db`` is a linear power ratio ``||clean||_F^2 / ||eps||_F^2`` despite
    its name; ``math.inf`` disables noise. ``signal_length`` and
    ``max_period`` size the right (Ramanujan) dictionary.
    """

    n_nodes: int = 1000
    sbm_blocks: int = 3
    p_in: float = 0.2
    p_out: float = 0.02
    gt_left_atoms: int = 20
    gt_right_atoms: int = 20
    rank: int = 3
    snr_db: float = 10.0
    seed: int = 0
    signal_length: int = 256
    max_period: int = 24

    def __post_init__(self):
        if self.n_nodes < 1 or self.sbm_blocks < 1 or self.sbm_blocks > self.n_nodes:
            raise ValueError("need 1 <= sbm_blocks <= n_nodes")
        if not 0.0 <= self.p_out <= self.p_in <= 1.0:
            raise ValueError("need 0 <= p_out <= p_in <= 1")
        if self.gt_left_atoms < 1 or self.gt_right_atoms < 1 or self.rank < 1:
            raise ValueError("atom counts and rank must be >= 1")
        if not self.snr_db > 0:
            raise ValueError("snr must be positive (use inf for no noise)")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if self.signal_length < 1 or self.max_period < 1:
            raise ValueError("signal_length and max_period must be >= 1")


@dataclass(frozen=True)
class DenoiseSpec:
    """Setup of the denoising experiment."""

    n: int = 500
    m: int = 10
    i: int = 1000
    j: int = 20
    rank: int = 3
    sparsity_fraction: float = 0.1
    ortho_snr: float = 20.0
    noise_divisor: float = 20.0
    seed: int = 0

    def __post_init__(self):
        if min(self.n, self.m, self.i, self.j, self.rank) < 1:
            raise ValueError("sizes and rank must be >= 1")
        if not 0.0 < self.sparsity_fraction <= 1.0:
            raise ValueError("sparsity_fraction must lie in (0, 1]")
        if self.ortho_snr <= 0 or self.noise_divisor <= 0:
            raise ValueError("ortho_snr and noise_divisor must be positive")


@dataclass
class SynthProblem:
    x: np.ndarray
    clean: np.ndarray
    gt: SelectionState
    psi: Dictionary
    phi: Dictionary
    graph: GraphSpec
    spec: SynthSpec

    @property
    def noise(self) -> np.ndarray:
        return self.x - self.clean


def generate_sbm(spec: SynthSpec) -> GraphSpec:
    """Stochastic block model with near-equal blocks (sizes differ by <= 1)."""
    rng = substream(spec.seed, "graph")
    n = spec.n_nodes
    labels = np.repeat(np.arange(spec.sbm_blocks),
                       [len(b) for b in np.array_split(np.arange(n), spec.sbm_blocks)])
    iu, ju = np.triu_indices(n, 1)
    prob = np.where(labels[iu] == labels[ju], spec.p_in, spec.p_out)
    keep = rng.random(iu.size) < prob
    return GraphSpec(n, iu[keep], ju[keep], np.ones(int(keep.sum())))


def block_labels(spec: SynthSpec) -> np.ndarray:
    sizes = [len(b) for b in np.array_split(np.arange(spec.n_nodes), spec.sbm_blocks)]
    return np.repeat(np.arange(spec.sbm_blocks), sizes)


def _scaled_noise(clean: np.ndarray, snr: float, rng: np.random.Generator) -> np.ndarray:
    if math.isinf(snr):
        return np.zeros_like(clean)
    e = rng.standard_normal(clean.shape)
    e -= e.mean()
    e_norm = frobenius_norm(e)
    return e * (frobenius_norm(clean) / (e_norm * math.sqrt(snr)))


def generate_signal(spec: SynthSpec, psi: Dictionary, phi: Dictionary
                    ) -> tuple[np.ndarray, SelectionState, np.ndarray]:
    """Draw ``x = Psi_gt Y W Phi_gt^T + eps`` with exact SNR.

    Returns ``(x, gt, clean)``; ``gt`` holds the sorted generating indices.
    """
    if spec.gt_left_atoms > psi.n_atoms or spec.gt_right_atoms > phi.n_atoms:
        raise ValueError(f"cannot draw {spec.gt_left_atoms}+{spec.gt_right_atoms} atoms from "
                         f"dictionaries with {psi.n_atoms}+{phi.n_atoms} atoms")
    rng = substream(spec.seed, "atoms")
    left = np.sort(rng.choice(psi.n_atoms, spec.gt_left_atoms, replace=False))
    right = np.sort(rng.choice(phi.n_atoms, spec.gt_right_atoms, replace=False))
    crng = substream(spec.seed, "coefficients")
    y = crng.random((spec.gt_left_atoms, spec.rank))
    w = crng.random((spec.rank, spec.gt_right_atoms))
    clean = (psi.sub(left) @ y) @ (w @ phi.sub(right).T)
    x = clean + _scaled_noise(clean, spec.snr_db, substream(spec.seed, "noise"))
    return x, SelectionState(left.tolist(), right.tolist()), clean


def build_problem(spec: SynthSpec | None = None) -> SynthProblem:
    """Graph, unit-norm dictionaries and signal for the default protocol."""
    spec = spec or SynthSpec()
    graph = generate_sbm(spec)
    psi = dictio.build_gft(graph)
    phi = dictio.build_ramanujan(spec.signal_length, spec.max_period).normalized_copy()
    x, gt, clean = generate_signal(spec, psi, phi)
    return SynthProblem(x, clean, gt, psi, phi, graph, spec)


def ablation_spec(seed: int = 0, snr: float = 10.0) -> SynthSpec:
    """Default protocol with a shorter signal so the right dictionary is over-complete (M < J)."""
    return SynthSpec(seed=seed, snr_db=snr, signal_length=128, max_period=32)


def near_orthogonal_dictionary(rows: int, n_ortho: int, n_gauss: int, ortho_snr: float,
                               rng: np.random.Generator) -> np.ndarray:
    """``n_ortho`` perturbed orthonormal columns followed by ``n_gauss`` Gaussian ones.

    Orthonormal columns come from the QR factor of a Gaussian matrix (so at
    most ``rows`` of them are exactly orthogonal; extra columns are drawn from
    fresh bases). Each gets Gaussian noise with column power ratio
    ``ortho_snr`` and is re-normalized. All columns have unit norm.
    """
    blocks = []
    left = n_ortho
    while left > 0:
        q, _ = np.linalg.qr(rng.standard_normal((rows, rows)))
        blocks.append(q[:, :min(left, rows)])
        left -= rows
    ortho = np.hstack(blocks) if blocks else np.zeros((rows, 0))
    pert = rng.standard_normal(ortho.shape)
    if ortho.shape[1]:
        pert *= 1.0 / (np.linalg.norm(pert, axis=0) * math.sqrt(ortho_snr))
    gauss = rng.standard_normal((rows, n_gauss))
    return normalize_columns(np.hstack([ortho + pert, gauss]))


def _step_at(atoms: np.ndarray, values: np.ndarray, budget: float) -> float:
    """Value of a non-decreasing-atoms trace at the last point with ``atoms <= budget``."""
    idx = np.searchsorted(atoms, budget, side="right") - 1
    return float(values[max(idx, 0)])


def _nonzero(a: np.ndarray) -> np.ndarray:
    a = np.abs(a).ravel()
    scale = a.max() if a.size else 0.0
    return a[a > 1e-12 * scale] if scale > 0 else a[:0]


@dataclass
class DenoiseReport:
    spec: DenoiseSpec
    k_per_iter: int
    gt_left: int
    gt_right: int
    atoms: list[int]
    clean_rmse: list[float]
    noisy_rmse: list[float]
    clean_converged_at: int
    sigma_r: float
    diff_noisy: np.ndarray = field(repr=False)
    diff_pure: np.ndarray = field(repr=False)
    omp_pairs: int = 0
    curve_tol: float = 0.1

    @property
    def curve_gaps(self) -> np.ndarray:
        """``|rmse_clean - rmse_noisy|`` at each budget, relative to the RMS of clean R."""
        return np.abs(np.asarray(self.clean_rmse) - np.asarray(self.noisy_rmse)) / self.sigma_r

    @property
    def gaps_past_convergence(self) -> np.ndarray:
        return self.curve_gaps[np.asarray(self.atoms) >= self.clean_converged_at]

    @property
    def curves_pass(self) -> bool:
        gaps = self.gaps_past_convergence
        return bool(gaps.size and gaps.max() < self.curve_tol)

    @property
    def histogram_pass(self) -> bool:
        return bool(self.diff_noisy.size < self.diff_pure.size
                    and np.median(self.diff_noisy) < np.median(self.diff_pure))

    def histogram(self, bins: int = 30) -> dict:
        hi = max(self.diff_noisy.max(initial=0.0), self.diff_pure.max(initial=0.0)) or 1.0
        edges = np.linspace(0.0, hi, bins + 1)
        return {"edges": edges.tolist(),
                "clean_vs_noisy": np.histogram(self.diff_noisy, edges)[0].tolist(),
                "clean_vs_noise": np.histogram(self.diff_pure, edges)[0].tolist()}

    def summary(self) -> dict:
        return {
            "spec": asdict(self.spec),
            "k_per_iter": self.k_per_iter,
            "gt_atoms": [self.gt_left, self.gt_right],
            "omp_pairs": self.omp_pairs,
            "curve": {"atoms": self.atoms, "clean_rmse": self.clean_rmse,
                      "noisy_rmse": self.noisy_rmse,
                      "gap_relative_to_rms_r": self.curve_gaps.tolist()},
            "clean_converged_at_atoms": self.clean_converged_at,
            "max_gap_past_convergence": float(self.gaps_past_convergence.max(initial=0.0)),
            "curves_pass": self.curves_pass,
            "nonzero": {"clean_vs_noisy": int(self.diff_noisy.size),
                        "clean_vs_noise": int(self.diff_pure.size)},
            "median": {"clean_vs_noisy": float(np.median(self.diff_noisy)) if self.diff_noisy.size else 0.0,
                       "clean_vs_noise": float(np.median(self.diff_pure)) if self.diff_pure.size else 0.0},
            "histogram_pass": self.histogram_pass,
            "histogram": self.histogram(),
        }


def denoise_problem(spec: DenoiseSpec):
    """Dictionaries, ground truth, clean ``R`` and noise ``Q`` for the denoising setup."""
    rng = substream(spec.seed, "dictionaries")
    half_i, half_j = spec.i // 2, spec.j // 2
    psi = Dictionary(near_orthogonal_dictionary(spec.n, half_i, spec.i - half_i, spec.ortho_snr, rng),
                     Family.CUSTOM, True, {"kind": "near_orthogonal+gaussian"})
    phi = Dictionary(near_orthogonal_dictionary(spec.m, half_j, spec.j - half_j, spec.ortho_snr, rng),
                     Family.CUSTOM, True, {"kind": "near_orthogonal+gaussian"})
    s_left = max(round(spec.sparsity_fraction * half_i), spec.rank)
    s_right = max(round(spec.sparsity_fraction * half_j), spec.rank)
    s_left, s_right = min(s_left, half_i), min(s_right, half_j)
    arng = substream(spec.seed, "atoms")
    left = np.sort(arng.choice(half_i, s_left, replace=False))
    right = np.sort(arng.choice(half_j, s_right, replace=False))
    crng = substream(spec.seed, "coefficients")
    y = crng.standard_normal((s_left, spec.rank))
    w = crng.standard_normal((spec.rank, s_right))
    clean = (psi.sub(left) @ y) @ (w @ phi.sub(right).T)
    sigma_r = float(np.std(clean))
    q = substream(spec.seed, "noise").normal(0.0, sigma_r / spec.noise_divisor, clean.shape)
    return psi, phi, SelectionState(left.tolist(), right.tolist()), clean, q


def run_denoise_experiment(spec: DenoiseSpec | None = None, cfg: PipelineConfig | None = None,
                           extra_iters: int = 5, omp_pairs: int | None = None) -> DenoiseReport:
    """Compare LRMDS fits of clean ``R`` and noisy ``R + Q``.

    The clean run stops at ``cfg.residual_tol``; both runs are then carried
    ``extra_iters`` iterations past that point so that the curves have
    several budgets beyond convergence. RMSE is always measured against
    clean ``R``. Coefficient differences use both fits at the clean run's
    convergence iteration. The pure-noise reference coefficients come from
    2D-OMP on ``Q`` with ``omp_pairs`` pairs (default ``I + J``).
    """
    spec = spec or DenoiseSpec()
    cfg = cfg or PipelineConfig(k_per_iter=10, rank=spec.rank)
    psi, phi, gt, clean, q = denoise_problem(spec)
    sigma_r = float(np.sqrt(np.mean(clean ** 2)))

    clean_model, clean_trace = run_lrmds(clean, psi, phi, cfg)
    converged_model = clean_model
    converged_iter = clean_trace.last.iteration
    converged_at = clean_trace.last.n_atoms
    more = replace(cfg, max_outer_iters=extra_iters, residual_tol=0.0)
    clean_curve = _trace_rmse(clean_trace, clean.size)
    _, clean_trace, extra = _extend(clean, psi, phi, more, (clean_model, clean_trace), clean)
    clean_curve += extra

    noisy_cfg = replace(cfg, max_outer_iters=clean_trace.last.iteration, residual_tol=0.0)
    noisy_curve: list = []
    snapshots: dict = {}
    record = _recorder(noisy_curve, psi, phi, clean)

    def on_noisy(it, model, residual):
        record(it, model, residual)
        if it == converged_iter:
            snapshots["model"] = model
    run_lrmds(clean + q, psi, phi, noisy_cfg, on_iteration=on_noisy)

    atoms = [a for a, _ in clean_curve]
    noisy_atoms = np.array([0] + [a for a, _ in noisy_curve])
    noisy_vals = np.array([sigma_r] + [v for _, v in noisy_curve])
    noisy_at = [_step_at(noisy_atoms, noisy_vals, a) for a in atoms]

    # Coefficients are compared at the clean run's convergence point.
    z_clean = converged_model.full_coefficients(psi.n_atoms, phi.n_atoms)
    noisy_model = snapshots.get("model")
    z_noisy = (noisy_model.full_coefficients(psi.n_atoms, phi.n_atoms)
               if noisy_model is not None else np.zeros_like(z_clean))
    pairs = omp_pairs if omp_pairs is not None else psi.n_atoms + phi.n_atoms
    omp_model, _ = run_omp2d(q, psi, phi, pairs)
    z_pure = omp_model.full_coefficients(psi.n_atoms, phi.n_atoms)
    return DenoiseReport(spec, cfg.k_per_iter, len(gt.left), len(gt.right), atoms,
                         [v for _, v in clean_curve], noisy_at, converged_at, sigma_r,
                         _nonzero(z_clean - z_noisy), _nonzero(z_clean - z_pure), pairs)


def _recorder(out: list, psi: Dictionary, phi: Dictionary, target: np.ndarray):
    def record(it, model, residual):
        sel = model.selection
        x_hat = reconstruct(model, psi.sub(sel.left), phi.sub(sel.right))
        out.append((sel.n_atoms, float(np.sqrt(np.mean((target - x_hat) ** 2)))))
    return record


def _trace_rmse(trace: PipelineTrace, size: int) -> list[tuple[int, float]]:
    # Residual norms are RMSEs against the fitted matrix itself.
    return [(row.n_atoms, row.residual_norm / math.sqrt(size)) for row in trace.rows]


def _extend(x, psi, phi, cfg, prior, target):
    curve: list = []
    model, trace = resume(x, psi, phi, cfg, prior, on_iteration=_recorder(curve, psi, phi, target))
    return model, trace, curve


@dataclass
class NoiseCoefReport:
    n_grid: list[int]
    m: int
    seeds: list[int]
    target_pairs: int
    max_coef: list[list[float]]

    @property
    def medians(self) -> list[float]:
        return [float(np.median(v)) for v in self.max_coef]

    @property
    def decreasing(self) -> bool:
        med = self.medians
        return all(b < a for a, b in zip(med, med[1:]))

    def summary(self) -> dict:
        return {"n_grid": self.n_grid, "m": self.m, "seeds": self.seeds,
                "target_pairs": self.target_pairs, "max_coef": self.max_coef,
                "median_max_coef": self.medians, "decreasing": self.decreasing}


def noise_coefficient_point(n: int, m: int, seed: int, target_pairs: int = 20,
                            sigma: float = 1.0, ortho_snr: float = 20.0,
                            scale: float = 1.0) -> float:
    """Max |coefficient| of a 2D-OMP encoding of pure noise ``Q`` (``n x m``).

    ``Q = sigma / sqrt(n m) * G`` with ``G`` standard normal, so ``||Q||_F``
    stays near ``sigma`` as ``n`` grows. The dictionaries are square and
    near-orthogonal.
    """
    rng = substream(seed, f"noisecoef-{n}-{m}")
    psi = Dictionary(near_orthogonal_dictionary(n, n, 0, ortho_snr, rng), Family.CUSTOM, True, {})
    phi = Dictionary(near_orthogonal_dictionary(m, m, 0, ortho_snr, rng), Family.CUSTOM, True, {})
    q = scale * sigma / math.sqrt(n * m) * rng.standard_normal((n, m))
    model, _ = run_omp2d(q, psi, phi, target_pairs)
    return float(np.max(np.abs(model.coeffs))) if model.coeffs.size else 0.0


def run_noise_coefficient_experiment(n_grid, m: int = 1000, seeds=(0, 1, 2, 3, 4),
                                     target_pairs: int = 20, sigma: float = 1.0,
                                     ortho_snr: float = 20.0) -> NoiseCoefReport:
    n_grid = [int(n) for n in n_grid]
    if any(b <= a for a, b in zip(n_grid, n_grid[1:])):
        raise ValueError("n_grid must be strictly ascending")
    values = [[noise_coefficient_point(n, m, s, target_pairs, sigma, ortho_snr) for s in seeds]
              for n in n_grid]
    return NoiseCoefReport(n_grid, m, list(seeds), target_pairs, values)
