import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from lrmds.dictio import Dictionary, Family
from lrmds.matio import GraphSpec

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_dict(rng, rows, cols, normalized=False) -> Dictionary:
    atoms = rng.standard_normal((rows, cols))
    d = Dictionary(atoms, Family.CUSTOM, False, {})
    return d.normalized_copy() if normalized else d


def orthonormal(rng, n) -> np.ndarray:
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return q


def path_graph(n) -> GraphSpec:
    return GraphSpec.from_edges(n, [(i, i + 1) for i in range(n - 1)])


def classical_omp(x, psi, phi, n_pairs):
    """Textbook OMP on the vectorized problem with an explicit Kronecker dictionary.

    Returns the selected ``(i, j)`` pairs and their least-squares coefficients.
    Scoring uses normalized columns, the fit uses raw ones.
    """
    n_left, n_right = psi.shape[1], phi.shape[1]
    # column i * n_right + j is vec(psi_i phi_j^T) in row-major order
    big = np.einsum("ni,mj->nmij", psi, phi).reshape(x.size, n_left * n_right)
    big_hat = big / np.linalg.norm(big, axis=0)
    y = x.reshape(-1)
    chosen: list[int] = []
    coef = np.zeros(0)
    r = y
    for _ in range(n_pairs):
        score = np.abs(big_hat.T @ r)
        score[chosen] = -1.0
        chosen.append(int(np.argmax(score)))
        coef, *_ = np.linalg.lstsq(big[:, chosen], y, rcond=None)
        r = y - big[:, chosen] @ coef
    return [divmod(c, n_right) for c in chosen], coef


# criterion id -> list of (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[str, list[tuple[bool, str]]] = {}


def record_criterion(cid: str, passed: bool, detail: str) -> None:
    ACCEPTANCE.setdefault(cid, []).append((bool(passed), detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE, key=lambda c: int(c[1:])):
        parts = ACCEPTANCE[cid]
        verdict = "PASS" if all(p for p, _ in parts) else "FAIL"
        terminalreporter.write_line(f"{cid} {verdict}: " + "; ".join(d for _, d in parts))
