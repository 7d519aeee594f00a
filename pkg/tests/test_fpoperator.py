import json

import numpy as np
import pytest

from susyflow import (
    assemble_H,
    assemble_j,
    build_codiff,
    build_interior,
    build_mesh,
    builtin_flow,
    evolve,
    expm_krylov,
    init_poincare_dual,
    integrate_top,
)
from susyflow.errors import NegativeTime
from susyflow.exterior import FormField
from susyflow.mesh import modified_wavenumber, wavenumbers
from susyflow.vfparse import flow_from_strings


def drift_symbol(order, n, v, T):
    """Oracle: eigenvalues of the assembled drift Hamiltonian on T^1.

    H_0 = (T/2) D^T D + v D is a circulant; with D's symbol i*kt the
    composed symbol is (T/2) kt^2 + i v kt. Verified independently against
    the FFT of the first column in test_drift_symbol_matches_fft.
    """
    h = 2 * np.pi / n
    kt = modified_wavenumber(order, wavenumbers(n), h)
    return 0.5 * T * kt**2 + 1j * v * kt


def match_multisets(a, b):
    """Greedy nearest matching; returns the worst pair distance."""
    pool = list(b)
    worst = 0.0
    for z in a:
        dists = [abs(z - s) for s in pool]
        i = int(np.argmin(dists))
        worst = max(worst, dists[i])
        pool.pop(i)
    return worst


# ---------------------------------------------------------------------------
# current operator
# ---------------------------------------------------------------------------

def test_j_deterministic_limit():
    mesh = build_mesh(1, [16])
    flow = flow_from_strings(["sin(x)"], T=0.0)
    j = assemble_j(mesh, flow)
    iota = build_interior(mesh, flow)
    assert (j.matrix - iota.matrix).nnz == 0


def test_j_pure_diffusion_limit():
    mesh = build_mesh(1, [16])
    flow = flow_from_strings(["0"], T=2.0)
    j = assemble_j(mesh, flow)
    codiff = build_codiff(mesh)
    assert np.abs((j.matrix - codiff.matrix).toarray()).max() < 1e-15


def test_j_ghost_degree_minus_one():
    mesh = build_mesh(2, [8, 8])
    flow = builtin_flow("shear2d", {"T": 0.5})
    j = assemble_j(mesh, flow)
    assert j.degree_shift == -1
    assert j.grading_violation() == 0.0


def test_vielbein_scales_codiff_term():
    mesh = build_mesh(2, [8, 8])
    base = flow_from_strings(["0", "0"], T=2.0)
    scaled = flow_from_strings(["0", "0"], T=2.0, vielbein=[2.0, 1.0])
    j0 = assemble_j(mesh, base)
    j1 = assemble_j(mesh, scaled)
    # axis-0 part is multiplied by e_0^2 = 4, axis-1 part unchanged
    d0 = j0.block(0, 1).toarray()  # [Dx^T | Dy^T] on the two degree-1 masks
    d1 = j1.block(0, 1).toarray()
    ng = mesh.n_grid
    assert np.allclose(d1[:, :ng], 4.0 * d0[:, :ng])
    assert np.allclose(d1[:, ng:], d0[:, ng:])


# ---------------------------------------------------------------------------
# Hamiltonian assembly
# ---------------------------------------------------------------------------

def test_pure_diffusion_hamiltonian():
    mesh = build_mesh(1, [33])  # odd grid: kernel is exactly the constants
    flow = builtin_flow("diffusion", {"D": 1, "T": 1.0})
    ham = assemble_H(mesh, flow)
    H0 = ham.blocks[0].toarray()
    assert np.abs(H0 - H0.T).max() < 1e-13
    w = np.linalg.eigvalsh(0.5 * (H0 + H0.T))
    assert w.min() > -1e-12
    assert np.sum(np.abs(w) < 1e-10) == 1


@pytest.mark.parametrize("order", [2, 4])
def test_drift_symbol_spectrum(order):
    # frozen oracle values: the composed circulant symbol
    n, v, T = 64, 1.0, 0.5
    mesh = build_mesh(1, [n], order)
    flow = builtin_flow("drift1d", {"v": v, "T": T})
    ham = assemble_H(mesh, flow)
    w = np.linalg.eigvals(ham.blocks[0].toarray())
    sym = drift_symbol(order, n, v, T)
    assert match_multisets(w, sym) < 1e-10


@pytest.mark.parametrize("order", [2, 4])
def test_drift_symbol_matches_fft(order):
    # independent circulant diagonalization: FFT of the first column of H_0
    n, v, T = 64, 1.0, 0.5
    mesh = build_mesh(1, [n], order)
    flow = builtin_flow("drift1d", {"v": v, "T": T})
    col = assemble_H(mesh, flow).blocks[0].toarray()[:, 0]
    fft_eigs = np.fft.fft(col)
    assert match_multisets(fft_eigs, drift_symbol(order, n, v, T)) < 1e-10


def test_H_is_exactly_the_product_sum():
    mesh = build_mesh(2, [10, 10])
    flow = builtin_flow("shear2d", {"T": 0.5})
    ham = assemble_H(mesh, flow)
    # independent second assembly from per-degree blocks of d and j
    scale = np.abs(ham.operator.matrix).max()
    for k in range(3):
        alt = None
        if k > 0:
            alt = ham.d.block(k, k - 1) @ ham.j.block(k - 1, k)
        if k < 2:
            term = ham.j.block(k, k + 1) @ ham.d.block(k + 1, k)
            alt = term if alt is None else alt + term
        diff = np.abs((ham.blocks[k] - alt).toarray()).max()
        assert diff <= 1e-13 * scale


def test_H_real_and_conjugation_closed():
    from susyflow.spectral import conjugation_defect

    mesh = build_mesh(2, [9, 9])
    flow = builtin_flow("shear2d", {"T": 0.5})
    ham = assemble_H(mesh, flow)
    assert np.isrealobj(ham.operator.matrix.data)
    w = np.linalg.eigvals(ham.blocks[1].toarray())
    assert conjugation_defect(w) < 1e-10


def test_d_commutes_with_H():
    mesh = build_mesh(2, [10, 10])
    flow = builtin_flow("shear2d", {"T": 0.5})
    ham = assemble_H(mesh, flow)
    comm = ham.d @ ham.operator + (-1.0) * (ham.operator @ ham.d)
    rel = comm.norm_lower_bound() / (
        ham.d.norm_lower_bound() * ham.operator.norm_lower_bound()
    )
    assert rel < 1e-12


def test_ghost_degree_preserved():
    mesh = build_mesh(2, [8, 8])
    flow = builtin_flow("shear2d", {"T": 0.5})
    ham = assemble_H(mesh, flow)
    assert ham.operator.grading_violation() == 0.0


def test_stats_json(tmp_path):
    mesh = build_mesh(2, [8, 8])
    flow = builtin_flow("shear2d", {"T": 0.5})
    ham = assemble_H(mesh, flow)
    path = tmp_path / "stats.json"
    ham.write_stats_json(path, extra={"note": "unit"})
    payload = json.loads(path.read_text())
    assert payload["stencil_order"] == 4
    assert [s["degree"] for s in payload["sectors"]] == [0, 1, 2]
    assert payload["sectors"][1]["dimension"] == 2 * mesh.n_grid
    assert payload["assembly_seconds"] > 0


# ---------------------------------------------------------------------------
# evolution
# ---------------------------------------------------------------------------

def test_evolve_time_zero_is_identity():
    mesh = build_mesh(1, [32])
    flow = builtin_flow("diffusion", {"D": 1, "T": 1.0})
    ham = assemble_H(mesh, flow)
    psi = init_poincare_dual(mesh, axes=(), position=[1.0], width=4 * mesh.h[0])
    out = evolve(ham, psi, 0.0)
    assert np.array_equal(out.data, psi.data)


def test_evolve_rejects_negative_time():
    mesh = build_mesh(1, [32])
    flow = builtin_flow("diffusion", {"D": 1, "T": 1.0})
    ham = assemble_H(mesh, flow)
    psi = FormField.from_sector(mesh, 1, np.ones(32))
    with pytest.raises(NegativeTime):
        evolve(ham, psi, -0.1)


@pytest.mark.parametrize("t", [0.1, 1.0, 10.0])
def test_diffusion_conserves_mass(t):
    mesh = build_mesh(1, [64])
    flow = builtin_flow("diffusion", {"D": 1, "T": 1.0})
    ham = assemble_H(mesh, flow)
    psi = init_poincare_dual(mesh, axes=(), position=[np.pi], width=4 * mesh.h[0])
    mass0 = integrate_top(psi)
    out = evolve(ham, psi, t)
    assert abs(integrate_top(out) - mass0) <= 1e-10


def test_fourier_mode_decays_by_symbol():
    # single mode under drift: amplitude factor exp(-t * symbol(k))
    n, v, T, k, t = 64, 1.0, 0.5, 3, 0.7
    mesh = build_mesh(1, [n], 4)
    flow = builtin_flow("drift1d", {"v": v, "T": T})
    ham = assemble_H(mesh, flow)
    x = mesh.axis_coords(0)
    psi = FormField.from_sector(mesh, 0, np.exp(1j * k * x))
    out = evolve(ham, psi, t)
    kt = modified_wavenumber(4, k, mesh.h[0])
    factor = np.exp(-t * (0.5 * T * kt**2 + 1j * v * kt))
    expected = factor * psi.data[0]
    assert np.abs(out.data[0] - expected).max() <= 1e-8 * abs(factor)


def test_expm_krylov_matches_dense():
    rng = np.random.default_rng(5)
    n = 40
    A = rng.standard_normal((n, n)) * 0.5
    v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    from scipy.linalg import expm
    exact = expm(-1.3 * A) @ v
    approx = expm_krylov(lambda x: A @ x, v, -1.3, m=20, tol=1e-12)
    assert np.linalg.norm(approx - exact) < 1e-9 * np.linalg.norm(exact)
