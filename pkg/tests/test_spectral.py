import numpy as np
import pytest

from susyflow import (
    assemble_H,
    build_gto,
    build_mesh,
    builtin_flow,
    builtin_map,
    dense_eig,
    krylov_extremal,
    pair_bf,
    spectra_of_hamiltonian,
)
from susyflow.errors import BranchAmbiguity, ValidationError
from susyflow.mesh import modified_wavenumber, wavenumbers
from susyflow.spectral import (
    SpectrumReport,
    biorthogonality_defect,
    conjugation_defect,
    power_norm_estimate,
)

GOLDEN = (3 + np.sqrt(5)) / 2


def drift_symbol(order, n, v, T):
    kt = modified_wavenumber(order, wavenumbers(n), 2 * np.pi / n)
    return 0.5 * T * kt**2 + 1j * v * kt


# ---------------------------------------------------------------------------
# dense solver
# ---------------------------------------------------------------------------

def test_jordan_block_flagged_defective():
    w, vr, vl, res, dfl = dense_eig(np.array([[0.0, 1.0], [0.0, 0.0]]))
    assert np.allclose(w, 0.0)
    assert dfl.all()  # rank of the eigenvector set is 1, not 2


def test_dense_eig_circulant_drift():
    mesh = build_mesh(1, [32], 2)
    ham = assemble_H(mesh, builtin_flow("drift1d", {"v": 1.0, "T": 0.5}))
    w, vr, vl, res, dfl = dense_eig(ham.blocks[0])
    sym = drift_symbol(2, 32, 1.0, 0.5)
    pool = list(sym)
    for lam in w:
        i = int(np.argmin([abs(lam - s) for s in pool]))
        assert abs(lam - pool.pop(i)) < 1e-10
    assert res.max() < 1e-8


def test_dense_eig_symmetric_laplacian():
    mesh = build_mesh(1, [17])
    ham = assemble_H(mesh, builtin_flow("diffusion", {"D": 1, "T": 1.0}))
    w, *_ = dense_eig(ham.blocks[0])
    assert np.abs(w.imag).max() < 1e-12
    assert w.real.min() > -1e-12


def test_dense_eig_cap():
    with pytest.raises(ValidationError):
        dense_eig(np.eye(10), cap=5)


def test_residuals_verified_post_hoc():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((50, 50))
    w, vr, vl, res, dfl = dense_eig(A)
    norm = np.abs(w).max()
    for i in range(50):
        fresh = np.linalg.norm(A @ vr[:, i] - w[i] * vr[:, i]) / (norm * np.linalg.norm(vr[:, i]))
        assert fresh < 1e-8


def test_biorthogonality_with_degeneracies():
    # pure diffusion has highly degenerate sectors; the cluster-corrected
    # left set must still be bi-orthogonal to the right set
    mesh = build_mesh(2, [9, 9])
    ham = assemble_H(mesh, builtin_flow("diffusion", {"D": 2, "T": 1.0}))
    rep = spectra_of_hamiltonian(ham, "diffusion")
    for k in range(3):
        assert biorthogonality_defect(rep, k) < 1e-8


# ---------------------------------------------------------------------------
# Krylov extremal eigenvalues
# ---------------------------------------------------------------------------

def test_krylov_min_real_pure_diffusion():
    # odd grid: the kernel is exactly the constants (even grids carry an
    # extra sawtooth null mode of the central stencil)
    mesh = build_mesh(1, [63])
    ham = assemble_H(mesh, builtin_flow("diffusion", {"D": 1, "T": 1.0}))
    w, vr, res, info = krylov_extremal(ham.blocks[0], count=3, mode="min-real", seed=1)
    assert w[0].real == pytest.approx(0.0, abs=1e-8)
    v = vr[:, 0]
    v = v / v[np.argmax(np.abs(v))]
    assert np.abs(v - 1.0).max() < 1e-6  # constant vector
    assert res.max() < 1e-6


def test_krylov_max_magnitude_cat_gto():
    gto = build_gto(builtin_map("cat", {"T": 0.1}), K=6)
    w, vr, res, info = krylov_extremal(gto.blocks[1], count=4, mode="max-magnitude", seed=3)
    assert abs(w[0]) == pytest.approx(GOLDEN, abs=1e-8)
    assert res.max() < 1e-6


def test_krylov_min_real_drift_matches_symbol():
    n = 64
    mesh = build_mesh(1, [n], 2)
    ham = assemble_H(mesh, builtin_flow("drift1d", {"v": 1.0, "T": 0.5}))
    w, vr, res, info = krylov_extremal(ham.blocks[0], count=5, mode="min-real", seed=5)
    sym = drift_symbol(2, n, 1.0, 0.5)
    sym_sorted = sym[np.argsort(sym.real)]
    # the three smallest-real symbol values (0 twice at k=0 and Nyquist, then a pair)
    for lam in w[:3]:
        assert np.abs(sym_sorted - lam).min() < 1e-7


def test_branch_ambiguity_guard():
    mesh = build_mesh(1, [32])
    ham = assemble_H(mesh, builtin_flow("diffusion", {"D": 1, "T": 1.0}))
    norm = power_norm_estimate(ham.blocks[0])
    with pytest.raises(BranchAmbiguity):
        krylov_extremal(ham.blocks[0], count=2, mode="min-real", tau=10.0 / norm)


# ---------------------------------------------------------------------------
# BF pairing
# ---------------------------------------------------------------------------

def test_hodge_pairing_pure_diffusion():
    # flat-torus Hodge theory: nonzero eigenvalues shared between adjacent
    # sectors with matching multiplicity, zero modes d-symmetric
    mesh = build_mesh(2, [9, 9])
    ham = assemble_H(mesh, builtin_flow("diffusion", {"D": 2, "T": 1.0}))
    rep = spectra_of_hamiltonian(ham, "diffusion")
    pair_bf(rep, ham)
    assert rep.meta["unpaired_nonzero"] == 0
    dsym = [sum(e.d_symmetric for e in rep.entries[k]) for k in range(3)]
    assert dsym == [1, 2, 1]
    tolz = rep.meta["tol_zero"]
    for k in range(3):
        for e in rep.entries[k]:
            if abs(e.eigenvalue) > tolz:
                assert e.partner is not None


def test_shear_pairing_16():
    mesh = build_mesh(2, [16, 16])
    ham = assemble_H(mesh, builtin_flow("shear2d", {"T": 0.5}))
    rep = spectra_of_hamiltonian(ham, "shear")
    pair_bf(rep, ham, tol_zero=1e-6 * rep.scale, tol_pair=1e-6 * rep.scale)
    assert rep.meta["unpaired_nonzero"] == 0
    # every appreciable sector-0 eigenvalue has its partner one sector up
    for e in rep.entries[0]:
        if abs(e.eigenvalue) > 1e-6 * rep.scale:
            assert e.partner is not None and e.partner[0] == 1


def test_partner_not_found_is_reported_not_fatal():
    mesh = build_mesh(2, [9, 9])
    ham = assemble_H(mesh, builtin_flow("diffusion", {"D": 2, "T": 1.0}))
    rep = spectra_of_hamiltonian(ham, "tampered")
    # tamper: give one sector-0 entry a bogus eigenvalue nowhere in sector 1
    victim = max(rep.entries[0], key=lambda e: abs(e.eigenvalue))
    victim.eigenvalue = complex(123.456)
    pair_bf(rep, ham)
    assert rep.meta["unpaired_nonzero"] >= 1
    assert victim.partner is None
    assert victim.partner_error is not None


def test_conjugation_closure_shear():
    mesh = build_mesh(2, [13, 13])
    ham = assemble_H(mesh, builtin_flow("shear2d", {"T": 0.5}))
    rep = spectra_of_hamiltonian(ham, "shear")
    for k in range(3):
        assert conjugation_defect(rep.eigenvalues(k)) < 1e-10


def test_spectrum_csv(tmp_path):
    mesh = build_mesh(1, [16])
    ham = assemble_H(mesh, builtin_flow("pendulum1d", {"T": 0.5}))
    rep = spectra_of_hamiltonian(ham, "pendulum")
    pair_bf(rep, ham)
    path = tmp_path / "spec.csv"
    rep.to_csv(path, header_lines=["test"])
    lines = path.read_text().splitlines()
    assert lines[0] == "# test"
    assert lines[1].startswith("system_id,sector,re,im,residual")
    assert len(lines) == 2 + 2 * 16
