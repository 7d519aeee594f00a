import numpy as np
import pytest

from susyflow import (
    MapSpec,
    build_gto,
    builtin_map,
    deterministic_pullback,
    gto_spectrum,
    gto_supertrace,
)
from susyflow.errors import NotUnimodular, TruncationTooSmall, UnknownFlow
from susyflow.exterior import masks_of_degree
from susyflow.gtomap import _mode_table, fourier_d_block, retained_mode_mask

GOLDEN = (3 + np.sqrt(5)) / 2  # largest eigenvalue of the cat map matrix


# ---------------------------------------------------------------------------
# construction and validation
# ---------------------------------------------------------------------------

def test_rejects_non_unimodular():
    with pytest.raises(NotUnimodular):
        MapSpec(A=[[2, 0], [0, 1]], b=[0, 0])


def test_rejects_tiny_truncation():
    with pytest.raises(TruncationTooSmall):
        build_gto(builtin_map("cat", {"T": 0.1}), K=0)


def test_unknown_map():
    with pytest.raises(UnknownFlow):
        builtin_map("henon", {})


def test_identity_map_is_identity_operator():
    gto = build_gto(builtin_map("identity", {"T": 0.0, "D": 2}), K=3)
    for p, blk in gto.blocks.items():
        n = blk.shape[0]
        assert np.abs(blk.toarray() - np.eye(n)).max() < 1e-15
    assert gto.dropped_modes == 0


def test_cat_constant_mode_block_eigenvalues():
    # oracle: the action on constant forms is the induced action of A^{-1};
    # its degree-1 eigenvalues are the roots of x^2 - 3x + 1 = {lam, 1/lam}
    gto = build_gto(builtin_map("cat", {"T": 0.7}), K=3)
    M = _mode_table(2, 3)
    zero_idx = int(np.where((M == 0).all(axis=1))[0][0])
    for p, expected in [(0, {1.0}), (1, {GOLDEN, 1 / GOLDEN}), (2, {1.0})]:
        npk = len(masks_of_degree(2, p))
        rows = np.arange(zero_idx * npk, (zero_idx + 1) * npk)
        block = gto.blocks[p].toarray()[np.ix_(rows, rows)]
        eigs = np.sort(np.linalg.eigvals(block).real)
        assert np.allclose(eigs, np.sort(list(expected)), atol=1e-12)


# ---------------------------------------------------------------------------
# the Monte-Carlo averaged-pullback oracle
# ---------------------------------------------------------------------------

def sample_pullback_vs_gto(map_spec, K, n_samples, n_forms, seed):
    """Average deterministic pullbacks over Gaussian noise draws and compare
    against the averaged operator applied to random truncated forms.

    Returns the worst componentwise deviation in units of standard errors.
    """
    rng = np.random.default_rng(seed)
    gto = build_gto(map_spec, K)
    D = map_spec.dim
    T = map_spec.temperature
    worst = 0.0
    for _ in range(n_forms):
        psi = {p: (rng.standard_normal(gto.sector_dim(p))
                   + 1j * rng.standard_normal(gto.sector_dim(p)))
               for p in range(D + 1)}
        acc = {p: np.zeros(gto.sector_dim(p), dtype=complex) for p in range(D + 1)}
        acc2 = {p: np.zeros(gto.sector_dim(p)) for p in range(D + 1)}
        chunk = 10000
        done = 0
        while done < n_samples:
            m = min(chunk, n_samples - done)
            etas = rng.normal(scale=np.sqrt(T), size=(m, D)) if T > 0 else np.zeros((m, D))
            for eta in etas:
                det = deterministic_pullback(map_spec, np.asarray(map_spec.b) + eta, K)
                for p in range(D + 1):
                    y = det.blocks[p] @ psi[p]
                    acc[p] += y
                    acc2[p] += np.abs(y) ** 2
            done += m
        for p in range(D + 1):
            mean = acc[p] / n_samples
            var = np.maximum(acc2[p] / n_samples - np.abs(mean) ** 2, 0.0)
            se = np.sqrt(var / n_samples)
            target = gto.blocks[p] @ psi[p]
            dev = np.abs(mean - target)
            # zero-variance components must agree to roundoff
            strict = se < 1e-14
            assert np.all(dev[strict] < 1e-10)
            ratio = dev[~strict] / se[~strict]
            if ratio.size:
                worst = max(worst, float(ratio.max()))
    return worst


def test_gto_matches_monte_carlo_oracle_small():
    # module-scale version (the full 1e5-sample gate runs in acceptance)
    cat = builtin_map("cat", {"T": 0.4})
    worst = sample_pullback_vs_gto(cat, K=2, n_samples=4000, n_forms=3, seed=42)
    assert worst < 3.0


def test_deterministic_pullback_against_gridded_evaluation():
    # independent check of the deterministic pullback: evaluate the pulled
    # back trig polynomial on a grid and project back onto Fourier modes
    rng = np.random.default_rng(1)
    K, D = 2, 2
    cat = builtin_map("cat", {"T": 0.0})
    eta = np.array([0.3, -1.1])
    det = deterministic_pullback(cat, eta, K)
    modes = _mode_table(D, K)
    coeff = rng.standard_normal(len(modes)) + 1j * rng.standard_normal(len(modes))

    n_g = 16
    xs = 2 * np.pi * np.arange(n_g) / n_g
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    Ainv = cat.inverse_matrix()
    # x_in = A^{-1}(x_out - shift)
    xin = np.tensordot(Ainv, np.stack([X - eta[0], Y - eta[1]]), axes=(1, 0))
    vals = np.zeros_like(X, dtype=complex)
    for c, k in zip(coeff, modes):
        vals += c * np.exp(1j * (k[0] * xin[0] + k[1] * xin[1]))
    fhat = np.fft.fft2(vals) / n_g**2
    # operator prediction on the scalar sector
    pred = det.blocks[0] @ coeff
    for i, k in enumerate(modes):
        got = fhat[int(k[0]) % n_g, int(k[1]) % n_g]
        assert abs(pred[i] - got) < 1e-10


# ---------------------------------------------------------------------------
# supertrace
# ---------------------------------------------------------------------------

def test_supertrace_identity_map_is_euler_characteristic():
    gto = build_gto(builtin_map("identity", {"T": 0.0, "D": 2}), K=3)
    assert abs(gto_supertrace(gto)) < 1e-12


def test_supertrace_cat_is_minus_one():
    # oracle: sum_p (-1)^p tr Lambda^p(A^{-1}) = det(I - A^{-1}) = det(A - I)
    A = np.array([[2, 1], [1, 1]])
    oracle = round(np.linalg.det(A - np.eye(2)))
    assert oracle == -1
    for T in (0.05, 0.5):
        gto = build_gto(builtin_map("cat", {"T": T}), K=4)
        assert abs(gto_supertrace(gto) - oracle) < 1e-10


def test_supertrace_translation_is_zero():
    mp = builtin_map("translation", {"T": 0.0, "D": 2, "b": [1.0, np.sqrt(2)]})
    gto = build_gto(mp, K=3)
    assert abs(gto_supertrace(gto)) < 1e-12


# ---------------------------------------------------------------------------
# spectra
# ---------------------------------------------------------------------------

def test_cat_spectral_radius_is_golden():
    gto = build_gto(builtin_map("cat", {"T": 0.1}), K=8)
    rep = gto_spectrum(gto, "cat")
    assert rep.meta["spectral_radius"] == pytest.approx(GOLDEN, abs=1e-8)
    # radius attained in the one-form sector, on a real eigenvalue
    vals1 = rep.eigenvalues(1)
    top = vals1[np.argmax(np.abs(vals1))]
    assert abs(top.imag) < 1e-10
    assert top.real == pytest.approx(GOLDEN, abs=1e-8)


def test_diffusion_only_map_spectrum():
    # A = I, b = 0, T = 1: diagonal operator with entries exp(-|k|^2/2)
    gto = build_gto(builtin_map("identity", {"T": 1.0, "D": 2}), K=3)
    rep = gto_spectrum(gto, "diffusion-map")
    vals = rep.eigenvalues(0)
    modes = _mode_table(2, 3)
    expected = np.exp(-0.5 * (modes**2).sum(axis=1))
    vals_sorted = np.sort(vals.real)
    assert np.allclose(np.sort(expected), vals_sorted, atol=1e-12)
    assert np.abs(vals.imag).max() < 1e-12
    assert rep.meta["spectral_radius"] == pytest.approx(1.0, abs=1e-12)


def test_largest_magnitude_eigenvalue_real_for_builtins():
    # a real eigenvalue attains the spectral radius (ties allowed)
    for name, params in [
        ("identity", {"T": 0.3, "D": 2}),
        ("translation", {"T": 0.2, "D": 2, "b": [1.3, 0.4]}),
        ("cat", {"T": 0.1}),
        ("fibonacci", {"T": 0.1}),
        ("inversion", {"T": 0.1}),
    ]:
        gto = build_gto(builtin_map(name, params), K=4)
        rep = gto_spectrum(gto, name)
        rho = rep.meta["spectral_radius"]
        vals = rep.all_eigenvalues()
        at_radius = vals[np.abs(np.abs(vals) - rho) <= 1e-10 * max(rho, 1.0)]
        assert np.any(np.abs(at_radius.imag) <= 1e-10), name


# ---------------------------------------------------------------------------
# invariants
# ---------------------------------------------------------------------------

def test_d_commutes_with_gto():
    gto = build_gto(builtin_map("cat", {"T": 0.2}), K=5)
    for p in range(2):
        lhs = fourier_d_block(2, 5, p) @ gto.blocks[p]
        rhs = gto.blocks[p + 1] @ fourier_d_block(2, 5, p)
        keep = np.nonzero(retained_mode_mask(gto, p))[0]
        delta = (lhs - rhs).tocsc()[:, keep]
        scale = 5.0 * max(np.abs(gto.blocks[p].data).max(), 1.0)
        assert (np.abs(delta.data).max() if delta.nnz else 0.0) < 1e-12 * scale


def test_spectrum_closed_under_conjugation():
    from susyflow.spectral import conjugation_defect

    gto = build_gto(builtin_map("cat", {"T": 0.3, "b": [0.7, 0.2]}), K=4)
    rep = gto_spectrum(gto, "cat-shifted")
    for p in range(3):
        assert conjugation_defect(rep.eigenvalues(p)) < 1e-10


def test_no_dropped_modes_in_safe_band():
    # modes bounded by K over the norm of the mode-action matrix A^{-T}
    # cannot leave the truncation
    mp = builtin_map("cat", {"T": 0.5})
    K = 8
    gto = build_gto(mp, K)
    action_norm = np.abs(np.asarray(mp.inverse_matrix()).T).sum(axis=1).max()  # inf-norm
    modes = gto.modes
    safe = np.abs(modes).max(axis=1) <= K / action_norm
    assert safe.sum() > 0
    for i in np.nonzero(safe)[0]:
        assert gto.mode_map[int(i)] is not None


def test_modemap_csv(tmp_path):
    gto = build_gto(builtin_map("cat", {"T": 0.1}), K=2)
    path = tmp_path / "modes.csv"
    gto.to_modemap_csv(path, header_lines=["unit"])
    lines = [l for l in path.read_text().splitlines() if not l.startswith("#")]
    assert lines[0].startswith("k0,k1,kprime0,kprime1")
    assert len(lines) == 1 + len(gto.modes)
