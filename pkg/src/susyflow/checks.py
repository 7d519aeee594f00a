"""Self-check suite behind `susyflow check`: every module's structural
invariants evaluated on small systems, fast enough to run routinely.

Each check rebuilds its operators from scratch so that a corrupted sign
convention anywhere in the assembly chain is caught here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import exterior, fpoperator, gtomap, spectral, topoanalysis, dynamics
from .mesh import build_mesh, derivative_matrix, modified_wavenumber, wavenumbers
from .vfparse import builtin_flow, flow_from_strings, parse


@dataclass
class CheckResult:
    name: str
    value: float
    threshold: float
    passed: bool


def _rel_opnorm(num_op, den_scale, n_probe=20, seed=0):
    return num_op.norm_lower_bound(n_probe=n_probe, seed=seed) / max(den_scale, 1e-300)


def _shear_mesh(order=4):
    return build_mesh(2, [9, 9], stencil_order=order)


def run_checks(level="fast", collect=None):
    """Run the invariant suite; returns a list of CheckResult."""
    results = [] if collect is None else collect

    def record(name, value, threshold):
        results.append(CheckResult(name, float(value), float(threshold), bool(value <= threshold)))

    # --- mesh ---------------------------------------------------------
    for order in (2, 4):
        m1 = build_mesh(1, [16], stencil_order=order)
        D = derivative_matrix(m1, 0)
        record(f"mesh/antisymmetry_order{order}", abs((D + D.T)).max(), 1e-13)
        record(f"mesh/row_sums_order{order}", np.abs(D @ np.ones(16)).max(), 1e-12)
        k = wavenumbers(16)
        x = m1.axis_coords(0)
        f = np.exp(1j * 3 * x)
        kt = modified_wavenumber(order, 3, m1.h[0])
        record(
            f"mesh/modified_wavenumber_order{order}",
            np.abs(D @ f - 1j * kt * f).max() / max(abs(kt), 1.0),
            1e-12,
        )
    m2 = build_mesh(2, [9, 11])
    Dx, Dy = derivative_matrix(m2, 0), derivative_matrix(m2, 1)
    record("mesh/axes_commute", abs((Dx @ Dy - Dy @ Dx)).max(), 1e-12)

    # --- exterior algebra ---------------------------------------------
    mesh = _shear_mesh()
    flow = flow_from_strings(["sin(y)", "cos(x)"], T=0.5)
    d = exterior.build_d(mesh)
    codiff = exterior.build_codiff(mesh)
    iota = exterior.build_interior(mesh, flow)
    dscale = d.norm_lower_bound() ** 2
    record("exterior/d_nilpotent", _rel_opnorm(d @ d, dscale), 1e-12)
    record("exterior/codiff_nilpotent", _rel_opnorm(codiff @ codiff, dscale), 1e-12)
    iscale = max(iota.norm_lower_bound() ** 2, 1e-300)
    record("exterior/interior_nilpotent", _rel_opnorm(iota @ iota, iscale), 1e-12)
    record("exterior/d_grading", d.grading_violation(), 0.0)
    record("exterior/interior_grading", iota.grading_violation(), 0.0)
    rng = np.random.default_rng(7)
    worst = 0.0
    nfull = d.shape[0]
    for _ in range(100):
        a = rng.standard_normal(nfull) + 1j * rng.standard_normal(nfull)
        b = rng.standard_normal(nfull) + 1j * rng.standard_normal(nfull)
        lhs = np.vdot(d.matrix @ a, b)
        rhs = np.vdot(a, codiff.matrix @ b)
        worst = max(worst, abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300))
    record("exterior/adjointness", worst, 1e-12)

    # --- Fokker-Planck operator ---------------------------------------
    ham = fpoperator.assemble_H(mesh, flow)
    # second assembly path: per-degree block products, compared elementwise
    diff = 0.0
    hscale = max(abs(ham.operator.matrix).max(), 1e-300)
    for k in range(mesh.dim + 1):
        blk = ham.blocks[k]
        alt = None
        if k > 0:
            alt = ham.d.block(k, k - 1) @ ham.j.block(k - 1, k)
        if k < mesh.dim:
            term = ham.j.block(k, k + 1) @ ham.d.block(k + 1, k)
            alt = term if alt is None else alt + term
        diff = max(diff, abs((blk - alt)).max() / hscale)
    record("fpoperator/H_equals_dj_plus_jd", diff, 1e-13)
    dH = ham.d @ ham.operator + (-1.0) * (ham.operator @ ham.d)
    record("fpoperator/d_commutes_H",
           _rel_opnorm(dH, d.norm_lower_bound() * ham.operator.norm_lower_bound()), 1e-12)
    m1 = build_mesh(1, [32])
    flow1 = builtin_flow("diffusion", {"D": 1, "T": 1.0})
    ham1 = fpoperator.assemble_H(m1, flow1)
    bump = exterior.init_poincare_dual(m1, axes=(), position=[np.pi], width=4 * m1.h[0])
    evo = fpoperator.evolve(ham1, bump, 0.5)
    record("fpoperator/top_mass_conserved",
           abs(exterior.integrate_top(evo) - exterior.integrate_top(bump)), 1e-10)

    # --- transfer operator --------------------------------------------
    cat = gtomap.builtin_map("cat", {"T": 0.2})
    gto = gtomap.build_gto(cat, K=4)
    worst = 0.0
    for p in range(2):
        lhs = gtomap.fourier_d_block(2, 4, p) @ gto.blocks[p]
        rhs = gto.blocks[p + 1] @ gtomap.fourier_d_block(2, 4, p)
        keep_src = gtomap.retained_mode_mask(gto, p)
        delta = (lhs - rhs).tocsc()[:, np.nonzero(keep_src)[0]]
        scale = max(np.abs(gto.blocks[p].data).max(), 1.0) * 4  # |ik| <= K
        worst = max(worst, (np.abs(delta.data).max() if delta.nnz else 0.0) / scale)
    record("gtomap/d_commutes", worst, 1e-12)
    record("gtomap/supertrace_cat", abs(gtomap.gto_supertrace(gto) - (-1.0)), 1e-10)
    ident = gtomap.builtin_map("identity", {"T": 0.0, "D": 2})
    record("gtomap/supertrace_identity",
           abs(gtomap.gto_supertrace(gtomap.build_gto(ident, K=2))), 1e-12)

    # --- spectra --------------------------------------------------------
    m32 = build_mesh(1, [32], stencil_order=2)
    drift = builtin_flow("drift1d", {"v": 1.0, "T": 0.5})
    hd = fpoperator.assemble_H(m32, drift)
    w, *_ = spectral.dense_eig(hd.blocks[0])
    kt = modified_wavenumber(2, wavenumbers(32), m32.h[0])
    symbol = 0.25 * kt**2 + 1j * kt
    worst = 0.0
    pool = list(symbol)
    for lam in w:
        dists = [abs(lam - s) for s in pool]
        i = int(np.argmin(dists))
        worst = max(worst, dists[i])
        pool.pop(i)
    record("spectral/drift_symbol", worst, 1e-10)
    record("spectral/conjugation_closure", spectral.conjugation_defect(w), 1e-10)

    # --- dynamics -------------------------------------------------------
    counts = [dynamics.fixed_point_count(cat, n) for n in (1, 2, 3)]
    record("dynamics/cat_fixed_points", abs(np.array(counts) - np.array([1, 5, 16])).max(), 0.0)
    lyap = dynamics.map_lyapunov(cat, steps=400)
    record("dynamics/cat_lyapunov_sum", abs(lyap.exponents.sum()), 1e-10)

    # --- topology (fast Hodge check on an odd grid) ---------------------
    modd = build_mesh(2, [9, 9])
    fdiff = builtin_flow("diffusion", {"D": 2, "T": 1.0})
    hodge = fpoperator.assemble_H(modd, fdiff)
    rep = spectral.spectra_of_hamiltonian(hodge, "check-hodge")
    zero_counts = [int(np.sum(np.abs(rep.eigenvalues(k)) <= 1e-8)) for k in range(3)]
    record("topoanalysis/betti_T2", abs(np.array(zero_counts) - np.array([1, 2, 1])).max(), 0.0)

    if level == "full":
        # Witten index sweep on the even reference grid
        m12 = build_mesh(2, [12, 12])
        h12 = fpoperator.assemble_H(m12, fdiff)
        rep12 = spectral.spectra_of_hamiltonian(h12, "check-witten")
        wt = topoanalysis.witten_index(rep12, [0.1, 1.0, 10.0])
        record("topoanalysis/witten_zero", max(abs(v) for v in wt), 1e-8)
        record("topoanalysis/witten_t_invariance",
               max(abs(v) for v in wt) - min(abs(v) for v in wt), 1e-8)
        # BF-pairing completeness on the shear flow
        m13 = build_mesh(2, [13, 13])
        shear = builtin_flow("shear2d", {"T": 0.5})
        hs = fpoperator.assemble_H(m13, shear)
        reps = spectral.spectra_of_hamiltonian(hs, "check-bf")
        spectral.pair_bf(reps, hs)
        record("spectral/bf_unpaired", reps.meta["unpaired_nonzero"], 0.0)
        record("spectral/biorthogonality",
               max(spectral.biorthogonality_defect(reps, k) for k in range(3)), 1e-8)
    return results


def format_table(results):
    lines = []
    width = max(len(r.name) for r in results) + 2
    lines.append(f"{'invariant'.ljust(width)}{'status':8}{'measured':>12}  threshold")
    for r in results:
        status = "ok" if r.passed else "FAIL"
        lines.append(f"{r.name.ljust(width)}{status:8}{r.value:>12.3e}  {r.threshold:.1e}")
    return "\n".join(lines)
