"""Eigensolvers and spectral bookkeeping: dense full spectra, Krylov extremal
eigenvalues (max-magnitude directly, min-real through an exp(-tau H)
surrogate), bi-orthogonal left/right pairing, and boson-fermion partner
detection across ghost sectors.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import BranchAmbiguity, NoConvergence, ValidationError
from .fpoperator import expm_krylov

DENSE_CAP_DEFAULT = 3000
TOL_EIG_DEFAULT = 1e-8


@dataclass
class EigEntry:
    sector: int
    eigenvalue: complex
    right: np.ndarray
    left: np.ndarray = None
    residual: float = 0.0
    d_symmetric: bool = False
    defective: bool = False
    partner: tuple = None  # (sector, index within that sector's entry list)
    partner_error: str = None


@dataclass
class SpectrumReport:
    system_id: str
    kind: str = "flow"  # "flow" (H eigenvalues) or "map" (GTO eigenvalues)
    entries: dict = field(default_factory=dict)  # sector -> list[EigEntry]
    complete: dict = field(default_factory=dict)  # sector -> bool (full spectrum?)
    meta: dict = field(default_factory=dict)

    def sectors(self):
        return sorted(self.entries)

    def eigenvalues(self, sector):
        return np.array([e.eigenvalue for e in self.entries[sector]])

    def all_eigenvalues(self):
        return np.concatenate([self.eigenvalues(k) for k in self.sectors()])

    @property
    def scale(self):
        vals = self.all_eigenvalues()
        return float(np.abs(vals).max()) if len(vals) else 1.0

    def add_sector(self, sector, eigvals, right, left=None, residuals=None, defective=None, complete=True):
        lst = []
        for i, lam in enumerate(eigvals):
            lst.append(
                EigEntry(
                    sector=sector,
                    eigenvalue=complex(lam),
                    right=right[:, i],
                    left=left[:, i] if left is not None else None,
                    residual=float(residuals[i]) if residuals is not None else 0.0,
                    defective=bool(defective[i]) if defective is not None else False,
                )
            )
        self.entries[sector] = lst
        self.complete[sector] = bool(complete)

    def to_csv(self, path, header_lines=()):
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            writer = csv.writer(fh)
            writer.writerow(
                ["system_id", "sector", "re", "im", "residual", "d_symmetric",
                 "partner_sector", "partner_index"]
            )
            for k in self.sectors():
                for e in self.entries[k]:
                    ps, pi = e.partner if e.partner is not None else ("", "")
                    writer.writerow(
                        [self.system_id, k, e.eigenvalue.real, e.eigenvalue.imag,
                         e.residual, int(e.d_symmetric), ps, pi]
                    )


# ---------------------------------------------------------------------------
# norms and residuals
# ---------------------------------------------------------------------------


def power_norm_estimate(op, n_iter=20, seed=0):
    """Dominant-eigenvalue magnitude from a few power iterations."""
    matvec = op.dot if sp.issparse(op) else op
    n = op.shape[0] if hasattr(op, "shape") else None
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    est = 1.0
    for _ in range(n_iter):
        w = matvec(v)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        est = nw
        v = w / nw
    return float(est)


def _residuals(matrix, eigvals, right, norm_est):
    res = np.empty(len(eigvals))
    for i, lam in enumerate(eigvals):
        v = right[:, i]
        res[i] = np.linalg.norm(matrix @ v - lam * v) / (max(norm_est, 1e-300) * np.linalg.norm(v))
    return res


# ---------------------------------------------------------------------------
# dense solver
# ---------------------------------------------------------------------------


def dense_eig(matrix, cap=DENSE_CAP_DEFAULT, tol_eig=TOL_EIG_DEFAULT, want_left=True):
    """Full spectrum with left and right eigenvectors and verified residuals.

    Bi-orthogonal normalization: within clusters of (numerically) equal
    eigenvalues the left set is transformed so <left_a, right_b> = delta_ab;
    a rank-deficient cluster marks its entries defective (Jordan structure).

    Returns (eigvals, right, left, residuals, defective_flags).
    """
    A = matrix.toarray() if sp.issparse(matrix) else np.asarray(matrix)
    n = A.shape[0]
    if n > cap:
        raise ValidationError(f"dense_eig dimension {n} exceeds cap {cap}; use krylov_extremal")
    try:
        if want_left:
            w, vl, vr = sla.eig(A, left=True, right=True)
        else:
            w, vr = sla.eig(A)
            vl = None
    except sla.LinAlgError as exc:  # pragma: no cover - LAPACK failure is exotic
        raise NoConvergence(f"dense eigensolver failed: {exc}")

    norm_est = float(np.abs(w).max()) if n else 1.0
    scale = max(norm_est, 1e-300)
    # cluster equal eigenvalues to test diagonalizability and fix bi-orthogonality;
    # single-linkage in the complex plane (conjugate branches interleave any
    # one-dimensional ordering, so a sorted walk is not enough)
    defective = np.zeros(n, dtype=bool)
    ctol = max(1e-12, 1e-8 * scale)
    groups = []
    for idx in np.argsort(w.real, kind="stable"):
        target = None
        for cl in reversed(groups):
            if w[idx].real - w[cl[-1]].real > ctol:
                break  # clusters ordered by real part; earlier ones are farther
            if np.any(np.abs(w[idx] - w[np.array(cl)]) <= ctol):
                target = cl
                break
        if target is None:
            groups.append([idx])
        else:
            target.append(idx)
    for grp in groups:
        if len(grp) == 1 and vl is None:
            continue
        cols = np.array(grp)
        Vr = vr[:, cols]
        if len(grp) > 1:
            svals = np.linalg.svd(Vr, compute_uv=False)
            rank = int((svals > 1e-8 * svals[0]).sum())
            if rank < len(grp):
                defective[cols] = True
                continue
        if vl is not None:
            Vl = vl[:, cols]
            G = Vl.conj().T @ Vr
            try:
                Ginv = np.linalg.inv(G)
            except np.linalg.LinAlgError:
                defective[cols] = True
                continue
            if np.linalg.cond(G) > 1e12:
                defective[cols] = True
                continue
            vl[:, cols] = Vl @ Ginv.conj().T  # now Vl^H Vr = I within the cluster
    res = _residuals(A, w, vr, scale)
    bad = res > tol_eig
    if np.any(bad):  # pragma: no cover - would indicate a broken LAPACK
        raise NoConvergence(f"{bad.sum()} eigenpairs exceed residual tolerance {tol_eig}")
    return w, vr, vl, res, defective


# ---------------------------------------------------------------------------
# Krylov extremal eigenvalues
# ---------------------------------------------------------------------------


def krylov_extremal(op, count, mode, tau=None, tol=1e-8, seed=0, maxiter=None):
    """Extremal eigenpairs of a matvec-capable operator.

    mode="max-magnitude": implicitly restarted Arnoldi on the operator.
    mode="min-real": Arnoldi on the surrogate w -> exp(-tau*op) w; recovered
    as E = -log(mu)/tau, branch-safe for tau <= pi/(4*norm_est), and residuals
    are re-verified against the original operator.

    Returns (eigvals, right, residuals, info).
    """
    n = op.shape[0]
    if count >= n - 1:
        raise ValidationError(f"count={count} too large for dimension {n}")
    matvec = (lambda x: op @ x) if sp.issparse(op) else op
    norm_est = power_norm_estimate(op, seed=seed)
    info = {"mode": mode, "norm_est": norm_est}

    if mode == "max-magnitude":
        lin = spla.LinearOperator((n, n), matvec=matvec, dtype=complex)
        try:
            w, vr = spla.eigs(lin, k=count, which="LM", tol=tol, maxiter=maxiter)
        except spla.ArpackNoConvergence as exc:
            raise NoConvergence(f"ARPACK failed to converge: {exc}")
        res = np.array(
            [np.linalg.norm(matvec(vr[:, i]) - w[i] * vr[:, i]) / (max(norm_est, 1e-300) * np.linalg.norm(vr[:, i]))
             for i in range(len(w))]
        )
        order = np.argsort(-np.abs(w))
        return w[order], vr[:, order], res[order], info

    if mode == "min-real":
        tau_max = np.pi / (4.0 * max(norm_est, 1e-300))
        if tau is None:
            tau = 1.0 / (4.0 * max(norm_est, 1e-300))
        if tau <= 0:
            raise ValidationError("tau must be positive for min-real mode")
        if tau > tau_max:
            raise BranchAmbiguity(
                f"tau={tau} exceeds branch-safe bound pi/(4*norm_est)={tau_max}"
            )
        info["tau"] = tau

        def surrogate(x):
            return expm_krylov(matvec, x, -tau, tol=min(1e-12, tol * 1e-2))

        lin = spla.LinearOperator((n, n), matvec=surrogate, dtype=complex)
        try:
            mu, vr = spla.eigs(lin, k=count, which="LM", tol=tol, maxiter=maxiter)
        except spla.ArpackNoConvergence as exc:
            raise NoConvergence(f"ARPACK failed on exponential surrogate: {exc}")
        w = -np.log(mu) / tau  # principal branch; safe by the tau bound
        res = np.empty(len(w))
        for i in range(len(w)):
            v = vr[:, i]
            res[i] = np.linalg.norm(matvec(v) - w[i] * v) / (max(norm_est, 1e-300) * np.linalg.norm(v))
        order = np.argsort(w.real)
        w, vr, res = w[order], vr[:, order], res[order]
        if np.any(res > max(tol * 100, 1e-6)):
            raise NoConvergence(
                f"surrogate eigenpairs fail re-verification against the operator: max residual {res.max():.2e}"
            )
        return w, vr, res, info

    raise ValidationError(f"unknown mode {mode!r}")


# ---------------------------------------------------------------------------
# full-system spectra and BF pairing
# ---------------------------------------------------------------------------


def spectra_of_hamiltonian(ham, system_id="system", cap=DENSE_CAP_DEFAULT, tol_eig=TOL_EIG_DEFAULT):
    """Dense per-sector spectra of an FPHamiltonian as a SpectrumReport."""
    report = SpectrumReport(system_id=system_id, kind="flow",
                            meta={"method": "dense", "tol_eig": tol_eig})
    for k in range(ham.mesh.dim + 1):
        w, vr, vl, res, dfl = dense_eig(ham.blocks[k], cap=cap, tol_eig=tol_eig)
        report.add_sector(k, w, vr, left=vl, residuals=res, defective=dfl, complete=True)
    return report


def pair_bf(report: SpectrumReport, ham, tol_zero=None, tol_pair=None):
    """Fill boson-fermion partner links and d-symmetric flags.

    For |E| > tol_zero: if d v is appreciable it must be an eigenvector of
    the sector above with the same eigenvalue (verified by residual and
    matched against that sector's list). Otherwise v = d(j v / E) exhibits v
    as d-exact and the partner lives one sector below. Entries with tiny
    |E|, tiny d v and no d-preimage (least squares) are d-symmetric.
    """
    scale = report.scale
    if tol_zero is None:
        tol_zero = 1e-6 * scale
    if tol_pair is None:
        tol_pair = 1e-6 * scale
    D = ham.mesh.dim
    d_blocks = {k: ham.d.block(k + 1, k) for k in range(D)}
    j_blocks = {k: ham.j.block(k - 1, k) for k in range(1, D + 1)}
    unpaired = 0
    for k in report.sectors():
        for idx, entry in enumerate(report.entries[k]):
            v = entry.right
            E = entry.eigenvalue
            vnorm = np.linalg.norm(v)
            dv = d_blocks[k] @ v if k < D else np.zeros(1)
            dv_norm = np.linalg.norm(dv)
            if abs(E) > tol_zero:
                if dv_norm > tol_zero * vnorm and k < D:
                    # partner above: d v is an eigenvector of H_{k+1}
                    resid = np.linalg.norm(ham.blocks[k + 1] @ dv - E * dv) / (scale * dv_norm)
                    match = _nearest_index(report, k + 1, E, tol_pair)
                    if resid <= max(tol_pair / scale, 1e-8) and match is not None:
                        entry.partner = (k + 1, match)
                    else:
                        unpaired += 1
                        entry.partner_error = (
                            f"no partner above: residual {resid:.2e}, match {match}"
                        )
                elif k > 0:
                    # partner below: v = d (j v / E)
                    vp = j_blocks[k] @ v / E
                    back = d_blocks[k - 1] @ vp
                    err = np.linalg.norm(back - v) / vnorm
                    match = _nearest_index(report, k - 1, E, tol_pair)
                    if err <= max(tol_pair / scale, 1e-8) and match is not None:
                        entry.partner = (k - 1, match)
                    else:
                        unpaired += 1
                        entry.partner_error = f"no partner below: d-preimage error {err:.2e}, match {match}"
                else:
                    unpaired += 1
                    entry.partner_error = "nonzero eigenvalue in sector 0 with d v = 0"
            else:
                if dv_norm <= tol_zero * max(vnorm, 1e-300):
                    entry.d_symmetric = (k == 0) or not _has_d_preimage(
                        d_blocks[k - 1], v, vnorm
                    )
    report.meta["unpaired_nonzero"] = unpaired
    report.meta["tol_zero"] = tol_zero
    report.meta["tol_pair"] = tol_pair
    report.meta["paired"] = True
    return report


def _nearest_index(report, sector, E, tol):
    if sector not in report.entries or not report.entries[sector]:
        return None
    vals = report.eigenvalues(sector)
    i = int(np.argmin(np.abs(vals - E)))
    return i if abs(vals[i] - E) <= tol else None


def _has_d_preimage(d_block, v, vnorm):
    """Least-squares solve d w = v; a residual above 0.1*||v|| means no preimage."""
    sol = spla.lsmr(d_block, v, atol=1e-10, btol=1e-10, maxiter=2000)
    resid = np.linalg.norm(d_block @ sol[0] - v)
    return resid <= 0.1 * vnorm


def biorthogonality_defect(report, sector):
    """max |<left_a, right_b> - delta_ab| over the sector's non-defective entries."""
    entries = [e for e in report.entries[sector] if e.left is not None and not e.defective]
    if not entries:
        return 0.0
    VL = np.column_stack([e.left for e in entries])
    VR = np.column_stack([e.right for e in entries])
    G = VL.conj().T @ VR
    return float(np.abs(G - np.eye(G.shape[0])).max())


def conjugation_defect(eigvals, tol_scale=1.0):
    """Hausdorff-style distance between a spectrum and its conjugate."""
    vals = np.asarray(eigvals)
    conj = vals.conj()
    worst = 0.0
    for z in vals:
        worst = max(worst, float(np.abs(conj - z).min()))
    return worst
