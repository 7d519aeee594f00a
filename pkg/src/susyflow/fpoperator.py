"""Current operator j, the Fokker-Planck Hamiltonian H = d j + j d, and the
Krylov propagator exp(-tH).

H is assembled from explicit sparse products of d, d-dagger and iota_F, never
by discretizing -(T/2) Laplacian + Lie derivative directly. The supersymmetric
structure ([d,H] = 0, boson-fermion pairing, exact d-exactness) is then a
matrix identity rather than a continuum-limit statement. Fill-in from the
products (stencil-squared support) is the accepted price; nonzero counts are
kept in the metadata.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import NegativeTime, NonConvergence
from .exterior import FormField, SectorOperator, build_codiff, build_d, build_interior, masks_of_degree
from .mesh import TorusMesh


def assemble_j(mesh: TorusMesh, flow) -> SectorOperator:
    """Current operator j = (T/2) d-dagger + iota_F, ghost degree -1.

    Constant diagonal vielbeins enter as per-axis factors e_a^2 on the
    d-dagger term (the flat metric g^aa = e_a^2).
    """
    weights = [e * e for e in flow.vielbein]
    codiff = build_codiff(mesh, axis_weights=weights)
    interior = build_interior(mesh, flow)
    j = (0.5 * flow.temperature) * codiff + interior
    j.tag = "j"
    return j


@dataclass
class FPHamiltonian:
    """Per-sector Fokker-Planck Hamiltonian with its ingredients kept around."""

    mesh: TorusMesh
    flow: object
    d: SectorOperator
    j: SectorOperator
    operator: SectorOperator  # full-algebra H = d@j + j@d
    blocks: dict = field(default_factory=dict)  # degree k -> csr block H_k
    meta: dict = field(default_factory=dict)

    @property
    def temperature(self):
        return self.flow.temperature

    def sector_dim(self, k):
        return len(masks_of_degree(self.mesh.dim, k)) * self.mesh.n_grid

    def stats(self):
        return {
            "stencil_order": self.mesh.stencil_order,
            "temperature": self.temperature,
            "assembly_seconds": self.meta.get("assembly_seconds"),
            "sectors": [
                {
                    "degree": k,
                    "dimension": self.sector_dim(k),
                    "nonzeros": int(self.blocks[k].nnz),
                }
                for k in sorted(self.blocks)
            ],
        }

    def write_stats_json(self, path, extra=None):
        payload = dict(self.stats())
        if extra:
            payload.update(extra)
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2)


def assemble_H(mesh: TorusMesh, flow) -> FPHamiltonian:
    """Assemble H = [d, j] (an anticommutator: both terms lower+raise degree)."""
    t0 = time.perf_counter()
    d = build_d(mesh)
    j = assemble_j(mesh, flow)
    H = d @ j + j @ d
    H.tag = "H"
    H.degree_shift = 0
    blocks = {k: H.block(k, k) for k in range(mesh.dim + 1)}
    elapsed = time.perf_counter() - t0
    ham = FPHamiltonian(
        mesh=mesh,
        flow=flow,
        d=d,
        j=j,
        operator=H,
        blocks=blocks,
        meta={"assembly_seconds": elapsed},
    )
    return ham


# ---------------------------------------------------------------------------
# Krylov exponential action
# ---------------------------------------------------------------------------


def expm_krylov(matvec, v, t, m=30, tol=1e-10, max_halvings=40):
    """Approximate exp(t*A) v by restarted Arnoldi with adaptive substeps.

    The local error estimate (Saad's h_{m+1,m} |e_m^T exp(dt H_m) e_1| bound)
    must drop below tol*||step input|| before a substep is accepted;
    otherwise the substep is halved, up to max_halvings, after which
    NonConvergence is raised.
    """
    v = np.asarray(v, dtype=complex)
    n = v.shape[0]
    w = v.copy()
    if t == 0.0:
        return w
    remaining = float(t)
    dt = remaining
    sign = 1.0 if remaining > 0 else -1.0
    halvings = 0
    while remaining * sign > 0:
        dt = sign * min(abs(dt), abs(remaining))
        beta = np.linalg.norm(w)
        if beta == 0.0:
            return w
        V = np.zeros((n, m + 1), dtype=complex)
        Hm = np.zeros((m + 1, m), dtype=complex)
        V[:, 0] = w / beta
        m_used = m
        happy = False
        for jcol in range(m):
            u = matvec(V[:, jcol])
            for i in range(jcol + 1):  # modified Gram-Schmidt
                Hm[i, jcol] = np.vdot(V[:, i], u)
                u -= Hm[i, jcol] * V[:, i]
            # one re-orthogonalization pass keeps the basis clean
            for i in range(jcol + 1):
                c = np.vdot(V[:, i], u)
                Hm[i, jcol] += c
                u -= c * V[:, i]
            hnext = np.linalg.norm(u)
            Hm[jcol + 1, jcol] = hnext
            if hnext < 1e-14 * max(1.0, abs(Hm[: jcol + 1, : jcol + 1]).max()):
                m_used = jcol + 1
                happy = True  # invariant subspace: projection is exact
                break
            V[:, jcol + 1] = u / hnext
        Hs = Hm[:m_used, :m_used]
        F = sla.expm(dt * Hs)
        y = beta * F[:, 0]
        if happy:
            err = 0.0
        else:
            err = float(beta * abs(Hm[m_used, m_used - 1]) * abs(dt) * abs(F[m_used - 1, 0]))
        if err > tol * beta and not happy:
            dt *= 0.5
            halvings += 1
            if halvings > max_halvings:
                raise NonConvergence(
                    f"Krylov exponential failed to reach tol={tol} after {max_halvings} halvings"
                )
            continue
        w = V[:, :m_used] @ y
        remaining -= dt
        if err < 0.01 * tol * beta:
            dt *= 2.0  # cheap step-size growth
    return w


def evolve(ham: FPHamiltonian, psi: FormField, t, m=30, tol=1e-10) -> FormField:
    """Apply exp(-tH) to a form, sector by sector."""
    if t < 0:
        raise NegativeTime(f"evolution time must be >= 0, got {t}")
    out = psi.copy()
    if t == 0.0:
        return out
    for k in range(ham.mesh.dim + 1):
        vec = psi.sector_vector(k)
        if not np.any(vec):
            continue
        blk = ham.blocks[k]
        res = expm_krylov(lambda x, A=blk: A @ x, vec, -float(t), m=m, tol=tol)
        out.set_sector_vector(k, res)
    return out
