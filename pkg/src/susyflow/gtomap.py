"""Discrete-time transfer operator for noisy affine unimodular torus maps,
constructed exactly in a truncated Fourier x ghost basis.

For M(x) = A x + b + eta (eta Gaussian of covariance T*I, wrapped), the
pullback by M^{-1} maps the Fourier mode k to k' = A^{-T} k (integer because
|det A| = 1), the scalar weight is exp(-i k'.b) times the wrapped-Gaussian
characteristic factor exp(-T |k'|^2 / 2), and the ghost block is the
exterior-power action of A^{-1} (degree-k minors over increasing index
sets). Modes whose image leaves the truncation are dropped and counted, so
the operator stays sub-stochastic in the damped band instead of aliasing.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from math import comb

import numpy as np
import scipy.sparse as sp

from .errors import NotUnimodular, TruncationTooSmall, UnknownFlow, ValidationError
from .exterior import insertion_sign, masks_of_degree
from .spectral import SpectrumReport, dense_eig


def _int_det(A):
    """Exact integer determinant for D <= 3."""
    A = [[int(v) for v in row] for row in A]
    n = len(A)
    if n == 1:
        return A[0][0]
    if n == 2:
        return A[0][0] * A[1][1] - A[0][1] * A[1][0]
    return (
        A[0][0] * (A[1][1] * A[2][2] - A[1][2] * A[2][1])
        - A[0][1] * (A[1][0] * A[2][2] - A[1][2] * A[2][0])
        + A[0][2] * (A[1][0] * A[2][1] - A[1][1] * A[2][0])
    )


def _int_inverse(A):
    """Exact inverse of a unimodular integer matrix (adjugate over det)."""
    A = np.asarray(A, dtype=np.int64)
    det = _int_det(A)
    n = A.shape[0]
    if n == 1:
        return np.array([[det]], dtype=np.int64)  # det is +-1
    adj = np.empty_like(A)
    for i in range(n):
        for j in range(n):
            minor = np.delete(np.delete(A, i, axis=0), j, axis=1)
            adj[j, i] = ((-1) ** (i + j)) * _int_det(minor)
    return adj * det  # division by det = multiplication, since det = +-1


@dataclass(frozen=True)
class MapSpec:
    """Affine unimodular torus map x -> A x + b with additive Gaussian noise."""

    A: tuple
    b: tuple
    temperature: float = 0.0

    def __post_init__(self):
        A = np.asarray(self.A, dtype=np.int64)
        D = A.shape[0]
        if A.shape != (D, D) or D not in (1, 2, 3):
            raise ValidationError(f"A must be DxD with D in {{1,2,3}}, got shape {A.shape}")
        if abs(_int_det(A)) != 1:
            raise NotUnimodular(f"|det A| must be 1, got {_int_det(A)}")
        if self.temperature < 0:
            raise ValidationError("noise temperature must be >= 0")
        object.__setattr__(self, "A", tuple(tuple(int(v) for v in row) for row in A))
        b = tuple(float(v) % (2.0 * np.pi) for v in self.b)
        if len(b) != D:
            raise ValidationError(f"shift b must have length {D}")
        object.__setattr__(self, "b", b)

    @property
    def dim(self):
        return len(self.b)

    def matrix(self):
        return np.asarray(self.A, dtype=np.int64)

    def inverse_matrix(self):
        return _int_inverse(self.matrix())


@dataclass
class GtoOperator:
    map_spec: MapSpec
    K: int
    modes: np.ndarray  # (M, D) integer mode vectors
    blocks: dict = field(default_factory=dict)  # degree -> csr
    dropped_modes: int = 0
    mode_map: dict = field(default_factory=dict)  # src mode idx -> (tgt idx, weight) or None

    @property
    def dim(self):
        return self.map_spec.dim

    def sector_dim(self, k):
        return self.modes.shape[0] * comb(self.dim, k)

    def trace_power(self, n):
        """Straight trace of the n-th operator power, summed over all sectors."""
        total = 0.0 + 0.0j
        for blk in self.blocks.values():
            B = blk.toarray()
            total += np.trace(np.linalg.matrix_power(B, n))
        return complex(total)

    def to_modemap_csv(self, path, header_lines=()):
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            writer = csv.writer(fh)
            D = self.dim
            writer.writerow([f"k{a}" for a in range(D)] + [f"kprime{a}" for a in range(D)]
                            + ["weight_re", "weight_im", "dropped"])
            for i, k in enumerate(self.modes):
                hit = self.mode_map.get(i)
                if hit is None:
                    writer.writerow(list(k) + ["", "", "", "", 1])
                else:
                    tgt, wgt = hit
                    writer.writerow(list(k) + list(self.modes[tgt]) + [wgt.real, wgt.imag, 0])


def _mode_table(D, K):
    """All integer modes with |k_i| <= K, C-order over (k+K)."""
    ranges = [np.arange(-K, K + 1)] * D
    grid = np.meshgrid(*ranges, indexing="ij")
    return np.stack([g.ravel() for g in grid], axis=1).astype(np.int64)


def _mode_index(modes_shape_K, kvec):
    K = modes_shape_K
    D = len(kvec)
    idx = 0
    for a in range(D):
        idx = idx * (2 * K + 1) + (int(kvec[a]) + K)
    return idx


def _minor_table(Ainv, D):
    """minors[p][pos(S), pos(S')] = det(Ainv[S rows, S' cols]) over increasing sets."""
    tables = {}
    Af = np.asarray(Ainv, dtype=float)
    for p in range(D + 1):
        masks = masks_of_degree(D, p)
        t = np.empty((len(masks), len(masks)))
        for a, ms in enumerate(masks):
            rows = [i for i in range(D) if ms >> i & 1]
            for bpos, mt in enumerate(masks):
                cols = [i for i in range(D) if mt >> i & 1]
                if p == 0:
                    t[a, bpos] = 1.0
                else:
                    t[a, bpos] = float(np.linalg.det(Af[np.ix_(rows, cols)]))
        tables[p] = t
    return tables


def _assemble(map_spec, K, phase_weight):
    """Shared pullback assembly; phase_weight maps target-mode rows to weights."""
    D = map_spec.dim
    modes = _mode_table(D, K)
    M = modes.shape[0]
    Ainv = map_spec.inverse_matrix()
    # k' = A^{-T} k, computed for all source modes at once
    kprime = modes @ Ainv  # row k times A^{-1} equals (A^{-T} k)^T
    inside = np.all(np.abs(kprime) <= K, axis=1)
    weights = phase_weight(kprime)
    tgt_idx = np.zeros(M, dtype=np.int64)
    for a in range(D):
        tgt_idx = tgt_idx * (2 * K + 1) + (kprime[:, a] + K)
    minors = _minor_table(Ainv, D)
    blocks = {}
    mode_map = {}
    src = np.nonzero(inside)[0]
    for i in range(M):
        mode_map[i] = (int(tgt_idx[i]), complex(weights[i])) if inside[i] else None
    for p in range(D + 1):
        masks = masks_of_degree(D, p)
        npk = len(masks)
        rows, cols, vals = [], [], []
        t = minors[p]
        for spos in range(npk):
            for tpos in range(npk):
                mv = t[spos, tpos]
                if mv == 0.0:
                    continue
                rows.append(tgt_idx[src] * npk + tpos)
                cols.append(src * npk + spos)
                vals.append(weights[src] * mv)
        if rows:
            blocks[p] = sp.csr_matrix(
                (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                shape=(M * npk, M * npk),
            )
        else:
            blocks[p] = sp.csr_matrix((M * npk, M * npk), dtype=complex)
    dropped = int(M - inside.sum())
    return modes, blocks, dropped, mode_map


def build_gto(map_spec: MapSpec, K: int) -> GtoOperator:
    """Noise-averaged pullback in the truncated Fourier x ghost basis."""
    if K < 1:
        raise TruncationTooSmall(f"Fourier truncation K must be >= 1, got {K}")
    T = map_spec.temperature
    b = np.asarray(map_spec.b)

    def weight(kprime):
        # phase from the shift plus the wrapped-Gaussian characteristic factor
        return np.exp(-1j * (kprime @ b) - 0.5 * T * np.sum(kprime.astype(float) ** 2, axis=1))

    modes, blocks, dropped, mode_map = _assemble(map_spec, K, weight)
    return GtoOperator(map_spec=map_spec, K=K, modes=modes, blocks=blocks,
                       dropped_modes=dropped, mode_map=mode_map)


def deterministic_pullback(map_spec: MapSpec, shift, K: int) -> GtoOperator:
    """Exact pullback for one noise draw: the map x -> A x + shift, no averaging.

    This is the Monte-Carlo oracle's building block: averaging these over
    Gaussian draws of (b + eta) must reproduce build_gto.
    """
    if K < 1:
        raise TruncationTooSmall(f"Fourier truncation K must be >= 1, got {K}")
    shift = np.asarray(shift, dtype=float)

    def weight(kprime):
        return np.exp(-1j * (kprime @ shift))

    modes, blocks, dropped, mode_map = _assemble(map_spec, K, weight)
    return GtoOperator(map_spec=map_spec, K=K, modes=modes, blocks=blocks,
                       dropped_modes=dropped, mode_map=mode_map)


def gto_supertrace(gto: GtoOperator) -> complex:
    """Supertrace sum_k (-1)^k tr(block_k); a Lefschetz-number analogue."""
    total = 0.0 + 0.0j
    for p, blk in gto.blocks.items():
        total += ((-1) ** p) * complex(blk.diagonal().sum())
    return total


def fourier_d_block(D, K, p):
    """Exact Fourier exterior derivative, degree p -> p+1, on the mode basis."""
    modes = _mode_table(D, K)
    M = modes.shape[0]
    src_masks = masks_of_degree(D, p)
    dst_masks = masks_of_degree(D, p + 1)
    dst_pos = {m: i for i, m in enumerate(dst_masks)}
    rows, cols, vals = [], [], []
    for spos, ms in enumerate(src_masks):
        for axis in range(D):
            if ms >> axis & 1:
                continue
            tpos = dst_pos[ms | (1 << axis)]
            sgn = insertion_sign(ms, axis)
            cols.append(np.arange(M) * len(src_masks) + spos)
            rows.append(np.arange(M) * len(dst_masks) + tpos)
            vals.append(1j * modes[:, axis].astype(float) * sgn)
    if not rows:
        return sp.csr_matrix((M * len(dst_masks), M * len(src_masks)), dtype=complex)
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(M * len(dst_masks), M * len(src_masks)),
    )


def retained_mode_mask(gto, p):
    """Basis filter: modes whose image stays inside the truncation."""
    npk = comb(gto.dim, p)
    keep = np.zeros(gto.sector_dim(p), dtype=bool)
    for i, hit in gto.mode_map.items():
        if hit is not None:
            keep[i * npk:(i + 1) * npk] = True
    return keep


def gto_spectrum(gto: GtoOperator, system_id="map", cap=3000, tol_eig=1e-8) -> SpectrumReport:
    """Per-sector dense spectra of the transfer operator plus map classification data."""
    report = SpectrumReport(system_id=system_id, kind="map",
                            meta={"method": "dense", "tol_eig": tol_eig})
    for p in range(gto.dim + 1):
        w, vr, vl, res, dfl = dense_eig(gto.blocks[p], cap=cap, tol_eig=tol_eig)
        report.add_sector(p, w, vr, left=vl, residuals=res, defective=dfl, complete=True)
    rho = report.scale
    report.meta["spectral_radius"] = rho
    report.meta["gamma_g"] = -float(np.log(rho)) if rho > 0 else float("inf")
    report.meta["dropped_modes"] = gto.dropped_modes
    return report


# registry of map systems used in tests and experiments
def builtin_map(name, params):
    params = dict(params)
    T = float(params.pop("T", 0.0))
    D = int(params.pop("D", 2))
    b = params.pop("b", None)
    if params:
        raise ValidationError(f"map {name!r} does not take parameters {sorted(params)}")
    if name == "identity":
        A = np.eye(D, dtype=int)
        return MapSpec(A=A, b=b if b is not None else [0.0] * D, temperature=T)
    if name == "translation":
        A = np.eye(D, dtype=int)
        return MapSpec(A=A, b=b if b is not None else [1.0] * D, temperature=T)
    if name == "inversion":
        return MapSpec(A=[[-1]], b=b if b is not None else [0.0], temperature=T)
    if name == "cat":
        return MapSpec(A=[[2, 1], [1, 1]], b=b if b is not None else [0.0, 0.0], temperature=T)
    if name == "fibonacci":
        return MapSpec(A=[[1, 1], [1, 0]], b=b if b is not None else [0.0, 0.0], temperature=T)
    raise UnknownFlow(f"unknown builtin map {name!r}")
