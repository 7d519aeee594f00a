"""Exterior algebra over a torus mesh: forms, ghost bookkeeping, d, d-dagger,
interior multiplication, wedge products, top-form integration and Poincare
duals.

Ghost basis elements are encoded as bitmasks over the axes: bit i set means
the factor chi^i (= dx^i wedge) is present, and basis elements are always
the increasing-index products chi^{i1} ^ ... ^ chi^{ik}, i1 < ... < ik. All
sign bookkeeping then reduces to popcount parities. A full-algebra
coefficient vector is laid out mask-major: flat index = mask * n_grid + g,
which makes every operator a Kronecker product of a small ghost matrix with
a grid matrix.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from itertools import combinations
from math import comb

import numpy as np
import scipy.sparse as sp

from .errors import (
    DegreeOverflow,
    DimensionMismatch,
    MeshMismatch,
    NotTopDegree,
    WidthTooNarrow,
)
from .mesh import TWO_PI, TorusMesh, derivative_matrix

# ---------------------------------------------------------------------------
# ghost-index utilities
# ---------------------------------------------------------------------------


def degree(mask):
    """Ghost number of a basis bitmask (form degree)."""
    return int(mask).bit_count()


def masks_of_degree(D, k):
    """All bitmasks of popcount k, in increasing numeric order."""
    return [m for m in range(1 << D) if degree(m) == k]


def insertion_sign(mask, axis):
    """Sign picked up when chi^axis is moved into the increasing product chi^mask.

    Equals (-1)^(number of axes in mask below `axis`). Kept as a free
    function on purpose: it is the single source of ghost-sign truth for d
    and interior multiplication.
    """
    return -1 if (mask & ((1 << axis) - 1)).bit_count() & 1 else 1


def merge_sign(mask_a, mask_b):
    """Parity of sorting the concatenation chi^A chi^B into increasing order.

    Only meaningful for disjoint masks; counts pairs (a in A, b in B) with
    a > b.
    """
    inv = 0
    b = mask_b
    while b:
        low = b & -b
        axis = low.bit_length() - 1
        inv += (mask_a >> (axis + 1)).bit_count()
        b ^= low
    return -1 if inv & 1 else 1


def ghost_creation(D, axis):
    """(2^D x 2^D) matrix of chi^axis wedge acting on the mask basis."""
    rows, cols, vals = [], [], []
    bit = 1 << axis
    for mask in range(1 << D):
        if mask & bit:
            continue
        rows.append(mask | bit)
        cols.append(mask)
        vals.append(float(insertion_sign(mask, axis)))
    return sp.csr_matrix((vals, (rows, cols)), shape=(1 << D, 1 << D))


# ---------------------------------------------------------------------------
# fields
# ---------------------------------------------------------------------------


class FormField:
    """Coefficients of an inhomogeneous differential form on a mesh.

    data has shape (2^D, n_grid), complex; row `mask` holds the coefficient
    field of the basis element chi^mask.
    """

    def __init__(self, mesh: TorusMesh, data=None):
        self.mesh = mesh
        n_sect = 1 << mesh.dim
        if data is None:
            data = np.zeros((n_sect, mesh.n_grid), dtype=complex)
        else:
            data = np.asarray(data, dtype=complex)
            if data.shape != (n_sect, mesh.n_grid):
                raise DimensionMismatch(
                    f"form data shape {data.shape} != {(n_sect, mesh.n_grid)}"
                )
        self.data = data

    @classmethod
    def zeros(cls, mesh):
        return cls(mesh)

    @classmethod
    def from_sector(cls, mesh, mask, values):
        """Single-sector form: the given coefficient field times chi^mask."""
        f = cls(mesh)
        f.data[mask, :] = np.asarray(values, dtype=complex).ravel()
        return f

    def copy(self):
        return FormField(self.mesh, self.data.copy())

    def degree(self):
        """Form degree if homogeneous, else None."""
        present = {degree(m) for m in range(self.data.shape[0]) if np.any(self.data[m])}
        if not present:
            return 0
        return present.pop() if len(present) == 1 else None

    def ravel(self):
        return self.data.ravel()

    def norm(self):
        return float(np.linalg.norm(self.data)) * np.sqrt(self.mesh.cell_volume)

    def dot(self, other):
        """Flat inner product <self, other> = vol * sum conj(self)*other."""
        if other.mesh is not self.mesh and other.mesh != self.mesh:
            raise MeshMismatch("forms live on different meshes")
        return complex(np.vdot(self.data, other.data) * self.mesh.cell_volume)

    def sector_vector(self, k):
        """Flattened coefficients of all degree-k masks (increasing mask order)."""
        masks = masks_of_degree(self.mesh.dim, k)
        return self.data[masks, :].ravel()

    def set_sector_vector(self, k, vec):
        masks = masks_of_degree(self.mesh.dim, k)
        self.data[masks, :] = np.asarray(vec, dtype=complex).reshape(len(masks), -1)

    def to_csv(self, path, header_lines=()):
        """Snapshot export: (sector_bitmask, grid multi-index..., re, im)."""
        mesh = self.mesh
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            writer = csv.writer(fh)
            writer.writerow(
                ["sector_bitmask"] + [f"m{a}" for a in range(mesh.dim)] + ["re", "im"]
            )
            for mask in range(self.data.shape[0]):
                if not np.any(self.data[mask]):
                    continue
                for g in range(mesh.n_grid):
                    z = self.data[mask, g]
                    writer.writerow([mask, *mesh.unravel_index(g), z.real, z.imag])


# ---------------------------------------------------------------------------
# operators
# ---------------------------------------------------------------------------


@dataclass
class SectorOperator:
    """Sparse matrix on the full exterior algebra (mask-major layout).

    degree_shift records the declared ghost grading (+1 for d, -1 for
    d-dagger/interior/j, 0 for Hamiltonians); None means mixed.
    """

    mesh: TorusMesh
    matrix: sp.csr_matrix
    tag: str
    degree_shift: int = None

    @property
    def shape(self):
        return self.matrix.shape

    @property
    def nnz(self):
        return self.matrix.nnz

    def apply(self, field: FormField) -> FormField:
        if field.mesh != self.mesh:
            raise MeshMismatch(f"operator {self.tag!r} applied to form on a different mesh")
        out = self.matrix @ field.ravel()
        return FormField(self.mesh, out.reshape(field.data.shape))

    def __matmul__(self, other):
        if isinstance(other, SectorOperator):
            shift = None
            if self.degree_shift is not None and other.degree_shift is not None:
                shift = self.degree_shift + other.degree_shift
            return SectorOperator(
                self.mesh, (self.matrix @ other.matrix).tocsr(), f"{self.tag}*{other.tag}", shift
            )
        if isinstance(other, FormField):
            return self.apply(other)
        return NotImplemented

    def __add__(self, other):
        shift = self.degree_shift if self.degree_shift == other.degree_shift else None
        mat = (self.matrix + other.matrix).tocsr()
        mat.eliminate_zeros()
        return SectorOperator(self.mesh, mat, f"{self.tag}+{other.tag}", shift)

    def __mul__(self, scalar):
        return SectorOperator(self.mesh, (scalar * self.matrix).tocsr(), self.tag, self.degree_shift)

    __rmul__ = __mul__

    def degree_indices(self, k):
        """Row/column indices of the degree-k sector in the full layout."""
        ng = self.mesh.n_grid
        masks = masks_of_degree(self.mesh.dim, k)
        return np.concatenate([m * ng + np.arange(ng) for m in masks])

    def block(self, k_dst, k_src):
        """Submatrix mapping the degree-k_src sector into degree-k_dst."""
        rows = self.degree_indices(k_dst)
        cols = self.degree_indices(k_src)
        return self.matrix[rows, :][:, cols].tocsr()

    def grading_violation(self):
        """Total magnitude of entries outside the declared degree shift."""
        if self.degree_shift is None:
            return 0.0
        D = self.mesh.dim
        bad = 0.0
        for ks in range(D + 1):
            for kd in range(D + 1):
                if kd - ks == self.degree_shift:
                    continue
                blk = self.block(kd, ks)
                if blk.nnz:
                    bad += float(np.abs(blk.data).sum())
        return bad

    def norm_lower_bound(self, n_probe=20, seed=0):
        """max ||A v|| over random unit vectors; cheap operator-norm proxy."""
        rng = np.random.default_rng(seed)
        n = self.matrix.shape[1]
        best = 0.0
        for _ in range(n_probe):
            v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
            v /= np.linalg.norm(v)
            best = max(best, float(np.linalg.norm(self.matrix @ v)))
        return best


def _lifted(mesh, ghost_mat, grid_mat):
    return sp.kron(ghost_mat, grid_mat, format="csr")


def build_d(mesh: TorusMesh) -> SectorOperator:
    """Exterior derivative: sum_i chi^i (wedge) x d/dx_i. Exactly nilpotent.

    Nilpotency is structural: per-axis derivative circulants commute, so the
    ghost antisymmetry cancels the symmetric second-derivative part.
    """
    ng = mesh.n_grid
    total = sp.csr_matrix(((1 << mesh.dim) * ng,) * 2)
    for axis in range(mesh.dim):
        total = total + _lifted(mesh, ghost_creation(mesh.dim, axis), derivative_matrix(mesh, axis))
    total = total.tocsr()
    total.eliminate_zeros()
    return SectorOperator(mesh, total, "d", degree_shift=+1)


def build_codiff(mesh: TorusMesh, axis_weights=None) -> SectorOperator:
    """Adjoint of d in the flat inner product (all sectors share the volume
    weight, so this is the plain matrix transpose), with optional per-axis
    weights for constant diagonal vielbeins."""
    ng = mesh.n_grid
    if axis_weights is None:
        axis_weights = [1.0] * mesh.dim
    total = sp.csr_matrix(((1 << mesh.dim) * ng,) * 2)
    for axis in range(mesh.dim):
        c_t = ghost_creation(mesh.dim, axis).T.tocsr()
        d_t = derivative_matrix(mesh, axis).T.tocsr()
        total = total + float(axis_weights[axis]) * _lifted(mesh, c_t, d_t)
    total = total.tocsr()
    total.eliminate_zeros()
    return SectorOperator(mesh, total, "codiff", degree_shift=-1)


def build_interior(mesh: TorusMesh, flow) -> SectorOperator:
    """Interior multiplication iota_F: contraction with the flow field.

    Coefficient fields F^i are evaluated once over the grid here; nothing is
    re-evaluated inside matvecs.
    """
    if flow.dim != mesh.dim:
        raise DimensionMismatch(f"flow dimension {flow.dim} != mesh dimension {mesh.dim}")
    ng = mesh.n_grid
    grids = mesh.grids()
    values = flow.component_values(grids)
    total = sp.csr_matrix(((1 << mesh.dim) * ng,) * 2)
    for axis in range(mesh.dim):
        if not np.any(values[axis]):
            continue
        a_mat = ghost_creation(mesh.dim, axis).T.tocsr()  # annihilation, same signs
        total = total + _lifted(mesh, a_mat, sp.diags(values[axis], format="csr"))
    total = total.tocsr()
    total.eliminate_zeros()
    return SectorOperator(mesh, total, "interior", degree_shift=-1)


# ---------------------------------------------------------------------------
# algebra operations on fields
# ---------------------------------------------------------------------------


def wedge(alpha: FormField, beta: FormField) -> FormField:
    """Pointwise graded product; overlapping ghost masks contribute nothing."""
    if alpha.mesh != beta.mesh:
        raise MeshMismatch("wedge of forms on different meshes")
    D = alpha.mesh.dim
    ka, kb = alpha.degree(), beta.degree()
    if ka is not None and kb is not None and ka + kb > D:
        raise DegreeOverflow(f"wedge of degrees {ka}+{kb} exceeds D={D}")
    out = FormField.zeros(alpha.mesh)
    for ma in range(1 << D):
        if not np.any(alpha.data[ma]):
            continue
        for mb in range(1 << D):
            if ma & mb or not np.any(beta.data[mb]):
                continue
            out.data[ma | mb] += merge_sign(ma, mb) * alpha.data[ma] * beta.data[mb]
    return out


def integrate_top(omega: FormField) -> complex:
    """Integral of a top-degree form: vol * sum of the top-sector coefficient."""
    D = omega.mesh.dim
    top = (1 << D) - 1
    for mask in range(1 << D):
        if mask != top and np.any(omega.data[mask]):
            raise NotTopDegree("integrate_top needs a top-degree form")
    return complex(omega.data[top].sum() * omega.mesh.cell_volume)


def _wrapped_gaussian(coords, center, sigma):
    """Periodic Gaussian bump of unit mass on the circle [0, 2pi)."""
    # enough images that the truncation error is far below 1e-12
    m_max = int(np.ceil(8.0 * sigma / TWO_PI)) + 1
    d = coords - center
    total = np.zeros_like(coords)
    for m in range(-m_max, m_max + 1):
        total += np.exp(-((d - TWO_PI * m) ** 2) / (2.0 * sigma**2))
    return total / (sigma * np.sqrt(TWO_PI))


def init_poincare_dual(mesh: TorusMesh, axes, position, width) -> FormField:
    """Mollified Poincare dual of the |axes|-cycle located at `position`.

    Returns a (D - |axes|)-form: unit-mass periodic Gaussians in each
    transverse coordinate times the transverse differentials, constant along
    the cycle axes. `position` lists the transverse coordinates in
    increasing-axis order.
    """
    axes = sorted(set(int(a) for a in axes))
    if any(a < 0 or a >= mesh.dim for a in axes):
        raise DimensionMismatch(f"axes {axes} outside 0..{mesh.dim - 1}")
    if width < 2.0 * mesh.h_max:
        raise WidthTooNarrow(f"width {width} < 2*h_max = {2.0 * mesh.h_max}")
    transverse = [a for a in range(mesh.dim) if a not in axes]
    if len(position) != len(transverse):
        raise DimensionMismatch(
            f"need {len(transverse)} transverse positions, got {len(position)}"
        )
    grids = mesh.grids()
    values = np.ones(mesh.n_grid)
    for a, x0 in zip(transverse, position):
        values = values * _wrapped_gaussian(grids[a], float(x0), float(width))
    mask = 0
    for a in transverse:
        mask |= 1 << a
    return FormField.from_sector(mesh, mask, values)
