"""Periodic uniform grids on flat tori T^D and circulant differentiation stencils.

Grid points sit at x_j = j*h (no staggering); all differential forms are
collocated on this single grid. Central finite-difference circulants keep
every downstream operator sparse; their exact eigenstructure (the modified
wavenumber) is known in closed form, which the test-suite oracles exploit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import AxisOutOfRange, BadStencilOrder, DimensionUnsupported, GridTooCoarse

TWO_PI = 2.0 * np.pi

# central antisymmetric stencils: offset -> coefficient (units of 1/h)
_STENCILS = {
    2: {1: 0.5, -1: -0.5},
    4: {2: -1.0 / 12.0, 1: 8.0 / 12.0, -1: -8.0 / 12.0, -2: 1.0 / 12.0},
}


@dataclass(frozen=True)
class TorusMesh:
    """Uniform periodic grid over T^D, D in {1,2,3}.

    Attributes
    ----------
    dim : number of axes D
    n : per-axis point counts (each >= 8)
    h : per-axis spacing, h_i = 2*pi/n_i
    stencil_order : 2 or 4 (central differences)
    n_grid : total number of grid points
    """

    dim: int
    n: tuple
    h: tuple = field(init=False)
    stencil_order: int = 4
    n_grid: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "n", tuple(int(v) for v in self.n))
        object.__setattr__(self, "h", tuple(TWO_PI / v for v in self.n))
        object.__setattr__(self, "n_grid", int(np.prod(self.n)))
        for hi, ni in zip(self.h, self.n):
            # spacing must tile the circle exactly (up to roundoff)
            assert abs(hi * ni - TWO_PI) <= 4 * np.finfo(float).eps * TWO_PI

    def axis_coords(self, axis):
        """1D coordinate array along one axis."""
        if not 0 <= axis < self.dim:
            raise AxisOutOfRange(f"axis {axis} out of range for D={self.dim}")
        return np.arange(self.n[axis]) * self.h[axis]

    def grids(self):
        """Coordinate arrays of shape (n_grid,), one per axis, C-order raveled."""
        axes = [self.axis_coords(a) for a in range(self.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return [m.ravel() for m in mesh]

    def ravel_index(self, multi):
        """Multi-index -> flat grid index (C order, axis 0 slowest)."""
        return int(np.ravel_multi_index(multi, self.n))

    def unravel_index(self, flat):
        return tuple(int(v) for v in np.unravel_index(flat, self.n))

    @property
    def cell_volume(self):
        return float(np.prod(self.h))

    @property
    def h_max(self):
        return max(self.h)


def build_mesh(D, n, stencil_order=4):
    """Construct a TorusMesh, validating dimension, resolution and stencil order."""
    if D not in (1, 2, 3):
        raise DimensionUnsupported(f"D={D} unsupported, need D in {{1,2,3}}")
    n = tuple(int(v) for v in n)
    if len(n) != D:
        raise DimensionUnsupported(f"got {len(n)} point counts for D={D}")
    if any(v < 8 for v in n):
        raise GridTooCoarse(f"all n_i must be >= 8, got {n}")
    if stencil_order not in (2, 4):
        raise BadStencilOrder(f"stencil_order must be 2 or 4, got {stencil_order}")
    return TorusMesh(dim=D, n=n, stencil_order=stencil_order)


def derivative_1d(npts, order, h):
    """Circulant antisymmetric derivative matrix on a single periodic axis."""
    coeffs = _STENCILS[order]
    rows, cols, vals = [], [], []
    idx = np.arange(npts)
    for off, c in coeffs.items():
        rows.append(idx)
        cols.append((idx + off) % npts)
        vals.append(np.full(npts, c / h))
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(npts, npts),
    )


def derivative_matrix(mesh, axis):
    """Sparse d/dx_axis on the full grid (Kronecker lift of the 1D circulant).

    Axis 0 is the slowest-varying index in the C-order raveling, so the 1D
    stencil sits leftmost in the Kronecker chain.
    """
    if not 0 <= axis < mesh.dim:
        raise AxisOutOfRange(f"axis {axis} out of range for D={mesh.dim}")
    mat = None
    for a in range(mesh.dim):
        f = (
            derivative_1d(mesh.n[a], mesh.stencil_order, mesh.h[a])
            if a == axis
            else sp.identity(mesh.n[a], format="csr")
        )
        mat = f if mat is None else sp.kron(mat, f, format="csr")
    return mat.tocsr()


def modified_wavenumber(order, k, h):
    """Exact symbol of the central stencil: D e^{ikx} = i*kt(k)*e^{ikx}.

    Derivation is elementary: insert e^{ikx} into the stencil and collect
    sines. Order 2 gives sin(kh)/h, order 4 gives (8 sin kh - sin 2kh)/(6h).
    """
    th = np.asarray(k, dtype=float) * h
    if order == 2:
        return np.sin(th) / h
    if order == 4:
        return (8.0 * np.sin(th) - np.sin(2.0 * th)) / (6.0 * h)
    raise BadStencilOrder(f"stencil_order must be 2 or 4, got {order}")


def wavenumbers(npts):
    """Integer wavenumbers in FFT order: 0,1,...,n/2-ish,-n/2,...,-1."""
    return np.fft.fftfreq(npts, d=1.0 / npts)
