"""Witten index, partition function, zero-mode counting, chaos classification
through supersymmetry breaking, and the ground-state probability density.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import IncompleteSpectrum, NormalizationFailure, ValidationError
from .exterior import FormField, integrate_top, masks_of_degree, merge_sign, wedge
from .vfparse import eval_on_grids

FULL_MASK = lambda D: (1 << D) - 1  # noqa: E731


@dataclass
class ChaosReport:
    """Classification summary for one system."""

    system_id: str
    kind: str  # "flow" | "map"
    gamma_g: float
    susy_broken: bool
    ground_sectors: list = field(default_factory=list)
    witten_index: list = field(default_factory=list)  # [{"t":..., "re":..., "im":...}]
    zero_modes: list = field(default_factory=list)
    pseudo_tr_anomaly: bool = False
    anomalies: list = field(default_factory=list)
    cross_checks: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def to_json(self, path=None, header=None):
        payload = {
            "system_id": self.system_id,
            "kind": self.kind,
            "gamma_g": self.gamma_g,
            "susy_broken": self.susy_broken,
            "ground_sectors": self.ground_sectors,
            "witten_index": self.witten_index,
            "zero_modes": self.zero_modes,
            "pseudo_tr_anomaly": self.pseudo_tr_anomaly,
            "anomalies": self.anomalies,
            "cross_checks": self.cross_checks,
            "meta": self.meta,
        }
        if header:
            payload = {**header, **payload}
        if path is not None:
            with open(path, "w") as fh:
                json.dump(payload, fh, indent=2)
        return payload


def _require_complete(report):
    missing = [k for k in report.sectors() if not report.complete.get(k, False)]
    if missing or not report.entries:
        raise IncompleteSpectrum(
            f"full per-sector spectra required (incomplete sectors: {missing})"
        )


def witten_index(report, t_samples):
    """W_t = sum_k (-1)^k sum_a exp(-t E_{k,a}) from full dense spectra."""
    _require_complete(report)
    out = []
    for t in t_samples:
        total = 0.0 + 0.0j
        for k in report.sectors():
            vals = report.eigenvalues(k)
            total += ((-1) ** k) * np.exp(-t * vals).sum()
        out.append(complex(total))
    return out


def partition_function(report, t_samples):
    """Z_t = Tr exp(-tH) plus the fitted log-slope over the largest-t window."""
    _require_complete(report)
    zvals = []
    for t in t_samples:
        total = 0.0 + 0.0j
        for k in report.sectors():
            total += np.exp(-t * report.eigenvalues(k)).sum()
        zvals.append(complex(total))
    ts = np.asarray(t_samples, dtype=float)
    mags = np.abs(np.asarray(zvals))
    slope = None
    if len(ts) >= 2:
        start = min(len(ts) // 2, len(ts) - 2)  # largest-t half, at least 2 points
        coeffs = np.polyfit(ts[start:], np.log(np.maximum(mags[start:], 1e-300)), 1)
        slope = float(coeffs[0])
    return zvals, slope


def map_partition_function(gto, n_values):
    """Z_n = Tr M^n over all sectors, plus the fitted growth rate of log Z_n / n."""
    zvals = [gto.trace_power(int(n)) for n in n_values]
    ns = np.asarray(n_values, dtype=float)
    mags = np.abs(np.asarray(zvals))
    slope = None
    if len(ns) >= 2:
        coeffs = np.polyfit(ns, np.log(np.maximum(mags, 1e-300)), 1)
        slope = float(coeffs[0])
    return zvals, slope


def classify(report, tol_class_rel=1e-6, t_samples=(0.1, 1.0, 10.0), cross_checks=None,
             compute_witten=True):
    """Build a ChaosReport from a spectrum report.

    Flows: Gamma_g = min Re E over all sectors; broken supersymmetry means
    Gamma_g < -tol (scale-relative). Maps: Gamma_g = -log(spectral radius).
    The report is always produced; anomalies carry diagnostics.
    """
    scale = report.scale
    tol = tol_class_rel * max(scale, 1e-300)
    anomalies = []
    zero_modes = [
        int(np.sum(np.abs(report.eigenvalues(k)) <= tol)) for k in report.sectors()
    ]

    if report.kind == "map":
        rho = scale
        gamma = -float(np.log(rho)) if rho > 0 else float("inf")
        broken = rho > 1.0 + tol_class_rel
        ground_sectors = sorted(
            {k for k in report.sectors() if np.any(np.abs(np.abs(report.eigenvalues(k)) - rho) <= tol)}
        )
        # zero modes for maps: fixed GPDs, i.e. eigenvalue 1
        zero_modes = [
            int(np.sum(np.abs(report.eigenvalues(k) - 1.0) <= tol_class_rel)) for k in report.sectors()
        ]
        radius_vals = np.concatenate(
            [report.eigenvalues(k)[np.abs(np.abs(report.eigenvalues(k)) - rho) <= tol]
             for k in report.sectors()]
        )
        pseudo_tr = not np.any(np.abs(radius_vals.imag) <= tol)
        if broken and any(0 < k < max(report.sectors()) for k in ground_sectors):
            anomalies.append(
                "map_gto_cohomology_growth: spectral radius is attained on the "
                "constant-mode block of an intermediate ghost sector; the "
                "continuous-time statement that d-symmetric states carry zero "
                "eigenvalues does not transfer to map pullbacks"
            )
        rep = ChaosReport(
            system_id=report.system_id, kind="map", gamma_g=gamma, susy_broken=bool(broken),
            ground_sectors=ground_sectors, zero_modes=zero_modes,
            pseudo_tr_anomaly=bool(pseudo_tr), anomalies=anomalies,
            cross_checks=cross_checks or {},
            meta={"spectral_radius": rho, "tol": tol, "dropped_modes": report.meta.get("dropped_modes")},
        )
        return rep

    # continuous-time flow
    all_vals = report.all_eigenvalues()
    gamma = float(all_vals.real.min())
    broken = gamma < -tol
    ground_mask = np.abs(all_vals.real - gamma) <= tol
    ground_vals = all_vals[ground_mask]
    pseudo_tr = not np.any(np.abs(ground_vals.imag) <= tol)
    if pseudo_tr:
        anomalies.append(
            "pseudo_time_reversal: no real eigenvalue at the minimal real part; "
            "classification semantics for this situation are not prescribed"
        )
    ground_sectors = sorted(
        {k for k in report.sectors()
         if np.any(np.abs(report.eigenvalues(k).real - gamma) <= tol)}
    )
    if not broken and report.meta.get("paired"):
        for k in report.sectors():
            for e in report.entries[k]:
                if abs(e.eigenvalue) <= report.meta.get("tol_zero", tol) and not e.d_symmetric:
                    anomalies.append(
                        f"ground_state_not_d_symmetric: sector {k} eigenvalue {e.eigenvalue:.3e}"
                    )
                    break
    witten = []
    if compute_witten and all(report.complete.get(k, False) for k in report.sectors()):
        for t, w in zip(t_samples, witten_index(report, t_samples)):
            witten.append({"t": float(t), "re": w.real, "im": w.imag})
    rep = ChaosReport(
        system_id=report.system_id, kind="flow", gamma_g=gamma, susy_broken=bool(broken),
        ground_sectors=ground_sectors, witten_index=witten, zero_modes=zero_modes,
        pseudo_tr_anomaly=bool(pseudo_tr), anomalies=anomalies,
        cross_checks=cross_checks or {}, meta={"scale": scale, "tol": tol},
    )
    return rep


# ---------------------------------------------------------------------------
# ground-state density
# ---------------------------------------------------------------------------


def left_as_form(mesh, sector_k, left_vec):
    """Realize a left eigenvector as its (D-k)-form under the flat pairing.

    The coefficient of chi^(complement of S) is the merge-parity sign times
    the conjugate of the left coefficient at S, so that integrating the
    wedge against a right vector reproduces the bi-orthogonal inner product.
    """
    D = mesh.dim
    masks = masks_of_degree(D, sector_k)
    ng = mesh.n_grid
    vec = np.asarray(left_vec, dtype=complex).reshape(len(masks), ng)
    out = FormField.zeros(mesh)
    full = FULL_MASK(D)
    for pos, S in enumerate(masks):
        Sc = full ^ S
        out.data[Sc] += merge_sign(Sc, S) * vec[pos].conj()
    return out


def right_as_form(mesh, sector_k, right_vec):
    masks = masks_of_degree(mesh.dim, sector_k)
    vec = np.asarray(right_vec, dtype=complex).reshape(len(masks), mesh.n_grid)
    out = FormField.zeros(mesh)
    for pos, S in enumerate(masks):
        out.data[S] = vec[pos]
    return out


def ground_density(mesh, sector_k, left_vec, right_vec):
    """Total probability density of a ground state: bar(g) wedge g, mass one.

    Returns (top-degree FormField, diagnostics) where diagnostics report the
    negativity measure and the imaginary residue after normalization.
    """
    bar_g = left_as_form(mesh, sector_k, left_vec)
    g = right_as_form(mesh, sector_k, right_vec)
    P = wedge(bar_g, g)
    mass = integrate_top(P)
    pnorm = P.norm()
    if abs(mass) <= 1e-12 * max(pnorm, 1e-300):
        raise NormalizationFailure(
            f"ground density has vanishing total mass ({mass:.3e}); cannot normalize"
        )
    P.data /= mass
    top = P.data[FULL_MASK(mesh.dim)]
    vol = mesh.cell_volume
    diagnostics = {
        "negativity": float(np.abs(np.minimum(top.real, 0.0)).sum() * vol),
        "imag_residue": float(np.sqrt((top.imag**2).sum() * vol)),
        "mass_before_normalization": complex(mass),
    }
    return P, diagnostics


def expectation(obs_expr, P_g: FormField):
    """Stationary expectation of an observable O(x) under a normalized density."""
    mesh = P_g.mesh
    values = eval_on_grids(obs_expr, mesh.grids())
    top = P_g.data[FULL_MASK(mesh.dim)]
    val = complex((values * top).sum() * mesh.cell_volume)
    return float(val.real)


def select_ground_pair(report, sector_k, tol_zero=None):
    """Pick the mass-carrying combination out of a (possibly degenerate)
    numerical zero cluster in the given sector.

    Discrete kernels can contain spurious high-frequency members alongside
    the physical one; projecting the uniform vector onto the cluster kills
    them because they carry (exponentially) small mass. Returns
    (eigenvalue, left, right).
    """
    if sector_k not in report.entries:
        raise ValidationError(f"no spectrum for sector {sector_k}")
    scale = report.scale
    if tol_zero is None:
        tol_zero = 1e-6 * scale
    cluster = [e for e in report.entries[sector_k] if abs(e.eigenvalue) <= tol_zero]
    if not cluster:
        # fall back to the entry of minimal |E|
        cluster = [min(report.entries[sector_k], key=lambda e: abs(e.eigenvalue))]
    VR = np.column_stack([e.right for e in cluster])
    ones = np.ones(VR.shape[0], dtype=complex)
    coef, *_ = np.linalg.lstsq(VR, ones, rcond=None)
    right = VR @ coef
    if np.linalg.norm(right) == 0:
        right = cluster[0].right
    left = None
    if cluster[0].left is not None:
        VL = np.column_stack([e.left for e in cluster])
        coef_l, *_ = np.linalg.lstsq(VL, ones, rcond=None)
        left = VL @ coef_l
        if np.linalg.norm(left) == 0:
            left = cluster[0].left
    emean = np.mean([e.eigenvalue for e in cluster])
    return complex(emean), left, right
