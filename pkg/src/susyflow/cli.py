"""Configuration-driven command line front end.

    susyflow <spectrum|classify|witten|simulate|orbits|check> --config PATH
             [--out DIR] [--seed N] [--threads N]

One experiment per invocation. Every output file embeds the fully resolved
configuration and the artifact version, so runs are reproducible from their
artifacts alone. Exit codes: 0 success, 2 configuration/validation error,
3 numerical (solver) failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__, checks, dynamics, fpoperator, gtomap, spectral, topoanalysis
from .errors import ConfigError, SolverError, SusyflowError, ValidationError
from .mesh import build_mesh
from .vfparse import builtin_flow, flow_from_strings, parse

DEFAULTS = {
    "system": {
        "kind": None,  # "flow" | "map", required
        "flow": {"builtin": None, "params": {}, "components": None, "T": None, "vielbein": None},
        "mesh": {"n": None, "stencil_order": 4},
        "map": {"builtin": None, "params": {}, "A": None, "b": None, "T": 0.0},
        "gto": {"K": 8},
    },
    "solver": {
        "dense_cap": 3000,
        "krylov_m": 30,
        "krylov_count": 6,
        "tau": "auto",
        "tol_eig": 1e-8,
        "tol_zero_rel": 1e-6,
        "tol_pair_rel": 1e-6,
        "tol_class_rel": 1e-6,
    },
    "analysis": {
        "t_samples": [0.1, 1.0, 10.0],
        "n_range": [1, 8],
        "observables": [],
        "cross_check": False,
    },
    "simulate": {
        "dt": 1e-3,
        "steps": 100000,
        "ensemble": 16,
        "save_every": 10,
        "bins": 64,
        "burn_in_fraction": 0.1,
    },
    "output": {"directory": "out", "formats": ["csv", "json"]},
    "seed": 0,
    "threads": None,
}


def _find_line(text, key):
    """Best-effort line number of a config key in the raw file text."""
    leaf = key.split(".")[-1]
    for i, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0]
        if stripped.strip().startswith(f"{leaf}:"):
            return i
    return None


def _merge(defaults, user, path, text):
    out = copy.deepcopy(defaults)
    for key, val in (user or {}).items():
        here = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ConfigError(f"unknown configuration key", key=here, line=_find_line(text, here))
        if isinstance(defaults[key], dict) and not (key in ("params",)):
            if not isinstance(val, dict) and val is not None:
                raise ConfigError(f"expected a mapping", key=here, line=_find_line(text, here))
            out[key] = _merge(defaults[key], val, here, text)
        else:
            out[key] = val
    return out


def load_config(path):
    """Parse, merge with defaults and validate one experiment config."""
    text = Path(path).read_text()
    try:
        user = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}")
    cfg = _merge(DEFAULTS, user, "", text)
    kind = cfg["system"]["kind"]
    if kind not in ("flow", "map"):
        raise ConfigError("system.kind must be exactly one of 'flow' or 'map'",
                          key="system.kind", line=_find_line(text, "kind"))
    for tol_key in ("tol_eig", "tol_zero_rel", "tol_pair_rel", "tol_class_rel"):
        if not cfg["solver"][tol_key] > 0:
            raise ConfigError("tolerances must be positive", key=f"solver.{tol_key}",
                              line=_find_line(text, tol_key))
    if kind == "flow" and cfg["system"]["mesh"]["n"] is None:
        raise ConfigError("flow systems need a mesh", key="system.mesh.n",
                          line=_find_line(text, "n"))
    cfg["_source_text"] = text
    return cfg


def build_flow(cfg):
    fc = cfg["system"]["flow"]
    if fc["builtin"]:
        return builtin_flow(fc["builtin"], fc["params"] or {})
    if fc["components"]:
        if fc["T"] is None:
            raise ConfigError("explicit components need a temperature", key="system.flow.T")
        return flow_from_strings(fc["components"], fc["T"], fc["vielbein"])
    raise ConfigError("flow block needs 'builtin' or 'components'", key="system.flow")


def build_map(cfg):
    mc = cfg["system"]["map"]
    if mc["builtin"]:
        params = dict(mc["params"] or {})
        params.setdefault("T", mc["T"])
        if mc["b"] is not None:
            params["b"] = mc["b"]
        return gtomap.builtin_map(mc["builtin"], params)
    if mc["A"] is None:
        raise ConfigError("map block needs 'builtin' or an integer matrix 'A'", key="system.map")
    b = mc["b"] if mc["b"] is not None else [0.0] * len(mc["A"])
    return gtomap.MapSpec(A=mc["A"], b=b, temperature=mc["T"])


def build_system(cfg):
    """Assemble the operator specified by the config. Returns a dict."""
    if cfg["system"]["kind"] == "flow":
        mesh_cfg = cfg["system"]["mesh"]
        n = mesh_cfg["n"]
        mesh = build_mesh(len(n), n, mesh_cfg["stencil_order"])
        flow = build_flow(cfg)
        ham = fpoperator.assemble_H(mesh, flow)
        sysid = cfg["system"]["flow"]["builtin"] or "flow"
        return {"kind": "flow", "mesh": mesh, "flow": flow, "ham": ham, "id": sysid}
    map_spec = build_map(cfg)
    gto = gtomap.build_gto(map_spec, cfg["system"]["gto"]["K"])
    sysid = cfg["system"]["map"]["builtin"] or "map"
    return {"kind": "map", "map": map_spec, "gto": gto, "id": sysid}


def compute_spectra(cfg, system):
    """Dense spectra when the sectors fit under the cap, Krylov extremal otherwise."""
    cap = cfg["solver"]["dense_cap"]
    tol = cfg["solver"]["tol_eig"]
    if system["kind"] == "map":
        return gtomap.gto_spectrum(system["gto"], system_id=system["id"], cap=cap, tol_eig=tol)
    ham = system["ham"]
    dims = [ham.sector_dim(k) for k in range(ham.mesh.dim + 1)]
    if max(dims) <= cap:
        return spectral.spectra_of_hamiltonian(ham, system_id=system["id"], cap=cap, tol_eig=tol)
    report = spectral.SpectrumReport(system_id=system["id"], kind="flow",
                                     meta={"method": "krylov-min-real", "tol_eig": tol})
    tau = cfg["solver"]["tau"]
    tau = None if tau in (None, "auto") else float(tau)
    count = cfg["solver"]["krylov_count"]
    for k in range(ham.mesh.dim + 1):
        w, vr, res, info = spectral.krylov_extremal(
            ham.blocks[k], count=count, mode="min-real", tau=tau, tol=tol,
            seed=cfg["seed"],
        )
        report.add_sector(k, w, vr, residuals=res, complete=False)
        report.meta[f"sector{k}_info"] = {kk: float(v) for kk, v in info.items()
                                          if isinstance(v, (int, float))}
    return report


def _headers(cfg):
    clean = {k: v for k, v in cfg.items() if not k.startswith("_")}
    return [f"susyflow {__version__}", "config: " + json.dumps(clean, sort_keys=True)]


def _json_header(cfg):
    clean = {k: v for k, v in cfg.items() if not k.startswith("_")}
    return {"version": __version__, "config": clean}


def _outdir(cfg):
    out = Path(cfg["output"]["directory"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_spectrum(cfg):
    system = build_system(cfg)
    report = compute_spectra(cfg, system)
    out = _outdir(cfg)
    report.to_csv(out / "spectrum.csv", header_lines=_headers(cfg))
    if system["kind"] == "flow":
        system["ham"].write_stats_json(out / "operator_stats.json", extra=_json_header(cfg))
    else:
        stats = {
            "dropped_modes": system["gto"].dropped_modes,
            "sectors": [
                {"degree": k, "dimension": system["gto"].sector_dim(k),
                 "nonzeros": int(system["gto"].blocks[k].nnz)}
                for k in range(system["gto"].dim + 1)
            ],
        }
        stats.update(_json_header(cfg))
        (out / "operator_stats.json").write_text(json.dumps(stats, indent=2))
    return 0


def _cross_checks(cfg, system):
    xc = {"lyapunov1": None, "orbit_rate": None}
    if system["kind"] == "map":
        lr = dynamics.map_lyapunov(system["map"], steps=500)
        xc["lyapunov1"] = float(lr.exponents[0])
        n_lo, n_hi = cfg["analysis"]["n_range"]
        try:
            xc["orbit_rate"] = dynamics.orbit_growth_rate(system["map"], range(n_lo, n_hi + 1))
        except SusyflowError:
            xc["orbit_rate"] = None
        return xc
    sim = cfg["simulate"]
    traj_cfg = dynamics.TrajectoryConfig(
        flow=system["flow"], dt=sim["dt"], steps=min(sim["steps"], 60000),
        ensemble=min(sim["ensemble"], 10), seed=cfg["seed"],
        burn_in_fraction=sim["burn_in_fraction"],
    )
    lr = dynamics.lyapunov_spectrum(traj_cfg)
    xc["lyapunov1"] = float(lr.exponents[0])
    xc["lyapunov1_stderr"] = float(lr.stderr[0])
    return xc


def cmd_classify(cfg):
    system = build_system(cfg)
    report = compute_spectra(cfg, system)
    if system["kind"] == "flow" and all(report.complete.values()):
        spectral.pair_bf(report, system["ham"],
                         tol_zero=cfg["solver"]["tol_zero_rel"] * report.scale,
                         tol_pair=cfg["solver"]["tol_pair_rel"] * report.scale)
    cross = _cross_checks(cfg, system) if cfg["analysis"]["cross_check"] else {}
    chaos = topoanalysis.classify(
        report, tol_class_rel=cfg["solver"]["tol_class_rel"],
        t_samples=cfg["analysis"]["t_samples"], cross_checks=cross,
    )
    if chaos.cross_checks.get("lyapunov1") is not None:
        consistent = (chaos.susy_broken == (chaos.cross_checks["lyapunov1"] > 1e-3))
        chaos.cross_checks["susy_lyapunov_consistent"] = bool(consistent)
    out = _outdir(cfg)
    chaos.to_json(out / "chaos_report.json", header=_json_header(cfg))
    report.to_csv(out / "spectrum.csv", header_lines=_headers(cfg))
    return 0


def cmd_witten(cfg):
    system = build_system(cfg)
    out = _outdir(cfg)
    payload = _json_header(cfg)
    if system["kind"] == "map":
        st = gtomap.gto_supertrace(system["gto"])
        payload["supertrace"] = {"re": st.real, "im": st.imag}
    else:
        report = compute_spectra(cfg, system)
        wt = topoanalysis.witten_index(report, cfg["analysis"]["t_samples"])
        payload["witten_index"] = [
            {"t": float(t), "re": w.real, "im": w.imag}
            for t, w in zip(cfg["analysis"]["t_samples"], wt)
        ]
    (out / "witten.json").write_text(json.dumps(payload, indent=2))
    return 0


def cmd_simulate(cfg):
    if cfg["system"]["kind"] != "flow":
        raise ConfigError("simulate needs a flow system", key="system.kind")
    flow = build_flow(cfg)
    sim = cfg["simulate"]
    traj_cfg = dynamics.TrajectoryConfig(
        flow=flow, dt=sim["dt"], steps=sim["steps"], ensemble=sim["ensemble"],
        seed=cfg["seed"], burn_in_fraction=sim["burn_in_fraction"],
        save_every=sim["save_every"],
    )
    times, states = dynamics.integrate_sde(traj_cfg)
    out = _outdir(cfg)
    headers = _headers(cfg) + [f"seed: {cfg['seed']}"]
    dynamics.write_trajectory_csv(out / "trajectory.csv", times, states, header_lines=headers)
    dynamics.write_histogram_csv(out / "histogram.csv", states, bins=sim["bins"],
                                 header_lines=headers)
    return 0


def cmd_orbits(cfg):
    if cfg["system"]["kind"] != "map":
        raise ConfigError("orbits needs a map system", key="system.kind")
    map_spec = build_map(cfg)
    n_lo, n_hi = cfg["analysis"]["n_range"]
    out = _outdir(cfg)
    with open(out / "orbits.csv", "w") as fh:
        for line in _headers(cfg) + [f"seed: {cfg['seed']}"]:
            fh.write(f"# {line}\n")
        fh.write("n,count\n")
        for n in range(n_lo, n_hi + 1):
            count = dynamics.fixed_point_count(map_spec, n)
            fh.write(f"{n},{count}\n")
    return 0


def cmd_check(level):
    results = checks.run_checks(level=level)
    print(checks.format_table(results))
    return 0 if all(r.passed for r in results) else 1


def main(argv=None):
    parser = argparse.ArgumentParser(prog="susyflow", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("spectrum", "classify", "witten", "simulate", "orbits"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--out", default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=None)
    pc = sub.add_parser("check")
    pc.add_argument("level", nargs="?", default="fast", choices=["fast", "full"])
    args = parser.parse_args(argv)

    if args.command == "check":
        return cmd_check(args.level)

    try:
        cfg = load_config(args.config)
        if args.out is not None:
            cfg["output"]["directory"] = args.out
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.threads is not None:
            for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
                os.environ[var] = str(args.threads)
        handler = {
            "spectrum": cmd_spectrum,
            "classify": cmd_classify,
            "witten": cmd_witten,
            "simulate": cmd_simulate,
            "orbits": cmd_orbits,
        }[args.command]
        return handler(cfg)
    except (ConfigError, ValidationError) as exc:
        print(f"configuration error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except SolverError as exc:
        print(f"solver failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
