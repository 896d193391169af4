"""Command-line experiment runner.

``landau-lab <subcommand> --config run.yaml [--out DIR] [--threads N] [--seed S]``

Each run validates its YAML config against a versioned schema, fans sweep
points out to a thread pool, merges the results in sweep-key order, and
writes ``summary.json`` (sorted keys, no timestamps), per-subcommand CSV
tables and ``manifest.txt`` into the output directory.  A timestamped
:class:`RunRecord` is appended to ``records.jsonl`` next to them.

Exit codes: 0 pass, 2 certificate failure, 3 config error.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import logging
import math
import platform
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path

import click
import jsonschema
import numpy as np
import scipy
import yaml

from . import carleman as cm
from . import cluster_lab as cl
from . import oracle
from . import resolvent3d as r3
from .landau_core import (
    BasisTruncation,
    build_grid,
    disk_grid,
    eigenfunction_eval,
    projection_kernel,
    rho_exponent,
)

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
EXIT_PASS, EXIT_CERT, EXIT_CONFIG = 0, 2, 3
SUBCOMMANDS = ("spectrum", "clusters", "sharpness", "projnorm", "lap", "sumbound", "carleman", "verify")


class ConfigError(ValueError):
    pass


# ── config schema and defaults ────────────────────────────────────────

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_int = {"type": "integer", "minimum": 0}
_nums = {"type": "array", "items": _num, "minItems": 1}
_poss = {"type": "array", "items": _pos, "minItems": 1}
_ints = {"type": "array", "items": _int, "minItems": 1}


def _block(props: dict) -> dict:
    return {"type": "object", "properties": props, "additionalProperties": False}


_potential = _block({
    "family": {"enum": ["gaussian", "bump", "power_tail"]},
    "amplitude": {"type": "number", "minimum": 0},
    "width": _pos,
    "radius": _pos,
    "power": _pos,
})

BLOCKS = {
    "spectrum": _block({"half_width": _pos, "h": _pos, "levels": _int, "count": _int,
                        "rel_tol": _pos, "galerkin_k0": _int, "potential": _potential}),
    "clusters": _block({"k0": _ints, "r": _poss, "window": _int, "potential": _potential,
                        "window_tol": _pos}),
    "sharpness": _block({"k0": _ints, "r": _pos, "window": _int, "slope_tol": _pos, "n_random": _int}),
    "projnorm": _block({"k": _ints, "q": _poss, "slope_tol": _pos, "n_random": _int}),
    "lap": _block({"J": _nums, "eps": _poss, "q": _pos, "amplitude": {"type": "number", "minimum": 0},
                   "axial_h": _pos, "k_max_v": _int, "m_max_v": _int, "n_r": _int, "n_theta": _int,
                   "extent": _pos, "stab_tol": _pos}),
    "sumbound": _block({"q": _poss, "k0": _ints, "t_min": _pos, "t_max": _pos, "n_t": _int,
                        "delta": _poss, "c_max": _pos, "stab_tol": _pos}),
    "carleman": _block({"tau_min": _pos, "tau_max": _pos, "n_tau": _int, "sum_taus": _poss,
                        "t_min": _pos, "t_max": _pos, "n_t": _int, "c_max": _pos, "axial_h": _pos,
                        "n_r": _int, "n_theta": _int, "extent": _pos, "stab_tol": _pos}),
    "verify": _block({"half_width": _pos, "h": _pos, "k_max": _int, "m_max": _int, "tol": _pos}),
}

SCHEMA = {
    "type": "object",
    "properties": {"schema_version": {"const": SCHEMA_VERSION}, "seed": _int,
                   **BLOCKS},
    "required": ["schema_version"],
    "additionalProperties": False,
}

DEFAULTS = {
    "spectrum": {"half_width": 7.0, "h": 0.05, "levels": 5, "count": 6, "rel_tol": 0.01, "galerkin_k0": 2,
                 "potential": {"family": "gaussian", "amplitude": 0.0, "width": 1.0}},
    "clusters": {"k0": [8, 12, 16, 24, 32, 40], "r": [1.5, 3.0], "window": 2, "window_tol": 0.01,
                 "potential": {"family": "gaussian", "amplitude": 0.3, "width": 1.0}},
    "sharpness": {"k0": [8, 12, 16, 24, 32, 40], "r": 1.5, "window": 2, "slope_tol": 0.15, "n_random": 3},
    "projnorm": {"k": [4, 8, 16, 24, 32, 40], "q": [4.0, 6.0], "slope_tol": 0.15, "n_random": 2},
    "lap": {"J": [3.6, 4.0, 4.4], "eps": [1e-1, 1e-2, 1e-3, 1e-4], "q": 4.0, "amplitude": 0.05,
            "axial_h": 0.05, "k_max_v": 20, "m_max_v": 40, "n_r": 48, "n_theta": 128, "extent": 7.0,
            "stab_tol": 0.05},
    "sumbound": {"q": [3.0, 4.0, 5.0], "k0": [5, 10, 20, 40], "t_min": 0.01, "t_max": 10.0, "n_t": 9,
                 "delta": [0.1, 0.5, 1.0], "c_max": 10.0, "stab_tol": 0.05},
    "carleman": {"tau_min": 0.8, "tau_max": 8.0, "n_tau": 12, "sum_taus": [0.9, 2.2, 5.1], "t_min": 0.01,
                 "t_max": 10.0, "n_t": 9, "c_max": 10.0, "axial_h": 0.02, "n_r": 60, "n_theta": 64,
                 "extent": 9.0, "stab_tol": 0.10},
    "verify": {"half_width": 7.0, "h": 0.05, "k_max": 6, "m_max": 8, "tol": 1e-6},
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def load_config(path: str | Path, subcommand: str, seed: int | None = None) -> dict:
    """Parse, validate and complete a config; the returned dict is what gets hashed."""
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    if raw is None:
        raw = {}
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"config violates schema: {exc.message}") from exc
    cfg = {"schema_version": SCHEMA_VERSION, "seed": int(raw.get("seed", 0)),
           subcommand: _merge(DEFAULTS[subcommand], raw.get(subcommand, {}))}
    if seed is not None:
        cfg["seed"] = int(seed)
    return cfg


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


# ── results ───────────────────────────────────────────────────────────


@dataclass
class Outcome:
    summary: dict
    tables: dict = field(default_factory=dict)  # name -> (columns, rows)
    passed: bool = True


@dataclass
class RunRecord:
    config_hash: str
    subcommand: str
    started: float
    finished: float
    passed: bool
    certificates: dict
    outputs: list

    def to_json(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True)


def _clean(x):
    """JSON-safe, deterministic representation (floats kept at full precision)."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def fit_report(records: list[dict], tol: float) -> dict:
    """Log-log fits of ``records`` (each ``{"name", "samples", "predicted"}``) with pass/fail."""
    out = {}
    ok = True
    for rec in sorted(records, key=lambda r: r["name"]):
        try:
            fit = cl.loglog_fit(rec["samples"], rec["predicted"])
        except cl.DegenerateFitError as exc:
            out[rec["name"]] = {"error": str(exc), "passed": False, "degenerate": True}
            ok = False
            continue
        passed = fit.within(tol)
        ok &= passed
        out[rec["name"]] = {**fit.to_dict(), "tolerance": tol, "passed": passed, "degenerate": False}
    return {"fits": out, "passed": ok}


def _mapper(threads: int):
    if threads <= 1:
        return None
    return ThreadPoolExecutor(max_workers=threads)


def _pmap(fn, items, threads: int):
    """Order-stable map (results come back in input order)."""
    items = list(items)
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def _potential_from(block: dict, r: float = 1.5) -> cl.PotentialSpec:
    fam = block.get("family", "gaussian")
    params = {k: block[k] for k in ("width", "radius", "power") if k in block}
    return cl.PotentialSpec(fam, params, r, "negative", float(block.get("amplitude", 0.0)))


# ── subcommands ───────────────────────────────────────────────────────


def run_spectrum(c: dict, seed: int, threads: int) -> Outcome:
    pr = oracle.FDProblem(c["half_width"], c["h"])

    def level(k):
        lam = 2 * k + 1
        sp = oracle.fd_spectrum(pr, count=c["count"], sigma=lam - 0.02)
        bulk = sp.eigenvalues[sp.bulk] if sp.bulk.any() else sp.eigenvalues
        e = float(bulk[np.argmin(np.abs(bulk - lam))])
        return [k, lam, e, abs(e - lam) / lam, float(sp.boundary_mass.min())]

    rows = _pmap(level, range(c["levels"]), threads)
    passed = all(r[3] <= c["rel_tol"] for r in rows)
    # Galerkin (basis) eigenvalues of H0 + V on a small window
    V = _potential_from(c["potential"])
    k0 = c["galerkin_k0"]
    grid = cl.grid_for_potential(V, k0 + 2) if V.scale > 0 else build_grid(8.0, 6.0, level=k0 + 2)
    tr = BasisTruncation(k0 + 2, min(cl.m_max_for(V, k0 + 2), 60) if V.scale > 0 else 8)
    rep = cl.cluster_spectrum(k0, V, tr, grid, min(2, k0))
    summary = {"fd_levels": rows, "galerkin": rep.to_dict(),
               "galerkin_eigenvalues": sorted(set(np.round(rep.eigenvalues, 12).tolist())),
               "tolerance": c["rel_tol"], "passed": passed}
    return Outcome(summary, {"spectrum.csv": (("k", "lambda", "fd_eigenvalue", "rel_err", "boundary_mass"), rows)},
                   passed)


def run_clusters(c: dict, seed: int, threads: int) -> Outcome:
    rows, results, passed = [], {}, True
    for r in c["r"]:
        V = _potential_from(c["potential"], r)
        ex = _mapper(threads)
        try:
            exp = cl.width_scaling_experiment(c["k0"], "upper", V, r, c["window"], seed=seed, executor=ex)
        finally:
            if ex is not None:
                ex.shutdown()
        ok_window = all(rep.window_change < c["window_tol"] for rep in exp.reports)
        results[str(r)] = {**exp.to_dict(), "window_ok": ok_window, "degenerate_fit": exp.fit is None}
        passed &= exp.holds and ok_window
        for rep in exp.reports:
            rows.append([r, rep.k0, rep.lam, rep.delta_max, rep.bound_rhs, rep.margin, rep.window_change])
    cols = ("r", "k0", "lambda", "delta_max", "bound_rhs", "margin", "window_change")
    return Outcome({"experiments": results, "window_tol": c["window_tol"], "passed": passed},
                   {"clusters.csv": (cols, rows)}, passed)


def run_sharpness(c: dict, seed: int, threads: int) -> Outcome:
    ex = _mapper(threads)
    try:
        exp = cl.width_scaling_experiment(c["k0"], "sharp", None, c["r"], c["window"], seed=seed, executor=ex)
    finally:
        if ex is not None:
            ex.shutdown()
    nu = float(cl.nu_exponent(2, c["r"]))
    rows = []
    for rep, cert in zip(exp.reports, exp.certificates):
        rows.append([rep.k0, rep.lam, rep.delta_max, cert.c0, cert.a, cert.mu, cert.eigenvalue, int(cert.passed)])
    certs_ok = all(ct.passed for ct in exp.certificates)
    slope_ok = exp.fit is not None and abs(exp.fit.slope - nu) <= c["slope_tol"]
    summary = {**exp.to_dict(), "predicted": nu, "slope_tol": c["slope_tol"], "certificates_ok": certs_ok,
               "slope_ok": slope_ok, "passed": certs_ok and slope_ok}
    cols = ("k0", "lambda", "delta_max", "c0", "a", "mu", "eigenvalue", "passed")
    return Outcome(summary, {"sharpness.csv": (cols, rows)}, certs_ok and slope_ok)


def run_projnorm(c: dict, seed: int, threads: int) -> Outcome:
    jobs = sorted((float(q), int(k)) for q in c["q"] for k in c["k"])

    def one(job):
        q, k = job
        grid = cl.extremal_grid(k, 0)
        res = cl.projection_norm_estimate(k, q, grid, n_random=c["n_random"], seed=seed + k)
        return [q, k, 2 * k + 1, res.value, res.start, int(res.converged)]

    rows = _pmap(one, jobs, threads)
    recs = [{"name": f"q={q:g}", "predicted": float(rho_exponent(2, q)),
             "samples": [(r[2], r[3]) for r in rows if r[0] == q]} for q in sorted({r[0] for r in rows})]
    rep = fit_report(recs, c["slope_tol"])
    cols = ("q", "k", "lambda", "value", "start", "converged")
    return Outcome({**rep, "rows": rows}, {"projnorm.csv": (cols, rows)}, rep["passed"])


def _lap_inputs(c: dict):
    ax = r3.AxialGrid.symmetric(7.0, c["axial_h"])
    v1 = np.exp(-0.5 * ax.z**2)
    v2 = np.exp(-((ax.z - 0.5) ** 2))
    f = r3.LayeredFunction.separable([(0, 0, 1.0, v1), (1, 1, 0.5, v2)], ax)
    g = r3.LayeredFunction.separable([(0, 0, 1.0, v2), (1, 1, 1.0, v1)], ax)
    grid = disk_grid(c["extent"], c["n_r"], c["n_theta"])
    return f, g, grid


def run_lap(c: dict, seed: int, threads: int) -> Outcome:
    f, g, grid = _lap_inputs(c)
    free = r3.lap_bilinear_scan(c["J"], c["eps"], f, g, None, c["q"], grid)
    tables = [r.as_csv() for r in free.rows]
    summary = {"free": {"stabilization": free.stabilization(), "rows": [r.as_csv() for r in free.rows]}}
    passed = free.stabilization() < c["stab_tol"]
    if c["amplitude"] > 0:
        V = r3.LayeredPotential(cl.gaussian_potential(c["amplitude"], 1.0), 1.0)
        eps2 = sorted(c["eps"])[:2]

        def one(lam):
            return r3.lap_bilinear_scan([lam], eps2, f, g, V, c["q"], grid, c["k_max_v"], c["m_max_v"])

        try:
            scans = _pmap(one, c["J"], threads)
        except r3.SmallnessGateError as exc:
            summary["perturbed"] = {"gate": "failed", "reason": str(exc)}
            return Outcome({**summary, "passed": False}, {"lap.csv": (r3.LAP_COLUMNS, tables)}, False)
        prow = [r for s in scans for r in s.rows]
        stab = max(s.stabilization() for s in scans)
        bound_ok = True
        for r in prow:
            fr = next(x for x in free.rows if x.lam == r.lam and x.eps == r.eps)
            b = r.bs_norm
            lo, hi = (1 - b) / (1 + b), (1 + b) / (1 - b)
            bound_ok &= lo * fr.value <= r.value <= hi * fr.value
        tables += [r.as_csv() for r in prow]
        summary["perturbed"] = {"stabilization": stab, "gate_norms": sorted(r.bs_norm for r in prow),
                                "series_bound_ok": bound_ok, "rows": [r.as_csv() for r in prow]}
        passed &= stab < c["stab_tol"] and bound_ok
    summary.update({"stab_tol": c["stab_tol"], "passed": passed})
    return Outcome(summary, {"lap.csv": (r3.LAP_COLUMNS, tables)}, passed)


def run_sumbound(c: dict, seed: int, threads: int) -> Outcome:
    lat = r3.SumLattice(tuple(c["q"]), tuple(c["k0"]), c["t_min"], c["t_max"], c["n_t"], tuple(c["delta"]))
    runs = _pmap(lambda job: r3.kernel_sum_check(job[0], k_scale=job[1]),
                 [(lat, 1), (lat.refined(), 1), (lat, 2)], threads)
    base, fine, doubled = (r.max_ratio for r in runs)
    stable = abs(fine - base) <= c["stab_tol"] * base and abs(doubled - base) <= c["stab_tol"] * base
    passed = base <= c["c_max"] and stable
    rows = [[r["q"], r["k0"], r["delta"], r["t"], r["lhs"], r["rhs"], r["ratio"], r["k_max"]] for r in runs[0].rows]
    summary = {"max_ratio": base, "refined_max_ratio": fine, "doubled_k_max_ratio": doubled,
               "argmax": runs[0].argmax, "c_max": c["c_max"], "stab_tol": c["stab_tol"], "stable": stable,
               "passed": passed}
    cols = ("q", "k0", "delta", "t", "lhs", "rhs", "ratio", "k_max")
    return Outcome(summary, {"sumbound.csv": (cols, rows)}, passed)


def _carleman_u(c: dict, h: float):
    ax = r3.AxialGrid.symmetric(1.2, h)
    v = cm.bump(ax.z, -1.0, 1.0)
    return r3.LayeredFunction.separable([(0, 0, 1.0, v), (1, 1, 0.5, v)], ax)


def run_carleman(c: dict, seed: int, threads: int) -> Outcome:
    # closed form vs quadrature and the pointwise bound
    quad_err, bound_ok = 0.0, True
    for tau in (0.3, 1.3, 2.9, 4.0):
        for k in (0, 2, 5):
            om = float(cm.frequency(k))
            if abs(tau - om) < 1e-9:
                continue
            ts = np.array([-3.0, -0.7, -0.05, 0.0, 0.05, 0.7, 3.0])
            mc = cm.carleman_multiplier(ts, tau, om)
            quad_err = max(quad_err, max(abs(a - cm.multiplier_by_quadrature(t, tau, om)) for t, a in zip(ts, mc)))
            bound_ok &= bool(np.all(np.abs(mc) <= cm.multiplier_bound(ts, tau, om)))
    ts = np.geomspace(c["t_min"], c["t_max"], c["n_t"])
    sweep = cm.multiplier_sweep(c["sum_taus"], ts)
    sweep2 = cm.multiplier_sweep(c["sum_taus"], ts, k_scale=2)
    # round trip at h and h/2
    res = []
    for h in (0.04, 0.02):
        ax = r3.AxialGrid.symmetric(3.0, h)
        v = cm.bump(ax.z, -1.0, 1.0)
        f = r3.LayeredFunction.separable([(0, 0, 1.0, v), (3, 2, 0.4, v * np.exp(-ax.z**2))], ax)
        res.append(cm.conjugated_roundtrip_residual(cm.CarlemanParams(1.3), f))
    order = math.log2(res[0] / res[1])
    # tau sweep, base and refined grids
    taus = cm.admissible_taus(c["tau_min"], c["tau_max"], c["n_tau"])
    grid = disk_grid(c["extent"], c["n_r"], c["n_theta"])
    fine_grid = disk_grid(c["extent"], int(1.5 * c["n_r"]), 2 * c["n_theta"])
    u = _carleman_u(c, c["axial_h"])
    u2 = _carleman_u(c, 0.5 * c["axial_h"])
    both = _pmap(lambda job: cm.tau_sweep(job[0], taus, job[1]), [(u, grid), (u2, fine_grid)], threads)
    c_i, c_i_fine = max(r.ratio for r in both[0]), max(r.ratio for r in both[1])
    stable = abs(c_i - c_i_fine) <= c["stab_tol"] * c_i
    passed = (quad_err < 1e-8 and bound_ok and sweep.max_ratio <= c["c_max"]
              and abs(sweep2.max_ratio - sweep.max_ratio) <= 0.05 * sweep.max_ratio
              and res[1] < 1e-3 and order > 1.8 and stable)
    summary = {"quadrature_max_error": quad_err, "pointwise_bound_ok": bound_ok,
               "sum_max_ratio": sweep.max_ratio, "sum_max_ratio_doubled": sweep2.max_ratio,
               "roundtrip_residuals": res, "roundtrip_order": order, "empirical_C_I": c_i,
               "empirical_C_I_refined": c_i_fine, "stable": stable, "c_max": c["c_max"],
               "stab_tol": c["stab_tol"], "passed": passed}
    rows = [r.as_csv() for r in both[0]]
    return Outcome(summary, {"carleman.csv": (cm.CARLEMAN_COLUMNS, rows)}, passed)


def run_verify(c: dict, seed: int, threads: int) -> Outcome:
    checks = {}
    # Laguerre basis: orthonormality and kernel against eigenfunction sums
    grid = build_grid(12.0, 8.0, level=c["k_max"], m_max=c["m_max"])
    basis = [(k, m) for k in range(c["k_max"] + 1) for m in range(c["m_max"] + 1)]
    F = np.stack([grid.sample_eigenfunction(k, m).ravel() for k, m in basis])
    G = (F.conj() * grid.weights.ravel()) @ F.T
    checks["orthonormality"] = float(np.abs(G - np.eye(len(basis))).max())
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-4.0, 4.0, size=(6, 2))
    kerr = 0.0
    for k in range(c["k_max"] + 1):
        for x, y in zip(pts[:3], pts[3:]):
            kerr = max(kerr, abs(projection_kernel(k, x, y) - oracle.kernel_by_sum(k, x, y, 200)))
    checks["kernel_vs_sum"] = float(kerr)
    checks["phi00_origin"] = float(abs(eigenfunction_eval(0, 0, np.zeros(2))))
    # finite-difference spectrum
    pr = oracle.FDProblem(c["half_width"], c["h"])
    fd = []
    for k in range(3):
        sp = oracle.fd_spectrum(pr, count=4, sigma=2 * k + 1 - 0.02)
        b = sp.eigenvalues[sp.bulk]
        fd.append(float(np.abs(b - (2 * k + 1)).min() / (2 * k + 1)))
    checks["fd_levels_rel_err"] = fd
    # multiplier quadrature
    om = math.sqrt(5.0)
    checks["multiplier_quadrature"] = abs(float(cm.carleman_multiplier(0.7, 1.3, om))
                                          - cm.multiplier_by_quadrature(0.7, 1.3, om))
    passed = (checks["orthonormality"] < c["tol"] and checks["kernel_vs_sum"] < c["tol"]
              and max(fd) < 0.01 and checks["multiplier_quadrature"] < 1e-8)
    rows = [[name, json.dumps(_clean(v))] for name, v in sorted(checks.items())]
    return Outcome({"checks": checks, "tol": c["tol"], "passed": passed}, {"verify.csv": (("check", "value"), rows)},
                   passed)


RUNNERS = {
    "spectrum": run_spectrum,
    "clusters": run_clusters,
    "sharpness": run_sharpness,
    "projnorm": run_projnorm,
    "lap": run_lap,
    "sumbound": run_sumbound,
    "carleman": run_carleman,
    "verify": run_verify,
}

CERTIFICATE_ERRORS = (cl.ClusterError, r3.TailCertificateError, r3.SmallnessGateError, cm.ResonanceError)


def _versions() -> dict:
    try:
        pkg = metadata.version("artifact")
    except metadata.PackageNotFoundError:  # pragma: no cover - running from a source tree
        pkg = "source"
    return {"landau_lab": pkg, "numpy": np.__version__, "scipy": scipy.__version__, "python": platform.python_version()}


def _write_csv(path: Path, columns, rows):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])


def run(subcommand: str, config_path: str | Path, out: str | Path | None = None, threads: int | None = None,
        seed: int | None = None) -> int:
    """Run one subcommand end to end and return its exit status."""
    if subcommand not in RUNNERS:
        logger.error("unknown subcommand %s", subcommand)
        return EXIT_CONFIG
    try:
        cfg = load_config(config_path, subcommand, seed)
    except ConfigError as exc:
        logger.error("%s", exc)
        return EXIT_CONFIG
    h = config_hash(cfg)
    outdir = Path(out) if out is not None else Path("runs") / f"{subcommand}-{h[:12]}"
    outdir.mkdir(parents=True, exist_ok=True)
    n_threads = max(1, int(threads or 1))
    started = time.time()
    try:
        outcome = RUNNERS[subcommand](cfg[subcommand], cfg["seed"], n_threads)
    except CERTIFICATE_ERRORS as exc:
        outcome = Outcome({"error": f"{type(exc).__name__}: {exc}", "passed": False}, {}, False)
    summary = {"subcommand": subcommand, "config": cfg, "config_hash": h, "schema_version": SCHEMA_VERSION,
               "result": _clean(outcome.summary), "passed": bool(outcome.passed)}
    (outdir / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    outputs = ["summary.json"]
    for name, (cols, rows) in sorted(outcome.tables.items()):
        _write_csv(outdir / name, cols, rows)
        outputs.append(name)
    manifest = [f"config_hash {h}", f"subcommand {subcommand}", f"schema_version {SCHEMA_VERSION}"]
    manifest += [f"{k} {v}" for k, v in sorted(_versions().items())]
    manifest += [f"output {o}" for o in outputs]
    (outdir / "manifest.txt").write_text("\n".join(manifest) + "\n")
    rec = RunRecord(h, subcommand, started, time.time(), bool(outcome.passed),
                    {"passed": bool(outcome.passed)}, outputs)
    with (outdir / "records.jsonl").open("a") as fh:
        fh.write(rec.to_json() + "\n")
    return EXIT_PASS if outcome.passed else EXIT_CERT


@click.command(context_settings={"help_option_names": ["-h", "--help"]})
@click.argument("subcommand", type=click.Choice(SUBCOMMANDS))
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False),
              help="YAML experiment config.")
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Output directory.")
@click.option("--threads", type=int, default=1, show_default=True, help="Worker threads for sweeps.")
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("-v", "--verbose", is_flag=True, help="Log progress.")
def main(subcommand, config_path, out, threads, seed, verbose):
    """Landau-level spectral experiments."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(message)s")
    code = run(subcommand, config_path, out, threads, seed)
    click.echo({EXIT_PASS: "PASS", EXIT_CERT: "CERTIFICATE FAILURE", EXIT_CONFIG: "CONFIG ERROR"}[code])
    sys.exit(code)


if __name__ == "__main__":  # pragma: no cover
    main()
