"""Command pipelines: resolved config in, report dictionary out.

Reports hold only deterministic content (no timings, no timestamps) so that
reruns with an equal config serialise byte for byte the same.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from . import acceptance, frd, geometry, mc, potential, rgflow
from .config import RunConfig
from .errors import InvalidParameter, ZeroModeDivergence
from .lattice import dual_indices

PASS = "pass"
FAIL = "fail"
DIVERGENCE = "divergence"

EXIT_CODES = {PASS: 0, FAIL: 2, DIVERGENCE: 2}


def _report(command: str, cfg: RunConfig, status: str, summary: dict, tables: dict,
            warnings=()) -> dict:
    return {
        "command": command,
        "status": status,
        "exit_code": EXIT_CODES[status],
        "config": cfg.resolved(),
        "summary": _clean(summary),
        "tables": _clean(tables),
        "warnings": cfg.guard_warnings() + list(warnings),
    }


def _clean(obj):
    """Plain JSON types with non-finite floats spelled out."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


def _numerics(cfg: RunConfig) -> frd.FRDNumerics:
    n = cfg.numerics
    return frd.FRDNumerics(h=n.h, series_tol=n.series_tol, decomposition=n.decomposition)


# ----------------------------------------------------------------- frd-report


def frd_report(cfg: RunConfig, out_dir: str | Path | None = None) -> dict:
    """Identity residuals, range violations and asymptotic ratios for one torus."""
    J = cfg.step_distribution()
    geo = cfg.geometry.build()
    s, m2 = cfg.physics.s, cfg.physics.m2
    if cfg.frd.zero_mode and m2 <= 0:
        raise ZeroModeDivergence("the zero-mode weight t_N needs m2 > 0")
    for path in cfg.frd.covariance_files:
        frd.load_covariance_table(path, J)
    profile = frd.build_bump_profile()
    num = _numerics(cfg)
    side = geo.side
    slices = []
    ranges = {}
    for j in range(max(geo.N - 1, 0)):
        try:
            cov = frd.scale_covariance(j, J, s, m2, geo, profile, num, position_samples=True,
                                       max_embedding_side=cfg.numerics.max_embedding_side)
            ranges[str(j)] = frd.range_violation(cov)
        except InvalidParameter:
            cov = frd.scale_covariance(j, J, s, m2, geo, profile, num, position_samples=False)
            ranges[str(j)] = None
        slices.append(cov)
    asym = {str(c.j): 2 * math.pi * (J.v2 + s) * c.origin_value() / math.log(geo.L)
            for c in slices}
    summary = {"side": side, "scales": len(slices), "range_violation": ranges,
               "asymptotic_ratio": asym}
    status = PASS
    k = dual_indices(side)
    k1, k2 = np.meshgrid(k, k, indexing="ij")
    rows = []
    for c in slices:
        rows.extend(_mode_rows(c, k1, k2, side))
    if m2 > 0:
        last, t_N = frd.last_covariance_and_zero_mode(geo.N, J, s, m2, geo, profile, num)
        total = sum((c.hat_values for c in slices), np.zeros((side, side))) + last.hat_values
        exact = frd.covariance_C_hat(J, s, m2, 2 * math.pi * k1 / side, 2 * math.pi * k2 / side)
        nz = (k1 != 0) | (k2 != 0)
        residual = float(np.max(np.abs(total - exact)[nz] / exact[nz]))
        summary.update(identity_residual=residual, t_N=t_N)
        rows.extend(_mode_rows(last, k1, k2, side))
        slices.append(last)
        if residual >= acceptance.IDENTITY_TOL:
            status = FAIL
    if any(v is not None and v >= acceptance.RANGE_TOL for v in ranges.values()):
        status = FAIL
    if out_dir is not None and cfg.frd.save_tables:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        names = []
        for c in slices:
            name = f"covariance_{c.label}_{int(c.j)}.dgcov"
            c.save(out / name)
            names.append(name)
        summary["covariance_tables"] = names
    return _report("frd-report", cfg, status, summary, {"modes": rows})


def _mode_rows(cov, k1, k2, side):
    p1 = (2 * math.pi * k1 / side).ravel()
    p2 = (2 * math.pi * k2 / side).ravel()
    vals = cov.hat_values.ravel()
    return [{"p1": a, "p2": b, "j": cov.j if cov.label == "scale" else "N", "gamma_hat": v}
            for a, b, v in zip(p1, p2, vals)]


# ----------------------------------------------------------------------- flow


def flow(cfg: RunConfig) -> dict:
    J = cfg.step_distribution()
    ph = cfg.physics
    L = cfg.geometry.L
    data = frd.flow_gamma_data(J, L, cfg.numerics.j_max, ph.s)
    state, warns = rgflow.initial_state(ph.beta, ph.s, ph.q_max)
    res = rgflow.run_flow(state, data, J, L, ph.beta, r=ph.r, delta=ph.delta)
    contracted = res.j0 is not None and not res.diverged
    status = PASS if contracted else DIVERGENCE
    summary = res.summary()
    summary["norms"] = res.norms
    return _report("flow", cfg, status, summary, {"trajectory": res.rows()},
                   warns + res.warnings)


# ------------------------------------------------------------------------- mc


def monte_carlo(cfg: RunConfig) -> dict:
    """Heat-bath chains for the smeared field plus a height-difference diagnostic."""
    J = cfg.step_distribution()
    ph = cfg.physics
    side = cfg.geometry.build().side
    model = mc.DGModel((side, side), ph.beta, J, ph.m2, cfg.mc.pinned)
    fN = potential.discretise(cfg.mc.test_function, side)
    mid = (side // 2, side // 2)
    dists = [r for r in (1, 2, 4, 8, 16, 32, 64) if r <= side // 2]
    obs = {"X": mc.smeared_observable(fN, ph.beta), "sigma_mid^2": mc.site_square(mid)}
    obs.update({f"dh2_r{r}": (lambda s, r=r: (s[..., r, 0] - s[..., 0, 0]) ** 2)
                for r in dists})
    stats, series = mc.run_chains(model, obs, cfg.mc.sweeps, cfg.mc.chains, cfg.mc.burn_in,
                                  seed=cfg.seed, window=cfg.numerics.window, check_tau=False)
    green = potential.green_form(fN, J)
    moments = mc.estimate_smeared_moments(series["X"], fN, ph.beta, J, green,
                                          check_tau=cfg.mc.check_tau)
    summary = {
        "sites": side * side, "pinned": cfg.mc.pinned, "green_form": green,
        "free_variance": moments.free_value,
        "variance_ratio_free": moments.variance_ratio_free,
        "gaussian_mgf": moments.gaussian_mgf,
        "beta_eff": rgflow.beta_eff(J, ph.beta, ph.s),
        "height_difference_variance": {str(r): stats[f"dh2_r{r}"].mean for r in dists},
    }
    return _report("mc", cfg, PASS, summary, {"observables": stats.to_rows()})


# ----------------------------------------------------------------- inequalities


def inequalities(cfg: RunConfig) -> dict:
    """Inequality fuzz, closure size bounds and the reblocking identity."""
    rows, fuzz, fuzz_ok = acceptance.inequality_fuzz(cfg.seed, cfg.numerics.inequality_fields)
    reb = acceptance.reblocking_identity()
    rep = geometry.setsizes_margin(5, 0.0, cfg.numerics.closure_max_blocks)
    closure_ok = rep.margin_general >= 0 and rep.margin_large >= 0
    ok = fuzz_ok and reb.passed and closure_ok
    summary = {"lattice": fuzz, "reblocking": reb.details, "closure": rep.to_dict()}
    return _report("inequalities", cfg, PASS if ok else FAIL, summary, {"checks": rows})


# ------------------------------------------------------------------- validate


def validate(cfg: RunConfig) -> dict:
    J = cfg.step_distribution()
    for path in cfg.frd.covariance_files:
        frd.load_covariance_table(path, J)
    results = acceptance.run(cfg.validate_.criteria, seed=cfg.seed)
    rows = []
    for r in results:
        d = r.to_dict()
        d.pop("seconds")
        rows.append(d)
    hard_ok = all(r.passed for r in results if not r.soft)
    summary = {"criteria": [r.number for r in results],
               "passed": [r.number for r in results if r.passed],
               "failed": [r.number for r in results if not r.passed and not r.soft],
               "soft_failed": [r.number for r in results if not r.passed and r.soft]}
    return _report("validate", cfg, PASS if hard_ok else FAIL, summary, {"criteria": rows})


COMMANDS = {
    "validate": validate,
    "frd-report": frd_report,
    "flow": flow,
    "mc": monte_carlo,
    "inequalities": inequalities,
}
