"""Coupling-constant flow with the polymer coordinate frozen at zero.

With ``K = 0`` the flow of ``(E, s, z)`` is explicit: every charge-``q``
coupling is multiplied by ``L^2 exp(-beta q^2 Gamma_{j+1}(0) / 2)``, the
stiffness ``s`` is unchanged, and ``E`` collects ``-s`` times the second
difference of ``Gamma_{j+1}`` at the origin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DependencyError, InvalidParameter, SubcriticalParameter
from .lattice import StepDistribution


def beta_free(J: StepDistribution) -> float:
    """``8 pi v_J^2``."""
    return 8.0 * math.pi * J.v2


def beta_eff(J: StepDistribution, beta: float, s: float) -> float:
    """``beta / (1 + s / v_J^2)``."""
    denom = 1.0 + s / J.v2
    if denom <= 0:
        raise InvalidParameter("need s > -v_J^2")
    return beta / denom


def default_c_f(gamma: float) -> float:
    return gamma / 4.0


@dataclass(frozen=True)
class CouplingState:
    j: int
    E: float
    s: float
    z: tuple[float, ...]

    def __post_init__(self):
        vals = (self.E, self.s, *self.z)
        if not all(math.isfinite(v) for v in vals):
            raise InvalidParameter("coupling state has non-finite entries")

    @property
    def q_max(self) -> int:
        return len(self.z)

    def norm(self, beta: float, c_f: float) -> float:
        """``max{|s|, sup_q e^{c_f beta q} |z^(q)|}``."""
        zs = np.abs(np.asarray(self.z, dtype=float))
        if zs.size == 0:
            return abs(self.s)
        q = np.arange(1, zs.size + 1)
        with np.errstate(over="ignore"):
            weighted = np.exp(c_f * beta * q) * zs
        return float(max(abs(self.s), weighted.max()))

    def to_dict(self) -> dict:
        return {"j": self.j, "E": self.E, "s": self.s, "z": list(self.z)}


def state_norm(s: float, z, beta: float, c_f: float) -> float:
    return CouplingState(0, 0.0, s, tuple(z)).norm(beta, c_f)


def charge_integral(q: int, beta: float, gamma0: float) -> float:
    """``E[exp(i sqrt(beta) q zeta)] = exp(-beta q^2 Gamma(0) / 2)``."""
    if gamma0 < 0:
        raise InvalidParameter("variance must be nonnegative")
    return math.exp(-0.5 * beta * q * q * gamma0)


def second_difference(gamma_data: dict) -> float:
    """``2 Gamma(0) - Gamma(e1) - Gamma(-e1)``."""
    g0 = gamma_data["gamma0"]
    g1 = gamma_data["gamma_e1"]
    gm1 = gamma_data.get("gamma_me1", g1)
    return 2.0 * g0 - g1 - gm1


def contraction_factor(q: int, L: int, beta: float, gamma0: float) -> float:
    return L * L * charge_integral(q, beta, gamma0)


def step_couplings(state: CouplingState, gamma_data: dict | None, L: int,
                   beta: float) -> CouplingState:
    """One renormalisation step ``j -> j+1`` of the truncated flow."""
    if not gamma_data or "gamma0" not in gamma_data or "gamma_e1" not in gamma_data:
        raise DependencyError(f"covariance data for scale {state.j + 1} is missing")
    g0 = gamma_data["gamma0"]
    z = tuple(contraction_factor(q, L, beta, g0) * zq for q, zq in enumerate(state.z, 1))
    E = state.E - state.s * second_difference(gamma_data)
    return CouplingState(j=state.j + 1, E=E, s=state.s, z=z)


def closed_form_z(z0, gammas, L: int, beta: float) -> np.ndarray:
    """``z_j^(q) = z_0^(q) prod_{k<j} L^2 exp(-beta q^2 Gamma_{k+1}(0)/2)``, rows ``j = 0..len(gammas)``."""
    z0 = np.asarray(z0, dtype=float)
    q = np.arange(1, z0.size + 1)
    logf = 2.0 * math.log(L) - 0.5 * beta * np.outer(np.asarray(gammas, dtype=float), q**2)
    cum = np.vstack([np.zeros(z0.size), np.cumsum(logf, axis=0)])
    return z0[None, :] * np.exp(cum)


def h_parameter(J: StepDistribution, beta: float, r: float, c_f: float,
                c_h: float = 1.0) -> float:
    """``h = max{c_f^{1/2}, r c_h rho^-2 sqrt(beta), rho^-1}``."""
    rho = J.rho
    return max(math.sqrt(c_f), r * c_h * math.sqrt(beta) / rho**2, 1.0 / rho)


def alpha_loc(L: int, beta: float, h: float, r: float, gamma0: float, C: float = 1.0,
              tol: float = 1e-16, q_cap: int = 10_000) -> float:
    """``C L^-3 (log L)^{3/2} + C min{1, sum_q e^{sqrt(beta) q h} e^{-(q - 1/2) r beta Gamma(0)}}``."""
    base = C * L**-3.0 * math.log(L) ** 1.5
    log_ratio = math.sqrt(beta) * h - r * beta * gamma0
    if log_ratio >= 0:
        return base + C
    total = 0.0
    for q in range(1, q_cap + 1):
        log_term = math.sqrt(beta) * q * h - (q - 0.5) * r * beta * gamma0
        term = math.exp(log_term) if log_term < 700 else math.inf
        total += term
        if total >= 1.0 or term < tol * max(total, 1e-300):
            break
    return base + C * min(1.0, total)


def critical_scale_j0(J: StepDistribution, L: int, delta: float, beta: float, r: float,
                      s: float, gamma_data: list[dict]) -> int:
    """Smallest ``j`` from which ``L^2 exp(-r beta Gamma_{j+1}(0)/2) <= L^-delta`` on every tested scale."""
    if delta <= 0 or not 0 < r <= 1:
        raise InvalidParameter("need delta > 0 and r in (0, 1]")
    if r * beta_eff(J, beta, s) < (1.0 + delta) * beta_free(J):
        raise SubcriticalParameter(
            f"r beta_eff = {r * beta_eff(J, beta, s):.6g} < (1+delta) beta_free = "
            f"{(1 + delta) * beta_free(J):.6g}"
        )
    ok = [
        2.0 * math.log(L) - 0.5 * r * beta * d["gamma0"] <= -delta * math.log(L)
        for d in gamma_data
    ]
    for j in range(len(ok)):
        if all(ok[j:]):
            return j
    raise SubcriticalParameter("contraction never sets in on the tested scales")


@dataclass
class ScaleDiagnostics:
    j: int
    gamma0: float
    grad_gamma: float
    alpha_loc: float
    factor: float
    norm: float
    extrapolated: bool


@dataclass
class FlowResult:
    trajectory: list[CouplingState]
    diagnostics: list[ScaleDiagnostics]
    norms: list[float]
    beta: float
    s: float
    L: int
    beta_free: float
    beta_eff: float
    j0: int | None
    alpha_fit: float | None
    diverged: bool
    divergence_scale: int | None
    params: dict = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def decreasing_after(self, j_start: int, j_end: int | None = None) -> bool:
        n = self.norms[j_start : (None if j_end is None else j_end + 1)]
        return all(b < a for a, b in zip(n, n[1:]))

    def summary(self) -> dict:
        return {
            "beta": self.beta, "s": self.s, "L": self.L, "beta_free": self.beta_free,
            "beta_eff": self.beta_eff, "j0": self.j0, "alpha_fit": self.alpha_fit,
            "diverged": self.diverged, "divergence_scale": self.divergence_scale,
            "params": self.params, "warnings": list(self.warnings),
        }

    def rows(self) -> list[dict]:
        out = []
        for st, d in zip(self.trajectory, self.diagnostics + [None]):
            row = {"j": st.j, "E": st.E, "s": st.s}
            row.update({f"z{q}": v for q, v in enumerate(st.z, 1)})
            row["gamma0"] = d.gamma0 if d else float("nan")
            row["factor"] = d.factor if d else float("nan")
            row["norm"] = self.norms[st.j]
            out.append(row)
        return out


GROWTH_STREAK = 3


def run_flow(initial: CouplingState, gamma_data: list[dict], J: StepDistribution, L: int,
             beta: float, r: float = 1.0, delta: float = 0.5, c_f: float | None = None,
             gamma: float | None = None, c_h: float = 1.0, C_loc: float = 1.0) -> FlowResult:
    """Iterate :func:`step_couplings` over ``len(gamma_data)`` scales.

    ``gamma_data[j]`` carries ``Gamma_{j+1}(0)`` and ``Gamma_{j+1}(e1)``.
    A norm growing over three consecutive scales past ``j0`` (or past the
    first scale in the asymptotic regime when no ``j0`` exists) is reported
    as divergence rather than raised.
    """
    if c_f is None:
        if gamma is None:
            from .potential import default_gamma

            gamma = default_gamma()
        c_f = default_c_f(gamma)
    c_f = float(c_f)
    warnings = []
    traj = [initial]
    diags = []
    norms = [initial.norm(beta, c_f)]
    h = h_parameter(J, beta, r, c_f, c_h)
    state = initial
    for k, d in enumerate(gamma_data):
        if d is None:
            raise DependencyError(f"covariance data for scale {initial.j + k + 1} is missing")
        diags.append(ScaleDiagnostics(
            j=state.j, gamma0=d["gamma0"], grad_gamma=second_difference(d),
            alpha_loc=alpha_loc(L, beta, h, r, d["gamma0"], C_loc),
            factor=contraction_factor(1, L, beta, d["gamma0"]), norm=norms[-1],
            extrapolated=not d.get("exact", True),
        ))
        state = step_couplings(state, d, L, beta)
        traj.append(state)
        norms.append(state.norm(beta, c_f))
    try:
        j0 = critical_scale_j0(J, L, delta, beta, r, initial.s, gamma_data)
    except SubcriticalParameter as exc:
        j0 = None
        warnings.append(str(exc))
    asym = math.log(L) / (2 * math.pi * (J.v2 + initial.s))
    if j0 is not None:
        start = j0
    else:
        near = [k for k, d in enumerate(gamma_data) if d["gamma0"] >= 0.9 * asym]
        start = near[0] if near else 0
    diverged = False
    div_scale = None
    streak = 0
    for k in range(start, len(norms) - 1):
        if not math.isfinite(norms[k + 1]) or norms[k + 1] > norms[k]:
            streak += 1
            if streak >= GROWTH_STREAK or not math.isfinite(norms[k + 1]):
                diverged = True
                div_scale = k + 1
                break
        else:
            streak = 0
    alpha_fit = None
    if j0 is not None:
        js = np.arange(j0 + 1, len(norms))
        ns = np.asarray(norms)[js]
        good = ns > 0
        if good.sum() >= 2:
            slope = np.polyfit(js[good], np.log(ns[good]), 1)[0]
            alpha_fit = float(-slope / math.log(L))
    return FlowResult(
        trajectory=traj, diagnostics=diags, norms=norms, beta=beta, s=initial.s, L=L,
        beta_free=beta_free(J), beta_eff=beta_eff(J, beta, initial.s), j0=j0,
        alpha_fit=alpha_fit, diverged=diverged, divergence_scale=div_scale,
        params={"r": r, "delta": delta, "c_f": c_f, "c_h": c_h, "C_loc": C_loc, "h": h},
        warnings=warnings,
    )


def initial_state(beta: float, s: float = 0.0, q_max: int = 10, gamma: float | None = None,
                  z: tuple | None = None) -> tuple[CouplingState, list[str]]:
    """Start of the flow: ``E = 0``, ``s`` as given, ``z`` from the smoothed potential."""
    warnings: list[str] = []
    if z is None:
        from .potential import tilde_z_coefficients

        coeffs = tilde_z_coefficients(beta, gamma, q_max=q_max)
        z = tuple(float(v) for v in coeffs.z_tilde)
        if coeffs.warning:
            warnings.append(coeffs.warning)
    return CouplingState(j=0, E=0.0, s=s, z=tuple(z)), warnings


def with_z(state: CouplingState, z) -> CouplingState:
    return replace(state, z=tuple(float(v) for v in z))
