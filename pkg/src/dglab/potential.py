"""Smoothing step: covariances ``C(s,m2)``, ``C~(s,m2)``, the smoothed potential
``U~`` and the test-function embedding.

The single-site weight after smoothing is the theta function
``F~(phi) = 1 + 2 sum_q eps^{q^2} cos(q sqrt(beta) phi)`` with
``eps = exp(-gamma beta / 2)``.  By the Jacobi triple product it factorises
into strictly positive factors, so ``U~ = log F~`` is defined for every
``gamma beta > 0`` and has the closed-form coefficients

    z~^{(q)} = 2 (-1)^{q+1} eps^q / (q (1 - eps^{2q})).

The closed form is kept as an oracle; :func:`tilde_z_coefficients` computes
coefficients by discrete Fourier analysis of ``log F~``.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import mpmath
import numpy as np

from .errors import InvalidParameter, LogDomainError, PreconditionViolation, WindowTooSmall
from .lattice import (
    StepDistribution,
    TorusGeometry,
    gradient_energy,
    lambda_J_from_indices,
    laplacian_J_matrix,
    laplacian_matrix,
    multiplier_lambda,
    multiplier_lambda_J,
    symbol_grid,
)

TWO_PI = 2.0 * math.pi


def default_gamma() -> float:
    from .frd import build_bump_profile

    return build_bump_profile().gamma


# -------------------------------------------------------------- covariances


def covariance_C_mode(J: StepDistribution, s: float, m2: float, p1, p2,
                      gamma: float | None = None) -> np.ndarray:
    """Multiplier of ``C(s,m2) = (C(m2)^{-1} - s Delta)^{-1}``."""
    gamma = default_gamma() if gamma is None else gamma
    Lam = multiplier_lambda_J(J, p1, p2) + m2
    ell = multiplier_lambda(p1, p2)
    return _C_from(Lam, ell, s, gamma)


def _C_from(Lam, ell, s, gamma):
    Lam = np.asarray(Lam, dtype=float)
    with np.errstate(divide="ignore"):
        base = 1.0 / Lam - gamma
    if np.any(base <= 0):
        raise PreconditionViolation("(lambda_J + m2)^{-1} - gamma must be positive")
    with np.errstate(divide="ignore"):
        out = 1.0 / (1.0 / base + s * np.asarray(ell))
    if np.any(~(out > 0)):
        raise PreconditionViolation("C(s, m2) is not positive for this s")
    return out


def covariance_Ctilde_mode(J: StepDistribution, s: float, m2: float, p1, p2,
                           gamma: float | None = None) -> np.ndarray:
    """Multiplier of ``C~ = gamma (1 + s gamma Delta) + (1 + s gamma Delta) C(s,m2) (1 + s gamma Delta)``."""
    gamma = default_gamma() if gamma is None else gamma
    ell = multiplier_lambda(p1, p2)
    k = 1.0 - s * gamma * ell
    return gamma * k + k**2 * covariance_C_mode(J, s, m2, p1, p2, gamma)


# ---------------------------------------------------------------- potential


@dataclass
class PotentialCoefficients:
    beta: float
    gamma: float
    z_tilde: np.ndarray
    z_const: float
    c_f: float
    fft_points: int
    extended_precision: np.ndarray = field(default_factory=lambda: np.zeros(0, bool))
    warning: str | None = None

    def U(self, phi) -> np.ndarray:
        """``U~(phi) = sum_q z~^{(q)} cos(q sqrt(beta) phi)`` (constant term omitted)."""
        phi = np.asarray(phi, dtype=float)
        q = np.arange(1, self.z_tilde.size + 1)
        arg = np.multiply.outer(phi, q) * math.sqrt(self.beta)
        return (np.cos(arg) * self.z_tilde).sum(axis=-1)

    def to_dict(self) -> dict:
        return {"beta": self.beta, "gamma": self.gamma,
                "z_tilde": [float(z) for z in self.z_tilde], "z_const": self.z_const,
                "c_f": self.c_f, "warning": self.warning}


def tilde_z_exact(beta: float, gamma: float, q_max: int) -> np.ndarray:
    """Closed-form coefficients from the triple-product factorisation."""
    eps = math.exp(-0.5 * gamma * beta)
    q = np.arange(1, q_max + 1)
    return 2.0 * (-1.0) ** (q + 1) * eps**q / (q * (1.0 - eps ** (2 * q)))


def _log_F_grid(gb: float, M: int) -> np.ndarray:
    phi = TWO_PI * np.arange(M) / M
    F = np.zeros(M)  # F~ - 1, kept separate so log1p stays accurate
    q = 1
    lead = 2.0 * math.exp(-0.5 * gb)
    while True:
        term = 2.0 * math.exp(-0.5 * gb * q * q)
        if term < 1e-16 * min(lead, 1.0):  # relative to the leading term, since F~ - 1 is stored
            break
        F += term * np.cos(q * phi)
        q += 1
    if np.any(F <= -1.0):
        raise LogDomainError("F~ is not positive on the period grid")
    return np.log1p(F)


def log_domain_threshold(fft_points: int = 2**14, lo: float = 1e-3, hi: float = 5.0,
                         iters: int = 40) -> float:
    """Smallest ``gamma*beta`` at which ``log F~`` is finite on the double-precision grid.

    Empirical only: the exact function is positive for every ``gamma*beta > 0``,
    rounding makes it vanish below this value.
    """
    def ok(gb):
        try:
            _log_F_grid(gb, fft_points)
            return True
        except LogDomainError:
            return False

    if ok(lo):
        return lo
    for _ in range(iters):
        mid = math.sqrt(lo * hi)
        lo, hi = (lo, mid) if ok(mid) else (mid, hi)
    return hi


def _log_F_coefficients_mp(gb: float, q_max: int, digits: int) -> list:
    M = max(64, 4 * q_max + 16)
    with mpmath.workdps(digits):
        eps = mpmath.exp(-mpmath.mpf(gb) / 2)
        qs = []
        q = 1
        tiny = mpmath.mpf(10) ** (-digits - 5)
        while True:
            t = 2 * eps ** (q * q)
            if t < tiny:
                break
            qs.append((q, t))
            q += 1
        logs = []
        for k in range(M):
            phi = 2 * mpmath.pi * k / M
            F = 1 + sum(t * mpmath.cos(q * phi) for q, t in qs)
            if F <= 0:
                raise LogDomainError("F~ is not positive on the period grid")
            logs.append(mpmath.log(F))
        out = []
        for q in range(q_max + 1):
            acc = sum(logs[k] * mpmath.cos(2 * mpmath.pi * q * k / M) for k in range(M))
            out.append((2 if q else 1) * acc / M)
        return out


def tilde_z_coefficients(beta: float, gamma: float | None = None, q_max: int = 10,
                         fft_points: int = 2**14, threshold: float = 20.0,
                         extended_precision: bool = True) -> PotentialCoefficients:
    """Cosine coefficients of ``log F~`` by discrete Fourier analysis.

    A double-precision FFT on ``fft_points`` samples resolves coefficients
    down to roughly ``1e-16``.  Coefficients below that are recomputed by a
    DFT in extended precision whose working precision is chosen from the
    expected size ``eps^q`` of the smallest coefficient.
    """
    gamma = default_gamma() if gamma is None else gamma
    if beta <= 0 or q_max < 1:
        raise InvalidParameter("beta must be positive and q_max >= 1")
    gb = gamma * beta
    msg = None
    if gb < threshold:
        msg = f"gamma*beta = {gb:.4g} below the validity threshold {threshold}"
        warnings.warn(msg, stacklevel=2)
    logF = _log_F_grid(gb, fft_points)
    c = np.fft.rfft(logF) / fft_points
    z = 2.0 * c.real[1 : q_max + 1]
    z_const = float(c.real[0])
    ext = np.zeros(q_max, dtype=bool)
    if extended_precision:
        floor = 1e-13 * max(float(np.abs(logF).max()), 1e-300)
        ext = np.abs(z) < floor
        if ext.any():
            digits = int(q_max * gb / (2 * math.log(10))) + 40
            zmp = _log_F_coefficients_mp(gb, q_max, digits)
            z[ext] = [float(zmp[q]) for q in np.nonzero(ext)[0] + 1]
    return PotentialCoefficients(beta=beta, gamma=gamma, z_tilde=z, z_const=z_const,
                                 c_f=gamma / 4.0, fft_points=fft_points,
                                 extended_precision=ext, warning=msg)


def z_bound(beta: float, gamma: float, q) -> np.ndarray:
    """``16 exp(-gamma beta (1+q) / 4)``."""
    return 16.0 * np.exp(-0.25 * gamma * beta * (1.0 + np.asarray(q, dtype=float)))


# ------------------------------------------------------ test-function embedding


@dataclass
class FourierMode:
    k: tuple[int, int]
    a: float = 0.0  # cosine amplitude
    b: float = 0.0  # sine amplitude


def _modes_from_spec(spec) -> list[FourierMode]:
    modes = []
    for m in spec:
        if isinstance(m, FourierMode):
            modes.append(m)
        else:
            modes.append(FourierMode(tuple(m["k"]), m.get("a", 0.0), m.get("b", 0.0)))
    return modes


@dataclass
class TestFunctionEmbedding:
    f_N: np.ndarray
    u_N: np.ndarray
    green_form: float           # (f_N, (-Delta_J)^{-1} f_N)
    ctilde_form: float          # (f_N, C~ f_N)
    continuum_form: float | None  # (f, (-Delta_T2)^{-1} f) when known
    grad_u_sq: float
    regulator_N: float

    __test__ = False


def _continuum_green(modes: list[FourierMode]) -> float:
    total = 0.0
    for m in modes:
        k2 = m.k[0] ** 2 + m.k[1] ** 2
        total += 0.5 * (m.a**2 + m.b**2) / (4 * math.pi**2 * k2)
    return total


def _merge_check(modes):
    seen = {}
    for m in modes:
        if m.k == (0, 0) and (m.a or m.b):
            raise InvalidParameter("test function must have zero mean")
        key = m.k if m.k > (-m.k[0], -m.k[1]) else (-m.k[0], -m.k[1])
        if key in seen:
            raise InvalidParameter("duplicate Fourier mode in test function")
        seen[key] = m


def discretise(f, side: int) -> np.ndarray:
    """``f_N(x) = |Lambda|^{-1} (f(x/side) - average)`` on the torus."""
    x = np.arange(side) / side
    X1, X2 = np.meshgrid(x, x, indexing="ij")
    if callable(f):
        vals = np.asarray(f(X1, X2), dtype=float)
    else:
        modes = _modes_from_spec(f)
        _merge_check(modes)
        vals = np.zeros_like(X1)
        for m in modes:
            ph = TWO_PI * (m.k[0] * X1 + m.k[1] * X2)
            vals += m.a * np.cos(ph) + m.b * np.sin(ph)
    fN = (vals - vals.mean()) / side**2
    return fN - fN.mean()


def check_zero_mean(f, resolution: int = 256, tol: float = 1e-9) -> None:
    if callable(f):
        x = (np.arange(resolution) + 0.5) / resolution
        X1, X2 = np.meshgrid(x, x, indexing="ij")
        v = np.asarray(f(X1, X2), dtype=float)
        if abs(v.mean()) > tol * max(1.0, np.abs(v).max()):
            raise InvalidParameter("test function must have zero mean")
    else:
        _merge_check(_modes_from_spec(f))


def embed_test_function(f, geometry: TorusGeometry, J: StepDistribution, s: float = 0.0,
                        m2: float = 0.0, gamma: float | None = None,
                        regulator_params=None) -> TestFunctionEmbedding:
    """Discretise ``f`` and build ``u_N = C~(s,m2) (1 - s gamma Delta)^{-1} f_N``."""
    from .geometry import RegulatorParams, regulator_whole_torus

    gamma = default_gamma() if gamma is None else gamma
    check_zero_mean(f)
    side = geometry.side
    fN = discretise(f, side)
    lamJ = symbol_grid(J, side)
    lam = symbol_grid(None, side)
    fh = np.fft.fft2(fN)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_lamJ = np.where(lamJ > 0, 1.0 / lamJ, 0.0)
        Lam = lamJ + m2
        base = np.where(Lam > 0, 1.0 / Lam - gamma, 0.0)
        Cs = np.where(base > 0, 1.0 / (1.0 / base + s * lam), 0.0)
    kfac = 1.0 - s * gamma * lam
    Ct = gamma * kfac + kfac**2 * Cs
    Ct[0, 0] = 0.0
    uh = Ct / (1.0 + s * gamma * lam) * fh
    uN = np.real(np.fft.ifft2(uh))
    vol = side**2
    green = float((np.abs(fh) ** 2 * inv_lamJ).sum() / vol)
    ctf = float((np.abs(fh) ** 2 * Ct).sum() / vol)
    cont = None if callable(f) else _continuum_green(_modes_from_spec(f))
    params = regulator_params or RegulatorParams.for_distribution(J, geometry.L)
    G = regulator_whole_torus(geometry, uN, params)
    return TestFunctionEmbedding(f_N=fN, u_N=uN, green_form=green, ctilde_form=ctf,
                                 continuum_form=cont, grad_u_sq=gradient_energy(uN),
                                 regulator_N=G)


def green_form(fN: np.ndarray, J: StepDistribution) -> float:
    """``(f_N, (-Delta_J)^{-1} f_N)`` with the zero mode removed.

    Works on the half spectrum, so tori of side 4096 fit in memory.
    """
    fN = np.asarray(fN, dtype=float)
    side = fN.shape[0]
    fh = np.fft.rfft2(fN)
    k1 = np.fft.fftfreq(side, 1.0 / side).astype(np.int64)[:, None]
    k2 = np.arange(fh.shape[1], dtype=np.int64)[None, :]
    lam = lambda_J_from_indices(J, k1, k2, side)
    w = np.full(fh.shape[1], 2.0)
    w[0] = 1.0
    if side % 2 == 0:
        w[-1] = 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(lam > 1e-300, np.abs(fh) ** 2 / lam, 0.0)
    return float((terms * w[None, :]).sum() / side**2)


def green_form_convergence(f, J: StepDistribution, L: int, Ns) -> list[dict]:
    """``v_J^2 (f_N, (-Delta_J)^{-1} f_N)`` against its continuum value on growing tori."""
    cont = _continuum_green(_modes_from_spec(f))
    rows = []
    for N in Ns:
        side = L**N
        val = J.v2 * green_form(discretise(f, side), J)
        rows.append({"N": N, "side": side, "value": val, "continuum": cont,
                     "rel_error": abs(val / cont - 1.0)})
    return rows


def fhat_N(fN: np.ndarray) -> np.ndarray:
    """``f_hat_N(p) = sum_x f_N(x) e^{-ipx}`` on the FFT-ordered dual torus."""
    return np.fft.fft2(fN)


# ----------------------------------------------------- reformulation identity


@dataclass
class ReformulationResult:
    lhs_ratio: float
    rhs_ratio: float
    lhs_tail_bound: float
    n_states: int
    n_quadrature: int

    @property
    def rel_diff(self) -> float:
        return abs(self.lhs_ratio - self.rhs_ratio) / abs(self.rhs_ratio)


def _small_matrices(shape, J, s, m2, gamma):
    n = shape[0] * shape[1]
    M = laplacian_J_matrix(J, shape) + m2 * np.eye(n)
    negD = laplacian_matrix(shape)
    C_m2 = np.linalg.inv(M) - gamma * np.eye(n)
    if np.linalg.eigvalsh(C_m2).min() <= 0:
        raise PreconditionViolation("C(m2) is not positive definite")
    C_s = np.linalg.inv(np.linalg.inv(C_m2) + s * negD)
    if np.linalg.eigvalsh(C_s).min() <= 0:
        raise PreconditionViolation("C(s, m2) is not positive definite")
    K = np.eye(n) - s * gamma * negD  # 1 + s gamma Delta
    Ct = gamma * K + K @ C_s @ K
    A = np.linalg.solve(K, Ct)
    return M, negD, C_s, Ct, A


def lattice_gaussian_sum(M: np.ndarray, f: np.ndarray, spacing: float, window: float,
                         tail_tol: float = 1e-12, state_cap: int = 20_000_000):
    """``log sum_{sigma in spacing Z^n} exp(-sigma M sigma / 2 + f sigma)`` over a box.

    The box is centred at ``M^{-1} f`` with half-width ``window`` marginal
    standard deviations in each coordinate.
    """
    n = M.shape[0]
    cov = np.linalg.inv(M)
    centre = cov @ f
    sd = np.sqrt(np.diag(cov))
    axes = []
    for i in range(n):
        lo = math.floor((centre[i] - window * sd[i]) / spacing)
        hi = math.ceil((centre[i] + window * sd[i]) / spacing)
        axes.append(spacing * np.arange(lo, hi + 1))
    size = int(np.prod([a.size for a in axes]))
    if size > state_cap:
        raise InvalidParameter(f"{size} lattice states exceed the cap {state_cap}")
    tail = n * math.erfc(window / math.sqrt(2.0))
    if tail > tail_tol:
        raise WindowTooSmall(f"Gaussian tail mass {tail:.2e} above {tail_tol:.0e}")
    grids = np.meshgrid(*axes, indexing="ij")
    S = np.stack([g.ravel() for g in grids], axis=1)
    E = -0.5 * np.einsum("ki,ij,kj->k", S, M, S) + S @ f
    mx = E.max()
    return mx + math.log(np.exp(E - mx).sum()), size, tail


def reformulation_check(shape: tuple[int, int], beta: float, s: float, m2: float, f,
                        J: StepDistribution | None = None, window: float = 8.0,
                        gh_points: int = 48, gamma: float | None = None,
                        q_max: int = 12) -> ReformulationResult:
    """Compare both sides of the smoothing identity as ratios ``X(f)/X(0)``.

    Left: truncated lattice sum over ``sigma in (2pi/sqrt(beta)) Z^n``.
    Right: ``exp(f C~ f / 2) E_{C(s,m2)}[Z_0(phi + A f)]`` by tensor
    Gauss-Hermite quadrature, with ``Z_0 = exp(s/2 (phi,-Delta phi) + sum U~)``.
    """
    from .lattice import nearest_neighbour

    J = J or nearest_neighbour()
    gamma = default_gamma() if gamma is None else gamma
    n = shape[0] * shape[1]
    if n > 4:
        raise InvalidParameter("reformulation check is limited to 4 sites")
    if m2 <= 0:
        raise InvalidParameter("m2 must be positive")
    f = np.asarray(f, dtype=float).ravel()
    if f.size != n:
        raise InvalidParameter("f must have one entry per site")
    M, negD, C_s, Ct, A = _small_matrices(shape, J, s, m2, gamma)
    spacing = TWO_PI / math.sqrt(beta)
    l1, size, tail = lattice_gaussian_sum(M, f, spacing, window)
    l0, _, _ = lattice_gaussian_sum(M, np.zeros(n), spacing, window)
    lhs = math.exp(l1 - l0)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        coef = tilde_z_coefficients(beta, gamma, q_max)
    x, w = np.polynomial.hermite_e.hermegauss(gh_points)
    w = w / w.sum()
    chol = np.linalg.cholesky(C_s)
    Z = np.stack([g.ravel() for g in np.meshgrid(*([x] * n), indexing="ij")], axis=1)
    W = np.prod(np.stack(np.meshgrid(*([w] * n), indexing="ij"), axis=0).reshape(n, -1), axis=0)
    phi = Z @ chol.T

    def log_expect(shift):
        e = np.empty(W.size)
        for i in range(0, W.size, 200_000):
            y = phi[i : i + 200_000] + shift
            quad = 0.5 * s * np.einsum("ki,ij,kj->k", y, negD, y)
            e[i : i + 200_000] = quad + coef.U(y).sum(axis=1)
        mx = e.max()
        return mx + math.log((W * np.exp(e - mx)).sum())

    r1 = 0.5 * f @ Ct @ f + log_expect(A @ f)
    r0 = log_expect(np.zeros(n))
    rhs = math.exp(r1 - r0)
    return ReformulationResult(lhs_ratio=lhs, rhs_ratio=rhs, lhs_tail_bound=tail,
                               n_states=size, n_quadrature=W.size)
