"""Finite-range decomposition of the lattice covariance.

Conventions
-----------
Let ``Lam = lambda_J(p) + m2`` and ``ell = lambda(p)``.  The basic profile
``P_u`` satisfies ``1/Lam = int_0^inf u P_u(Lam) du`` with ``u P_u = gamma``
for ``u <= 1``.  Working in the rescaled variable ``u = t/rho`` we set

    A(u) = u P_u(Lam) 1_{u > 1},      B(u) = Lam u P_u(Lam),

so that ``int A = 1/Lam - gamma`` (the multiplier of ``C(m2)``) and
``int B = 1``.  The kernel for ``|s| < theta_J`` is

    D_t = G(U) / (4 rho),   U = (t - rho) / (4 rho),
    G   = sum_l (s ell)^{2l} (B - s ell A) * A^{*(2l+1)},

an ordinary convolution series on ``[0, inf)``.  ``G`` vanishes for
``t <= 5 rho``.  All kernels are tabulated on a uniform ``u``-grid whose
step divides 1; convolutions are discrete trapezoid sums computed by FFT.
Because ``A`` and ``B`` are flat at the join ``u = 1``, trapezoid sums of
these functions are spectrally accurate.

The ``base`` decomposition ``D_t = rho^{-1} A(t/rho)`` is available for
``s = 0``.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.fft import irfft, rfft, next_fast_len
from scipy.integrate import simpson
from scipy.interpolate import CubicSpline

from .errors import (
    ChecksumError,
    ConstructionFailure,
    DomainError,
    InvalidParameter,
    SeriesDivergence,
    SizeLimitError,
    ZeroModeDivergence,
)
from .lattice import (
    StepDistribution,
    TorusGeometry,
    dual_indices,
    lambda_from_indices,
    lambda_J_from_indices,
    multiplier_lambda,
    multiplier_lambda_J,
)

TWO_PI = 2.0 * np.pi


# ------------------------------------------------------------------ profile


def bump(s) -> np.ndarray:
    """The standard bump ``exp(-1/(1-(2s)^2))`` on ``|s| < 1/2``."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    m = np.abs(s) < 0.5
    out[m] = np.exp(-1.0 / (1.0 - 4.0 * s[m] ** 2))
    return out


@dataclass(eq=False)
class BumpProfile:
    """Tabulated ``kappa_hat`` and ``f = c kappa_hat^2`` with derived constants."""

    x: np.ndarray
    kappa_hat: np.ndarray
    c: float
    gamma: float
    gamma_check: float
    quadrature_points: int
    kappa_integral: float
    kappa_sq_integral: float
    _spline: CubicSpline = field(repr=False, default=None)
    _cache: dict = field(repr=False, default_factory=dict)

    @property
    def f(self) -> np.ndarray:
        return self.c * self.kappa_hat**2

    @property
    def x_max(self) -> float:
        return float(self.x[-1])

    def kappa_hat_eval(self, x) -> np.ndarray:
        ax = np.abs(np.asarray(x, dtype=float))
        out = np.zeros_like(ax)
        m = ax < self.x_max
        out[m] = self._spline(ax[m])
        return out

    def f_eval(self, x) -> np.ndarray:
        return self.c * self.kappa_hat_eval(x) ** 2

    def F(self, k) -> np.ndarray:
        """Fourier transform ``f_hat(k) = 2 pi c (kappa * kappa)(k)``, support ``[-1, 1]``.

        Evaluated by the trapezoid rule over the overlap interval; the
        integrand is flat at both ends, so the rule converges spectrally.
        """
        k = np.abs(np.atleast_1d(np.asarray(k, dtype=float)))
        out = np.zeros_like(k)
        m = k < 1.0
        if not m.any():
            return out
        km = k[m]
        n = self.quadrature_points
        frac = np.arange(1, n) / n
        res = np.empty_like(km)
        step = max(1, 2_000_000 // n)
        for i in range(0, km.size, step):
            kk = km[i : i + step, None]
            width = 1.0 - kk
            s = kk - 0.5 + width * frac[None, :]
            res[i : i + step] = width[:, 0] / n * (bump(s) * bump(kk - s)).sum(axis=1)
        out[m] = TWO_PI * self.c * res
        return out

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(struct.pack("<idd", self.quadrature_points, self.c, self.gamma))
        return h.hexdigest()[:16]


@lru_cache(maxsize=4)
def build_bump_profile(quadrature_points: int = 1024, x_max: float = 1600.0,
                       dx_target: float = 0.004) -> BumpProfile:
    """Tabulate ``kappa_hat`` by an FFT of trapezoid samples of the bump."""
    n = int(quadrature_points)
    if n < 1024:
        raise InvalidParameter("quadrature_points must be >= 1024")
    h = 1.0 / n
    s = -0.5 + h * np.arange(n)  # kappa(1/2) = 0, so the last node is dropped
    kap = bump(s)
    M = 1 << int(math.ceil(math.log2(TWO_PI * n / dx_target)))
    dx = TWO_PI * n / M
    m_max = int(math.ceil(x_max / dx))
    if m_max >= M // 2:
        raise ConstructionFailure("FFT grid too short for requested x_max")
    spec = np.fft.fft(kap, n=M)[: m_max + 1]
    x = dx * np.arange(m_max + 1)
    kh = h * np.real(np.exp(0.5j * x) * spec)

    int_kappa = h * kap.sum()
    int_kappa2 = h * (kap**2).sum()
    norm = simpson(x * kh**2, x=x)
    if not np.isfinite(norm) or norm <= 0:
        raise ConstructionFailure(f"normalisation integral is {norm}")
    c = 1.0 / norm
    gamma = c * int_kappa2  # f_hat(0) / 2 pi by Parseval

    spline = CubicSpline(x, kh, bc_type=((1, 0.0), "not-a-knot"))
    prof = BumpProfile(
        x=x, kappa_hat=kh, c=c, gamma=gamma, gamma_check=np.nan,
        quadrature_points=n, kappa_integral=int_kappa,
        kappa_sq_integral=int_kappa2, _spline=spline,
    )
    prof.gamma_check = _gamma_from_periodic_sum(prof)
    if not abs(prof.gamma_check - gamma) <= 1e-8 * gamma:
        raise ConstructionFailure(
            f"gamma mismatch: {gamma!r} vs periodic-sum value {prof.gamma_check!r}"
        )
    if not 0.0 < gamma < 1.0 / 3.0:
        raise ConstructionFailure(f"gamma = {gamma} outside (0, 1/3)")
    return prof


def _gamma_from_periodic_sum(prof: BumpProfile, lam: float = 1.0) -> float:
    """``int_0^1 t P_t(lam) dt`` with ``P_t`` from the periodic sum of ``f``."""
    x = 2.0 * math.asin(math.sqrt(lam) / 2.0)
    nodes, weights = leggauss(24)
    t = 0.5 * (nodes + 1.0)
    total = 0.0
    for ti, wi in zip(t, weights):
        nmax = int(prof.x_max / (TWO_PI * ti)) + 2
        n = np.arange(-nmax, nmax + 1)
        total += 0.5 * wi * ti * prof.f_eval(ti * (x - TWO_PI * n)).sum()
    return float(total)


# --------------------------------------------------------------- P_t values


def _arc(lam) -> np.ndarray:
    lam = np.asarray(lam, dtype=float)
    return 2.0 * np.arcsin(np.sqrt(np.clip(lam, 0.0, 4.0)) / 2.0)


def _fourier_weights(profile: BumpProfile, u: np.ndarray) -> np.ndarray:
    """Matrix ``W[k, i] = w_k F(k/u_i) / 2pi`` for the Fourier form of ``u P_u``."""
    key = ("W", u.size, float(u[0]), float(u[-1]))
    if key in profile._cache:
        return profile._cache[key]
    K = int(math.ceil(u.max())) if u.size else 0
    k = np.arange(K + 1, dtype=float)
    ratio = k[:, None] / u[None, :]
    W = np.zeros_like(ratio)
    m = ratio < 1.0
    W[m] = profile.F(ratio[m])
    W[1:] *= 2.0
    W /= TWO_PI
    profile._cache[key] = W
    return W


def scaled_profile(profile: BumpProfile, u, lam, u_switch: float = 64.0) -> np.ndarray:
    """``u P_u(lam)`` on the outer product of ``lam`` (rows) and ``u`` (columns).

    For ``u <= 1`` the value is ``gamma``.  For ``1 < u <= u_switch`` the exact
    Fourier form ``(1/2pi) sum_{|k|<u} f_hat(k/u) cos(k x)`` is used, which is
    manifestly a polynomial of degree below ``u`` in ``lam``.  Beyond the
    switch the periodic image sum of ``f`` is used.
    """
    u = np.atleast_1d(np.asarray(u, dtype=float))
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    x = _arc(lam)
    out = np.empty((lam.size, u.size))
    low = u <= 1.0
    mid = (u > 1.0) & (u <= u_switch)
    high = u > u_switch
    out[:, low] = profile.gamma
    if mid.any():
        W = _fourier_weights(profile, u[mid])
        K = W.shape[0]
        basis = np.cos(np.outer(x, np.arange(K)))
        out[:, mid] = basis @ W
    if high.any():
        uh = u[high]
        acc = profile.f_eval(np.outer(x, uh)) * uh[None, :]
        n = 1
        while (TWO_PI * n - np.pi) * uh.min() < profile.x_max:
            for d in (TWO_PI * n - x, TWO_PI * n + x):
                acc += profile.f_eval(np.outer(d, uh)) * uh[None, :]
            n += 1
        out[:, high] = acc
    return out


def P_t(profile: BumpProfile, t, lam, method: str = "auto") -> np.ndarray:
    """The polynomial ``P_t(lam)``; ``gamma/t`` for ``t <= 1``."""
    lam_a = np.asarray(lam, dtype=float)
    if np.any(~(lam_a > 0)) or np.any(lam_a > 3.0):
        raise DomainError("lambda must lie in (0, 3]")
    t_a = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t_a <= 0):
        raise DomainError("t must be positive")
    if method == "auto":
        val = scaled_profile(profile, t_a, lam_a.ravel())
    elif method == "periodic":
        val = scaled_profile(profile, t_a, lam_a.ravel(), u_switch=1.0)
    elif method == "fourier":
        val = scaled_profile(profile, t_a, lam_a.ravel(), u_switch=np.inf)
    else:
        raise InvalidParameter(f"unknown method {method!r}")
    val = val / t_a[None, :]
    if np.ndim(lam) == 0 and np.ndim(t) == 0:
        return float(val[0, 0])
    return np.squeeze(val)


# -------------------------------------------------------- numerics settings


@dataclass(frozen=True)
class FRDNumerics:
    """Grid and tolerance knobs for kernel construction."""

    h: float = 1.0 / 32.0          # u-grid step; 1/h must be an integer
    u_switch: float = 64.0
    series_tol: float = 1e-10
    chunk: int = 2048
    tail_panels_per_octave: int = 2
    tail_gauss_points: int = 24
    decomposition: str = "series"  # or "base" (s = 0 only)

    def __post_init__(self):
        inv = 1.0 / self.h
        if abs(inv - round(inv)) > 1e-9 or self.h <= 0:
            raise InvalidParameter("FRD grid step must be 1/n for an integer n")
        if self.decomposition not in ("series", "base"):
            raise InvalidParameter("decomposition must be 'series' or 'base'")


DEFAULT_NUMERICS = FRDNumerics()


def series_order(s: float, theta: float, tol: float = 1e-10) -> int:
    """Smallest ``l`` with ``(|s|/theta)^{2l} < tol``."""
    if s == 0:
        return 0
    q = abs(s) / theta
    if q >= 1:
        raise SeriesDivergence(f"|s| = {abs(s)} must be below theta_J = {theta}")
    return int(math.floor(math.log(tol) / (2 * math.log(q)))) + 1


def _check_s(J: StepDistribution, s: float, m2: float, decomposition: str):
    if not 0.0 <= m2 <= 1.0:
        raise InvalidParameter("m2 must lie in [0, 1]")
    if abs(s) >= J.theta:
        raise SeriesDivergence(f"|s| = {abs(s)} >= theta_J = {J.theta:.6g}")
    if decomposition == "base" and s != 0:
        raise InvalidParameter("the base decomposition exists only for s = 0")


def _conv(x: np.ndarray, y_hat: np.ndarray, nfft: int, n: int, h: float) -> np.ndarray:
    return h * irfft(rfft(x, nfft, axis=-1) * y_hat, nfft, axis=-1)[..., :n]


def kernel_on_grid(profile: BumpProfile, Lam, ell, s: float, U_max: float,
                   numerics: FRDNumerics = DEFAULT_NUMERICS, l_max: int | None = None,
                   theta: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Tabulate ``G(U)`` for each momentum row on ``U = 0, h, ..., >= U_max``.

    Returns ``(U, G)`` with ``G`` of shape ``(len(Lam), len(U))``.  For the
    base decomposition the returned array is ``A(u)`` on the ``u``-grid.
    """
    h = numerics.h
    Lam = np.atleast_1d(np.asarray(Lam, dtype=float))
    ell = np.broadcast_to(np.asarray(ell, dtype=float), Lam.shape)
    n = int(math.ceil(U_max / h - 1e-9)) + 2
    u = h * np.arange(n)
    P = scaled_profile(profile, u, Lam, numerics.u_switch)
    i1 = int(round(1.0 / h))
    A = P.copy()
    A[:, :i1] = 0.0
    if i1 < n:
        A[:, i1] = 0.5 * profile.gamma
    if numerics.decomposition == "base":
        return u, A
    X = Lam[:, None] * P
    X[:, 0] *= 0.5
    if s != 0:
        X -= (s * ell)[:, None] * A
    if l_max is None:
        l_max = series_order(s, theta if theta is not None else 1.0, numerics.series_tol)
    nfft = next_fast_len(2 * n, real=True)
    A_hat = rfft(A, nfft, axis=-1)
    Y = _conv(X, A_hat, nfft, n, h)
    G = Y.copy()
    if s != 0:
        A2_hat = rfft(_conv(A, A_hat, nfft, n, h), nfft, axis=-1)
        w = (s * ell) ** 2
        coef = np.ones_like(w)
        for l in range(1, l_max + 1):
            if 2 * l + 1 > u[-1]:
                break
            Y = _conv(Y, A2_hat, nfft, n, h)
            coef = coef * w
            G += coef[:, None] * Y
    return u, G


def cumulative_at(u: np.ndarray, G: np.ndarray, edges) -> np.ndarray:
    """``int_0^e G`` for each edge, using the trapezoid rule on the grid and the
    exact integral of the linear interpolant inside the last cell."""
    h = u[1] - u[0]
    cum = np.concatenate(
        [np.zeros((G.shape[0], 1)), np.cumsum(0.5 * h * (G[:, 1:] + G[:, :-1]), axis=1)],
        axis=1,
    )
    out = np.empty((G.shape[0], len(edges)))
    for i, e in enumerate(edges):
        e = max(float(e), 0.0)
        k = int(math.floor(e / h + 1e-12))
        if k >= u.size - 1:
            if e > u[-1] + 1e-9:
                raise InvalidParameter("band edge beyond tabulated grid")
            out[:, i] = cum[:, -1]
            continue
        d = e - u[k]
        g0, g1 = G[:, k], G[:, k + 1]
        out[:, i] = cum[:, k] + d * g0 + 0.5 * d * d * (g1 - g0) / h
    return out


def _edges_to_U(t_edges, rho: int, decomposition: str) -> np.ndarray:
    t = np.asarray(t_edges, dtype=float)
    if decomposition == "base":
        return t / rho
    return np.maximum((t - rho) / (4.0 * rho), 0.0)


def band_integrals(profile: BumpProfile, J: StepDistribution, Lam, ell, s: float,
                   t_edges, numerics: FRDNumerics = DEFAULT_NUMERICS) -> np.ndarray:
    """``int D_t dt`` over consecutive ``t``-intervals, for each momentum row."""
    U_edges = _edges_to_U(t_edges, J.rho, numerics.decomposition)
    Lam = np.atleast_1d(Lam)
    ell = np.broadcast_to(np.asarray(ell, dtype=float), Lam.shape)
    out = np.empty((Lam.size, len(U_edges) - 1))
    for i in range(0, Lam.size, numerics.chunk):
        sl = slice(i, i + numerics.chunk)
        u, G = kernel_on_grid(profile, Lam[sl], ell[sl], s, U_edges[-1], numerics,
                              theta=J.theta)
        cum = cumulative_at(u, G, U_edges)
        out[sl] = np.diff(cum, axis=1)
    return out


def mode_kernel(profile: BumpProfile, J: StepDistribution, p, s: float, m2: float,
                t_grid, l_max: int | None = None,
                numerics: FRDNumerics = DEFAULT_NUMERICS) -> "ModeKernelTable":
    """``D_t(p; s, m2)`` at the requested ``t`` values for one or more momenta."""
    _check_s(J, s, m2, numerics.decomposition)
    p = np.atleast_2d(np.asarray(p, dtype=float))
    if p.shape[-1] != 2:
        raise InvalidParameter("momenta must be 2-vectors")
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(np.diff(t_grid) <= 0):
        raise InvalidParameter("t_grid must be increasing")
    Lam = multiplier_lambda_J(J, p[:, 0], p[:, 1]) + m2
    ell = multiplier_lambda(p[:, 0], p[:, 1])
    if l_max is None:
        l_max = series_order(s, J.theta, numerics.series_tol)
    rho = J.rho
    U = _edges_to_U(t_grid, rho, numerics.decomposition)
    u, G = kernel_on_grid(profile, Lam, ell, s, max(U.max(), 2.0), numerics, l_max=l_max,
                          theta=J.theta)
    h = numerics.h
    vals = np.empty((Lam.size, t_grid.size))
    for i in range(Lam.size):
        vals[i] = np.interp(U, u, G[i])
    if numerics.decomposition == "base":
        vals = vals / rho
        vals[:, t_grid <= rho] = 0.0
    else:
        vals = vals / (4.0 * rho)
        vals[:, t_grid <= 5 * rho] = 0.0
    return ModeKernelTable(t_grid=t_grid, p=p, values=vals, l_max=l_max, J=J, s=s, m2=m2,
                           decomposition=numerics.decomposition, h=h)


@dataclass(eq=False)
class ModeKernelTable:
    t_grid: np.ndarray
    p: np.ndarray
    values: np.ndarray
    l_max: int
    J: StepDistribution
    s: float
    m2: float
    decomposition: str
    h: float


# ------------------------------------------------------------- totals, tail


def _tail_nodes(u_end: float, panels_per_octave: int, npts: int):
    """Gauss-Legendre nodes on ``[1, u_end]`` with geometric panels."""
    x, w = leggauss(npts)
    n_oct = max(1, int(math.ceil(math.log2(u_end))))
    edges = np.unique(np.concatenate([
        1.0 + np.array([0.0, 0.125, 0.25, 0.5]),
        2.0 ** np.linspace(0.0, n_oct, n_oct * panels_per_octave + 1),
    ]))
    edges = edges[edges >= 1.0]
    a, b = edges[:-1], edges[1:]
    nodes = (0.5 * (b - a)[:, None] * (x[None, :] + 1.0) + a[:, None]).ravel()
    weights = (0.5 * (b - a)[:, None] * w[None, :]).ravel()
    return nodes, weights


def A_integral(profile: BumpProfile, Lam, numerics: FRDNumerics = DEFAULT_NUMERICS) -> np.ndarray:
    """``int_1^inf u P_u(Lam) du`` by Gauss-Legendre panels; exact value is ``1/Lam - gamma``."""
    Lam = np.atleast_1d(np.asarray(Lam, dtype=float))
    if np.any(Lam <= 0):
        raise ZeroModeDivergence("integral diverges at Lam = 0")
    out = np.empty_like(Lam)
    for i in range(0, Lam.size, numerics.chunk):
        lam = Lam[i : i + numerics.chunk]
        u_end = 2.0 * profile.x_max / math.sqrt(lam.min()) + 2.0
        nodes, weights = _tail_nodes(u_end, numerics.tail_panels_per_octave,
                                     numerics.tail_gauss_points)
        vals = scaled_profile(profile, nodes, lam, numerics.u_switch)
        out[i : i + numerics.chunk] = vals @ weights
    return out


def series_total(a, Lam, ell, s: float, l_max: int) -> np.ndarray:
    """``sum_l (s ell)^{2l} (b - s ell a) a^{2l+1}`` with ``b = Lam (gamma + a)``-free form.

    ``b`` is passed implicitly through ``int B = 1``.
    """
    a = np.asarray(a, dtype=float)
    w = s * np.asarray(ell, dtype=float)
    tot = np.zeros_like(a)
    term = (1.0 - w * a) * a
    for l in range(l_max + 1):
        tot += term
        term = term * (w * a) ** 2
    return tot


def covariance_C_hat(J: StepDistribution, s: float, m2: float, p1, p2) -> np.ndarray:
    """``(((lambda_J + m2)^{-1} - gamma)^{-1} + s lambda)^{-1}`` with gamma from the default profile."""
    from .potential import covariance_C_mode

    return covariance_C_mode(J, s, m2, p1, p2)


# ---------------------------------------------------------- scale covariances


def _unique_pairs(side: int):
    """Unique ``(|k1|, |k2|)`` pairs with ``|k1| <= |k2|`` and the map back to the grid."""
    k = dual_indices(side)
    a = np.abs(k)
    half = side // 2
    idx = np.full((half + 1, half + 1), -1, dtype=np.int64)
    pairs = [(i, j) for i in range(half + 1) for j in range(i, half + 1)]
    pa = np.array(pairs, dtype=np.int64)
    idx[pa[:, 0], pa[:, 1]] = np.arange(len(pairs))
    idx[pa[:, 1], pa[:, 0]] = np.arange(len(pairs))
    A1, A2 = np.meshgrid(a, a, indexing="ij")
    return pa, idx[A1, A2]


@dataclass(eq=False)
class ScaleCovariance:
    """One covariance slice over a dual torus plus optional position samples."""

    j: float
    L: int
    N: int
    side: int
    s: float
    m2: float
    J: StepDistribution
    hat_values: np.ndarray
    t_band: tuple[float, float]
    position_samples: np.ndarray | None = None
    position_side: int | None = None
    label: str = "scale"
    decomposition: str = "series"

    @property
    def range_radius(self) -> float:
        return self.t_band[1]

    def position_values(self) -> np.ndarray:
        """Gamma(0, x) on the torus the hat values live on (FFT layout)."""
        return np.real(np.fft.ifft2(self.hat_values))

    def origin_value(self) -> float:
        return float(self.hat_values.mean())

    def header(self) -> dict:
        return {
            "j": self.j, "L": self.L, "N": self.N, "side": self.side, "s": self.s,
            "m2": self.m2, "J": self.J.digest(), "label": self.label,
            "t_band": list(self.t_band), "decomposition": self.decomposition,
        }

    def to_bytes(self) -> bytes:
        head = json.dumps(self.header(), sort_keys=True).encode()
        payload = np.ascontiguousarray(self.hat_values, dtype="<f8").tobytes()
        digest = hashlib.sha256(head + payload).hexdigest().encode()
        return b"DGCOV1\n" + struct.pack("<QQ", len(head), len(payload)) + head + payload + digest

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    def to_csv(self) -> str:
        k = dual_indices(self.side)
        lines = ["p1,p2,j,gamma_hat"]
        for a, k1 in enumerate(k):
            for b, k2 in enumerate(k):
                lines.append(
                    f"{TWO_PI * k1 / self.side:.12g},{TWO_PI * k2 / self.side:.12g},"
                    f"{self.j},{self.hat_values[a, b]:.17g}"
                )
        return "\n".join(lines) + "\n"


def load_covariance_table(path_or_bytes, J: StepDistribution | None = None):
    """Read a binary covariance table, verifying its checksum.

    Returns ``(header, hat_values)``.
    """
    data = path_or_bytes
    if not isinstance(data, (bytes, bytearray)):
        with open(path_or_bytes, "rb") as fh:
            data = fh.read()
    magic = b"DGCOV1\n"
    if not data.startswith(magic):
        raise ChecksumError("not a covariance table")
    off = len(magic)
    try:
        nh, npay = struct.unpack("<QQ", data[off : off + 16])
    except struct.error as exc:
        raise ChecksumError("truncated covariance table") from exc
    off += 16
    head = data[off : off + nh]
    payload = data[off + nh : off + nh + npay]
    digest = data[off + nh + npay :]
    if hashlib.sha256(head + payload).hexdigest().encode() != digest:
        raise ChecksumError("covariance table checksum mismatch")
    header = json.loads(head)
    if J is not None and header["J"] != J.digest():
        raise ChecksumError("covariance table built for a different step distribution")
    side = header["side"]
    hat = np.frombuffer(payload, dtype="<f8").reshape(side, side).copy()
    return header, hat


def _hat_over_torus(profile, J, s, m2, side, t_edges, numerics):
    """Band integrals on the full dual torus of ``side`` via unique momentum pairs."""
    pairs, inverse = _unique_pairs(side)
    Lam = lambda_J_from_indices(J, pairs[:, 0], pairs[:, 1], side) + m2
    ell = lambda_from_indices(pairs[:, 0], pairs[:, 1], side)
    bands = band_integrals(profile, J, Lam, ell, s, t_edges, numerics)
    return bands, inverse, (pairs, Lam, ell)


def scale_band(j: int, L: int, ell_pow: float = 1.0):
    return (L**j / 4.0, L ** (j + ell_pow) / 4.0)


def scale_covariance(j: int, J: StepDistribution, s: float, m2: float,
                     geometry: TorusGeometry, profile: BumpProfile | None = None,
                     numerics: FRDNumerics = DEFAULT_NUMERICS,
                     position_samples: bool = True,
                     max_embedding_side: int = 2048) -> ScaleCovariance:
    """``Gamma_{j+1} = int_{L^j/4}^{L^{j+1}/4} D_t dt`` on the dual torus.

    Position samples ``Gamma(0, x)`` for ``|x|_inf <= L^{j+1}`` are produced
    on an embedding torus of side ``>= 4 L^{j+1}`` so periodisation cannot
    hide a range violation.
    """
    if not 0 <= j <= geometry.N - 2:
        raise InvalidParameter(f"scale j = {j} outside 0..N-2 = {geometry.N - 2}")
    return _band_covariance(j, scale_band(j, geometry.L), J, s, m2, geometry, profile,
                            numerics, position_samples, max_embedding_side)


def scale_slice(j: int, J: StepDistribution, s: float, m2: float, geometry: TorusGeometry,
                profile: BumpProfile | None = None,
                numerics: FRDNumerics = DEFAULT_NUMERICS,
                side: int | None = None) -> ScaleCovariance:
    """``Gamma_{j+1}`` periodised onto a torus without the ``j <= N-2`` restriction.

    ``side`` overrides the torus side (any integer, not only powers of
    ``L``).  Exact as long as the side is at least twice the range, which is
    what samplers need.
    """
    band = scale_band(j, geometry.L)
    side = geometry.side if side is None else int(side)
    if side < 2 * band[1]:
        raise InvalidParameter(f"torus side {side} is below twice the range {band[1]}")
    return _band_covariance(j, band, J, s, m2, geometry, profile, numerics, False, 0,
                            side=side)


def _band_covariance(j, band, J, s, m2, geometry, profile, numerics, position_samples,
                     max_embedding_side, label="scale", side=None):
    _check_s(J, s, m2, numerics.decomposition)
    profile = profile or build_bump_profile()
    side = geometry.side if side is None else side
    bands, inverse, _ = _hat_over_torus(profile, J, s, m2, side, band, numerics)
    hat = bands[:, 0][inverse]
    cov = ScaleCovariance(j=j, L=geometry.L, N=geometry.N, side=side, s=s, m2=m2, J=J,
                          hat_values=hat, t_band=band, label=label,
                          decomposition=numerics.decomposition)
    if position_samples:
        emb = embedding_side(band[1])
        if emb > max_embedding_side:
            raise SizeLimitError(
                f"embedding torus of side {emb} exceeds limit {max_embedding_side}"
            )
        if emb == side:
            full = hat
        else:
            b2, inv2, _ = _hat_over_torus(profile, J, s, m2, emb, band, numerics)
            full = b2[:, 0][inv2]
        pos = np.real(np.fft.ifft2(full))
        r = int(min(math.floor(band[1]), emb // 2 - 1))
        idx = np.arange(-r, r + 1) % emb
        cov.position_samples = pos[np.ix_(idx, idx)]
        cov.position_side = emb
    return cov


def embedding_side(range_radius: float) -> int:
    """Smallest power of two that is at least four times the range."""
    need = int(math.ceil(4 * range_radius))
    return 1 << max(2, (need - 1).bit_length())


def range_violation(cov: ScaleCovariance) -> float:
    """``max |Gamma(0,x)| / Gamma(0,0)`` over sampled ``|x|_inf >= range``."""
    pos = cov.position_samples
    if pos is None:
        raise InvalidParameter("covariance carries no position samples")
    r = pos.shape[0] // 2
    x = np.arange(-r, r + 1)
    X1, X2 = np.meshgrid(x, x, indexing="ij")
    far = np.maximum(np.abs(X1), np.abs(X2)) >= cov.range_radius
    origin = pos[r, r]
    if not far.any():
        return 0.0
    if origin == 0.0:
        # an identically vanishing slice has finite range trivially
        return 0.0 if not np.any(pos) else float("inf")
    return float(np.abs(pos[far]).max() / origin)


def fractional_covariance(j: int, k: int, M: int, J: StepDistribution, s: float,
                          m2: float, geometry: TorusGeometry,
                          profile: BumpProfile | None = None,
                          numerics: FRDNumerics = DEFAULT_NUMERICS,
                          position_samples: bool = False) -> ScaleCovariance:
    """``Gamma_{j+k/M, j+(k+1)/M}`` for ``L = ell^M``."""
    L = geometry.L
    ell = round(L ** (1.0 / M))
    if M < 1 or ell**M != L:
        raise InvalidParameter(f"L = {L} is not a perfect {M}-th power")
    if not 0 <= k < M:
        raise InvalidParameter("need 0 <= k < M")
    band = (L ** (j + k / M) / 4.0, L ** (j + (k + 1) / M) / 4.0)
    return _band_covariance(j + k / M, band, J, s, m2, geometry, profile, numerics,
                            position_samples, 1 << 12, label="fractional")


def last_covariance_and_zero_mode(N: int, J: StepDistribution, s: float, m2: float,
                                  geometry: TorusGeometry,
                                  profile: BumpProfile | None = None,
                                  numerics: FRDNumerics = DEFAULT_NUMERICS,
                                  tail: str = "fubini"):
    """``Gamma_N^{Lambda_N}`` for ``p != 0`` and the zero-mode weight ``t_N``.

    ``tail="fubini"`` evaluates the tail as the full series total (from
    Gauss-Legendre integrals of ``A``) minus the tabulated head;
    ``tail="direct"`` integrates the tabulated kernel out to where it is
    negligible.  The zero mode of the returned table is set to 0.
    """
    if m2 <= 0:
        raise ZeroModeDivergence("t_N requires m2 > 0")
    if N != geometry.N:
        raise InvalidParameter("N must match the geometry")
    _check_s(J, s, m2, numerics.decomposition)
    profile = profile or build_bump_profile()
    side = geometry.side
    t_head = geometry.L ** (N - 1) / 4.0
    pairs, inverse = _unique_pairs(side)
    Lam = lambda_J_from_indices(J, pairs[:, 0], pairs[:, 1], side) + m2
    ell = lambda_from_indices(pairs[:, 0], pairs[:, 1], side)
    head = band_integrals(profile, J, Lam, ell, s, (0.0, t_head), numerics)[:, 0]
    if tail == "fubini":
        total = _total(profile, J, Lam, ell, s, numerics)
        tail_vals = total - head
    elif tail == "direct":
        tail_vals = direct_tail(profile, J, Lam, ell, s, t_head, numerics)
    else:
        raise InvalidParameter(f"unknown tail method {tail!r}")
    head0 = head[0]
    total0 = 1.0 / m2 - profile.gamma
    t_N = float(total0 - head0)
    tail_vals = tail_vals.copy()
    tail_vals[0] = 0.0
    cov = ScaleCovariance(j=N - 1, L=geometry.L, N=N, side=side, s=s, m2=m2, J=J,
                          hat_values=tail_vals[inverse], t_band=(t_head, np.inf),
                          label="last", decomposition=numerics.decomposition)
    if not 0.0 < t_N < 1.0 / m2:
        raise ConstructionFailure(f"t_N = {t_N} outside (0, 1/m2)")
    return cov, t_N


def _total(profile, J, Lam, ell, s, numerics):
    a = A_integral(profile, Lam, numerics)
    if numerics.decomposition == "base":
        return a
    l_max = series_order(s, J.theta, numerics.series_tol)
    return series_total(a, Lam, ell, s, l_max)


def direct_tail(profile, J, Lam, ell, s, t_from, numerics=DEFAULT_NUMERICS,
                rel_cut: float = 1e-14) -> np.ndarray:
    """Trapezoid integral of the tabulated kernel from ``t_from`` to its numerical end."""
    Lam = np.atleast_1d(Lam)
    ell = np.broadcast_to(np.asarray(ell, dtype=float), Lam.shape)
    out = np.empty(Lam.size)
    U0 = _edges_to_U([t_from], J.rho, numerics.decomposition)[0]
    for i in range(Lam.size):
        # A(u) is negligible once sqrt(Lam) u exceeds the decay length of f
        u_end = 600.0 / math.sqrt(Lam[i]) + 4.0
        l_max = series_order(s, J.theta, numerics.series_tol)
        U_end = u_end * (2 * l_max + 2) if numerics.decomposition == "series" else u_end
        U_end = max(U_end, U0 + 1.0)
        u, G = kernel_on_grid(profile, Lam[i : i + 1], ell[i : i + 1], s, U_end, numerics,
                              l_max=l_max, theta=J.theta)
        cum = cumulative_at(u, G, [U0, u[-1]])
        out[i] = cum[0, 1] - cum[0, 0]
    return out


def zero_mode_t_N_simpson(profile, J, s, m2, L, N, fine_h: float = 1.0 / 512) -> float:
    """Independent ``t_N``: Simpson rule for ``int_0^{U_N} (B * A)`` at ``p = 0``.

    At ``p = 0`` only the ``l = 0`` term survives, and the head equals
    ``int_1^{U_N} A(u) Bcum(U_N - u) du`` with ``Bcum`` the running integral
    of ``B``.
    """
    rho = J.rho
    U_N = max((L ** (N - 1) / 4.0 - rho) / (4.0 * rho), 0.0)
    if U_N <= 1.0:
        return 1.0 / m2 - profile.gamma
    n = int(math.ceil((U_N - 1.0) / fine_h))
    n += n % 2
    u = np.linspace(1.0, U_N, n + 1)
    A = scaled_profile(profile, u, [m2])[0]
    # Bcum(w) = m2 int_0^w v P_v dv with v P_v = gamma on [0, 1]
    w = U_N - u
    vgrid = np.linspace(0.0, max(w.max(), 1e-12), 4 * n + 1)
    vals = m2 * scaled_profile(profile, vgrid, [m2])[0]
    from scipy.integrate import cumulative_simpson

    Bc = cumulative_simpson(vals, x=vgrid, initial=0.0)
    Bw = np.interp(w, vgrid, Bc)
    A[0] = profile.gamma  # right limit at u = 1
    head = simpson(A * Bw, x=u)
    return float(1.0 / m2 - profile.gamma - head)


# ------------------------------------------------ continuum-momentum values


def _polar_nodes(n_theta: int = 24, n_radial: int = 16, levels: int = 40):
    """Quadrature on the triangle ``0 <= p2 <= p1 <= pi`` in polar coordinates.

    Radial panels are geometric towards the origin so that integrands varying
    on the scale ``1/t`` are resolved for every band.
    """
    xt, wt = leggauss(n_theta)
    theta = (xt + 1.0) * np.pi / 8.0
    w_theta = wt * np.pi / 8.0
    xr, wr = leggauss(n_radial)
    fr = 2.0 ** -np.arange(levels + 1, dtype=float)
    edges = np.concatenate([[0.0], fr[::-1]])
    a, b = edges[:-1], edges[1:]
    rn = (0.5 * (b - a)[:, None] * (xr[None, :] + 1.0) + a[:, None]).ravel()
    rw = (0.5 * (b - a)[:, None] * wr[None, :]).ravel()
    rmax = np.pi / np.cos(theta)
    R = rn[None, :] * rmax[:, None]
    W = rw[None, :] * rmax[:, None] * R * w_theta[:, None]
    p1 = R * np.cos(theta)[:, None]
    p2 = R * np.sin(theta)[:, None]
    # 8 symmetric copies of the triangle over the square, normalised by (2 pi)^2
    return p1.ravel(), p2.ravel(), (8.0 * W / (TWO_PI**2)).ravel()


def _band_function_of_Lam(profile, J, m2, band, numerics, n_per_decade=48,
                          lam_min=1e-12):
    """Spline of ``H(Lam) = int_band D_t dt`` in ``log``-``log`` form (``s = 0``)."""
    lam_hi = 2.0 + m2
    nodes = np.geomspace(lam_min, lam_hi, int(n_per_decade * math.log10(lam_hi / lam_min)) + 1)
    vals = band_integrals(profile, J, nodes, np.zeros_like(nodes), 0.0, band, numerics)[:, 0]
    vals = np.maximum(vals, 1e-300)
    spl = CubicSpline(np.log(nodes), np.log(vals))
    slope = (math.log(vals[1]) - math.log(vals[0])) / (math.log(nodes[1]) - math.log(nodes[0]))

    def H(lam):
        lam = np.asarray(lam, dtype=float)
        out = np.empty_like(lam)
        hi = lam >= lam_min
        out[hi] = np.exp(spl(np.log(lam[hi])))
        lo = ~hi & (lam > 0)
        out[lo] = vals[0] * (lam[lo] / lam_min) ** slope
        out[lam <= 0] = 0.0 if slope > 0 else vals[0]
        return out

    return H


def z2_band_values(J: StepDistribution, band, s: float = 0.0, m2: float = 0.0,
                   profile: BumpProfile | None = None,
                   numerics: FRDNumerics = DEFAULT_NUMERICS,
                   quad=(24, 16, 40)) -> dict:
    """``Gamma(0,0)`` and ``Gamma(0,e1)`` on the infinite lattice for a ``t``-band.

    The momentum integral over ``[-pi, pi]^2`` is done by polar quadrature on
    the symmetric triangle.
    """
    _check_s(J, s, m2, numerics.decomposition)
    profile = profile or build_bump_profile()
    p1, p2, w = _polar_nodes(*quad)
    Lam = multiplier_lambda_J(J, p1, p2) + m2
    if s == 0:
        H = _band_function_of_Lam(profile, J, m2, band, numerics)
        vals = H(Lam)
    else:
        ell = multiplier_lambda(p1, p2)
        vals = band_integrals(profile, J, Lam, ell, s, band, numerics)[:, 0]
    g0 = float((w * vals).sum())
    g1 = float((w * vals * 0.5 * (np.cos(p1) + np.cos(p2))).sum())
    return {"gamma0": g0, "gamma_e1": g1, "band": tuple(band)}


def gamma_asymptotic(J: StepDistribution, L: int, s: float = 0.0) -> float:
    """Leading value ``log L / (2 pi (v_J^2 + s))`` of ``Gamma_{j+1}(0,0)``."""
    return math.log(L) / (TWO_PI * (J.v2 + s))


def flow_gamma_data(J: StepDistribution, L: int, j_max: int, s: float = 0.0,
                    profile: BumpProfile | None = None,
                    numerics: FRDNumerics | None = None, U_exact_max: float = 4096.0,
                    quad=(24, 16, 40)) -> list[dict]:
    """``Gamma_{j+1}(0)`` and ``Gamma_{j+1}(e1)`` on ``Z^2`` for ``j = 0..j_max``.

    Scales whose band reaches beyond ``U_exact_max`` are filled in from the
    last two exact scales using ``Gamma(0) = a + c0 L^{-j}`` (``a`` the
    asymptotic value) and ``2(Gamma(0) - Gamma(e1)) ~ L^{-2j}``.
    """
    profile = profile or build_bump_profile()
    rho = J.rho
    out = []
    for j in range(j_max + 1):
        band = scale_band(j, L)
        U_b = (band[1] - rho) / (4.0 * rho)
        if U_b > U_exact_max:
            break
        h = 1.0 / 32.0 if U_b <= 64 else (1.0 / 16.0 if U_b <= 512 else 1.0 / 8.0)
        num = numerics or FRDNumerics(h=h)
        if numerics is None and s != 0 and U_b > 512:
            break
        vals = z2_band_values(J, band, s, 0.0, profile, num, quad)
        vals.update(j=j, exact=True)
        out.append(vals)
    asym = gamma_asymptotic(J, L, s)
    exact = [d for d in out if d["gamma0"] > 0]
    if len(out) <= j_max:
        if not exact:
            raise InvalidParameter("no exact scale available for extrapolation")
        last = exact[-1]
        jl = last["j"]
        c0 = (last["gamma0"] - asym) * L**jl
        d0 = 2.0 * (last["gamma0"] - last["gamma_e1"]) * L ** (2 * jl)
        for j in range(len(out), j_max + 1):
            g0 = asym + c0 * float(L) ** (-j)
            grad = d0 * float(L) ** (-2 * j)
            out.append({"gamma0": g0, "gamma_e1": g0 - 0.5 * grad, "band": scale_band(j, L),
                        "j": j, "exact": False})
    return out
