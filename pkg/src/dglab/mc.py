"""Monte Carlo for the Discrete Gaussian height model and its exact small oracles.

Heights live on ``Z_beta = (2 pi / sqrt(beta)) Z`` and carry the weight
``exp(-1/2 (sigma, (-Delta_J + m2) sigma))``.  Configurations are stored as
integer lattice indices ``n`` with ``sigma = a n``, ``a = 2 pi / sqrt(beta)``,
so lattice membership is exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numba import njit

from .errors import InsufficientSampling, InvalidParameter, SamplingError, SizeLimitError
from .geometry import (Polymer, RegulatorParams, closure, regulator_G,
                       regulator_terms)
from .lattice import StepDistribution, laplacian_J_matrix, nearest_neighbour

TWO_PI = 2.0 * math.pi
MIN_BATCHES = 32


# --------------------------------------------------------------------- model


@dataclass(frozen=True, eq=False)
class DGModel:
    """Discrete Gaussian weight on a rectangular torus.

    ``pinned=True`` fixes ``sigma_0 = 0``; otherwise ``m2 > 0`` is required.
    """

    shape: tuple[int, int]
    beta: float
    J: StepDistribution = field(default_factory=nearest_neighbour)
    m2: float = 0.0
    pinned: bool = False

    def __post_init__(self):
        n1, n2 = self.shape
        if n1 < 1 or n2 < 1 or n1 * n2 < 2:
            raise InvalidParameter("torus needs at least two sites")
        if self.beta <= 0:
            raise InvalidParameter("beta must be positive")
        if self.m2 < 0:
            raise InvalidParameter("m2 must be nonnegative")
        if not self.pinned and self.m2 <= 0:
            raise InvalidParameter("the unpinned ensemble needs m2 > 0")
        weights: dict[tuple[int, int], float] = {}
        for a, b in self.J.offsets:
            w = (a % n1, b % n2)
            weights[w] = weights.get(w, 0.0) + 1.0 / self.J.size
        self_w = weights.pop((0, 0), 0.0)
        object.__setattr__(self, "_couplings", tuple(sorted(weights.items())))
        object.__setattr__(self, "_diag", 1.0 + self.m2 - self_w)

    @property
    def spacing(self) -> float:
        return TWO_PI / math.sqrt(self.beta)

    @property
    def n_sites(self) -> int:
        return self.shape[0] * self.shape[1]

    @property
    def diag(self) -> float:
        """Diagonal entry of ``-Delta_J + m2`` (offsets wrapping onto the site removed)."""
        return self._diag

    def matrix(self) -> np.ndarray:
        return laplacian_J_matrix(self.J, self.shape) + self.m2 * np.eye(self.n_sites)

    def neighbour_sum(self, sigma: np.ndarray) -> np.ndarray:
        """``sum_w c_w sigma(x + w)`` over wrapped offsets other than the site itself."""
        acc = np.zeros(sigma.shape, dtype=float)
        for (a, b), c in self._couplings:
            acc += c * np.roll(sigma, shift=(-a, -b), axis=(-2, -1))
        return acc

    def energy(self, sigma: np.ndarray) -> np.ndarray:
        """``1/2 (sigma, M sigma)`` for a batch of configurations."""
        sigma = np.asarray(sigma, dtype=float)
        return 0.5 * (sigma * (self.diag * sigma - self.neighbour_sum(sigma))).sum(axis=(-2, -1))

    def coupling_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        offs = np.array([w for w, _ in self._couplings], dtype=np.int64).reshape(-1, 2)
        return offs, np.array([c for _, c in self._couplings], dtype=float)

    def to_dict(self) -> dict:
        return {"shape": list(self.shape), "beta": self.beta, "J": self.J.to_dict(),
                "m2": self.m2, "pinned": self.pinned}


@njit(cache=True)
def _conditional_probs(mu, var, spacing, window, cand, prob):
    """Discrete Gaussian on ``spacing * Z`` centred at ``mu``, cut at ``window`` sd.

    Fills ``cand`` (lattice indices) and ``prob``; returns the count.  The
    nearest lattice point is always kept.
    """
    sd = math.sqrt(var)
    lo = math.floor((mu - window * sd) / spacing)
    hi = math.ceil((mu + window * sd) / spacing)
    near = round(mu / spacing)
    k = 0
    top = -np.inf
    for c in range(lo, hi + 1):
        x = spacing * c
        if abs(x - mu) <= window * sd or c == near:
            cand[k] = c
            prob[k] = -0.5 * (x - mu) ** 2 / var
            top = max(top, prob[k])
            k += 1
    total = 0.0
    for i in range(k):
        prob[i] = math.exp(prob[i] - top)
        total += prob[i]
    for i in range(k):
        prob[i] /= total
    return k


def _buffer_size(var: float, spacing: float, window: float) -> int:
    return int(2 * window * math.sqrt(var) / spacing) + 4


def conditional_table(mu: float, var: float, spacing: float, window: float):
    """Candidate lattice indices and probabilities of one single-site conditional law."""
    size = _buffer_size(var, spacing, window)
    cand = np.empty(size, dtype=np.int64)
    prob = np.empty(size)
    k = _conditional_probs(float(mu), var, spacing, window, cand, prob)
    return cand[:k].copy(), prob[:k].copy()


@njit(cache=True)
def _sweep(n, offs, coeffs, diag, spacing, window, u, pinned, cand, prob):
    chains, n1, n2 = n.shape
    var = 1.0 / diag
    for c in range(chains):
        for x in range(n1):
            for y in range(n2):
                if pinned and x == 0 and y == 0:
                    continue
                acc = 0.0
                for w in range(offs.shape[0]):
                    acc += coeffs[w] * n[c, (x + offs[w, 0]) % n1, (y + offs[w, 1]) % n2]
                mu = acc * spacing * var
                k = _conditional_probs(mu, var, spacing, window, cand, prob)
                t = u[c, x, y]
                i = 0
                cum = prob[0]
                while cum < t and i < k - 1:
                    i += 1
                    cum += prob[i]
                n[c, x, y] = cand[i]


def heat_bath_sweep(model: DGModel, n: np.ndarray, rng: np.random.Generator,
                    window: float = 8.0) -> np.ndarray:
    """Resample every free site, in lexicographic order, from its exact conditional law.

    ``n`` holds integer height indices shaped ``(chains, n1, n2)``; it is
    updated in place and returned.  The conditional law is truncated at
    ``window`` standard deviations.
    """
    if window < 6:
        raise InvalidParameter("the conditional window must be at least 6 standard deviations")
    if n.ndim != 3 or n.dtype != np.int64:
        raise InvalidParameter("heights must be an int64 array shaped (chains, n1, n2)")
    var = 1.0 / model.diag
    size = _buffer_size(var, model.spacing, window)
    offs, coeffs = model.coupling_arrays()
    u = rng.random(n.shape)
    _sweep(n, offs, coeffs, model.diag, model.spacing, float(window), u, model.pinned,
           np.empty(size, dtype=np.int64), np.empty(size))
    return n


# ------------------------------------------------------------ chain running


Observable = Callable[[np.ndarray], np.ndarray]


@dataclass
class ObservableStats:
    name: str
    mean: float
    variance: float
    stderr: float
    tau_int: float
    n_samples: int
    n_batches: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class ChainStats:
    observables: dict[str, ObservableStats]
    seed: int
    chains: int
    sweeps: int
    burn_in: int
    chain_seeds: list[int] = field(default_factory=list)

    def __getitem__(self, key) -> ObservableStats:
        return self.observables[key]

    def to_rows(self) -> list[dict]:
        return [dict(o.to_dict(), seed=self.seed) for o in self.observables.values()]


def tau_int(series: np.ndarray, c: float = 6.0) -> float:
    """Integrated autocorrelation time with Sokal's automatic window.

    ``series`` has shape ``(time, chains)``; autocorrelations are averaged
    over chains.
    """
    x = np.asarray(series, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    x = x - x.mean(axis=0)
    var = (x**2).mean()
    if var == 0:
        return 0.5
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, n=nfft, axis=0)
    acf = np.fft.irfft(np.abs(f) ** 2, n=nfft, axis=0)[:n].mean(axis=1)
    acf /= acf[0]
    tau = 0.5
    for M in range(1, n):
        tau += acf[M]
        if M >= c * tau:
            break
    return float(max(tau, 0.5))


def batch_stats(name: str, series: np.ndarray, n_batches: int = MIN_BATCHES,
                check_tau: bool = True) -> ObservableStats:
    """Mean and batch-means standard error of ``series`` shaped ``(time, chains)``."""
    x = np.asarray(series, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    T, C = x.shape
    if n_batches < MIN_BATCHES:
        raise InvalidParameter(f"need at least {MIN_BATCHES} batches")
    per_chain = max(1, n_batches // C) if C < n_batches else 1
    blen = T // per_chain
    if blen < 1:
        raise InsufficientSampling("chains are shorter than the number of batches")
    bm = x[: blen * per_chain].reshape(per_chain, blen, C).mean(axis=1).ravel()
    nb = bm.size
    if nb < MIN_BATCHES:
        raise InsufficientSampling(f"only {nb} batches available")
    tau = tau_int(x)
    if check_tau and tau > T / 50.0:
        raise InsufficientSampling(
            f"{name}: tau_int = {tau:.1f} exceeds chain length / 50 = {T / 50:.1f}")
    mean = float(x.mean())
    stderr = float(bm.std(ddof=1) / math.sqrt(nb))
    return ObservableStats(name=name, mean=mean, variance=float(x.var()), stderr=stderr,
                           tau_int=tau, n_samples=T * C, n_batches=nb)


def initial_config(model: DGModel, chains: int) -> np.ndarray:
    return np.zeros((chains,) + tuple(model.shape), dtype=np.int64)


def run_chains(model: DGModel, observables: dict[str, Observable], sweeps: int,
               chains: int = 16, burn_in: int = 1000, seed: int = 0, window: float = 8.0,
               thin: int = 1, check_tau: bool = True, n_batches: int = MIN_BATCHES
               ) -> tuple[ChainStats, dict[str, np.ndarray]]:
    """Run independent chains and summarise every observable.

    Observables receive heights ``sigma`` (not indices) with shape
    ``(chains, n1, n2)`` and return one value per chain.
    """
    if sweeps < 1 or chains < 1:
        raise InvalidParameter("need at least one sweep and one chain")
    ss = np.random.SeedSequence(seed)
    rng = np.random.Generator(np.random.PCG64(ss))
    n = initial_config(model, chains)
    for _ in range(burn_in):
        heat_bath_sweep(model, n, rng, window)
    n_rec = sweeps // thin
    series = {k: np.empty((n_rec, chains)) for k in observables}
    a = model.spacing
    for t in range(n_rec):
        for _ in range(thin):
            heat_bath_sweep(model, n, rng, window)
        sigma = n * a
        for k, fn in observables.items():
            series[k][t] = fn(sigma)
    stats = {k: batch_stats(k, v, n_batches, check_tau) for k, v in series.items()}
    return ChainStats(observables=stats, seed=seed, chains=chains, sweeps=sweeps,
                      burn_in=burn_in, chain_seeds=[int(ss.entropy)]), series


# ---------------------------------------------------------- exact oracles


@dataclass
class BruteForceResult:
    value: float
    tail_bound: float
    n_states: int
    window: float


def enumerate_states(model: DGModel, window: float, state_cap: int = 5_000_000):
    """Lattice configurations within ``window`` marginal standard deviations, with weights."""
    M = model.matrix()
    n = model.n_sites
    a = model.spacing
    free = np.ones(n, dtype=bool)
    if model.pinned:
        free[0] = False
    Mf = M[np.ix_(free, free)]
    cov = np.linalg.inv(Mf)
    sd = np.sqrt(np.diag(cov))
    K = [int(math.ceil(window * s / a)) for s in sd]
    size = int(np.prod([2 * k + 1 for k in K]))
    if size > state_cap:
        raise SizeLimitError(f"{size} states exceed the cap {state_cap}")
    grids = np.meshgrid(*[np.arange(-k, k + 1) for k in K], indexing="ij")
    idx = np.zeros((size, n), dtype=np.int64)
    idx[:, free] = np.stack([g.ravel() for g in grids], axis=1)
    sig = idx * a
    E = 0.5 * np.einsum("ki,ij,kj->k", sig, M, sig)
    w = np.exp(-(E - E.min()))
    tail = float(free.sum() * math.erfc(window / math.sqrt(2.0)))
    return sig.reshape((size,) + tuple(model.shape)), w, tail


def brute_force_expectation(model: DGModel, observable: Observable, window: float = 8.0,
                            state_cap: int = 5_000_000) -> BruteForceResult:
    """``<F>`` by direct summation over a truncated box of configurations (at most 4 sites)."""
    if model.n_sites > 4:
        raise SizeLimitError("brute force is limited to 2 x 2 tori")
    sig, w, tail = enumerate_states(model, window, state_cap)
    vals = np.asarray(observable(sig), dtype=float)
    return BruteForceResult(value=float((w * vals).sum() / w.sum()), tail_bound=tail,
                            n_states=w.size, window=window)


def heat_bath_matrices(model: DGModel, window: float = 8.0, box: float = 6.0):
    """Single-site heat-bath kernels on an enumerated box of states.

    Returns ``(states, pi, [T_x])`` with ``pi`` the Gibbs weights restricted
    to the box.  Each ``T_x`` uses the sampler's own conditional tables.
    """
    sig, w, _ = enumerate_states(model, box)
    a = model.spacing
    idx = np.rint(sig / a).astype(np.int64).reshape(len(w), -1)
    lookup = {tuple(r): i for i, r in enumerate(idx)}
    pi = w / w.sum()
    var = 1.0 / model.diag
    mats = []
    free_sites = [s for s in range(model.n_sites) if not (model.pinned and s == 0)]
    nsum = model.neighbour_sum(sig).reshape(len(w), -1)
    for x in free_sites:
        T = np.zeros((len(w), len(w)))
        for i in range(len(w)):
            cand, p = conditional_table(nsum[i, x] * var, var, a, window)
            for c, pc in zip(cand, p):
                tgt = idx[i].copy()
                tgt[x] = c
                j = lookup.get(tuple(tgt))
                if j is not None:
                    T[i, j] += pc
        mats.append(T)
    return idx, pi, mats


def detailed_balance_defect(model: DGModel, window: float = 8.0, box: float = 6.0) -> dict:
    """Stationarity and reversibility defects of the heat-bath kernel on a box."""
    idx, pi, mats = heat_bath_matrices(model, window, box)
    T = np.eye(len(pi))
    rev = 0.0
    for Tx in mats:
        F = pi[:, None] * Tx
        rev = max(rev, float(np.abs(F - F.T).max()))
        T = T @ Tx
    stat = float(np.abs(pi @ T - pi).max())
    return {"stationarity": stat, "reversibility": rev, "n_states": len(pi)}


# ---------------------------------------------------- smeared observables


def smeared_observable(fN: np.ndarray, beta: float) -> Observable:
    """``X = (f_N, sigma)`` in the original ``2 pi Z`` height units (``sqrt(beta)`` times ours)."""
    fN = np.asarray(fN, dtype=float)
    rb = math.sqrt(beta)
    return lambda sigma: rb * (sigma * fN).sum(axis=(-2, -1))


@dataclass
class SmearedMoments:
    stats: ObservableStats
    variance_ratio_free: float  # Var(X) / (beta (f_N, (-Delta_J)^{-1} f_N))
    variance_ratio_continuum: float | None  # Var(X) / ((beta_eff / v^2) (f, (-Delta_T)^{-1} f))
    free_value: float
    gaussian_mgf: float


def estimate_smeared_moments(series: np.ndarray, fN: np.ndarray, beta: float,
                             J: StepDistribution, green_discrete: float,
                             green_continuum: float | None = None,
                             beta_eff: float | None = None,
                             check_tau: bool = True) -> SmearedMoments:
    """Summarise recorded values of ``X = (f_N, sigma)``.

    ``green_discrete`` is ``(f_N, (-Delta_J)^{-1} f_N)``; the free-field
    variance of ``X`` is ``beta`` times it.
    """
    st = batch_stats("X", series, check_tau=check_tau)
    free = beta * green_discrete
    var = float(np.asarray(series).var())
    ratio = var / free if free > 0 else (0.0 if var == 0 else math.inf)
    cont = None
    if green_continuum is not None:
        be = beta if beta_eff is None else beta_eff
        cont = var / (be / J.v2 * green_continuum)
    return SmearedMoments(stats=st, variance_ratio_free=ratio, variance_ratio_continuum=cont,
                          free_value=free, gaussian_mgf=0.5 * var)


# ------------------------------------------------ Gaussian slice sampling


class GaussianFieldSampler:
    """Exact samples of a stationary Gaussian field on a torus from its Fourier symbol.

    Two independent real fields come out of every complex FFT pair.
    """

    def __init__(self, hat_values: np.ndarray, rng: np.random.Generator, tol: float = 1e-10):
        hat = np.asarray(hat_values, dtype=float)
        scale = max(float(np.abs(hat).max()), 1e-300)
        if hat.min() < -tol * scale:
            raise SamplingError(f"covariance symbol has negative entries ({hat.min():.3e})")
        self.amp = np.sqrt(np.clip(hat, 0.0, None))
        self.side = hat.shape[0]
        self.rng = rng
        self.variance = float(hat.mean())

    def draw(self, pairs: int) -> np.ndarray:
        """``2 * pairs`` independent fields, shape ``(2 pairs, side, side)``."""
        w = self.rng.standard_normal((pairs, 2, self.side, self.side))
        z = np.fft.ifft2(self.amp * np.fft.fft2(w[:, 0] + 1j * w[:, 1]))
        return np.concatenate([z.real, z.imag], axis=0)


def independent_sites(side: int, range_radius: float) -> np.ndarray:
    """Grid of sites whose pairwise torus sup-distances all reach ``range_radius``."""
    step = int(math.ceil(range_radius))
    m = side // step
    if m < 1:
        raise InvalidParameter("torus is smaller than the covariance range")
    return np.arange(m) * step


@dataclass
class ChargeCheck:
    q: int
    beta: float
    gamma0: float
    exact: float
    mc_mean: float
    stderr: float
    n_samples: int

    @property
    def z_score(self) -> float:
        if self.stderr == 0:
            return 0.0 if self.mc_mean == self.exact else math.inf
        return abs(self.mc_mean - self.exact) / self.stderr


def charge_integral_mc(q: int, beta: float, cov, samples: int = 100_000, seed: int = 0,
                       pairs_per_draw: int = 8) -> ChargeCheck:
    """MC estimate of ``E[cos(q sqrt(beta) zeta_x)]`` for ``zeta ~ Gamma`` on its torus.

    Sites separated by the covariance range are independent, so each field
    sample contributes several independent values.
    """
    from .rgflow import charge_integral

    rng = np.random.Generator(np.random.PCG64(seed))
    sampler = GaussianFieldSampler(cov.hat_values, rng)
    sites = independent_sites(sampler.side, cov.range_radius)
    per_field = sites.size**2
    vals = []
    got = 0
    while got < samples:
        fields = sampler.draw(pairs_per_draw)
        v = np.cos(q * math.sqrt(beta) * fields[:, sites[:, None], sites[None, :]]).ravel()
        vals.append(v)
        got += v.size
    v = np.concatenate(vals)[:samples]
    g0 = sampler.variance
    return ChargeCheck(q=q, beta=beta, gamma0=g0, exact=charge_integral(q, beta, g0),
                       mc_mean=float(v.mean()), stderr=float(v.std(ddof=1) / math.sqrt(v.size)),
                       n_samples=int(v.size))


# ----------------------------------------------------- regulator expectation


@dataclass
class RegulatorCheck:
    blocks: int
    mc_mean: float
    stderr: float
    bound: float
    G_next: float
    n_samples: int
    params: dict
    log_mean: float = 0.0
    log_max: float = 0.0

    @property
    def passed(self) -> bool:
        return self.mc_mean + 3.0 * self.stderr <= self.bound

    @property
    def margin(self) -> float:
        return self.bound - (self.mc_mean + 3.0 * self.stderr)


PATCH_PAD = 3  # blocks: B* reaches three blocks beyond B
COLLAR = 2  # sites needed for second differences at the patch edge


def _patch_polymer(X: Polymer, pad: int = PATCH_PAD):
    """Re-express ``X`` on a small block-aligned torus with ``pad`` blocks around it."""
    bx = sorted({b[0] for b in X.blocks})
    by = sorted({b[1] for b in X.blocks})
    ext = max(bx[-1] - bx[0], by[-1] - by[0]) + 1
    if ext + 2 * pad > X.blocks_per_axis:
        raise InvalidParameter("polymer is too large for a local patch on this torus")
    ox, oy = bx[0] - pad, by[0] - pad
    nb = ext + 2 * pad
    Xp = Polymer(X.j, frozenset((a - ox, b - oy) for a, b in X.blocks), nb, X.L)
    bs = X.block_side
    return Xp, (ox * bs, oy * bs), nb * bs


@njit(cache=True)
def _window_derivatives(fields, origins, base):
    """Energy density and maximal first/second differences on field windows.

    Window ``k`` of field ``n`` starts at ``origins[k]`` (no wrapping) and has
    ``base`` added; the outer ``COLLAR`` sites only feed the differences.
    """
    nf = fields.shape[0]
    nw = origins.shape[0]
    W = base.shape[0]
    P = W - 2 * COLLAR
    dens = np.empty((nf * nw, P, P))
    m1 = np.empty((nf * nw, P, P))
    m2 = np.empty((nf * nw, P, P))
    d1 = np.array([1, -1, 0, 0])
    d2 = np.array([0, 0, 1, -1])
    g = np.empty((W, W))
    for a in range(nf):
        for k in range(nw):
            o1 = origins[k, 0]
            o2 = origins[k, 1]
            for x in range(W):
                for y in range(W):
                    g[x, y] = fields[a, o1 + x, o2 + y] + base[x, y]
            out = a * nw + k
            for i in range(P):
                for j in range(P):
                    x = i + COLLAR
                    y = j + COLLAR
                    c = g[x, y]
                    e = 0.0
                    a1 = 0.0
                    a2 = 0.0
                    for u in range(4):
                        xu = x + d1[u]
                        yu = y + d2[u]
                        gu = g[xu, yu] - c
                        e += gu * gu
                        a1 = max(a1, abs(gu))
                        # second differences are symmetric in the two directions
                        for v in range(u, 4):
                            h = g[xu + d1[v], yu + d2[v]] - g[xu, yu] - g[x + d1[v], y + d2[v]] + c
                            a2 = max(a2, abs(h))
                    dens[out, i, j] = 0.5 * e
                    m1[out, i, j] = a1
                    m2[out, i, j] = a2
    return dens, m1, m2


@dataclass
class _CroppedDerivatives:
    energy_density: np.ndarray
    max_first: np.ndarray
    max_second: np.ndarray


def _windows_logG(Xp: Polymer, fields: np.ndarray, origins: np.ndarray, base: np.ndarray,
                  params: RegulatorParams) -> np.ndarray:
    """``log G_j(Xp, base + window)`` for every window of every field."""
    d = _CroppedDerivatives(*_window_derivatives(fields, origins, base))
    return regulator_terms(Xp, d.energy_density, d).exponent(params)


def regulator_window_side(X: Polymer) -> int:
    """Side of the field window one evaluation of ``G_j(X, .)`` needs."""
    return _patch_polymer(X)[2] + 2 * COLLAR


def regulator_expectation_check(X: Polymer, phi_prime: np.ndarray, cov,
                                params: RegulatorParams, samples: int = 100_000,
                                seed: int = 0, pairs_per_draw: int = 1) -> RegulatorCheck:
    """MC mean of ``G_j(X, phi' + zeta)``, ``zeta ~ Gamma_{j+1}``, against ``2^|X| G_{j+1}(closure X, phi')``.

    ``G_j(X, .)`` only sees the field on ``X*`` plus a two-site collar, so it
    is evaluated on local windows.  Windows whose gaps reach the range of the
    covariance are independent, and the sampling torus (``cov.side``, any
    size) carries as many as fit.  ``phi_prime`` lives on the torus of ``X``.
    """
    phi_prime = np.asarray(phi_prime, dtype=float)
    if phi_prime.shape != (X.side, X.side):
        raise InvalidParameter("field and polymer must share one torus")
    Xp, (o1, o2), P = _patch_polymer(X)
    W = P + 2 * COLLAR
    R = int(math.ceil(cov.range_radius))
    stride = W + R
    S = cov.side
    m = S // stride
    if m < 1:
        raise InvalidParameter(f"sampling torus side {S} is below window {W} plus range {R}")
    rng = np.random.Generator(np.random.PCG64(seed))
    sampler = GaussianFieldSampler(cov.hat_values, rng)
    ar = np.arange(W)
    starts = np.arange(m) * stride
    origins = np.array([(r, c) for r in starts for c in starts], dtype=np.int64)
    n = X.side
    base = np.ascontiguousarray(phi_prime[np.ix_((o1 - COLLAR + ar) % n, (o2 - COLLAR + ar) % n)])
    vals = []
    got = 0
    while got < samples:
        fields = sampler.draw(pairs_per_draw)
        logG = _windows_logG(Xp, fields, origins, base, params)
        vals.append(logG)
        got += logG.size
    logv = np.concatenate(vals)[:samples]
    G_next = regulator_G(closure(X), phi_prime, params)
    bound = 2.0**X.size * G_next
    with np.errstate(over="ignore"):
        v = np.exp(logv)
    return RegulatorCheck(blocks=X.size, mc_mean=float(v.mean()),
                          stderr=float(v.std(ddof=1) / math.sqrt(v.size)), bound=bound,
                          G_next=G_next, n_samples=int(v.size), params=params.to_dict(),
                          log_mean=float(logv.mean()), log_max=float(logv.max()))


# ------------------------------------------------------------ observables


def site_square(x=(0, 0)) -> Observable:
    return lambda s: s[..., x[0], x[1]] ** 2


def site_product(x=(0, 0), y=(1, 0)) -> Observable:
    return lambda s: s[..., x[0], x[1]] * s[..., y[0], y[1]]


def site_is_zero(x=(0, 0)) -> Observable:
    return lambda s: (np.abs(s[..., x[0], x[1]]) < 1e-12).astype(float)


def site_value(x=(0, 0)) -> Observable:
    return lambda s: s[..., x[0], x[1]]


def height_difference_variance():
    """Qualitative diagnostic: ``(sigma_x - sigma_0)^2`` at distances ``1..side/2`` along an axis."""
    def fn(sigma):
        n1 = sigma.shape[-2]
        return np.stack([(sigma[..., r, 0] - sigma[..., 0, 0]) ** 2 for r in range(1, n1 // 2 + 1)],
                        axis=-1)
    return fn


__all__ = [
    "DGModel", "heat_bath_sweep", "run_chains", "brute_force_expectation", "batch_stats",
    "tau_int", "detailed_balance_defect", "estimate_smeared_moments", "GaussianFieldSampler",
    "charge_integral_mc", "regulator_expectation_check",
]
