"""Blocks, polymers and field regulators.

A scale-``j`` block is a square of ``L**j`` by ``L**j`` sites; block
coordinates ``(bx, by)`` run over ``range(L**(N-j))`` on each axis and wrap
periodically.  Connectivity between blocks is in the sup-norm sense, so two
blocks touching only at a corner are neighbours.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np
from scipy.ndimage import maximum_filter

from .errors import InvalidParameter, PreconditionViolation, SizeLimitError
from .lattice import UNIT_DIRECTIONS, StepDistribution, TorusGeometry, grad

KING_MOVES = tuple((a, b) for a in (-1, 0, 1) for b in (-1, 0, 1) if (a, b) != (0, 0))
SMALL_SET_MAX = 4  # 2^d blocks in two dimensions
NEIGHBOURHOOD_RADIUS = 3  # small sets intersecting a block reach 3 blocks out


# ------------------------------------------------------------------ polymers


@dataclass(frozen=True)
class Polymer:
    """A set of scale-``j`` blocks on a torus with ``blocks_per_axis`` blocks per side."""

    j: int
    blocks: frozenset
    blocks_per_axis: int
    L: int

    def __post_init__(self):
        nb = self.blocks_per_axis
        if nb < 1:
            raise InvalidParameter("blocks_per_axis must be positive")
        for bx, by in self.blocks:
            if not (0 <= bx < nb and 0 <= by < nb):
                raise InvalidParameter(f"block {(bx, by)} outside a torus of {nb} blocks")

    @classmethod
    def from_blocks(cls, geometry: TorusGeometry, j: int, blocks) -> "Polymer":
        nb = geometry.blocks_per_axis(j)
        return cls(j, frozenset((int(a) % nb, int(b) % nb) for a, b in blocks), nb, geometry.L)

    @property
    def size(self) -> int:
        """``|X|_j``, the number of blocks."""
        return len(self.blocks)

    @property
    def block_side(self) -> int:
        return self.L**self.j

    @property
    def side(self) -> int:
        return self.blocks_per_axis * self.block_side

    def sorted_blocks(self) -> list[tuple[int, int]]:
        return sorted(self.blocks)

    def to_dict(self) -> dict:
        return {"j": self.j, "L": self.L, "blocks_per_axis": self.blocks_per_axis,
                "blocks": [list(b) for b in self.sorted_blocks()]}

    def with_blocks(self, blocks) -> "Polymer":
        nb = self.blocks_per_axis
        return Polymer(self.j, frozenset((a % nb, b % nb) for a, b in blocks), nb, self.L)

    def __or__(self, other: "Polymer") -> "Polymer":
        _same_scale(self, other)
        return self.with_blocks(self.blocks | other.blocks)

    def __and__(self, other: "Polymer") -> "Polymer":
        _same_scale(self, other)
        return self.with_blocks(self.blocks & other.blocks)

    def __le__(self, other: "Polymer") -> bool:
        _same_scale(self, other)
        return self.blocks <= other.blocks

    def site_mask(self) -> np.ndarray:
        """Boolean array over the ``side x side`` sites covered by the polymer."""
        b = self.block_side
        mask = np.zeros((self.blocks_per_axis,) * 2, dtype=bool)
        for bx, by in self.blocks:
            mask[bx, by] = True
        return np.kron(mask, np.ones((b, b), dtype=bool))


def _same_scale(X: Polymer, Y: Polymer) -> None:
    if (X.j, X.blocks_per_axis, X.L) != (Y.j, Y.blocks_per_axis, Y.L):
        raise InvalidParameter("polymers live on different scales or tori")


def _king_neighbours(b, nb):
    bx, by = b
    for dx, dy in KING_MOVES:
        yield ((bx + dx) % nb, (by + dy) % nb)


def components(X: Polymer) -> list[Polymer]:
    """Maximal connected sub-polymers, in order of their smallest block."""
    left = set(X.blocks)
    out = []
    for start in sorted(X.blocks):
        if start not in left:
            continue
        comp = {start}
        stack = [start]
        left.discard(start)
        while stack:
            b = stack.pop()
            for nb_ in _king_neighbours(b, X.blocks_per_axis):
                if nb_ in left:
                    left.discard(nb_)
                    comp.add(nb_)
                    stack.append(nb_)
        out.append(X.with_blocks(comp))
    return out


def is_connected(X: Polymer) -> bool:
    return len(components(X)) == 1


def is_small_set(X: Polymer) -> bool:
    return 0 < X.size <= SMALL_SET_MAX and is_connected(X)


def closure(X: Polymer) -> Polymer:
    """The union of all next-scale blocks that intersect ``X``."""
    if X.blocks_per_axis % X.L:
        raise InvalidParameter(f"no scale {X.j + 1} on this torus")
    L = X.L
    return Polymer(X.j + 1, frozenset((a // L, b // L) for a, b in X.blocks),
                   X.blocks_per_axis // L, L)


def fine_blocks(X: Polymer) -> Polymer:
    """``B_{j-1}(X)``: the scale-``(j-1)`` blocks making up ``X``."""
    if X.j < 1:
        raise InvalidParameter("scale-0 blocks are single sites")
    L = X.L
    return Polymer(X.j - 1,
                   frozenset((a * L + u, b * L + v) for a, b in X.blocks
                             for u in range(L) for v in range(L)),
                   X.blocks_per_axis * L, L)


def small_set_neighborhood(X: Polymer) -> Polymer:
    """``X*``: the union of all small sets intersecting ``X``.

    Every connected set of at most four blocks meeting a block ``B`` lies in
    the 7 x 7 block square centred on ``B``, and each block of that square is
    reached by such a set, so ``X*`` is ``X`` thickened by three blocks.
    """
    r = NEIGHBOURHOOD_RADIUS
    nb = X.blocks_per_axis
    if 2 * r + 1 >= nb:
        # the thickening wraps onto itself; fall back to a bitmap dilation
        out = set()
        for bx, by in X.blocks:
            for dx in range(-r, r + 1):
                for dy in range(-r, r + 1):
                    out.add(((bx + dx) % nb, (by + dy) % nb))
        return X.with_blocks(out)
    mask = np.zeros((nb, nb), dtype=bool)
    for bx, by in X.blocks:
        mask[bx, by] = True
    dil = maximum_filter(mask, size=2 * r + 1, mode="wrap")
    return X.with_blocks(zip(*np.nonzero(dil)))


# --------------------------------------------------- polyplets in the plane


def _normalise(cells) -> frozenset:
    mx = min(c[0] for c in cells)
    my = min(c[1] for c in cells)
    return frozenset((x - mx, y - my) for x, y in cells)


@lru_cache(maxsize=None)
def fixed_polyplets(n_max: int) -> tuple[tuple[frozenset, ...], ...]:
    """King-connected planar cell sets up to translation, grouped by size.

    Plain breadth-first growth; meant for small sizes (the compiled
    enumerator handles the large counts).
    """
    if n_max < 1:
        return ((),)
    levels = [(), (frozenset({(0, 0)}),)]
    for _ in range(2, n_max + 1):
        nxt = set()
        for P in levels[-1]:
            for x, y in P:
                for dx, dy in KING_MOVES:
                    c = (x + dx, y + dy)
                    if c not in P:
                        nxt.add(_normalise(P | {c}))
        levels.append(tuple(sorted(nxt, key=lambda s: sorted(s))))
    return tuple(levels)


def small_set_neighborhood_bruteforce(X: Polymer) -> Polymer:
    """``X*`` by explicitly translating every small set onto every block of ``X``."""
    out = set(X.blocks)
    for level in fixed_polyplets(SMALL_SET_MAX)[1:]:
        for P in level:
            for cx, cy in P:
                for bx, by in X.blocks:
                    out.update((bx + x - cx, by + y - cy) for x, y in P)
    return X.with_blocks(out)


def enumerate_connected_polymers(geometry: TorusGeometry, j: int, max_size: int,
                                 anchor=(0, 0)) -> list[Polymer]:
    """All connected scale-``j`` polymers containing ``anchor`` with at most ``max_size`` blocks.

    Deterministic order: by size, then by sorted block list.
    """
    nb = geometry.blocks_per_axis(j)
    seen = set()
    for level in fixed_polyplets(max_size)[1:]:
        for P in level:
            for cx, cy in P:
                blocks = frozenset(((anchor[0] + x - cx) % nb, (anchor[1] + y - cy) % nb)
                                   for x, y in P)
                seen.add(blocks)
    polys = [Polymer(j, b, nb, geometry.L) for b in seen]
    polys = [P for P in polys if is_connected(P)]
    polys.sort(key=lambda P: (P.size, P.sorted_blocks()))
    return polys


# ------------------------------------------------------ counting identities


PREIMAGE_ENUMERATION_LIMIT = 20  # fine blocks; 2^20 subsets


def closure_preimage_count(X: Polymer, z) -> tuple[Fraction, Fraction]:
    """Both sides of ``sum_{Y : closure(Y) = X} z^{|Y|} = ((1+z)^{L^2} - 1)^{|X|}``.

    ``X`` is a polymer at scale ``j+1 >= 1``.  The left side enumerates every
    subset of the fine blocks of ``X`` and keeps those whose closure is all
    of ``X``; it is exact rational arithmetic throughout.
    """
    if X.size == 0:
        raise InvalidParameter("closure_preimage_count needs a nonempty polymer")
    z = Fraction(z)
    L2 = X.L**2
    n_fine = L2 * X.size
    if n_fine > PREIMAGE_ENUMERATION_LIMIT:
        raise SizeLimitError(
            f"{n_fine} fine blocks exceed the enumeration limit {PREIMAGE_ENUMERATION_LIMIT}"
        )
    # fine block i belongs to coarse block i // L2; a subset has closure X iff
    # every group of L2 bits is nonempty
    group_masks = [((1 << L2) - 1) << (k * L2) for k in range(X.size)]
    by_size = [0] * (n_fine + 1)
    for mask in range(1, 1 << n_fine):
        if all(mask & g for g in group_masks):
            by_size[mask.bit_count()] += 1
    lhs = sum((Fraction(c) * z**k for k, c in enumerate(by_size) if c), Fraction(0))
    rhs = ((1 + z) ** L2 - 1) ** X.size
    return lhs, rhs


@dataclass(frozen=True)
class SetSizesReport:
    L: int
    max_blocks: int
    eta: float
    counts: tuple[int, ...]
    max_closure: tuple[int, ...]
    margin_general: float
    margin_large: float
    supremal_eta: float
    small_sets_ok: bool

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


@lru_cache(maxsize=8)
def _closure_statistics(n_max: int, L: int):
    from ._polyplets import enumerate_closure_statistics

    count, max_closure, hist = enumerate_closure_statistics(n_max, L)
    return count, max_closure, hist


def setsizes_margin(L: int, eta: float = 0.0, max_blocks: int = 12) -> SetSizesReport:
    """Worst-case slack in the closure size inequalities over connected polymers.

    For every connected polymer ``X`` of at most ``max_blocks`` blocks and
    every placement relative to the next-scale grid:

    * general form: ``(1+eta)|closure X| <= |X| + 8 (1+eta)`` (one component);
    * non-small form: ``(1+eta)|closure X| <= |X|`` when ``|X| > 4``.

    Polymers of at most ``max_blocks < L**2`` blocks never wrap a torus with
    ``L**2`` blocks per axis, so planar enumeration is exact for a two-scale
    torus of that size.
    """
    if L < 5:
        raise InvalidParameter("the closure inequalities need L >= 5")
    if max_blocks < SMALL_SET_MAX + 1:
        raise InvalidParameter("max_blocks must exceed the small-set size")
    count, max_closure, _ = _closure_statistics(int(max_blocks), int(L))
    k = 1.0 + eta
    sizes = np.arange(1, max_blocks + 1)
    mc = max_closure[1:].astype(float)
    margin_general = float(np.min(sizes + 8 * k - k * mc))
    large = sizes > SMALL_SET_MAX
    margin_large = float(np.min(sizes[large] - k * mc[large]))
    supremal = float(np.min(sizes[large] / mc[large]) - 1.0)
    small_ok = bool(np.all(mc[~large] <= sizes[~large] + 8))
    return SetSizesReport(L=L, max_blocks=max_blocks, eta=eta, counts=tuple(int(c) for c in count),
                          max_closure=tuple(int(c) for c in max_closure),
                          margin_general=margin_general, margin_large=margin_large,
                          supremal_eta=supremal, small_sets_ok=small_ok)


# ----------------------------------------------------------------- regulator


DEFAULT_C_KAPPA = 1e-6  # calibrated against the regulator expectation check


@dataclass(frozen=True)
class RegulatorParams:
    """Constants of the large-field regulator.

    ``kappa_L = c_kappa * rho**2 / log L``.
    """

    rho: int
    L: int
    c1: float = 1.0
    c2: float = 0.01
    c_w: float = 0.01
    c_kappa: float = DEFAULT_C_KAPPA
    c4: float = 1.0

    def __post_init__(self):
        if self.L < 2 or self.rho < 1:
            raise InvalidParameter("need L >= 2 and rho >= 1")
        if not (0 < self.c2 < self.c1):
            raise InvalidParameter("need 0 < c2 < c1")
        if self.c_kappa <= 0 or self.c_w <= 0 or self.c4 <= 0:
            raise InvalidParameter("c_kappa, c_w and c4 must be positive")

    @classmethod
    def for_distribution(cls, J: StepDistribution, L: int, **kw) -> "RegulatorParams":
        return cls(rho=J.rho, L=L, **kw)

    @property
    def kappa_L(self) -> float:
        return self.c_kappa * self.rho**2 / math.log(self.L)

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["kappa_L"] = self.kappa_L
        return d


@dataclass
class FieldDerivatives:
    """First and second nearest-neighbour differences of a torus field."""

    first: np.ndarray  # (4, side, side)
    second: np.ndarray  # (16, side, side)

    @classmethod
    def of(cls, phi: np.ndarray) -> "FieldDerivatives":
        phi = np.asarray(phi, dtype=float)
        first = np.stack([grad(phi, e) for e in UNIT_DIRECTIONS])
        second = np.stack([grad(g, e) for g in first for e in UNIT_DIRECTIONS])
        return cls(first, second)

    @property
    def energy_density(self) -> np.ndarray:
        """``(1/2) sum_e |grad^e phi(x)|^2`` at each site."""
        return 0.5 * (self.first**2).sum(axis=0)

    @property
    def max_first(self) -> np.ndarray:
        return np.abs(self.first).max(axis=0)

    @property
    def max_second(self) -> np.ndarray:
        return np.abs(self.second).max(axis=0)


def _block_max(site_values: np.ndarray, b: int) -> np.ndarray:
    nb = site_values.shape[-1] // b
    lead = site_values.shape[:-2]
    return site_values.reshape(*lead, nb, b, nb, b).max(axis=(-3, -1))


def _star_max(block_values: np.ndarray) -> np.ndarray:
    """Maximum over ``B*`` (the 7 x 7 block square around ``B``) for every ``B``."""
    nb = block_values.shape[-1]
    size = 2 * NEIGHBOURHOOD_RADIUS + 1
    if size >= nb:
        m = block_values.max(axis=(-2, -1), keepdims=True)
        return np.broadcast_to(m, block_values.shape)
    lead = (1,) * (block_values.ndim - 2)
    return maximum_filter(block_values, size=lead + (size, size), mode="wrap")


def inner_boundary(mask: np.ndarray) -> np.ndarray:
    """Sites of ``mask`` with a nearest neighbour outside it."""
    out = np.zeros_like(mask)
    for e in UNIT_DIRECTIONS:
        out |= mask & ~np.roll(mask, (-e[0], -e[1]), axis=(0, 1))
    return out


@dataclass(frozen=True)
class RegulatorTerms:
    """Quadratic functionals of the field; arrays when evaluated on a batch."""

    bulk: float  # ||grad_j phi||^2 on L^2_j(X)
    boundary: float  # ||grad_j phi||^2 on L^2_j(dX)
    W2: float  # W_j(X, grad_j^2 phi)^2
    w2: float  # w_j(X, phi)^2

    def exponent(self, params: RegulatorParams):
        k = params.kappa_L
        return params.c1 * k * self.bulk + params.c2 * k * self.boundary + params.c1 * k * self.W2


def regulator_terms(X: Polymer, phi: np.ndarray,
                    derivs: FieldDerivatives | None = None) -> RegulatorTerms:
    """The quadratic field functionals entering ``G_j`` and ``w_j`` on ``X``.

    ``phi`` may carry leading batch axes; the terms are then arrays.
    """
    phi = np.asarray(phi, dtype=float)
    if phi.shape[-2:] != (X.side, X.side):
        raise InvalidParameter(f"field shape {phi.shape} does not match torus side {X.side}")
    d = derivs or FieldDerivatives.of(phi)
    b = X.block_side
    Lj = float(b)
    mask = X.site_mask()
    dens = d.energy_density
    bulk = dens[..., mask].sum(axis=-1)
    bnd = inner_boundary(mask)
    boundary = Lj * dens[..., bnd].sum(axis=-1)
    sel = np.zeros((X.blocks_per_axis,) * 2, dtype=bool)
    for bx, by in X.blocks:
        sel[bx, by] = True
    m2 = _star_max(_block_max(d.max_second, b)) * Lj**2
    m1 = _star_max(_block_max(d.max_first, b)) * Lj
    W2 = (m2[..., sel] ** 2).sum(axis=-1)
    w2 = (np.maximum(m1, m2)[..., sel] ** 2).sum(axis=-1)
    if phi.ndim == 2:
        bulk, boundary, W2, w2 = (float(v) for v in (bulk, boundary, W2, w2))
    return RegulatorTerms(bulk=bulk, boundary=boundary, W2=W2, w2=w2)


def log_regulator_G(X: Polymer, phi: np.ndarray, params: RegulatorParams,
                    derivs: FieldDerivatives | None = None) -> float:
    return regulator_terms(X, phi, derivs).exponent(params)


def regulator_G(X: Polymer, phi: np.ndarray, params: RegulatorParams,
                derivs: FieldDerivatives | None = None) -> float:
    """``G_j(X, phi) = exp{c1 k |grad_j phi|^2_X + c2 k |grad_j phi|^2_dX + c1 k W_j^2}``."""
    return math.exp(log_regulator_G(X, phi, params, derivs))


def weak_regulator_w2(X: Polymer, phi: np.ndarray) -> float:
    """``w_j(X, phi)^2 = sum_B max_{n=1,2} ||grad_j^n phi||^2_{L^inf(B*)}``."""
    return regulator_terms(X, phi).w2


def regulator_whole_torus(geometry: TorusGeometry, phi: np.ndarray,
                          params: RegulatorParams) -> float:
    """``G_N(Lambda_N, phi)``: one block covering the torus, no boundary."""
    X = Polymer(geometry.N, frozenset({(0, 0)}), 1, geometry.L)
    return regulator_G(X, phi, params)


# ------------------------------------------------------- lattice inequalities


@dataclass(frozen=True)
class InequalitySides:
    kind: str
    lhs: float
    rhs: float

    @property
    def ratio(self) -> float:
        return self.lhs / self.rhs if self.rhs > 0 else (0.0 if self.lhs == 0 else math.inf)

    def holds(self, constant: float = 1.0, rtol: float = 1e-12) -> bool:
        return self.lhs <= constant * self.rhs * (1 + rtol) + 1e-300


TRACE_LINES = {  # k -> (line description, direction mu_k)
    1: (-1, 0),
    2: (0, 1),
    3: (1, 0),
    4: (0, -1),
}


def trace_sides(u: np.ndarray, k: int) -> InequalitySides:
    """Both sides of ``R^-1 sum_{l_k} u^2 <= R^-2 sum_B (u^2 + R |grad^{mu_k} u^2|)``.

    ``u`` is given on ``{0..R+1}^2`` so that the block ``B = {1..R}^2`` and
    its four outer boundary lines are all present.
    """
    u = np.asarray(u, dtype=float)
    R = u.shape[0] - 2
    if u.shape != (R + 2, R + 2) or R < 1:
        raise InvalidParameter("trace predicate needs a square array of side R + 2")
    u2 = u**2
    inner = slice(1, R + 1)
    lines = {1: u2[0, inner], 2: u2[inner, R + 1], 3: u2[R + 1, inner], 4: u2[inner, 0]}
    mx, my = TRACE_LINES[k]
    shifted = u2[1 + mx : R + 1 + mx, 1 + my : R + 1 + my]
    grad_u2 = shifted - u2[inner, inner]
    lhs = float(lines[k].sum()) / R
    rhs = float((u2[inner, inner] + R * np.abs(grad_u2)).sum()) / R**2
    return InequalitySides("trace", lhs, rhs)


def sobolev_sides(f: np.ndarray) -> InequalitySides:
    """Both sides of ``||f||^2_{L^inf(B)} <= C sum_{a<=2} R^{2a-2} ||grad^a f||^2_{L^2(B)}``.

    ``f`` is given on ``B`` plus a collar of two sites; ``||grad^a f||^2``
    sums over all direction strings in ``{+-e1, +-e2}^a``.
    """
    f = np.asarray(f, dtype=float)
    R = f.shape[0] - 4
    if f.shape != (R + 4, R + 4) or R < 1:
        raise InvalidParameter("Sobolev predicate needs a square array of side R + 4")
    B = (slice(2, R + 2), slice(2, R + 2))

    def shift(g, e):
        return g[2 + e[0] : R + 2 + e[0], 2 + e[1] : R + 2 + e[1]]

    norms = [float((f[B] ** 2).sum()), 0.0, 0.0]
    for e in UNIT_DIRECTIONS:
        d1 = np.roll(f, (-e[0], -e[1]), axis=(0, 1)) - f  # valid away from the far edge
        norms[1] += float((d1[B] ** 2).sum())
        for e2 in UNIT_DIRECTIONS:
            d2 = np.roll(d1, (-e2[0], -e2[1]), axis=(0, 1)) - d1
            norms[2] += float((d2[B] ** 2).sum())
    lhs = float((f[B] ** 2).max())
    rhs = sum(R ** (2 * a - 2) * norms[a] for a in range(3))
    return InequalitySides("sobolev", lhs, rhs)


def quad_exp_sides(C: np.ndarray, tol: float = 1e-12) -> InequalitySides:
    """``E[exp(1/2 sum zeta^2)] = det(I - C)^{-1/2}`` against ``exp(Tr C)``."""
    C = np.asarray(C, dtype=float)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise InvalidParameter("covariance must be a square matrix")
    C = 0.5 * (C + C.T)
    ev = np.linalg.eigvalsh(C)
    if ev.min() < -tol:
        raise PreconditionViolation("covariance is not positive semidefinite")
    if ev.max() > 0.5 + tol:
        raise PreconditionViolation(f"largest eigenvalue {ev.max():.6g} exceeds 1/2")
    log_lhs = -0.5 * float(np.sum(np.log1p(-ev)))
    return InequalitySides("quad_exp", math.exp(log_lhs), math.exp(float(np.trace(C))))


def lattice_inequality_sides(kind: str, inputs, **kw) -> InequalitySides:
    if kind == "trace":
        return trace_sides(inputs, kw.get("k", 1))
    if kind == "sobolev":
        return sobolev_sides(inputs)
    if kind == "quad_exp":
        return quad_exp_sides(inputs)
    raise InvalidParameter(f"unknown inequality {kind!r}")


def random_smooth_field(rng: np.random.Generator, n: int, wavelength: float,
                        modes: int = 3) -> np.ndarray:
    """A random trigonometric polynomial on an ``n x n`` patch.

    Frequencies are integer multiples of ``2 pi / wavelength`` up to
    ``modes``; amplitudes decay like ``1/(1+|k|^2)``; a random offset is added.
    """
    x = np.arange(n, dtype=float)
    X1, X2 = np.meshgrid(x, x, indexing="ij")
    out = np.full((n, n), rng.normal())
    w = 2 * np.pi / wavelength
    for k1, k2 in itertools.product(range(-modes, modes + 1), range(0, modes + 1)):
        if (k1, k2) == (0, 0):
            continue
        amp = rng.normal() / (1.0 + k1 * k1 + k2 * k2)
        out += amp * np.cos(w * (k1 * X1 + k2 * X2) + rng.uniform(0, 2 * np.pi))
    return out


def random_covariance(rng: np.random.Generator, n: int, lam_max: float = 0.5) -> np.ndarray:
    """Random symmetric matrix with spectrum uniform in ``[0, lam_max]``."""
    Q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    ev = rng.uniform(0.0, lam_max, size=n)
    return (Q * ev) @ Q.T
