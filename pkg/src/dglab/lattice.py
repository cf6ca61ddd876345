"""Torus geometry, step distributions and lattice Fourier multipliers.

Momenta on the dual torus are carried as integer indices ``k`` with
``p = 2*pi*k/side``.  Trigonometric functions of ``p . x`` are evaluated from
the integer product ``k . x mod side`` so that every multiplier is exactly
symmetric under ``p -> -p`` and under the lattice symmetries.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import InvalidParameter

NN_OFFSETS = ((1, 0), (-1, 0), (0, 1), (0, -1))
# directions e in ê = {±e1, ±e2}, in the order used by every stencil below
UNIT_DIRECTIONS = ((1, 0), (-1, 0), (0, 1), (0, -1))


@dataclass(frozen=True)
class TorusGeometry:
    """The torus of side ``L**N`` in two dimensions."""

    L: int
    N: int

    def __post_init__(self):
        if int(self.L) != self.L or self.L < 2:
            raise InvalidParameter(f"L must be an integer >= 2, got {self.L}")
        if int(self.N) != self.N or self.N < 1:
            raise InvalidParameter(f"N must be an integer >= 1, got {self.N}")

    @property
    def side(self) -> int:
        return self.L**self.N

    @property
    def volume(self) -> int:
        return self.side**2

    def block_side(self, j: int) -> int:
        return self.L**j

    def blocks_per_axis(self, j: int) -> int:
        if not 0 <= j <= self.N:
            raise InvalidParameter(f"scale {j} outside 0..{self.N}")
        return self.L ** (self.N - j)

    def dual_indices(self) -> np.ndarray:
        return dual_indices(self.side)

    def to_dict(self) -> dict:
        return {"L": self.L, "N": self.N}


def dual_indices(side: int) -> np.ndarray:
    """Integer indices k with 2*pi*k/side in (-pi, pi], in FFT order."""
    k = np.fft.fftfreq(side, d=1.0 / side).round().astype(np.int64)
    if side % 2 == 0:
        k[k == -side // 2] = side // 2
    return k


def momenta(side: int) -> tuple[np.ndarray, np.ndarray]:
    """Meshgrid of momenta (p1, p2) on the dual torus in FFT layout."""
    p = 2 * np.pi * dual_indices(side) / side
    return np.meshgrid(p, p, indexing="ij")


def _check_offsets(offsets) -> tuple[tuple[int, int], ...]:
    pts = set()
    for x in offsets:
        if len(x) != 2:
            raise InvalidParameter(f"offset {x!r} is not a 2-vector")
        a, b = int(x[0]), int(x[1])
        if (a, b) != (x[0], x[1]):
            raise InvalidParameter(f"offset {x!r} is not integral")
        pts.add((a, b))
    if (0, 0) in pts:
        raise InvalidParameter("step distribution contains the zero offset")
    for a, b in pts:
        for img in ((-a, -b), (b, a), (-a, b), (a, -b)):
            if img not in pts:
                raise InvalidParameter(
                    f"offsets not closed under lattice symmetries: {img} missing"
                )
    for e in NN_OFFSETS:
        if e not in pts:
            raise InvalidParameter(f"nearest-neighbour offset {e} missing")
    return tuple(sorted(pts))


@dataclass(frozen=True, eq=False)
class StepDistribution:
    """A finite symmetric set of lattice offsets defining ``Delta_J``.

    ``rho`` and ``v2`` are exact; ``theta`` is obtained by grid minimisation
    on first access and cached.
    """

    offsets: tuple[tuple[int, int], ...]
    name: str = field(default="explicit")

    def __post_init__(self):
        object.__setattr__(self, "offsets", _check_offsets(self.offsets))

    def __eq__(self, other):
        return isinstance(other, StepDistribution) and self.offsets == other.offsets

    def __hash__(self):
        return hash(self.offsets)

    @property
    def size(self) -> int:
        return len(self.offsets)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.offsets, dtype=np.int64)

    @property
    def rho(self) -> int:
        return int(np.abs(self.array).max())

    @property
    def v2(self) -> float:
        x1 = self.array[:, 0].astype(float)
        return float((x1**2).sum() / (2 * self.size))

    @cached_property
    def theta(self) -> float:
        return spectral_theta(self)

    @property
    def beta_free(self) -> float:
        return 8 * np.pi * self.v2

    def digest(self) -> str:
        blob = json.dumps([list(o) for o in self.offsets]).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def to_dict(self) -> dict:
        return {"name": self.name, "offsets": [list(o) for o in self.offsets]}

    def __repr__(self):
        return f"StepDistribution({self.name}, |J|={self.size}, rho={self.rho})"


def regularity_warnings(J: StepDistribution, C: float | None) -> list[str]:
    """Warnings when ``theta_J >= 1/C`` or ``v_J >= rho_J / C`` fails.

    ``C`` has no canonical value, so ``None`` disables the check.
    """
    if C is None:
        return []
    out = []
    if J.theta < 1.0 / C:
        out.append(f"theta_J = {J.theta:.6g} below 1/C = {1.0 / C:.6g}")
    v = float(np.sqrt(J.v2))
    if v < J.rho / C:
        out.append(f"v_J = {v:.6g} below rho_J/C = {J.rho / C:.6g}")
    return out


def nearest_neighbour() -> StepDistribution:
    return StepDistribution(NN_OFFSETS, name="nn")


def standard_range_rho(rho: int) -> StepDistribution:
    """``J_rho``: all nonzero offsets with sup-norm at most ``rho``."""
    if int(rho) != rho or rho < 1:
        raise InvalidParameter(f"rho must be an integer >= 1, got {rho}")
    r = range(-rho, rho + 1)
    pts = [(a, b) for a in r for b in r if (a, b) != (0, 0)]
    return StepDistribution(tuple(pts), name=f"J{rho}")


def step_distribution_from_spec(spec) -> StepDistribution:
    """Build J from ``"nn"``, ``{"rho": r}`` or ``{"offsets": [...]}``."""
    if isinstance(spec, StepDistribution):
        return spec
    if spec in ("nn", "nearest-neighbour", "nearest_neighbour"):
        return nearest_neighbour()
    if isinstance(spec, dict):
        if spec.get("kind") in ("nn", "nearest-neighbour"):
            return nearest_neighbour()
        if "rho" in spec and spec["rho"] is not None:
            return standard_range_rho(int(spec["rho"]))
        if "offsets" in spec and spec["offsets"] is not None:
            return StepDistribution(tuple(tuple(o) for o in spec["offsets"]))
    raise InvalidParameter(f"unrecognised step distribution spec {spec!r}")


# ---------------------------------------------------------------- multipliers


def multiplier_lambda(p1, p2) -> np.ndarray:
    """Symbol of ``-Delta``: ``sum_e (1 - cos p.e)``."""
    p1 = np.asarray(p1, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    return 4.0 * (np.sin(p1 / 2) ** 2 + np.sin(p2 / 2) ** 2)


def multiplier_lambda_J(J: StepDistribution, p1, p2) -> np.ndarray:
    """Symbol of ``-Delta_J``: ``|J|^-1 sum_x (1 - cos p.x)``."""
    p1 = np.asarray(p1, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    out = np.zeros(np.broadcast(p1, p2).shape)
    for a, b in J.offsets:
        out += np.sin((a * p1 + b * p2) / 2) ** 2
    return out * (2.0 / J.size)


def lambda_from_indices(k1, k2, side: int) -> np.ndarray:
    k1 = np.asarray(k1, dtype=np.int64)
    k2 = np.asarray(k2, dtype=np.int64)
    s1 = np.sin(np.pi * np.mod(k1, side) / side)
    s2 = np.sin(np.pi * np.mod(k2, side) / side)
    return 4.0 * (s1**2 + s2**2)


def lambda_J_from_indices(J: StepDistribution, k1, k2, side: int) -> np.ndarray:
    """``lambda_J`` at ``p = 2 pi k/side`` from the integer phases ``k.x mod side``."""
    k1 = np.asarray(k1, dtype=np.int64)
    k2 = np.asarray(k2, dtype=np.int64)
    out = np.zeros(np.broadcast(k1, k2).shape)
    for a, b in J.offsets:
        m = np.mod(a * k1 + b * k2, side)
        out += np.sin(np.pi * m / side) ** 2
    return out * (2.0 / J.size)


def spectral_theta(J: StepDistribution, grid_resolution: int = 1024,
                   refinements: int = 30) -> float:
    """``inf_{p != 0} lambda_J(p)/lambda(p)`` by grid search plus local zoom.

    The symmetric fundamental domain ``0 <= p1 <= p2 <= pi`` suffices.  The
    ratio extends continuously to ``p = 0`` along rays, where its limit is
    ``v_J^2 |p|^2/lambda(p) -> v_J^2``; that value enters as a candidate.
    """
    if not isinstance(J, StepDistribution):
        raise InvalidParameter("spectral_theta needs a StepDistribution")
    if grid_resolution < 64:
        raise InvalidParameter("grid_resolution must be >= 64")
    n = grid_resolution // 2
    g = np.linspace(0.0, np.pi, n + 1)
    p1, p2 = np.meshgrid(g, g, indexing="ij")
    mask = (p1 <= p2) & ((p1 > 0) | (p2 > 0))
    ratio = np.full(p1.shape, np.inf)
    ratio[mask] = multiplier_lambda_J(J, p1[mask], p2[mask]) / multiplier_lambda(
        p1[mask], p2[mask]
    )
    i, k = np.unravel_index(np.argmin(ratio), ratio.shape)
    best = float(ratio[i, k])
    c1, c2, width = g[i], g[k], g[1] - g[0]
    for _ in range(refinements):
        a = np.linspace(max(c1 - width, 0.0), min(c1 + width, np.pi), 9)
        b = np.linspace(max(c2 - width, 0.0), min(c2 + width, np.pi), 9)
        q1, q2 = np.meshgrid(a, b, indexing="ij")
        lam = multiplier_lambda(q1, q2)
        ok = lam > 1e-14
        r = np.full(q1.shape, np.inf)
        r[ok] = multiplier_lambda_J(J, q1[ok], q2[ok]) / lam[ok]
        ii, kk = np.unravel_index(np.argmin(r), r.shape)
        if r[ii, kk] < best:
            best = float(r[ii, kk])
        c1, c2, width = q1[ii, kk], q2[ii, kk], width / 2
    return min(best, J.v2)


# ------------------------------------------------------------ field operators


def grad(f: np.ndarray, e: tuple[int, int]) -> np.ndarray:
    """``(nabla^e f)(x) = f(x+e) - f(x)`` with periodic wrap on the last two axes."""
    return np.roll(f, shift=(-e[0], -e[1]), axis=(-2, -1)) - f


def laplacian(f: np.ndarray) -> np.ndarray:
    """Unnormalised nearest-neighbour Laplacian ``sum_e nabla^e f``."""
    return sum(grad(f, e) for e in UNIT_DIRECTIONS)


def laplacian_J(J: StepDistribution, f: np.ndarray) -> np.ndarray:
    """``Delta_J f(x) = |J|^-1 sum_y (f(x+y) - f(x))``."""
    acc = np.zeros_like(f, dtype=float)
    for a, b in J.offsets:
        acc += np.roll(f, shift=(-a, -b), axis=(-2, -1))
    return acc / J.size - f


def gradient_energy(f: np.ndarray) -> float:
    """``|nabla f|^2 = 1/2 sum_x sum_{e in ê} |nabla^e f(x)|^2``."""
    return 0.5 * float(sum((grad(f, e) ** 2).sum() for e in UNIT_DIRECTIONS))


def second_derivatives(f: np.ndarray) -> list[np.ndarray]:
    """All ``nabla^{e} nabla^{e'} f`` for ordered pairs of unit directions."""
    return [grad(grad(f, e2), e1) for e1 in UNIT_DIRECTIONS for e2 in UNIT_DIRECTIONS]


def inner(f: np.ndarray, g: np.ndarray) -> float:
    return float(np.vdot(f, g).real)


def apply_multiplier(f: np.ndarray, symbol: np.ndarray) -> np.ndarray:
    """Apply a Fourier multiplier given on the FFT-ordered dual torus."""
    return np.real(np.fft.ifft2(np.fft.fft2(f) * symbol))


def symbol_grid(J: StepDistribution | None, side: int) -> np.ndarray:
    """``lambda_J`` (or ``lambda`` when ``J`` is None) on the full dual torus."""
    k = dual_indices(side)
    k1, k2 = np.meshgrid(k, k, indexing="ij")
    if J is None:
        return lambda_from_indices(k1, k2, side)
    return lambda_J_from_indices(J, k1, k2, side)


def laplacian_J_matrix(J: StepDistribution, shape: tuple[int, int]) -> np.ndarray:
    """Dense matrix of ``-Delta_J`` on a (possibly tiny, rectangular) torus.

    Offsets are reduced modulo the torus, so several of them may land on the
    same site or on the site itself.
    """
    n1, n2 = shape
    n = n1 * n2
    M = np.zeros((n, n))
    for x1 in range(n1):
        for x2 in range(n2):
            i = x1 * n2 + x2
            for a, b in J.offsets:
                k = ((x1 + a) % n1) * n2 + (x2 + b) % n2
                M[i, i] += 1.0 / J.size
                M[i, k] -= 1.0 / J.size
    return M


def laplacian_matrix(shape: tuple[int, int]) -> np.ndarray:
    """Dense matrix of the unnormalised ``-Delta`` on a tiny torus."""
    return 4.0 * laplacian_J_matrix(nearest_neighbour(), shape)
