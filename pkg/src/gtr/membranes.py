"""Disintegration densities on measurement simplexes.

Two-outcome membranes are parametrised by the coordinate ``t`` in [-1, 1]
along the band, with ``t = +1`` at outcome 0 and ``t = -1`` at outcome 1.
A breaking point at ``t`` lands in the sub-region of outcome 0 whenever
``t <= t_x``, where ``t_x`` is the projection of the state on the band.

Densities for N >= 3 are expressed relative to the uniform distribution on
the simplex, so no chart-dependent constant ever appears in public results.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from math import comb
from typing import Callable, Iterator, Sequence

import numpy as np
from shapely.geometry import Polygon

from .simplex import (
    Simplex,
    barycentric_of,
    regions_of,
    sample_uniform_weights,
)

MASS_TOL = 1e-10
MAX_ENUMERATION = 24


class DensityError(ValueError):
    pass


class BudgetExceeded(RuntimeError):
    pass


class RejectionStall(RuntimeError):
    pass


@dataclass(frozen=True)
class RegionIntegral:
    """Outcome probabilities of one membrane for one on-membrane state."""

    probs: np.ndarray
    stderr: np.ndarray | None = None
    exact: bool = True
    flags: tuple[str, ...] = ()


@dataclass(frozen=True)
class BreakPoint:
    """Sampled disintegration point, as barycentric weights."""

    weights: np.ndarray
    source: str = "continuous"

    def location(self, simplex: Simplex) -> np.ndarray:
        return self.weights @ simplex.vertices


class MembraneDensity:
    """Base class for membrane densities.

    Subclasses implement :meth:`integrate` (probabilities of every sub-region
    for an on-membrane state given by its barycentric weights) and
    :meth:`sample` (breaking points as barycentric weights).
    """

    kind = "abstract"
    n_outcomes: int | None = None

    def check_simplex(self, simplex: Simplex) -> None:
        if self.n_outcomes is not None and simplex.n_outcomes != self.n_outcomes:
            raise DensityError(
                f"{self.kind} density needs {self.n_outcomes} outcomes, "
                f"simplex has {simplex.n_outcomes}"
            )

    def integrate(self, bx: np.ndarray, rng=None, mc_budget: int = 0, target_se: float = 0.0) -> RegionIntegral:
        raise NotImplementedError

    def sample(self, n: int, size: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(weights, atomic)`` with ``weights`` of shape (size, n)."""
        raise NotImplementedError

    def to_spec(self) -> dict:
        raise NotImplementedError


class Density1D(MembraneDensity):
    """Piecewise-constant density on [-1, 1] plus point masses.

    Parameters
    ----------
    edges : sequence of float
        Sorted piece boundaries in [-1, 1].
    masses : sequence of float
        Probability mass of each piece (``len(edges) - 1`` values).
    atoms, atom_masses : sequence of float
        Locations and masses of point masses.
    """

    kind = "piecewise"
    n_outcomes = 2

    def __init__(self, edges=(-1.0, 1.0), masses=(1.0,), atoms=(), atom_masses=()):
        edges = np.asarray(edges, dtype=float)
        masses = np.asarray(masses, dtype=float)
        atoms = np.asarray(atoms, dtype=float)
        atom_masses = np.asarray(atom_masses, dtype=float)
        if masses.size and (edges.ndim != 1 or edges.size != masses.size + 1):
            raise DensityError("need one more breakpoint than piece weights")
        if edges.size and (np.any(np.diff(edges) < 0) or edges[0] < -1 or edges[-1] > 1):
            raise DensityError("breakpoints must be sorted inside [-1, 1]")
        if np.any(masses < 0) or np.any(atom_masses < 0):
            raise DensityError("masses must be non-negative")
        if atoms.shape != atom_masses.shape:
            raise DensityError("atoms and atom masses differ in length")
        if np.any(np.abs(atoms) > 1):
            raise DensityError("atoms must lie in [-1, 1]")
        widths = np.diff(edges) if masses.size else np.zeros(0)
        if np.any((widths == 0) & (masses > 0)):
            raise DensityError("zero-width piece carries mass; use an atom")
        total = masses.sum() + atom_masses.sum()
        if abs(total - 1.0) > MASS_TOL:
            raise DensityError(f"total mass is {total!r}, expected 1")
        self.edges = edges
        self.masses = masses
        self.atoms = atoms
        self.atom_masses = atom_masses

    # continuous CDF on [-1, t]
    def cdf(self, t: float) -> float:
        if self.masses.size == 0:
            return 0.0
        lo, hi = self.edges[:-1], self.edges[1:]
        width = hi - lo
        with np.errstate(divide="ignore", invalid="ignore"):
            frac = np.where(width > 0, np.clip((t - lo) / width, 0.0, 1.0), (t >= hi).astype(float))
        return float(np.sum(self.masses * frac))

    def mass_between(self, lo: float, hi: float) -> float:
        """Continuous mass on [lo, hi] (atoms excluded)."""
        return self.cdf(hi) - self.cdf(lo)

    def is_symmetric(self, tol: float = 1e-12) -> bool:
        """True when the density is invariant under t -> -t."""
        cont = float(self.masses.sum())
        pts = np.concatenate([self.edges, -self.edges, [0.0]])
        if any(abs(self.cdf(t) + self.cdf(-t) - cont) > tol for t in pts):
            return False
        a = sorted(zip(np.round(self.atoms, 12), np.round(self.atom_masses, 12)))
        b = sorted(zip(np.round(-self.atoms, 12), np.round(self.atom_masses, 12)))
        return a == b

    def density_at(self, t: float) -> float:
        for a, b, m in zip(self.edges[:-1], self.edges[1:], self.masses):
            if a <= t <= b and b > a:
                return float(m / (b - a))
        return 0.0

    def integrate(self, bx, rng=None, mc_budget=0, target_se=0.0) -> RegionIntegral:
        t_x = 2.0 * float(bx[0]) - 1.0
        p0 = self.cdf(t_x)
        p1 = 1.0 - p0 - float(self.atom_masses.sum())
        flags = []
        lost = 0.0
        for loc, m in zip(self.atoms, self.atom_masses):
            if m == 0:
                continue
            if loc == t_x:
                lost += m
                flags.append("atom-at-state")
            elif loc < t_x:
                p0 += m
            else:
                p1 += m
        if lost:
            if lost >= 1.0 - MASS_TOL:
                raise DensityError("all membrane mass sits at the state: outcome undefined")
            p0, p1 = p0 / (1.0 - lost), p1 / (1.0 - lost)
        probs = np.clip(np.array([p0, p1]), 0.0, 1.0)
        return RegionIntegral(probs, np.zeros(2), True, tuple(flags))

    def sample_t(self, size: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        cont = float(self.masses.sum())
        u = rng.random(size)
        atomic = u >= cont
        t = np.empty(size)
        if cont > 0:
            cum = np.cumsum(self.masses) / cont
            idx = np.searchsorted(cum, rng.random(size), side="right")
            idx = np.minimum(idx, self.masses.size - 1)
            lo, hi = self.edges[idx], self.edges[idx + 1]
            t = lo + (hi - lo) * rng.random(size)
        if atomic.any():
            p = self.atom_masses / self.atom_masses.sum()
            t[atomic] = rng.choice(self.atoms, size=int(atomic.sum()), p=p)
        return t, atomic

    def sample(self, n, size, rng):
        if n != 2:
            raise DensityError("one-dimensional densities need a two-outcome simplex")
        t, atomic = self.sample_t(size, rng)
        b0 = (1.0 + t) / 2.0
        return np.column_stack([b0, 1.0 - b0]), atomic

    def to_spec(self) -> dict:
        spec = {"kind": "piecewise", "breaks": self.edges.tolist(), "weights": self.masses.tolist()}
        if self.atoms.size:
            spec = {"kind": "atomic", "locs": self.atoms.tolist(), "masses": self.atom_masses.tolist()}
            if self.masses.size:
                spec.update(breaks=self.edges.tolist(), weights=self.masses.tolist())
        return spec


class Uniform(MembraneDensity):
    """Uniformly breakable membrane for any number of outcomes."""

    kind = "uniform"

    def integrate(self, bx, rng=None, mc_budget=0, target_se=0.0):
        # relative volume of A_i equals the i-th barycentric weight
        return RegionIntegral(np.array(bx, dtype=float), np.zeros(len(bx)), True)

    def sample(self, n, size, rng):
        return sample_uniform_weights(n, size, rng), np.zeros(size, dtype=bool)

    def to_spec(self):
        return {"kind": "uniform"}


class UniformBand(Density1D):
    """Uniform two-outcome band (constant density 1/2 on [-1, 1])."""

    kind = "uniform"

    def __init__(self):
        super().__init__(edges=(-1.0, 1.0), masses=(1.0,))

    def to_spec(self):
        return {"kind": "uniform"}


class Epsilon(Density1D):
    """Band breakable uniformly on [-eps, eps] only; ``eps = 0`` is a point mass at 0."""

    kind = "epsilon"

    def __init__(self, eps: float):
        eps = float(eps)
        if not 0.0 <= eps <= 1.0:
            raise DensityError(f"eps must lie in [0, 1], got {eps}")
        self.eps = eps
        if eps == 0.0:
            super().__init__(edges=(), masses=(), atoms=(0.0,), atom_masses=(1.0,))
        else:
            super().__init__(edges=(-eps, eps), masses=(1.0,))

    def to_spec(self):
        return {"kind": "epsilon", "eps": self.eps}


class Cellular1D(Density1D):
    """Band cut into ``n`` equal cells, uniformly breakable on ``breakable``."""

    kind = "cellular"

    def __init__(self, n: int, breakable: Sequence[int]):
        cells = sorted(set(int(c) for c in breakable))
        if n < 1:
            raise DensityError("need at least one cell")
        if not cells:
            raise DensityError("a cellular membrane needs at least one breakable cell")
        if cells[0] < 0 or cells[-1] >= n:
            raise DensityError(f"cell indices must lie in 0..{n - 1}")
        self.n = n
        self.breakable = tuple(cells)
        grid = np.linspace(-1.0, 1.0, n + 1)
        m = np.zeros(n)
        m[list(cells)] = 1.0 / len(cells)
        super().__init__(edges=grid, masses=m)

    def to_spec(self):
        return {"kind": "cellular", "n": self.n, "breakable": list(self.breakable)}


class Cellular2D(MembraneDensity):
    """Triangle membrane cut into ``k*k`` congruent cells by a barycentric grid.

    Cells are numbered with the ``k(k+1)/2`` upward triangles first (row-major
    in the lattice coordinates), then the ``k(k-1)/2`` downward ones.
    Sub-region masses are exact polygon intersections computed with shapely.
    """

    kind = "cellular"
    n_outcomes = 3

    def __init__(self, n: int, breakable: Sequence[int]):
        k = int(round(np.sqrt(n)))
        if k * k != n:
            raise DensityError("a three-outcome cellular membrane needs a square cell count")
        cells = sorted(set(int(c) for c in breakable))
        if not cells:
            raise DensityError("a cellular membrane needs at least one breakable cell")
        if cells[0] < 0 or cells[-1] >= n:
            raise DensityError(f"cell indices must lie in 0..{n - 1}")
        self.n = n
        self.k = k
        self.breakable = tuple(cells)
        self.cells = grid_cells(k)[list(cells)]

    def integrate(self, bx, rng=None, mc_budget=0, target_se=0.0):
        overlap = cell_region_overlap(self.cells, np.asarray(bx, dtype=float))
        return RegionIntegral(overlap.mean(axis=0), np.zeros(3), True)

    def sample(self, n, size, rng):
        which = rng.integers(len(self.cells), size=size)
        corners = self.cells[which]  # (size, 3, 3) barycentric corners
        w = sample_uniform_weights(3, size, rng)
        return np.einsum("sk,skj->sj", w, corners), np.zeros(size, dtype=bool)

    def to_spec(self):
        return {"kind": "cellular", "n": self.n, "breakable": list(self.breakable)}


def grid_cells(k: int) -> np.ndarray:
    """Barycentric corners of the ``k*k`` grid cells of a triangle, shape (k*k, 3, 3)."""
    def w(a, b):
        return (a / k, b / k, (k - a - b) / k)

    up = [(w(a, b), w(a + 1, b), w(a, b + 1)) for a in range(k) for b in range(k - a)]
    down = [(w(a + 1, b), w(a, b + 1), w(a + 1, b + 1)) for a in range(k) for b in range(k - a - 1)]
    return np.array(up + down, dtype=float)


def cell_region_overlap(cells: np.ndarray, bx: np.ndarray) -> np.ndarray:
    """Fraction of each cell's area inside each sub-region A_i (rows sum to 1)."""
    # the first two barycentric weights are an affine chart of the triangle
    corners = np.eye(3)
    regions = []
    for i in range(3):
        c = corners.copy()
        c[i] = bx
        regions.append(Polygon(c[:, :2]))
    out = np.zeros((len(cells), 3))
    for ci, cell in enumerate(cells):
        poly = Polygon(cell[:, :2])
        area = poly.area
        for i, reg in enumerate(regions):
            if reg.area > 0:
                out[ci, i] = poly.intersection(reg).area / area
    return out / out.sum(axis=1, keepdims=True)


class GeneralSampled(MembraneDensity):
    """Arbitrary density given by an evaluator, integrated by Monte Carlo.

    Parameters
    ----------
    evaluator : callable
        Maps an array of barycentric weights, shape (m, N), to density values
        relative to the uniform distribution (so its uniform mean is 1).
    sup_bound : float
        Upper bound of ``evaluator``, used for rejection sampling.
    """

    kind = "general"

    def __init__(self, evaluator: Callable[[np.ndarray], np.ndarray], sup_bound: float, name: str = "general"):
        if sup_bound <= 0:
            raise DensityError("sup_bound must be positive")
        self.evaluator = evaluator
        self.sup_bound = float(sup_bound)
        self.name = name

    def integrate(self, bx, rng=None, mc_budget=200_000, target_se=1e-3, batch=20_000):
        if rng is None:
            rng = np.random.default_rng(0)
        bx = np.asarray(bx, dtype=float)
        n = bx.size
        s1 = np.zeros(n)
        s2 = np.zeros(n)
        used = 0
        while used < mc_budget:
            m = min(batch, mc_budget - used)
            y = sample_uniform_weights(n, m, rng)
            f = np.asarray(self.evaluator(y), dtype=float)
            if np.any(f < 0):
                raise DensityError("density evaluated negative")
            hit = np.zeros((m, n))
            hit[np.arange(m), regions_of(bx, y)] = f
            s1 += hit.sum(axis=0)
            s2 += (hit ** 2).sum(axis=0)
            used += m
            mean = s1 / used
            se = np.sqrt(np.maximum(s2 / used - mean ** 2, 0.0) / max(used - 1, 1))
            if used >= 1000 and np.max(se) <= target_se:
                return RegionIntegral(mean, se, False)
        raise BudgetExceeded(f"standard error {np.max(se):.3g} above {target_se:.3g} after {used} samples")

    def sample(self, n, size, rng, max_tries: int = 10**7):
        out = np.empty((size, n))
        got = 0
        tried = 0
        while got < size:
            m = max(1024, 2 * (size - got))
            y = sample_uniform_weights(n, m, rng)
            keep = rng.random(m) * self.sup_bound < np.asarray(self.evaluator(y))
            acc = y[keep][: size - got]
            out[got: got + len(acc)] = acc
            got += len(acc)
            tried += m
            if tried >= 1_000_000 and got / tried < 1e-6:
                raise RejectionStall("acceptance rate below 1e-6; check sup_bound")
            if tried > max_tries and got < size:
                raise RejectionStall("rejection sampler exhausted its budget")
        return out, np.zeros(size, dtype=bool)

    def to_spec(self):
        return {"kind": "general", "name": self.name, "sup": self.sup_bound}


# -- constructors matching the documented operations -------------------------

def density_uniform(simplex: Simplex | None = None) -> MembraneDensity:
    if simplex is not None and simplex.n_outcomes == 2:
        return UniformBand()
    return Uniform()


def density_epsilon(eps: float) -> Epsilon:
    if not 0.0 <= eps <= 1.0:
        raise DensityError(f"eps must lie in [0, 1], got {eps}")
    return Epsilon(eps)


def density_piecewise(breaks, weights) -> Density1D:
    return Density1D(edges=breaks, masses=weights)


def density_atomic(locs, masses, breaks=None, weights=None) -> Density1D:
    if breaks is None:
        return Density1D(edges=(), masses=(), atoms=locs, atom_masses=masses)
    return Density1D(edges=breaks, masses=weights, atoms=locs, atom_masses=masses)


def density_cellular(n: int, breakable, n_outcomes: int = 2) -> MembraneDensity:
    if n_outcomes == 2:
        return Cellular1D(n, breakable)
    if n_outcomes == 3:
        return Cellular2D(n, breakable)
    raise DensityError("cellular membranes are available for two and three outcomes")


def integrate_region(density: MembraneDensity, simplex: Simplex, x_par, i: int,
                     mc_budget: int = 200_000, target_se: float = 1e-3, rng=None) -> tuple[float, float]:
    """Probability that the membrane breaks inside A_i, with its standard error.

    Exact densities return a zero error.
    """
    density.check_simplex(simplex)
    bx = barycentric_of(simplex, x_par)
    res = density.integrate(bx, rng=rng, mc_budget=mc_budget, target_se=target_se)
    return float(res.probs[i]), float(res.stderr[i]) if res.stderr is not None else 0.0


def sample_breakpoint(density: MembraneDensity, simplex: Simplex, rng: np.random.Generator) -> BreakPoint:
    density.check_simplex(simplex)
    w, atomic = density.sample(simplex.n_outcomes, 1, rng)
    return BreakPoint(w[0], "atomic" if atomic[0] else "continuous")


# -- cellular family ---------------------------------------------------------

def enumerate_cellular(n: int) -> Iterator[Cellular1D]:
    """Every two-outcome cellular membrane with ``n`` cells (2**n - 1 of them)."""
    if not 1 <= n <= MAX_ENUMERATION:
        raise DensityError(f"enumeration supports 1 <= n <= {MAX_ENUMERATION}; sample instead")
    for mask in range(1, 2 ** n):
        yield Cellular1D(n, [c for c in range(n) if mask >> c & 1])


def sample_cellular(n: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """Random non-empty breakable masks, uniform over the 2**n - 1 choices."""
    masks = rng.random((size, n)) < 0.5
    empty = ~masks.any(axis=1)
    while empty.any():
        masks[empty] = rng.random((int(empty.sum()), n)) < 0.5
        empty = ~masks.any(axis=1)
    return masks


def _cell_split(n: int, c: Fraction) -> tuple[int, Fraction, int]:
    # cells fully left of c, fraction of the straddling cell left of c, cells fully right
    u = (c + 1) * n / 2
    left = int(u)  # floor for u >= 0
    frac = u - left
    if left >= n:
        return n, Fraction(0), 0
    if frac == 0:
        return left, Fraction(0), n - left
    return left, frac, n - left - 1


def cellular_average_probability(n: int, cos_theta) -> tuple[Fraction, Fraction]:
    """Exact average outcome probabilities over all 2**n - 1 cellular bands.

    ``cos_theta`` is the on-band coordinate of the state; it is converted to
    an exact rational (floats keep their binary value).  Membranes are
    grouped by how many breakable cells lie left/right of the state and
    whether the straddling cell is breakable, which is equivalent to the
    plain enumeration and stays fast for any ``n``.
    """
    if n < 1:
        raise DensityError("need at least one cell")
    c = Fraction(cos_theta)
    if not -1 <= c <= 1:
        raise DensityError("cos_theta must lie in [-1, 1]")
    left, frac, right = _cell_split(n, c)
    straddle = 1 if frac > 0 else 0
    total = Fraction(0)
    for kl in range(left + 1):
        cl = comb(left, kl)
        for kr in range(right + 1):
            cr = comb(right, kr)
            for s in range(straddle + 1):
                k = kl + kr + s
                if k == 0:
                    continue
                total += cl * cr * (kl + s * frac) / k
    p = total / (2 ** n - 1)
    return p, 1 - p


def cellular_average_bruteforce(n: int, cos_theta) -> Fraction:
    """Plain enumeration of the same average; reference for tests."""
    c = Fraction(cos_theta)
    left, frac, right = _cell_split(n, c)
    cells = [Fraction(1)] * left + ([frac] if frac > 0 else []) + [Fraction(0)] * right
    acc = Fraction(0)
    for mask in range(1, 2 ** n):
        chosen = [cells[i] for i in range(n) if mask >> i & 1]
        acc += sum(chosen, Fraction(0)) / len(chosen)
    return acc / (2 ** n - 1)


def sampled_cellular_average(n: int, cos_theta: float, membranes: int, rng: np.random.Generator,
                             chunk: int = 2000) -> tuple[float, float]:
    """Monte Carlo average over random two-outcome cellular bands.

    Returns the mean probability of outcome 0 and its standard error.
    """
    left, frac, right = _cell_split(n, Fraction(cos_theta))
    share = np.zeros(n)
    share[:left] = 1.0
    if frac > 0:
        share[left] = float(frac)
    vals = []
    done = 0
    while done < membranes:
        m = min(chunk, membranes - done)
        masks = sample_cellular(n, m, rng)
        vals.append((masks @ share) / masks.sum(axis=1))
        done += m
    v = np.concatenate(vals)
    return float(v.mean()), float(v.std(ddof=1) / np.sqrt(v.size))


def sampled_cellular_average_2d(k: int, bx, membranes: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Monte Carlo average over random ``k*k``-cell triangle membranes."""
    overlap = cell_region_overlap(grid_cells(k), np.asarray(bx, dtype=float))
    masks = sample_cellular(k * k, membranes, rng).astype(float)
    vals = (masks @ overlap) / masks.sum(axis=1, keepdims=True)
    return vals.mean(axis=0), vals.std(axis=0, ddof=1) / np.sqrt(membranes)


def density_from_spec(spec: dict, n_outcomes: int = 2) -> MembraneDensity:
    """Build a density from its scenario-file description."""
    kind = spec.get("kind")
    if kind == "uniform":
        return UniformBand() if n_outcomes == 2 else Uniform()
    if kind == "epsilon":
        return density_epsilon(float(spec["eps"]))
    if kind == "piecewise":
        return density_piecewise(spec["breaks"], spec["weights"])
    if kind == "atomic":
        return density_atomic(spec["locs"], spec["masses"], spec.get("breaks"), spec.get("weights"))
    if kind == "cellular":
        return density_cellular(int(spec["n"]), spec["breakable"], n_outcomes)
    raise DensityError(f"unknown density kind {kind!r}")

