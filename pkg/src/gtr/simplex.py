"""Measurement simplexes: construction, projection and barycentric geometry.

All simplexes are regular, inscribed in the unit sphere and centred at the
origin.  Outcome indices are 0-based throughout the package.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

GEOM_TOL = 1e-12
CLAMP_TOL = 1e-9


class GeometryError(ValueError):
    pass


class ProjectionOutsideMembrane(GeometryError):
    """The orthogonal projection of a state misses the closed simplex."""


class OutsideSimplex(GeometryError):
    pass


class DegenerateState(GeometryError):
    """The on-membrane state lies on a face, so some sub-region is empty."""


@dataclass(frozen=True, eq=False)
class Simplex:
    """A regular (N-1)-simplex with unit vertices, embedded in R^M.

    Parameters
    ----------
    vertices : array_like, shape (N, M)
        Outcome states.  Validated on construction.
    """

    vertices: np.ndarray
    _basis: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[0] < 2:
            raise GeometryError("need at least two vertices given as an (N, M) array")
        n, m = v.shape
        if n - 1 > m:
            raise GeometryError(f"{n} outcomes need ambient dimension >= {n - 1}, got {m}")
        norms = np.linalg.norm(v, axis=1)
        if np.max(np.abs(norms - 1.0)) > 1e-10:
            raise GeometryError("simplex vertices must have unit norm")
        if np.linalg.norm(v.sum(axis=0)) > 1e-10:
            raise GeometryError("simplex vertices must sum to zero")
        gram = v @ v.T
        off = gram[~np.eye(n, dtype=bool)]
        if np.max(np.abs(off + 1.0 / (n - 1))) > 1e-10:
            raise GeometryError("simplex must be regular (pairwise dot -1/(N-1))")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        # orthonormal basis of the linear span (= affine hull, origin inside)
        u, s, vt = np.linalg.svd(v, full_matrices=False)
        basis = vt[: n - 1]
        basis.setflags(write=False)
        object.__setattr__(self, "_basis", basis)

    @property
    def n_outcomes(self) -> int:
        return self.vertices.shape[0]

    @property
    def ambient_dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def span_basis(self) -> np.ndarray:
        """Orthonormal rows spanning the membrane plane."""
        return self._basis

    def normal_basis(self) -> np.ndarray:
        """Orthonormal rows spanning the complement of the membrane plane."""
        m = self.ambient_dim
        full = np.linalg.svd(self._basis, full_matrices=True)[2]
        return full[self._basis.shape[0]: m]

    def to_dict(self) -> dict:
        return {"vertices": self.vertices.tolist()}


def _canonical_vertices(n: int) -> np.ndarray:
    # centred standard basis of R^n, expressed in a Helmert frame of the
    # sum-zero hyperplane so that vertices use the first n-1 coordinates
    e = np.eye(n) - 1.0 / n
    e /= np.linalg.norm(e[0])
    helmert = np.zeros((n - 1, n))
    for k in range(1, n):
        helmert[k - 1, :k] = 1.0
        helmert[k - 1, k] = -k
        helmert[k - 1] /= np.sqrt(k * (k + 1))
    return e @ helmert.T


def givens(m: int, rotations: Sequence[tuple[int, int, float]]) -> np.ndarray:
    """Orthogonal M x M matrix composed from (i, j, angle) plane rotations."""
    r = np.eye(m)
    for i, j, angle in rotations:
        if not (0 <= i < m and 0 <= j < m) or i == j:
            raise GeometryError(f"invalid rotation plane ({i}, {j}) for dimension {m}")
        g = np.eye(m)
        c, s = np.cos(angle), np.sin(angle)
        g[i, i] = c
        g[j, j] = c
        g[i, j] = -s
        g[j, i] = s
        r = g @ r
    return r


def make_regular_simplex(n: int, m: int, rotations: Sequence[tuple[int, int, float]] = ()) -> Simplex:
    """Build a regular simplex with ``n`` outcomes in R^m.

    With no rotations the vertices occupy the first ``n - 1`` coordinates.
    ``rotations`` is a sequence of Givens rotations ``(i, j, angle)`` applied
    in order.
    """
    if n < 2:
        raise GeometryError("a measurement needs at least two outcomes")
    if n - 1 > m:
        raise GeometryError(f"{n} outcomes need ambient dimension >= {n - 1}, got {m}")
    v = np.zeros((n, m))
    v[:, : n - 1] = _canonical_vertices(n)
    if rotations:
        v = v @ givens(m, rotations).T
    return Simplex(v)


def band(axis) -> Simplex:
    """Two-outcome simplex (an elastic band) between ``axis`` and ``-axis``."""
    a = np.asarray(axis, dtype=float)
    a = a / np.linalg.norm(a)
    return Simplex(np.vstack([a, -a]))


def _weights(simplex: Simplex, p: np.ndarray) -> np.ndarray:
    # closed form for a regular centred simplex: b_i = (1 + (N-1) x_i.p) / N
    n = simplex.n_outcomes
    return (1.0 + (n - 1) * (p @ simplex.vertices.T)) / n


def project_onto(simplex: Simplex, x) -> np.ndarray:
    """Orthogonal projection of ``x`` onto the membrane plane.

    Raises
    ------
    ProjectionOutsideMembrane
        If the projection falls outside the closed simplex.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (simplex.ambient_dim,):
        raise GeometryError(f"state has shape {x.shape}, expected ({simplex.ambient_dim},)")
    if np.linalg.norm(x) > 1.0 + 1e-10:
        raise GeometryError("states must lie in the unit ball")
    b = simplex.span_basis
    xp = (x @ b.T) @ b
    if np.min(_weights(simplex, xp)) < -CLAMP_TOL:
        raise ProjectionOutsideMembrane("projection lies outside the measurement simplex")
    return xp


def barycentric_of(simplex: Simplex, p) -> np.ndarray:
    """Barycentric weights of an on-membrane point ``p``."""
    p = np.asarray(p, dtype=float)
    w = _weights(simplex, p)
    if np.min(w) < -CLAMP_TOL:
        raise OutsideSimplex(f"point outside simplex (min weight {np.min(w):.3g})")
    w = np.clip(w, 0.0, None)
    w /= w.sum()
    if np.linalg.norm(w @ simplex.vertices - p) > CLAMP_TOL:
        raise OutsideSimplex("point does not lie in the simplex plane")
    return w


def point_of(simplex: Simplex, weights) -> np.ndarray:
    return np.asarray(weights, dtype=float) @ simplex.vertices


def region_scores(bx: np.ndarray, by: np.ndarray) -> np.ndarray:
    """Ratios b_j(y)/b_j(x); empty sub-regions (b_j(x) = 0) score +inf.

    ``by`` may be a single weight vector or a stack of them.
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        r = by / bx
    r = np.where(bx > 0, r, np.inf)
    return r


def regions_of(bx: np.ndarray, by: np.ndarray) -> np.ndarray:
    """Vectorised region index (ties to the lowest index) for weight stacks."""
    return np.argmin(region_scores(bx, np.atleast_2d(by)), axis=-1)


def region_of(simplex: Simplex, x_par, y, return_tie: bool = False):
    """Index of the sub-region A_i that contains ``y``.

    A_i is the convex hull of the vertices with ``x_i`` replaced by
    ``x_par``.  Ties (``y`` on a tension surface) resolve to the lowest index;
    pass ``return_tie=True`` to also receive a flag.
    """
    bx = barycentric_of(simplex, x_par)
    if np.min(bx) <= 0.0:
        raise DegenerateState("x_par lies on a face of the simplex")
    by = barycentric_of(simplex, y)
    r = by / bx
    i = int(np.argmin(r))
    if not return_tie:
        return i
    tie = int(np.sum(np.abs(r - r[i]) <= GEOM_TOL * max(1.0, abs(r[i])))) > 1
    return i, tie


def subregion_measures(simplex: Simplex, x_par) -> np.ndarray:
    """Relative Lebesgue measure of each sub-region A_i.

    The simplex with apex ``x_par`` replacing vertex ``x_i`` has volume
    ``b_i(x_par)`` times the full volume, computed here from determinants so
    the identity with :func:`barycentric_of` is checked rather than assumed.
    """
    x_par = np.asarray(x_par, dtype=float)
    barycentric_of(simplex, x_par)  # validates membership
    coords = simplex.vertices @ simplex.span_basis.T  # (N, N-1)
    xc = simplex.span_basis @ x_par
    full = _signed_volume(coords)
    out = np.empty(simplex.n_outcomes)
    for i in range(simplex.n_outcomes):
        c = coords.copy()
        c[i] = xc
        out[i] = abs(_signed_volume(c)) / abs(full)
    return out


def _signed_volume(coords: np.ndarray) -> float:
    d = coords[1:] - coords[0]
    return float(np.linalg.det(d))


def sample_uniform_weights(n: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform points on the simplex as barycentric weights (Dirichlet(1,...,1))."""
    e = rng.standard_exponential((size, n))
    return e / e.sum(axis=1, keepdims=True)
