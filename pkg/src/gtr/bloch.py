"""Generalized Bloch representation of N-level density matrices.

States are ``D(x) = (I + c_N x . Lambda) / N`` with ``c_N = sqrt(N(N-1)/2)``
and generators normalised to ``Tr(Lambda_i Lambda_j) = 2 delta_ij``.

Generator order (tag ``GENERATOR_TAG``): the symmetric matrices
``|j><k| + |k><j|`` for ``j < k`` in lexicographic order, then the
antisymmetric ``-i|j><k| + i|k><j|`` in the same order, then the diagonal
matrices ``sqrt(2/(l(l+1))) diag(1, ..., 1, -l, 0, ...)`` for l = 1..N-1.
For N = 2 this is (sigma_x, sigma_y, sigma_z).
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from .engine import Measurement
from .membranes import Uniform
from .simplex import Simplex, barycentric_of, project_onto

GENERATOR_TAG = "gell-mann-v1"
HERM_TOL = 1e-12
PSD_TOL = 1e-10
MAX_DIM = 16


class BlochError(ValueError):
    pass


class ZeroProbabilityBranch(BlochError):
    pass


def c_const(n: int) -> float:
    return float(np.sqrt(n * (n - 1) / 2.0))


@lru_cache(maxsize=None)
def _gell_mann(n: int) -> np.ndarray:
    if not 2 <= n <= MAX_DIM:
        raise BlochError(f"dimension must lie in 2..{MAX_DIM}")
    pairs = [(j, k) for j in range(n) for k in range(j + 1, n)]
    mats = []
    for j, k in pairs:
        m = np.zeros((n, n), dtype=complex)
        m[j, k] = m[k, j] = 1.0
        mats.append(m)
    for j, k in pairs:
        m = np.zeros((n, n), dtype=complex)
        m[j, k] = -1j
        m[k, j] = 1j
        mats.append(m)
    for l in range(1, n):
        d = np.zeros(n)
        d[:l] = 1.0
        d[l] = -l
        mats.append(np.diag(d * np.sqrt(2.0 / (l * (l + 1)))).astype(complex))
    out = np.array(mats)
    out.setflags(write=False)
    return out


def gell_mann(n: int) -> np.ndarray:
    """The N^2 - 1 generators, shape (N^2 - 1, N, N)."""
    return _gell_mann(n)


def tensor_basis(na: int, nb: int) -> np.ndarray:
    """Generators of SU(na*nb) built from subsystem generators.

    Order: ``Lambda^A_i (x) I / sqrt(nb)``, then ``I (x) Lambda^B_j / sqrt(na)``,
    then ``Lambda^A_i (x) Lambda^B_j / sqrt(2)`` (i-major).  Same normalisation
    as :func:`gell_mann`.
    """
    ga, gb = gell_mann(na), gell_mann(nb)
    ia, ib = np.eye(na), np.eye(nb)
    mats = [np.kron(a, ib) / np.sqrt(nb) for a in ga]
    mats += [np.kron(ia, b) / np.sqrt(na) for b in gb]
    mats += [np.kron(a, b) / np.sqrt(2.0) for a in ga for b in gb]
    return np.array(mats)


def _check_basis(basis: np.ndarray) -> int:
    n = basis.shape[-1]
    if basis.shape != (n * n - 1, n, n):
        raise BlochError("basis must hold N^2 - 1 matrices of size N x N")
    return n


def validate_density(d, tol: float = PSD_TOL) -> np.ndarray:
    d = np.asarray(d, dtype=complex)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise BlochError("density matrix must be square")
    if np.max(np.abs(d - d.conj().T)) > HERM_TOL:
        raise BlochError("density matrix is not Hermitian")
    if abs(np.trace(d).real - 1.0) > HERM_TOL or abs(np.trace(d).imag) > HERM_TOL:
        raise BlochError("density matrix must have unit trace")
    sym = (d + d.conj().T) / 2
    if np.min(np.linalg.eigvalsh(sym)) < -tol:
        raise BlochError("density matrix is not positive semidefinite")
    return d


def to_bloch(d, basis: np.ndarray | None = None) -> np.ndarray:
    """Bloch vector ``x_i = N Tr(D Lambda_i) / (2 c_N)``."""
    d = np.asarray(d, dtype=complex)
    n = d.shape[0]
    basis = gell_mann(n) if basis is None else basis
    _check_basis(basis)
    tr = np.einsum("kij,ji->k", basis, d).real
    return tr * n / (2.0 * c_const(n))


def hermitian_to_vector(h, basis: np.ndarray | None = None) -> np.ndarray:
    """Coordinates of a traceless Hermitian matrix in Bloch units."""
    return to_bloch(h, basis)


def matrix_of(x, basis: np.ndarray) -> np.ndarray:
    n = _check_basis(basis)
    x = np.asarray(x, dtype=float)
    return (np.eye(n) + c_const(n) * np.einsum("k,kij->ij", x, basis)) / n


def from_bloch(x, basis: np.ndarray | None = None, check: bool = True) -> np.ndarray:
    """Density matrix of Bloch vector ``x``; rejects vectors outside the state region."""
    x = np.asarray(x, dtype=float)
    n = int(round(np.sqrt(x.size + 1)))
    basis = gell_mann(n) if basis is None else basis
    d = matrix_of(x, basis)
    if check and np.min(np.linalg.eigvalsh((d + d.conj().T) / 2)) < -PSD_TOL:
        raise BlochError("Bloch vector lies outside the convex state region")
    return d


def projector(psi) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    psi = psi / np.linalg.norm(psi)
    return np.outer(psi, psi.conj())


def basis_projectors(u) -> list[np.ndarray]:
    """Rank-one projectors onto the columns of a unitary ``u``."""
    u = np.asarray(u, dtype=complex)
    return [projector(u[:, i]) for i in range(u.shape[1])]


def _check_family(projectors) -> np.ndarray:
    p = np.asarray(projectors, dtype=complex)
    n = p.shape[-1]
    if p.shape[0] != n:
        raise BlochError("need N rank-one projectors")
    for i in range(n):
        if np.max(np.abs(p[i] @ p[i] - p[i])) > 1e-10 or abs(np.trace(p[i]).real - 1) > 1e-10:
            raise BlochError("family members must be rank-one projectors")
        for j in range(i + 1, n):
            if np.max(np.abs(p[i] @ p[j])) > 1e-10:
                raise BlochError("projectors are not mutually orthogonal")
    if np.max(np.abs(p.sum(axis=0) - np.eye(n))) > 1e-10:
        raise BlochError("projectors do not resolve the identity")
    return p


def eigen_simplex(projectors, basis: np.ndarray | None = None) -> Simplex:
    """Measurement simplex whose vertices are the Bloch vectors of the eigenprojectors."""
    p = _check_family(projectors)
    n = p.shape[-1]
    basis = gell_mann(n) if basis is None else basis
    return Simplex(np.array([to_bloch(q, basis) for q in p]))


def born_probabilities(d, projectors) -> np.ndarray:
    d = np.asarray(d, dtype=complex)
    return np.array([np.trace(d @ q).real for q in projectors])


def gtr_uniform_probabilities(d, projectors, basis: np.ndarray | None = None) -> np.ndarray:
    """Uniform-membrane probabilities: barycentric weights of the projected Bloch vector."""
    d = np.asarray(d, dtype=complex)
    basis = gell_mann(d.shape[0]) if basis is None else basis
    s = eigen_simplex(projectors, basis)
    return barycentric_of(s, project_onto(s, to_bloch(d, basis)))


def dephase(d, projectors) -> np.ndarray:
    d = np.asarray(d, dtype=complex)
    return sum(q @ d @ q for q in projectors)


def decohere_check(d, projectors, basis: np.ndarray | None = None, tol: float = 1e-10) -> tuple[bool, float]:
    """Compare the on-membrane state with the dephased density matrix.

    Returns ``(ok, residual)`` where ``residual`` is the largest entry of the
    difference.
    """
    d = np.asarray(d, dtype=complex)
    basis = gell_mann(d.shape[0]) if basis is None else basis
    s = eigen_simplex(projectors, basis)
    on = from_bloch(project_onto(s, to_bloch(d, basis)), basis)
    res = float(np.max(np.abs(on - dephase(d, projectors))))
    return res < tol, res


def luders_post_state(d, projectors, group) -> np.ndarray:
    d = np.asarray(d, dtype=complex)
    pg = sum(projectors[i] for i in group)
    p = np.trace(pg @ d).real
    if p <= 1e-14:
        raise ZeroProbabilityBranch(f"group {tuple(group)} has probability {p:.3g}")
    return pg @ d @ pg / p


def coherence_axes(group, n: int, basis: np.ndarray | None = None, unitary=None) -> np.ndarray:
    """Orthonormal Bloch directions of the coherences inside ``group``.

    These are the directions a purified fused outcome may move along so that
    it stays supported on the group's eigenspace.  ``unitary`` holds the
    eigenbasis as columns (identity by default).
    """
    basis = gell_mann(n) if basis is None else basis
    u = np.eye(n, dtype=complex) if unitary is None else np.asarray(unitary, dtype=complex)
    g = sorted(group)
    vecs = []
    for a in range(len(g)):
        for b in range(a + 1, len(g)):
            j, k = g[a], g[b]
            ej, ek = u[:, j], u[:, k]
            sym = np.outer(ej, ek.conj()) + np.outer(ek, ej.conj())
            asym = -1j * np.outer(ej, ek.conj()) + 1j * np.outer(ek, ej.conj())
            vecs.append(to_bloch(sym, basis))
            vecs.append(to_bloch(asym, basis))
    if not vecs:
        return np.zeros((0, n * n - 1))
    v = np.array(vecs)
    q, _ = np.linalg.qr(v.T)
    return q.T


def fused_measurement(projectors, groups, density=None, basis: np.ndarray | None = None, unitary=None, label: str = ""):
    """Second-type degenerate measurement on the eigen-simplex, Lüders compatible."""
    p = _check_family(projectors)
    n = p.shape[-1]
    basis = gell_mann(n) if basis is None else basis
    if unitary is None:
        unitary = np.column_stack([np.linalg.eigh(q)[1][:, -1] for q in p])
    axes = {gi: coherence_axes(g, n, basis, unitary) for gi, g in enumerate(groups) if len(g) > 1}
    return Measurement(eigen_simplex(p, basis), density or Uniform(), tuple(tuple(g) for g in groups),
                       "second", label, axes)


def purity_norm2(d) -> float:
    """Squared Bloch norm predicted from the purity: (N Tr D^2 - 1)/(N - 1)."""
    d = np.asarray(d, dtype=complex)
    n = d.shape[0]
    return float((n * np.trace(d @ d).real - 1.0) / (n - 1))


# -- bipartite systems --------------------------------------------------------

def partial_trace(d, na: int, nb: int, keep: str) -> np.ndarray:
    r = np.asarray(d, dtype=complex).reshape(na, nb, na, nb)
    if keep == "a":
        return np.einsum("ijkj->ik", r)
    if keep == "b":
        return np.einsum("ijil->jl", r)
    raise BlochError("keep must be 'a' or 'b'")


def direct_sum_coefficients(na: int, nb: int) -> tuple[float, float]:
    n = na * nb
    return float(np.sqrt((na - 1) / (n - 1))), float(np.sqrt((nb - 1) / (n - 1)))


def bipartite_decompose(d, na: int, nb: int):
    """Split the tensor-basis Bloch vector of ``d`` into local and correlation parts.

    Returns ``(x_a, x_b, x_corr, d_a, d_b)`` with ``x_a``/``x_b`` the Bloch
    vectors of the partial traces, so that the full vector is
    ``d_a x_a (+) d_b x_b (+) x_corr``.
    """
    d = np.asarray(d, dtype=complex)
    if d.shape != (na * nb, na * nb):
        raise BlochError(f"state of size {d.shape} does not factor as {na} x {nb}")
    x = to_bloch(d, tensor_basis(na, nb))
    la, lb = na * na - 1, nb * nb - 1
    xa = to_bloch(partial_trace(d, na, nb, "a"))
    xb = to_bloch(partial_trace(d, na, nb, "b"))
    da, db = direct_sum_coefficients(na, nb)
    return xa, xb, x[la + lb:], da, db


def product_correlation(xa, xb, na: int, nb: int) -> np.ndarray:
    """Correlation block of a product state, determined by the local vectors."""
    n = na * nb
    k = 2.0 * c_const(na) * c_const(nb) / (np.sqrt(2.0) * c_const(n))
    return k * np.outer(xa, xb).ravel()


def reconstruct_from_local(xa, xb, na: int, nb: int) -> np.ndarray:
    """Full tensor-basis Bloch vector of the product state with local vectors ``xa``, ``xb``."""
    da, db = direct_sum_coefficients(na, nb)
    return np.concatenate([da * np.asarray(xa), db * np.asarray(xb), product_correlation(xa, xb, na, nb)])


def product_residual(d, na: int, nb: int) -> float:
    """Distance between the Bloch vector of ``d`` and the product reconstruction."""
    x = to_bloch(d, tensor_basis(na, nb))
    xa, xb, _, _, _ = bipartite_decompose(d, na, nb)
    return float(np.linalg.norm(x - reconstruct_from_local(xa, xb, na, nb)))


# -- sequential projector algebra --------------------------------------------

def qq_operator(pa, pb) -> np.ndarray:
    pa = np.asarray(pa, dtype=complex)
    pb = np.asarray(pb, dtype=complex)
    i = np.eye(pa.shape[0])
    na, nb = i - pa, i - pb
    return pb @ pa @ pb - pa @ pb @ pa + nb @ na @ nb - na @ nb @ na


def sequential_born(first, second, d) -> float:
    """Probability of property ``first`` then ``second``: Tr(P1 P2 P1 D)."""
    return float(np.trace(first @ second @ first @ d).real)


def qq_value(pa, pb, d) -> float:
    return float(np.trace(qq_operator(pa, pb) @ np.asarray(d, dtype=complex)).real)


def check_projector(p, tol: float = HERM_TOL) -> None:
    p = np.asarray(p, dtype=complex)
    if np.max(np.abs(p @ p - p)) > tol or np.max(np.abs(p - p.conj().T)) > tol:
        raise BlochError("not an orthogonal projector")


# -- pure qubit states and the three-band argument ---------------------------

def qubit_state(direction) -> np.ndarray:
    """Pure qubit state vector whose Bloch vector is the unit ``direction``."""
    n = np.asarray(direction, dtype=float)
    n = n / np.linalg.norm(n)
    theta = np.arccos(np.clip(n[2], -1, 1))
    phi = np.arctan2(n[1], n[0])
    return np.array([np.cos(theta / 2), np.exp(1j * phi) * np.sin(theta / 2)])


def max_quantum_transition(p_c_to_mb: float, p_a_to_mc: float) -> float:
    """Largest Born value of P(a -> -b) given P(c -> -b) and P(a -> -c).

    Inserting the resolution of the identity over {c, -c} bounds
    ``|<a|-b>| <= |<a|c>||<c|-b>| + |<a|-c>||<-c|-b>|``.
    """
    s = np.sqrt(1 - p_a_to_mc) * np.sqrt(p_c_to_mb) + np.sqrt(p_a_to_mc) * np.sqrt(1 - p_c_to_mb)
    return float(min(1.0, s) ** 2)


def resolution_identity_residual(psi_a, psi_b, psi_c) -> float:
    """|<a|b> - sum over {c, c_perp} of <a|e><e|b>| for qubit vectors."""
    c = np.asarray(psi_c, dtype=complex)
    c = c / np.linalg.norm(c)
    cperp = np.array([-np.conj(c[1]), np.conj(c[0])])
    a = np.asarray(psi_a, dtype=complex)
    b = np.asarray(psi_b, dtype=complex)
    lhs = np.vdot(a, b)
    rhs = np.vdot(a, c) * np.vdot(c, b) + np.vdot(a, cperp) * np.vdot(cperp, b)
    return float(abs(lhs - rhs))


# -- random states for tests and checks --------------------------------------

def random_pure(n: int, rng: np.random.Generator) -> np.ndarray:
    v = rng.normal(size=n) + 1j * rng.normal(size=n)
    return projector(v)


def random_mixed(n: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    rank = n if rank is None else rank
    g = rng.normal(size=(n, rank)) + 1j * rng.normal(size=(n, rank))
    d = g @ g.conj().T
    return d / np.trace(d).real


def random_unitary(n: int, rng: np.random.Generator) -> np.ndarray:
    z = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_projector(n: int, rank: int, rng: np.random.Generator) -> np.ndarray:
    u = random_unitary(n, rng)[:, :rank]
    return u @ u.conj().T
