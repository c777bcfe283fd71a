"""Dense linear-algebra kernel: centering, cross-covariance, Jacobi SVD and
soft null-space projectors.

Everything here is a pure function of its inputs and works in float64.
"""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .exceptions import (
    DimensionError,
    InvalidInputError,
    InvalidRankError,
    InvalidStrengthError,
)

VISUAL = "visual"
TEXTUAL = "textual"
_SIDES = (VISUAL, TEXTUAL)

_MAX_SWEEPS = 80


def as_matrix(m, name="matrix"):
    """Validate ``m`` as a finite 2-D array and return it as float64."""
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2:
        raise InvalidInputError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.size == 0:
        raise InvalidInputError(f"{name} is empty (shape {arr.shape})")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True)
class SvdResult:
    left_vectors: np.ndarray
    singular_values: np.ndarray
    right_vectors: np.ndarray

    def reconstruct(self):
        return (self.left_vectors * self.singular_values) @ self.right_vectors.T


@dataclass(frozen=True)
class ProjectionOperator:
    """Soft projector ``I - strength * basis @ basis.T``.

    ``basis`` holds the ``rank`` retained singular vectors as columns.
    """

    matrix: np.ndarray
    rank: int
    strength: float
    basis: np.ndarray
    side: str

    @property
    def dim(self):
        return self.matrix.shape[0]

    @property
    def is_identity(self):
        return self.rank == 0 or self.strength == 0.0


def mean_center(m):
    """Subtract column means. Returns ``(centered, mean)``."""
    m = as_matrix(m)
    mean = m.mean(axis=0)
    return m - mean, mean


def cross_covariance(v_centered, t_centered):
    """``(1/N) v_centered.T @ t_centered`` for two centered sample matrices."""
    v = as_matrix(v_centered, "v_centered")
    t = as_matrix(t_centered, "t_centered")
    if v.shape[0] != t.shape[0]:
        raise DimensionError(
            f"row count mismatch: {v.shape[0]} visual vs {t.shape[0]} textual samples"
        )
    return (v.T @ t) / v.shape[0]


@lru_cache(maxsize=None)
def _round_robin(d):
    """Pairings for one cyclic sweep; each round holds disjoint (p, q) pairs."""
    n = d + (d % 2)
    players = list(range(n))
    rounds = []
    for _ in range(n - 1):
        pairs = [(players[i], players[n - 1 - i]) for i in range(n // 2)]
        pairs = [(min(p, q), max(p, q)) for p, q in pairs if p < d and q < d]
        if pairs:
            rounds.append((np.array([p for p, _ in pairs]), np.array([q for _, q in pairs])))
        # keep player 0 fixed, rotate the rest
        players = [players[0], players[-1]] + players[1:-1]
    return tuple(rounds)


def _complete_basis(u, good):
    """Fill columns of ``u`` not flagged ``good`` with an orthonormal completion."""
    d = u.shape[0]
    basis = [u[:, j] for j in range(u.shape[1]) if good[j]]
    fill = []
    for e in np.eye(d):
        if len(basis) + len(fill) == d:
            break
        x = e.copy()
        for _ in range(2):
            for b in basis + fill:
                x -= (b @ x) * b
        norm = np.linalg.norm(x)
        if norm > 1e-8:
            fill.append(x / norm)
    out = u.copy()
    it = iter(fill)
    for j in range(u.shape[1]):
        if not good[j]:
            out[:, j] = next(it)
    return out


def svd(c):
    """Singular value decomposition of a square matrix by one-sided Jacobi.

    Rotations are applied in a fixed round-robin sweep order, so the result is
    bitwise reproducible for a given input. Singular values are returned in
    descending order and each left vector is sign-fixed so that its first
    nonzero entry is nonnegative.
    """
    a = as_matrix(c, "c")
    d, n = a.shape
    if d != n:
        raise DimensionError(f"svd expects a square matrix, got {a.shape}")
    # row j of ``h`` is [column j of the working matrix | column j of V]
    h = np.concatenate([a.T, np.eye(d)], axis=1)
    tol = np.finfo(np.float64).eps * d

    for _ in range(_MAX_SWEEPS):
        rotated = False
        for p, q in _round_robin(d):
            hp = h[p]
            hq = h[q]
            ap = hp[:, :d]
            aq = hq[:, :d]
            alpha = (ap * ap).sum(axis=1)
            beta = (aq * aq).sum(axis=1)
            gamma = (ap * aq).sum(axis=1)
            active = np.abs(gamma) > tol * np.sqrt(alpha * beta)
            if not active.any():
                continue
            rotated = True
            zeta = (beta - alpha) / (2.0 * np.where(active, gamma, 1.0))
            t = np.where(zeta >= 0.0, 1.0, -1.0) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            t = np.where(active, t, 0.0)
            cs = (1.0 / np.sqrt(1.0 + t * t))[:, None]
            sn = cs * t[:, None]
            h[p] = cs * hp - sn * hq
            h[q] = sn * hp + cs * hq
        if not rotated:
            break

    a = h[:, :d].T
    v = h[:, d:].T
    sigma = np.sqrt((a * a).sum(axis=0))
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    a = a[:, order]
    v = np.ascontiguousarray(v[:, order])

    floor = sigma[0] * tol if sigma[0] > 0 else 0.0
    good = sigma > floor
    u = np.zeros_like(a)
    u[:, good] = a[:, good] / sigma[good]
    if not good.all():
        u = _complete_basis(u, good)

    for j in range(d):
        nz = np.flatnonzero(np.abs(u[:, j]) > 1e-12)
        if nz.size and u[nz[0], j] < 0:
            u[:, j] = -u[:, j]
            v[:, j] = -v[:, j]

    return SvdResult(left_vectors=u, singular_values=sigma, right_vectors=v)


def build_projector(basis_full, k, strength, side=VISUAL):
    """Soft null-space projector from the first ``k`` columns of ``basis_full``.

    ``strength=0`` or ``k=0`` give an exact identity matrix.
    """
    basis_full = as_matrix(basis_full, "basis_full")
    d = basis_full.shape[0]
    k = int(k)
    if k < 0 or k > min(d, basis_full.shape[1]):
        raise InvalidRankError(f"rank k={k} outside [0, {d}]")
    strength = float(strength)
    if not 0.0 <= strength <= 1.0:
        raise InvalidStrengthError(f"strength lambda={strength} outside [0, 1]")
    if side not in _SIDES:
        raise InvalidInputError(f"side must be one of {_SIDES}, got {side!r}")

    basis = basis_full[:, :k].copy()
    if k == 0 or strength == 0.0:
        matrix = np.eye(d)
    else:
        matrix = np.eye(d) - strength * (basis @ basis.T)
        # exact symmetry; the product is symmetric only up to rounding
        matrix = 0.5 * (matrix + matrix.T)
    return ProjectionOperator(matrix=matrix, rank=k, strength=strength, basis=basis, side=side)


def apply_projection(features, p):
    """Right-multiply row features by the projector."""
    features = as_matrix(features, "features")
    if features.shape[1] != p.dim:
        raise DimensionError(
            f"features have {features.shape[1]} columns, projector acts on {p.dim}"
        )
    if p.is_identity:
        return features.copy()
    return features @ p.matrix
