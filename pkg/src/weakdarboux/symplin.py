"""Linear symplectic algebra on a finite-dimensional space.

Conventions
-----------
A 2-form on ``R^d`` is stored as an antisymmetric ``d x d`` array ``W`` with
``omega(u, v) = u @ W @ v``.  The flat map sends ``u`` to the covector
``v -> omega(u, v)``, whose coefficients are ``u @ W``.  The standard form
``J_std`` is block diagonal with blocks ``[[0, 1], [-1, 0]]`` acting on
interleaved coordinates ``(x1, y1, x2, y2, ...)``.
"""

from dataclasses import dataclass
from itertools import product
from typing import NamedTuple

import numpy as np

from ._validation import as_antisymmetric, as_vector
from .exceptions import DegeneracyError, InputError

#: default sigma_min threshold below which a form counts as degenerate
DEFAULT_MARGIN = 1e-8


def antisym(M):
    """Return ``M`` antisymmetrized as a read-only float array."""
    A = as_antisymmetric(M)
    A.setflags(write=False)
    return A


def j_std(dim):
    """Standard Darboux matrix on ``R^dim`` (``dim`` even)."""
    if dim <= 0 or dim % 2:
        raise InputError(f"J_std needs a positive even dimension, got {dim}")
    J = np.zeros((dim, dim))
    idx = np.arange(0, dim, 2)
    J[idx, idx + 1] = 1.0
    J[idx + 1, idx] = -1.0
    return J


@dataclass(frozen=True)
class NormSpec:
    """A norm on ``R^d`` together with its dual norm on covectors.

    ``kind`` is one of ``"euclidean"``, ``"ell1"``, ``"ellinf"`` or ``"ellp"``
    (the latter requires ``p > 1``).
    """

    kind: str = "euclidean"
    p: float | None = None

    def __post_init__(self):
        if self.kind not in ("euclidean", "ell1", "ellinf", "ellp"):
            raise InputError(f"unknown norm kind {self.kind!r}")
        if self.kind == "ellp":
            if self.p is None or not self.p > 1:
                raise InputError("ellp norm requires p > 1")
        elif self.p is not None:
            raise InputError(f"p is only meaningful for ellp, not {self.kind}")

    @property
    def exponent(self):
        return {"euclidean": 2.0, "ell1": 1.0, "ellinf": np.inf}.get(self.kind, self.p)

    @property
    def dual_exponent(self):
        q = self.exponent
        if q == 1.0:
            return np.inf
        if q == np.inf:
            return 1.0
        return q / (q - 1.0)

    def __call__(self, u, axis=-1):
        return np.linalg.norm(np.asarray(u, dtype=float), ord=self.exponent, axis=axis)

    def dual(self, c, axis=-1):
        """Dual norm ``sup{|c(v)| : ||v|| <= 1}`` (Hoelder conjugate, closed form)."""
        return np.linalg.norm(np.asarray(c, dtype=float), ord=self.dual_exponent, axis=axis)

    def op_norm_to_dual(self, M):
        """Operator norm of ``v -> v @ M`` from ``(R^d, ||.||)`` to ``(R^d*, ||.||*)``.

        Closed form for the euclidean and ell1 norms; for ellinf the maximum
        over sign vectors is enumerated, which is only done for ``d <= 20``.
        """
        M = np.asarray(M, dtype=float)
        if self.kind == "euclidean":
            return float(np.linalg.norm(M, 2))
        if self.kind == "ell1":
            return float(np.max(np.abs(M)))
        if self.kind == "ellinf":
            d = M.shape[0]
            if d > 20:
                raise NotImplementedError("ellinf -> ell1 operator norm enumeration needs d <= 20")
            signs = np.array(list(product((-1.0, 1.0), repeat=d)))
            return float(np.max(np.abs(signs @ M).sum(axis=1)))
        raise NotImplementedError("operator norm for general ellp has no closed form")


class DegeneracyReport(NamedTuple):
    sigma_min: float
    rank: int
    invertible: bool


def flat(omega, u):
    """Coefficients of the covector ``v -> omega(u, v)``."""
    W = np.asarray(omega, dtype=float)
    u = as_vector(u, W.shape[0], "u")
    return u @ W


def omega_norm(omega, u, norm=NormSpec()):
    """``||u||_omega``: dual norm of ``flat(omega, u)``."""
    return float(norm.dual(flat(omega, u)))


def sigma_min(omega):
    """Smallest singular value; works on stacks of matrices as well."""
    W = np.asarray(omega, dtype=float)
    if W.shape[-1] == 0:
        return np.zeros(W.shape[:-2])
    return np.linalg.svd(W, compute_uv=False)[..., -1]


def degeneracy_report(omega, margin=DEFAULT_MARGIN):
    W = np.asarray(omega, dtype=float)
    s = np.linalg.svd(W, compute_uv=False)
    smin = float(s[-1]) if s.size else 0.0
    tol = max(W.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    rank = int(np.sum(s > tol))
    return DegeneracyReport(smin, rank, smin > margin)


def linear_darboux(omega, margin=DEFAULT_MARGIN):
    """Symplectic Gram-Schmidt: a matrix ``A`` with ``A.T @ omega @ A = J_std``.

    At each stage the remaining pair of basis candidates with the largest
    pairing is chosen as pivot, which keeps the deflation well conditioned.
    The deflation is applied twice per stage (classical re-orthogonalization).

    Raises
    ------
    DegeneracyError
        If the dimension is odd or ``sigma_min(omega) <= margin``.
    """
    W = np.asarray(omega, dtype=float)
    d = W.shape[0]
    if d % 2:
        raise DegeneracyError(f"odd dimension {d} admits no symplectic basis")
    rep = degeneracy_report(W, margin)
    if not rep.invertible:
        raise DegeneracyError(
            f"form is degenerate: sigma_min={rep.sigma_min:.3g} <= margin {margin:.3g}",
            sigma_min=rep.sigma_min)

    remaining = [np.eye(d)[:, i] for i in range(d)]
    cols = []
    while remaining:
        V = np.array(remaining).T
        P = V.T @ W @ V
        i, j = np.unravel_index(np.argmax(np.abs(P)), P.shape)
        pairing = P[i, j]
        if abs(pairing) <= np.finfo(float).eps * max(1.0, np.abs(W).max()):
            raise DegeneracyError("symplectic Gram-Schmidt broke down", sigma_min=rep.sigma_min)
        u = remaining[i]
        v = remaining[j] / pairing
        rest = [w for k, w in enumerate(remaining) if k not in (i, j)]
        for _ in range(2):
            rest = [w - (w @ W @ v) * u + (w @ W @ u) * v for w in rest]
        cols.extend([u, v])
        remaining = rest
    return np.array(cols).T


def darboux_pairing(u, eta, v, xi):
    """Canonical pairing ``<eta, v> - <xi, u>`` on ``E x E*``."""
    u, eta, v, xi = (np.asarray(a, dtype=float) for a in (u, eta, v, xi))
    if not (u.shape == eta.shape == v.shape == xi.shape) or u.ndim != 1:
        raise InputError("darboux_pairing needs four vectors of equal length")
    return float(eta @ v - xi @ u)
