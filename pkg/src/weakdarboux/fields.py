"""Form fields: smooth antisymmetric-matrix valued maps on regions of ``R^d``.

A :class:`FormField` is vectorized: called on an ``(P, d)`` array of points it
returns a ``(P, d, d)`` stack.  Polynomial fields are stored as coefficient
tables so they can be written to disk and differentiated exactly.
"""

from dataclasses import dataclass

import numpy as np

from ._validation import as_antisymmetric, as_points
from .exceptions import DomainError, InputError
from .symplin import NormSpec, j_std


@dataclass(frozen=True)
class Region:
    """A ball ``{x : ||x - center|| < radius}`` in a chosen norm.

    Balls are convex, so they are star-shaped about every interior point,
    which is all the radial primitive needs.
    """

    center: tuple
    radius: float
    norm: NormSpec = NormSpec()

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if not self.radius > 0:
            raise InputError("region radius must be positive")

    @property
    def dim(self):
        return len(self.center)

    def distance(self, X):
        X = np.asarray(X, dtype=float)
        return self.norm(X - np.asarray(self.center))

    def contains(self, X, slack=0.0):
        return self.distance(X) <= self.radius * (1.0 + slack)

    def to_dict(self):
        d = {"center": list(self.center), "radius": self.radius, "norm": self.norm.kind}
        if self.norm.p is not None:
            d["p"] = self.norm.p
        return d

    @classmethod
    def from_dict(cls, d):
        norm = NormSpec(d.get("norm", "euclidean"), d.get("p"))
        return cls(tuple(d["center"]), float(d["radius"]), norm)


def whole_space(dim, radius=1e6):
    return Region((0.0,) * dim, radius)


class FormField:
    """An antisymmetric-matrix valued map on a region of ``R^dim``.

    Parameters
    ----------
    dim : int
    func : callable
        Maps an ``(P, dim)`` array to a ``(P, dim, dim)`` array of
        antisymmetric matrices.
    region : Region, optional
        Defaults to a very large ball about the origin.
    name : str
        Label used in reports.
    """

    kind = "callable"

    def __init__(self, dim, func, region=None, name="field"):
        self.dim = int(dim)
        self._func = func
        self.region = region if region is not None else whole_space(self.dim)
        if self.region.dim != self.dim:
            raise InputError("region dimension does not match the field")
        self.name = name

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = x.reshape(-1, self.dim)
        W = self._func(X)
        return W[0] if single else W.reshape(x.shape[:-1] + (self.dim, self.dim))

    def check_inside(self, X, what="point"):
        X = as_points(X, self.dim)
        inside = self.region.contains(X, slack=1e-12)
        if not np.all(inside):
            bad = X[np.argmin(inside)]
            raise DomainError(f"{what} outside the region of {self.name}", x=bad)
        return X

    def scaled(self, c, name=None):
        return FormField(self.dim, lambda X: c * self._func(X), self.region,
                         name or f"{c:g}*{self.name}")

    def with_region(self, region):
        return FormField(self.dim, self._func, region, self.name)

    def to_dict(self):
        raise InputError(f"field {self.name!r} of kind {self.kind} cannot be serialized")


class ConstantField(FormField):
    kind = "constant"

    def __init__(self, matrix, region=None, name="constant"):
        self.matrix = as_antisymmetric(matrix)
        M = self.matrix
        super().__init__(M.shape[0], lambda X: np.broadcast_to(M, (X.shape[0],) + M.shape).copy(),
                         region, name)

    def with_region(self, region):
        return ConstantField(self.matrix, region, self.name)

    def to_dict(self):
        return {"dim": self.dim, "kind": "constant", "coefficients": self.matrix.tolist(),
                "region": self.region.to_dict(), "name": self.name}


class PolynomialField(FormField):
    """``omega_ij(x) = sum c * x**e`` from a table of ``(e, i, j, c)`` terms.

    Each term also contributes ``-c * x**e`` to ``omega_ji``; a term with
    ``i == j`` is rejected.
    """

    kind = "polynomial"

    def __init__(self, dim, terms, region=None, name="polynomial"):
        terms = [(tuple(int(k) for k in e), int(i), int(j), float(c)) for e, i, j, c in terms]
        for e, i, j, _ in terms:
            if len(e) != dim or min(e, default=0) < 0:
                raise InputError(f"bad exponent vector {e} for dimension {dim}")
            if not (0 <= i < dim and 0 <= j < dim) or i == j:
                raise InputError(f"bad index pair ({i}, {j})")
        self.terms = terms
        self._exps = np.array([t[0] for t in terms], dtype=int).reshape(len(terms), dim)
        self._maxdeg = int(self._exps.max()) if terms else 0
        # (terms, d*d) scatter of each coefficient into +omega_ij and -omega_ji
        S = np.zeros((len(terms), dim * dim))
        for k, (_, i, j, c) in enumerate(terms):
            S[k, i * dim + j] += c
            S[k, j * dim + i] -= c
        self._scatter = S
        super().__init__(dim, self._evaluate, region, name)

    def _evaluate(self, X):
        P, d = X.shape
        if not self.terms:
            return np.zeros((P, d, d))
        powers = np.ones((self._maxdeg + 1, P, d))
        for k in range(1, self._maxdeg + 1):
            powers[k] = powers[k - 1] * X
        cols = np.arange(d)
        mono = np.prod(powers[self._exps, :, cols], axis=1)     # (terms, P)
        return (mono.T @ self._scatter).reshape(P, d, d)

    def with_region(self, region):
        return PolynomialField(self.dim, self.terms, region, self.name)

    def __add__(self, other):
        if not isinstance(other, PolynomialField) or other.dim != self.dim:
            return NotImplemented
        return PolynomialField(self.dim, self.terms + other.terms, self.region,
                               f"{self.name}+{other.name}")

    def to_dict(self):
        return {"dim": self.dim, "kind": "polynomial",
                "coefficients": [[list(e), i, j, c] for e, i, j, c in self.terms],
                "region": self.region.to_dict(), "name": self.name}

    @classmethod
    def from_constant(cls, matrix, region=None, name="constant"):
        M = as_antisymmetric(matrix)
        d = M.shape[0]
        terms = [((0,) * d, i, j, M[i, j]) for i in range(d) for j in range(i + 1, d) if M[i, j]]
        return cls(d, terms, region, name)


def exterior_derivative_1form(dim, one_form_terms, scale=1.0):
    """Exact ``d(lambda)`` for a polynomial 1-form, as polynomial field terms.

    ``one_form_terms`` lists ``(e, j, c)`` meaning ``lambda_j += c * x**e``.
    Returns terms for ``omega_ij = d_i lambda_j - d_j lambda_i`` with ``i < j``.
    """
    acc = {}
    for e, j, c in one_form_terms:
        for i in range(dim):
            if i == j or e[i] == 0:
                continue
            de = list(e)
            de[i] -= 1
            val = scale * c * e[i]
            # d_i lambda_j enters omega_ij with +, i.e. omega_ji with -
            key, sign = ((i, j), 1.0) if i < j else ((j, i), -1.0)
            acc[(tuple(de),) + key] = acc.get((tuple(de),) + key, 0.0) + sign * val
    return [(k[0], k[1], k[2], v) for k, v in sorted(acc.items()) if v != 0.0]


# ----------------------------------------------------------------------------
# named built-in fields

#: polynomial 1-form on R^4 whose exterior derivative perturbs J_std
PERTURBATION_1FORM_R4 = [
    ((0, 1, 2, 0), 0, 1.0),    # x2 x3^2 dx1
    ((2, 0, 0, 1), 1, 1.0),    # x1^2 x4 dx2
    ((0, 0, 1, 2), 2, 0.5),    # x3 x4^2 / 2 dx3
    ((1, 1, 0, 1), 3, 1.0),    # x1 x2 x4 dx4
    ((0, 2, 1, 0), 3, -0.5),   # -x2^2 x3 / 2 dx4
]

#: 1-form on R^2 with cubic exterior derivative
TWIST_1FORM_R2 = [((1, 2), 0, 1.0), ((3, 0), 1, 0.5), ((0, 1), 1, 1.0)]

#: 1-form on R^6 coupling the three Darboux blocks
COUPLED_1FORM_R6 = [
    ((0, 0, 1, 1, 0, 0), 4, 1.0),
    ((1, 0, 0, 0, 0, 1), 2, 1.0),
    ((0, 1, 0, 0, 1, 0), 0, -1.0),
    ((2, 0, 0, 0, 0, 0), 5, 0.5),
]


def perturbed_canonical(eps=0.1, radius=1.0):
    """``J_std + eps * d(lambda)`` on ``R^4``: closed, nondegenerate near 0."""
    return _closed_from(4, PERTURBATION_1FORM_R4, eps, radius, f"perturbed_canonical(eps={eps:g})")


def _closed_from(dim, one_form, eps, radius, name):
    terms = PolynomialField.from_constant(j_std(dim)).terms
    terms = terms + exterior_derivative_1form(dim, one_form, eps)
    return PolynomialField(dim, terms, Region((0.0,) * dim, radius), name)


def twisted_plane(eps=0.2, radius=1.0):
    return _closed_from(2, TWIST_1FORM_R2, eps, radius, f"twisted_plane(eps={eps:g})")


def coupled_r6(eps=0.1, radius=1.0):
    return _closed_from(6, COUPLED_1FORM_R6, eps, radius, f"coupled_r6(eps={eps:g})")


def canonical(dim=2, radius=1.0):
    return ConstantField(j_std(dim), Region((0.0,) * dim, radius), f"canonical(dim={dim})")


def radial_degenerate(point=(0.3, 0.0), radius=1.0):
    """``||x - p||^2 J`` on ``R^2``; degenerate exactly at ``p`` (closed: top degree)."""
    p = np.asarray(point, dtype=float)
    J = j_std(2)

    def func(X):
        r2 = np.sum((X - p) ** 2, axis=1)
        return r2[:, None, None] * J

    return FormField(2, func, Region((0.0, 0.0), radius), f"radial_degenerate(p={tuple(p)})")


def degenerate_origin(radius=1.0):
    """``||x||^2 J`` on ``R^2`` as a polynomial table; vanishes at the origin."""
    terms = [((2, 0), 0, 1, 1.0), ((0, 2), 0, 1, 1.0)]
    return PolynomialField(2, terms, Region((0.0, 0.0), radius), "degenerate_origin")


def zero_crossing(level=0.3, radius=1.0):
    """``(1 - x1/level) J`` on ``R^2``: degenerate on the line ``x1 = level``."""
    terms = [((0, 0), 0, 1, 1.0), ((1, 0), 0, 1, -1.0 / level)]
    return PolynomialField(2, terms, Region((0.0, 0.0), radius), f"zero_crossing({level:g})")


NAMED_FIELDS = {
    "canonical": canonical,
    "perturbed_canonical": perturbed_canonical,
    "twisted_plane": twisted_plane,
    "coupled_r6": coupled_r6,
    "radial_degenerate": radial_degenerate,
    "degenerate_origin": degenerate_origin,
    "zero_crossing": zero_crossing,
}

#: built-in fields that are closed by construction
CLOSED_BUILTINS = ("perturbed_canonical", "twisted_plane", "coupled_r6")


def named_field(name, **params):
    try:
        factory = NAMED_FIELDS[name]
    except KeyError:
        raise InputError(f"unknown named field {name!r}; known: {sorted(NAMED_FIELDS)}") from None
    fld = factory(**params)
    fld.named = (name, dict(params))
    return fld


def field_to_dict(fld):
    named = getattr(fld, "named", None)
    if named is not None:
        return {"dim": fld.dim, "kind": "named", "name": named[0], "params": named[1],
                "region": fld.region.to_dict()}
    return fld.to_dict()


def field_from_dict(d):
    """Build a field from the on-disk document (keys ``dim``, ``kind``, ...)."""
    try:
        kind = d["kind"]
        dim = int(d["dim"])
        region = Region.from_dict(d["region"]) if "region" in d else None
        if kind == "constant":
            fld = ConstantField(np.array(d["coefficients"], dtype=float), region,
                                d.get("name", "constant"))
        elif kind == "polynomial":
            fld = PolynomialField(dim, [(e, i, j, c) for e, i, j, c in d["coefficients"]],
                                  region, d.get("name", "polynomial"))
        elif kind == "named":
            fld = named_field(d["name"], **d.get("params", {}))
            if region is not None:
                named = fld.named
                fld = fld.with_region(region)
                fld.named = named
        else:
            raise InputError(f"unknown field kind {kind!r}")
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, InputError):
            raise
        raise InputError(f"malformed field document: {exc!r}") from exc
    if fld.dim != dim:
        raise InputError(f"declared dim {dim} does not match coefficients ({fld.dim})")
    return fld


# ----------------------------------------------------------------------------
# finite-difference exterior derivative


def partials(fld, X, h):
    """Central differences ``D[p, i, j, k] = d_i omega_jk`` at points ``X``."""
    X = as_points(X, fld.dim)
    P, d = X.shape
    E = np.eye(d) * h
    stencil = np.concatenate([X[:, None, :] + E[None], X[:, None, :] - E[None]], axis=1)
    W = fld(stencil.reshape(-1, d)).reshape(P, 2 * d, d, d)
    return (W[:, :d] - W[:, d:]) / (2.0 * h)


def cyclic_sum(D):
    """``C[p,i,j,k] = D[p,i,j,k] + D[p,j,k,i] + D[p,k,i,j]``: components of ``d omega``."""
    return D + np.einsum("pjki->pijk", D) + np.einsum("pkij->pijk", D)


def closedness_check(fld, points, h_fd=1e-4):
    """Max over points and index triples of the FD exterior derivative of ``fld``."""
    if not h_fd > 0:
        raise InputError("h_fd must be positive")
    X = fld.check_inside(points, "sample point")
    return float(np.max(np.abs(cyclic_sum(partials(fld, X, h_fd))))) if len(X) else 0.0


def ball_samples(rng, n, center, radius, norm=NormSpec()):
    """``n`` points uniform-in-radius-cubed inside a euclidean ball (or scaled for other norms)."""
    center = np.asarray(center, dtype=float)
    d = center.shape[0]
    G = rng.normal(size=(n, d))
    G /= np.linalg.norm(G, axis=1, keepdims=True)
    r = radius * rng.random(n) ** (1.0 / d)
    Y = G * r[:, None]
    scale = norm(Y) / np.maximum(np.linalg.norm(Y, axis=1), 1e-300)
    Y = np.where(scale[:, None] > 1.0, Y / np.maximum(scale, 1.0)[:, None], Y)
    return center + Y
