"""Discretized Sobolev loop spaces ``L^p_k(S^1, R^m)``.

Loops are sampled at ``N`` uniform nodes of the unit-length circle
``[0, 1)``, so every integral over ``S^1`` is the trapezoid rule, i.e. the
mean over nodes.  Derivatives are spectral by default: multiply the FFT by
``(2 pi i xi)^order``.  For odd orders the Nyquist coefficient is dropped,
since it has no real derivative on the grid.

Tangent fields along a loop are ``(N, m)`` arrays, and so are covector
fields.  Forms are :class:`~weakdarboux.fields.FormField` objects evaluated
pointwise along the loop.
"""

from dataclasses import dataclass, field as dc_field
from types import MappingProxyType
from typing import NamedTuple
import warnings

import numpy as np
from scipy.optimize import minimize

from .exceptions import DomainError, InputError
from .fields import FormField, Region, cyclic_sum, partials, whole_space
from .symplin import j_std

DEFAULT_N = 64
SCHEMES = ("spectral", "central")


# ----------------------------------------------------------------------------
# grids and Sobolev specs


def _is_pow2(n):
    return n >= 1 and (n & (n - 1)) == 0


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class LoopGrid:
    """Samples of a loop ``gamma`` and of tangent fields along it.

    Parameters
    ----------
    gamma : array_like, shape (N, m)
        Loop values at the nodes ``t_i = i / N``.
    fields : mapping, optional
        Named ``(N, m)`` tangent fields along ``gamma``.
    """

    gamma: np.ndarray
    fields: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        g = np.asarray(self.gamma, dtype=float)
        if g.ndim == 1:
            g = g[:, None]
        if g.ndim != 2:
            raise InputError(f"gamma must be an (N, m) array, got shape {g.shape}")
        N = g.shape[0]
        if N < 4 or not _is_pow2(N):
            raise InputError(f"N must be a power of two >= 4, got {N}")
        if not np.all(np.isfinite(g)):
            raise InputError("gamma has non-finite samples")
        flds = {}
        for name, X in dict(self.fields).items():
            X = np.asarray(X, dtype=float)
            if X.shape != g.shape:
                raise InputError(f"field {name!r} has shape {X.shape}, expected {g.shape}")
            flds[str(name)] = _frozen(X)
        object.__setattr__(self, "gamma", _frozen(g))
        object.__setattr__(self, "fields", MappingProxyType(flds))

    @property
    def N(self):
        return self.gamma.shape[0]

    @property
    def m(self):
        return self.gamma.shape[1]

    @property
    def nodes(self):
        return np.arange(self.N) / self.N

    def field(self, X):
        """Resolve a field given by name or as an array."""
        if isinstance(X, str):
            try:
                return self.fields[X]
            except KeyError:
                raise InputError(f"unknown field {X!r}; have {sorted(self.fields)}") from None
        X = np.asarray(X, dtype=float)
        if X.shape != self.gamma.shape:
            raise InputError(f"field has shape {X.shape}, expected {self.gamma.shape}")
        return X

    def with_fields(self, **fields):
        return LoopGrid(self.gamma, {**self.fields, **fields})

    def to_text(self):
        """Plain-text form: ``m``, ``N``, then row-major node samples."""
        rows = [f"m {self.m}", f"N {self.N}", "gamma"]
        rows += [" ".join(f"{v:.17g}" for v in r) for r in self.gamma]
        for name, X in self.fields.items():
            rows.append(f"field {name}")
            rows += [" ".join(f"{v:.17g}" for v in r) for r in X]
        return "\n".join(rows) + "\n"

    @classmethod
    def from_text(cls, text):
        lines = [ln.strip() for ln in text.splitlines()]
        lines = [ln for ln in lines if ln and not ln.startswith("#")]
        try:
            m = int(lines[0].split()[1]) if lines[0].startswith("m ") else None
            N = int(lines[1].split()[1]) if lines[1].startswith("N ") else None
            if m is None or N is None:
                raise InputError("loop grid text must start with 'm <int>' and 'N <int>'")
            blocks, pos = {}, 2
            while pos < len(lines):
                head = lines[pos]
                name = "gamma" if head == "gamma" else head.split(None, 1)[1] if head.startswith("field ") else None
                if name is None:
                    raise InputError(f"unexpected line {head!r}")
                rows = [[float(v) for v in ln.split()] for ln in lines[pos + 1:pos + 1 + N]]
                A = np.array(rows, dtype=float)
                if A.shape != (N, m):
                    raise InputError(f"block {name!r} has shape {A.shape}, expected {(N, m)}")
                blocks[name] = A
                pos += 1 + N
        except (IndexError, ValueError) as exc:
            if isinstance(exc, InputError):
                raise
            raise InputError(f"malformed loop grid text: {exc}") from exc
        if "gamma" not in blocks:
            raise InputError("loop grid text has no gamma block")
        gamma = blocks.pop("gamma")
        return cls(gamma, blocks)


def circle_loop(N=DEFAULT_N, m=2, radius=0.5, center=None):
    """Round circle in the ``(x1, y1)`` plane of ``R^m``."""
    t = np.arange(N) / N
    g = np.zeros((N, m)) if center is None else np.tile(np.asarray(center, float), (N, 1))
    g[:, 0] += radius * np.cos(2 * np.pi * t)
    g[:, 1 % m] += radius * np.sin(2 * np.pi * t)
    return LoopGrid(g)


def random_smooth_field(rng, N, m, max_mode=3, amplitude=1.0):
    """Random real trigonometric polynomial of degree ``max_mode`` per coordinate."""
    t = np.arange(N) / N
    ell = np.arange(max_mode + 1)
    phase = 2 * np.pi * np.outer(t, ell)
    a = rng.normal(size=(max_mode + 1, m)) / (1.0 + ell[:, None]) ** 2
    b = rng.normal(size=(max_mode + 1, m)) / (1.0 + ell[:, None]) ** 2
    return amplitude * (np.cos(phase) @ a + np.sin(phase) @ b)


def random_loop(rng, N=DEFAULT_N, m=2, max_mode=3, amplitude=0.2, center=None, n_fields=0):
    """Smooth random loop, with ``n_fields`` random tangent fields named ``X0, X1, ...``."""
    g = random_smooth_field(rng, N, m, max_mode, amplitude)
    if center is not None:
        g = g + np.asarray(center, dtype=float)
    flds = {f"X{i}": random_smooth_field(rng, N, m, max_mode) for i in range(n_fields)}
    return LoopGrid(g, flds)


@dataclass(frozen=True)
class SobolevSpec:
    """Sobolev order ``k``, exponent ``p`` and derivative scheme."""

    k: int = 1
    p: float = 2.0
    scheme: str = "spectral"

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 0:
            raise InputError(f"k must be a non-negative integer, got {self.k}")
        if not self.p > 1 or not np.isfinite(self.p):
            raise InputError(f"p must lie in (1, inf), got {self.p}")
        if self.scheme not in SCHEMES:
            raise InputError(f"unknown derivative scheme {self.scheme!r}")
        object.__setattr__(self, "k", int(self.k))
        object.__setattr__(self, "p", float(self.p))

    @property
    def q(self):
        """Hoelder conjugate exponent."""
        return self.p / (self.p - 1.0)


# ----------------------------------------------------------------------------
# derivatives, norms, pairing


def derivative_symbol(N, order):
    """Fourier multiplier of ``d^order/dt^order`` on ``N`` nodes of ``[0, 1)``."""
    xi = np.fft.fftfreq(N, d=1.0 / N)
    sym = (2j * np.pi * xi) ** order
    if order % 2:
        sym[N // 2] = 0.0
    return sym


def _as_field(f):
    f = np.asarray(f, dtype=float)
    return f[:, None] if f.ndim == 1 else f


def derivative(f, order=1, scheme="spectral"):
    """``order``-th derivative of periodic samples ``f`` (axis 0 is the node index)."""
    f = _as_field(f)
    if order == 0:
        return f.copy()
    N = f.shape[0]
    if scheme == "spectral":
        sym = derivative_symbol(N, order)
        return np.fft.ifft(np.fft.fft(f, axis=0) * sym[:, None], axis=0).real
    if scheme == "central":
        out = f
        for _ in range(order):
            out = (np.roll(out, -1, axis=0) - np.roll(out, 1, axis=0)) * (N / 2.0)
        return out
    raise InputError(f"unknown derivative scheme {scheme!r}")


def sobolev_norm(f, spec=SobolevSpec()):
    """``||f||_{k,p} = (sum_{i<=k} int ||D^i f||^p)^(1/p)``, euclidean pointwise norm."""
    f = _as_field(f)
    total = 0.0
    for i in range(spec.k + 1):
        Df = derivative(f, i, spec.scheme)
        total += np.mean(np.linalg.norm(Df, axis=1) ** spec.p)
    return float(total ** (1.0 / spec.p))


def dual_pairing(f, g):
    """``<f, g> = sum_j int f_j g_j`` by the trapezoid rule."""
    f, g = _as_field(f), _as_field(g)
    if f.shape != g.shape:
        raise InputError(f"pairing needs equal shapes, got {f.shape} and {g.shape}")
    return float(np.mean(np.sum(f * g, axis=1)))


def riesz_weights(N, k):
    """``w(xi) = sum_{i<=k} |symbol_i(xi)|^2``: the ``H^k`` Gram multiplier."""
    return sum(np.abs(derivative_symbol(N, i)) ** 2 for i in range(k + 1))


class DualNorm(NamedTuple):
    """Value of ``||g||_{-k,q}`` with how it was obtained.

    ``exact`` is true for ``p = 2`` (Riesz map); otherwise ``value`` is a
    lower bound found over ``dictionary_size`` candidates plus local ascent.
    """

    value: float
    exact: bool
    dictionary_size: int
    method: str


def _sobolev_p_and_grad(f, spec):
    """``||f||_{k,p}^p`` and its gradient with respect to the node values."""
    N = f.shape[0]
    val, grad = 0.0, np.zeros_like(f)
    Ff = np.fft.fft(f, axis=0)
    for i in range(spec.k + 1):
        sym = derivative_symbol(N, i)
        Df = np.fft.ifft(Ff * sym[:, None], axis=0).real
        r = np.linalg.norm(Df, axis=1)
        val += np.mean(r ** spec.p)
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(r > 0, spec.p * r ** (spec.p - 2.0), 0.0)
        G = scale[:, None] * Df / N
        # adjoint of a real circulant: conjugate multiplier
        grad += np.fft.ifft(np.fft.fft(G, axis=0) * np.conj(sym)[:, None], axis=0).real
    return val, grad


def dual_norm_estimate(g, spec=SobolevSpec(), ascent_iter=200):
    """Dual norm ``sup{|<f, g>| : ||f||_{k,p} <= 1}`` of a covector field ``g``.

    For ``p = 2`` this is exact: in Fourier variables the Riesz map is the
    diagonal multiplier :func:`riesz_weights`.  For ``p != 2`` the supremum
    is bounded from below by scanning cosine and sine modes ``0..N/2`` along
    every coordinate direction.  The Riesz-map maximizer is scanned too, and
    the best candidate is then improved by L-BFGS ascent on
    ``<f, g> / ||f||_{k,p}``.
    """
    g = _as_field(g)
    N, m = g.shape
    if not np.any(g):
        return DualNorm(0.0, spec.p == 2.0, 0, "zero")
    G = np.fft.fft(g, axis=0) / N
    w = riesz_weights(N, spec.k) if spec.scheme == "spectral" else None
    if spec.p == 2.0 and w is not None:
        return DualNorm(float(np.sqrt(np.sum(np.abs(G) ** 2 / w[:, None]))), True, 0, "riesz")

    t = np.arange(N) / N
    cands = []
    for ell in range(N // 2 + 1):
        for basis in (np.cos(2 * np.pi * ell * t), np.sin(2 * np.pi * ell * t)):
            if not np.any(np.abs(basis) > 1e-12):
                continue
            for j in range(m):
                f = np.zeros((N, m))
                f[:, j] = basis
                cands.append(f)
    if w is not None:
        cands.append(np.fft.ifft(G / w[:, None], axis=0).real * N)
    else:
        cands.append(g.copy())

    def ratio(f):
        nf = sobolev_norm(f, spec)
        return abs(dual_pairing(f, g)) / nf if nf > 0 else 0.0

    scores = [ratio(f) for f in cands]
    best = int(np.argmax(scores))
    f0 = cands[best] * np.sign(dual_pairing(cands[best], g) or 1.0)
    c = float(np.max(np.abs(f0))) or 1.0

    def objective(z):
        f = z.reshape(N, m)
        normp, dnormp = _sobolev_p_and_grad(f, spec)
        if normp <= 0:
            return 0.0, np.zeros_like(z)
        nf = normp ** (1.0 / spec.p)
        pair = dual_pairing(f, g)
        dnf = nf ** (1.0 - spec.p) / spec.p * dnormp
        val = -pair / nf
        grad = -(g / N) / nf + pair / nf ** 2 * dnf
        return val, grad.ravel()

    if spec.scheme == "spectral":
        res = minimize(objective, (f0 / c).ravel(), jac=True, method="L-BFGS-B",
                       options={"maxiter": ascent_iter})
        value = max(scores[best], -float(res.fun))
        method = "dictionary+lbfgs"
    else:
        value, method = scores[best], "dictionary"
    return DualNorm(float(value), False, len(cands), method)


# ----------------------------------------------------------------------------
# the loop form


def _form_along(omega, grid):
    if omega.dim != grid.m:
        raise InputError(f"form dimension {omega.dim} does not match loop dimension {grid.m}")
    omega.check_inside(grid.gamma, "loop sample")
    return omega(grid.gamma)


def loop_form(omega, grid, X, Y):
    """``Omega_gamma(X, Y) = int omega_gamma(t)(X(t), Y(t)) dt``."""
    W = _form_along(omega, grid)
    X, Y = grid.field(X), grid.field(Y)
    return float(np.mean(np.einsum("ni,nij,nj->n", X, W, Y)))


def loop_flat(omega, grid, X):
    """Covector field ``t -> flat(omega_gamma(t), X(t))``."""
    W = _form_along(omega, grid)
    return np.einsum("ni,nij->nj", grid.field(X), W)


def loop_closedness(omega, grid, U0, U1, U2, h_fd=1e-4):
    """``dOmega(U0, U1, U2) = int d omega_gamma(t)(U0, U1, U2) dt`` (signed).

    ``d omega`` is taken pointwise by central differences of step ``h_fd``.
    The stencil points must stay in the form's region.
    """
    if not h_fd > 0:
        raise InputError("h_fd must be positive")
    _form_along(omega, grid)
    C = cyclic_sum(partials(omega, grid.gamma, h_fd))
    U0, U1, U2 = grid.field(U0), grid.field(U1), grid.field(U2)
    return float(np.mean(np.einsum("nijk,ni,nj,nk->n", C, U0, U1, U2)))


def auto_grid_size(modes, minimum=DEFAULT_N):
    """Smallest power of two ``>= max(minimum, 4 * max(modes))``."""
    need = max(minimum, 4 * max(modes, default=1))
    return 1 << int(np.ceil(np.log2(need)))


def weak_strong_diagnostic(spec, omega, modes=(1, 2, 4, 8, 16, 32), N=None):
    """Mode ratios ``||Omega^flat X_l||_{-k,q} / ||X_l||_{k,p}`` for ``X_l = cos(2 pi l t) e_1``.

    ``omega`` is a constant antisymmetric matrix.  ``N`` defaults to
    :func:`auto_grid_size`, since fewer than four nodes per period drops
    odd derivatives to zero at the Nyquist mode.

    Returns
    -------
    list of dict
        One row per mode with keys ``ell``, ``primal``, ``dual``, ``ratio``,
        ``exact``.
    """
    W = np.asarray(omega, dtype=float)
    m = W.shape[0]
    modes = [int(ell) for ell in modes]
    if N is None:
        N = auto_grid_size(modes)
    elif any(4 * ell > N for ell in modes):
        warnings.warn(f"N={N} resolves modes only up to {N // 4}; ratios above are aliased",
                      RuntimeWarning, stacklevel=2)
    t = np.arange(N) / N
    rows = []
    for ell in modes:
        X = np.zeros((N, m))
        X[:, 0] = np.cos(2 * np.pi * ell * t)
        primal = sobolev_norm(X, spec)
        dual = dual_norm_estimate(X @ W, spec)
        rows.append({"ell": ell, "primal": primal, "dual": dual.value,
                     "ratio": dual.value / primal, "exact": dual.exact})
    return rows


# ----------------------------------------------------------------------------
# isotopies and their lifts


@dataclass(frozen=True)
class Isotopy:
    """A family ``F_s`` of diffeomorphisms of a region of ``R^dim``.

    ``apply(s, X)``, ``jac(s, X)`` and, when available, ``inverse(s, X)``,
    ``inverse_jac(s, X)`` and ``velocity(s, X) = dF_s/ds`` act on ``(P, dim)``
    point arrays.
    """

    dim: int
    apply: object
    jac: object
    region: Region = None
    inverse: object = None
    inverse_jac: object = None
    velocity: object = None
    name: str = "isotopy"
    params: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        if self.region is None:
            object.__setattr__(self, "region", whole_space(self.dim))

    def check_inside(self, X, what="loop sample"):
        inside = self.region.contains(X, slack=1e-12)
        if not np.all(inside):
            raise DomainError(f"{what} outside the domain of {self.name}",
                              x=np.asarray(X)[int(np.argmin(inside))])

    def inverted(self):
        if self.inverse is None:
            raise InputError(f"{self.name} has no inverse")
        return Isotopy(self.dim, self.inverse, self.inverse_jac, None, self.apply, self.jac,
                       None, f"inverse({self.name})", self.params)


def compose(F, G):
    """``(F o G)_s = F_s o G_s`` with the chain rule for Jacobians."""
    if F.dim != G.dim:
        raise InputError("cannot compose isotopies of different dimensions")

    def apply(s, X):
        return F.apply(s, G.apply(s, X))

    def jac(s, X):
        return np.einsum("pij,pjk->pik", F.jac(s, G.apply(s, X)), G.jac(s, X))

    return Isotopy(F.dim, apply, jac, G.region, name=f"{F.name}o{G.name}")


def identity_isotopy(dim):
    return Isotopy(dim, lambda s, X: np.array(X, dtype=float),
                   lambda s, X: np.broadcast_to(np.eye(dim), (len(X), dim, dim)).copy(),
                   inverse=lambda s, X: np.array(X, dtype=float),
                   inverse_jac=lambda s, X: np.broadcast_to(np.eye(dim), (len(X), dim, dim)).copy(),
                   velocity=lambda s, X: np.zeros_like(X), name="identity")


def _blockwise(dim):
    if dim % 2:
        raise InputError(f"block isotopies need an even dimension, got {dim}")
    return np.arange(0, dim, 2), np.arange(1, dim, 2)


def rotation_isotopy(dim=2, rate=1.0):
    """Rotation by angle ``rate * s`` in every ``(x_i, y_i)`` plane; symplectic for ``J_std``."""
    ix, iy = _blockwise(dim)

    def R(a):
        M = np.zeros((dim, dim))
        c, s = np.cos(a), np.sin(a)
        M[ix, ix], M[ix, iy], M[iy, ix], M[iy, iy] = c, -s, s, c
        return M

    def dR(a):
        M = np.zeros((dim, dim))
        c, s = np.cos(a), np.sin(a)
        M[ix, ix], M[ix, iy], M[iy, ix], M[iy, iy] = -s, -c, c, -s
        return rate * M

    def jac(s, X):
        return np.broadcast_to(R(rate * s), (len(X), dim, dim)).copy()

    def inv_jac(s, X):
        return np.broadcast_to(R(-rate * s), (len(X), dim, dim)).copy()

    return Isotopy(dim, lambda s, X: X @ R(rate * s).T, jac,
                   inverse=lambda s, X: X @ R(-rate * s).T, inverse_jac=inv_jac,
                   velocity=lambda s, X: X @ dR(rate * s).T,
                   name="rotation", params={"dim": dim, "rate": rate})


def _generating_shear(dim, grad, hess, name, params):
    """``(x, y) -> (x, y + s grad S(x))``: symplectic for any potential ``S``."""
    ix, iy = _blockwise(dim)

    def apply(s, X):
        Y = np.array(X, dtype=float)
        Y[:, iy] += s * grad(X[:, ix])
        return Y

    def inverse(s, X):
        Y = np.array(X, dtype=float)
        Y[:, iy] -= s * grad(X[:, ix])
        return Y

    def jac_sign(sign):
        def jac(s, X):
            D = np.broadcast_to(np.eye(dim), (len(X), dim, dim)).copy()
            D[:, iy[:, None], ix[None, :]] += sign * s * hess(X[:, ix])
            return D
        return jac

    def velocity(s, X):
        V = np.zeros_like(np.asarray(X, dtype=float))
        V[:, iy] = grad(X[:, ix])
        return V

    return Isotopy(dim, apply, jac_sign(1.0), inverse=inverse, inverse_jac=jac_sign(-1.0),
                   velocity=velocity, name=name, params=params)


def linear_shear_isotopy(dim=2, c=1.0):
    """``y_i -> y_i + s c x_i`` in every block."""
    n = dim // 2
    return _generating_shear(dim, lambda x: c * x,
                             lambda x: np.broadcast_to(c * np.eye(n), (len(x), n, n)),
                             "linear_shear", {"dim": dim, "c": c})


def quadratic_shear_isotopy(dim=2):
    """``y_i -> y_i + s x_i^2`` in every block."""
    return _generating_shear(dim, lambda x: x ** 2,
                             lambda x: np.einsum("pi,ij->pij", 2 * x, np.eye(x.shape[1])),
                             "quadratic_shear", {"dim": dim})


def shear_tower_potential_grad(x):
    """Gradient of ``S_n(x) = sum x_i^3/3 + sum_{i>=2} x_{i-1} x_i^2 / 2``."""
    g = x ** 2
    g[:, 1:] += x[:, :-1] * x[:, 1:]
    g[:, :-1] += 0.5 * x[:, 1:] ** 2
    return g


def shear_tower_potential_hess(x):
    P, n = x.shape
    H = np.zeros((P, n, n))
    i = np.arange(n)
    H[:, i, i] = 2 * x
    H[:, i[1:], i[1:]] += x[:, :-1]
    H[:, i[1:], i[:-1]] += x[:, 1:]
    H[:, i[:-1], i[1:]] += x[:, 1:]
    return H


def shear_tower(n):
    """Level ``n`` of the nonlinear shear tower on ``R^{2n}``.

    ``phi_n(x, y) = (x, y + grad S_n(x))`` with a potential whose gradient
    vanishes in the last slot when ``x_n = 0``.  So ``phi_n`` maps
    ``R^{2n-2} x {0}`` to itself and restricts there to ``phi_{n-1}``.
    """
    if n < 1:
        raise InputError("tower levels start at 1")
    return _generating_shear(2 * n, shear_tower_potential_grad, shear_tower_potential_hess,
                             "shear_tower", {"n": n})


def tower_from(builder):
    """Per-level family ``n -> builder(dim=2n)``, for the block-diagonal built-ins."""
    return lambda n: builder(dim=2 * n)


ISOTOPIES = {
    "identity": lambda dim=2: identity_isotopy(dim),
    "rotation": rotation_isotopy,
    "shear": linear_shear_isotopy,
    "quadratic_shear": quadratic_shear_isotopy,
}

TOWERS = {
    "identity": lambda n: identity_isotopy(2 * n),
    "rotation": tower_from(rotation_isotopy),
    "shear": tower_from(linear_shear_isotopy),
    "quadratic_shear": tower_from(quadratic_shear_isotopy),
    "shear_tower": shear_tower,
}


def named_isotopy(name, **params):
    try:
        return ISOTOPIES[name](**params)
    except KeyError:
        raise InputError(f"unknown isotopy {name!r}; known: {sorted(ISOTOPIES)}") from None


def named_tower(name):
    try:
        return TOWERS[name]
    except KeyError:
        raise InputError(f"unknown tower {name!r}; known: {sorted(TOWERS)}") from None


def isotopy_lift(F, s, grid):
    """``F_s^L``: loop ``t -> F_s(gamma(t))`` with fields pushed by ``D F_s``."""
    if F.dim != grid.m:
        raise InputError(f"isotopy dimension {F.dim} does not match loop dimension {grid.m}")
    F.check_inside(grid.gamma)
    D = F.jac(s, grid.gamma)
    fields = {k: np.einsum("nij,nj->ni", D, X) for k, X in grid.fields.items()}
    return LoopGrid(F.apply(s, grid.gamma), fields)


def _sample_pairs(grid, samples, rng):
    names = list(grid.fields)
    pairs = [(grid.fields[a], grid.fields[b]) for a in names for b in names if a < b]
    while len(pairs) < samples:
        pairs.append((random_smooth_field(rng, grid.N, grid.m),
                      random_smooth_field(rng, grid.N, grid.m)))
    return pairs[:samples]


def lift_pullback_check(F, s, omega0, omega_s, grid, samples=16, seed=0):
    """Max over field pairs of ``|Omega^s(F_s^L X, F_s^L Y) - Omega^0(X, Y)|``.

    ``Omega^s`` is evaluated along the lifted loop ``F_s o gamma``.  The
    pairs come from the grid's named fields, topped up with seeded random
    smooth fields.
    """
    rng = np.random.default_rng(seed)
    base = grid.with_fields(**{f"_p{i}{c}": Z for i, pair in
                               enumerate(_sample_pairs(grid, samples, rng))
                               for c, Z in zip("ab", pair)})
    lifted = isotopy_lift(F, s, base)
    res = 0.0
    for i in range(samples):
        a, b = f"_p{i}a", f"_p{i}b"
        res = max(res, abs(loop_form(omega_s, lifted, a, b) - loop_form(omega0, base, a, b)))
    return res


def pullback_field(F, s, omega):
    """``F_s^* omega`` as a form field: ``DF^T omega(F(x)) DF``."""

    def func(X):
        D = F.jac(s, X)
        return np.einsum("pia,pij,pjb->pab", D, omega(F.apply(s, X)), D)

    return FormField(F.dim, func, F.region, f"pullback({F.name})")


def chart_isotopy(chart, dim, name="moser_chart"):
    """Wrap a sampled chart (e.g. from :func:`moser.exp_scaling_chart`) as a fixed map."""
    return Isotopy(dim, lambda s, X: chart(X), lambda s, X: chart.jacobian(X), name=name)


def tower_coherence(tower, n, samples=32, seed=0, tol=1e-12, s=1.0):
    """Max mismatch of ``phi_n`` restricted to ``R^{2n-2}`` against ``phi_{n-1}``, per level."""
    rng = np.random.default_rng(seed)
    out = []
    for k in range(2, n + 1):
        X = rng.normal(size=(samples, 2 * k - 2))
        lo = tower(k - 1).apply(s, X)
        hi = tower(k).apply(s, np.hstack([X, np.zeros((samples, 2))]))
        out.append(float(max(np.max(np.abs(hi[:, :-2] - lo)), np.max(np.abs(hi[:, -2:])))))
    return out


def global_loop_darboux(tower, n, grid, samples=16, seed=0, s=1.0, coherence_tol=1e-12):
    """Residual of the loop Darboux chart ``psi_n^L = (phi_n^{-1})^L`` at level ``n``.

    With ``omega_n = phi_n^* eta_n`` and ``eta_n = J_std`` on ``R^{2n}``,
    the loop ``gamma`` (in ``eta`` coordinates) and its fields are pulled
    through ``psi_n = phi_n^{-1}``.  The returned value is the max over
    sampled pairs of ``|Omega_{omega_n}(psi^L X, psi^L Y) - Omega_{eta_n}(X, Y)|``.

    Raises
    ------
    InputError
        If the tower is not coherent up to level ``n``.
    """
    if grid.m != 2 * n:
        raise InputError(f"level {n} needs loops in R^{2 * n}, got m={grid.m}")
    mismatch = tower_coherence(tower, n, seed=seed, s=s)
    if mismatch and max(mismatch) > coherence_tol:
        raise InputError(f"tower is not coherent: restriction mismatch {max(mismatch):.3g}")
    phi = tower(n)
    eta = FormField(2 * n, lambda X: np.broadcast_to(j_std(2 * n), (len(X), 2 * n, 2 * n)).copy(),
                    name=f"eta_{n}")
    omega = pullback_field(phi, s, eta)
    return lift_pullback_check(phi.inverted(), s, eta, omega, grid, samples, seed)
