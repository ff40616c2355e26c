"""Direct limits of nested spaces ``E_1 < E_2 < ...`` with ``E_n = R^{d_n}``.

Elements of the limit are tail-zero coordinate sequences.  Sums used for
level-independent quantities go through :func:`math.fsum`, which is
correctly rounded, so padding with zeros cannot change a result.

Also holds the shrinking Darboux-radius counterexample built from the
Legendre-type form ``omega = L^* omega_can`` with ``L(u, e) = (u, A_u e)``
and ``A_u = ||u - c||^2 Id + S``.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .exceptions import InputError
from .fields import FormField, Region, ConstantField
from .symplin import DEFAULT_MARGIN, NormSpec, j_std, sigma_min


# ----------------------------------------------------------------------------
# levels and tail-zero vectors


def default_levels(n_max=64, step=2):
    """Level dimensions ``d_n = step * n`` for ``n = 1..n_max``."""
    return tuple(step * n for n in range(1, n_max + 1))


def _check_levels(levels):
    levels = tuple(int(d) for d in levels)
    if not levels or levels[0] <= 0 or any(b <= a for a, b in zip(levels, levels[1:])):
        raise InputError("level dimensions must be positive and strictly increasing")
    return levels


@dataclass(frozen=True)
class DLVector:
    """Tail-zero vector of the direct limit.

    ``coords`` never ends in a zero, and ``min_level`` (1-based) is the first
    level whose dimension holds all of them.  Equality is exact.
    """

    coords: tuple
    levels: tuple

    def __post_init__(self):
        c = [float(v) for v in self.coords]
        while c and c[-1] == 0.0:
            c.pop()
        object.__setattr__(self, "coords", tuple(c))
        object.__setattr__(self, "levels", _check_levels(self.levels))
        if len(c) > self.levels[-1]:
            raise InputError("vector does not fit in the largest configured level")

    @property
    def support(self):
        return len(self.coords)

    @property
    def min_level(self):
        for n, d in enumerate(self.levels, start=1):
            if d >= self.support:
                return n
        raise InputError("vector does not fit in any level")  # pragma: no cover

    def at_level(self, n):
        """Coordinates padded to ``R^{d_n}``."""
        d = self.levels[n - 1]
        if d < self.support:
            raise InputError(f"vector needs level >= {self.min_level}, got {n}")
        out = np.zeros(d)
        out[:self.support] = self.coords
        return out

    def __add__(self, other):
        m = max(self.support, other.support)
        a = np.zeros(m)
        a[:self.support] = self.coords
        a[:other.support] += other.coords
        return DLVector(tuple(a), self.levels)


def dl_inject(u, levels=default_levels()):
    """Image of ``u in E_n`` in the limit; ``len(u)`` must equal some ``d_n``."""
    levels = _check_levels(levels)
    u = np.asarray(u, dtype=float).ravel()
    if u.shape[0] not in levels:
        raise InputError(f"length {u.shape[0]} is not a level dimension of {levels[:6]}...")
    return DLVector(tuple(u), levels)


# ----------------------------------------------------------------------------
# coherent norms


@dataclass(frozen=True)
class CoherentNormSeq:
    """Norms built inductively: ``||.||_{n+1} = ||.||_n + ||.||'`` on the complement.

    With an ell1 base this is exactly the ell1 norm at every level; with
    ``kind="euclidean"`` the complement is glued in quadrature instead, which is
    also coherent.
    """

    levels: tuple
    kind: str = "ell1"

    def __post_init__(self):
        object.__setattr__(self, "levels", _check_levels(self.levels))
        if self.kind not in ("ell1", "euclidean", "ellinf"):
            raise InputError(f"unsupported coherent norm kind {self.kind!r}")

    def spec(self):
        return NormSpec(self.kind)

    def at_level(self, x, n):
        """``||x||_n`` for ``x`` in ``R^{d_n}`` (summed level by level)."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.levels[n - 1]:
            raise InputError("vector length does not match the level")
        bounds = (0,) + self.levels[:n]
        blocks = [np.abs(x[a:b]) for a, b in zip(bounds, bounds[1:])]
        if self.kind == "ell1":
            return math.fsum(math.fsum(b) for b in blocks)
        if self.kind == "euclidean":
            return math.sqrt(math.fsum(math.fsum(b * b) for b in blocks))
        return max((float(b.max()) if b.size else 0.0) for b in blocks)


def coherent_norm_eval(seq, u, level=None):
    """``||u||`` computed at ``level`` (default: the minimal level of ``u``)."""
    n = u.min_level if level is None else level
    if n < u.min_level:
        raise InputError("level below the minimal level of the vector")
    return seq.at_level(u.at_level(n), n)


# ----------------------------------------------------------------------------
# coherent form sequences


class CoherentFormSequence:
    """Per-level form fields ``omega_n`` on ``R^{d_n}``.

    ``factory(n)`` returns the level-``n`` :class:`FormField`; results are
    cached.
    """

    def __init__(self, factory, levels, name="tower"):
        self.levels = _check_levels(levels)
        self._factory = factory
        self._cache = {}
        self.name = name

    def __len__(self):
        return len(self.levels)

    def form(self, n):
        if not 1 <= n <= len(self.levels):
            raise InputError(f"level {n} out of range 1..{len(self.levels)}")
        if n not in self._cache:
            fld = self._factory(n)
            if fld.dim != self.levels[n - 1]:
                raise InputError(f"level {n} form has dim {fld.dim}, expected {self.levels[n - 1]}")
            self._cache[n] = fld
        return self._cache[n]


def canonical_tower(n_max=64):
    """``eta_n = sum_{i<=n} dx_i ^ dy_i`` on ``R^{2n}`` (interleaved coordinates)."""
    levels = default_levels(n_max)
    return CoherentFormSequence(lambda n: ConstantField(j_std(2 * n), name=f"eta_{n}"), levels,
                                "canonical")


def coherence_check(seq, samples, levels=None):
    """Max ``|omega_{n+1}(x)(e_i, e_j) - omega_n(x)(e_i, e_j)|`` over ``x in E_n``.

    ``samples`` maps a level ``n`` to an ``(P, d_n)`` array of points, or is a
    callable ``samples(n)``.
    """
    ns = range(1, len(seq)) if levels is None else levels
    worst = 0.0
    for n in ns:
        X = np.asarray(samples(n) if callable(samples) else samples[n], dtype=float)
        d, d1 = seq.levels[n - 1], seq.levels[n]
        lo = seq.form(n)(X)
        Xp = np.zeros((X.shape[0], d1))
        Xp[:, :d] = X
        hi = seq.form(n + 1)(Xp)[:, :d, :d]
        worst = max(worst, float(np.max(np.abs(hi - lo))) if len(X) else 0.0)
    return worst


def limit_form_eval(seq, u, v, x=None, level=None):
    """``omega(u, v)`` at base point ``x`` (default 0), evaluated at level ``n0``.

    ``n0`` is the largest minimal level among the arguments unless ``level``
    is given.  The bilinear sum is correctly rounded, so any admissible level
    gives the same float.
    """
    n0 = max(u.min_level, v.min_level, x.min_level if x is not None else 1)
    n = n0 if level is None else level
    if n < n0:
        raise InputError(f"level {n} below the minimal level {n0}")
    d = seq.levels[n - 1]
    base = np.zeros(d) if x is None else x.at_level(n)
    W = seq.form(n)(base)
    a, b = u.at_level(n), v.at_level(n)
    ia, ib = np.nonzero(a)[0], np.nonzero(b)[0]
    return math.fsum((a[ia, None] * W[np.ix_(ia, ib)] * b[None, ib]).ravel())


# ----------------------------------------------------------------------------
# the shrinking-radius counterexample


@dataclass(frozen=True)
class MarsdenSpec:
    """Data of the counterexample tower.

    The base Hilbert space is truncated to ``R^h`` with ``S = diag(sigma)``
    (``h = len(sigma)``); level ``n`` lives on ``H_n = R^h + R^n`` with
    ``S_n = S + Id`` and singular point ``c_n = points[n-1]`` in ``R^h``.
    Tangent coordinates at level ``n`` are ``(u, e)`` in ``R^{2 d_n}``,
    ``d_n = h + n``.
    """

    sigma: tuple
    points: tuple

    def __post_init__(self):
        sig = tuple(float(s) for s in self.sigma)
        if not sig or min(sig) <= 0 or any(b >= a for a, b in zip(sig, sig[1:])):
            raise InputError("sigma must be positive and strictly decreasing")
        pts = tuple(tuple(float(v) for v in p) for p in self.points)
        if any(len(p) != len(sig) for p in pts):
            raise InputError("singular points must live in R^h, h = len(sigma)")
        object.__setattr__(self, "sigma", sig)
        object.__setattr__(self, "points", pts)

    @property
    def base_dim(self):
        return len(self.sigma)

    @property
    def n_levels(self):
        return len(self.points)

    def level_dim(self, n):
        return self.base_dim + n

    def singular_point(self, n):
        """``c_n`` padded into ``H_n``."""
        if not 1 <= n <= self.n_levels:
            raise InputError(f"level {n} out of range 1..{self.n_levels}")
        c = np.zeros(self.level_dim(n))
        c[:self.base_dim] = self.points[n - 1]
        return c

    def s_diag(self, n):
        return np.concatenate([np.asarray(self.sigma), np.ones(n)])

    def to_dict(self):
        return {"kind": "marsden", "sigma": list(self.sigma),
                "points": [list(p) for p in self.points]}

    @classmethod
    def from_dict(cls, d):
        try:
            if "sigma" in d:
                return cls(tuple(d["sigma"]), tuple(tuple(p) for p in d["points"]))
            return default_marsden(**{k: v for k, v in d.items() if k != "kind"})
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, InputError):
                raise
            raise InputError(f"malformed Marsden document: {exc!r}") from exc


def default_marsden(n_levels=6, base_dim=128, fixed_e=False, direction=None):
    """``sigma_j = 1/j^2``; ``c_n = (1/n) u0`` (or ``c_n = u0`` when ``fixed_e``)."""
    sigma = tuple(1.0 / j ** 2 for j in range(1, base_dim + 1))
    u0 = np.zeros(base_dim)
    if direction is None:
        u0[0] = 1.0
    else:
        u0[:len(direction)] = direction
        u0 /= np.linalg.norm(u0)
    pts = tuple(tuple(u0 if fixed_e else u0 / n) for n in range(1, n_levels + 1))
    return MarsdenSpec(sigma, pts)


def metric_operator(spec, n, U):
    """Diagonal of ``A_u = ||u - c_n||^2 Id + S_n`` for each row of ``U``."""
    w = U - spec.singular_point(n)
    return np.cumsum(w * w, axis=1)[:, -1:] + spec.s_diag(n)[None, :]


def metric_derivative(spec, n, u, a, b, v):
    """Analytic ``D_u <A_u a, b> . v = 2 <u - c_n, v> <a, b>``."""
    return 2.0 * np.dot(u - spec.singular_point(n), v) * np.dot(a, b)


def marsden_form(spec, n, radius=2.0):
    """Level-``n`` form on ``R^{2 d_n}``, coordinates ``z = (u, e)``.

    ``omega_z((e1, e2), (e3, e4)) = D_u g(e, e1).e3 - D_u g(e, e3).e1
    + g(e4, e1) - g(e2, e3)`` with ``g_u(a, b) = <A_u a, b>``; as a matrix
    ``[[B, A], [-A, 0]]`` with ``B = 2 (e w^T - w e^T)``, ``w = u - c_n``.
    """
    d = spec.level_dim(n)
    c = spec.singular_point(n)
    sdiag = spec.s_diag(n)

    def func(Z):
        U, E = Z[:, :d], Z[:, d:]
        w = U - c
        # sequential sum: zero padding at higher levels leaves it bit-identical
        a = np.cumsum(w * w, axis=1)[:, -1:] + sdiag[None, :]
        W = np.zeros((Z.shape[0], 2 * d, 2 * d))
        W[:, :d, :d] = 2.0 * (E[:, :, None] * w[:, None, :] - w[:, :, None] * E[:, None, :])
        idx = np.arange(d)
        W[:, idx, d + idx] = a
        W[:, d + idx, idx] = -a
        return W

    return FormField(2 * d, func, Region((0.0,) * (2 * d), radius), f"marsden_{n}")


def marsden_tower(spec, radius=2.0):
    """Per-level Marsden forms; coherent only when all singular points coincide.

    The restriction ``E_n -> E_{n+1}`` pads both the ``u`` and ``e`` blocks.
    """
    levels = tuple(2 * spec.level_dim(n) for n in range(1, spec.n_levels + 1))

    def factory(n):
        inner = marsden_form(spec, n, radius)
        d = spec.level_dim(n)
        # reorder (u, e) -> interleaved per-level blocks so E_n sits first in E_{n+1}
        perm = _tower_permutation(spec.base_dim, n)
        inv = np.argsort(perm)

        def func(Z):
            W = inner(Z[:, inv])
            return W[:, perm][:, :, perm]

        return FormField(2 * d, func, inner.region, f"marsden_tower_{n}")

    return CoherentFormSequence(factory, levels, "marsden")


def _tower_permutation(h, n):
    """Index map from tower coordinates to ``(u, e)`` coordinates at level ``n``.

    Tower order: ``u_base, e_base, (u_extra_1, e_extra_1), (u_extra_2, ...)``.
    """
    d = h + n
    order = list(range(h)) + list(range(d, d + h))
    for k in range(n):
        order += [h + k, d + h + k]
    return np.array(order)


def fiber_sigma_min(spec, n, u):
    """``sigma_min`` of the fibre block ``A_u`` (diagonal, so its smallest entry)."""
    return float(np.min(metric_operator(spec, n, np.atleast_2d(u))))


# ----------------------------------------------------------------------------
# Darboux radius


def _sphere_directions(dim, n_dirs, rng, probes=()):
    dirs = [np.asarray(p, dtype=float) for p in probes]
    if 2 * dim <= n_dirs:
        eye = np.eye(dim)
        dirs += list(eye) + list(-eye)
    while len(dirs) < n_dirs + len(probes):
        g = rng.normal(size=dim)
        dirs.append(g)
    D = np.array(dirs, dtype=float)
    norms = np.linalg.norm(D, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise InputError("probe direction must be nonzero")
    return D / norms


def _dip_estimate(p, k):
    """Lowest value the samples around ``p[k]`` suggest, via a parabola."""
    lo = p[k]
    j = min(max(k, 1), len(p) - 2)
    y0, y1, y2 = p[j - 1], p[j], p[j + 1]
    c = y0 - 2 * y1 + y2
    if np.isfinite(c) and c > 0:
        off = 0.5 * (y0 - y2) / c
        if abs(off) <= 1:
            lo = min(lo, y1 - 0.125 * (y0 - y2) ** 2 / c)
    return lo


def darboux_radius(field, x0, margin=DEFAULT_MARGIN, *, n_dirs=32, n_radii=8,
                   t_values=(0.0, 0.25, 0.5, 0.75, 1.0), tol=1e-3, probes=(), seed=0,
                   r_max=None, refine_factor=10.0, return_info=False):
    """Largest radius on which the linear Moser path stays above ``margin``.

    Checks ``sigma_min(omega_t(x)) >= margin`` for ``x`` on rays from ``x0``
    (``n_dirs`` seeded directions, coordinate axes when they fit, plus any
    ``probes``), and ``t`` in ``t_values``.  Each ray is scanned at
    ``n_radii`` radii to bracket the first failure, then bisected to ``tol``.
    Sampled local minima of the profile are refined by a bounded scalar
    minimization.  This is always done on probe rays.  On other rays a
    minimum is refined when the sample, or the vertex of the parabola
    through it and its neighbours, is below ``refine_factor * margin``.
    ``refine_factor=None`` refines every sampled minimum, which is exact
    but costly in high dimension.  The radius is the minimum over rays,
    capped at the region radius.
    """
    x0 = np.asarray(x0, dtype=float)
    anchor = field(x0)
    s0 = float(sigma_min(anchor))
    R = field.region.radius - field.region.distance(x0) if r_max is None else r_max
    info = {"sigma_min_x0": s0, "limiting_direction": None}
    if s0 < margin:
        info["diagnostic"] = f"degenerate at x0: sigma_min={s0:.3g}"
        return (0.0, info) if return_info else 0.0
    rng = np.random.default_rng(seed)
    D = _sphere_directions(field.dim, n_dirs, rng, probes)
    # keep rays inside the region (the region is a norm ball, so scale per ray)
    scale = np.asarray(field.region.norm(D))
    R_ray = R / np.maximum(scale, 1e-300)
    ts = np.asarray(t_values, dtype=float)

    def profile(rad, rows):
        """``min_t sigma_min(omega_t)`` at ``rad[rows]`` along the selected rays."""
        pts = x0 + D[rows] * rad[rows, None]
        W = field(pts)
        stack = anchor[None, None] + ts[:, None, None, None] * (W[None] - anchor[None, None])
        out = np.full(len(D), np.inf)
        out[rows] = np.min(sigma_min(stack), axis=0)
        return out

    def ok(rad, rows):
        return profile(rad, rows) >= margin

    fracs = np.arange(0, n_radii + 1) / n_radii
    prof = np.full((len(D), n_radii + 1), np.inf)
    prof[:, 0] = s0
    lo = np.zeros(len(D))
    hi = R_ray.copy()
    failed = np.zeros(len(D), dtype=bool)
    for k, f in enumerate(fracs[1:], start=1):
        rows = np.nonzero(~failed)[0]
        if not rows.size:
            break
        rad = f * R_ray
        prof[:, k] = profile(rad, rows)
        newly = (prof[:, k] < margin) & ~failed
        hi = np.where(newly, rad, hi)
        failed |= newly
        lo = np.where(~failed, rad, lo)

    # a narrow dip between scan radii is caught by minimizing along the ray
    # around each sampled local minimum
    for i in np.nonzero(~failed)[0]:
        p = prof[i]
        for k in range(1, n_radii + 1):
            right = p[k + 1] if k < n_radii else np.inf
            if not (p[k] <= p[k - 1] and p[k] <= right):
                continue
            if (refine_factor is not None and i >= len(probes)
                    and _dip_estimate(p, k) >= refine_factor * margin):
                continue
            a, b = fracs[k - 1] * R_ray[i], fracs[min(k + 1, n_radii)] * R_ray[i]
            rows = np.array([i])

            def g(r, i=i, rows=rows):
                rad = np.zeros(len(D))
                rad[i] = r
                return profile(rad, rows)[i]

            res = minimize_scalar(g, bounds=(a, b), method="bounded",
                                  options={"xatol": 1e-3 * tol})
            if res.fun < margin:
                failed[i] = True
                lo[i], hi[i] = a, res.x
                break

    while True:
        rows = np.nonzero(failed & (hi - lo > tol / np.maximum(scale, 1e-300)))[0]
        if not rows.size:
            break
        mid = 0.5 * (lo + hi)
        good = ok(mid, rows)
        sel = np.zeros(len(D), dtype=bool)
        sel[rows] = True
        lo = np.where(sel & good, mid, lo)
        hi = np.where(sel & ~good, mid, hi)
    radii = np.where(failed, lo, R_ray * scale)
    k = int(np.argmin(radii))
    info["limiting_direction"] = D[k].tolist() if failed[k] else None
    r = float(min(radii[k], R))
    return (r, info) if return_info else r


def shrinkage_experiment(spec, levels=None, margin=1e-4, *, workers=None, **kw):
    """Darboux radius at ``0`` of every level of the Marsden tower.

    The ray through the level's singular point is always probed.  Returns a
    list of rows ``(n, dim, r_n, sigma_min_at_e_n)``.
    """
    levels = list(range(1, spec.n_levels + 1)) if levels is None else list(levels)
    if not levels:
        raise InputError("levels must be nonempty")

    def one(n):
        fld = marsden_form(spec, n)
        c = np.concatenate([spec.singular_point(n), np.zeros(spec.level_dim(n))])
        probes = (c,) if np.any(c) else ()
        r = darboux_radius(fld, np.zeros(fld.dim), margin, probes=probes, **kw)
        return (n, fld.dim, r, fiber_sigma_min(spec, n, spec.singular_point(n)))

    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(one, levels))


def strictly_decreasing(values):
    return all(b < a for a, b in zip(values, values[1:]))
