"""Non-autonomous ODEs on a direct limit of nested spaces.

An :class:`OdeFamily` gives one time-dependent field per level.  The family
is expected to restrict: the ``E_n`` block of ``f_{n+1}(t, (x, 0))`` is
``f_n(t, x)``.  For coordinatewise families such as the two built-in examples
the new coordinates are *not* fed zero (``phi_i(t, 0) != 0``), so the
restriction is checked on the projection and the complementary "leak" is
reported separately.
"""

import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.special import zeta

from .dirlim import DLVector
from .exceptions import DomainError, InputError
from .symplin import NormSpec

PI2_4 = math.pi ** 2 / 4.0
ZETA2 = math.pi ** 2 / 6.0


@dataclass
class OdeFamily:
    """Per-level fields ``f(n, t, x)`` on ``R^{dim(n)}`` with bound data.

    Parameters
    ----------
    f : callable
        ``f(n, t, X)`` with ``X`` of shape ``(P, dim(n))``; returns the same shape.
    dim : callable
        Level dimension ``n -> d_n``.
    radius : callable
        Ball radius ``n -> r_n`` about ``center(n)``.
    T : float
        Half-length of the time interval ``[t0 - T, t0 + T]``.
    jacobian : callable, optional
        ``jacobian(n, t, X)`` of shape ``(P, d_n, d_n)``, or ``(P, d_n)`` when
        ``diagonal_jacobian`` is set; finite differences otherwise.
    closed_form_bound : callable, optional
        Analytic ``K_n`` to report beside the sampled suprema.
    bound_limit : float, optional
        Analytic bound on ``sup_n K_n`` when one is known.
    """

    f: object
    dim: object
    radius: object
    T: float = 1.0
    t0: float = 0.0
    norm: str = "ell1"
    center: object = None
    jacobian: object = None
    diagonal_jacobian: bool = False
    closed_form_bound: object = None
    bound_limit: float | None = None
    name: str = "family"
    meta: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        NormSpec(self.norm)

    def norm_spec(self):
        return NormSpec(self.norm)

    def a(self, n):
        return np.zeros(self.dim(n)) if self.center is None else np.asarray(self.center(n), float)

    def __call__(self, n, t, X):
        return self.f(n, t, np.atleast_2d(np.asarray(X, dtype=float)))

    def jac(self, n, t, X, h=1e-6):
        """Dense Jacobian stack ``(P, d, d)``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.jacobian is not None:
            J = self.jacobian(n, t, X)
            if self.diagonal_jacobian:
                P, d = J.shape
                out = np.zeros((P, d, d))
                out[:, np.arange(d), np.arange(d)] = J
                return out
            return J
        d = X.shape[1]
        E = np.eye(d) * h
        Jc = [(self.f(n, t, X + E[k]) - self.f(n, t, X - E[k])) / (2 * h) for k in range(d)]
        return np.stack(Jc, axis=2)


def op_norm(J, norm):
    """Operator norm of each matrix of a stack for the given ``NormSpec``."""
    if norm.kind == "ell1":
        return np.max(np.sum(np.abs(J), axis=-2), axis=-1)
    if norm.kind == "ellinf":
        return np.max(np.sum(np.abs(J), axis=-1), axis=-1)
    if norm.kind == "euclidean":
        return np.linalg.norm(J, 2, axis=(-2, -1))
    raise InputError("operator norm only for ell1, ellinf and euclidean")


# ----------------------------------------------------------------------------
# built-in families


def _coordinatewise(weight, name, radius=1.5, bound_limit=None, closed=None):
    def f(n, t, X):
        i = np.arange(1, X.shape[1] + 1)
        return t / weight(i) * (X ** 2 + 1.0)

    def jac(n, t, X):
        i = np.arange(1, X.shape[1] + 1)
        return 2.0 * t * X / weight(i)

    return OdeFamily(f, dim=lambda n: n, radius=lambda n: radius, T=1.0, norm="ell1",
                     jacobian=jac, diagonal_jacobian=True, closed_form_bound=closed, bound_limit=bound_limit, name=name,
                     meta={"domain": "(-pi/2, pi/2)^n", "interval": [-1.0, 1.0]})


def power_family(power, radius=1.5, name=None):
    """``phi_i(t, y) = t/i^power (y^2 + 1)``; analytic bounds from ``sum i^-power``."""
    power = float(power)
    if not power > 0:
        raise InputError("power must be positive")
    limit = (PI2_4 + 1.0) * float(zeta(power)) if power > 1 else None
    return _coordinatewise(
        lambda i: i.astype(float) ** power, name or f"power({power:g})", radius=radius,
        closed=lambda n: (PI2_4 + 1.0) * math.fsum(1.0 / i ** power for i in range(1, n + 1)),
        bound_limit=limit)


def example3_family():
    """``phi_i(t, y) = t/i^2 (y^2 + 1)`` on ``(-pi/2, pi/2)^n``, ell1 norms, ``r_n = 3/2``."""
    return power_family(2, name="example3")


def example4_family():
    """``phi_i(t, y) = t/i (y^2 + 1)``; same domain and norms, ``r_n = 3/2 <= pi/2``."""
    return power_family(1, name="example4")


def linear_family(M_of_level, name="linear", radius=1.0):
    """``f_n(t, x) = M_n x``; ``M_of_level(n)`` returns the level matrix."""
    def f(n, t, X):
        return X @ np.asarray(M_of_level(n)).T

    def jac(n, t, X):
        M = np.asarray(M_of_level(n), dtype=float)
        return np.broadcast_to(M, (X.shape[0],) + M.shape).copy()

    return OdeFamily(f, dim=lambda n: np.asarray(M_of_level(n)).shape[0],
                     radius=lambda n: radius, jacobian=jac, name=name)


def stabilizing_family(M, name="stabilizing"):
    """``f_n(t, x) = M_n x`` where ``M_n`` is the leading block of an upper-triangular
    ``M`` for ``n <= N`` and ``f_n = (f_N, 0)`` beyond.

    Upper-triangular is what makes the levels restrict exactly: the new
    row of ``M_{n+1}`` sees only the new coordinate, which is zero on ``E_n``.
    """
    M = np.triu(np.asarray(M, dtype=float))
    N = M.shape[0]

    def level_matrix(n):
        k = min(n, N)
        out = np.zeros((n, n))
        out[:k, :k] = M[:k, :k]
        return out

    fam = linear_family(level_matrix, name)
    fam.meta["stabilizes_at"] = N
    return fam


def analytic_solution(weight_power, y0, t, t0=0.0):
    """``y_i(t) = tan(t^2/(2 i^p) - t0^2/(2 i^p) + arctan y_i(t0))`` for the examples."""
    y0 = np.asarray(y0, dtype=float)
    i = np.arange(1, y0.shape[-1] + 1, dtype=float) ** weight_power
    t = np.asarray(t, dtype=float)[..., None]
    return np.tan((t ** 2 - t0 ** 2) / (2.0 * i) + np.arctan(y0))


# ----------------------------------------------------------------------------
# bounds and conditions


def ball_grid(n, d, r, a, norm, n_axis=64, n_random=64, seed=0):
    """Sample points of the closed ball ``B(a, r)``: axis segments plus random points."""
    fr = np.linspace(-1.0, 1.0, n_axis)
    axis = np.zeros((d * n_axis, d))
    for k in range(d):
        axis[k * n_axis:(k + 1) * n_axis, k] = fr * r
    rng = np.random.default_rng(seed + n)
    G = rng.normal(size=(n_random, d))
    G /= np.maximum(norm(G)[:, None], 1e-300)
    G *= r * rng.random(n_random)[:, None] ** (1.0 / d)
    return a + np.concatenate([np.zeros((1, d)), axis, G])


def bound_estimate(family, n, n_t=64, n_axis=64, n_random=64, seed=0):
    """Sampled ``(K0_n, K1_n)``: sups of ``||f_n||_n`` and ``||D_2 f_n||_n^op``."""
    d, r = family.dim(n), family.radius(n)
    norm = family.norm_spec()
    X = ball_grid(n, d, r, family.a(n), norm, n_axis, n_random, seed)
    if family.jacobian is None:
        X = X[:: max(1, len(X) // 256)]
    ts = family.t0 + np.linspace(-family.T, family.T, n_t)
    K0 = K1 = 0.0
    for t in ts:
        K0 = max(K0, float(np.max(norm(family(n, t, X)))))
        if family.diagonal_jacobian:
            # every operator norm in use is max |diag| for a diagonal matrix
            K1 = max(K1, float(np.max(np.abs(family.jacobian(n, t, X)))))
        else:
            K1 = max(K1, float(np.max(op_norm(family.jac(n, t, X), norm))))
    return K0, K1


@dataclass
class BoundReport:
    """Per-level bound data and the verdicts for (A_n), (B) and (C)."""

    levels: list
    K0: list
    K1: list
    r: list
    tau: float
    closed_form: list
    bound_limit: float | None
    flags: dict
    trend: dict
    config: dict

    @property
    def K(self):
        return [max(a, b) for a, b in zip(self.K0, self.K1)]

    @property
    def r_over_K(self):
        return [r / k if k > 0 else math.inf for r, k in zip(self.r, self.K)]

    @property
    def r_minus_tauK(self):
        return [r - self.tau * k for r, k in zip(self.r, self.K)]

    def rows(self):
        out = []
        for i, n in enumerate(self.levels):
            out.append({"n": n, "K0": self.K0[i], "K1": self.K1[i], "K": self.K[i],
                        "K_closed": self.closed_form[i], "r": self.r[i],
                        "r/K": self.r_over_K[i], "r-tauK": self.r_minus_tauK[i],
                        "A": self.flags["A"][i]})
        return out

    def to_dict(self):
        return {"family": self.config.get("family"), "tau": self.tau,
                "bound_limit": self.bound_limit, "flags": {
                    "A": all(self.flags["A"]), "B": self.flags["B"], "C": self.flags["C"]},
                "trend": self.trend, "config": self.config, "rows": self.rows()}


def _increment_exponent(values):
    """Log-log slope of the successive increments over the last half of the levels."""
    v = np.asarray(values, dtype=float)
    if len(v) < 8:
        return None
    inc = np.diff(v)
    n = np.arange(2, len(v) + 1, dtype=float)
    tail = slice(len(inc) // 2, None)
    inc, n = inc[tail], n[tail]
    if np.all(np.abs(inc) <= 1e-14 * max(1.0, float(np.max(np.abs(v))))):
        return math.inf
    if np.any(inc <= 0):
        return None
    return float(-np.polyfit(np.log(n), np.log(inc), 1)[0])


def condition_check(family, n_max, tau=None, *, levels=None, safety=0.9, **grid):
    """Evaluate (A_n) per level and the trend verdicts (B) and (C).

    ``K_n = max(K0_n, K1_n)`` from :func:`bound_estimate`.  ``tau`` defaults
    to ``safety * min(T, inf_n r_n/K_n)``.  (B) and (C) cannot be decided from
    finitely many levels; they are reported from the computed infima together
    with a growth trend of ``K_n``: increments decaying faster than ``1/n``
    (log-log exponent above 1.5) count as bounded, otherwise the ratio is
    flagged as decaying toward 0.
    """
    if n_max < 1:
        raise InputError("n_max must be >= 1")
    ns = list(range(1, n_max + 1)) if levels is None else list(levels)
    K0, K1, r, closed = [], [], [], []
    for n in ns:
        k0, k1 = bound_estimate(family, n, **grid)
        K0.append(k0)
        K1.append(k1)
        r.append(float(family.radius(n)))
        closed.append(family.closed_form_bound(n) if family.closed_form_bound else None)
    K = [max(a, b) for a, b in zip(K0, K1)]
    ratios = [ri / k if k > 0 else math.inf for ri, k in zip(r, K)]
    inf_ratio = min(ratios)
    if tau is None:
        tau = safety * min(family.T, inf_ratio)
    tau = float(tau)
    margins = [ri - tau * k for ri, k in zip(r, K)]
    exponent = _increment_exponent(K)
    decreasing = all(b < a for a, b in zip(ratios, ratios[1:])) and len(ratios) > 1
    if exponent is None:
        trend = "undetermined"
    elif exponent > 1.5:
        trend = "bounded"
    else:
        trend = "decaying_to_zero"
    flags = {
        "A": [math.isfinite(k) for k in K],
        "B": bool(inf_ratio > 0 and trend != "decaying_to_zero"),
        "C": bool(min(margins) > 0 and trend != "decaying_to_zero"),
    }
    warn = None
    if trend == "decaying_to_zero":
        warn = "r_n/K_n decays monotonically; (B) fails in the limit"
    return BoundReport(ns, K0, K1, r, tau, closed, family.bound_limit, flags,
                       {"K_increment_exponent": exponent, "ratio_decreasing": decreasing,
                        "verdict": trend, "inf_r_over_K": inf_ratio,
                        "inf_r_minus_tauK": min(margins), "warning": warn},
                       {"family": family.name, "n_max": n_max, "safety": safety, **grid})


def restriction_check(family, n_max, n_samples=32, seed=0, n_t=5):
    """Projection mismatch and complement leak of ``f_{n+1}`` on ``E_n``.

    Returns ``(mismatch, leak)`` maxima over levels ``1..n_max-1``.
    """
    rng = np.random.default_rng(seed)
    mism = leak = 0.0
    for n in range(1, n_max):
        d, d1 = family.dim(n), family.dim(n + 1)
        r = family.radius(n)
        X = family.a(n) + rng.uniform(-1, 1, size=(n_samples, d)) * r / d
        Xp = np.zeros((n_samples, d1))
        Xp[:, :d] = X
        for t in family.t0 + np.linspace(-family.T, family.T, n_t):
            lo = family(n, t, X)
            hi = family(n + 1, t, Xp)
            mism = max(mism, float(np.max(np.abs(hi[:, :d] - lo))))
            leak = max(leak, float(np.max(np.abs(hi[:, d:]))) if d1 > d else 0.0)
    return mism, leak


# ----------------------------------------------------------------------------
# solver


def _rk4(family, n, x, t0, t1, h):
    steps = max(1, int(round(abs(t1 - t0) / h)))
    hh = (t1 - t0) / steps
    ts = t0 + hh * np.arange(steps + 1)
    out = [x.copy()]
    for k in range(steps):
        t = ts[k]
        k1 = family(n, t, x)[0]
        k2 = family(n, t + hh / 2, x + hh / 2 * k1)[0]
        k3 = family(n, t + hh / 2, x + hh / 2 * k2)[0]
        k4 = family(n, t + hh, x + hh * k3)[0]
        x = x + hh / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        out.append(x.copy())
    return ts, np.array(out)


def solve_limit_ode(family, a, t0=None, tau=None, h=1e-3, level=None, check_ball=True):
    """RK4 solution on ``[t0 - tau, t0 + tau]`` from the tail-zero vector ``a``.

    Solved at ``level`` (default: the minimal level of ``a`` under the family's
    dimensions).  Returns ``(times, states)`` with states of the solved level.
    Raises :class:`DomainError` when the trajectory leaves
    ``B(a_{n0}, r_{n0})``.
    """
    if not h > 0:
        raise InputError("h must be positive")
    t0 = family.t0 if t0 is None else float(t0)
    tau = family.T if tau is None else float(tau)
    n0 = next(n for n in range(1, 10 ** 6) if family.dim(n) >= a.support)
    n = n0 if level is None else level
    if n < n0:
        raise InputError(f"level {n} below the minimal level {n0}")
    x0 = np.zeros(family.dim(n))
    x0[:a.support] = a.coords
    tb, xb = _rk4(family, n, x0, t0, t0 - tau, h)
    tf, xf = _rk4(family, n, x0, t0, t0 + tau, h)
    times = np.concatenate([tb[::-1], tf[1:]])
    states = np.concatenate([xb[::-1], xf[1:]])
    if check_ball:
        norm = family.norm_spec()
        center = np.zeros(family.dim(n))
        center[:family.dim(n0)] = family.a(n0)
        dist = norm(states - center)
        out = dist > family.radius(n0)
        if np.any(out):
            k = int(np.argmax(out))
            raise DomainError(f"trajectory left B(a, r_{n0}) at t={times[k]:.6g}",
                              t=float(times[k]), x=states[k])
    return times, states


def trajectory_as_dl(times, states, levels):
    return [(float(t), DLVector(tuple(s), levels)) for t, s in zip(times, states)]
