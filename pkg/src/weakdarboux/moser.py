"""Moser's path method on regions of ``R^d``.

Everything here works in coordinates translated so that the base point
``x0`` sits at the origin: the radial primitive integrates along rays from
``x0``.  Flows are integrated with fixed-step RK4, the Jacobian of the flow
being carried along through directional central differences of the vector
field.

Sign convention: the Moser field solves ``flat(omega_t, X) = -alpha_t``,
which with ``d alpha_t = d/dt omega_t`` gives ``d/dt F_t^* omega_t = 0``.
"""

from dataclasses import dataclass, field as dc_field

import numpy as np

from ._validation import as_points
from .exceptions import DegeneracyError, DomainError, InputError
from .fields import FormField
from .symplin import DEFAULT_MARGIN, j_std, linear_darboux, sigma_min

DEFAULT_STEPS = 100
DEFAULT_QUAD_NODES = 64
DEFAULT_FD_STEP = 1e-5
STORE_TIMES = (0.0, 0.25, 0.5, 0.75, 1.0)


def gauss_legendre_01(n):
    """Gauss-Legendre nodes and weights mapped to ``[0, 1]``."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def _primitive_batch(func, Y, quad_nodes):
    """``alpha(y) = int_0^1 s * y @ func(s y) ds`` for each row of ``Y``."""
    s, w = gauss_legendre_01(quad_nodes)
    P, d = Y.shape
    pts = (s[:, None, None] * Y[None]).reshape(-1, d)
    W = func(pts).reshape(quad_nodes, P, d, d)
    return np.einsum("q,pi,qpij->pj", w * s, Y, W)


def radial_primitive(field, x, quad_nodes=DEFAULT_QUAD_NODES, origin=None):
    """Poincare-lemma primitive of a closed 2-form along rays from ``origin``.

    Parameters
    ----------
    field : FormField
    x : array_like, shape (d,) or (P, d)
    quad_nodes : int
        Gauss-Legendre nodes for the ``s``-integral.
    origin : array_like, optional
        Centre of the rays; defaults to the origin of ``R^d``.

    Returns
    -------
    ndarray
        Covector(s) ``alpha_x`` with ``d alpha = field`` when ``field`` is closed.
    """
    x = np.asarray(x, dtype=float)
    X = as_points(x, field.dim)
    o = np.zeros(field.dim) if origin is None else np.asarray(origin, dtype=float)
    field.check_inside(o[None], "ray origin")
    field.check_inside(X, "ray end point")
    alpha = _primitive_batch(lambda Z: field(Z + o), X - o, quad_nodes)
    return alpha[0] if x.ndim == 1 else alpha


def primitive_exactness(field, points, h_fd=1e-4, quad_nodes=DEFAULT_QUAD_NODES, origin=None):
    """Max entrywise ``|d alpha - field|`` at ``points``, ``alpha`` the radial primitive.

    ``d alpha_ij = d_i alpha_j - d_j alpha_i`` by central differences of step
    ``h_fd``.  Small only when ``field`` is closed.
    """
    X = field.check_inside(points, "sample point")
    P, d = X.shape
    E = np.eye(d) * h_fd
    stencil = np.concatenate([X[:, None, :] + E[None], X[:, None, :] - E[None]], axis=1)
    A = radial_primitive(field, stencil.reshape(-1, d), quad_nodes, origin).reshape(P, 2 * d, d)
    D = (A[:, :d] - A[:, d:]) / (2.0 * h_fd)       # D[p, i, j] = d_i alpha_j
    dalpha = D - np.swapaxes(D, 1, 2)
    return float(np.max(np.abs(dalpha - field(X)))) if P else 0.0


@dataclass(frozen=True)
class FormPath:
    """A one-parameter family of forms ``omega_t``, ``t in [0, 1]``.

    ``mode="linear"``: ``omega_t(x) = anchor + t (base(x) - anchor)``.
    ``mode="exp"``: ``omega_t(x) = exp(s t) base(x)``.
    """

    base: FormField
    anchor: np.ndarray
    x0: np.ndarray
    mode: str = "linear"
    s: float = 0.0

    def __post_init__(self):
        if self.mode not in ("linear", "exp"):
            raise InputError(f"unknown path mode {self.mode!r}")
        object.__setattr__(self, "anchor", np.asarray(self.anchor, dtype=float))
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float))

    @classmethod
    def linear(cls, base, x0):
        x0 = np.asarray(x0, dtype=float)
        return cls(base, base(x0), x0, "linear")

    @classmethod
    def exp_scaling(cls, base, x0, s):
        x0 = np.asarray(x0, dtype=float)
        return cls(base, base(x0), x0, "exp", float(s))

    @property
    def dim(self):
        return self.base.dim

    def __call__(self, t, x):
        W = self.base(x)
        if self.mode == "linear":
            return self.anchor + t * (W - self.anchor)
        return np.exp(self.s * t) * W

    def rate(self, t, x):
        """``d/dt omega_t`` at ``x``."""
        W = self.base(x)
        if self.mode == "linear":
            return W - self.anchor
        return self.s * np.exp(self.s * t) * W

    def primitive(self, t, y, quad_nodes=DEFAULT_QUAD_NODES):
        """Radial primitive of the rate at translated points ``y = x - x0``."""
        if self.mode == "exp" and self.s == 0.0:
            return np.zeros_like(y)
        return _primitive_batch(lambda Z: self.rate(t, Z + self.x0), y, quad_nodes)


def moser_vector_field(path, alpha, t, x, margin=DEFAULT_MARGIN):
    """Solve ``flat(path(t, x), X) = -alpha(x)`` for ``X``.

    ``alpha`` is a callable returning the covector at ``x`` (or an array).
    Accepts a single point or a batch.
    """
    x = np.asarray(x, dtype=float)
    X = as_points(x, path.dim)
    a = alpha(X) if callable(alpha) else np.asarray(alpha, dtype=float).reshape(X.shape)
    W = path(t, X)
    V = _solve_flat(W, a, t, X, margin)
    return V[0] if x.ndim == 1 else V


def _solve_flat(W, a, t, X, margin, s=None):
    smin = sigma_min(W)
    bad = smin < margin
    if np.any(bad):
        k = int(np.argmax(bad))
        raise DegeneracyError(
            f"path degenerate at t={t:.6g}: sigma_min={smin[k]:.3g} < margin {margin:.3g}",
            t=float(t), x=X[k], s=s, sigma_min=float(smin[k]))
    # flat(W, X) = X @ W = -a  <=>  W^T X = -a
    return np.linalg.solve(np.swapaxes(W, -1, -2), -a[..., None])[..., 0]


@dataclass(frozen=True)
class Chart:
    """Sampled chart: images and Jacobians of a set of points at stored times.

    ``evaluator`` recomputes ``(images, jacobians)`` at the final time for new
    points; ``times`` are the stored flow times.
    """

    points: np.ndarray
    times: tuple
    images: np.ndarray
    jacobians: np.ndarray
    evaluator: object = None
    direction: str = "forward"
    residual_report: dict = dc_field(default_factory=dict)

    def __call__(self, X):
        X = np.asarray(X, dtype=float)
        F, _ = self.evaluator(as_points(X, self.points.shape[1]))
        return F[0] if X.ndim == 1 else F

    def jacobian(self, X):
        X = np.asarray(X, dtype=float)
        _, DF = self.evaluator(as_points(X, self.points.shape[1]))
        return DF[0] if X.ndim == 1 else DF

    @property
    def final_images(self):
        return self.images[-1]

    @property
    def final_jacobians(self):
        return self.jacobians[-1]

    def at(self, t):
        k = int(np.argmin(np.abs(np.asarray(self.times) - t)))
        return self.images[k], self.jacobians[k]


def _flow_rhs(path, t, Y, J, margin, quad_nodes, fd_step, region):
    """Vector field and Jacobian propagation at translated states ``Y``."""
    P, d = Y.shape
    inside = region.contains(Y + path.x0, slack=1e-12)
    if not np.all(inside):
        k = int(np.argmin(inside))
        raise DomainError(f"trajectory left the region at t={t:.6g}", t=float(t),
                          x=Y[k] + path.x0)
    # states and the +/- h stencils along each Jacobian column, in one batch
    offs = fd_step * np.swapaxes(J, 1, 2)              # (P, d, d), row c = column c of J
    Z = np.concatenate([Y[:, None, :], Y[:, None, :] + offs, Y[:, None, :] - offs], axis=1)
    Zf = Z.reshape(-1, d)
    a = path.primitive(t, Zf, quad_nodes)
    W = path(t, Zf + path.x0)
    s = path.s if path.mode == "exp" else None
    V = _solve_flat(W, a, t, Zf + path.x0, margin, s).reshape(P, 2 * d + 1, d)
    dV = (V[:, 1:d + 1] - V[:, d + 1:]) / (2.0 * fd_step)   # (P, c, i) = DX . J[:, c]
    return V[:, 0], np.swapaxes(dV, 1, 2)


def _integrate(path, Y0, steps, margin, quad_nodes, fd_step, region, backward=False,
               store_times=STORE_TIMES):
    if steps < 1:
        raise InputError("steps must be >= 1")
    P, d = Y0.shape
    Y = Y0.copy()
    J = np.broadcast_to(np.eye(d), (P, d, d)).copy()
    h = (-1.0 if backward else 1.0) / steps
    t = 1.0 if backward else 0.0
    grid = np.linspace(1.0, 0.0, steps + 1) if backward else np.linspace(0.0, 1.0, steps + 1)
    want = {int(round(abs(tt - grid[0]) * steps)): tt for tt in store_times}
    stored_Y, stored_J = {}, {}

    def rhs(tt, Yc, Jc):
        return _flow_rhs(path, tt, Yc, Jc, margin, quad_nodes, fd_step, region)

    for k in range(steps + 1):
        if k in want:
            stored_Y[want[k]] = Y.copy()
            stored_J[want[k]] = J.copy()
        if k == steps:
            break
        t = grid[k]
        k1y, k1j = rhs(t, Y, J)
        k2y, k2j = rhs(t + h / 2, Y + h / 2 * k1y, J + h / 2 * k1j)
        k3y, k3j = rhs(t + h / 2, Y + h / 2 * k2y, J + h / 2 * k2j)
        k4y, k4j = rhs(t + h, Y + h * k3y, J + h * k3j)
        Y = Y + h / 6 * (k1y + 2 * k2y + 2 * k3y + k4y)
        J = J + h / 6 * (k1j + 2 * k2j + 2 * k3j + k4j)
    inside = region.contains(Y + path.x0, slack=1e-12)
    if not np.all(inside):
        k = int(np.argmin(inside))
        raise DomainError("trajectory left the region", t=float(grid[-1]), x=Y[k] + path.x0)
    times = tuple(sorted(stored_Y))
    return times, np.array([stored_Y[tt] for tt in times]), np.array([stored_J[tt] for tt in times])


def moser_flow(path, x_start, steps=DEFAULT_STEPS, margin=DEFAULT_MARGIN,
               quad_nodes=DEFAULT_QUAD_NODES, fd_step=DEFAULT_FD_STEP, backward=False,
               store_times=STORE_TIMES):
    """Integrate the Moser field of ``path`` from ``x_start`` (points, original coordinates).

    Forward (``t: 0 -> 1``) the chart ``F_t`` satisfies ``F_t^* omega_t = omega_0``.
    With ``backward=True`` it is integrated from ``t = 1`` down to ``0`` and the
    chart ``G_t`` satisfies ``G_t^* omega_t = omega_1``.
    """
    region = path.base.region
    X0 = path.base.check_inside(x_start, "start point")

    def evaluate(X, times=(0.0 if backward else 1.0,)):
        _, Y, J = _integrate(path, X - path.x0, steps, margin, quad_nodes, fd_step, region,
                             backward, store_times=times)
        return Y[-1] + path.x0, J[-1]

    times, Y, J = _integrate(path, X0 - path.x0, steps, margin, quad_nodes, fd_step, region,
                             backward, store_times)
    if backward:
        times, Y, J = times[::-1], Y[::-1], J[::-1]
    chart = Chart(X0, times, Y + path.x0, J, evaluate, "backward" if backward else "forward")
    chart.residual_report.update(pullback_residuals(chart, path))
    return chart


def verify_pullback(chart, source, target, points=None, t=None):
    """Max entrywise ``|DF^T target(F(x)) DF - source(x)|`` over sample points.

    ``target`` may be a constant matrix or a field; the chart's stored samples
    are used unless ``points`` is given.
    """
    if points is None:
        F, DF = (chart.final_images, chart.final_jacobians) if t is None else chart.at(t)
        X = chart.points
    else:
        X = as_points(points, chart.points.shape[1])
        F, DF = chart.evaluator(X)
    S = source(X) if callable(source) else np.broadcast_to(np.asarray(source, float),
                                                          (len(X),) + DF.shape[1:])
    T = target(F) if callable(target) else np.asarray(target, dtype=float)
    pulled = np.einsum("pia,pij,pjb->pab", DF, np.broadcast_to(T, DF.shape), DF)
    return float(np.max(np.abs(pulled - S))) if len(X) else 0.0


def pullback_residuals(chart, path):
    """Residual of the Moser identity at every stored time of the chart."""
    ref_t = 1.0 if chart.direction == "backward" else 0.0
    out = {}
    for t in chart.times:
        out[t] = verify_pullback(chart, lambda X: path(ref_t, X),
                                 lambda Z, t=t: path(t, Z), t=t)
    return out


def fixed_point_error(path, steps=DEFAULT_STEPS, **kw):
    """Max drift ``|F_t(x0) - x0|`` over the stored times."""
    chart = moser_flow(path, path.x0[None], steps=steps, **kw)
    return float(np.max(np.abs(chart.images - path.x0)))


def darboux_chart(field, x0, points, steps=DEFAULT_STEPS, margin=DEFAULT_MARGIN,
                  quad_nodes=DEFAULT_QUAD_NODES, fd_step=DEFAULT_FD_STEP, tol=1e-5):
    """Chart ``C`` near ``x0`` with ``C^* J_std = field``.

    ``C(x) = A^{-1} (G(x) - x0)`` where ``G`` is the backward Moser flow of the
    linear path anchored at ``field(x0)`` and ``A = linear_darboux(field(x0))``.
    The residual against ``J_std`` at ``points`` is stored in
    ``residual_report["darboux"]`` together with a pass flag at ``tol``.
    """
    x0 = np.asarray(x0, dtype=float)
    field.check_inside(x0[None], "base point")
    anchor = field(x0)
    try:
        A = linear_darboux(anchor, margin)
    except DegeneracyError as exc:
        raise DegeneracyError(f"anchor form at x0: {exc}", t=0.0, x=x0,
                              sigma_min=exc.sigma_min) from exc
    A_inv = np.linalg.inv(A)
    path = FormPath.linear(field, x0)
    flow = moser_flow(path, points, steps, margin, quad_nodes, fd_step, backward=True)

    def evaluate(X):
        G, DG = flow.evaluator(X)
        return (G - x0) @ A_inv.T, A_inv @ DG

    images = (flow.images - x0) @ A_inv.T
    jacs = np.einsum("ij,tpjk->tpik", A_inv, flow.jacobians)
    chart = Chart(flow.points, flow.times, images, jacs, evaluate, "backward")
    chart.residual_report.update({"moser": dict(flow.residual_report)})
    res = verify_pullback(chart, field, j_std(field.dim))
    chart.residual_report.update({"darboux": res, "tol": tol, "ok": bool(res <= tol),
                                  "linear_map": A.tolist()})
    return chart


def exp_scaling_chart(field, x0, s, points, steps=DEFAULT_STEPS, margin=DEFAULT_MARGIN,
                      quad_nodes=DEFAULT_QUAD_NODES, fd_step=DEFAULT_FD_STEP):
    """Forward Moser flow of ``omega_t = exp(s t) field``; ``F_1^*(e^s field) = field``."""
    path = FormPath.exp_scaling(field, x0, s)
    field.check_inside(np.asarray(x0, float)[None], "base point")
    smin0 = float(np.min(sigma_min(field(field.check_inside(points)))))
    if smin0 < margin:
        X = field.check_inside(points)
        k = int(np.argmin(sigma_min(field(X))))
        raise DegeneracyError(f"field degenerate at a start point (s={s:g})", t=0.0, x=X[k],
                              s=float(s), sigma_min=smin0)
    chart = moser_flow(path, points, steps, margin, quad_nodes, fd_step)
    chart.residual_report["exp_final"] = verify_pullback(chart, field, field.scaled(np.exp(s)))
    return chart


def convergence_study(field, x0, points, steps=(1, 2, 4), floor=1e-12, **kw):
    """Darboux residuals under successive step doubling and their ratios.

    Each entry of ``ratios`` compares consecutive step counts.  A ratio is
    marked ``resolved`` when the finer residual is still above ``floor``;
    below that the residual is at roundoff and the ratio says nothing about
    the order.

    Returns
    -------
    dict
        Keys ``steps``, ``residuals``, ``ratios``, ``resolved`` and
        ``min_resolved_ratio`` (``None`` when no ratio is resolved).
    """
    steps = sorted(int(s) for s in steps)
    res = [darboux_chart(field, x0, points, s, **kw).residual_report["darboux"] for s in steps]
    ratios = [a / b if b > 0 else np.inf for a, b in zip(res, res[1:])]
    resolved = [b > floor for b in res[1:]]
    good = [r for r, ok in zip(ratios, resolved) if ok]
    return {"steps": steps, "residuals": res, "ratios": ratios, "resolved": resolved,
            "floor": floor, "min_resolved_ratio": min(good) if good else None}
