"""Interior-point refinement for the curve projection problem.

Solves ``min 1/2 ||s - c||^2`` over ``{||K_g s|| <= b_g for every group g,
A s = v}`` where the groups are the per-entry (RV) or per-sample (RIV) rows
of the stacked first/second difference operators.

The constraints are written as ``|K_g s / b_g|^2 - 1 + z_g = 0`` with slacks
``z >= 0`` and multipliers ``lam >= 0``, and solved by a Mehrotra
predictor-corrector iteration. The reduced Newton matrix ``I + K^T W K`` is
banded; it is factorized with a banded Cholesky and affine rows enter
through a Schur complement. The returned curve is pulled back into the
kinematic set if the last iterate overshoots by rounding.

Works in time-normalized units (dt = 1).
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .curves import NormMode
from .errors import InfeasibleConstraints, NumericFailure

log = logging.getLogger(__name__)

__all__ = ["InteriorInfo", "stacked_operator", "interior_point_projection", "strictly_feasible_point"]


@dataclass
class InteriorInfo:
    iterations: int
    mu: float  # final complementarity z^T lam / m
    primal_residual: float
    dual_residual: float
    shrink: float  # fraction moved toward the strictly feasible anchor at the end
    polished: bool = False  # final point from the exact active-set solve


def _rowdot(u, v):
    # einsum beats a reduction along a short trailing axis by a wide margin
    return np.einsum("ij,ij->i", u, v)


def _first_diff_matrix(n: int) -> sp.csr_matrix:
    e = np.ones(n - 1)
    main = np.r_[0.0, e]
    return sp.diags([main, -e], [0, -1], shape=(n, n), format="csr")


def stacked_operator(n: int, d: int) -> sp.csr_matrix:
    """``[M1; M2]`` with dt = 1 acting on the row-major flattened curve."""
    D1 = _first_diff_matrix(n)
    M2 = -(D1.T @ D1)
    eye = sp.identity(d, format="csr")
    return sp.vstack([sp.kron(D1, eye), sp.kron(M2, eye)], format="csr")


class _Groups:
    def __init__(self, n, d, alpha, beta, mode):
        self.K = stacked_operator(n, d)
        self.N = n * d
        if NormMode.parse(mode) is NormMode.RIV:
            self.gs = d
            self.bound = np.r_[np.full(n, alpha), np.full(n, beta)]
        else:
            self.gs = 1
            self.bound = np.r_[np.full(n * d, alpha), np.full(n * d, beta)]
        self.ng = len(self.bound)
        self.b2 = self.bound**2
        self.row_groups = np.repeat(np.arange(self.ng), self.gs)
        # half-bandwidth of K^T W K in the flattened index
        self.bw = 4 * d - 1

    def x(self, s):
        return (self.K @ s).reshape(self.ng, self.gs)

    def xhat(self, s):
        return self.x(s) / self.bound[:, None]

    def ratio(self, s):
        x = self.x(s)
        return np.sqrt(_rowdot(x, x)) / self.bound

    def apply_t(self, y):
        return self.K.T @ y.ravel()


# -- linear algebra -----------------------------------------------------------


def _blocks(a, c, x):
    """``a_g I + c_g x_g x_g^T`` stacked as (ng, gs, gs)."""
    gs = x.shape[1]
    return a[:, None, None] * np.eye(gs)[None] + c[:, None, None] * x[:, :, None] * x[:, None, :]


def _block_diag(blk) -> sp.csr_matrix:
    ng, gs, _ = blk.shape
    if gs == 1:
        return sp.diags(blk[:, 0, 0], format="csr")
    idx = np.arange(ng * gs).reshape(ng, gs)
    rows = np.repeat(idx, gs, axis=1).ravel()
    cols = np.tile(idx, (1, gs)).ravel()
    return sp.csr_matrix((blk.ravel(), (rows, cols)), shape=(ng * gs, ng * gs))


def _to_banded(H: sp.spmatrix, bw: int) -> np.ndarray:
    N = H.shape[0]
    ab = np.zeros((bw + 1, N))
    Hc = H.tocsr()
    for k in range(bw + 1):
        ab[bw - k, k:] = Hc.diagonal(k)
    return ab


# groups whose weight exceeds this go to the augmented system
_STRONG = 1e6
# beyond this weight the banded Cholesky loses too many digits to be useful
_BANDED_MAX = 1e10


class _ReducedKKT:
    """Factorization of ``[I + K^T B K, A^T; A, 0]`` with ``B`` block diagonal (ng, gs, gs).

    ``solve(g)`` returns the ``dx`` part of the solution for right-hand side
    ``[-g; 0]``. The banded Cholesky of ``H = I + K^T B K`` is tried first.
    Near the boundary ``B`` grows like 1/mu and that block stops being
    numerically positive definite; the heavily weighted groups are then kept
    as extra unknowns ``y = B_s K_s dx`` in the quasi-definite system
    ``[H_w K_s^T; K_s -B_s^-1]``, which a pivoted sparse LU handles. The few
    affine rows always enter through a dense Schur complement.
    """

    def __init__(self, G: _Groups, blk, A):
        self.N = G.N
        self.A = A
        weight = np.trace(blk, axis1=1, axis2=2)
        chol = None
        if weight.max() <= _BANDED_MAX:
            H = sp.identity(G.N, format="csr") + G.K.T @ _block_diag(blk) @ G.K
            try:
                chol = sla.cholesky_banded(_to_banded(H, G.bw), lower=False)
            except np.linalg.LinAlgError:
                chol = None
        if chol is not None:
            self._h = lambda r: sla.cho_solve_banded((chol, False), r)
        else:
            strong = weight > _STRONG
            rows_s = np.flatnonzero(strong[G.row_groups])
            rows_w = np.flatnonzero(~strong[G.row_groups])
            Ks, Kw = G.K[rows_s], G.K[rows_w]
            Hw = sp.identity(G.N, format="csr") + Kw.T @ _block_diag(blk[~strong]) @ Kw
            Binv = _block_diag(np.linalg.inv(blk[strong]))
            aug = sp.bmat([[Hw, Ks.T], [Ks, -Binv]], format="csc")
            lu = spla.splu(aug, permc_spec="MMD_AT_PLUS_A")
            pad = aug.shape[0] - G.N

            def h(r):
                r2 = r if r.ndim == 2 else r[:, None]
                out = lu.solve(np.vstack([r2, np.zeros((pad, r2.shape[1]))]))[: G.N]
                return out if r.ndim == 2 else out[:, 0]

            self._h = h
        if A is not None:
            # affine rows through the Schur complement A H^-1 A^T
            self._Y = self._h(np.asarray(A.T.todense()))
            self._S = sla.cho_factor(A @ self._Y)

    def solve(self, g):
        hg = self._h(g)
        if self.A is None:
            return -hg
        lam = sla.cho_solve(self._S, self.A @ hg)
        return -(hg - self._Y @ lam)


# -- strictly feasible anchor ---------------------------------------------------


def strictly_feasible_point(n, d, alpha, beta, mode, solver, margin=0.9, max_steps=200):
    """A point of the affine set with every kinematic group at most ``margin`` of its bound.

    Homogeneous affine sets admit the zero curve. Otherwise a phase-one
    barrier minimizes the uniform bound scaling ``tau`` over the affine set
    until ``tau <= margin``.
    """
    G = _Groups(n, d, alpha, beta, mode)
    if solver is None or solver.empty or not np.any(solver.rhs):
        return np.zeros(n * d)
    s = solver.project(np.zeros(n * d))
    A = solver._scaled
    tau = 1.5 * float(np.max(G.ratio(s))) + 1.0
    mu = 1.0
    for _ in range(max_steps):
        if G.ratio(s).max() <= margin:
            return s
        # Newton step on (s, tau) for  tau - mu * sum log(tau^2 b^2 - |x|^2)
        x = G.x(s)
        h = tau**2 * G.b2 - _rowdot(x, x)
        gs_ = G.apply_t(2.0 * x / h[:, None]) * mu
        gt = 1.0 - mu * float(np.sum(2.0 * tau * G.b2 / h))
        W = _block_diag(_blocks(2.0 * mu / h, 4.0 * mu / h**2, x))
        Hss = sp.identity(G.N, format="csr") * 1e-10 + G.K.T @ W @ G.K
        hst = G.apply_t(-4.0 * tau * G.b2[:, None] * x / (h**2)[:, None] * mu)
        htt = mu * float(np.sum(-2.0 * G.b2 / h + 4.0 * tau**2 * G.b2**2 / h**2))
        H = sp.bmat([[Hss, sp.csr_matrix(hst[:, None])], [sp.csr_matrix(hst[None, :]), sp.csr_matrix([[htt]])]])
        Aa = sp.hstack([A, sp.csr_matrix((A.shape[0], 1))], format="csr")
        KKT = sp.bmat([[H, Aa.T], [Aa, None]], format="csc")
        step = spla.spsolve(KKT, np.r_[-gs_, -gt, np.zeros(A.shape[0])])[: G.N + 1]
        t = 1.0
        while True:
            s_new, tau_new = s + t * step[: G.N], tau + t * step[G.N]
            xn = G.x(s_new)
            if tau_new > 0 and np.all(tau_new**2 * G.b2 - _rowdot(xn, xn) > 0):
                break
            t *= 0.5
            if t < 1e-14:
                break
        s, tau = s_new, tau_new
        mu *= 0.5
    if G.ratio(s).max() < 1.0:
        return s
    raise InfeasibleConstraints("could not find a strictly feasible curve for the affine and kinematic constraints")


def _kernel_projector(solver):
    if solver is None or solver.empty:
        return lambda g: g
    return lambda g: g - solver.apply_pseudo_inverse(solver.rows @ g)



# -- active-set polish -------------------------------------------------------------


def _polish(G: _Groups, cf, s, active, lam0, solver, rounds=6, newton_steps=10, tol=1e-13):
    """Solve the KKT system with the groups in ``active`` held at their bounds.

    Constraints are written ``1/2 (|K_g s|^2 - b_g^2) = 0`` with multipliers
    ``lam_g >= 0``. Newton's method runs from ``(s, lam0)``; afterwards groups
    with negative multipliers are released and violated groups added, for a
    few rounds. Returns the polished flat curve, or None when no consistent
    active set is found.
    """
    N, gs = G.N, G.gs
    A = None if solver is None or solver.empty else solver._scaled
    v = None if A is None else solver._row_scale * solver.rhs
    p = 0 if A is None else A.shape[0]
    xscale = max(1.0, float(np.max(np.abs(cf))))
    active = np.asarray(active, dtype=bool).copy()
    lam_full = np.where(active, lam0, 0.0)
    for _ in range(rounds):
        idx = np.flatnonzero(active)
        k = len(idx)
        rows = (idx[:, None] * gs + np.arange(gs)[None]).ravel()
        Ka = G.K[rows]
        bb = G.b2[idx]
        lam = lam_full[idx].copy()
        mu = np.zeros(p)
        x = s.copy()
        ok = False
        prev = np.inf
        grow = 0
        for _ in range(newton_steps + 1):
            y = (Ka @ x).reshape(k, gs)
            lw = np.repeat(lam, gs)
            F1 = x - cf + Ka.T @ (lw * y.ravel())
            if p:
                F1 = F1 + A.T @ mu
            F2 = 0.5 * (_rowdot(y, y) - bb)
            F3 = A @ x - v if p else np.zeros(0)
            res = max(
                float(np.max(np.abs(F1))) / xscale,
                float(np.max(np.abs(F2) / bb, initial=0.0)),
                float(np.max(np.abs(F3), initial=0.0)) / xscale,
            )
            log.debug("polish active=%d residual %.3e", k, res)
            if res <= tol:
                ok = True
                break
            grow = grow + 1 if res > prev else 0
            if grow >= 2:
                break
            prev = res
            R = sp.csr_matrix((y.ravel(), (np.repeat(np.arange(k), gs), np.arange(k * gs))), shape=(k, k * gs))
            Gm = R @ Ka
            H = sp.identity(N, format="csr") + Ka.T @ sp.diags(lw) @ Ka
            blocks = [[H, Gm.T], [Gm, None]]
            if p:
                blocks = [[H, Gm.T, A.T], [Gm, None, None], [A, None, None]]
            KKT = sp.bmat(blocks, format="csc")
            try:
                with warnings.catch_warnings():
                    # a singular system (dependent active rows) shows up as non-finite output
                    warnings.simplefilter("ignore", spla.MatrixRankWarning)
                    step = spla.spsolve(KKT, -np.concatenate([F1, F2, F3]))
            except (RuntimeError, ValueError):
                return None
            if not np.all(np.isfinite(step)):
                return None
            x = x + step[:N]
            lam = lam + step[N : N + k]
            if p:
                mu = mu + step[N + k :]
        if not ok:
            return None
        lam_full = np.zeros(G.ng)
        lam_full[idx] = lam
        ratio = G.ratio(x)
        neg = lam_full < 0
        viol = (~active) & (ratio > 1.0 + 1e-13)
        if not neg.any() and not viol.any():
            return x
        active = (active & ~neg) | viol
    return None


# -- second-order cone interior point ---------------------------------------------
#
# Each group is the cone {(t, u) : |u| <= t} of dimension gs + 1 and the slack
# is w_g = (b_g, K_g s). Multipliers z_g live in the same cone. Scaling is the
# Nesterov-Todd point, with the usual Jordan algebra (u o v) = (u.v, u0 v1 + v0 u1).


def _jdot(u, v):
    return u[:, 0] * v[:, 0] - _rowdot(u[:, 1:], v[:, 1:])


def _jsq(u):
    """``u0^2 - |u1|^2`` in factored form to avoid cancellation near the boundary."""
    r = np.sqrt(_rowdot(u[:, 1:], u[:, 1:]))
    return (u[:, 0] - r) * (u[:, 0] + r)


def _jflip(u):
    out = -u
    out[:, 0] = u[:, 0]
    return out


def _jprod(u, v):
    out = u[:, :1] * v + v[:, :1] * u
    out[:, 0] = _rowdot(u, v)
    return out


def _jdiv(lam, r):
    """Solve ``lam o x = r`` for x."""
    det = _jsq(lam)
    x0 = (lam[:, 0] * r[:, 0] - _rowdot(lam[:, 1:], r[:, 1:])) / det
    out = np.empty_like(r)
    out[:, 0] = x0
    out[:, 1:] = (r[:, 1:] - x0[:, None] * lam[:, 1:]) / lam[:, :1]
    return out


def _cone_step(u, du):
    """Largest step in [0, 1] (before damping) keeping ``u + a du`` in the cone."""
    a = _jdot(du, du)
    bq = 2.0 * _jdot(u, du)
    cq = np.maximum(_jsq(u), 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        disc = bq * bq - 4.0 * a * cq
        sq = np.sqrt(np.maximum(disc, 0.0))
        # stable roots
        qq = -0.5 * (bq + np.copysign(sq, bq))
        r1 = qq / a
        r2 = cq / qq
        lin = -cq / bq
    cand = np.full(len(u), np.inf)
    for r in (r1, r2):
        ok = np.isfinite(r) & (r > 0) & (disc >= 0)
        cand = np.where(ok, np.minimum(cand, r), cand)
    flat = np.abs(a) <= 1e-300
    cand = np.where(flat & (bq < 0), np.minimum(cand, lin), cand)
    neg0 = du[:, 0] < 0
    cand = np.where(neg0, np.minimum(cand, -u[:, 0] / np.where(neg0, du[:, 0], -1.0)), cand)
    return float(min(np.min(cand), 1e300))


# a linear solve this accurate is not refined further
_REFINE_TOL = 1e-13


def _rel(e, r):
    return float(np.max(np.abs(e))) / (1.0 + float(np.max(np.abs(r))))


class _Scaling:
    def __init__(self, w, z):
        ws = np.sqrt(_jsq(w))
        zs = np.sqrt(_jsq(z))
        wb, zb = w / ws[:, None], z / zs[:, None]
        gam = np.sqrt(0.5 * (1.0 + _rowdot(wb, zb)))
        wbar = (wb + _jflip(zb)) / (2.0 * gam)[:, None]
        v = wbar.copy()
        v[:, 0] += 1.0
        v /= np.sqrt(2.0 * (wbar[:, :1] + 1.0))
        self.beta = np.sqrt(ws / zs)
        self.v = v
        self.jv = _jflip(v)
        self.lam = self.W(z)

    def Winv_block(self):
        q = self.v.shape[1]
        J = np.diag(np.r_[1.0, -np.ones(q - 1)])
        jv = self.jv
        return (2.0 * jv[:, :, None] * jv[:, None, :] - J[None]) / self.beta[:, None, None]

    def W(self, u):
        return self.beta[:, None] * (2.0 * self.v * _rowdot(self.v, u)[:, None] - _jflip(u))

    def Wi(self, u):
        return (2.0 * self.jv * _rowdot(self.jv, u)[:, None] - _jflip(u)) / self.beta[:, None]


def interior_point_projection(
    c,
    alpha,
    beta,
    mode,
    solver=None,
    start=None,
    tol=1e-14,
    max_iter=100,
    init_mu=1e-2,
    polish=True,
    polish_below=1e-8,
):
    """Project ``c`` (an ``(n, d)`` array, dt = 1 units) onto the constraint set.

    ``start`` is an optional warm start; it is moved onto the affine set.
    Stops when the mean complementarity and the primal and dual residuals,
    all relative to their natural scales, drop below ``tol``, or when the
    iteration stagnates. With ``polish`` the guessed active set is then solved
    exactly (once the merit is below ``polish_below``, where the guess is
    reliable) and kept when its multipliers and feasibility check out. Returns
    ``(points, InteriorInfo)``.
    """
    c = np.asarray(c, dtype=float)
    n, d = c.shape
    G = _Groups(n, d, alpha, beta, mode)
    cf = c.ravel()
    A = None if solver is None or solver.empty else solver._scaled
    proj = _kernel_projector(solver)
    s = cf.copy() if start is None else np.asarray(start, dtype=float).ravel().copy()
    if solver is not None and not solver.empty:
        s = solver.project(s)
    b = G.bound
    m, q = G.ng, G.gs + 1
    dscale = max(1.0, float(np.linalg.norm(cf)))

    def gx(v):  # G s without the constant part: (0, -K s)
        out = np.zeros((m, q))
        out[:, 1:] = -G.x(v)
        return out

    x = G.x(s)
    w = np.empty((m, q))
    w[:, 1:] = x
    w[:, 0] = np.maximum(b, np.sqrt(_rowdot(x, x))) + 0.1 * b
    mu0 = init_mu * dscale
    # centred start: w_g . z_g equal across groups
    z = np.zeros((m, q))
    z[:, 0] = mu0 / w[:, 0]
    e = np.zeros((m, q))
    e[:, 0] = 1.0

    best = (np.inf, s.copy(), None)
    it = 0
    mu = rp_norm = rd_norm = np.inf
    stall = 0
    for it in range(1, max_iter + 1):
        # rp = G s + w - h, rd = s - c + G^T z (range of A^T dropped)
        rp = np.empty((m, q))
        rp[:, 1:] = w[:, 1:] - G.x(s)
        rp[:, 0] = w[:, 0] - b
        rd = (s - cf) - G.apply_t(z[:, 1:])
        mu = float(np.sum(w * z)) / m
        rp_norm = float(np.max(np.abs(rp) / b[:, None]))
        rd_norm = float(np.linalg.norm(proj(rd))) / dscale
        merit = max(mu / dscale, rp_norm, rd_norm)
        log.debug("ip %3d mu %.3e rp %.3e rd %.3e", it, mu, rp_norm, rd_norm)
        if merit < best[0] * (1.0 - 1e-3):
            stall = 0
        else:
            stall += 1
        if merit < best[0]:
            best = (merit, s.copy(), (mu, rp_norm, rd_norm), w.copy(), z.copy())
        if merit <= tol or stall >= 6:
            break
        if np.any(_jsq(w) <= 0) or np.any(_jsq(z) <= 0):
            break
        sc = _Scaling(w, z)
        # scaled operator W^-1 G restricted to its nonzero columns: -Winv[:, :, 1:] K_g
        wc = sc.Winv_block()[:, :, 1:]
        blk = np.swapaxes(wc, 1, 2) @ wc
        try:
            kkt = _ReducedKKT(G, blk, A)
        except (np.linalg.LinAlgError, ValueError, RuntimeError) as exc:
            log.debug("interior-point factorization failed: %s", exc)
            break
        lam = sc.lam
        wrp = sc.Wi(rp)

        def gt(u):  # (W^-1 G)^T u; W^-1 is symmetric
            return -G.apply_t(sc.Wi(u)[:, 1:])

        def gop(v):  # W^-1 G v
            pad = np.zeros((m, q))
            pad[:, 1:] = G.x(v)
            return -sc.Wi(pad)

        def lin_solve(rx, rz, rs):
            # dx + Gs^T dzs + A^T dy = rx, Gs dx + dws = rz, dws + dzs = rs, A dx = 0
            dx = kkt.solve(gt(rs - rz) - rx)
            dzs = gop(dx) - rz + rs
            return dx, rs - dzs, dzs

        def direction(rc):
            rx, rz, rs = -rd, -wrp, _jdiv(lam, rc)
            dx, dws, dzs = lin_solve(rx, rz, rs)
            for _ in range(2):  # iterative refinement against the unfactored system
                e1 = proj(rx - dx - gt(dzs))
                e2 = rz - gop(dx) - dws
                e3 = rs - dws - dzs
                err = max(_rel(e1, rx), _rel(e2, rz), _rel(e3, rs))
                if err <= _REFINE_TOL:
                    break
                cx, cw, cz = lin_solve(e1, e2, e3)
                dx, dws, dzs = dx + cx, dws + cw, dzs + cz
            return dx, dws, dzs

        lam2 = _jprod(lam, lam)
        dx_a, dws_a, dzs_a = direction(-lam2)
        step_a = min(1.0, _cone_step(lam, dws_a), _cone_step(lam, dzs_a))
        mu_aff = float(np.sum((lam + step_a * dws_a) * (lam + step_a * dzs_a))) / m
        sigma = min(1.0, max(mu_aff / mu, 0.0)) ** 3
        corr = _jprod(dws_a, dzs_a)
        dx, dws, dzs = direction(-lam2 - corr + sigma * mu * e)
        dw, dz = sc.W(dws), sc.Wi(dzs)
        step = min(1.0, 0.99 * min(_cone_step(w, dw), _cone_step(z, dz)))
        s = s + step * dx
        if A is not None:
            s = solver.project(s)  # keeps round-off in the Schur solves from drifting off A
        w = w + step * dw
        z = z + step * dz
        if not (np.all(np.isfinite(s)) and np.all(np.isfinite(w)) and np.all(np.isfinite(z))):
            log.debug("interior-point iterate is not finite")
            break

    s = best[1]
    polished = False
    if best[2] is not None:
        mu, rp_norm, rd_norm = best[2]
        if polish and best[0] <= polish_below:
            # a group is taken as active when its multiplier outweighs its slack
            bw, bz = best[3], best[4]
            slack = b - np.sqrt(_rowdot(bw[:, 1:], bw[:, 1:]))
            active = bz[:, 0] > slack
            sp_ = _polish(G, cf, s, active, bz[:, 0] / b, solver)
            if sp_ is not None:
                s, polished = sp_, True
    shrink = 0.0
    r = G.ratio(s)
    if r.max() > 1.0:
        # residual-level overshoot; move toward a strictly feasible point
        anchor = strictly_feasible_point(n, d, alpha, beta, mode, solver)
        ra = G.ratio(anchor)
        over = r > 1.0
        shrink = float(np.max((r[over] - 1.0) / np.maximum(r[over] - ra[over], 1e-300)))
        shrink = min(1.0, shrink * (1.0 + 1e-9) + 1e-15)
        s = (1.0 - shrink) * s + shrink * anchor
    if not np.all(np.isfinite(s)):
        raise NumericFailure("interior-point refinement produced a non-finite curve")
    log.debug("interior point: %d iterations, mu %.3g, rp %.3g, rd %.3g, polished %s", it, mu, rp_norm, rd_norm, polished)
    return s.reshape(n, d), InteriorInfo(it, mu, rp_norm, rd_norm, shrink, polished)
