"""Compile spec sets into conic programs and solve them.

Canonical form::

    minimize    c^T x
    subject to  A x + s = b,   s in K = {0}^z x R_+^l x Q^{q_1} x ... x Q^{q_k}

Dual: maximize ``-b^T y`` subject to ``c + A^T y = 0``, ``y in K*``.

Two backends are bundled and need nothing beyond numpy/scipy:

* ``"admm"``: operator splitting in the style of OSQP/COSMO with Ruiz
  equilibration, over-relaxation, adaptive step size and infeasibility
  certificates.
* ``"ipm"``: homogeneous self-dual interior-point method with Nesterov-Todd
  scaling and Mehrotra correction.

``"clarabel"`` is an optional adapter used for cross-validation.
"""

from __future__ import annotations

import hashlib
import json
import time
from pathlib import Path
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from numpy.typing import ArrayLike, NDArray

from .specs import (
    L1Constraint,
    LinearConstraint,
    NormObjective,
    SocConstraint,
    SpecSet,
)

__all__ = [
    "CompileError",
    "RowBlock",
    "ConicProgram",
    "SolveReport",
    "Verification",
    "compile",
    "solve",
    "verify_solution",
    "dump_program",
    "load_program",
    "BACKENDS",
]

DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 200000


class CompileError(ValueError):
    """A spec term that has no conic representation."""


@dataclass(frozen=True)
class RowBlock:
    """Rows ``[start, stop)`` of the program produced by one spec term."""

    name: str
    family: str
    channel: str
    cone: str  # "zero" | "nonneg" | "soc"
    start: int
    stop: int


@dataclass
class ConicProgram:
    c: NDArray[np.float64]
    A: NDArray[np.float64]
    b: NDArray[np.float64]
    n_zero: int
    n_nonneg: int
    soc: tuple[int, ...]
    n_theta: int
    variables: tuple[tuple[str, int, int], ...]
    blocks: tuple[RowBlock, ...]

    @property
    def n_vars(self) -> int:
        return self.c.size

    @property
    def n_rows(self) -> int:
        return self.b.size

    @property
    def n_cones(self) -> int:
        return len(self.soc)

    def size(self) -> dict:
        return {"variables": self.n_vars, "rows": self.n_rows, "zero": self.n_zero,
                "nonneg": self.n_nonneg, "soc": len(self.soc),
                "soc_rows": int(sum(self.soc))}

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr in (self.c, self.A, self.b):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update(repr((self.n_zero, self.n_nonneg, self.soc)).encode())
        return h.hexdigest()

    def objective(self, x: ArrayLike) -> float:
        return float(self.c @ np.asarray(x))


# ---------------------------------------------------------------------------
# compile

class _Builder:
    def __init__(self, n: int):
        self.n = n
        self.nvar = n
        self.variables = [("theta", 0, n)]
        self.cost: list[tuple[int, float]] = []
        # each row group: (cone, rows G (list of (cols, M)), g, meta)
        self.groups = {"zero": [], "nonneg": [], "soc": []}

    def new_var(self, name: str, size: int) -> int:
        start = self.nvar
        self.nvar += size
        self.variables.append((name, start, self.nvar))
        return start

    def add(self, cone: str, parts: list[tuple[int, NDArray]], g: NDArray, meta: tuple,
            soc_dim: int | None = None) -> None:
        """Rows ``s = sum_k M_k x[col_k : col_k + M_k.shape[1]] + g``."""
        self.groups[cone].append((parts, np.asarray(g, float), meta, soc_dim))

    def build(self) -> ConicProgram:
        rows = sum(g.size for grp in self.groups.values() for _, g, _, _ in grp)
        G = np.zeros((rows, self.nvar))
        h = np.zeros(rows)
        blocks = []
        soc = []
        r = 0
        for cone in ("zero", "nonneg", "soc"):
            for parts, g, (name, family, channel), dim in self.groups[cone]:
                m = g.size
                for col, M in parts:
                    G[r:r + m, col:col + M.shape[1]] += M
                h[r:r + m] = g
                blocks.append(RowBlock(name, family, channel, cone, r, r + m))
                if cone == "soc":
                    soc.extend([dim] * (m // dim))
                r += m
        c = np.zeros(self.nvar)
        for idx, w in self.cost:
            c[idx] += w
        nz = sum(g.size for _, g, _, _ in self.groups["zero"])
        nl = sum(g.size for _, g, _, _ in self.groups["nonneg"])
        # s = G x + g  <=>  A x + s = b with A = -G, b = g
        return ConicProgram(c, -G, h, nz, nl, tuple(soc), self.n,
                            tuple(self.variables), tuple(blocks))


def compile(specset: SpecSet, n: int | None = None) -> ConicProgram:
    """Lift a :class:`SpecSet` into canonical conic form.

    Variables are ordered ``theta`` first, then auxiliaries in the order the
    terms were added; rows are ordered zero cone, nonnegative cone, SOCs.
    """
    n = specset.n if n is None else n
    if n != specset.n:
        raise CompileError(f"basis size {n} does not match spec set ({specset.n})")
    if len(specset) == 0:
        raise CompileError("empty spec set")
    B = _Builder(n)
    for k, obj in enumerate(specset.objectives):
        if not isinstance(obj, NormObjective):
            raise CompileError(f"objective {k} is not a norm objective")
        e = obj.expr
        meta = (obj.name or f"objective{k}", obj.family, obj.channel)
        if obj.norm == "2":
            t = B.new_var(f"t:{meta[0]}", 1)
            B.cost.append((t, obj.weight))
            m = e.rows
            Mt = np.zeros((m + 1, 1))
            Mt[0, 0] = 1.0
            Me = np.vstack([np.zeros((1, n)), e.M])
            B.add("soc", [(t, Mt), (0, Me)], np.concatenate([[0.0], e.v]), meta, m + 1)
        elif obj.norm == "inf":
            t = B.new_var(f"t:{meta[0]}", 1)
            B.cost.append((t, obj.weight))
            ones = np.ones((2 * e.rows, 1))
            B.add("nonneg", [(t, ones), (0, np.vstack([-e.M, e.M]))],
                  np.concatenate([-e.v, e.v]), meta)
        elif obj.norm == "1":
            u = B.new_var(f"u:{meta[0]}", e.rows)
            for j in range(e.rows):
                B.cost.append((u + j, obj.weight))
            I = np.eye(e.rows)
            B.add("nonneg", [(u, np.vstack([I, I])), (0, np.vstack([-e.M, e.M]))],
                  np.concatenate([-e.v, e.v]), meta)
        else:
            raise CompileError(f"norm {obj.norm!r} is not conic representable here")
    for k, con in enumerate(specset.constraints):
        name = con.name or f"constraint{k}"
        meta = (name, con.family, con.channel)
        if isinstance(con, LinearConstraint):
            cone = "zero" if con.kind == "==" else "nonneg"
            B.add(cone, [(0, con.expr.M)], con.expr.v, meta)
        elif isinstance(con, SocConstraint):
            d = con.dim
            k_c = con.count
            M = np.zeros((k_c * (d + 1), n))
            g = np.zeros(k_c * (d + 1))
            idx_t = np.arange(k_c) * (d + 1)
            M[idx_t] = con.t.M
            g[idx_t] = con.t.v
            body = (idx_t[:, None] + 1 + np.arange(d)[None, :]).ravel()
            M[body] = con.X.M
            g[body] = con.X.v
            B.add("soc", [(0, M)], g, meta, d + 1)
        elif isinstance(con, L1Constraint):
            e = con.expr
            u = B.new_var(f"u:{name}", e.rows)
            I = np.eye(e.rows)
            B.add("nonneg", [(u, np.vstack([I, I])), (0, np.vstack([-e.M, e.M]))],
                  np.concatenate([-e.v, e.v]), meta)
            B.add("nonneg", [(u, -np.ones((1, e.rows)))], np.array([con.bound]),
                  (name + ":sum", con.family, con.channel))
        else:
            raise CompileError(f"constraint {k} ({type(con).__name__}) is not conic")
    return B.build()


# ---------------------------------------------------------------------------
# cones

class _Cones:
    def __init__(self, n_zero: int, n_nonneg: int, soc: Sequence[int]):
        self.z = n_zero
        self.l = n_nonneg
        self.q = tuple(int(d) for d in soc)
        offs = [n_zero + n_nonneg]
        for d in self.q:
            offs.append(offs[-1] + d)
        self.q_off = tuple(offs[:-1])
        self.m = offs[-1]
        # SOC blocks grouped by dimension for vectorized projection
        self.groups: list[tuple[int, NDArray]] = []
        for d in sorted(set(self.q)):
            idx = np.array([o for o, qd in zip(self.q_off, self.q) if qd == d], dtype=np.int64)
            self.groups.append((d, idx[:, None] + np.arange(d)[None, :]))

    def project_K(self, v: NDArray) -> NDArray:
        """Euclidean projection onto K."""
        out = v.copy()
        out[:self.z] = 0.0
        out[self.z:self.z + self.l] = np.maximum(v[self.z:self.z + self.l], 0.0)
        for d, idx in self.groups:
            out[idx] = _proj_soc(v[idx])
        return out

    def project_dual(self, v: NDArray) -> NDArray:
        """Projection onto K* (zero cone dual is free)."""
        out = self.project_K(v)
        out[:self.z] = v[:self.z]
        return out

    def block_ids(self) -> NDArray[np.int64]:
        """Equilibration group for each row (SOC rows share one id per cone)."""
        ids = np.arange(self.m)
        for o, d in zip(self.q_off, self.q):
            ids[o:o + d] = o
        return ids


def _proj_soc(V: NDArray) -> NDArray:
    t = V[:, 0]
    x = V[:, 1:]
    nx = np.linalg.norm(x, axis=1)
    out = np.zeros_like(V)
    inside = nx <= t
    out[inside] = V[inside]
    mid = (~inside) & (nx > -t)
    if np.any(mid):
        a = 0.5 * (t[mid] + nx[mid])
        out[mid, 0] = a
        out[mid, 1:] = (a / nx[mid])[:, None] * x[mid]
    return out


def _ninf(v) -> float:
    return float(np.max(np.abs(v), initial=0.0))


# ---------------------------------------------------------------------------
# reports

@dataclass
class SolveReport:
    status: str  # "optimal" | "infeasible" | "unbounded" | "max_iterations" | "numerical_error"
    theta: NDArray[np.float64]
    x: NDArray[np.float64]
    s: NDArray[np.float64]
    y: NDArray[np.float64]
    objective: float
    dual_objective: float
    primal_residual: float
    dual_residual: float
    gap: float
    iterations: int
    solve_time: float
    backend: str
    tolerance: float
    slacks: dict = field(default_factory=dict)
    scaling: dict = field(default_factory=dict, repr=False)
    infeasibility: float = float("nan")

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"

    def summary(self) -> dict:
        return {"status": self.status, "backend": self.backend,
                "objective": self.objective, "dual_objective": self.dual_objective,
                "primal_residual": self.primal_residual, "dual_residual": self.dual_residual,
                "gap": self.gap, "iterations": self.iterations,
                "solve_time": self.solve_time, "tolerance": self.tolerance,
                "infeasibility": self.infeasibility, "slacks": self.slacks}


def _residuals(P: ConicProgram, x, s, y) -> tuple[float, float, float, float, float]:
    pobj = float(P.c @ x)
    dobj = float(-P.b @ y)
    rp = _ninf(P.A @ x + s - P.b) / (1 + _ninf(P.b))
    rd = _ninf(P.c + P.A.T @ y) / (1 + _ninf(P.c))
    gap = abs(pobj - dobj) / (1 + abs(pobj) + abs(dobj))
    return float(rp), float(rd), float(gap), pobj, dobj


def _make_report(P, status, x, s, y, iters, t0, backend, tol, scaling=None, infeas=np.nan):
    rp, rd, gap, pobj, dobj = _residuals(P, x, s, y)
    return SolveReport(status, x[:P.n_theta].copy(), x, s, y, pobj, dobj, rp, rd, gap,
                       int(iters), time.perf_counter() - t0, backend, tol,
                       _slacks_fast(P, s), scaling or {}, float(infeas))


def _slacks_fast(P: ConicProgram, s: NDArray) -> dict:
    cones = _Cones(P.n_zero, P.n_nonneg, P.soc)
    soc_margin = np.full(P.n_rows, np.inf)
    for d, idx in cones.groups:
        V = s[idx]
        soc_margin[idx[:, 0]] = V[:, 0] - np.linalg.norm(V[:, 1:], axis=1)
    out: dict[str, float] = {}
    for b in P.blocks:
        seg = s[b.start:b.stop]
        if not seg.size:
            continue
        if b.cone == "zero":
            v = -float(np.max(np.abs(seg)))
        elif b.cone == "nonneg":
            v = float(np.min(seg))
        else:
            v = float(np.min(soc_margin[b.start:b.stop]))
        out[b.name] = min(out.get(b.name, np.inf), v)
    return out


# ---------------------------------------------------------------------------
# equilibration

def _ruiz(A: NDArray, c: NDArray, b: NDArray, cones: _Cones, iters: int = 15):
    m, n = A.shape
    D = np.ones(n)
    E = np.ones(m)
    ids = cones.block_ids()
    As = A.copy()
    for _ in range(iters):
        cn = np.abs(As).max(axis=0) if m else np.zeros(n)
        rn = np.abs(As).max(axis=1) if n else np.zeros(m)
        # one factor per SOC block so the cone is preserved
        grp = np.zeros(m)
        np.maximum.at(grp, ids, rn)
        rn = grp[ids]
        # empty rows and columns are left alone
        cn = np.sqrt(np.where(cn > 1e-12, cn, 1.0))
        rn = np.sqrt(np.where(rn > 1e-12, rn, 1.0))
        cn = np.clip(cn, 1e-4, 1e4)
        rn = np.clip(rn, 1e-4, 1e4)
        D /= cn
        E /= rn
        As = As / cn[None, :] / rn[:, None]
        if np.all(np.abs(cn - 1) < 1e-3) and np.all(np.abs(rn - 1) < 1e-3):
            break
    cs = _ninf(c * D)
    cs = 1.0 / cs if cs > 1e-12 else 1.0
    cs = float(np.clip(cs, 1e-4, 1e4))
    return As, D, E, cs


# ---------------------------------------------------------------------------
# ADMM backend

def _admm(P: ConicProgram, tol: float, max_iter: int, warm: dict | None,
          rho: float = 0.1, sigma: float = 1e-6, alpha: float = 1.6,
          check_every: int = 10, adapt_every: int = 100,
          verbose: bool = False) -> SolveReport:
    t0 = time.perf_counter()
    cones = _Cones(P.n_zero, P.n_nonneg, P.soc)
    As, D, E, cs = _ruiz(P.A, P.c, P.b, cones)
    cs_ = cs * P.c * D
    bs = E * P.b
    m, n = As.shape

    def project_C(v):  # C = b - K
        return bs - cones.project_K(bs - v)

    rho_scale = np.ones(m)
    rho_scale[:cones.z] = 1e3
    r = rho

    def factor(rv):
        R = rv * rho_scale
        Kmat = (As.T * R) @ As
        Kmat[np.diag_indices(n)] += sigma
        return sla.cho_factor(Kmat), R

    fac, R = factor(r)
    if warm:
        x = warm["x"] / D
        y = warm["y"] / E * cs
        z = bs - E * warm["s"]
    else:
        x = np.zeros(n)
        y = np.zeros(m)
        z = np.zeros(m)
    bnorm = 1 + _ninf(P.b)
    cnorm = 1 + _ninf(P.c)
    status = "max_iterations"
    infeas = np.nan
    k = 0
    for k in range(1, max_iter + 1):
        rhs = sigma * x - cs_ + As.T @ (R * z - y)
        xt = sla.cho_solve(fac, rhs)
        zt = As @ xt
        x_new = alpha * xt + (1 - alpha) * x
        zr = alpha * zt + (1 - alpha) * z
        z_new = project_C(zr + y / R)
        y_new = y + R * (zr - z_new)
        dx, dy = x_new - x, y_new - y
        x, z, y = x_new, z_new, y_new
        if k % check_every and k != max_iter:
            continue
        # residuals in the original (unscaled) problem
        xu = D * x
        su = (bs - z) / E
        yu = E * y / cs
        rp = _ninf(P.A @ xu + su - P.b) / bnorm
        Aty = P.A.T @ yu
        rd = _ninf(P.c + Aty) / cnorm
        pobj, dobj = P.c @ xu, -P.b @ yu
        gap = abs(pobj - dobj) / (1 + abs(pobj) + abs(dobj))
        if verbose and k % 1000 == 0:
            print(f"admm {k:7d} rp={rp:.2e} rd={rd:.2e} gap={gap:.2e} rho={r:.2e}")
        if rp <= tol and rd <= tol and gap <= tol:
            status = "optimal"
            break
        # infeasibility certificates from successive differences
        ndy = _ninf(E * dy)
        if ndy > 1e-12:
            dyu = E * dy
            if (_ninf(P.A.T @ dyu) <= 1e-7 * ndy
                    and P.b @ dyu < -1e-7 * ndy
                    and _ninf(dyu - cones.project_dual(dyu)) <= 1e-7 * ndy):
                status = "infeasible"
                infeas = float(-P.b @ dyu / ndy)
                break
        ndx = _ninf(D * dx)
        if ndx > 1e-12:
            dxu = D * dx
            Adx = -(P.A @ dxu)
            if (P.c @ dxu < -1e-7 * ndx
                    and _ninf(Adx - cones.project_K(Adx)) <= 1e-7 * ndx):
                status = "unbounded"
                infeas = float(-P.c @ dxu / ndx)
                break
        if k % adapt_every == 0:
            sp = _ninf(As @ x - z) / max(
                _ninf(As @ x), _ninf(z), 1e-12)
            sd = _ninf(cs_ + As.T @ y) / max(
                _ninf(As.T @ y), _ninf(cs_), 1e-12)
            ratio = np.sqrt(sp / max(sd, 1e-16))
            if ratio > 5 or ratio < 0.2:
                r = float(np.clip(r * ratio, 1e-6, 1e6))
                fac, R = factor(r)
    xu = D * x
    su = cones.project_K((bs - z) / E) if status != "optimal" else (bs - z) / E
    yu = E * y / cs
    rep = _make_report(P, status, xu, su, yu, k, t0, "admm", tol,
                       {"D": D, "E": E, "c_scale": cs, "rho": r}, infeas)
    return rep


# ---------------------------------------------------------------------------
# interior-point backend

def _soc_norm(v):
    # sqrt(v0^2 - |v1|^2) factored to avoid cancellation near the boundary
    r = np.linalg.norm(v[1:])
    return np.sqrt(max((v[0] - r) * (v[0] + r), 1e-300))


class _Inaccurate(Exception):
    """Raised when the normal-equation solve cannot be refined to accuracy."""


class _NT:
    """Nesterov-Todd scaling for a product of nonnegative and second-order cones."""

    def __init__(self, cones: _Cones, s: NDArray, z: NDArray):
        self.c = cones
        sl, zl = s[:cones.l], z[:cones.l]
        self.dl = np.sqrt(sl / zl)  # W = diag(dl)
        self.lam = np.empty_like(s)
        self.lam[:cones.l] = np.sqrt(sl * zl)
        self.blocks = []
        off = cones.l
        for d in cones.q:
            sq, zq = s[off:off + d], z[off:off + d]
            sn = _soc_norm(sq)
            zn = _soc_norm(zq)
            sb, zb = sq / sn, zq / zn
            gam = np.sqrt(max((1 + sb @ zb) / 2, 1e-300))
            wq = (sb + np.concatenate([[zb[0]], -zb[1:]])) / (2 * gam)
            # W = beta (2 v v^T - J) is the square root of beta^2 (2 w w^T - J)
            wb = wq.copy()
            wb[0] += 1.0
            wb /= np.sqrt(2 * (wq[0] + 1))
            beta = np.sqrt(sn / zn)
            self.blocks.append((off, d, wb, beta))
            self.lam[off:off + d] = self._W_block(wb, beta, zq)
            off += d

    @staticmethod
    def _W_block(wb, beta, v):
        # W = beta (2 w w^T - J)
        out = 2 * wb * (wb @ v)
        out[0] -= v[0]
        out[1:] += v[1:]
        return beta * out

    @staticmethod
    def _Winv_block(wb, beta, v):
        # W^-1 = (1/beta) (2 J w w^T J - J)
        Jw = np.concatenate([[wb[0]], -wb[1:]])
        out = 2 * Jw * (Jw @ v)
        out[0] -= v[0]
        out[1:] += v[1:]
        return out / beta

    def W(self, v):
        out = np.empty_like(v)
        out[:self.c.l] = self.dl[:, None] * v[:self.c.l] if v.ndim == 2 else self.dl * v[:self.c.l]
        for off, d, wb, beta in self.blocks:
            seg = v[off:off + d]
            out[off:off + d] = self._apply(self._W_block, wb, beta, seg)
        return out

    def W2(self):
        """W^T W as a sparse block-diagonal matrix."""
        parts = [sp.diags(self.dl ** 2)] if self.c.l else []
        for off, d, wb, beta in self.blocks:
            M = self._apply(self._W_block, wb, beta, np.eye(d))
            parts.append(sp.csc_matrix(M @ M))
        return sp.block_diag(parts, format="csc")

    def Winv(self, v):
        out = np.empty_like(v)
        out[:self.c.l] = v[:self.c.l] / (self.dl[:, None] if v.ndim == 2 else self.dl)
        for off, d, wb, beta in self.blocks:
            seg = v[off:off + d]
            out[off:off + d] = self._apply(self._Winv_block, wb, beta, seg)
        return out

    @staticmethod
    def _apply(f, wb, beta, seg):
        if seg.ndim == 1:
            return f(wb, beta, seg)
        if f is _NT._W_block:
            out = 2 * np.outer(wb, wb @ seg)
            out[0] -= seg[0]
            out[1:] += seg[1:]
            return beta * out
        Jw = np.concatenate([[wb[0]], -wb[1:]])
        out = 2 * np.outer(Jw, Jw @ seg)
        out[0] -= seg[0]
        out[1:] += seg[1:]
        return out / beta


def _jprod(cones: _Cones, u, v):
    """Jordan product on the inequality part (nonneg then SOCs)."""
    out = np.empty_like(u)
    L = cones.l
    out[:L] = u[:L] * v[:L]
    off = L
    for d in cones.q:
        a, b = u[off:off + d], v[off:off + d]
        out[off] = a @ b
        out[off + 1:off + d] = a[0] * b[1:] + b[0] * a[1:]
        off += d
    return out


def _jdiv(cones: _Cones, lam, v):
    """Solve ``lam o x = v`` for ``x``."""
    out = np.empty_like(v)
    L = cones.l
    out[:L] = v[:L] / lam[:L]
    off = L
    for d in cones.q:
        l0, l1 = lam[off], lam[off + 1:off + d]
        v0, v1 = v[off], v[off + 1:off + d]
        det = l0 * l0 - l1 @ l1
        x0 = (l0 * v0 - l1 @ v1) / det
        out[off] = x0
        out[off + 1:off + d] = (v1 - x0 * l1) / l0
        off += d
    return out


def _unit(cones: _Cones, m: int):
    e = np.zeros(m)
    e[:cones.l] = 1.0
    off = cones.l
    for d in cones.q:
        e[off] = 1.0
        off += d
    return e


def _max_step(cones: _Cones, x, dx):
    """Largest ``a <= 1e6`` with ``x + a dx`` in the cone (``x`` interior)."""
    amax = 1e6
    L = cones.l
    if L:
        neg = dx[:L] < 0
        if np.any(neg):
            amax = min(amax, float(np.min(-x[:L][neg] / dx[:L][neg])))
    off = L
    for d in cones.q:
        x0, x1 = x[off], x[off + 1:off + d]
        d0, d1 = dx[off], dx[off + 1:off + d]
        # work in coordinates scaled by the current point
        det = x0 * x0 - x1 @ x1
        if det <= 0:
            return 0.0
        # rho = (J x)^T dx / det, etc.; step limit from the smallest eigenvalue
        a = d0 * d0 - d1 @ d1
        b = 2 * (x0 * d0 - x1 @ d1)
        c = det
        roots = []
        if abs(a) < 1e-300:
            if b < 0:
                roots.append(-c / b)
        else:
            disc = b * b - 4 * a * c
            if disc >= 0:
                sq = np.sqrt(disc)
                q = -0.5 * (b + np.copysign(sq, b))
                for rt in (q / a, c / q if q != 0 else np.inf):
                    if rt > 0:
                        roots.append(rt)
        if d0 < 0:
            roots.append(-x0 / d0)
        if roots:
            # the boundary is hit at the smallest positive root that leaves the cone
            for rt in sorted(roots):
                probe = rt * (1 + 1e-9)
                y0 = x0 + probe * d0
                y1 = x1 + probe * d1
                if y0 < np.linalg.norm(y1) or y0 < 0:
                    amax = min(amax, rt)
                    break
        off += d
    return amax


def _ipm(P: ConicProgram, tol: float, max_iter: int, verbose: bool = False) -> SolveReport:
    t0 = time.perf_counter()
    cones_all = _Cones(P.n_zero, P.n_nonneg, P.soc)
    As, D, E, cs = _ruiz(P.A, P.c, P.b, cones_all)
    cvec = cs * P.c * D
    bvec = E * P.b
    nz = P.n_zero
    # zero rows: Ae x = be;  remaining rows: G x + s = h, s in K
    Ae, be = As[:nz], bvec[:nz]
    G, h = As[nz:], bvec[nz:]
    cones = _Cones(0, P.n_nonneg, P.soc)
    n = G.shape[1]
    m = G.shape[0]
    p = Ae.shape[0]
    nu = cones.l + len(cones.q)
    e = _unit(cones, m)

    Gs = sp.csc_matrix(G)
    Aes = sp.csc_matrix(Ae)

    mode = {"sparse": False}

    def kkt_factor(nt: _NT | None, reg=1e-10):
        if mode["sparse"]:
            # quasi-definite augmented system, far better conditioned than the normal equations
            H = nt.W2() if nt is not None else sp.identity(m, format="csc")
            K = sp.bmat([[sp.identity(n) * reg, Aes.T, Gs.T],
                         [Aes, sp.identity(p) * -reg, None],
                         [Gs, None, -H - sp.identity(m) * reg]], format="csc")
            return ("sparse", spla.splu(K, permc_spec="COLAMD"))
        WiG = nt.Winv(G) if nt is not None else G
        K = np.zeros((n + p, n + p))
        K[:n, :n] = WiG.T @ WiG
        K[:n, n:] = Ae.T
        K[n:, :n] = Ae
        K[np.diag_indices(n + p)] += np.concatenate([np.full(n, reg), np.full(p, -reg)])
        return ("normal", sla.lu_factor(K))

    def kkt_solve(fac, nt, r1, r2, r3, refine=6):
        """Solve [0 Ae^T G^T; Ae 0 0; G 0 -W^T W] [x; y; z] = [r1; r2; r3]."""
        kind, f = fac

        def once(r1, r2, r3):
            if kind == "sparse":
                sol = f.solve(np.concatenate([r1, r2, r3]))
                return sol[:n], sol[n:n + p], sol[n + p:]
            Hr3 = nt.Winv(nt.Winv(r3)) if nt is not None else r3
            sol = sla.lu_solve(f, np.concatenate([r1 + G.T @ Hr3, r2]))
            x, y = sol[:n], sol[n:]
            v = G @ x - r3
            return x, y, (nt.Winv(nt.Winv(v)) if nt is not None else v)

        x, y, zz = once(r1, r2, r3)
        scales = [1 + np.abs(r).max(initial=0) for r in (r1, r2, r3)]
        err = np.inf
        for _ in range(refine + 1):
            e1 = r1 - (Ae.T @ y + G.T @ zz)
            e2 = r2 - Ae @ x
            Hz = nt.W(nt.W(zz)) if nt is not None else zz
            e3 = r3 - (G @ x - Hz)
            err = max(np.abs(e).max(initial=0) / sc for e, sc in zip((e1, e2, e3), scales))
            if err < 1e-14:
                break
            dx_, dy_, dz_ = once(e1, e2, e3)
            x, y, zz = x + dx_, y + dy_, zz + dz_
        if kind == "normal" and nt is not None and not err < 1e-12:
            raise _Inaccurate
        return x, y, zz

    # initial point: least-squares primal and dual estimates shifted into the cone
    fac0 = kkt_factor(None)
    x, _, _ = kkt_solve(fac0, None, np.zeros(n), be, h)
    s = h - G @ x
    x1, y1, z1 = kkt_solve(fac0, None, -cvec, np.zeros(p), np.zeros(m))
    z = z1

    def shift(v):
        a = _cone_min_eig(cones, v)
        if a <= 0:
            v = v + (1 - a) * e
        return v

    s = shift(s)
    z = shift(z)
    y = y1
    tau, kap = 1.0, 1.0
    status = "max_iterations"
    it = 0
    def newton_step(x, y, z, s, tau, kap, rx, ry, rz, rt, mu):
        nt = _NT(cones, s, z)
        fac = kkt_factor(nt)
        lam = nt.lam
        # solution of K u1 = [-c; b; h]
        u1 = kkt_solve(fac, nt, -cvec, be, h)
        f1 = -(cvec @ u1[0]) - be @ u1[1] - h @ u1[2]

        def direction(eta, ds_rhs, dk_rhs):
            # ds = W^T (lam \ ds_rhs) - W^T W dz
            t = nt.W(_jdiv(cones, lam, ds_rhs))
            u0 = kkt_solve(fac, nt, -eta * rx, eta * ry, eta * rz - t)
            f0 = -(cvec @ u0[0]) - be @ u0[1] - h @ u0[2]
            dtau = (-eta * rt + dk_rhs / tau - f0) / (f1 + kap / tau)
            dx = u0[0] + dtau * u1[0]
            dy = u0[1] + dtau * u1[1]
            dz = u0[2] + dtau * u1[2]
            ds = t - nt.W(nt.W(dz))
            dkap = (dk_rhs - kap * dtau) / tau
            return dx, dy, dz, ds, dtau, dkap

        def step_len(ds, dz, dtau, dkap):
            a = min(_max_step(cones, s, ds), _max_step(cones, z, dz))
            if dtau < 0:
                a = min(a, -tau / dtau)
            if dkap < 0:
                a = min(a, -kap / dkap)
            return a

        # predictor
        aff = direction(1.0, -_jprod(cones, lam, lam), -tau * kap)
        a_aff = min(1.0, step_len(aff[3], aff[2], aff[4], aff[5]))
        sig = (1 - a_aff) ** 3
        # corrector with Mehrotra second-order term
        Wids = nt.Winv(aff[3])  # W^-T ds, W symmetric
        Wdz = nt.W(aff[2])
        ds_rhs = sig * mu * e - _jprod(cones, lam, lam) - _jprod(cones, Wids, Wdz)
        dk_rhs = sig * mu - tau * kap - aff[4] * aff[5]
        dx, dy, dz, ds, dtau, dkap = direction(1 - sig, ds_rhs, dk_rhs)
        a = min(1.0, 0.99 * step_len(ds, dz, dtau, dkap))
        return (x + a * dx, y + a * dy, z + a * dz, s + a * ds, tau + a * dtau, kap + a * dkap)

    best = None
    stall = 0
    for it in range(1, max_iter + 1):
        # residuals of the embedding
        rx = Ae.T @ y + G.T @ z + cvec * tau
        ry = -(Ae @ x) + be * tau
        rz = -(G @ x) + h * tau - s
        rt = -(cvec @ x) - be @ y - h @ z - kap
        mu = (s @ z + tau * kap) / (nu + 1)

        # termination tests on the unscaled problem
        xu = D * x / tau
        su_full = np.concatenate([np.zeros(nz), s]) / tau / E
        yu = np.concatenate([y, z]) * E / cs / tau
        rp, rd, gap, pobj, dobj = _residuals(P, xu, su_full, yu)
        if verbose:
            print(f"ipm {it:3d} rp={rp:.2e} rd={rd:.2e} gap={gap:.2e} tau={tau:.2e} kap={kap:.2e} mu={mu:.2e}")
        err = max(rp, rd, gap)
        if err <= tol:
            # polish towards a tighter target while progress continues
            if best is None or err < 0.5 * best[0]:
                best = (err, x.copy(), y.copy(), z.copy(), s.copy(), tau)
                stall = 0
            else:
                stall += 1
            if err <= 1e-2 * tol or stall >= 2:
                status = "optimal"
                break
        elif best is not None:
            status = "optimal"
            break
        hz = -(be @ y + h @ z)
        if hz > 0:
            cert = _ninf(Ae.T @ y + G.T @ z) / hz
            if cert < tol and tau < 1e-6 * max(1, kap):
                status = "infeasible"
                break
        cx = -(cvec @ x)
        if cx > 0:
            cert = max(_ninf(Ae @ x), _ninf(G @ x + s)) / cx
            if cert < tol and tau < 1e-6 * max(1, kap):
                status = "unbounded"
                break

        try:
            try:
                x, y, z, s, tau, kap = newton_step(x, y, z, s, tau, kap, rx, ry, rz, rt, mu)
            except _Inaccurate:
                # switch to the augmented factorization for the rest of the solve
                mode["sparse"] = True
                x, y, z, s, tau, kap = newton_step(x, y, z, s, tau, kap, rx, ry, rz, rt, mu)
        except (np.linalg.LinAlgError, ValueError, FloatingPointError, ZeroDivisionError,
                RuntimeError, _Inaccurate):
            status = "numerical_error"
            break
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(s)) and np.all(np.isfinite(z))
                and np.isfinite(tau)):
            status = "numerical_error"
            break
    if status in ("infeasible",):
        xu = D * x
        yu = np.concatenate([y, z]) * E / cs
        su_full = np.concatenate([np.zeros(nz), s]) / E
        scale = max(_ninf(yu), 1e-300)
        rep = _make_report(P, status, xu * 0, su_full * 0, yu / scale, it, t0, "ipm", tol,
                           {"D": D, "E": E, "c_scale": cs})
        rep.infeasibility = float(-(P.b @ yu) / scale)
        return rep
    if status == "unbounded":
        xu = D * x
        scale = max(_ninf(xu), 1e-300)
        rep = _make_report(P, status, xu / scale, np.zeros(P.n_rows), np.zeros(P.n_rows),
                           it, t0, "ipm", tol, {"D": D, "E": E, "c_scale": cs})
        rep.infeasibility = float(-(P.c @ xu) / scale)
        return rep
    if best is not None and status in ("numerical_error", "max_iterations"):
        status = "optimal"
    if status == "optimal" and best is not None:
        # the last iterate may have degraded while polishing
        _, x, y, z, s, tau = best
    xu = D * x / tau
    su_full = np.concatenate([np.zeros(nz), s]) / tau / E
    yu = np.concatenate([y, z]) * E / cs / tau
    return _make_report(P, status, xu, su_full, yu, it, t0, "ipm", tol,
                        {"D": D, "E": E, "c_scale": cs})


def _cone_min_eig(cones: _Cones, v):
    """Smallest 'eigenvalue' of ``v`` in the Jordan algebra of the cone."""
    vals = [np.inf]
    if cones.l:
        vals.append(float(np.min(v[:cones.l])))
    off = cones.l
    for d in cones.q:
        vals.append(float(v[off] - np.linalg.norm(v[off + 1:off + d])))
        off += d
    return min(vals)


# ---------------------------------------------------------------------------
# external adapter

def _clarabel(P: ConicProgram, tol: float, max_iter: int, verbose: bool = False) -> SolveReport:
    import clarabel

    t0 = time.perf_counter()
    cones = []
    if P.n_zero:
        cones.append(clarabel.ZeroConeT(P.n_zero))
    if P.n_nonneg:
        cones.append(clarabel.NonnegativeConeT(P.n_nonneg))
    for d in P.soc:
        cones.append(clarabel.SecondOrderConeT(d))
    n = P.n_vars
    # tighter internal tolerance first, the requested one if that stalls
    for t in (tol * 1e-2, tol):
        st = clarabel.DefaultSettings()
        st.verbose = verbose
        st.tol_gap_abs = st.tol_gap_rel = st.tol_feas = t
        st.max_iter = min(max_iter, 500)
        solver = clarabel.DefaultSolver(sp.csc_matrix((n, n)), P.c, sp.csc_matrix(P.A), P.b,
                                        cones, st)
        sol = solver.solve()
        status = {"Solved": "optimal", "PrimalInfeasible": "infeasible",
                  "DualInfeasible": "unbounded"}.get(str(sol.status), "numerical_error")
        if status != "numerical_error":
            break
    x, s, y = np.array(sol.x), np.array(sol.s), np.array(sol.z)
    return _make_report(P, status, x, s, y, sol.iterations, t0, "clarabel", tol)


BACKENDS = ("ipm", "admm", "clarabel")


def solve(program: ConicProgram, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
          backend: str = "ipm", warm_start: dict | None = None,
          verbose: bool = False) -> SolveReport:
    """Solve a conic program; see :class:`SolveReport` for the outcome."""
    if not tol > 0:
        raise ValueError("tolerance must be positive")
    if backend == "admm":
        return _admm(program, tol, max_iter, warm_start, verbose=verbose)
    if backend == "ipm":
        with np.errstate(all="ignore"):
            return _ipm(program, tol, min(max_iter, 200), verbose=verbose)
    if backend == "clarabel":
        return _clarabel(program, tol, max_iter, verbose=verbose)
    raise ValueError(f"unknown backend {backend!r}; choose from {BACKENDS}")


# ---------------------------------------------------------------------------
# verification

@dataclass
class Verification:
    """A-posteriori check of every spec term at a solution."""

    max_violation: dict
    findings: list
    tol: float

    @property
    def passed(self) -> bool:
        return not self.findings

    def to_dict(self) -> dict:
        return {"tol": self.tol, "passed": self.passed,
                "max_violation": self.max_violation, "findings": self.findings}


def verify_solution(program: ConicProgram | None, report: SolveReport,
                    dense: SpecSet | None = None, tol: float = 1e-5) -> Verification:
    """Re-evaluate constraints at ``report.theta``.

    ``dense`` should hold the same spec families rebuilt on denser grids and
    horizons; when omitted only the program rows are checked.
    """
    findings = []
    viol: dict[str, float] = {}
    theta = report.theta
    if program is not None and report.status == "optimal":
        s = program.b - program.A @ report.x
        for name, v in _slacks_fast(program, s).items():
            worst = max(-v, 0.0)
            viol[f"program:{name}"] = worst
            if worst > tol:
                findings.append({"term": name, "where": "program", "violation": worst})
    if dense is not None:
        for k, con in enumerate(dense.constraints):
            name = con.name or f"constraint{k}"
            v = float(np.max(con.violation(theta), initial=0.0))
            key = f"dense:{name}"
            viol[key] = max(viol.get(key, 0.0), v)
            if v > tol:
                findings.append({"term": name, "family": con.family, "channel": con.channel,
                                 "where": "dense", "violation": v})
    return Verification(viol, findings, tol)


# ---------------------------------------------------------------------------
# dump / load

def dump_program(program: ConicProgram, path=None) -> str:
    """Serialize to JSON: ``c``, ``A`` (row-major), ``b``, cone sizes and row blocks."""
    doc = {
        "format": "ccsynth-conic-1",
        "form": "minimize c^T x s.t. A x + s = b, s in K",
        "cones": {"zero": program.n_zero, "nonneg": program.n_nonneg, "soc": list(program.soc)},
        "n_theta": program.n_theta,
        "variables": [list(v) for v in program.variables],
        "blocks": [b.__dict__ for b in program.blocks],
        "c": program.c.tolist(),
        "A": program.A.tolist(),
        "b": program.b.tolist(),
    }
    text = json.dumps(doc)
    if path is not None:
        with open(path, "w") as f:
            f.write(text)
    return text


def load_program(text: str) -> ConicProgram:
    d = json.loads(text)
    k = d["cones"]
    return ConicProgram(np.array(d["c"], float), np.array(d["A"], float).reshape(len(d["b"]), -1),
                        np.array(d["b"], float), k["zero"], k["nonneg"], tuple(k["soc"]),
                        d["n_theta"], tuple(tuple(v) for v in d["variables"]),
                        tuple(RowBlock(**b) for b in d["blocks"]))


def regression_set() -> dict[str, tuple[ConicProgram, dict]]:
    """Bundled programs with independently computed reference optima."""
    root = Path(__file__).parent / "regression"
    index = json.loads((root / "index.json").read_text())
    return {name: (load_program((root / e["file"]).read_text()), e)
            for name, e in sorted(index.items())}
