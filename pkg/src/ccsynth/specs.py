"""Performance and robustness specifications as convex terms in theta.

Every term is built from an :class:`Affine` map ``theta -> M theta + v`` and is
either a norm objective, a linear (in)equality, a second-order cone or an
l1-ball constraint.  Nothing else can be expressed, so every spec set is
convex by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .lti import FrequencyGrid
from .youla import ResponseTensors, parse_channel

__all__ = [
    "SpecError",
    "Affine",
    "NormObjective",
    "LinearConstraint",
    "SocConstraint",
    "L1Constraint",
    "SpecSet",
    "HalfPlane",
    "DEFAULT_HP1",
    "DEFAULT_HP2",
    "DEFAULT_OMEGA_CORNER",
    "tracking_objective",
    "step_shape_constraints",
    "frequency_bound",
    "passivity_constraint",
    "nyquist_robust_stability",
    "pointwise_half_planes",
    "fit_half_planes",
    "gain_bounds",
]


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class Affine:
    """``M @ theta + v`` with ``M`` of shape ``(m, n)``."""

    M: NDArray[np.float64]
    v: NDArray[np.float64]

    def __post_init__(self) -> None:
        M = np.atleast_2d(np.asarray(self.M, dtype=float))
        v = np.asarray(self.v, dtype=float).ravel()
        if M.shape[0] != v.size:
            raise SpecError(f"affine map rows {M.shape[0]} != offset length {v.size}")
        if not (np.all(np.isfinite(M)) and np.all(np.isfinite(v))):
            raise SpecError("affine map has non-finite entries")
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "v", v)

    @property
    def rows(self) -> int:
        return self.M.shape[0]

    @property
    def n(self) -> int:
        return self.M.shape[1]

    def __call__(self, theta: ArrayLike) -> NDArray[np.float64]:
        return self.M @ np.asarray(theta, dtype=float) + self.v

    def __neg__(self) -> "Affine":
        return Affine(-self.M, -self.v)

    def __getitem__(self, idx) -> "Affine":
        return Affine(self.M[idx], self.v[idx])

    @staticmethod
    def vstack(parts: Sequence["Affine"]) -> "Affine":
        return Affine(np.vstack([p.M for p in parts]), np.concatenate([p.v for p in parts]))


@dataclass(frozen=True)
class _Term:
    name: str = ""
    channel: str = ""
    family: str = ""


@dataclass(frozen=True)
class NormObjective(_Term):
    """``weight * ||expr||_p`` with ``p`` in ``{"2", "inf", "1"}``."""

    expr: Affine | None = None
    norm: str = "2"
    weight: float = 1.0

    def __post_init__(self) -> None:
        if self.norm not in ("2", "inf", "1"):
            raise SpecError(f"unsupported norm {self.norm!r}")
        if not (np.isfinite(self.weight) and self.weight >= 0):
            raise SpecError("objective weight must be finite and non-negative")

    def value(self, theta: ArrayLike) -> float:
        r = self.expr(theta)
        p = {"2": 2, "inf": np.inf, "1": 1}[self.norm]
        return self.weight * float(np.linalg.norm(r, p))


@dataclass(frozen=True)
class LinearConstraint(_Term):
    """``expr >= 0`` (``kind=">="``) or ``expr == 0`` (``kind="=="``) elementwise."""

    expr: Affine | None = None
    kind: str = ">="

    def __post_init__(self) -> None:
        if self.kind not in (">=", "=="):
            raise SpecError(f"unsupported relation {self.kind!r}")

    def violation(self, theta: ArrayLike) -> NDArray[np.float64]:
        r = self.expr(theta)
        return np.abs(r) if self.kind == "==" else np.maximum(-r, 0.0)


@dataclass(frozen=True)
class SocConstraint(_Term):
    """``||X_j theta + x_j||_2 <= t_j`` for each cone ``j``.

    ``t`` is an affine map with one row per cone and ``X`` stacks the cone
    bodies, ``dim`` rows each.
    """

    t: Affine | None = None
    X: Affine | None = None
    dim: int = 1

    def __post_init__(self) -> None:
        if self.X.rows != self.t.rows * self.dim:
            raise SpecError("cone body rows must equal number of cones times dim")

    @property
    def count(self) -> int:
        return self.t.rows

    def violation(self, theta: ArrayLike) -> NDArray[np.float64]:
        t = self.t(theta)
        X = self.X(theta).reshape(self.count, self.dim)
        return np.maximum(np.linalg.norm(X, axis=1) - t, 0.0)


@dataclass(frozen=True)
class L1Constraint(_Term):
    """``sum |expr| <= bound``."""

    expr: Affine | None = None
    bound: float = 1.0

    def violation(self, theta: ArrayLike) -> NDArray[np.float64]:
        return np.array([max(float(np.sum(np.abs(self.expr(theta)))) - self.bound, 0.0)])


Constraint = LinearConstraint | SocConstraint | L1Constraint


@dataclass
class SpecSet:
    """Objective terms (summed) and constraints on ``theta`` of size ``n``."""

    n: int
    objectives: list[NormObjective] = field(default_factory=list)
    constraints: list = field(default_factory=list)

    def add(self, *items) -> "SpecSet":
        for item in items:
            if isinstance(item, (list, tuple)):
                self.add(*item)
                continue
            if isinstance(item, NormObjective):
                self._check(item.expr)
                self.objectives.append(item)
            elif isinstance(item, (LinearConstraint, L1Constraint)):
                self._check(item.expr)
                self.constraints.append(item)
            elif isinstance(item, SocConstraint):
                self._check(item.t)
                self._check(item.X)
                self.constraints.append(item)
            elif item is None:
                continue
            else:
                raise SpecError(f"not a convex spec term: {type(item).__name__}")
        return self

    def _check(self, e: Affine) -> None:
        if e.n != self.n:
            raise SpecError(f"term has {e.n} columns, expected {self.n}")

    def objective(self, theta: ArrayLike) -> float:
        return float(sum(o.value(theta) for o in self.objectives))

    def __len__(self) -> int:
        return len(self.objectives) + len(self.constraints)


# ---------------------------------------------------------------------------
# Nyquist half-planes

@dataclass(frozen=True)
class HalfPlane:
    """``{h : Re(conj(a) h) >= c}`` with unit normal ``a``."""

    a: complex
    c: float

    def __post_init__(self) -> None:
        a = complex(self.a)
        if not np.isclose(abs(a), 1.0, atol=1e-12):
            raise SpecError(f"half-plane normal must have unit modulus, got |a|={abs(a)}")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "c", float(self.c))
        if self.c > 0:
            raise SpecError(f"half-plane must contain the origin (c={self.c} > 0); "
                            "otherwise delta=0 is not covered")
        if not (np.conj(a) * -1).real < self.c:
            raise SpecError("half-plane must exclude the critical point -1")

    def contains(self, h: ArrayLike, tol: float = 0.0) -> NDArray[np.bool_]:
        return (np.conj(self.a) * np.asarray(h)).real >= self.c - tol

    def margin(self, h: ArrayLike) -> NDArray[np.float64]:
        return (np.conj(self.a) * np.asarray(h)).real - self.c


DEFAULT_HP1 = HalfPlane(1.0, -0.9)
DEFAULT_HP2 = HalfPlane(np.exp(-1j * np.pi / 4), -0.9 * np.cos(np.pi / 4))
DEFAULT_OMEGA_CORNER = 2 * np.pi * 5.0


def _grid(tensors: ResponseTensors, grid: FrequencyGrid | None) -> FrequencyGrid:
    return tensors.grid if grid is None else grid


def _label(channel) -> str:
    o, i = parse_channel(channel)
    return f"{i}->{o}"


def tracking_objective(tensors: ResponseTensors, channel, reference: ArrayLike,
                       desired: ArrayLike, norm: str = "2", weight: float = 1.0,
                       name: str = "tracking") -> NormObjective:
    """``weight * ||y_d - r * h||`` where ``h`` is the channel impulse response."""
    r = np.asarray(reference, dtype=float).ravel()
    yd = np.asarray(desired, dtype=float).ravel()
    N = tensors.N
    if r.size > N or yd.size > N:
        raise SpecError(f"reference/desired longer than horizon N={N}")
    if r.size != yd.size:
        raise SpecError("reference and desired response lengths differ")
    L = yd.size
    off, M = tensors.time(channel)
    # lower-triangular Toeplitz convolution with r
    R = np.zeros((L, L))
    for k in range(L):
        R[k:, k] = r[:L - k]
    expr = Affine(-(R @ M[:L]), yd - R @ off[:L])
    return NormObjective(name=name, channel=_label(channel), family="time-domain",
                         expr=expr, norm=norm, weight=weight)


def step_shape_constraints(tensors: ResponseTensors, channel, *,
                           steady_state_value: float | None = None,
                           no_overshoot: bool | float = False,
                           rise_time: tuple[float, float] | None = None,
                           steady_state_method: str = "sum") -> list[LinearConstraint]:
    """Constraints on the step response ``s[k] = sum_{i<=k} h[i]``.

    ``steady_state_method="sum"`` equates the horizon sum of the impulse
    response; ``"dc"`` uses the exact infinite-horizon gain ``H(1)``.
    ``no_overshoot`` may be ``True`` (bound by ``steady_state_value``) or a
    numeric ceiling. ``rise_time=(t, fraction)`` demands ``s(t) >= fraction*v``.
    """
    off, M = tensors.time(channel)
    S_off, S_M = np.cumsum(off), np.cumsum(M, axis=0)
    lab = _label(channel)
    out = []
    if steady_state_value is not None:
        if steady_state_method == "sum":
            e = Affine(S_M[-1:], S_off[-1:] - steady_state_value)
        elif steady_state_method == "dc":
            d0, row = tensors[channel].dc_maps()
            e = Affine(row[None, :], np.array([d0 - steady_state_value]))
        else:
            raise SpecError(f"unknown steady-state method {steady_state_method!r}")
        out.append(LinearConstraint(name="steady_state", channel=lab, family="time-domain",
                                    expr=e, kind="=="))
    if no_overshoot is not False and no_overshoot is not None:
        ceiling = steady_state_value if no_overshoot is True else float(no_overshoot)
        if ceiling is None:
            raise SpecError("no_overshoot=True needs steady_state_value")
        out.append(LinearConstraint(name="no_overshoot", channel=lab, family="time-domain",
                                    expr=Affine(-S_M, ceiling - S_off)))
    if rise_time is not None:
        t, frac = rise_time
        if steady_state_value is None:
            raise SpecError("rise_time needs steady_state_value")
        k = int(round(t / tensors.Ts))
        if not 0 <= k < tensors.N:
            raise SpecError("rise time outside the horizon")
        out.append(LinearConstraint(name="rise_time", channel=lab, family="time-domain",
                                    expr=Affine(S_M[k:k + 1], S_off[k:k + 1] - frac * steady_state_value)))
    return out


def _sample_bound(bound, omega: NDArray) -> NDArray[np.float64]:
    if callable(bound):
        return np.asarray([bound(w) for w in omega], dtype=float)
    b = np.broadcast_to(np.asarray(bound, dtype=float), omega.shape)
    return np.array(b)


def frequency_bound(tensors: ResponseTensors, channel, band: tuple[float, float],
                    bound, grid: FrequencyGrid | None = None,
                    name: str = "frequency_bound") -> SocConstraint | None:
    """``|H(e^{jwTs})| <= bound(w)`` at every grid point in ``band`` (rad/s).

    ``bound`` is a scalar, an array over the full grid or a callable of ``w``.
    Points with an infinite bound are dropped; ``None`` is returned when no
    constraint remains.
    """
    g = _grid(tensors, grid)
    lo, hi = band
    if not (0 <= lo <= hi <= g.nyquist * (1 + 1e-12)):
        raise SpecError(f"band {band} outside [0, {g.nyquist:.6g}]")
    mask = g.band(lo, hi)
    if not np.any(mask):
        raise SpecError(f"no grid points in band {band}")
    if callable(bound) or np.ndim(bound) == 0:
        w = _sample_bound(bound, g.omega[mask])
    else:
        w = np.asarray(bound, dtype=float)
        if w.shape != g.omega.shape:
            raise SpecError("bound array must match the grid")
        w = w[mask]
    if np.any(w < 0) or np.any(np.isnan(w)):
        raise SpecError("frequency bound must be non-negative")
    keep = np.isfinite(w)
    if not np.any(keep):
        return None
    t1, M = tensors.freq(channel, g)
    t1, M, w = t1[mask][keep], M[mask][keep], w[keep]
    k, n = M.shape
    X = np.empty((2 * k, n))
    x = np.empty(2 * k)
    X[0::2], X[1::2] = M.real, M.imag
    x[0::2], x[1::2] = t1.real, t1.imag
    return SocConstraint(name=name, channel=_label(channel), family="frequency",
                         t=Affine(np.zeros((k, n)), w), X=Affine(X, x), dim=2)


def passivity_constraint(tensors: ResponseTensors, channel,
                         grid: FrequencyGrid | None = None,
                         name: str = "passivity") -> LinearConstraint:
    """``Re H(e^{jwTs}) >= 0`` at every grid point."""
    t1, M = tensors.freq(channel, _grid(tensors, grid))
    return LinearConstraint(name=name, channel=_label(channel), family="passivity",
                            expr=Affine(M.real, t1.real))


def pointwise_half_planes(tensors: ResponseTensors, channel, a: ArrayLike, c: ArrayLike,
                          grid: FrequencyGrid | None = None, scale: float = 1.0,
                          mask: ArrayLike | None = None,
                          name: str = "nyquist") -> LinearConstraint:
    """``Re(conj(a_k) * scale * H(w_k)) >= c_k`` at grid point ``k``."""
    g = _grid(tensors, grid)
    a = np.broadcast_to(np.asarray(a, dtype=complex), g.omega.shape)
    c = np.broadcast_to(np.asarray(c, dtype=float), g.omega.shape)
    t1, M = tensors.freq(channel, g)
    sel = np.ones(g.omega.size, bool) if mask is None else np.asarray(mask, bool)
    ca = np.conj(a[sel])[:, None]
    expr = Affine(scale * (ca * M[sel]).real, scale * (np.conj(a[sel]) * t1[sel]).real - c[sel])
    return LinearConstraint(name=name, channel=_label(channel), family="robust-stability",
                            expr=expr)


def nyquist_robust_stability(tensors: ResponseTensors, channel=("z_E", "w_E"),
                             omega_corner: float = DEFAULT_OMEGA_CORNER,
                             hp1: HalfPlane = DEFAULT_HP1, hp2: HalfPlane = DEFAULT_HP2,
                             pieces: Sequence[tuple[tuple[float, float], HalfPlane]] | None = None,
                             grid: FrequencyGrid | None = None, scale: float = 1.0,
                             margin: float = 0.0) -> LinearConstraint:
    """Keep the uncertainty loop ``H_add`` inside half-planes excluding ``-1``.

    By default ``HP1`` applies for ``w <= omega_corner`` and ``HP2`` above it.
    ``pieces`` replaces the pair with an ordered list of ``((w_lo, w_hi), HalfPlane)``.
    ``scale`` multiplies ``H_add`` (useful for continuation in the uncertainty
    size) and ``margin`` tightens every offset.
    """
    g = _grid(tensors, grid)
    if pieces is None:
        if not 0 < omega_corner < g.nyquist:
            raise SpecError("corner frequency must lie strictly inside (0, Nyquist)")
        pieces = [((0.0, omega_corner), hp1), ((omega_corner, g.nyquist), hp2)]
    a = np.zeros(g.omega.size, dtype=complex)
    c = np.zeros(g.omega.size)
    covered = np.zeros(g.omega.size, dtype=bool)
    for (lo, hi), hp in pieces:
        if not isinstance(hp, HalfPlane):
            raise SpecError("pieces must hold HalfPlane instances")
        m = g.band(lo, hi) & ~covered
        a[m], c[m] = hp.a, hp.c + margin
        covered |= m
    if not np.all(covered):
        raise SpecError("half-plane pieces do not cover the whole grid")
    return pointwise_half_planes(tensors, channel, a, c, g, scale)


def fit_half_planes(h: ArrayLike, pivot: float = -0.9, max_angle: float = np.pi - 0.3,
                    margin: float = 0.0) -> tuple[NDArray[np.complex128], NDArray[np.float64]]:
    """One half-plane per frequency point, tailored to a current locus ``h``.

    Each boundary passes through ``pivot`` on the negative real axis and is
    oriented along the bisector of the direction from ``pivot`` to ``h``, so it
    contains ``h`` and the origin and excludes the ray ``(-inf, pivot]``.
    Returns normals ``a`` and offsets ``c`` for :func:`pointwise_half_planes`.
    """
    if not -1 < pivot < 0:
        raise SpecError("pivot must lie strictly between -1 and 0")
    phi = np.clip(np.angle(np.asarray(h) - pivot), -max_angle, max_angle)
    a = np.exp(0.5j * phi)
    c = (np.conj(a) * pivot).real + margin
    if np.any(c > 0):
        raise SpecError("margin too large: half-planes would exclude the origin")
    return a, c


def gain_bounds(tensors: ResponseTensors, channel, kind: str, value: float,
                name: str | None = None) -> SocConstraint | L1Constraint:
    """Bound the horizon ``l2`` norm (``kind="h2"``) or ``l1`` norm of a channel."""
    if not value > 0:
        raise SpecError("gain bound must be positive")
    off, M = tensors.time(channel)
    lab = _label(channel)
    if kind == "h2":
        return SocConstraint(name=name or "h2_bound", channel=lab, family="gain",
                             t=Affine(np.zeros((1, M.shape[1])), [value]),
                             X=Affine(M, off), dim=M.shape[0])
    if kind == "l1":
        return L1Constraint(name=name or "l1_bound", channel=lab, family="gain",
                            expr=Affine(M, off), bound=float(value))
    raise SpecError(f"unknown gain bound kind {kind!r}")
