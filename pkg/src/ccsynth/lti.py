"""Discrete-time LTI machinery: realizations, responses, interconnection.

All systems are sampled with period ``Ts`` (seconds) and follow the convention

    x[n+1] = A x[n] + B u[n]
    y[n]   = C x[n] + D u[n]
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import signal

__all__ = [
    "LTIError",
    "WellPosednessError",
    "SingularityError",
    "StateSpace",
    "TransferFunction",
    "FrequencyGrid",
    "ImpulseResponse",
    "Block",
    "make_first_order_delayed",
    "delay",
    "gain",
    "summation",
    "c2d",
    "impulse_response",
    "step_response",
    "frequency_response",
    "interconnect",
    "series",
    "parallel",
    "is_stable",
    "lft",
    "closed_loop",
    "dumps",
    "loads",
    "save",
    "load",
]

DEFAULT_STABILITY_MARGIN = 1e-9


class LTIError(ValueError):
    """Invalid parameters or inconsistent dimensions."""


class WellPosednessError(LTIError):
    """Algebraic loop without a unique solution."""


class SingularityError(LTIError):
    """Evaluation point coincides with a pole."""


def _mat(a: ArrayLike, shape: tuple[int, int] | None = None) -> NDArray[np.float64]:
    m = np.asarray(a, dtype=np.float64)
    if m.ndim == 0:
        m = m.reshape(1, 1)
    elif m.ndim == 1:
        m = m.reshape(1, -1) if m.size else m.reshape(0, 0)
    if shape is not None and m.size == 0:
        m = np.zeros(shape)
    m = np.array(m, dtype=np.float64)
    m.setflags(write=False)
    return m


@dataclass(frozen=True)
class StateSpace:
    """Discrete-time state-space realization ``(A, B, C, D, Ts)``."""

    A: NDArray[np.float64]
    B: NDArray[np.float64]
    C: NDArray[np.float64]
    D: NDArray[np.float64]
    Ts: float

    def __post_init__(self) -> None:
        D = _mat(self.D)
        A = np.asarray(self.A, dtype=np.float64)
        nx = 0 if A.size == 0 else (A.shape[0] if A.ndim == 2 else 1)
        A = _mat(self.A, (nx, nx))
        B = _mat(self.B, (nx, D.shape[1]))
        C = _mat(self.C, (D.shape[0], nx))
        if A.shape != (nx, nx):
            raise LTIError(f"A must be square, got {A.shape}")
        if B.shape != (nx, D.shape[1]):
            raise LTIError(f"B has shape {B.shape}, expected {(nx, D.shape[1])}")
        if C.shape != (D.shape[0], nx):
            raise LTIError(f"C has shape {C.shape}, expected {(D.shape[0], nx)}")
        if not (np.isfinite(self.Ts) and self.Ts > 0):
            raise LTIError(f"sample period must be positive, got {self.Ts}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "D", D)
        object.__setattr__(self, "Ts", float(self.Ts))

    @classmethod
    def static(cls, D: ArrayLike, Ts: float) -> "StateSpace":
        D = _mat(D)
        return cls(np.zeros((0, 0)), np.zeros((0, D.shape[1])),
                   np.zeros((D.shape[0], 0)), D, Ts)

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.D.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.D.shape[0]

    def poles(self) -> NDArray[np.complex128]:
        if self.n_states == 0:
            return np.zeros(0, dtype=complex)
        return np.linalg.eigvals(self.A)

    def dc_gain(self) -> NDArray[np.float64]:
        I = np.eye(self.n_states)
        return self.C @ np.linalg.solve(I - self.A, self.B) + self.D

    def select(self, outputs: Sequence[int] | slice | None = None,
               inputs: Sequence[int] | slice | None = None) -> "StateSpace":
        """Sub-system restricted to the given output rows / input columns."""
        o = slice(None) if outputs is None else outputs
        i = slice(None) if inputs is None else inputs
        return StateSpace(self.A, self.B[:, i], self.C[o, :], self.D[o][:, i], self.Ts)

    def similarity(self, T: ArrayLike) -> "StateSpace":
        T = np.asarray(T, dtype=float)
        Ti = np.linalg.inv(T)
        return StateSpace(Ti @ self.A @ T, Ti @ self.B, self.C @ T, self.D, self.Ts)

    def __neg__(self) -> "StateSpace":
        return StateSpace(self.A, self.B, -self.C, -self.D, self.Ts)

    def __mul__(self, other: "StateSpace | float") -> "StateSpace":
        if isinstance(other, StateSpace):
            return series(other, self)
        return StateSpace(self.A, self.B, self.C * other, self.D * other, self.Ts)

    __rmul__ = __mul__

    def __add__(self, other: "StateSpace") -> "StateSpace":
        return parallel(self, other)

    def __sub__(self, other: "StateSpace") -> "StateSpace":
        return parallel(self, -other)

    def to_dict(self) -> dict:
        return {"A": self.A.tolist(), "B": self.B.tolist(), "C": self.C.tolist(),
                "D": self.D.tolist(), "Ts": self.Ts}

    @classmethod
    def from_dict(cls, d: Mapping) -> "StateSpace":
        D = np.asarray(d["D"], dtype=float).reshape(len(d["D"]), -1)
        nx = len(d["A"])
        return cls(np.asarray(d["A"], dtype=float).reshape(nx, nx),
                   np.asarray(d["B"], dtype=float).reshape(nx, D.shape[1]),
                   np.asarray(d["C"], dtype=float).reshape(D.shape[0], nx),
                   D, d["Ts"])


@dataclass(frozen=True)
class TransferFunction:
    """SISO transfer function with coefficients in powers of ``z^-1``.

    ``H(z) = (num[0] + num[1] z^-1 + ...) / (1 + den[1] z^-1 + ...)``
    """

    num: NDArray[np.float64]
    den: NDArray[np.float64]
    Ts: float

    def __post_init__(self) -> None:
        num = np.atleast_1d(np.asarray(self.num, dtype=float))
        den = np.atleast_1d(np.asarray(self.den, dtype=float))
        if den.size == 0 or not np.any(den):
            raise LTIError("denominator is identically zero")
        if den[0] == 0:
            raise LTIError("leading denominator coefficient must be nonzero")
        num, den = num / den[0], den / den[0]
        # trailing zeros carry no information in z^-1 form
        num = np.trim_zeros(num, "b") if np.any(num) else np.zeros(1)
        den = np.trim_zeros(den, "b")
        if num.size > den.size and np.any(num[den.size:]):
            # in z^-1 form every FIR is proper; pad den so both have equal length
            den = np.concatenate([den, np.zeros(num.size - den.size)])
        if not (np.isfinite(self.Ts) and self.Ts > 0):
            raise LTIError(f"sample period must be positive, got {self.Ts}")
        num.setflags(write=False)
        den.setflags(write=False)
        object.__setattr__(self, "num", num)
        object.__setattr__(self, "den", den)
        object.__setattr__(self, "Ts", float(self.Ts))

    @classmethod
    def zero(cls, Ts: float) -> "TransferFunction":
        return cls([0.0], [1.0], Ts)

    def is_zero(self) -> bool:
        return not np.any(self.num)

    def __call__(self, z: ArrayLike) -> NDArray[np.complex128]:
        zi = 1.0 / np.asarray(z, dtype=complex)
        num = np.polyval(self.num[::-1], zi)
        den = np.polyval(self.den[::-1], zi)
        if np.any(np.abs(den) <= 1e-14 * np.maximum(1.0, np.abs(num))):
            raise SingularityError("evaluation point is a pole of the transfer function")
        return num / den

    def to_ss(self) -> StateSpace:
        """Controllable canonical realization (not necessarily minimal)."""
        m = max(self.num.size, self.den.size)
        b = np.zeros(m)
        a = np.zeros(m)
        b[:self.num.size] = self.num
        a[:self.den.size] = self.den
        n = m - 1
        d0 = b[0]
        if n == 0:
            return StateSpace.static([[d0]], self.Ts)
        A = np.zeros((n, n))
        A[0, :] = -a[1:]
        A[1:, :-1] = np.eye(n - 1)
        B = np.zeros((n, 1))
        B[0, 0] = 1.0
        C = (b[1:] - d0 * a[1:]).reshape(1, n)
        return StateSpace(A, B, C, [[d0]], self.Ts)

    def to_dict(self) -> dict:
        return {"num": self.num.tolist(), "den": self.den.tolist(), "Ts": self.Ts}

    @classmethod
    def from_dict(cls, d: Mapping) -> "TransferFunction":
        return cls(d["num"], d["den"], d["Ts"])


@dataclass(frozen=True)
class FrequencyGrid:
    """Angular frequencies (rad/s) in ``[0, pi/Ts]``, strictly increasing."""

    omega: NDArray[np.float64]
    Ts: float

    def __post_init__(self) -> None:
        w = np.asarray(self.omega, dtype=float).ravel()
        if w.size == 0:
            raise LTIError("frequency grid is empty")
        if np.any(np.diff(w) <= 0):
            raise LTIError("frequency grid must be strictly increasing")
        ny = np.pi / self.Ts
        if w[0] < 0 or w[-1] > ny * (1 + 1e-12):
            raise LTIError(f"grid must lie in [0, {ny:.6g}] rad/s")
        w = np.minimum(w, ny)
        w.setflags(write=False)
        object.__setattr__(self, "omega", w)

    @property
    def nyquist(self) -> float:
        return np.pi / self.Ts

    @property
    def z(self) -> NDArray[np.complex128]:
        return np.exp(1j * self.omega * self.Ts)

    def __len__(self) -> int:
        return self.omega.size

    @classmethod
    def log(cls, Ts: float, n: int = 400, f_min: float = 0.05,
            f_max: float | None = None, include_zero: bool = True) -> "FrequencyGrid":
        """Logarithmic grid between ``f_min`` and ``f_max`` (Hz), plus DC."""
        f_max = 0.5 / Ts if f_max is None else f_max
        w = 2 * np.pi * np.geomspace(f_min, f_max, n)
        if include_zero:
            w = np.concatenate([[0.0], w])
        return cls(np.unique(np.minimum(w, np.pi / Ts)), Ts)

    @classmethod
    def linear(cls, Ts: float, n: int = 1000) -> "FrequencyGrid":
        return cls(np.linspace(0.0, np.pi / Ts, n), Ts)

    def merged(self, other: "FrequencyGrid") -> "FrequencyGrid":
        return FrequencyGrid(np.unique(np.concatenate([self.omega, other.omega])), self.Ts)

    def refined(self, factor: int) -> "FrequencyGrid":
        """Insert ``factor - 1`` equally spaced points inside each interval."""
        w = self.omega
        if w.size < 2 or factor <= 1:
            return self
        t = np.arange(factor) / factor
        inner = (w[:-1, None] + np.diff(w)[:, None] * t[None, :]).ravel()
        return FrequencyGrid(np.concatenate([inner, w[-1:]]), self.Ts)

    def band(self, lo: float, hi: float) -> NDArray[np.bool_]:
        return (self.omega >= lo) & (self.omega <= hi)


@dataclass(frozen=True)
class ImpulseResponse:
    """Samples ``h[n]`` with shape ``(N, n_outputs, n_inputs)``."""

    h: NDArray[np.float64]
    Ts: float

    def __post_init__(self) -> None:
        h = np.asarray(self.h, dtype=float)
        if h.ndim == 1:
            h = h[:, None, None]
        if h.shape[0] < 1:
            raise LTIError("impulse response needs at least one sample")
        object.__setattr__(self, "h", h)

    def __len__(self) -> int:
        return self.h.shape[0]

    @property
    def siso(self) -> NDArray[np.float64]:
        return self.h[:, 0, 0]

    def step(self) -> NDArray[np.float64]:
        return np.cumsum(self.h, axis=0)

    @property
    def t(self) -> NDArray[np.float64]:
        return np.arange(len(self)) * self.Ts


@dataclass(frozen=True)
class Block:
    """A system with named input and output signals, for :func:`interconnect`."""

    sys: StateSpace
    inputs: tuple[str, ...]
    outputs: tuple[str, ...]
    name: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "inputs", tuple(self.inputs))
        object.__setattr__(self, "outputs", tuple(self.outputs))
        if len(self.inputs) != self.sys.n_inputs or len(self.outputs) != self.sys.n_outputs:
            raise LTIError(f"block {self.name!r}: signal names do not match dimensions")


# ---------------------------------------------------------------------------
# constructors

def delay(k: int, Ts: float) -> StateSpace:
    """Pure delay of ``k`` samples as a shift register."""
    if k < 0:
        raise LTIError("delay must be non-negative")
    if k == 0:
        return StateSpace.static([[1.0]], Ts)
    A = np.eye(k, k, -1)
    B = np.zeros((k, 1))
    B[0, 0] = 1.0
    C = np.zeros((1, k))
    C[0, -1] = 1.0
    return StateSpace(A, B, C, [[0.0]], Ts)


def gain(k: ArrayLike, Ts: float) -> StateSpace:
    return StateSpace.static(k, Ts)


def summation(output: str, terms: Sequence[tuple[float, str]], Ts: float) -> Block:
    """Summing junction ``output = sum(sign * signal)``."""
    signs = [[float(s) for s, _ in terms]]
    return Block(StateSpace.static(signs, Ts), tuple(n for _, n in terms), (output,),
                 name=f"sum:{output}")


def c2d(num: ArrayLike, den: ArrayLike, Ts: float, method: str = "zoh") -> StateSpace:
    """Discretize a continuous SISO transfer function given in powers of ``s``."""
    A, B, C, D = signal.tf2ss(num, den)
    Ad, Bd, Cd, Dd, _ = signal.cont2discrete((A, B, C, D), Ts, method=method)
    return StateSpace(Ad, Bd, Cd, Dd, Ts)


def make_first_order_delayed(tau: float, delay_s: float, Ts: float, dc_gain: float = 1.0,
                             delay_mode: str | int = "round") -> StateSpace:
    """ZOH model of ``dc_gain * exp(-delay s) / (tau s + 1)``.

    ``delay_mode`` selects how the transport delay is sampled:

    * ``"round"``: round ``delay/Ts`` half-up to an integer number of samples
      (36 ms at 8 ms becomes 5 samples).
    * ``"exact"``: exact ZOH discretization of the fractional delay
      (modified z-transform), adding one extra numerator tap.
    * an ``int``: use exactly that many delay samples.
    """
    if not tau > 0:
        raise LTIError(f"time constant must be positive, got {tau}")
    if not Ts > 0:
        raise LTIError(f"sample period must be positive, got {Ts}")
    if delay_s < 0:
        raise LTIError(f"delay must be non-negative, got {delay_s}")
    a = np.exp(-Ts / tau)
    if delay_mode == "exact":
        d = int(np.floor(delay_s / Ts + 1e-12))
        frac = delay_s - d * Ts
        if frac <= 1e-12 * Ts:
            lag = StateSpace([[a]], [[1.0]], [[dc_gain * (1 - a)]], [[0.0]], Ts)
        else:
            # x[n+1] = a x[n] + b1 u[n] + b2 u[n-1]
            b1 = 1.0 - np.exp(-(Ts - frac) / tau)
            b2 = np.exp(-(Ts - frac) / tau) * (1.0 - np.exp(-frac / tau))
            lag = StateSpace([[a, b2], [0.0, 0.0]], [[b1], [1.0]],
                             [[dc_gain, 0.0]], [[0.0]], Ts)
    else:
        if isinstance(delay_mode, (int, np.integer)) and not isinstance(delay_mode, bool):
            d = int(delay_mode)
        elif delay_mode == "round":
            d = int(np.floor(delay_s / Ts + 0.5 + 1e-9))
        else:
            raise LTIError(f"unknown delay_mode {delay_mode!r}")
        lag = StateSpace([[a]], [[1.0]], [[dc_gain * (1 - a)]], [[0.0]], Ts)
    if d == 0:
        return lag
    return series(delay(d, Ts), lag)


# ---------------------------------------------------------------------------
# responses

def impulse_response(sys: StateSpace | TransferFunction, N: int) -> ImpulseResponse:
    """``h[0] = D``, ``h[n] = C A^(n-1) B``."""
    if N < 1:
        raise LTIError("N must be at least 1")
    if isinstance(sys, TransferFunction):
        x = np.zeros(N)
        x[0] = 1.0
        num = np.zeros(max(sys.num.size, sys.den.size))
        num[:sys.num.size] = sys.num
        return ImpulseResponse(signal.lfilter(num, sys.den, x), sys.Ts)
    h = np.empty((N, sys.n_outputs, sys.n_inputs))
    h[0] = sys.D
    M = sys.B
    for n in range(1, N):
        h[n] = sys.C @ M
        M = sys.A @ M
    return ImpulseResponse(h, sys.Ts)


def step_response(sys: StateSpace, N: int) -> NDArray[np.float64]:
    return impulse_response(sys, N).step()


def frequency_response(sys: StateSpace | TransferFunction,
                       grid: FrequencyGrid | ArrayLike) -> NDArray[np.complex128]:
    """``C (zI - A)^-1 B + D`` at ``z = exp(j w Ts)``.

    Returns shape ``(K, n_outputs, n_inputs)`` for state-space systems and
    ``(K,)`` for transfer functions.
    """
    if not isinstance(grid, FrequencyGrid):
        grid = FrequencyGrid(np.atleast_1d(np.asarray(grid, dtype=float)), sys.Ts)
    if abs(grid.Ts - sys.Ts) > 1e-15 * sys.Ts:
        raise LTIError("grid and system sample periods differ")
    z = grid.z
    if isinstance(sys, TransferFunction):
        return sys(z)
    out = np.empty((z.size, sys.n_outputs, sys.n_inputs), dtype=complex)
    if sys.n_states == 0:
        out[:] = sys.D
        return out
    # diagonalize once when well conditioned, otherwise solve per point
    lam, V = np.linalg.eig(sys.A)
    if np.linalg.cond(V) < 1e8:
        CV = sys.C @ V
        ViB = np.linalg.solve(V, sys.B)
        d = z[:, None] - lam[None, :]
        if np.any(np.abs(d) < 1e-13):
            raise SingularityError("frequency point coincides with a pole")
        out[:] = np.einsum("ok,zk,ki->zoi", CV, 1.0 / d, ViB) + sys.D
        return out
    I = np.eye(sys.n_states)
    for k, zk in enumerate(z):
        M = zk * I - sys.A
        if np.linalg.cond(M) > 1e14:
            raise SingularityError("frequency point coincides with a pole")
        out[k] = sys.C @ np.linalg.solve(M, sys.B) + sys.D
    return out


# ---------------------------------------------------------------------------
# interconnection

def interconnect(blocks: Sequence[Block], inputs: Sequence[str],
                 outputs: Sequence[str]) -> StateSpace:
    """Connect named blocks into one system.

    Every block input is wired to the signal of the same name, produced either by
    another block's output or by one of the external ``inputs``. Algebraic loops
    are accepted only when their loop feed-through is zero.
    """
    if not blocks:
        raise LTIError("no blocks to connect")
    Ts = blocks[0].sys.Ts
    for b in blocks:
        if abs(b.sys.Ts - Ts) > 1e-15 * Ts:
            raise LTIError("blocks have different sample periods")

    producers: dict[str, int] = {}
    out_names: list[str] = []
    for b in blocks:
        for o in b.outputs:
            if o in producers or o in inputs:
                raise LTIError(f"signal {o!r} is produced more than once")
            producers[o] = len(out_names)
            out_names.append(o)
    ext = {name: i for i, name in enumerate(inputs)}
    if len(ext) != len(inputs):
        raise LTIError("duplicate external input names")

    A = _blockdiag([b.sys.A for b in blocks])
    B = _blockdiag([b.sys.B for b in blocks])
    C = _blockdiag([b.sys.C for b in blocks])
    D = _blockdiag([b.sys.D for b in blocks])
    nU, nY, nW = B.shape[1], C.shape[0], len(inputs)

    # block inputs U = My Y + Mw W
    My = np.zeros((nU, nY))
    Mw = np.zeros((nU, nW))
    row = 0
    for b in blocks:
        for s in b.inputs:
            if s in producers:
                My[row, producers[s]] = 1.0
            elif s in ext:
                Mw[row, ext[s]] = 1.0
            else:
                raise LTIError(f"block {b.name!r} input {s!r} is not connected")
            row += 1

    # Y = C x + D (My Y + Mw W)
    L = D @ My
    P = np.eye(nY)
    for _ in range(nY):
        P = P @ L
        if not np.any(P):
            break
    else:
        if np.any(np.abs(P) > 0):
            raise WellPosednessError("algebraic loop with nonzero feed-through")
    F = np.linalg.inv(np.eye(nY) - L)
    Cy = F @ C
    Dy = F @ D @ Mw
    Acl = A + B @ My @ Cy
    Bcl = B @ (My @ Dy + Mw)

    sel_C, sel_D = [], []
    for o in outputs:
        if o in producers:
            sel_C.append(Cy[producers[o]])
            sel_D.append(Dy[producers[o]])
        elif o in ext:
            sel_C.append(np.zeros(A.shape[0]))
            e = np.zeros(nW)
            e[ext[o]] = 1.0
            sel_D.append(e)
        else:
            raise LTIError(f"requested output {o!r} is not a signal")
    nx = A.shape[0]
    return StateSpace(Acl, Bcl.reshape(nx, nW),
                      np.array(sel_C).reshape(len(outputs), nx),
                      np.array(sel_D).reshape(len(outputs), nW), Ts)


def _blockdiag(mats: Iterable[NDArray]) -> NDArray[np.float64]:
    mats = list(mats)
    r = sum(m.shape[0] for m in mats)
    c = sum(m.shape[1] for m in mats)
    out = np.zeros((r, c))
    i = j = 0
    for m in mats:
        out[i:i + m.shape[0], j:j + m.shape[1]] = m
        i += m.shape[0]
        j += m.shape[1]
    return out


def series(first: StateSpace, second: StateSpace) -> StateSpace:
    """``second * first``: the output of ``first`` drives ``second``."""
    if first.n_outputs != second.n_inputs:
        raise LTIError("series dimension mismatch")
    A = np.block([[first.A, np.zeros((first.n_states, second.n_states))],
                  [second.B @ first.C, second.A]])
    B = np.vstack([first.B, second.B @ first.D])
    C = np.hstack([second.D @ first.C, second.C])
    D = second.D @ first.D
    return StateSpace(A, B, C, D, first.Ts)


def parallel(a: StateSpace, b: StateSpace) -> StateSpace:
    if a.D.shape != b.D.shape:
        raise LTIError("parallel dimension mismatch")
    A = _blockdiag([a.A, b.A])
    return StateSpace(A, np.vstack([a.B, b.B]), np.hstack([a.C, b.C]), a.D + b.D, a.Ts)


def is_stable(sys: StateSpace, margin: float = DEFAULT_STABILITY_MARGIN) -> tuple[bool, float]:
    """Return ``(stable, spectral radius)``; stable iff radius < 1 - margin."""
    if sys.n_states == 0:
        return True, 0.0
    rho = float(np.max(np.abs(np.linalg.eigvals(sys.A))))
    return rho < 1.0 - margin, rho


def lft(P: StateSpace, K: StateSpace, n_u: int = 1, n_y: int = 1) -> StateSpace:
    """Lower LFT ``P11 + P12 K (I - P22 K)^-1 P21`` (positive feedback ``u = K y``).

    ``P`` has inputs ``[w, u]`` and outputs ``[z, y]`` with ``u``/``y`` last.
    """
    if K.n_inputs != n_y or K.n_outputs != n_u:
        raise LTIError(f"controller must map {n_y} measurements to {n_u} controls")
    nw = P.n_inputs - n_u
    nz = P.n_outputs - n_y
    if nw < 0 or nz < 0:
        raise LTIError("plant has fewer channels than the controller needs")
    A, Ts = P.A, P.Ts
    B1, B2 = P.B[:, :nw], P.B[:, nw:]
    C1, C2 = P.C[:nz], P.C[nz:]
    D11, D12 = P.D[:nz, :nw], P.D[:nz, nw:]
    D21, D22 = P.D[nz:, :nw], P.D[nz:, nw:]
    Ak, Bk, Ck, Dk = K.A, K.B, K.C, K.D
    M = np.eye(n_y) - D22 @ Dk
    if np.linalg.cond(M) > 1e12:
        raise WellPosednessError("I - D22 Dk is singular; feedback loop is ill-posed")
    Mi = np.linalg.inv(M)
    # y = Mi (C2 x + D22 Ck xk + D21 w);  u = Ck xk + Dk y
    Yx, Yk, Yw = Mi @ C2, Mi @ D22 @ Ck, Mi @ D21
    Ux, Uk, Uw = Dk @ Yx, Ck + Dk @ Yk, Dk @ Yw
    Acl = np.block([[A + B2 @ Ux, B2 @ Uk],
                    [Bk @ Yx, Ak + Bk @ Yk]])
    Bcl = np.vstack([B1 + B2 @ Uw, Bk @ Yw])
    Ccl = np.hstack([C1 + D12 @ Ux, D12 @ Uk])
    Dcl = D11 + D12 @ Uw
    return StateSpace(Acl, Bcl, Ccl, Dcl, Ts)


def closed_loop(plant, controller: StateSpace) -> StateSpace:
    """Closed-loop map ``w -> z`` of a generalized plant under ``u = K y``.

    ``plant`` is either a :class:`StateSpace` with one control and one
    measurement (last input/output) or any object with ``sys``, ``n_u`` and
    ``n_y`` attributes.
    """
    if isinstance(plant, StateSpace):
        return lft(plant, controller)
    return lft(plant.sys, controller, plant.n_u, plant.n_y)


# ---------------------------------------------------------------------------
# serialization

def dumps(obj: StateSpace | TransferFunction, **extra) -> str:
    d = obj.to_dict()
    d.update(extra)
    return json.dumps(d, indent=1)


def loads(text: str) -> StateSpace | TransferFunction:
    d = json.loads(text)
    if "A" in d:
        return StateSpace.from_dict(d)
    if "num" in d:
        return TransferFunction.from_dict(d)
    raise LTIError("document holds neither a state-space nor a transfer function")


def save(path, obj: StateSpace | TransferFunction, **extra) -> None:
    with open(path, "w") as f:
        f.write(dumps(obj, **extra))
        f.write("\n")


def load(path) -> StateSpace | TransferFunction:
    with open(path) as f:
        return loads(f.read())
