"""Youla parameterization for stable plants with a delayed-impulse basis.

For a stable plant every stabilizing controller corresponds to a stable ``Q``
and the closed loop is affine in it::

    H = P11 + P12 Q P21

With ``Q = sum_i theta_i z^-i`` each closed-loop channel is an affine function
of ``theta`` in both the time and the frequency domain.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numba
import numpy as np
from numpy.typing import ArrayLike, NDArray

from .lti import (
    FrequencyGrid,
    ImpulseResponse,
    LTIError,
    StateSpace,
    frequency_response,
    impulse_response,
    is_stable,
)
from .plant import GeneralizedPlant

__all__ = [
    "HorizonError",
    "QBasis",
    "ChannelTensor",
    "ResponseTensors",
    "make_tensors",
    "assemble_H",
    "fir",
    "realize_controller",
    "InternalModelController",
    "ControllerRuntime",
    "controller_step",
    "parse_channel",
]

DEFAULT_N_BASIS = 64
DEFAULT_HORIZON = 250
DEFAULT_TAIL_TOL = 1e-5


class HorizonError(LTIError):
    """The response horizon is too short for the requested tail tolerance."""


@dataclass(frozen=True)
class QBasis:
    """Delayed unit impulses ``Q_i = z^-i`` for ``i = 0..n-1``."""

    n: int = DEFAULT_N_BASIS
    Ts: float = 0.008

    def __post_init__(self) -> None:
        if self.n < 1:
            raise LTIError("basis needs at least one element")

    def frequency(self, grid: FrequencyGrid) -> NDArray[np.complex128]:
        """``(K, n)`` matrix of ``exp(-j w Ts i)``."""
        return np.exp(-1j * np.outer(grid.omega * self.Ts, np.arange(self.n)))


def parse_channel(channel) -> tuple[str, str]:
    """Normalize a channel key to ``(output, input)``.

    Accepts ``(output, input)`` tuples or ``"input->output"`` strings.
    """
    if isinstance(channel, str):
        if "->" not in channel:
            raise KeyError(f"channel {channel!r} must look like 'input->output'")
        i, o = (s.strip() for s in channel.split("->", 1))
        return o, i
    o, i = channel
    return str(o), str(i)


def fir(theta: ArrayLike, Ts: float) -> StateSpace:
    """Shift-register realization of ``sum_i theta_i z^-i``."""
    th = np.asarray(theta, dtype=float).ravel()
    n = th.size
    if n == 1:
        return StateSpace.static([[th[0]]], Ts)
    A = np.eye(n - 1, n - 1, -1)
    B = np.zeros((n - 1, 1))
    B[0, 0] = 1.0
    return StateSpace(A, B, th[1:].reshape(1, -1), [[th[0]]], Ts)


@dataclass(frozen=True)
class ChannelTensor:
    """Affine maps for one closed-loop channel ``input -> output``.

    ``g`` is the impulse response of ``P12 P21`` (the response to ``Q_0``);
    the response to ``Q_i`` is ``g`` delayed by ``i`` samples.
    """

    output: str
    input: str
    offset: NDArray[np.float64]  # P11 impulse response, (N,)
    g: NDArray[np.float64]  # P12*P21 impulse response, (N,)
    n: int
    _p11: StateSpace = field(repr=False)
    _p12: StateSpace = field(repr=False)
    _p21: StateSpace = field(repr=False)

    @cached_property
    def matrix(self) -> NDArray[np.float64]:
        """``(N, n)`` time tensor; column ``i`` is ``g`` shifted by ``i`` samples."""
        N = self.g.size
        M = np.zeros((N, self.n))
        for i in range(min(self.n, N)):
            M[i:, i] = self.g[:N - i]
        M.setflags(write=False)
        return M

    @property
    def N(self) -> int:
        return self.g.size

    def time(self, theta: ArrayLike) -> NDArray[np.float64]:
        th = np.asarray(theta, dtype=float)
        # full convolution truncated to the horizon
        return self.offset + np.convolve(self.g, th)[:self.N]

    def frequency_maps(self, grid: FrequencyGrid) -> tuple[NDArray, NDArray]:
        """``(offset (K,), matrix (K, n))`` at the grid points."""
        t1 = frequency_response(self._p11, grid)[:, 0, 0]
        g = (frequency_response(self._p12, grid)[:, 0, 0]
             * frequency_response(self._p21, grid)[:, 0, 0])
        E = np.exp(-1j * np.outer(grid.omega * grid.Ts, np.arange(self.n)))
        return t1, g[:, None] * E

    def frequency(self, theta: ArrayLike, grid: FrequencyGrid) -> NDArray[np.complex128]:
        t1, M = self.frequency_maps(grid)
        return t1 + M @ np.asarray(theta, dtype=float)

    def dc_maps(self) -> tuple[float, NDArray[np.float64]]:
        """Exact steady-state gain as ``offset + row @ theta``."""
        grid = FrequencyGrid(np.array([0.0]), self.offset_Ts)
        t1, M = self.frequency_maps(grid)
        return float(t1[0].real), M[0].real.copy()

    @property
    def offset_Ts(self) -> float:
        return self._p11.Ts


@dataclass
class ResponseTensors:
    """Affine response maps for every exogenous channel of a plant."""

    plant: GeneralizedPlant
    basis: QBasis
    N: int
    grid: FrequencyGrid
    channels: dict[tuple[str, str], ChannelTensor]
    tail: float = 0.0
    _fcache: dict = field(default_factory=dict, repr=False)

    @property
    def n(self) -> int:
        return self.basis.n

    @property
    def Ts(self) -> float:
        return self.plant.Ts

    def __getitem__(self, channel) -> ChannelTensor:
        key = parse_channel(channel)
        try:
            return self.channels[key]
        except KeyError:
            names = [f"{i}->{o}" for o, i in self.channels]
            raise KeyError(f"unknown channel {key[1]}->{key[0]}; available: {names}") from None

    def time(self, channel) -> tuple[NDArray, NDArray]:
        ch = self[channel]
        return ch.offset, ch.matrix

    def freq(self, channel, grid: FrequencyGrid | None = None) -> tuple[NDArray, NDArray]:
        grid = self.grid if grid is None else grid
        ch = self[channel]
        if grid is self.grid:
            key = (ch.output, ch.input)
            if key not in self._fcache:
                self._fcache[key] = ch.frequency_maps(grid)
            return self._fcache[key]
        return ch.frequency_maps(grid)


def make_tensors(plant: GeneralizedPlant, basis: QBasis | int = DEFAULT_N_BASIS,
                 N: int = DEFAULT_HORIZON, grid: FrequencyGrid | None = None,
                 tail_tol: float = DEFAULT_TAIL_TOL) -> ResponseTensors:
    """Precompute the affine maps ``theta -> H`` on every exogenous channel."""
    if isinstance(basis, int):
        basis = QBasis(basis, plant.Ts)
    if abs(basis.Ts - plant.Ts) > 1e-15 * plant.Ts:
        raise LTIError("basis and plant sample periods differ")
    if N < basis.n:
        raise HorizonError(f"horizon N={N} shorter than basis size n={basis.n}")
    ok, rho = is_stable(plant.sys)
    if not ok:
        raise LTIError(f"plant must be stable for the Youla parameterization (rho={rho:.6g})")
    grid = FrequencyGrid.log(plant.Ts) if grid is None else grid

    P11, P12, P21, _ = plant.blocks()
    h11 = impulse_response(P11, N).h
    # extra samples reveal how much of the delayed responses is cut off
    ext = N + 1
    h12 = impulse_response(P12, ext).h[:, :, 0]
    h21 = impulse_response(P21, ext).h[:, 0, :]
    zs, ws = plant.exogenous_outputs, plant.exogenous_inputs
    channels = {}
    worst = 0.0
    for o, zo in enumerate(zs):
        for i, wi in enumerate(ws):
            g = np.convolve(h12[:, o], h21[:, i])[:ext]
            peak = np.max(np.abs(g))
            if peak > 0:
                # the last basis element sees the response up to N - n + 1
                tail = np.max(np.abs(g[N - basis.n + 1:])) / peak
                worst = max(worst, tail)
            ch = ChannelTensor(zo, wi, h11[:, o, i].copy(), g[:N].copy(), basis.n,
                               P11.select([o], [i]), P12.select([o]), P21.select(None, [i]))
            channels[(zo, wi)] = ch
    if worst > tail_tol:
        raise HorizonError(f"response tail {worst:.3g} exceeds tolerance {tail_tol:.3g}; "
                           f"increase N (now {N}) or reduce n (now {basis.n})")
    return ResponseTensors(plant, basis, N, grid, channels, worst)


def assemble_H(tensors: ResponseTensors, theta: ArrayLike, channel,
               grid: FrequencyGrid | None = None,
               domain: str = "time") -> ImpulseResponse | NDArray[np.complex128]:
    """Evaluate the closed-loop channel at ``theta``.

    ``domain="time"`` returns an :class:`ImpulseResponse` over the horizon,
    ``domain="freq"`` the complex response on ``grid`` (default: tensor grid).
    """
    th = np.asarray(theta, dtype=float).ravel()
    if th.size != tensors.n:
        raise ValueError(f"theta has {th.size} entries, basis has {tensors.n}")
    ch = tensors[channel]
    if domain == "time":
        return ImpulseResponse(ch.time(th), tensors.Ts)
    if domain == "freq":
        t1, M = tensors.freq(channel, grid)
        return t1 + M @ th
    raise ValueError(f"unknown domain {domain!r}")


# ---------------------------------------------------------------------------
# controller realization

@dataclass(frozen=True)
class InternalModelController:
    """Controller ``u = Q (y - P22 u)`` kept in its structured form."""

    theta: NDArray[np.float64]
    P22: StateSpace

    def __post_init__(self) -> None:
        th = np.asarray(self.theta, dtype=float).ravel()
        if not np.all(np.isfinite(th)):
            raise LTIError("theta must be finite")
        if self.P22.n_inputs != 1 or self.P22.n_outputs != 1:
            raise LTIError("P22 must be SISO")
        th.setflags(write=False)
        object.__setattr__(self, "theta", th)

    @property
    def Ts(self) -> float:
        return self.P22.Ts

    def to_ss(self) -> StateSpace:
        """Wire ``e = y - P22 u``, ``u = Q e`` into one realization ``y -> u``.

        A static part in ``P22`` is allowed as long as ``1 + theta_0 D22 != 0``.
        """
        Q, P = fir(self.theta, self.Ts), self.P22
        d_loop = float(Q.D[0, 0] * P.D[0, 0])
        if abs(1 + d_loop) < 1e-12:
            raise LTIError("internal-model loop is ill-posed")
        g = 1.0 / (1.0 + d_loop)
        dq = float(Q.D[0, 0])
        # u = g (Cq xq - dq Cp xp + dq y),  e = y - Cp xp - Dp u
        Ux = g * np.hstack([Q.C, -dq * P.C])
        Uy = g * dq
        Ex = np.hstack([np.zeros_like(Q.C), -P.C]) - P.D @ Ux
        Ey = 1.0 - float(P.D[0, 0]) * Uy
        nq, n_p = Q.n_states, P.n_states
        A = np.zeros((nq + n_p, nq + n_p))
        A[:nq, :nq] = Q.A
        A[nq:, nq:] = P.A
        A[:nq] += Q.B @ Ex
        A[nq:] += P.B @ Ux
        B = np.vstack([Q.B * Ey, P.B * Uy])
        return StateSpace(A, B, Ux, [[Uy]], self.Ts)

    def to_dict(self) -> dict:
        return {"theta": self.theta.tolist(), "P22": self.P22.to_dict()}

    @classmethod
    def from_dict(cls, d) -> "InternalModelController":
        return cls(np.asarray(d["theta"], dtype=float), StateSpace.from_dict(d["P22"]))


def realize_controller(basis: QBasis | None, theta: ArrayLike, P22: StateSpace) -> StateSpace:
    """State-space controller ``y -> u`` from the internal-model loop.

    The loop ``e = y - P22 u``, ``u = Q e`` is wired directly; ``P22`` is never
    inverted.
    """
    th = np.asarray(theta, dtype=float).ravel()
    if basis is not None and th.size != basis.n:
        raise ValueError(f"theta has {th.size} entries, basis has {basis.n}")
    ok, rho = is_stable(P22)
    if not ok:
        raise LTIError(f"P22 must be stable (rho={rho:.6g})")
    return InternalModelController(th, P22).to_ss()


# ---------------------------------------------------------------------------
# runtime

@numba.njit(cache=True)
def _dense_run(A, B, C, D, x, u_prev, ys, us, faults):
    n = A.shape[0]
    tmp = np.empty(n)
    for k in range(ys.shape[0]):
        y = ys[k]
        if not np.isfinite(y):
            us[k] = u_prev[0]
            faults[k] = True
            continue
        u = D[0, 0] * y
        for i in range(n):
            u += C[0, i] * x[i]
        for i in range(n):
            s = B[i, 0] * y
            for j in range(n):
                s += A[i, j] * x[j]
            tmp[i] = s
        for i in range(n):
            x[i] = tmp[i]
        us[k] = u
        u_prev[0] = u
        faults[k] = False


@numba.njit(cache=True)
def _imc_run(theta, A, B, C, D, buf, pos, xp, u_prev, ys, us, faults):
    # buf is a ring buffer of past e values, buf[pos] is the most recent
    n = theta.shape[0]
    m = A.shape[0]
    tmp = np.empty(m)
    for k in range(ys.shape[0]):
        y = ys[k]
        if not np.isfinite(y):
            us[k] = u_prev[0]
            faults[k] = True
            continue
        # P22 output from its state (D22 handled through the loop gain)
        p = 0.0
        for i in range(m):
            p += C[0, i] * xp[i]
        acc = 0.0
        j = pos[0]
        for i in range(1, n):
            acc += theta[i] * buf[j]
            j -= 1
            if j < 0:
                j += n
        # e = y - p - D u,  u = theta0 e + acc
        d = D[0, 0]
        e = (y - p - d * acc) / (1.0 + d * theta[0])
        u = theta[0] * e + acc
        pos[0] += 1
        if pos[0] >= n:
            pos[0] = 0
        buf[pos[0]] = e
        for i in range(m):
            s = B[i, 0] * u
            for q in range(m):
                s += A[i, q] * xp[q]
            tmp[i] = s
        for i in range(m):
            xp[i] = tmp[i]
        us[k] = u
        u_prev[0] = u
        faults[k] = False


class ControllerRuntime:
    """Stateful per-sample execution of a SISO controller.

    A non-finite measurement raises the ``fault`` flag and holds the previous
    output; the internal state is left untouched.
    """

    def __init__(self, controller: StateSpace | InternalModelController):
        if isinstance(controller, InternalModelController):
            self._imc = controller
            self._ss = None
            self.Ts = controller.Ts
        elif isinstance(controller, StateSpace):
            if controller.n_inputs != 1 or controller.n_outputs != 1:
                raise LTIError("runtime supports SISO controllers")
            self._imc = None
            self._ss = controller
            self.Ts = controller.Ts
        else:
            raise TypeError("controller must be a StateSpace or InternalModelController")
        self.reset()

    def reset(self) -> None:
        self.fault = False
        self._u_prev = np.zeros(1)
        if self._imc is not None:
            n = self._imc.theta.size
            self._buf = np.zeros(n)
            self._pos = np.zeros(1, dtype=np.int64)
            self._x = np.zeros(self._imc.P22.n_states)
            P = self._imc.P22
            self._mats = (self._imc.theta, np.ascontiguousarray(P.A), np.ascontiguousarray(P.B),
                          np.ascontiguousarray(P.C), np.ascontiguousarray(P.D))
        else:
            s = self._ss
            self._x = np.zeros(s.n_states)
            self._mats = tuple(np.ascontiguousarray(m) for m in (s.A, s.B, s.C, s.D))

    def run(self, ys: ArrayLike) -> NDArray[np.float64]:
        """Process a block of measurements, continuing from the current state."""
        ys = np.ascontiguousarray(np.asarray(ys, dtype=float).ravel())
        us = np.empty_like(ys)
        faults = np.zeros(ys.size, dtype=np.bool_)
        if self._imc is not None:
            th, A, B, C, D = self._mats
            _imc_run(th, A, B, C, D, self._buf, self._pos, self._x, self._u_prev, ys, us, faults)
        else:
            A, B, C, D = self._mats
            _dense_run(A, B, C, D, self._x, self._u_prev, ys, us, faults)
        if ys.size:
            self.fault = bool(faults[-1])
        self.faults = faults
        return us

    def step(self, y: float) -> float:
        return float(self.run(np.array([y]))[0])


def controller_step(runtime: ControllerRuntime, y: float) -> tuple[float, bool]:
    """One controller update; returns ``(u, fault)``."""
    u = runtime.step(y)
    return u, runtime.fault
