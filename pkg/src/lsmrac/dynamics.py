"""LTI blocks, reference signals, and the fixed-step integrator.

These are the reference-path building blocks: plain numpy, one derivative
function per block, suitable for co-integration by ``rk4_step``. The
production integrator in ``_kernel`` inlines the same math.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteState


@dataclass
class StateSpace:
    """An LTI block dx/dt = A x + B u, y = C x with its current state."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.B = np.atleast_2d(np.asarray(self.B, dtype=float))
        self.C = np.atleast_2d(np.asarray(self.C, dtype=float))
        self.x = np.asarray(self.x, dtype=float).ravel()
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise ValueError("A must be square")
        if self.B.shape[0] != n or self.C.shape[1] != n or self.x.shape != (n,):
            raise ValueError("inconsistent state-space dimensions")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]


@dataclass
class RefModel:
    """Decoupled first-order reference model dym/dt = Am ym + Bm r.

    Am is diagonal with entries -a_i < 0; Bm is a positive diagonal gain.
    """

    Am: np.ndarray
    Bm: np.ndarray
    ym: np.ndarray

    def __post_init__(self):
        self.Am = np.atleast_2d(np.asarray(self.Am, dtype=float))
        self.Bm = np.atleast_2d(np.asarray(self.Bm, dtype=float))
        self.ym = np.asarray(self.ym, dtype=float).ravel()
        m = self.Am.shape[0]
        if np.any(self.Am - np.diag(np.diag(self.Am))) or np.any(np.diag(self.Am) >= 0):
            raise ValueError("Am must be diagonal with negative entries")
        if self.Bm.shape != (m, m) or self.ym.shape != (m,):
            raise ValueError("inconsistent reference-model dimensions")

    @property
    def m(self) -> int:
        return self.Am.shape[0]


@dataclass(frozen=True)
class SignalTerm:
    """One additive term of a reference channel."""

    kind: str  # 'const' | 'sine' | 'square'
    amplitude: float
    frequency: float = 0.0  # rad/s
    phase: float = 0.0

    def __post_init__(self):
        if self.kind not in ("const", "sine", "square"):
            raise ValueError(f"unknown signal term kind '{self.kind}'")
        for v in (self.amplitude, self.frequency, self.phase):
            if not np.isfinite(v):
                raise ValueError("signal term coefficients must be finite")


@dataclass(frozen=True)
class SignalSpec:
    """Per-channel lists of additive terms describing r(t)."""

    channels: tuple

    def __post_init__(self):
        if len(self.channels) == 0:
            raise ValueError("signal spec needs at least one channel")
        object.__setattr__(self, "channels",
                           tuple(tuple(ch) for ch in self.channels))

    @property
    def m(self) -> int:
        return len(self.channels)

    def amplitude_bound(self) -> np.ndarray:
        """Per-channel sum of |amplitudes|; eval_signal never exceeds it."""
        return np.array([sum(abs(t.amplitude) for t in ch)
                         for ch in self.channels])


def eval_signal(spec: SignalSpec, t: float) -> np.ndarray:
    """Evaluate the reference vector at time t.

    Square terms use amplitude * sign(sin(w t)) with sign(0) = 0, so the
    signal is deterministic at switching instants.
    """
    out = np.zeros(spec.m)
    for i, terms in enumerate(spec.channels):
        acc = 0.0
        for term in terms:
            if term.kind == "const":
                acc += term.amplitude
            elif term.kind == "sine":
                acc += term.amplitude * np.sin(term.frequency * t + term.phase)
            else:
                acc += term.amplitude * np.sign(np.sin(term.frequency * t))
        out[i] = acc
    return out


def eval_signal_batch(spec: SignalSpec, t: np.ndarray) -> np.ndarray:
    """Vectorized eval_signal over a time grid; returns shape (len(t), m)."""
    t = np.asarray(t, dtype=float).ravel()
    out = np.zeros((t.size, spec.m))
    for i, terms in enumerate(spec.channels):
        for term in terms:
            if term.kind == "const":
                out[:, i] += term.amplitude
            elif term.kind == "sine":
                out[:, i] += term.amplitude * np.sin(term.frequency * t + term.phase)
            else:
                out[:, i] += term.amplitude * np.sign(np.sin(term.frequency * t))
    return out


@dataclass
class Prefilter:
    """First-order reference shaping filters (s + zero)/(s + pole_i).

    Realized as unit feedthrough plus a residue state:
    dxf_i/dt = -pole_i xf_i + (zero - pole_i) r_i, output r_i + xf_i.
    """

    poles: np.ndarray
    zero: float
    x: np.ndarray = None

    def __post_init__(self):
        self.poles = np.asarray(self.poles, dtype=float).ravel()
        if np.any(self.poles <= 0):
            raise ValueError("prefilter poles must be positive")
        if self.x is None:
            self.x = np.zeros_like(self.poles)
        self.x = np.asarray(self.x, dtype=float).ravel()
        if self.x.shape != self.poles.shape:
            raise ValueError("prefilter state dimension mismatch")

    @property
    def m(self) -> int:
        return self.poles.size


def prefilter_step(pf: Prefilter, r: np.ndarray):
    """Return (state derivative, filtered output) for raw reference r."""
    r = np.asarray(r, dtype=float).ravel()
    if r.shape != pf.poles.shape:
        raise ValueError("prefilter input dimension mismatch")
    dx = -pf.poles * pf.x + (pf.zero - pf.poles) * r
    return dx, r + pf.x


def plant_derivative(p: StateSpace, u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=float).ravel()
    if u.shape != (p.m,):
        raise ValueError(f"input length {u.shape} does not match plant ({p.m})")
    return p.A @ p.x + p.B @ u


def plant_output(p: StateSpace) -> np.ndarray:
    return p.C @ p.x


def high_freq_gain(p: StateSpace) -> np.ndarray:
    """The instantaneous input-output gain C @ B. The caller is responsible
    for checking nonsingularity (uniform relative degree one)."""
    return p.C @ p.B


def refmodel_derivative(rm: RefModel, r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=float).ravel()
    if r.shape != (rm.m,):
        raise ValueError("reference dimension mismatch")
    return rm.Am @ rm.ym + rm.Bm @ r


def rk4_step(field, t: float, state: np.ndarray, h: float) -> np.ndarray:
    """One classical 4th-order Runge-Kutta step of d(state)/dt = field(t, state)."""
    if h <= 0.0:
        raise ValueError("step size must be positive")
    state = np.asarray(state, dtype=float)
    k1 = np.asarray(field(t, state))
    k2 = np.asarray(field(t + 0.5 * h, state + 0.5 * h * k1))
    k3 = np.asarray(field(t + 0.5 * h, state + 0.5 * h * k2))
    k4 = np.asarray(field(t + h, state + h * k3))
    out = state + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise NonFiniteState(f"integration blew up at t = {t:.6g}")
    return out
