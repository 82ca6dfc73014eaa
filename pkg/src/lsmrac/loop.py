"""Scenario description, closed-loop assembly, and the run driver.

A scenario is a complete declarative description of one experiment. The
declared reference model may have different pole magnitudes per channel;
when a reference prefilter is configured, the loop tracks the equivalent
cascade (first-order shaping filter into a common-pole internal model),
which reproduces the declared model's trajectory exactly from zero initial
conditions while keeping the adaptation's lag-filter pole equal to the
internal model pole.
"""

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernel
from .controller import (AdaptiveState, FilterBank, XiState, _assert_hurwitz,
                         block_sizes, build_omega, compute_control,
                         filter_derivatives, sign_d_from_minors, theta_dot,
                         xi_derivative)
from .dynamics import (Prefilter, RefModel, SignalSpec, StateSpace,
                       eval_signal, eval_signal_batch, plant_derivative,
                       plant_output, prefilter_step, refmodel_derivative)
from .errors import Diverged, ScenarioError, SingularMinor
from .factorization import leading_minors, ldu_factor

_LAW_CODE = {"ls": _kernel.LAW_LS, "mmrac": _kernel.LAW_MMRAC,
             "gradient": _kernel.LAW_GRADIENT}
_TERM_CODE = {"const": _kernel.TERM_CONST, "sine": _kernel.TERM_SINE,
              "square": _kernel.TERM_SQUARE}


@dataclass
class Scenario:
    """Everything needed to reproduce one closed-loop experiment."""

    label: str
    plant_A: np.ndarray
    plant_B: np.ndarray
    plant_C: np.ndarray
    x0: np.ndarray
    model_a: np.ndarray            # declared model pole magnitudes a_i > 0
    model_bm: np.ndarray           # diagonal entries of the model input gain
    signal: SignalSpec
    law: str = "ls"
    nu: int = 1
    ell0: float = 1.0
    Lambda: np.ndarray = None
    g: np.ndarray = None
    gamma: float = None            # least-squares gain
    Gamma: float = None            # scalar gain for mmrac / gradient blocks
    R0: object = 1.0               # scalar, or list of per-block matrices
    theta0: np.ndarray = None
    minor_signs: np.ndarray = None
    prefilter_a: float = None      # shaping-filter zero; None disables it
    ym0: np.ndarray = None
    sigma_enabled: bool = False
    sigma_max: float = 10.0
    sigma_M0: float = 1.0
    h: float = 1e-4
    T: float = 20.0
    stride: int = 10
    record_information: bool = False
    divergence_limit: float = 1e12

    def __post_init__(self):
        self.plant_A = np.atleast_2d(np.asarray(self.plant_A, dtype=float))
        self.plant_B = np.atleast_2d(np.asarray(self.plant_B, dtype=float))
        self.plant_C = np.atleast_2d(np.asarray(self.plant_C, dtype=float))
        self.x0 = np.asarray(self.x0, dtype=float).ravel()
        self.model_a = np.asarray(self.model_a, dtype=float).ravel()
        self.model_bm = np.asarray(self.model_bm, dtype=float).ravel()
        if self.ym0 is not None:
            self.ym0 = np.asarray(self.ym0, dtype=float).ravel()
        if self.theta0 is not None:
            self.theta0 = np.asarray(self.theta0, dtype=float).ravel()
        if self.minor_signs is not None:
            self.minor_signs = np.asarray(self.minor_signs, dtype=float).ravel()
        if self.Lambda is not None:
            self.Lambda = np.atleast_2d(np.asarray(self.Lambda, dtype=float))
        if self.g is not None:
            self.g = np.asarray(self.g, dtype=float).ravel()

    # -- derived quantities -------------------------------------------------

    @property
    def m(self) -> int:
        return self.plant_C.shape[0]

    @property
    def n_p(self) -> int:
        return self.plant_A.shape[0]

    @property
    def internal_a(self) -> float:
        """Pole of the internal (common-pole) reference model."""
        return float(self.prefilter_a if self.prefilter_a is not None
                     else self.model_a[0])

    def kp(self) -> np.ndarray:
        return self.plant_C @ self.plant_B

    def sign_d(self) -> np.ndarray:
        if self.minor_signs is not None:
            return sign_d_from_minors(self.minor_signs)
        return sign_d_from_minors(np.sign(leading_minors(self.kp())))

    def gain_threshold(self) -> float:
        """Minimum stabilizing least-squares gain, from the diagonal factor
        of the high-frequency gain's triangular factorization."""
        dp = ldu_factor(self.kp()).dp_diag
        return 0.5 * float(np.max(1.0 / np.abs(dp)))

    def n_steps(self) -> int:
        return int(round(self.T / self.h))

    def copy_with(self, **kw) -> "Scenario":
        return replace(self, **kw)

    # -- validation ----------------------------------------------------------

    def validate(self) -> "Scenario":
        m, n = self.m, self.n_p
        if self.plant_A.shape != (n, n) or self.plant_B.shape != (n, m) \
                or self.plant_C.shape != (m, n) or self.x0.shape != (n,):
            raise ScenarioError("inconsistent plant dimensions")
        if self.model_a.shape != (m,) or self.model_bm.shape != (m,):
            raise ScenarioError("inconsistent reference-model dimensions")
        if np.any(self.model_a <= 0):
            raise ScenarioError("model poles a_i must be positive")
        if self.ym0 is not None and self.ym0.shape != (m,):
            raise ScenarioError("ym0 dimension mismatch")
        if self.signal.m != m:
            raise ScenarioError("reference channel count mismatch")
        if self.law not in _LAW_CODE:
            raise ScenarioError(f"unknown law '{self.law}'")
        if self.nu < 1:
            raise ScenarioError("observability index nu must be >= 1")
        if self.ell0 <= 0:
            raise ScenarioError("ell0 must be positive")
        if self.nu > 1:
            k = self.nu - 1
            if self.Lambda is None or self.g is None:
                raise ScenarioError("nu > 1 requires Lambda and g")
            if self.Lambda.shape != (k, k) or self.g.shape != (k,):
                raise ScenarioError("Lambda/g dimensions must match nu - 1")
            try:
                _assert_hurwitz(self.Lambda)
            except ValueError as exc:
                raise ScenarioError(str(exc)) from exc
        if self.law == "ls":
            if self.gamma is None or self.gamma < 0:
                raise ScenarioError("ls law requires a nonnegative gamma")
        else:
            if self.Gamma is None or self.Gamma <= 0:
                raise ScenarioError(f"{self.law} law requires Gamma > 0")

        kp = self.kp()
        if abs(np.linalg.det(kp)) < 1e-12 * max(np.linalg.norm(kp), 1.0):
            raise ScenarioError("plant high-frequency gain C@B is singular")
        if self.minor_signs is None:
            try:
                self.minor_signs = np.sign(leading_minors(kp))
                if np.any(self.minor_signs == 0):
                    raise ScenarioError(
                        "a leading minor of C@B is zero; provide minor_signs")
            except SingularMinor as exc:
                raise ScenarioError(str(exc)) from exc
        elif self.minor_signs.shape != (m,) \
                or not np.all(np.abs(self.minor_signs) == 1.0):
            raise ScenarioError("minor_signs must be m entries of +/-1")

        # lag-filter pole must match the (internal) model pole for the laws
        # whose stability argument requires it
        if self.law in ("ls", "mmrac"):
            if self.prefilter_a is None:
                if np.any(np.abs(self.model_a - self.ell0) > 1e-9):
                    raise ScenarioError(
                        "ls/mmrac require a common model pole equal to ell0; "
                        "declare a prefilter to track a different model")
            elif abs(self.prefilter_a - self.ell0) > 1e-9:
                raise ScenarioError("prefilter zero must equal ell0 for ls/mmrac")
        if self.law == "ls" and self.gamma is not None:
            try:
                thr = self.gain_threshold()
            except SingularMinor:
                thr = None
            if thr is not None and self.gamma <= thr:
                warnings.warn(
                    f"gamma = {self.gamma:g} is at or below the stability "
                    f"threshold {thr:g}; the run may diverge", UserWarning)

        sizes = block_sizes(m, self.nu)
        if self.theta0 is not None and self.theta0.size != int(sizes.sum()):
            raise ScenarioError(
                f"theta0 must have {int(sizes.sum())} entries, got {self.theta0.size}")
        if not np.isscalar(self.R0):
            blocks = list(self.R0)
            if len(blocks) != m:
                raise ScenarioError("R0 must be a scalar or one block per output")
            for nb, blk in zip(sizes, blocks):
                blk = np.asarray(blk, dtype=float)
                if blk.shape != (nb, nb):
                    raise ScenarioError("R0 block shape mismatch")
                if np.linalg.norm(blk - blk.T) > 1e-10 * np.linalg.norm(blk):
                    raise ScenarioError("R0 blocks must be symmetric")
                try:
                    np.linalg.cholesky(0.5 * (blk + blk.T))
                except np.linalg.LinAlgError:
                    raise ScenarioError("R0 blocks must be positive definite")
        elif float(self.R0) <= 0:
            raise ScenarioError("R0 must be positive")
        if self.sigma_enabled and (self.sigma_M0 <= 0 or self.sigma_max < 0):
            raise ScenarioError("sigma modification needs M0 > 0 and sigma_max >= 0")

        if self.h <= 0 or self.T < 0:
            raise ScenarioError("need h > 0 and T >= 0")
        if self.stride < 1:
            raise ScenarioError("record stride must be >= 1")
        if self.n_steps() % self.stride != 0:
            raise ScenarioError("round(T/h) must be a multiple of the stride")
        return self


@dataclass(frozen=True)
class LoopLayout:
    """Offsets of every block inside the flat loop state vector."""

    m: int
    nu: int
    n_p: int
    pf_on: bool
    info_on: bool
    L: int
    base: int
    sizes: tuple
    th_off: tuple
    rp_off: tuple
    n_theta: int
    n_rpk: int
    o_xp: int
    o_ym: int
    o_xf: int
    o_v1: int
    o_v2: int
    o_xi: int
    o_th: int
    o_r: int
    o_j: int
    dim: int


def layout(s: Scenario) -> LoopLayout:
    m, nu, n_p = s.m, s.nu, s.n_p
    pf_on = s.prefilter_a is not None
    info_on = s.record_information
    L = 2 * m * nu + m - 1
    base = 2 * m * nu
    sizes = tuple(int(n) for n in block_sizes(m, nu))
    th_off = (0,) + tuple(np.cumsum(sizes).tolist())
    packs = tuple(n * (n + 1) // 2 for n in sizes)
    rp_off = (0,) + tuple(np.cumsum(packs).tolist())
    n_theta = th_off[-1]
    n_rpk = rp_off[-1]
    nv = m * (nu - 1)
    o_xp = 0
    o_ym = n_p
    o_xf = o_ym + m
    o_v1 = o_xf + (m if pf_on else 0)
    o_v2 = o_v1 + nv
    o_xi = o_v2 + nv
    o_th = o_xi + L
    o_r = o_th + n_theta
    o_j = o_r + n_rpk
    dim = o_j + (n_rpk if info_on else 0)
    return LoopLayout(m=m, nu=nu, n_p=n_p, pf_on=pf_on, info_on=info_on,
                      L=L, base=base, sizes=sizes, th_off=th_off,
                      rp_off=rp_off, n_theta=n_theta, n_rpk=n_rpk,
                      o_xp=o_xp, o_ym=o_ym, o_xf=o_xf, o_v1=o_v1, o_v2=o_v2,
                      o_xi=o_xi, o_th=o_th, o_r=o_r, o_j=o_j, dim=dim)


def pack_upper(M: np.ndarray) -> np.ndarray:
    iu = np.triu_indices(M.shape[0])
    return M[iu]


def unpack_upper(v: np.ndarray, n: int) -> np.ndarray:
    M = np.zeros((n, n))
    iu = np.triu_indices(n)
    M[iu] = v
    M.T[iu] = v
    return M


def initial_state(s: Scenario, lay: LoopLayout = None) -> np.ndarray:
    """Flat initial state. For the constant-gain laws the covariance slots
    hold the (frozen) gain blocks Gamma * I."""
    lay = lay or layout(s)
    x = np.zeros(lay.dim)
    x[lay.o_xp:lay.o_xp + lay.n_p] = s.x0
    if s.ym0 is not None:
        x[lay.o_ym:lay.o_ym + lay.m] = s.ym0
    if s.theta0 is not None:
        x[lay.o_th:lay.o_th + lay.n_theta] = s.theta0
    for b, nb in enumerate(lay.sizes):
        if s.law != "ls":
            blk = float(s.Gamma) * np.eye(nb)
        elif np.isscalar(s.R0):
            blk = float(s.R0) * np.eye(nb)
        else:
            blk = np.asarray(s.R0[b], dtype=float)
        x[lay.o_r + lay.rp_off[b]:lay.o_r + lay.rp_off[b + 1]] = pack_upper(blk)
    return x


def _adaptive_state(s: Scenario, x: np.ndarray, lay: LoopLayout) -> AdaptiveState:
    theta = [x[lay.o_th + lay.th_off[b]:lay.o_th + lay.th_off[b + 1]]
             for b in range(lay.m)]
    R = [unpack_upper(x[lay.o_r + lay.rp_off[b]:lay.o_r + lay.rp_off[b + 1]],
                      lay.sizes[b]) for b in range(lay.m)]
    gamma = s.gamma if s.law == "ls" else 1.0
    return AdaptiveState(theta=theta, R=R, sign_d=s.sign_d(), law=s.law,
                         gamma=float(gamma), sigma_enabled=s.sigma_enabled,
                         sigma_max=s.sigma_max, sigma_M0=s.sigma_M0)


def loop_outputs(s: Scenario, x: np.ndarray, t: float, lay: LoopLayout = None):
    """Algebraic loop quantities at one state: (r, y, e0, u, theta_dots)."""
    lay = lay or layout(s)
    m = lay.m
    r_raw = eval_signal(s.signal, t)
    if lay.pf_on:
        pf = Prefilter(poles=s.model_a, zero=float(s.prefilter_a),
                       x=x[lay.o_xf:lay.o_xf + m])
        _, r = prefilter_step(pf, r_raw)
    else:
        r = r_raw
    plant = StateSpace(s.plant_A, s.plant_B, s.plant_C,
                       x[lay.o_xp:lay.o_xp + lay.n_p])
    y = plant_output(plant)
    e0 = y - x[lay.o_ym:lay.o_ym + m]
    nv = m * (lay.nu - 1)
    omega_vec = np.concatenate((x[lay.o_v1:lay.o_v1 + nv],
                                x[lay.o_v2:lay.o_v2 + nv], y, r))
    xi = XiState(channels=x[lay.o_xi:lay.o_xi + lay.L], ell0=s.ell0,
                 m=m, nu=lay.nu)
    adaptive = _adaptive_state(s, x, lay)
    u, tds = compute_control(adaptive, xi, omega_vec, e0)
    return r, y, e0, u, tds


def loop_derivative(s: Scenario, x: np.ndarray, t: float,
                    lay: LoopLayout = None) -> np.ndarray:
    """Reference-path right-hand side of the coupled closed-loop ODE.

    Built from the module-level operations; the JIT kernel implements the
    same evaluation order on the same flat layout.
    """
    lay = lay or layout(s)
    m = lay.m
    dx = np.zeros(lay.dim)

    r_raw = eval_signal(s.signal, t)
    if lay.pf_on:
        pf = Prefilter(poles=s.model_a, zero=float(s.prefilter_a),
                       x=x[lay.o_xf:lay.o_xf + m])
        dxf, r = prefilter_step(pf, r_raw)
        dx[lay.o_xf:lay.o_xf + m] = dxf
    else:
        r = r_raw

    plant = StateSpace(s.plant_A, s.plant_B, s.plant_C,
                       x[lay.o_xp:lay.o_xp + lay.n_p])
    y = plant_output(plant)
    ym = x[lay.o_ym:lay.o_ym + m]
    e0 = y - ym
    nv = m * (lay.nu - 1)
    v1 = x[lay.o_v1:lay.o_v1 + nv]
    v2 = x[lay.o_v2:lay.o_v2 + nv]
    omega_vec = np.concatenate((v1, v2, y, r))
    xi = XiState(channels=x[lay.o_xi:lay.o_xi + lay.L], ell0=s.ell0,
                 m=m, nu=lay.nu)
    adaptive = _adaptive_state(s, x, lay)

    u, tds = compute_control(adaptive, xi, omega_vec, e0)
    omega = build_omega(omega_vec, u)
    _, rds = theta_dot(adaptive, xi, omega, e0)

    dx[lay.o_xp:lay.o_xp + lay.n_p] = plant_derivative(plant, u)
    a_int = s.internal_a
    rm = RefModel(Am=-a_int * np.eye(m), Bm=np.diag(s.model_bm), ym=ym)
    dx[lay.o_ym:lay.o_ym + m] = refmodel_derivative(rm, r)
    if lay.nu > 1:
        fb = FilterBank(m=m, nu=lay.nu, Lam=s.Lambda, g=s.g,
                        v1=v1.reshape(m, lay.nu - 1),
                        v2=v2.reshape(m, lay.nu - 1))
        dv1, dv2 = filter_derivatives(fb, u, y)
        dx[lay.o_v1:lay.o_v1 + nv] = dv1.ravel()
        dx[lay.o_v2:lay.o_v2 + nv] = dv2.ravel()
    dx[lay.o_xi:lay.o_xi + lay.L] = xi_derivative(xi, omega)
    dx[lay.o_th:lay.o_th + lay.n_theta] = np.concatenate(tds)
    if rds is not None:
        for b, rd in enumerate(rds):
            dx[lay.o_r + lay.rp_off[b]:lay.o_r + lay.rp_off[b + 1]] = \
                pack_upper(rd)
    if lay.info_on:
        for b in range(m):
            xi_b = xi.block(b + 1)
            dx[lay.o_j + lay.rp_off[b]:lay.o_j + lay.rp_off[b + 1]] = \
                pack_upper(np.outer(xi_b, xi_b))
    return dx


@dataclass
class Trace:
    """Uniformly sampled loop signals plus derived diagnostics."""

    scenario: Scenario
    layout: LoopLayout
    t: np.ndarray
    y: np.ndarray
    ym: np.ndarray
    e0: np.ndarray
    r: np.ndarray
    u: np.ndarray
    theta: np.ndarray
    xi: np.ndarray
    R_packed: np.ndarray
    r_min_eig: np.ndarray
    r_max_eig: np.ndarray
    info_packed: np.ndarray = None
    status: str = "ok"

    def __len__(self) -> int:
        return self.t.size

    def R_blocks(self, i: int) -> np.ndarray:
        """Covariance block i (1-based) at every sample, shape (K, N_i, N_i)."""
        return self._unpack(self.R_packed, i)

    def info_blocks(self, i: int) -> np.ndarray:
        if self.info_packed is None:
            raise ValueError("run was recorded without the information integral")
        return self._unpack(self.info_packed, i)

    def _unpack(self, packed: np.ndarray, i: int) -> np.ndarray:
        lay = self.layout
        nb = lay.sizes[i - 1]
        seg = packed[:, lay.rp_off[i - 1]:lay.rp_off[i]]
        out = np.zeros((seg.shape[0], nb, nb))
        iu = np.triu_indices(nb)
        out[:, iu[0], iu[1]] = seg
        out[:, iu[1], iu[0]] = seg
        return out

    def theta_block(self, i: int) -> np.ndarray:
        lay = self.layout
        return self.theta[:, lay.th_off[i - 1]:lay.th_off[i]]

    def xi_block(self, i: int) -> np.ndarray:
        lay = self.layout
        if i == 1:
            return self.xi
        return np.hstack((self.xi[:, :lay.base], self.xi[:, lay.base + i - 1:]))

    def channel_names(self) -> list:
        m = self.layout.m
        names = ["t"]
        for tag in ("y", "ym", "e0", "r", "u"):
            names += [f"{tag}_{i}" for i in range(1, m + 1)]
        names += [f"theta_{j}" for j in range(1, self.layout.n_theta + 1)]
        names += [f"Rmineig_{i}" for i in range(1, m + 1)]
        names += [f"Rmaxeig_{i}" for i in range(1, m + 1)]
        names += [f"xi_{j}" for j in range(1, self.layout.L + 1)]
        return names

    def channel(self, name: str) -> np.ndarray:
        """Look up one scalar channel by CSV-style name."""
        if name == "t":
            return self.t
        group, _, idx = name.rpartition("_")
        arrays = {"y": self.y, "ym": self.ym, "e0": self.e0, "r": self.r,
                  "u": self.u, "theta": self.theta, "xi": self.xi,
                  "Rmineig": self.r_min_eig, "Rmaxeig": self.r_max_eig}
        if group in arrays and idx.isdigit():
            j = int(idx) - 1
            if 0 <= j < arrays[group].shape[1]:
                return arrays[group][:, j]
        raise KeyError(f"unknown trace channel '{name}'")


def _kernel_args(s: Scenario, lay: LoopLayout):
    terms = []
    for i, chan in enumerate(s.signal.channels):
        for term in chan:
            terms.append((i, _TERM_CODE[term.kind], term.amplitude,
                          term.frequency, term.phase))
    if terms:
        t_ch = np.array([q[0] for q in terms], dtype=np.int64)
        t_kind = np.array([q[1] for q in terms], dtype=np.int64)
        t_a = np.array([q[2] for q in terms])
        t_w = np.array([q[3] for q in terms])
        t_p = np.array([q[4] for q in terms])
    else:
        t_ch = np.zeros(0, dtype=np.int64)
        t_kind = np.zeros(0, dtype=np.int64)
        t_a = np.zeros(0)
        t_w = np.zeros(0)
        t_p = np.zeros(0)
    k = s.nu - 1
    Lam = (np.ascontiguousarray(s.Lambda, dtype=float) if k > 0
           else np.zeros((0, 0)))
    gvec = np.ascontiguousarray(s.g, dtype=float) if k > 0 else np.zeros(0)
    am = np.full(lay.m, s.internal_a) if lay.pf_on else s.model_a.astype(float)
    pf_poles = s.model_a.astype(float)
    pf_zero = float(s.prefilter_a) if lay.pf_on else 0.0
    gamma = float(s.gamma) if s.law == "ls" else 1.0
    return dict(
        Ap=np.ascontiguousarray(s.plant_A), Bp=np.ascontiguousarray(s.plant_B),
        Cp=np.ascontiguousarray(s.plant_C), am=am, bm=s.model_bm.astype(float),
        pf_on=np.int64(1 if lay.pf_on else 0), pf_poles=pf_poles,
        pf_zero=pf_zero, term_ch=t_ch, term_kind=t_kind, term_a=t_a,
        term_w=t_w, term_p=t_p, law=np.int64(_LAW_CODE[s.law]),
        ell0=float(s.ell0), gamma=gamma, sign_d=s.sign_d(),
        sigma_on=np.int64(1 if s.sigma_enabled else 0),
        sigma_max=float(s.sigma_max), sigma_m0=float(s.sigma_M0),
        Lam=Lam, g=gvec, info_on=np.int64(1 if lay.info_on else 0),
        m=np.int64(lay.m), nu=np.int64(lay.nu), n_p=np.int64(lay.n_p),
        L=np.int64(lay.L), base=np.int64(lay.base),
        o_xp=np.int64(lay.o_xp), o_ym=np.int64(lay.o_ym),
        o_xf=np.int64(lay.o_xf), o_v1=np.int64(lay.o_v1),
        o_v2=np.int64(lay.o_v2), o_xi=np.int64(lay.o_xi),
        o_th=np.int64(lay.o_th), o_r=np.int64(lay.o_r), o_j=np.int64(lay.o_j),
        th_off=np.array(lay.th_off, dtype=np.int64),
        rp_off=np.array(lay.rp_off, dtype=np.int64))


def _run_python(s: Scenario, lay: LoopLayout):
    """Slow reference integrator for cross-checking the kernel on short runs."""
    from .dynamics import rk4_step
    x = initial_state(s, lay)
    n_steps, stride, h = s.n_steps(), s.stride, s.h
    trec, rec, urec = [], [], []

    def fld(t, state):
        return loop_derivative(s, state, t, lay)

    status, t_fail = 0, 0.0
    for k in range(n_steps):
        t = k * h
        if k % stride == 0:
            trec.append(t)
            rec.append(x.copy())
            urec.append(loop_outputs(s, x, t, lay)[3])
        x = rk4_step(fld, t, x, h)
        if np.max(np.abs(x)) > s.divergence_limit or not np.all(np.isfinite(x)):
            status, t_fail = 1, (k + 1) * h
            break
    if status == 0:
        t_end = n_steps * h
        trec.append(t_end)
        rec.append(x.copy())
        urec.append(loop_outputs(s, x, t_end, lay)[3])
    return (np.array(trec), np.array(rec), np.array(urec), len(trec),
            status, t_fail)


def run(s: Scenario, engine: str = "kernel") -> Trace:
    """Integrate a scenario to completion and return its trace.

    Raises Diverged (with the partial trace attached) when any state leaves
    the configured envelope.
    """
    s.validate()
    lay = layout(s)
    if engine == "python":
        trec, rec, urec, n_fill, status, t_fail = _run_python(s, lay)
    else:
        kw = _kernel_args(s, lay)
        x0 = initial_state(s, lay)
        trec, rec, urec, n_fill, status, t_fail = _kernel.run_kernel(
            x0, float(s.h), np.int64(s.n_steps()), np.int64(s.stride),
            float(s.divergence_limit), **kw)
    trace = _assemble_trace(s, lay, trec[:n_fill], rec[:n_fill], urec[:n_fill],
                            "diverged" if status else "ok")
    if status:
        raise Diverged(t_fail, trace=trace)
    return trace


def _assemble_trace(s, lay, trec, rec, urec, status) -> Trace:
    m = lay.m
    y = rec[:, lay.o_xp:lay.o_xp + lay.n_p] @ s.plant_C.T
    ym = rec[:, lay.o_ym:lay.o_ym + m]
    r = eval_signal_batch(s.signal, trec)
    if lay.pf_on:
        r = r + rec[:, lay.o_xf:lay.o_xf + m]
    theta = rec[:, lay.o_th:lay.o_th + lay.n_theta]
    xi = rec[:, lay.o_xi:lay.o_xi + lay.L]
    R_packed = rec[:, lay.o_r:lay.o_r + lay.n_rpk]
    info = rec[:, lay.o_j:lay.o_j + lay.n_rpk] if lay.info_on else None
    trace = Trace(scenario=s, layout=lay, t=trec, y=y, ym=ym, e0=y - ym, r=r,
                  u=urec, theta=theta, xi=xi, R_packed=R_packed,
                  r_min_eig=np.zeros((trec.size, m)),
                  r_max_eig=np.zeros((trec.size, m)),
                  info_packed=info, status=status)
    for b in range(m):
        eigs = np.linalg.eigvalsh(trace.R_blocks(b + 1))
        trace.r_min_eig[:, b] = eigs[:, 0]
        trace.r_max_eig[:, b] = eigs[:, -1]
    return trace


# -- built-in experiment definitions ----------------------------------------


def _plant_first_order(phi: float = 1.0, scale: float = 0.5):
    kp = np.array([[np.cos(phi), np.sin(phi)],
                   [-scale * np.sin(phi), scale * np.cos(phi)]])
    return -2.0 * np.eye(2), kp, np.eye(2)


def _plant_third_order():
    Ap = np.diag([1.0, 1.0, -1.0])
    Bp = np.array([[1.0, 1.0], [1.0, 0.0], [1.0, -1.0]])
    Cp = np.array([[1.0, 1.0, -1.0], [2.0, -5.0, 1.0]])
    return Ap, Bp, Cp


def _two_tone_reference() -> SignalSpec:
    from .dynamics import SignalTerm
    return SignalSpec(channels=(
        (SignalTerm("const", 1.0), SignalTerm("sine", 10.0, 5.0)),
        (SignalTerm("const", -1.0), SignalTerm("sine", 5.0, 3.0))))


def _square_reference() -> SignalSpec:
    from .dynamics import SignalTerm
    return SignalSpec(channels=(
        (SignalTerm("const", 1.0), SignalTerm("square", 10.0, 5.0)),
        (SignalTerm("const", -1.0), SignalTerm("square", 5.0, 3.0))))


#: Leakage threshold for the large-initial-condition variant; roughly twice
#: the converged parameter norm observed on the small-initial-condition runs.
SIGMA_M0_DEFAULT = 8.0


def builtin_scenarios() -> dict:
    """The stock experiments: three first-order-plant runs comparing the
    adaptation laws, and third-order-plant runs exercising the 17-parameter
    configuration, large initial conditions, and leakage."""
    A65, B65, C65 = _plant_first_order()
    A68, B68, C68 = _plant_third_order()
    ref65 = _two_tone_reference()
    ref68 = _square_reference()

    first_order = dict(plant_A=A65, plant_B=B65, plant_C=C65,
                       x0=np.array([1.0, 1.0]),
                       model_bm=np.array([2.0, 2.0]),
                       signal=ref65, nu=1, h=1e-4, T=20.0, stride=10)
    third_order = dict(plant_A=A68, plant_B=B68, plant_C=C68,
                       model_a=np.array([2.0, 2.0]),
                       model_bm=np.array([2.0, 2.0]),
                       signal=ref68, nu=2, ell0=2.0,
                       Lambda=np.array([[-2.0]]), g=np.array([1.0]),
                       law="ls", gamma=10.0, h=1e-4, T=20.0, stride=10)

    # The published gain values put the lag-filter pole at 3 for the two
    # first-order comparison runs; the common-pole requirement then fixes
    # the model pole at 3 as well. The gradient baseline has no such
    # constraint and keeps the pole-2 model.
    scn = {
        "sim1": Scenario(label="sim1", law="gradient", Gamma=10.0, R0=1.0,
                         ell0=2.0, model_a=np.array([2.0, 2.0]),
                         **first_order),
        "sim2": Scenario(label="sim2", law="mmrac", Gamma=500.0, R0=1.0,
                         ell0=3.0, model_a=np.array([3.0, 3.0]),
                         **first_order),
        "sim3": Scenario(label="sim3", law="ls", gamma=50.0, R0=20.0,
                         ell0=3.0, model_a=np.array([3.0, 3.0]),
                         **first_order),
        "sim4": Scenario(label="sim4", x0=np.array([0.65, 1.0, -0.37]),
                         R0=1.0, **third_order),
        "sim5": Scenario(label="sim5", x0=np.array([0.65, 1.0, -0.37]),
                         R0=10.0, **third_order),
        "sim6": Scenario(label="sim6", x0=np.array([0.65, 100.0, -0.37]),
                         R0=20.0, **third_order),
        "sim6-sigma": Scenario(label="sim6-sigma",
                               x0=np.array([0.65, 100.0, -0.37]), R0=20.0,
                               sigma_enabled=True, sigma_max=10.0,
                               sigma_M0=SIGMA_M0_DEFAULT, **third_order),
    }
    return scn
