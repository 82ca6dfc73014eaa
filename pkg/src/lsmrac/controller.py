"""State-variable filters, triangular regressor stacks, and adaptation laws.

The regressor machinery is organized around a single channel vector: the
shared part (filter states, outputs, reference) followed by the control
entries u_2..u_m. Every per-output block is a slice of that vector, so the
lag filter runs once per scalar channel instead of once per block.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import NonSpdCovariance
from .factorization import is_spd

LAWS = ("ls", "mmrac", "gradient")


def _assert_hurwitz(Lam: np.ndarray) -> None:
    """Reject filter matrices with eigenvalues in the closed right half-plane.

    Small sizes use the Routh conditions on the characteristic polynomial;
    larger ones use a Lyapunov-solve certificate.
    """
    k = Lam.shape[0]
    if k <= 3:
        c = np.poly(Lam)  # [1, c1, ..., ck]
        ok = np.all(c[1:] > 0.0)
        if ok and k == 3:
            ok = c[1] * c[2] > c[3]
        if not ok:
            raise ValueError("filter matrix Lambda is not Hurwitz")
    else:
        try:
            P = scipy.linalg.solve_continuous_lyapunov(Lam.T, -np.eye(k))
        except Exception as exc:
            raise ValueError("filter matrix Lambda is not Hurwitz") from exc
        if not is_spd(P, tol=1e-8):
            raise ValueError("filter matrix Lambda is not Hurwitz")


@dataclass
class FilterBank:
    """Per-channel state-variable filters driven by u and y.

    For observability index nu the filters have order nu - 1; nu = 1 means
    no filters at all and every block here is empty.
    """

    m: int
    nu: int
    Lam: np.ndarray = None  # (nu-1, nu-1)
    g: np.ndarray = None    # (nu-1,)
    v1: np.ndarray = None   # (m, nu-1)
    v2: np.ndarray = None   # (m, nu-1)

    def __post_init__(self):
        k = self.nu - 1
        if self.nu < 1:
            raise ValueError("observability index must be >= 1")
        if k == 0:
            self.Lam = np.zeros((0, 0))
            self.g = np.zeros(0)
        else:
            if self.Lam is None or self.g is None:
                raise ValueError("Lambda and g are required when nu > 1")
            self.Lam = np.atleast_2d(np.asarray(self.Lam, dtype=float))
            self.g = np.asarray(self.g, dtype=float).ravel()
            if self.Lam.shape != (k, k) or self.g.shape != (k,):
                raise ValueError("filter dimensions must match nu - 1")
            _assert_hurwitz(self.Lam)
        if self.v1 is None:
            self.v1 = np.zeros((self.m, k))
        if self.v2 is None:
            self.v2 = np.zeros((self.m, k))
        self.v1 = np.asarray(self.v1, dtype=float).reshape(self.m, k)
        self.v2 = np.asarray(self.v2, dtype=float).reshape(self.m, k)


def filter_derivatives(fb: FilterBank, u, y):
    """Time derivatives of the u-driven and y-driven filter states."""
    u = np.asarray(u, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if u.shape != (fb.m,) or y.shape != (fb.m,):
        raise ValueError("filter input dimension mismatch")
    if fb.nu == 1:
        return np.zeros((fb.m, 0)), np.zeros((fb.m, 0))
    dv1 = fb.v1 @ fb.Lam.T + np.outer(u, fb.g)
    dv2 = fb.v2 @ fb.Lam.T + np.outer(y, fb.g)
    return dv1, dv2


@dataclass
class OmegaStack:
    """The shared regressor vector plus its per-output triangular blocks.

    ``blocks[i-1]`` appends u_{i+1}..u_m to the shared vector, so block
    lengths decrease by exactly one.
    """

    omega: np.ndarray
    blocks: list
    m: int
    nu: int

    def block(self, i: int) -> np.ndarray:
        """1-based block access; block(1) is the longest."""
        return self.blocks[i - 1]


def build_omega(omega, u) -> OmegaStack:
    omega = np.asarray(omega, dtype=float).ravel()
    u = np.asarray(u, dtype=float).ravel()
    m = u.size
    if m < 1 or omega.size % (2 * m) != 0:
        raise ValueError(
            f"regressor length {omega.size} incompatible with {m} outputs")
    nu = omega.size // (2 * m)
    blocks = [np.concatenate((omega, u[i:])) for i in range(1, m + 1)]
    return OmegaStack(omega=omega, blocks=blocks, m=m, nu=nu)


def block_sizes(m: int, nu: int) -> np.ndarray:
    """Adaptive block lengths N_i = 2 m nu + m - i for i = 1..m."""
    return 2 * m * nu + m - np.arange(1, m + 1)


@dataclass
class XiState:
    """Lag-filtered regressor channels, shared across blocks.

    ``channels`` holds the filtered shared vector followed by the filtered
    u_2..u_m entries; per-output blocks are slices of it.
    """

    channels: np.ndarray
    ell0: float
    m: int
    nu: int

    def __post_init__(self):
        self.channels = np.asarray(self.channels, dtype=float).ravel()
        expected = 2 * self.m * self.nu + self.m - 1
        if self.channels.size != expected:
            raise ValueError(
                f"expected {expected} filtered channels, got {self.channels.size}")
        if self.ell0 <= 0.0:
            raise ValueError("filter pole ell0 must be positive")

    def block(self, i: int) -> np.ndarray:
        """Filtered regressor for output i (1-based)."""
        base = 2 * self.m * self.nu
        if i == 1:
            return self.channels
        return np.concatenate((self.channels[:base], self.channels[base + i - 1:]))


def xi_derivative(xi: XiState, omega: OmegaStack) -> np.ndarray:
    """Channel-vector derivative of the lag filter: -ell0 * Xi + Omega.

    Returns the derivative of the shared channel vector; block derivatives
    are its slices, so the shared portion of every block stays identical.
    """
    src = omega.block(1)
    if src.size != xi.channels.size:
        raise ValueError("regressor/filter channel count mismatch")
    return -xi.ell0 * xi.channels + src


def sign_d_from_minors(minor_signs) -> np.ndarray:
    """Signs of the diagonal factor from leading-minor signs: consecutive
    products with a +1 seed."""
    ms = np.asarray(minor_signs, dtype=float).ravel()
    if not np.all(np.abs(ms) == 1.0):
        raise ValueError("minor signs must be +1 or -1")
    return ms * np.concatenate(([1.0], ms[:-1]))


@dataclass
class AdaptiveState:
    """Adaptive parameters, per-block gain matrices, and law configuration.

    For the least-squares law ``R`` is the evolving covariance and ``gamma``
    the scalar gain; for the other laws ``R`` holds the constant gain blocks.
    """

    theta: list
    R: list
    sign_d: np.ndarray
    law: str = "ls"
    gamma: float = 1.0
    sigma_enabled: bool = False
    sigma_max: float = 10.0
    sigma_M0: float = 1.0

    def __post_init__(self):
        if self.law not in LAWS:
            raise ValueError(f"law must be one of {LAWS}")
        self.theta = [np.asarray(t, dtype=float).ravel() for t in self.theta]
        self.R = [np.asarray(r, dtype=float) for r in self.R]
        self.sign_d = np.asarray(self.sign_d, dtype=float).ravel()
        m = len(self.theta)
        if len(self.R) != m or self.sign_d.size != m:
            raise ValueError("block count mismatch")
        for t, r in zip(self.theta, self.R):
            if r.shape != (t.size, t.size):
                raise ValueError("covariance block shape mismatch")
        if self.law == "ls" and self.gamma < 0.0:
            raise ValueError("ls law requires a nonnegative gamma")

    @property
    def m(self) -> int:
        return len(self.theta)

    def theta_stacked(self) -> np.ndarray:
        return np.concatenate(self.theta)


def _sigma_switch(a: AdaptiveState) -> float:
    if not a.sigma_enabled:
        return 0.0
    return 0.0 if np.linalg.norm(a.theta_stacked()) <= a.sigma_M0 else a.sigma_max


def theta_dot(a: AdaptiveState, xi: XiState, omega: OmegaStack, e0,
              check_spd: bool = False):
    """Parameter (and covariance) derivatives for the configured law.

    Returns (theta_dots, r_dots); r_dots is None unless the covariance
    evolves (least-squares law). The gradient baseline regresses on the raw
    blocks instead of the filtered ones. ``check_spd`` enables a Cholesky
    diagnostic on every covariance block.
    """
    e0 = np.asarray(e0, dtype=float).ravel()
    if e0.size != a.m:
        raise ValueError("error dimension mismatch")
    sig = _sigma_switch(a)
    tds = []
    rds = [] if a.law == "ls" else None
    for b in range(a.m):
        R = a.R[b]
        if check_spd and not is_spd(R):
            raise NonSpdCovariance(f"covariance block {b + 1} is not SPD")
        if a.law == "ls":
            w = R @ xi.block(b + 1)
            td = -a.gamma * a.sign_d[b] * e0[b] * w
            rds.append(-np.outer(w, w))
        elif a.law == "mmrac":
            td = -a.sign_d[b] * e0[b] * (R @ xi.block(b + 1))
        else:
            td = -a.sign_d[b] * e0[b] * (R @ omega.block(b + 1))
        if sig > 0.0:
            G = a.gamma * R if a.law == "ls" else R
            td = td - sig * (G @ a.theta[b])
        tds.append(td)
    return tds, rds


def compute_control(a: AdaptiveState, xi: XiState, omega_vec, e0):
    """Control vector and parameter derivatives by back-substitution.

    Blocks are processed from the last output to the first; each control
    entry feeds the regressor blocks of lower-numbered outputs only, so no
    entry ever depends on itself. Unwritten control slots are seeded with
    NaN: if the triangular structure were ever violated the poison would
    surface immediately.
    """
    omega_vec = np.asarray(omega_vec, dtype=float).ravel()
    e0 = np.asarray(e0, dtype=float).ravel()
    m = a.m
    base = 2 * m * xi.nu
    if omega_vec.size != base:
        raise ValueError("shared regressor length mismatch")
    if e0.size != m:
        raise ValueError("error dimension mismatch")

    ch = np.concatenate((omega_vec, np.full(m - 1, np.nan)))
    sig = _sigma_switch(a)
    u = np.empty(m)
    tds = [None] * m
    for i in range(m, 0, -1):
        b = i - 1
        omega_i = np.concatenate((ch[:base], ch[base + i - 1:]))
        if a.law == "gradient":
            td = -a.sign_d[b] * e0[b] * (a.R[b] @ omega_i)
        elif a.law == "ls":
            td = -a.gamma * a.sign_d[b] * e0[b] * (a.R[b] @ xi.block(i))
        else:
            td = -a.sign_d[b] * e0[b] * (a.R[b] @ xi.block(i))
        if sig > 0.0:
            G = a.gamma * a.R[b] if a.law == "ls" else a.R[b]
            td = td - sig * (G @ a.theta[b])
        ui = float(omega_i @ a.theta[b])
        if a.law != "gradient":
            ui += float(xi.block(i) @ td)
        u[b] = ui
        tds[b] = td
        if i >= 2:
            ch[base + i - 2] = ui
    return u, tds
