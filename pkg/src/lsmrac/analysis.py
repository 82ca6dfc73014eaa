"""Post-run metrics and empirical checks of the stability/convergence claims.

Everything here is pure post-processing over immutable traces: the matching
oracle for first-order diagonal plants, norm and convergence-time metrics,
the Lipschitz interpolation inequality, gain-scaling sweeps, and the
Lyapunov / covariance diagnostics.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import UnsupportedPlantFamily
from .factorization import ldu_factor, sdu_factor
from .loop import Scenario, Trace, run


# -- matching oracle ---------------------------------------------------------


@dataclass(frozen=True)
class MatchingOracle:
    """First-order diagonal plant family y = (gain/(s+pole)) Kp u with a
    common-pole reference model diag{bm_i/(s+a)}."""

    pole: float
    gain: float
    Kp: np.ndarray
    a: float
    bm: np.ndarray
    dplus: np.ndarray = None  # None selects |Dp|


@dataclass(frozen=True)
class MatchingResult:
    """Ideal controller parameters, their triangular re-parameterization,
    and the factorization pieces every error metric shares."""

    theta3: np.ndarray        # output-feedback gain block
    theta4: np.ndarray        # reference gain block
    theta_star_T: np.ndarray  # (m, 2m) acting on [y; r]
    theta_blocks: tuple
    theta_stacked: np.ndarray
    U: np.ndarray
    S: np.ndarray
    d_diag: np.ndarray
    sign_d: np.ndarray
    freq_error: float

    @property
    def abs_d(self) -> np.ndarray:
        return np.abs(self.d_diag)


def oracle_for_scenario(s: Scenario, dplus=None) -> MatchingOracle:
    """Build the oracle from a scenario, or refuse if the plant is not in
    the first-order diagonal family (then no closed form exists here)."""
    n, m = s.n_p, s.m
    if n != m or s.nu != 1:
        raise UnsupportedPlantFamily(
            "matching oracle needs a first-order plant with nu = 1")
    pole = -s.plant_A[0, 0]
    if not np.allclose(s.plant_A, -pole * np.eye(n), atol=1e-12) \
            or not np.allclose(s.plant_C, np.eye(m), atol=1e-12) or pole <= 0:
        raise UnsupportedPlantFamily(
            "matching oracle needs A = -p I (p > 0) and C = I")
    return MatchingOracle(pole=float(pole), gain=1.0, Kp=s.plant_B.copy(),
                          a=s.internal_a, bm=s.model_bm.copy(), dplus=dplus)


def matching_params(o: MatchingOracle) -> MatchingResult:
    """Closed-form matching parameters, self-verified two ways.

    The unstructured gains come from pole placement; the triangular blocks
    fold in the unit-upper factor of the plant gain. Verification: the
    matched closed loop must equal the reference model at 20 log-spaced
    frequencies to 1e-8 relative, and back-substituting the triangular
    blocks must reproduce the unstructured control on random regressors.
    """
    Kp = np.asarray(o.Kp, dtype=float)
    m = Kp.shape[0]
    bm = np.asarray(o.bm, dtype=float).ravel()
    theta3 = np.linalg.solve(Kp, (o.pole - o.a) * np.eye(m)) / o.gain
    theta4 = np.linalg.solve(Kp, np.diag(bm)) / o.gain
    theta_star_T = np.hstack([theta3, theta4])

    ldu = ldu_factor(Kp)
    dplus = np.abs(ldu.dp_diag) if o.dplus is None else np.asarray(o.dplus)
    sdu = sdu_factor(Kp, dplus)
    W = sdu.U @ theta_star_T
    blocks = tuple(np.concatenate([W[i], -sdu.U[i, i + 1:]]) for i in range(m))
    stacked = np.concatenate(blocks)

    freqs = np.logspace(-2, 2, 20)
    A_cl = -o.pole * np.eye(m) + o.gain * Kp @ theta3
    B_cl = o.gain * Kp @ theta4
    worst = 0.0
    for w in freqs:
        T = np.linalg.solve(1j * w * np.eye(m) - A_cl, B_cl)
        M = np.diag(bm / (1j * w + o.a))
        worst = max(worst, np.linalg.norm(T - M) / np.linalg.norm(M))
    if worst > 1e-8:
        raise ArithmeticError(
            f"matched loop deviates from the model ({worst:.2e} relative)")

    rng = np.random.default_rng(7)
    for _ in range(5):
        omega = rng.standard_normal(2 * m)
        u = np.empty(m)
        for i in range(m, 0, -1):
            reg = np.concatenate([omega, u[i:]])
            u[i - 1] = reg @ blocks[i - 1]
        if np.linalg.norm(u - theta_star_T @ omega) > 1e-10 * (
                1.0 + np.linalg.norm(u)):
            raise ArithmeticError(
                "triangular blocks do not reproduce the matched control")

    return MatchingResult(theta3=theta3, theta4=theta4,
                          theta_star_T=theta_star_T, theta_blocks=blocks,
                          theta_stacked=stacked, U=sdu.U, S=sdu.S,
                          d_diag=sdu.d_diag, sign_d=sdu.sign_d,
                          freq_error=worst)


def family_directions(match: MatchingResult, m: int, nu: int = 1) -> np.ndarray:
    """Directions along which the matching vector varies as the unit-upper
    factor varies; parameter errors along them are reparameterization, not
    mismatch. One direction per strictly-upper entry (i, j)."""
    from .controller import block_sizes
    sizes = block_sizes(m, nu)
    offs = np.concatenate([[0], np.cumsum(sizes)])
    base = 2 * m * nu
    dirs = []
    for i in range(m):
        for j in range(i + 1, m):
            d = np.zeros(offs[-1])
            d[offs[i]:offs[i] + base] = match.theta_star_T[j]
            d[offs[i] + base + (j - i - 1)] = -1.0
            dirs.append(d)
    return np.array(dirs) if dirs else np.zeros((0, offs[-1]))


def family_parameter_distance(theta_stacked, match: MatchingResult,
                              m: int, nu: int = 1) -> float:
    """Distance from a parameter vector to the affine span of all matching
    parameterizations (the unit-upper-factor ambiguity projected out)."""
    resid = np.asarray(theta_stacked, dtype=float) - match.theta_stacked
    D = family_directions(match, m, nu)
    if D.size:
        coef, *_ = np.linalg.lstsq(D.T, resid, rcond=None)
        resid = resid - D.T @ coef
    return float(np.linalg.norm(resid))


# -- trace norms -------------------------------------------------------------


def l2sq(t, x) -> float:
    """Trapezoidal integral of the squared channel (norm squared if 2-D)."""
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    sq = x ** 2 if x.ndim == 1 else np.sum(x ** 2, axis=1)
    return float(np.trapezoid(sq, t))


def linf(t, x, t_start: float = 0.0) -> float:
    """Max per-sample norm over t >= t_start."""
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    mag = np.abs(x) if x.ndim == 1 else np.linalg.norm(x, axis=1)
    i0 = int(np.searchsorted(t, t_start))
    return float(mag[min(i0, mag.size - 1):].max())


def convergence_time(t, x, eps: float) -> float:
    """First recorded time after which the channel magnitude stays <= eps.

    Returns t[0] when the channel never exceeds eps, and inf when it is
    still above eps at the final sample.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    mag = np.abs(x) if x.ndim == 1 else np.linalg.norm(x, axis=1)
    above = np.nonzero(mag > eps)[0]
    if above.size == 0:
        return float(t[0])
    if above[-1] == t.size - 1:
        return math.inf
    return float(t[above[-1] + 1])


@dataclass(frozen=True)
class Lemma4Result:
    k_est: float
    lhs: float
    rhs: float
    passed: bool


def lemma4_check(f, dt: float) -> Lemma4Result:
    """Lipschitz interpolation inequality max|f| <= (3 K ||f||_2^2)^(1/3).

    K is estimated from first differences of the uniformly sampled channel;
    the piecewise-linear interpolant satisfies the bound exactly, so it
    holds for the samples up to the stated slack.
    """
    f = np.asarray(f, dtype=float).ravel()
    if f.size < 2:
        raise ValueError("need at least two samples")
    k_est = float(np.abs(np.diff(f)).max() / dt)
    lhs = float(np.abs(f).max())
    energy = float(np.trapezoid(f ** 2, dx=dt))
    rhs = float((3.0 * k_est * energy) ** (1.0 / 3.0))
    return Lemma4Result(k_est=k_est, lhs=lhs, rhs=rhs,
                        passed=lhs <= rhs * (1.0 + 1e-6))


# -- Lyapunov and covariance diagnostics -------------------------------------


def v1_monitor(trace: Trace, theta_star, abs_d) -> np.ndarray:
    """Series of the weighted parameter-error quadratic form
    0.5 * sum_i |d_i| * err_i^T R_i(t)^{-1} err_i."""
    theta_star = np.asarray(theta_star, dtype=float).ravel()
    abs_d = np.asarray(abs_d, dtype=float).ravel()
    lay = trace.layout
    if theta_star.size != lay.n_theta or abs_d.size != lay.m:
        raise ValueError("oracle dimensions do not match the trace")
    V = np.zeros(len(trace))
    for b in range(lay.m):
        err = trace.theta[:, lay.th_off[b]:lay.th_off[b + 1]] \
            - theta_star[lay.th_off[b]:lay.th_off[b + 1]]
        sol = np.linalg.solve(trace.R_blocks(b + 1), err[:, :, None])[:, :, 0]
        V += 0.5 * abs_d[b] * np.einsum("ki,ki->k", err, sol)
    return V


def upsilon(trace: Trace, theta_star, d_diag, index: int = None) -> np.ndarray:
    """Control-mismatch diagnostic d_i * (Xi_i . err_i) per output.

    Returns the full (K, m) series, or one row when ``index`` is given.
    Under a common-pole model this should reproduce e0 through the
    symmetric factor once initial-condition transients vanish.
    """
    theta_star = np.asarray(theta_star, dtype=float).ravel()
    d_diag = np.asarray(d_diag, dtype=float).ravel()
    lay = trace.layout
    out = np.zeros((len(trace), lay.m))
    for b in range(lay.m):
        err = trace.theta[:, lay.th_off[b]:lay.th_off[b + 1]] \
            - theta_star[lay.th_off[b]:lay.th_off[b + 1]]
        out[:, b] = d_diag[b] * np.einsum("ki,ki->k", trace.xi_block(b + 1), err)
    return out if index is None else out[index]


def eq_error_residual(trace: Trace, match: MatchingResult) -> np.ndarray:
    """Relative residual of the algebraic error identity e0 = S * Upsilon."""
    ups = upsilon(trace, match.theta_stacked, match.d_diag)
    num = np.linalg.norm(ups @ match.S.T - trace.e0, axis=1)
    den = np.maximum(np.linalg.norm(trace.e0, axis=1), 1e-6)
    return num / den


def information_residual(trace: Trace) -> np.ndarray:
    """Max-entry mismatch between the covariance inverse and the integral
    of regressor outer products, per sample (worst block).

    The integral is co-integrated on the solver grid, so the residual is
    pure integration error and must shrink with the step size.
    """
    lay = trace.layout
    worst = np.zeros(len(trace))
    for b in range(lay.m):
        R_inv = np.linalg.inv(trace.R_blocks(b + 1))
        res = R_inv - R_inv[0][None, :, :] - trace.info_blocks(b + 1)
        worst = np.maximum(worst, np.abs(res).max(axis=(1, 2)))
    return worst


def pe_measure(trace: Trace, window: float):
    """Sliding-window excitation floor: minimum eigenvalue of the windowed
    regressor Gram matrix, per block.

    Returns (window start times, (K', m) array of minimum eigenvalues).
    """
    lay = trace.layout
    dt = float(trace.t[1] - trace.t[0])
    w = int(round(window / dt))
    if w < 10:
        raise ValueError("window must cover at least 10 recorded strides")
    if w >= len(trace):
        raise ValueError("window longer than the trace")
    K = len(trace)
    mins = np.zeros((K - w, lay.m))
    for b in range(lay.m):
        xi_b = trace.xi_block(b + 1)
        outer = xi_b[:, :, None] * xi_b[:, None, :]
        seg = 0.5 * (outer[1:] + outer[:-1]) * dt
        cum = np.concatenate([np.zeros((1,) + outer.shape[1:]),
                              np.cumsum(seg, axis=0)])
        gram = cum[w:] - cum[:-w]
        mins[:, b] = np.linalg.eigvalsh(gram)[:, 0]
    return trace.t[:K - w], mins


# -- gain-scaling sweeps -----------------------------------------------------


@dataclass(frozen=True)
class ScalingRow:
    gamma: float
    l2sq: float
    linf_post: float
    t_eps: float


@dataclass(frozen=True)
class ScalingReport:
    """Per-gain norms plus least-squares log-log slope fits."""

    rows: tuple
    c: float
    eps: float
    slope_l2sq: float
    slope_linf: float
    slope_teps: float
    resid_l2sq: float
    resid_linf: float
    resid_teps: float

    def summary(self) -> str:
        lines = ["gamma      l2sq          linf_post     t_eps"]
        for r in self.rows:
            lines.append(f"{r.gamma:<10.4g} {r.l2sq:<13.6e} "
                         f"{r.linf_post:<13.6e} {r.t_eps:.6g}")
        lines.append(f"slopes: l2sq {self.slope_l2sq:+.3f}  "
                     f"linf {self.slope_linf:+.3f}  t_eps {self.slope_teps:+.3f}")
        return "\n".join(lines)


def _fit_slope(lg, vals):
    vals = np.asarray(vals, dtype=float)
    if np.any(~np.isfinite(vals)) or np.any(vals <= 0.0):
        return math.nan, math.nan
    coef, res, *_ = np.polyfit(lg, np.log(vals), 1, full=True)
    return float(coef[0]), float(res[0]) if res.size else 0.0


def post_transient_start(a: float, gamma: float) -> float:
    """Start of the residual window: past the model transient and past the
    gain-dependent convergence phase."""
    return max(5.0 / a, 20.0 / gamma)


def gamma_sweep(base: Scenario, gammas, c: float, eps: float = 0.05,
                engine: str = "kernel") -> ScalingReport:
    """Run the base experiment across gains with covariance scaled as c*gamma
    and fit log-log slopes of the three convergence norms.

    Tracks how tracking-error energy, post-transient residual, and
    convergence time shrink as the adaptation gain grows.
    """
    gammas = [float(g) for g in gammas]
    if len(gammas) < 4:
        raise ValueError("need at least 4 gain values for a slope fit")
    if any(b <= a for a, b in zip(gammas, gammas[1:])):
        raise ValueError("gains must be strictly increasing")
    if c <= 0.0:
        raise ValueError("covariance scaling c must be positive")
    if base.law != "ls":
        raise ValueError("gain sweeps are defined for the ls law")
    thr = base.gain_threshold()
    bad = [g for g in gammas if g <= thr]
    if bad:
        raise ValueError(f"gains {bad} violate the stability threshold {thr:g}")

    rows = []
    for g in gammas:
        s = base.copy_with(label=f"{base.label}-gamma{g:g}", gamma=g, R0=c * g)
        trace = run(s, engine=engine)
        e = trace.e0
        t0 = post_transient_start(base.internal_a, g)
        rows.append(ScalingRow(
            gamma=g, l2sq=l2sq(trace.t, e), linf_post=linf(trace.t, e, t0),
            t_eps=convergence_time(trace.t, e, eps)))
    if all(r.l2sq <= 1e-30 for r in rows):
        raise ValueError("degenerate sweep: tracking error is identically zero")

    lg = np.log(np.array(gammas))
    s_l2, r_l2 = _fit_slope(lg, [r.l2sq for r in rows])
    s_li, r_li = _fit_slope(lg, [r.linf_post for r in rows])
    s_te, r_te = _fit_slope(lg, [r.t_eps for r in rows])
    return ScalingReport(rows=tuple(rows), c=c, eps=eps,
                         slope_l2sq=s_l2, slope_linf=s_li, slope_teps=s_te,
                         resid_l2sq=r_l2, resid_linf=r_li, resid_teps=r_te)
