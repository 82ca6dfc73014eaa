"""Command-line interface: run, sweep, factor, plot, list.

Exit codes: 0 success, 2 parse/usage error, 3 divergence, 4 internal error.
"""

import argparse
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import analysis
from .errors import (Diverged, LsmracError, ParseError, ScenarioError,
                     SingularMinor, UnsupportedPlantFamily)
from .factorization import (dplus_geometric, find_dplus, ldu_factor,
                            leading_minors, sdu_factor)
from .loop import Scenario, builtin_scenarios, run
from .scenario_io import load_scenario, read_trace_csv, write_trace_csv

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DIVERGED = 3
EXIT_INTERNAL = 4


def _worker_count() -> int:
    env = os.environ.get("LSMRAC_THREADS", "").strip()
    if env:
        try:
            n = int(env)
            if n >= 1:
                return n
        except ValueError:
            pass
    return os.cpu_count() or 1


def _resolve_scenario(name_or_path: str) -> Scenario:
    builtins = builtin_scenarios()
    if name_or_path in builtins:
        return builtins[name_or_path]
    return load_scenario(name_or_path)


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


# -- run ----------------------------------------------------------------------


def cmd_run(args) -> int:
    scenario = _resolve_scenario(args.scenario)
    overrides = {}
    if args.h is not None:
        overrides["h"] = args.h
    if args.T is not None:
        overrides["T"] = args.T
    if args.stride is not None:
        overrides["stride"] = args.stride
    if overrides:
        scenario = scenario.copy_with(**overrides)
    t0 = time.perf_counter()
    try:
        trace = run(scenario)
    except Diverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        if exc.trace is not None and args.output:
            write_trace_csv(exc.trace, args.output)
            print(f"partial trace written to {args.output}", file=sys.stderr)
        return EXIT_DIVERGED
    elapsed = time.perf_counter() - t0
    write_trace_csv(trace, args.output)
    final_err = float(np.linalg.norm(trace.e0[-1]))
    print(f"{scenario.label}: {len(trace)} samples over {trace.t[-1]:g} s "
          f"({elapsed:.2f} s wall)")
    print(f"final |e0| = {final_err:.6e}")
    try:
        match = analysis.matching_params(analysis.oracle_for_scenario(scenario))
        theta_err = float(np.linalg.norm(trace.theta[-1] - match.theta_stacked))
        print(f"final |theta - theta*| = {theta_err:.6e}")
    except UnsupportedPlantFamily:
        pass
    print(f"trace written to {args.output}")
    return EXIT_OK


# -- sweep --------------------------------------------------------------------


def _parse_gamma_list(text: str):
    toks = text.replace(",", " ").split()
    if not toks:
        raise ValueError("empty gamma list")
    return [float(t) for t in toks]


def cmd_sweep(args) -> int:
    base = _resolve_scenario(args.scenario)
    gammas = _parse_gamma_list(args.gamma)
    if len(gammas) < 4:
        print("error: need at least 4 gamma values", file=sys.stderr)
        return EXIT_USAGE
    if args.c <= 0:
        print("error: the covariance scaling constant must be positive",
              file=sys.stderr)
        return EXIT_USAGE
    os.makedirs(args.outdir, exist_ok=True)

    def one(g):
        s = base.copy_with(label=f"{base.label}-gamma{g:g}", gamma=g,
                           R0=args.c * g)
        return run(s)

    worst = EXIT_OK
    traces = {}
    with ThreadPoolExecutor(max_workers=_worker_count()) as pool:
        futures = {g: pool.submit(one, g) for g in gammas}
        for g, fut in futures.items():
            try:
                traces[g] = fut.result()
            except Diverged as exc:
                print(f"gamma={g:g}: {exc}", file=sys.stderr)
                if exc.trace is not None:
                    traces[g] = exc.trace
                worst = max(worst, EXIT_DIVERGED)

    rows = []
    for g in gammas:
        trace = traces.get(g)
        if trace is None:
            continue
        path = os.path.join(args.outdir, f"trace_gamma{g:g}.csv")
        write_trace_csv(trace, path)
        if trace.status != "ok":
            continue
        t0 = analysis.post_transient_start(base.internal_a, g)
        rows.append((g, analysis.l2sq(trace.t, trace.e0),
                     analysis.linf(trace.t, trace.e0, t0),
                     analysis.convergence_time(trace.t, trace.e0, args.eps)))

    scaling_path = os.path.join(args.outdir, "scaling.csv")
    with open(scaling_path, "w", encoding="utf-8") as fh:
        fh.write("gamma,l2sq,linf_post,t_eps\n")
        for g, a, b, c in rows:
            fh.write(f"{_fmt(g)},{_fmt(a)},{_fmt(b)},{_fmt(c)}\n")
        if len(rows) >= 2:
            lg = np.log([r[0] for r in rows])
            for idx, name in ((1, "l2sq"), (2, "linf_post"), (3, "t_eps")):
                vals = np.array([r[idx] for r in rows])
                if np.all(np.isfinite(vals)) and np.all(vals > 0):
                    slope = np.polyfit(lg, np.log(vals), 1)[0]
                    fh.write(f"# slope_{name} = {slope:+.6f}\n")
                else:
                    fh.write(f"# slope_{name} = nan\n")
    print(f"{len(rows)} completed runs; results in {args.outdir}")
    return worst


# -- factor -------------------------------------------------------------------


def _parse_inline_matrix(text: str) -> np.ndarray:
    if text.startswith("@"):
        with open(text[1:], "r", encoding="utf-8") as fh:
            text = fh.read().replace("\n", ";")
    rows = [r for r in (part.strip() for part in text.split(";")) if r]
    M = np.array([[float(tok) for tok in row.split()] for row in rows])
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    return M


def _print_matrix(name: str, M: np.ndarray, out) -> None:
    out.append(name)
    for row in np.atleast_2d(M):
        out.append("  " + "  ".join(f"{x: .12g}" for x in row))


def cmd_factor(args) -> int:
    K = _parse_inline_matrix(args.matrix)
    out = []
    try:
        minors = leading_minors(K)
        ldu = ldu_factor(K)
    except SingularMinor as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out.append("leading minors: " + "  ".join(f"{x:.12g}" for x in minors))
    _print_matrix("Lp =", ldu.Lp, out)
    _print_matrix("Dp =", ldu.Dp, out)
    _print_matrix("Up =", ldu.Up, out)

    dp = ldu.dp_diag
    sdu = sdu_factor(K, np.abs(dp))
    out.append("")
    out.append("factorization at Dplus = |Dp| (D reduced to its signs):")
    _print_matrix("S =", sdu.S, out)
    _print_matrix("D =", sdu.D, out)
    _print_matrix("U =", sdu.U, out)
    out.append("sign(D) = " + "  ".join(f"{int(x):+d}" for x in sdu.sign_d))
    thr = 0.5 * float(np.max(1.0 / np.abs(dp)))
    out.append(f"least-squares gain threshold: gamma > {thr:.12g}")

    if args.am:
        am = np.array([float(t) for t in args.am.replace(",", " ").split()])
        if am.size != K.shape[0] or np.any(am <= 0):
            print("error: --am needs one positive pole magnitude per output",
                  file=sys.stderr)
            return EXIT_USAGE
        d_plus, Q = find_dplus(K, -np.diag(am))
        gsd = sdu_factor(K, dplus_geometric(d_plus, K.shape[0]))
        eigs = np.linalg.eigvalsh(Q)
        out.append("")
        out.append(f"certified geometric scaling: d_plus = {d_plus:g}")
        _print_matrix("S =", gsd.S, out)
        _print_matrix("Q =", Q, out)
        out.append(f"Q eigenvalue range: [{eigs[0]:.12g}, {eigs[-1]:.12g}] "
                   "(positive definite)")

    text = "\n".join(out)
    print(text)
    if args.csv:
        with open(args.csv, "w", encoding="utf-8") as fh:
            fh.write("block,row,values\n")
            for name, M in (("minors", minors), ("Lp", ldu.Lp),
                            ("Dp", ldu.Dp), ("Up", ldu.Up), ("S", sdu.S),
                            ("D", sdu.D), ("U", sdu.U)):
                for i, row in enumerate(np.atleast_2d(M)):
                    fh.write(f"{name},{i}," +
                             " ".join(_fmt(x) for x in row) + "\n")
    return EXIT_OK


# -- plot ---------------------------------------------------------------------

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
            "#8c564b", "#17becf", "#7f7f7f")


def _svg_line_chart(t, series, path, width=1200, height=600):
    """Static SVG chart: fixed viewport, one polyline per channel."""
    ml, mr, mt, mb = 70, 30, 40, 50
    pw, ph = width - ml - mr, height - mt - mb
    t = np.asarray(t, dtype=float)
    ymin = min(float(np.min(v)) for v in series.values())
    ymax = max(float(np.max(v)) for v in series.values())
    if ymax == ymin:
        ymax = ymin + 1.0
    pad = 0.05 * (ymax - ymin)
    ymin, ymax = ymin - pad, ymax + pad
    tmin, tmax = float(t[0]), float(t[-1])
    if tmax == tmin:
        tmax = tmin + 1.0

    def sx(x):
        return ml + (x - tmin) / (tmax - tmin) * pw

    def sy(y):
        return mt + (ymax - y) / (ymax - ymin) * ph

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
             f'height="{height}" viewBox="0 0 {width} {height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>']
    for k in range(6):
        xv = tmin + k * (tmax - tmin) / 5
        yv = ymin + k * (ymax - ymin) / 5
        parts.append(f'<line x1="{sx(xv):.1f}" y1="{mt}" x2="{sx(xv):.1f}" '
                     f'y2="{mt + ph}" stroke="#dddddd"/>')
        parts.append(f'<line x1="{ml}" y1="{sy(yv):.1f}" x2="{ml + pw}" '
                     f'y2="{sy(yv):.1f}" stroke="#dddddd"/>')
        parts.append(f'<text x="{sx(xv):.1f}" y="{height - 25}" '
                     f'font-size="12" text-anchor="middle">{xv:.3g}</text>')
        parts.append(f'<text x="{ml - 8}" y="{sy(yv) + 4:.1f}" font-size="12" '
                     f'text-anchor="end">{yv:.3g}</text>')
    parts.append(f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" '
                 'fill="none" stroke="black"/>')
    parts.append(f'<text x="{ml + pw / 2}" y="{height - 8}" font-size="14" '
                 'text-anchor="middle">t [s]</text>')
    for idx, (name, vals) in enumerate(series.items()):
        color = _PALETTE[idx % len(_PALETTE)]
        pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(t, vals))
        parts.append(f'<polyline points="{pts}" fill="none" '
                     f'stroke="{color}" stroke-width="1.5"/>')
        lx = ml + pw - 150
        ly = mt + 18 + 18 * idx
        parts.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 24}" '
                     f'y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{lx + 30}" y="{ly}" font-size="13">'
                     f'{name}</text>')
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts))


def _expand_channels(requested, available):
    names = []
    for item in requested:
        if item in available:
            names.append(item)
        else:
            prefixed = [c for c in available
                        if c.startswith(item + "_") and c != "t"]
            if not prefixed:
                raise KeyError(item)
            names.extend(prefixed)
    return names


def cmd_plot(args) -> int:
    requested = [c for c in args.channels.replace(",", " ").split() if c]
    if not requested:
        print("error: no channels requested", file=sys.stderr)
        return EXIT_USAGE
    cols, data = read_trace_csv(args.trace)
    try:
        names = _expand_channels(requested, cols)
    except KeyError as exc:
        print(f"error: unknown channel {exc}", file=sys.stderr)
        return EXIT_USAGE
    t = data[:, 0]
    series = {name: data[:, cols.index(name)] for name in names}
    _svg_line_chart(t, series, args.output)
    print(f"wrote {args.output} ({len(series)} channels)")
    return EXIT_OK


# -- list ---------------------------------------------------------------------


def cmd_list(_args) -> int:
    for name, s in builtin_scenarios().items():
        sig = f"{s.law}, nu={s.nu}, ell0={s.ell0:g}"
        if s.law == "ls":
            sig += f", gamma={s.gamma:g}, R0={s.R0:g}"
        else:
            sig += f", Gamma={s.Gamma:g}"
        if s.sigma_enabled:
            sig += f", sigma(max={s.sigma_max:g}, M0={s.sigma_M0:g})"
        print(f"{name:12s} {s.n_p}-state plant, {sig}, T={s.T:g}s")
    return EXIT_OK


# -- entry point ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="lsmrac",
        description="Multivariable least-squares MRAC simulator")
    sub = p.add_subparsers(dest="command", required=True)

    pr = sub.add_parser("run", help="run one scenario and export its trace")
    pr.add_argument("scenario", help="builtin name or scenario file path")
    pr.add_argument("output", help="output trace CSV path")
    pr.add_argument("--h", type=float, default=None, help="step override [s]")
    pr.add_argument("--T", type=float, default=None,
                    help="duration override [s]")
    pr.add_argument("--stride", type=int, default=None,
                    help="record stride override")
    pr.set_defaults(fn=cmd_run)

    ps = sub.add_parser("sweep", help="gain sweep with scaled covariance")
    ps.add_argument("scenario", help="builtin name or scenario file path")
    ps.add_argument("outdir", help="output directory")
    ps.add_argument("--gamma", required=True,
                    help="comma/space separated gain list (>= 4 values)")
    ps.add_argument("--c", type=float, default=0.4,
                    help="covariance scale: R0 = c * gamma (default 0.4)")
    ps.add_argument("--eps", type=float, default=0.05,
                    help="convergence threshold (default 0.05)")
    ps.set_defaults(fn=cmd_sweep)

    pf = sub.add_parser("factor",
                        help="triangular factorizations of a gain matrix")
    pf.add_argument("matrix", help="'1 2; -2 1' inline rows, or @file")
    pf.add_argument("--am", default=None,
                    help="model pole magnitudes for the scaling certificate")
    pf.add_argument("--csv", default=None, help="optional CSV output path")
    pf.set_defaults(fn=cmd_factor)

    pp = sub.add_parser("plot", help="render trace channels to a static SVG")
    pp.add_argument("trace", help="trace CSV path")
    pp.add_argument("output", help="output SVG path")
    pp.add_argument("--channels", required=True,
                    help="channel names, e.g. 'e0_1,e0_2' or group 'e0'")
    pp.set_defaults(fn=cmd_plot)

    pl = sub.add_parser("list", help="list builtin scenarios")
    pl.set_defaults(fn=cmd_list)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.fn(args)
    except Diverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ParseError, ScenarioError, SingularMinor, ValueError,
            OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except LsmracError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001 - contract maps these to code 4
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
