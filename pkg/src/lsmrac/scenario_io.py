"""Scenario files and trace CSV export.

The scenario format is a flat, sectioned key-value text file: hand-editable
reproductions of experiment parameter blocks. Matrices use ';'-separated
rows, vectors are whitespace-separated, reference channels are '+'-joined
term lists. Unknown sections or keys are hard errors so typos cannot pass
silently; parsing and serialization round-trip exactly.
"""

import numpy as np

from .dynamics import SignalSpec, SignalTerm
from .errors import ParseError
from .loop import Scenario, Trace

_SECTIONS = ("plant", "model", "prefilter", "reference", "controller",
             "integration")
_KEYS = {
    "": {"label"},
    "plant": {"A", "B", "C", "x0"},
    "model": {"a", "a_i", "Bm", "ym0"},
    "prefilter": {"a"},
    "controller": {"law", "nu", "ell0", "Lambda", "g", "gamma", "Gamma",
                   "R0", "Theta0", "minor_signs", "sigma_enabled",
                   "sigma_max", "sigma_M0"},
    "integration": {"h", "T", "stride", "record_information",
                    "divergence_limit"},
}


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _fmt_vector(v) -> str:
    return " ".join(_fmt(x) for x in np.asarray(v, dtype=float).ravel())


def _fmt_matrix(M) -> str:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    return "; ".join(" ".join(_fmt(x) for x in row) for row in M)


def _parse_vector(text: str, line: int, key: str) -> np.ndarray:
    try:
        return np.array([float(tok) for tok in text.split()])
    except ValueError:
        raise ParseError(f"bad numeric vector '{text}'", line, key)


def _parse_matrix(text: str, line: int, key: str) -> np.ndarray:
    rows = [_parse_vector(part, line, key) for part in text.split(";")]
    if len({r.size for r in rows}) != 1:
        raise ParseError("matrix rows have unequal lengths", line, key)
    return np.vstack(rows)


def _parse_bool(text: str, line: int, key: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "1", "yes", "on"):
        return True
    if t in ("false", "0", "no", "off"):
        return False
    raise ParseError(f"bad boolean '{text}'", line, key)


def _parse_terms(text: str, line: int, key: str):
    terms = []
    for part in text.split("+"):
        toks = part.split()
        if not toks:
            raise ParseError("empty reference term", line, key)
        kind = toks[0].lower()
        args = [float(t) for t in toks[1:]] if all(
            _is_number(t) for t in toks[1:]) else None
        if args is None:
            raise ParseError(f"bad term arguments in '{part.strip()}'",
                             line, key)
        if kind == "const" and len(args) == 1:
            terms.append(SignalTerm("const", args[0]))
        elif kind == "sin" and len(args) in (2, 3):
            terms.append(SignalTerm("sine", args[0], args[1],
                                    args[2] if len(args) == 3 else 0.0))
        elif kind == "square" and len(args) == 2:
            terms.append(SignalTerm("square", args[0], args[1]))
        else:
            raise ParseError(
                f"bad reference term '{part.strip()}' (expected 'const c', "
                "'sin amp freq [phase]' or 'square amp freq')", line, key)
    return tuple(terms)


def _is_number(tok: str) -> bool:
    try:
        float(tok)
        return True
    except ValueError:
        return False


def parse_scenario_text(text: str) -> Scenario:
    """Parse scenario source text; raises ParseError with a 1-based line."""
    section = ""
    seen: dict = {"": {}}
    r_lines: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in _SECTIONS:
                raise ParseError(f"unknown section '[{section}]'", lineno)
            seen.setdefault(section, {})
            continue
        if "=" not in line:
            raise ParseError(f"expected 'key = value', got '{line}'", lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if section == "reference":
            if not (key.startswith("r") and key[1:].isdigit()):
                raise ParseError("reference keys must be r1, r2, ...",
                                 lineno, key)
            r_lines[int(key[1:])] = (value, lineno)
            continue
        allowed = _KEYS.get(section, set())
        if key not in allowed:
            raise ParseError(f"unknown key in [{section or 'top level'}]",
                             lineno, key)
        if key in seen[section]:
            raise ParseError("duplicate key", lineno, key)
        seen[section][key] = (value, lineno)
    return _build_scenario(seen, r_lines)


def _build_scenario(seen: dict, r_lines: dict) -> Scenario:
    def need(section, key):
        try:
            return seen[section][key]
        except KeyError:
            raise ParseError(f"missing required key '{key}' in [{section}]")

    def opt(section, key, default=None):
        return seen.get(section, {}).get(key, (default, 0))

    label = opt("", "label", "scenario")[0]
    A = _parse_matrix(*_with(need("plant", "A"), "A"))
    B = _parse_matrix(*_with(need("plant", "B"), "B"))
    C = _parse_matrix(*_with(need("plant", "C"), "C"))
    x0 = _parse_vector(*_with(need("plant", "x0"), "x0"))

    m = C.shape[0]
    if "a_i" in seen.get("model", {}):
        model_a = _parse_vector(*_with(seen["model"]["a_i"], "a_i"))
    else:
        val, ln = need("model", "a")
        model_a = np.full(m, float(val))
    bm_raw = _parse_vector(*_with(need("model", "Bm"), "Bm"))
    model_bm = np.full(m, bm_raw[0]) if bm_raw.size == 1 else bm_raw
    ym0 = opt("model", "ym0")[0]
    if ym0 is not None:
        ym0 = _parse_vector(*_with(seen["model"]["ym0"], "ym0"))

    prefilter_a = None
    if "prefilter" in seen and "a" in seen["prefilter"]:
        prefilter_a = float(seen["prefilter"]["a"][0])

    if not r_lines:
        raise ParseError("missing [reference] channel definitions")
    if sorted(r_lines) != list(range(1, max(r_lines) + 1)):
        raise ParseError("reference channels must be r1..rm without gaps")
    channels = tuple(_parse_terms(r_lines[i][0], r_lines[i][1], f"r{i}")
                     for i in sorted(r_lines))

    ctl = seen.get("controller", {})
    law = opt("controller", "law", "ls")[0].lower()
    kw = dict(
        label=label, plant_A=A, plant_B=B, plant_C=C, x0=x0,
        model_a=model_a, model_bm=model_bm, ym0=ym0,
        prefilter_a=prefilter_a, signal=SignalSpec(channels=channels),
        law=law,
        nu=int(float(opt("controller", "nu", "1")[0])),
        ell0=float(opt("controller", "ell0", "1")[0]),
        h=float(opt("integration", "h", "1e-4")[0]),
        T=float(opt("integration", "T", "20")[0]),
        stride=int(float(opt("integration", "stride", "10")[0])),
    )
    if "Lambda" in ctl:
        kw["Lambda"] = _parse_matrix(*_with(ctl["Lambda"], "Lambda"))
    if "g" in ctl:
        kw["g"] = _parse_vector(*_with(ctl["g"], "g"))
    if "gamma" in ctl:
        kw["gamma"] = float(ctl["gamma"][0])
    if "Gamma" in ctl:
        kw["Gamma"] = float(ctl["Gamma"][0])
    if "R0" in ctl:
        kw["R0"] = float(ctl["R0"][0])
    if "Theta0" in ctl:
        kw["theta0"] = _parse_vector(*_with(ctl["Theta0"], "Theta0"))
    if "minor_signs" in ctl:
        kw["minor_signs"] = _parse_vector(*_with(ctl["minor_signs"],
                                                 "minor_signs"))
    if "sigma_enabled" in ctl:
        kw["sigma_enabled"] = _parse_bool(*_with(ctl["sigma_enabled"],
                                                 "sigma_enabled"))
    if "sigma_max" in ctl:
        kw["sigma_max"] = float(ctl["sigma_max"][0])
    if "sigma_M0" in ctl:
        kw["sigma_M0"] = float(ctl["sigma_M0"][0])
    itg = seen.get("integration", {})
    if "record_information" in itg:
        kw["record_information"] = _parse_bool(
            *_with(itg["record_information"], "record_information"))
    if "divergence_limit" in itg:
        kw["divergence_limit"] = float(itg["divergence_limit"][0])
    return Scenario(**kw)


def _with(pair, key):
    value, line = pair
    return value, line, key


def load_scenario(path) -> Scenario:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ParseError(f"cannot read scenario file: {exc}")
    return parse_scenario_text(text)


def scenario_to_text(s: Scenario) -> str:
    """Serialize a scenario; parsing the result reproduces it exactly."""
    out = [f"label = {s.label}", "", "[plant]",
           f"A = {_fmt_matrix(s.plant_A)}", f"B = {_fmt_matrix(s.plant_B)}",
           f"C = {_fmt_matrix(s.plant_C)}", f"x0 = {_fmt_vector(s.x0)}",
           "", "[model]", f"a_i = {_fmt_vector(s.model_a)}",
           f"Bm = {_fmt_vector(s.model_bm)}"]
    if s.ym0 is not None:
        out.append(f"ym0 = {_fmt_vector(s.ym0)}")
    if s.prefilter_a is not None:
        out += ["", "[prefilter]", f"a = {_fmt(s.prefilter_a)}"]
    out += ["", "[reference]"]
    for i, terms in enumerate(s.signal.channels, start=1):
        parts = []
        for term in terms:
            if term.kind == "const":
                parts.append(f"const {_fmt(term.amplitude)}")
            elif term.kind == "sine":
                txt = f"sin {_fmt(term.amplitude)} {_fmt(term.frequency)}"
                if term.phase != 0.0:
                    txt += f" {_fmt(term.phase)}"
                parts.append(txt)
            else:
                parts.append(f"square {_fmt(term.amplitude)} "
                             f"{_fmt(term.frequency)}")
        out.append(f"r{i} = " + " + ".join(parts))
    out += ["", "[controller]", f"law = {s.law}", f"nu = {s.nu}",
            f"ell0 = {_fmt(s.ell0)}"]
    if s.Lambda is not None and s.nu > 1:
        out.append(f"Lambda = {_fmt_matrix(s.Lambda)}")
    if s.g is not None and s.nu > 1:
        out.append(f"g = {_fmt_vector(s.g)}")
    if s.gamma is not None:
        out.append(f"gamma = {_fmt(s.gamma)}")
    if s.Gamma is not None:
        out.append(f"Gamma = {_fmt(s.Gamma)}")
    if np.isscalar(s.R0):
        out.append(f"R0 = {_fmt(s.R0)}")
    if s.theta0 is not None:
        out.append(f"Theta0 = {_fmt_vector(s.theta0)}")
    if s.minor_signs is not None:
        out.append(f"minor_signs = {_fmt_vector(s.minor_signs)}")
    if s.sigma_enabled:
        out += ["sigma_enabled = true", f"sigma_max = {_fmt(s.sigma_max)}",
                f"sigma_M0 = {_fmt(s.sigma_M0)}"]
    out += ["", "[integration]", f"h = {_fmt(s.h)}", f"T = {_fmt(s.T)}",
            f"stride = {s.stride}"]
    if s.record_information:
        out.append("record_information = true")
    if s.divergence_limit != 1e12:
        out.append(f"divergence_limit = {_fmt(s.divergence_limit)}")
    return "\n".join(out) + "\n"


def save_scenario(s: Scenario, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(scenario_to_text(s))


# -- trace CSV ---------------------------------------------------------------


def trace_csv_header(trace: Trace) -> list:
    m = trace.layout.m
    cols = ["t"]
    for tag in ("y", "ym", "e0", "u"):
        cols += [f"{tag}_{i}" for i in range(1, m + 1)]
    cols += [f"theta_{j}" for j in range(1, trace.layout.n_theta + 1)]
    cols += [f"Rmineig_{i}" for i in range(1, m + 1)]
    return cols


def write_trace_csv(trace: Trace, path) -> None:
    """Write the standard columns at 17 significant digits, so every value
    survives the text round trip bit for bit."""
    cols = trace_csv_header(trace)
    data = np.column_stack([trace.t, trace.y, trace.ym, trace.e0, trace.u,
                            trace.theta, trace.r_min_eig])
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(cols) + "\n")
        for row in data:
            fh.write(",".join(_fmt(x) for x in row) + "\n")


def read_trace_csv(path):
    """Read a trace CSV back as (column names, data array)."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if not header:
            raise ParseError("empty trace file", 1)
        cols = header.split(",")
        try:
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
        except ValueError as exc:
            raise ParseError(f"bad numeric row: {exc}")
    if data.shape[1] != len(cols):
        raise ParseError("column count does not match the header")
    t = data[:, 0]
    if np.any(np.diff(t) <= 0):
        raise ParseError("time column must be strictly increasing")
    return cols, data
