"""Command-line experiment runner.

``adicflow {spectral,deviation,limit,selftest} --config PATH [--out DIR]``

Configs are JSON or TOML.  A periodic experiment names a ``graph`` (a
``{"matrix": ...}`` or ``{"m", "edges"}`` mapping, or a path to such a file);
a random one names a ``sequence`` (``{"graphs", "probs", "seed"}``).  See
``README.md`` for every key.  Without ``--out`` the main report goes to stdout.

Exit codes: 0 ok, 1 usage or I/O, 2 domain validation, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .adic_flow import HorizonExceeded
from .graph_core import OrientedGraph, graph_from_spec, incidence, validate_graph
from .limit_harness import (PeriodicModel, deviation_exponent, eigen_observable, ks_csv,
                            limit_distribution_test, moments_csv, slope_csv)
from .observables import CylinderObservable, TailNotDecaying, check_observable
from .ordering import VershikOrdering
from .random_compacta import (NoGap, NoReturns, SequenceModel, SequenceSpec, generalized_harness,
                              sample_sequence)
from .spectral import SeriesDiverges, SpectralError, decompose

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

EXIT_OK, EXIT_USAGE, EXIT_DOMAIN, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    """Bad invocation, unreadable file or unparsable config."""


class ConfigError(ValueError):
    """Config parsed but violates the schema."""


# ---------------------------------------------------------------------------
# config


def load_config(path: str | Path | None) -> tuple[dict, Path]:
    if path is None:
        return {}, Path.cwd()
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    try:
        data = tomllib.loads(text) if path.suffix.lower() == ".toml" else json.loads(text)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise UsageError(f"malformed config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise UsageError("config must be a mapping at the top level")
    return data, path.parent


def _mapping_or_file(value, base: Path, what: str) -> dict:
    if isinstance(value, str):
        p = (base / value) if not Path(value).is_absolute() else Path(value)
        if not p.exists():
            raise ConfigError(f"{what} file {value} does not exist")
        sub, _ = load_config(p)
        return sub
    if not isinstance(value, dict):
        raise ConfigError(f"{what} must be a mapping or a file path")
    return value


@dataclass
class Experiment:
    """Everything a command needs, resolved from a config."""

    cfg: dict
    seed: int
    graph: OrientedGraph | None = None
    ordering: VershikOrdering | None = None
    spec: SequenceSpec | None = None

    def section(self, name: str) -> dict:
        sec = self.cfg.get(name, {})
        if not isinstance(sec, dict):
            raise ConfigError(f"'{name}' must be a mapping")
        return sec


def resolve(cfg: dict, base: Path, seed: int | None) -> Experiment:
    seed = int(cfg.get("seed", 0) if seed is None else seed)
    exp = Experiment(cfg, seed)
    if "graph" in cfg and "sequence" in cfg:
        raise ConfigError("give either 'graph' or 'sequence', not both")
    if "graph" in cfg:
        try:
            exp.graph = graph_from_spec(_mapping_or_file(cfg["graph"], base, "graph"))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"bad graph spec: {exc}") from exc
        rep = validate_graph(exp.graph)
        if not rep.ok:
            raise ConfigError("; ".join(rep.problems))
        if "ordering" in cfg:
            exp.ordering = VershikOrdering.from_dict(_mapping_or_file(cfg["ordering"], base, "ordering"))
            exp.ordering.validate(exp.graph)
    elif "sequence" in cfg:
        d = dict(_mapping_or_file(cfg["sequence"], base, "sequence"))
        d["graphs"] = [_mapping_or_file(x, base, "graph") if isinstance(x, str) else x for x in d.get("graphs", [])]
        if not d["graphs"]:
            raise ConfigError("sequence needs a non-empty 'graphs' list")
        exp.spec = SequenceSpec.from_dict(d)
    else:
        raise ConfigError("config needs a 'graph' or a 'sequence'")
    return exp


def _observable(d, model, g: OrientedGraph, name: str) -> CylinderObservable:
    """One observable from its config entry.

    Accepted forms: ``{"terms": [...], "constant": c}`` as written by
    ``CylinderObservable.to_dict``; ``{"indicator": word}``; ``{"constant": c}``;
    ``{"eigen": i}`` for the eigen-observable of the ``i``-th expanding basis
    vector (1-based).  ``"mean_zero": true`` subtracts the mean.
    """
    if not isinstance(d, dict):
        raise ConfigError(f"observable {name} must be a mapping")
    name = str(d.get("name", name))
    if "eigen" in d:
        if g is None:
            raise ConfigError(f"observable {name}: eigen-observables need a single graph")
        if isinstance(model, PeriodicModel):
            basis, h = model.source.sd.E_plus_basis, model.source.sd.h
        else:
            basis, h = model.basis, model.h
        i = int(d["eigen"]) - 1
        if not 0 <= i < basis.shape[1]:
            raise ConfigError(f"observable {name}: no expanding basis vector {i + 1}")
        return eigen_observable(g, h, np.real_if_close(basis[:, i]), name)
    if "indicator" in d:
        f = CylinderObservable.indicator(tuple(d["indicator"]), d.get("coeff", 1.0), name)
    elif "terms" in d or "constant" in d:
        f = CylinderObservable.from_dict({**d, "name": name})
    else:
        raise ConfigError(f"observable {name} needs 'terms', 'indicator', 'constant' or 'eigen'")
    if g is not None:
        try:
            check_observable(f, g)
        except ValueError as exc:
            raise ConfigError(f"observable {name}: {exc}") from exc
    if d.get("mean_zero", False):
        f = f + CylinderObservable.const(-model.mean(f))
    return CylinderObservable(f.terms, f.constant, name)


def observables(exp: Experiment, model, g) -> list[CylinderObservable]:
    obs = exp.cfg.get("observables")
    if not obs:
        raise ConfigError("no observables given")
    if not isinstance(obs, list):
        raise ConfigError("'observables' must be a list")
    return [_observable(d, model, g, f"f{k}") for k, d in enumerate(obs)]


def build_model(exp: Experiment):
    if exp.graph is not None:
        sd = decompose(incidence(exp.graph))
        return PeriodicModel(exp.graph, sd, exp.ordering), exp.graph
    sec = exp.section("sequence_model")
    seq = sample_sequence(exp.spec)
    model = SequenceModel(seq, lo=int(sec.get("lo", -60)), hi=int(sec.get("hi", 64)),
                          burn=int(sec.get("burn", 120)), N=int(sec.get("lyapunov_steps", 10_000)),
                          seed=exp.seed)
    g = exp.spec.graphs[0] if len(exp.spec.graphs) == 1 else None
    return model, g


def t_grid(sec: dict, model) -> np.ndarray:
    if "T" in sec:
        T = np.asarray(sec["T"], dtype=float)
    else:
        lo = float(sec.get("T_min", 16.0))
        hi = float(sec.get("T_max", model.time_scale(int(sec.get("n_max", 20)))))
        T = np.logspace(math.log10(lo), math.log10(hi), int(sec.get("points", 40)))
    if T.ndim != 1 or len(T) < 3 or np.any(T <= 0) or np.any(np.diff(T) <= 0):
        raise ConfigError("time grid must be increasing, positive and have at least 3 points")
    return T


# ---------------------------------------------------------------------------
# output helpers


def _num(x):
    """JSON-safe number: complex becomes ``[re, im]``."""
    if isinstance(x, (complex, np.complexfloating)):
        return [float(x.real), float(x.imag)]
    if isinstance(x, (np.floating, float)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    return x


def _json(obj) -> str:
    def conv(o):
        if isinstance(o, dict):
            return {str(k): conv(v) for k, v in o.items()}
        if isinstance(o, (list, tuple)):
            return [conv(v) for v in o]
        if isinstance(o, np.ndarray):
            return [conv(v) for v in o.tolist()]
        return _num(o)
    return json.dumps(conv(obj), indent=2, sort_keys=True) + "\n"


def _csv(header, rows) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    for r in rows:
        wr.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def _concat_csv(parts: list[str]) -> str:
    """Join CSV blocks that share a header line."""
    if not parts:
        return ""
    head, *_ = parts[0].split("\n", 1)
    out = [parts[0]]
    for p in parts[1:]:
        first, rest = p.split("\n", 1)
        if first != head:
            raise ValueError("CSV blocks have different headers")
        out.append(rest)
    return "".join(out)


def loglog_svg(series: dict[str, tuple[np.ndarray, np.ndarray]], width: int = 480, height: int = 320) -> str:
    """A bare log-log line chart of ``sup |integral|`` against ``T``."""
    xs = np.concatenate([np.log10(t) for t, _ in series.values()])
    ys = np.concatenate([np.log10(np.maximum(s, 1e-300)) for _, s in series.values()])
    x0, x1, y0, y1 = xs.min(), xs.max(), ys.min(), ys.max()
    pad = 40

    def px(x, y):
        u = pad + (x - x0) / max(x1 - x0, 1e-12) * (width - 2 * pad)
        v = height - pad - (y - y0) / max(y1 - y0, 1e-12) * (height - 2 * pad)
        return f"{u:.2f},{v:.2f}"

    colours = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"]
    lines = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<text x="{width // 2}" y="{height - 8}" text-anchor="middle" font-size="12">log10 T</text>',
             f'<text x="12" y="{height // 2}" font-size="12" transform="rotate(-90 12 {height // 2})" '
             'text-anchor="middle">log10 sup|S_T f|</text>']
    for k, (name, (T, s)) in enumerate(series.items()):
        pts = " ".join(px(a, b) for a, b in zip(np.log10(T), np.log10(np.maximum(s, 1e-300))))
        c = colours[k % len(colours)]
        lines.append(f'<polyline fill="none" stroke="{c}" stroke-width="1.5" points="{pts}"/>')
        lines.append(f'<text x="{pad + 4}" y="{pad + 14 * (k + 1)}" font-size="11" fill="{c}">{name}</text>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


class Sink:
    """Writes named outputs to a directory, or the primary one to stdout."""

    def __init__(self, out: str | None, stdout):
        self.dir = Path(out) if out else None
        self.stdout = stdout
        if self.dir is not None:
            try:
                self.dir.mkdir(parents=True, exist_ok=True)
            except OSError as exc:
                raise UsageError(f"cannot create output directory {out}: {exc}") from exc

    def emit(self, name: str, text: str, primary: bool = False):
        if self.dir is None:
            if primary:
                self.stdout.write(text)
            return
        try:
            (self.dir / name).write_text(text)
        except OSError as exc:
            raise UsageError(f"cannot write {name}: {exc}") from exc


# ---------------------------------------------------------------------------
# commands


def cmd_spectral(exp: Experiment, fmt: str, sink: Sink):
    if exp.graph is None:
        raise ConfigError("spectral needs a 'graph'")
    sd = decompose(incidence(exp.graph))
    rep = validate_graph(exp.graph)
    if fmt == "json":
        report = {"spectral": sd.to_dict(), "expanding_thetas": sd.expanding_thetas(),
                  "dim_plus": sd.dim_plus, "validation": {"ok": rep.ok, "positive": rep.positive,
                                                         "problems": list(rep.problems)}}
        sink.emit("spectral.json", _json(report), primary=True)
    else:
        rows = [(k, ev.value.real, ev.value.imag, ev.modulus, math.log(ev.modulus), ev.multiplicity)
                for k, ev in enumerate(sd.eigenvalues)]
        sink.emit("spectral.csv", _csv(["index", "eigenvalue_re", "eigenvalue_im", "modulus",
                                        "theta[log modulus]", "multiplicity"], rows), primary=True)


def cmd_deviation(exp: Experiment, fmt: str, sink: Sink):
    model, g = build_model(exp)
    sec = exp.section("deviation")
    fs = observables(exp, model, g)
    T = t_grid(sec, model)
    samples = int(sec.get("samples", 64))
    results = []
    for k, f in enumerate(fs):
        est = deviation_exponent(model, f, T, samples=samples, seed=[exp.seed, k],
                                 n_boot=int(sec.get("n_boot", 400)),
                                 allow_degenerate=bool(sec.get("allow_degenerate", False)))
        results.append((f.name, est))
    if fmt == "json":
        body = {name: {"slope": e.slope, "ci": list(e.ci), "degenerate": e.degenerate,
                       "T": e.T, "sup_abs_integral": e.sup_abs} for name, e in results}
        sink.emit("deviation.json", _json(body), primary=True)
    else:
        sink.emit("deviation.csv", _concat_csv([slope_csv(n, e) for n, e in results]), primary=True)
    if sec.get("svg", False):
        sink.emit("deviation.svg", loglog_svg({n: (np.asarray(e.T), np.asarray(e.sup_abs)) for n, e in results}))


def cmd_limit(exp: Experiment, fmt: str, sink: Sink):
    model, g = build_model(exp)
    sec = exp.section("limit")
    fs = observables(exp, model, g)
    pick = sec.get("observable", fs[0].name)
    named = [f for f in fs if f.name == pick]
    if not named:
        raise ConfigError(f"limit observable {pick} is not among the observables")
    f = named[0]
    samples = int(sec.get("samples", 10_000))
    tau = tuple(float(t) for t in sec.get("tau_grid", (0.0, 0.25, 0.5, 1.0)))
    extra = {}
    if exp.spec is not None and "n_list" not in sec:
        T = t_grid(exp.section("audit"), model)
        gen = generalized_harness(model, f, T, n_max=int(sec.get("n_max", 20)), n_count=int(sec.get("n_count", 3)),
                                  L=int(sec.get("L", 2)), samples=samples, tau_grid=tau, seed=exp.seed)
        rep = gen.limit
        extra = {"return_times": gen.returns, "second_growth_slope": gen.growth_slope,
                 "eps_audit": {str(e): {"passed": a.passed, "kendall_tau": a.kendall_tau, "p_value": a.p_value,
                                        "constant": a.constant} for e, a in gen.eps_audit.items()},
                 "times_are": "cylinder returns of the shifted sequence (length-L window)"}
    else:
        n_list = [int(n) for n in sec.get("n_list", (9, 12, 15))]
        rep = limit_distribution_test(model, f, n_list, samples=samples, tau_grid=tau,
                                      modulus_grid=int(sec.get("modulus_grid", 17)), seed=exp.seed,
                                      eta_samples=sec.get("eta_samples"))
    if exp.spec is not None:
        ly = model.lyap
        exps = _csv(["index", "exponent[log growth per level]", "ci_lo", "ci_hi"],
                    [(k + 1, float(e), float(c[0]), float(c[1])) for k, (e, c) in enumerate(zip(ly.exponents, ly.ci))])
        sink.emit("exponents.csv", exps)
    if fmt == "json":
        body = {"n_list": rep.n_list, "tau_grid": rep.tau_grid, "ks": rep.ks, "p_values": rep.p_values,
                "moments_sums": rep.moments_sums, "moments_eta": rep.moments_eta, "modulus": rep.modulus,
                "inversions": rep.inversions(), **extra}
        sink.emit("limit.json", _json(body), primary=True)
    else:
        sink.emit("limit_ks.csv", ks_csv(rep), primary=True)
        sink.emit("limit_moments.csv", moments_csv(rep))
        if extra:
            sink.emit("limit_extra.json", _json(extra))


def cmd_selftest(suites, tol, fmt: str, sink: Sink) -> bool:
    from .selftest import run_suites
    try:
        checks = run_suites(suites, tol)
    except KeyError as exc:
        raise UsageError(str(exc.args[0])) from exc
    if fmt == "json":
        text = _json([{"suite": c.suite, "check": c.name, "error": c.error, "tol": c.tol, "passed": c.passed}
                      for c in checks])
    else:
        text = _csv(["suite", "check", "error[abs]", "tol[abs]", "status"],
                    [(c.suite, c.name, c.error, c.tol, "PASS" if c.passed else "FAIL") for c in checks])
    sink.emit("selftest." + fmt, text, primary=True)
    ok = all(c.passed for c in checks)
    print(f"{sum(c.passed for c in checks)}/{len(checks)} checks passed", file=sys.stderr)
    return ok


# ---------------------------------------------------------------------------
# entry point


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def make_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON or TOML experiment config")
    common.add_argument("--out", help="output directory (default: primary report to stdout)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--threads", type=int, help="worker threads for compiled kernels")
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    p = _Parser(prog="adicflow", description="Adic flows on Markov compacta: experiments and checks.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("spectral", parents=[common], help="spectral report of an incidence matrix")
    sub.add_parser("deviation", parents=[common], help="deviation exponents of ergodic integrals")
    sub.add_parser("limit", parents=[common], help="limit-distribution statistics")
    st = sub.add_parser("selftest", parents=[common], help="module invariant suites")
    st.add_argument("--only", help="comma-separated suite names")
    st.add_argument("--tol", type=float, help="override every tolerance")
    return p


def _set_threads(n: int | None):
    if n is None:
        return
    if n < 1:
        raise UsageError("--threads must be positive")
    from . import _accel
    if _accel.backend() == "numba":
        import numba
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def main(argv=None, stdout=None) -> int:
    stdout = stdout or sys.stdout
    try:
        args = make_parser().parse_args(argv)
        _set_threads(args.threads)
        sink = Sink(args.out, stdout)
        if args.command == "selftest":
            suites = [s.strip() for s in args.only.split(",")] if args.only else None
            return EXIT_OK if cmd_selftest(suites, args.tol, args.format, sink) else EXIT_NUMERIC
        if not args.config:
            raise UsageError(f"{args.command} needs --config")
        cfg, base = load_config(args.config)
        exp = resolve(cfg, base, args.seed)
        {"spectral": cmd_spectral, "deviation": cmd_deviation, "limit": cmd_limit}[args.command](
            exp, args.format, sink)
        return EXIT_OK
    except UsageError as exc:
        print(f"adicflow: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SeriesDiverges, TailNotDecaying, HorizonExceeded, FloatingPointError, OverflowError) as exc:
        print(f"adicflow: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, SpectralError, NoGap, NoReturns, ValueError, KeyError, TypeError) as exc:
        print(f"adicflow: invalid input: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
