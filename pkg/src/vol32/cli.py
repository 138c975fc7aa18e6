"""Command-line interface: pricing, figure data, validation and calibration.

Exit codes: 0 success, 1 validation failure, 2 invalid input, 3 numerical
failure, 4 calibration did not converge (best point still written).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__, bundled_path
from .errors import AccuracyWarning, ConvergenceError, DomainError, Vol32Error
from .models import NO_JUMPS, MarketEnv, SVJParams, complete_jump_params, params_from_mapping, read_param_file

EXIT_OK, EXIT_VALIDATION, EXIT_INPUT, EXIT_NUMERIC, EXIT_NOT_CONVERGED = 0, 1, 2, 3, 4


class InputError(Exception):
    """Invalid command-line input (exit 2)."""


def _fmt(x) -> str:
    return format(float(x), ".17g")


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


class RunManifest:
    """Record of one run: command, hashed inputs and outputs, seed, version."""

    def __init__(self, command: str, argv: list[str], seed: int | None = None):
        self.command, self.argv, self.seed = command, list(argv), seed
        self.inputs: list[str] = []
        self.outputs: list[str] = []

    def as_dict(self) -> dict:
        def entry(p):
            p = Path(p)
            return {"path": str(p), "sha256": _sha256(p) if p.is_file() else None}

        return {
            "command": self.command,
            "argv": self.argv,
            "inputs": [entry(p) for p in self.inputs],
            "outputs": [entry(p) for p in self.outputs],
            "seed": self.seed,
            "tool_version": __version__,
        }

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(self.as_dict(), indent=2) + "\n")


def _resolve_input(name: str) -> Path:
    """A path on disk, falling back to the bundled data directory."""
    p = Path(name)
    if p.is_file():
        return p
    bundled = Path(str(bundled_path(name)))
    if bundled.is_file():
        return bundled
    raise InputError(f"file not found: {name}")


def _load_params(name: str, model: str, units: str):
    path = _resolve_input(name)
    return path, params_from_mapping(read_param_file(path), model=model, units=units)


def _parse_strikes(text: str | None):
    if text is None or text.strip().lower() == "auto":
        return None
    parts = [t for t in text.split(",") if t.strip()]
    if not parts:
        raise InputError("empty strike list")
    try:
        strikes = np.array([float(t) for t in parts])
    except ValueError:
        raise InputError(f"strikes must be numbers: {text!r}") from None
    if np.any(strikes <= 0) or not np.all(np.isfinite(strikes)):
        raise InputError("strikes must be positive and finite")
    return strikes


def _write_csv(rows, header, out):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([r if isinstance(r, str) else _fmt(r) for r in row])
    if out is None:
        sys.stdout.write(buf.getvalue())
    else:
        Path(out).write_text(buf.getvalue())


def _finish(manifest: RunManifest, out, manifest_path):
    if out is not None:
        manifest.outputs.append(str(out))
    target = manifest_path or (f"{out}.manifest.json" if out is not None else None)
    if target is None:
        sys.stderr.write(json.dumps(manifest.as_dict()) + "\n")
    else:
        manifest.write(target)


# ---------------------------------------------------------------------------
# price
# ---------------------------------------------------------------------------

def cmd_price(args) -> int:
    from .equity import CosPricer, log_return_cf
    from .implied import bs_implied_vol
    from .transforms import g_svj
    from .vix import VIXPricer32, VIXPricerSVJ
    from .equity import variance_swap_strike

    if not args.maturity > 0:
        raise InputError("maturity must be positive")
    T = args.maturity
    path, (params, jumps, env) = _load_params(args.params, args.model, args.units)
    manifest = RunManifest(f"price {args.product}", args.argv)
    manifest.inputs.append(str(path))
    strikes = _parse_strikes(args.strikes)

    if args.product == "varswap":
        if args.model == "svj":
            jp = params.jumps
            k_var = (float(g_svj(params.v0, T, params)) + jp.lam * T * jp.second_moment) / T
        else:
            k_var = variance_swap_strike(T, params, jumps)
        _write_csv([(T, k_var, math.sqrt(k_var))], ["maturity", "variance_strike", "vol_strike"], args.out)
        _finish(manifest, args.out, args.manifest)
        return EXIT_OK

    if args.product == "vix":
        pricer = (VIXPricerSVJ(params, env, T=T) if args.model == "svj" else VIXPricer32(params, jumps, env, T=T))
        if strikes is None:
            strikes = pricer.forward * np.linspace(0.8, 1.3, 11)
        calls = pricer.call(strikes)
        prices = calls if args.kind == "call" else pricer.put(strikes)
        vols = pricer.implied_vols(strikes)
        rows = list(zip(strikes, prices, vols))
    else:
        if strikes is None:
            width = 0.1 if T < 0.1 else 0.3
            strikes = env.s0 * math.exp(env.r * T) * np.linspace(1 - width, 1 + width, 21)
        phi = log_return_cf(params, T, jumps, env)
        pricer = CosPricer(phi, T, env)
        prices = pricer.price(strikes, args.kind)
        vols = bs_implied_vol(prices, env.s0, strikes, T, env.r, args.kind)
        rows = list(zip(strikes, prices, np.atleast_1d(vols)))
    _write_csv(rows, ["strike", "price", "implied_vol"], args.out)
    _finish(manifest, args.out, args.manifest)
    return EXIT_OK


# ---------------------------------------------------------------------------
# reproduce-figure
# ---------------------------------------------------------------------------

def _svg_line_plot(series, xlabel, ylabel, title, path, points=None):
    """Minimal SVG: one polyline per series, optional scatter points."""
    width, height, pad = 640, 420, 60
    xs = np.concatenate([np.asarray(s[1]) for s in series] + ([np.asarray(points[1])] if points else []))
    ys = np.concatenate([np.asarray(s[2]) for s in series] + ([np.asarray(points[2])] if points else []))
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(ys.min()), float(ys.max())
    if y1 == y0:
        y1 = y0 + 1.0
    ymargin = 0.05 * (y1 - y0)
    y0, y1 = y0 - ymargin, y1 + ymargin

    def sx(x):
        return pad + (x - x0) / (x1 - x0) * (width - 2 * pad)

    def sy(y):
        return height - pad - (y - y0) / (y1 - y0) * (height - 2 * pad)

    colours = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"]
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<rect x="{pad}" y="{pad}" width="{width - 2 * pad}" height="{height - 2 * pad}" '
             'fill="none" stroke="black"/>',
             f'<text x="{width / 2}" y="{pad / 2}" text-anchor="middle" font-size="14">{title}</text>',
             f'<text x="{width / 2}" y="{height - 15}" text-anchor="middle" font-size="12">{xlabel}</text>',
             f'<text x="15" y="{height / 2}" text-anchor="middle" font-size="12" '
             f'transform="rotate(-90 15 {height / 2})">{ylabel}</text>']
    for i in range(5):
        xv = x0 + i * (x1 - x0) / 4
        yv = y0 + i * (y1 - y0) / 4
        parts.append(f'<text x="{sx(xv):.1f}" y="{height - pad + 16}" text-anchor="middle" font-size="10">{xv:.4g}</text>')
        parts.append(f'<text x="{pad - 6}" y="{sy(yv) + 3:.1f}" text-anchor="end" font-size="10">{yv:.4g}</text>')
    for k, (label, x, y) in enumerate(series):
        pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x, y))
        colour = colours[k % len(colours)]
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{colour}" stroke-width="1.5"/>')
        parts.append(f'<text x="{width - pad - 4}" y="{pad + 16 + 14 * k}" text-anchor="end" font-size="11" '
                     f'fill="{colour}">{label}</text>')
    if points:
        label, x, y = points
        for a, b in zip(x, y):
            parts.append(f'<circle cx="{sx(a):.2f}" cy="{sy(b):.2f}" r="2.5" fill="black"/>')
        parts.append(f'<text x="{pad + 6}" y="{pad + 16}" font-size="11">{label} (dots)</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")


def _slope(x, y) -> float:
    return float(np.polyfit(np.asarray(x, float), np.asarray(y, float), 1)[0])


def _smile_diagnostics(moneyness, vols) -> dict:
    i = int(np.argmin(vols))
    interior = 0 < i < len(vols) - 1
    curvature = float(vols[i - 1] - 2 * vols[i] + vols[i + 1]) if interior else float("nan")
    return {
        "min_moneyness": float(moneyness[i]),
        "min_vol": float(vols[i]),
        "interior_minimum": bool(interior),
        "left_wing_excess_vol_points": float(100 * (vols[0] - vols[i])),
        "right_wing_excess_vol_points": float(100 * (vols[-1] - vols[i])),
        "second_difference_at_min": curvature,
    }


def cmd_reproduce_figure(args) -> int:
    from .calibration import objective, read_quotes_csv
    from .equity import equity_implied_vols
    from .vix import VIXPricer32, VIXPricerSVJ

    n = args.figure
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(f"reproduce-figure {n}", args.argv)
    diag: dict = {"figure": n}
    rows = []
    if n in (1, 2):
        name, model = ("drimus32.txt", "32j") if n == 1 else ("heston_drimus.txt", "svj")
        path, (params, jumps, env) = _load_params(name, model, "variance")
        manifest.inputs.append(str(path))
        series = []
        for T in (0.25, 0.5):
            pricer = VIXPricer32(params, jumps, env, T=T) if model == "32j" else VIXPricerSVJ(params, env, T=T)
            F = pricer.forward
            strikes = F * np.linspace(0.8, 1.3, 11)
            vols = pricer.implied_vols(strikes)
            rows += [(T, F, k, k / F, v) for k, v in zip(strikes, vols)]
            slope = _slope(strikes / F, vols)
            diag[f"T={T}"] = {
                "vix_forward": F,
                "slope": slope,
                "skew_sign": "positive" if slope > 0 else "negative",
                "strictly_increasing": bool(np.all(np.diff(vols) > 0)),
                "strictly_decreasing": bool(np.all(np.diff(vols) < 0)),
            }
            series.append((f"T={T}", strikes / F, vols))
        header = ["maturity", "vix_forward", "strike", "moneyness", "implied_vol"]
        title = "VIX call implied vols, " + ("3/2 model" if n == 1 else "Heston model")
        _svg_line_plot(series, "K / E[VIX_T]", "implied vol", title, out_dir / f"figure{n}.svg")
    else:
        name = "fig3.txt" if n == 3 else "fig4.txt"
        path, (params, jumps, env) = _load_params(name, "32j", "variance")
        qpath = _resolve_input("synthetic_fig4_noisy.csv")
        manifest.inputs += [str(path), str(qpath)]
        quotes = read_quotes_csv(qpath, env)
        T = 9 / 365
        moneyness = np.linspace(0.9, 1.1, 41)
        vols = equity_implied_vols(env.s0 * moneyness, T, env, params, jumps)
        rows = [(T, m * env.s0, m, v) for m, v in zip(moneyness, vols)]
        diag.update(_smile_diagnostics(moneyness, vols))
        diag["rmse_vs_synthetic_quotes"] = objective(params, jumps, quotes)
        diag["quotes"] = "synthetic (generated from the bundled fig4 parameters with 0.25 vol-point noise)"
        header = ["maturity", "strike", "moneyness", "implied_vol"]
        title = "9-day equity smile, 3/2 " + ("diffusion" if n == 3 else "plus jumps")
        _svg_line_plot([("model", moneyness, vols)], "K / S0", "implied vol", title, out_dir / f"figure{n}.svg",
                       points=("synthetic quotes", [q.strike / env.s0 for q in quotes.quotes],
                               [q.implied_vol for q in quotes.quotes]))
    csv_path = out_dir / f"figure{n}.csv"
    _write_csv(rows, header, csv_path)
    diag_path = out_dir / f"figure{n}_diagnostics.json"
    diag_path.write_text(json.dumps(diag, indent=2) + "\n")
    manifest.outputs += [str(csv_path), str(out_dir / f"figure{n}.svg"), str(diag_path)]
    manifest.write(out_dir / f"figure{n}.manifest.json")
    print(json.dumps(diag, indent=2))
    return EXIT_OK


# ---------------------------------------------------------------------------
# validate
# ---------------------------------------------------------------------------

def cmd_validate(args) -> int:
    from .validation import format_report, run_suite

    if args.paths < 100:
        raise InputError("--paths must be at least 100")
    checks = run_suite(args.suite, args.paths, args.seed)
    report = format_report(checks)
    manifest = RunManifest(f"validate {args.suite}", args.argv, seed=args.seed)
    if args.out:
        Path(args.out).write_text(report + "\n")
    print(report)
    _finish(manifest, args.out, args.manifest)
    return EXIT_VALIDATION if any(c.failed for c in checks) else EXIT_OK


# ---------------------------------------------------------------------------
# calibrate
# ---------------------------------------------------------------------------

DEFAULT_START_JUMPS = dict(lam=0.1, sigma=0.2, mu=-0.1)


def cmd_calibrate(args) -> int:
    from .calibration import calibrate, read_quotes_csv, write_residuals_csv
    from .models import write_param_file

    qpath = _resolve_input(args.quotes)
    ipath, (init, init_jumps, env) = _load_params(args.init, "32j", args.units)
    quotes = read_quotes_csv(qpath, env)
    use_jumps = args.jumps == "on"
    if use_jumps and init_jumps.lam == 0:
        init_jumps = complete_jump_params(**DEFAULT_START_JUMPS)
    fixed = {}
    for name in filter(None, (args.fix or "").split(",")):
        name = name.strip()
        values = {"kappa": init.kappa, "theta": init.theta, "epsilon": init.epsilon, "rho": init.rho,
                  "v0": init.v0, "lam": init_jumps.lam, "mu": init_jumps.mu, "sigma": init_jumps.sigma}
        if name not in values:
            raise InputError(f"unknown parameter to fix: {name}")
        fixed[name] = values[name]
    method = {"nm": "nelder_mead", "lm": "lm"}[args.method]
    result = calibrate(quotes, init, init_jumps, jumps=use_jumps, fixed=fixed, method=method, seed=args.seed)
    out = Path(args.out)
    write_param_file(out, result.params, result.jumps, env,
                     header=f"calibrated to {qpath.name}; rmse={_fmt(result.rmse)}; converged={result.converged}")
    resid = Path(args.residuals) if args.residuals else out.with_suffix(".residuals.csv")
    write_residuals_csv(resid, quotes, result)
    manifest = RunManifest("calibrate", args.argv, seed=args.seed)
    manifest.inputs += [str(qpath), str(ipath)]
    manifest.outputs.append(str(resid))
    _finish(manifest, out, args.manifest)
    print(f"rmse={_fmt(result.rmse)} converged={result.converged} iterations={result.iterations}")
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vol32", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker cap (falls back to VOL32_THREADS)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("price", help="price equity options, VIX options or variance swaps")
    p.add_argument("product", choices=["equity", "vix", "varswap"])
    p.add_argument("--params", required=True, help="parameter file (path or bundled name)")
    p.add_argument("--maturity", type=float, required=True, help="option maturity in years")
    p.add_argument("--strikes", default="auto", help="comma-separated strikes or 'auto'")
    p.add_argument("--kind", choices=["call", "put"], default="call")
    p.add_argument("--model", choices=["32j", "svj"], default="32j")
    p.add_argument("--units", choices=["variance", "vol"], default="variance",
                   help="whether theta and v0 in the file are variances or vols")
    p.add_argument("--out", default=None, help="output CSV (default: stdout)")
    p.add_argument("--manifest", default=None, help="manifest path (default: OUT.manifest.json)")
    p.set_defaults(func=cmd_price)

    p = sub.add_parser("reproduce-figure", help="regenerate figure curve data")
    p.add_argument("figure", type=int, choices=[1, 2, 3, 4])
    p.add_argument("--out-dir", default=".", help="directory for the CSV, SVG, diagnostics and manifest")
    p.set_defaults(func=cmd_reproduce_figure)

    p = sub.add_parser("validate", help="Monte Carlo and identity cross-checks")
    p.add_argument("--suite", choices=["transforms", "vix", "equity", "all"], default="all")
    p.add_argument("--paths", type=int, default=200_000, help="Monte Carlo paths per check (>= 100)")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", default=None, help="report file (the report is also printed)")
    p.add_argument("--manifest", default=None)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("calibrate", help="fit parameters to an implied-vol quote CSV")
    p.add_argument("--quotes", required=True, help="quote CSV (path or bundled name)")
    p.add_argument("--init", required=True, help="initial parameter file (path or bundled name)")
    p.add_argument("--jumps", choices=["on", "off"], default="on")
    p.add_argument("--method", choices=["nm", "lm"], default="nm",
                   help="Nelder-Mead with restarts, or Levenberg-Marquardt")
    p.add_argument("--fix", default="", help="comma-separated parameter names held at their initial values")
    p.add_argument("--units", choices=["variance", "vol"], default="variance")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="calibrated.txt")
    p.add_argument("--residuals", default=None, help="per-quote residual CSV (default: OUT with .residuals.csv)")
    p.add_argument("--manifest", default=None)
    p.set_defaults(func=cmd_calibrate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code not in (0, None) else EXIT_OK
    args.argv = list(sys.argv[1:] if argv is None else argv)
    if args.threads is not None:
        if args.threads < 1:
            print("error: --threads must be >= 1", file=sys.stderr)
            return EXIT_INPUT
        os.environ["VOL32_THREADS"] = str(args.threads)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default", AccuracyWarning)
            return args.func(args)
    except (InputError, DomainError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ConvergenceError, ArithmeticError, Vol32Error) as exc:
        print(f"numerical failure in {args.command}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
