"""Experiment runner: every engine capability as a reproducible subcommand.

Each subcommand reads a strict TOML config, runs one engine operation,
and writes ``<outdir>/<subcommand>.csv`` plus ``manifest.json`` (config
echo, effective seed/trials/threads, version, wall time) and a generated
matplotlib script for the CSV. Monte Carlo outputs are byte-identical
for a fixed (config, seed) regardless of ``--threads``.

Exit codes: 0 success, 2 config error, 3 compute failure. Errors go to
stderr with the prefix ``EFLUX:<exit code>:``.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__, _mc, probability_engine as engine
from ._config import (
    ConfigError,
    build_data_fns,
    build_flux,
    build_process,
    get,
    load_config,
    mc_settings,
    need,
)
from .fd_oracle import FdConfig, compare_with_hopf_lax
from .hopf_lax_core import build_grid, make_sample_path, scan_x, solve_path, solve_power_law
from .process_models import build_joint_model, sample_joint

__all__ = ["main"]

SCHEMA_VERSION = 1


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would sys.exit(2) without the prefix
        raise ConfigError(message)


@dataclass
class _Prepared:
    compute: object            # () -> (header, rows)
    plot: dict | None
    seed: int
    trials: int
    threads: int


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


_PLOT_TEMPLATE = '''"""Generated companion plot for {csv}."""
import csv
from pathlib import Path

import matplotlib.pyplot as plt

here = Path(__file__).resolve().parent
with open(here / "{csv}", newline="") as fh:
    rows = list(csv.DictReader(fh))
{filter_line}xs = [{x_expr} for r in rows]
ys = [float(r["{ycol}"]) for r in rows]
fig, ax = plt.subplots(figsize=(7.0, 4.0))
{plot_lines}
ax.set_xlabel("{xlabel}")
ax.set_ylabel("{ycol}")
ax.set_title("{title}")
fig.tight_layout()
fig.savefig(here / "{png}", dpi=150)
print("wrote", here / "{png}")
'''


def _write_plot_script(path: Path, csv_name: str, spec: dict) -> None:
    if spec.get("filter"):
        filter_line = f'rows = [r for r in rows if {spec["filter"]}]\n'
    else:
        filter_line = ""
    if spec.get("kind") == "bar":
        plot_lines = ("ax.bar(range(len(ys)), ys)\n"
                      "ax.set_xticks(range(len(xs)), xs, rotation=60)")
    else:
        plot_lines = 'ax.plot(xs, ys, marker=".", lw=1.0)'
    text = _PLOT_TEMPLATE.format(
        csv=csv_name, filter_line=filter_line, x_expr=spec["x_expr"],
        ycol=spec["ycol"], plot_lines=plot_lines, xlabel=spec["xlabel"],
        title=spec.get("title", csv_name), png=csv_name.replace(".csv", ".png"),
    )
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _uniform_grid(lo: float, hi: float, dx: float) -> np.ndarray:
    if not dx > 0:
        raise ConfigError(f"dx must be positive, got {dx}")
    if not hi > lo:
        raise ConfigError(f"need x_max > x_min, got [{lo}, {hi}]")
    return lo + dx * np.arange(int(round((hi - lo) / dx)) + 1)


def _grid_xt(cfg) -> tuple[float, float]:
    x = float(need(cfg, "grid", "x"))
    t = float(need(cfg, "grid", "t"))
    if not t > 0:
        raise ConfigError(f"[grid] t must be positive, got {t}")
    return x, t


def _n_i(cfg, default=8):
    return get(cfg, "grid", "points_per_segment", default)


# ---------------------------------------------------------------------------
# subcommand preparers: validate config now, compute later

def _prep_sample_path(cfg, args) -> _Prepared:
    proc = build_process(cfg)
    if proc is None:
        raise ConfigError("sample-path needs a stochastic [process]")
    g_fn, gp_fn = build_data_fns(cfg)
    ys = _uniform_grid(float(need(cfg, "grid", "x_min")),
                       float(need(cfg, "grid", "x_max")),
                       float(need(cfg, "grid", "dx")))
    seed, trials, threads = mc_settings(cfg, seed=args.seed, trials=args.trials,
                                        threads=args.threads)

    def compute():
        model = build_joint_model(proc, ys, ys)
        z = sample_joint(model, _mc.block_rng(seed, 0))
        gv, gpv = z[: len(ys)], z[len(ys):]
        if g_fn is not None:
            gv = gv + g_fn(ys)
            gpv = gpv + gp_fn(ys)
        rows = [(ys[k], gv[k], gpv[k]) for k in range(len(ys))]
        return ("y", "g", "gprime"), rows

    plot = dict(x_expr='float(r["y"])', ycol="gprime", xlabel="y",
                title="sampled derivative data")
    return _Prepared(compute, plot, seed, trials, threads)


def _prep_solve(cfg, args) -> _Prepared:
    flux = build_flux(cfg)
    proc = build_process(cfg)
    g_fn, gp_fn = build_data_fns(cfg)
    x, t = _grid_xt(cfg)
    n_i = _n_i(cfg)
    seed, trials, threads = mc_settings(cfg, seed=args.seed, trials=args.trials,
                                        threads=args.threads)
    if flux.variant == "power_law":
        if g_fn is None:
            raise ConfigError("power-law solve needs a deterministic [data] profile")
        if proc is not None:
            raise ConfigError("power-law solve is deterministic; drop the [process]")
        bound = float(get(cfg, "grid", "gprime_bound", 1.0))

        def compute():
            res = solve_power_law(flux, g_fn, x, t, gprime_bound=bound)
            rows = [("result", res.y_star, res.w, res.w_left),
                    ("location", res.location.label(), res.q_value, int(res.truncated))]
            return ("record", "a", "b", "c"), rows
    else:
        if proc is None and g_fn is None:
            raise ConfigError("solve needs a [process] or a [data] profile")

        def compute():
            grid = build_grid(flux, x, t, n_i)
            if proc is not None:
                model = build_joint_model(proc, grid.points, grid.points)
                z = sample_joint(model, _mc.block_rng(seed, 0))
                npts = len(grid.points)
                gv, gpv = z[:npts], z[npts:]
                if g_fn is not None:
                    gv = gv + g_fn(grid.points)
                    gpv = gpv + gp_fn(grid.points)
            else:
                gv, gpv = g_fn(grid.points), gp_fn(grid.points)
            path = make_sample_path(grid, gv, gpv)
            res = solve_path(grid, path)
            rows = [("candidate", grid.points[k], path.objective[k], int(grid.is_vertex[k]))
                    for k in range(len(grid.points))]
            rows.append(("result", res.y_star, res.w, res.w_left))
            rows.append(("location", res.location.label(), res.q_value, int(res.truncated)))
            return ("record", "a", "b", "c"), rows

    plot = dict(filter='r["record"] == "candidate"', x_expr='float(r["a"])',
                ycol="b", xlabel="y", title="variational objective")
    return _Prepared(compute, plot, seed, trials, threads)


def _prep_scan(cfg, args) -> _Prepared:
    flux = build_flux(cfg)
    if flux.variant == "power_law":
        raise ConfigError("scan needs a flux with finite conjugate support")
    proc = build_process(cfg)
    g_fn, gp_fn = build_data_fns(cfg)
    if (proc is None) == (g_fn is None):
        raise ConfigError("scan uses either a [process] or a [data] profile, not both")
    t = float(need(cfg, "grid", "t"))
    if not t > 0:
        raise ConfigError(f"[grid] t must be positive, got {t}")
    lo = float(need(cfg, "grid", "x_min"))
    hi = float(need(cfg, "grid", "x_max"))
    dx = float(need(cfg, "grid", "dx"))
    _uniform_grid(lo, hi, dx)
    n_i = _n_i(cfg)
    seed, trials, threads = mc_settings(cfg, seed=args.seed, trials=args.trials,
                                        threads=args.threads)

    def compute():
        if g_fn is not None:
            prof = scan_x(flux, None, t, (lo, hi), dx, n_i=n_i,
                          g_fn=g_fn, gprime_fn=gp_fn)
        else:
            prof = scan_x(flux, proc, t, (lo, hi), dx, n_i=n_i,
                          rng=_mc.block_rng(seed, 0))
        header = ("x", "t", "w", "y_star", "location_class", "segment_index",
                  "vertex_index", "region", "shock_flag", "region_transition")
        rows = [(r["x"], t, r["w"], r["y_star"], r["location_class"],
                 r["segment_index"], r["vertex_index"], r["region"],
                 r["shock_flag"], r["region_transition"])
                for r in prof.rows()]
        return header, rows

    plot = dict(x_expr='float(r["x"])', ycol="w", xlabel="x", title="solution profile")
    return _Prepared(compute, plot, seed, trials, threads)


def _prep_segment_probs(cfg, args) -> _Prepared:
    flux = build_flux(cfg)
    if flux.variant == "power_law":
        raise ConfigError("segment-probs needs a flux with finite conjugate support")
    proc = build_process(cfg)
    g_fn, gp_fn = build_data_fns(cfg)
    x, t = _grid_xt(cfg)
    n_i = _n_i(cfg, default=1)
    method = get(cfg, "mc", "method", "mc")
    if method not in ("mc", "quadrature"):
        raise ConfigError(f"segment-probs method must be mc or quadrature, got {method!r}")
    seed, trials, threads = mc_settings(cfg, seed=args.seed, trials=args.trials,
                                        threads=args.threads)

    def compute():
        if method == "mc":
            probs = engine.segment_probabilities_mc(
                flux, proc, x, t, n_i, trials, seed, threads=threads,
                g_mean_fn=g_fn, gprime_mean_fn=gp_fn)
            ew, ew_se = probs.expected_w, probs.expected_w_se
        else:
            probs = engine.segment_probabilities_quadrature(
                flux, proc, x, t, n_i, g_mean_fn=g_fn, gprime_mean_fn=gp_fn)
            ew = engine.expected_solution(probs, flux, proc, trials=trials,
                                          master_seed=seed, threads=threads,
                                          g_mean_fn=g_fn, gprime_mean_fn=gp_fn)
            ew_se = ""
        rows = [("class", probs.labels[k], probs.p[k], probs.se[k])
                for k in range(len(probs.p))]
        rows.append(("expected_w", "", ew, ew_se))
        return ("record", "label", "value", "error"), rows

    plot = dict(kind="bar", filter='r["record"] == "class"', x_expr='r["label"]',
                ycol="value", xlabel="class", title="argmin class probabilities")
    return _Prepared(compute, plot, seed, trials, threads)


def _prep_cdf(cfg, args) -> _Prepared:
    flux = build_flux(cfg)
    if flux.variant == "power_law":
        raise ConfigError("cdf needs a flux with finite conjugate support")
    proc = build_process(cfg)
    g_fn, gp_fn = build_data_fns(cfg)
    x, t = _grid_xt(cfg)
    n_i = _n_i(cfg, default=1)
    target = need(cfg, "grid", "target")
    s_min = float(need(cfg, "grid", "s_min"))
    s_max = float(need(cfg, "grid", "s_max"))
    s_count = int(need(cfg, "grid", "s_count"))
    if not (s_max > s_min and s_count >= 2):
        raise ConfigError("cdf needs s_max > s_min and s_count >= 2")
    method = get(cfg, "mc", "method", "auto")
    if method not in ("auto", "mc", "quadrature"):
        raise ConfigError(f"cdf method must be auto, mc, or quadrature, got {method!r}")
    seed, trials, threads = mc_settings(cfg, seed=args.seed, trials=args.trials,
                                        threads=args.threads)

    def compute():
        curve = engine.minimum_cdf(
            flux, proc, x, t, target, np.linspace(s_min, s_max, s_count),
            n_i=n_i, method=method, trials=trials, master_seed=seed,
            threads=threads, g_mean_fn=g_fn, gprime_mean_fn=gp_fn)
        return ("s", "F"), list(zip(curve.s, curve.values))

    plot = dict(x_expr='float(r["s"])', ycol="F", xlabel="s", title=f"cdf of {target}")
    return _Prepared(compute, plot, seed, trials, threads)


def _prep_shock_density(cfg, args) -> _Prepared:
    flux = build_flux(cfg)
    if flux.variant == "power_law":
        raise ConfigError("shock-density needs a flux with finite conjugate support")
    proc = build_process(cfg)
    g_fn, gp_fn = build_data_fns(cfg)
    x, t = _grid_xt(cfg)
    n_i = _n_i(cfg, default=1)
    method = need(cfg, "mc", "method")
    if method not in ("quadrature", "fd"):
        raise ConfigError(f"shock-density method must be quadrature or fd, got {method!r}")
    delta_x = tuple(float(h) for h in get(cfg, "mc", "delta_x", [1e-2, 5e-3, 2.5e-3]))
    seed, trials, threads = mc_settings(cfg, seed=args.seed, trials=args.trials,
                                        threads=args.threads)

    def compute():
        res = engine.shock_density(flux, proc, x, t, n_i, method,
                                   delta_x=delta_x, trials=trials,
                                   master_seed=seed, threads=threads,
                                   g_mean_fn=g_fn, gprime_mean_fn=gp_fn)
        rows = []
        n_cls = len(res.labels)
        for a in range(n_cls):
            for b in range(n_cls):
                if a == b:
                    continue
                se = res.rates_se[a, b] if res.rates_se is not None else ""
                rows.append((res.labels[a], res.labels[b], res.rates[a, b], se))
        rows.append(("TOTAL", "", res.total_density, ""))
        return ("from_label", "to_label", "rate", "se"), rows

    plot = dict(kind="bar", filter='r["from_label"] != "TOTAL"',
                x_expr='r["from_label"] + ">" + r["to_label"]', ycol="rate",
                xlabel="transition", title="argmin transition densities")
    return _Prepared(compute, plot, seed, trials, threads)


def _prep_spectrum(cfg, args) -> _Prepared:
    n = int(need(cfg, "grid", "n"))
    if n < 8:
        raise ConfigError(f"[grid] n must be >= 8, got {n}")
    seed, trials, threads = mc_settings(cfg, seed=args.seed, trials=args.trials,
                                        threads=args.threads)

    def compute():
        rep = engine.spectrum_report(n)
        rows = [("diag", k + 1, rep.diag_values[k]) for k in range(n)]
        rows += [("eigenvalue", k + 1, rep.eigenvalues[k]) for k in range(n)]
        rows += [
            ("median_literal", "", rep.median_diag),
            ("median_unit", "", rep.median_diag_unit),
            ("concentration_fraction", "", rep.concentration_fraction),
            ("eigen_ratio", "", rep.eigen_ratio),
            ("reference", "", rep.reference),
            ("matches_literal", "", int(rep.matches_reference_literal)),
            ("matches_unit", "", int(rep.matches_reference_unit)),
        ]
        return ("record", "index", "value"), rows

    plot = dict(filter='r["record"] == "diag"', x_expr='float(r["index"])',
                ycol="value", xlabel="i", title="inverse-covariance diagonal")
    return _Prepared(compute, plot, seed, trials, threads)


def _prep_variance_law(cfg, args) -> _Prepared:
    flux = build_flux(cfg)
    if flux.variant != "power_law":
        raise ConfigError("variance-law needs a power_law flux")
    proc = build_process(cfg)
    if proc is None or proc.kind != "bm":
        raise ConfigError("variance-law needs Brownian-motion [process] data")
    x, t = _grid_xt(cfg)
    bound = float(get(cfg, "grid", "gprime_bound", 4.0))
    n_dense = int(get(cfg, "grid", "n_dense", 1025))
    t_values = get(cfg, "grid", "t_values", None)
    seed, trials, threads = mc_settings(cfg, seed=args.seed, trials=args.trials,
                                        threads=args.threads)

    def compute():
        res = engine.variance_law(flux, proc, x, t, trials, seed, threads=threads,
                                  gprime_bound=bound, n_dense=n_dense,
                                  t_grid=t_values)
        rows = [("var_w", "", res.var_w, res.var_w_se),
                ("mean_w", "", res.mean_w, ""),
                ("identity_residual_rel", "", res.identity_residual_rel, ""),
                ("truncated_fraction", "", res.truncated_fraction, "")]
        if res.t_grid is not None:
            rows += [("var_curve", res.t_grid[k], res.var_curve[k], "")
                     for k in range(len(res.t_grid))]
            rows += [("mean_ystar", res.t_grid[k], res.mean_ystar_curve[k], "")
                     for k in range(len(res.t_grid))]
            rows.append(("fit_exponent", "", res.fit_exponent, ""))
        return ("record", "t", "value", "error"), rows

    plot = dict(filter='r["record"] == "var_curve"', x_expr='float(r["t"])',
                ycol="value", xlabel="t", title="solution variance vs t")
    return _Prepared(compute, plot, seed, trials, threads)


def _prep_converge(cfg, args) -> _Prepared:
    x, t = _grid_xt(cfg)
    m_values = need(cfg, "grid", "m_values")
    alpha = float(get(cfg, "grid", "alpha", 0.5))
    if alpha <= 0:
        raise ConfigError(f"[grid] alpha must be positive, got {alpha}")
    seed, trials, threads = mc_settings(cfg, seed=args.seed, trials=args.trials,
                                        threads=args.threads)

    def compute():
        tab = engine.convergence_study(x, t, m_values, trials, seed, alpha=alpha,
                                       threads=threads)
        rows = [("probs", tab.m_values[k], tab.p_left[k], tab.p_interior[k],
                 tab.p_right[k]) for k in range(len(tab.m_values))]
        rows += [("diff_p_left", tab.m_values[k + 1], tab.diffs[k], "", "")
                 for k in range(len(tab.diffs))]
        rows.append(("sup_tail_freq", "", tab.sup_tail_freq, "", ""))
        rows.append(("sup_tail_bound", "", tab.sup_tail_bound, "", ""))
        return ("record", "m", "p_left", "p_interior", "p_right"), rows

    plot = dict(filter='r["record"] == "probs"', x_expr='float(r["m"])',
                ycol="p_left", xlabel="m", title="left-endpoint probability vs level")
    return _Prepared(compute, plot, seed, trials, threads)


def _prep_fd_compare(cfg, args) -> _Prepared:
    flux = build_flux(cfg)
    proc = build_process(cfg)
    g_fn, gp_fn = build_data_fns(cfg)
    if (proc is None) == (g_fn is None):
        raise ConfigError("fd-compare uses either a [process] or a [data] profile, not both")
    domain = get(cfg, "fd", "domain", [-4.0, 4.0])
    if len(domain) != 2:
        raise ConfigError("[fd] domain must be [lo, hi]")
    try:
        fd_cfg = FdConfig(
            dx=float(need(cfg, "fd", "dx")),
            cfl=float(get(cfg, "fd", "cfl", 0.9)),
            domain=(float(domain[0]), float(domain[1])),
            periodic=get(cfg, "fd", "periodic", False),
            scheme=get(cfg, "fd", "scheme", "lax_friedrichs"),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    central = float(get(cfg, "fd", "central_fraction", 0.5))
    seed, trials, threads = mc_settings(cfg, seed=args.seed, trials=args.trials,
                                        threads=args.threads)
    if g_fn is not None:
        t = float(need(cfg, "grid", "t"))
        bound = float(get(cfg, "grid", "gprime_bound", 2.0))

        def compute():
            res = compare_with_hopf_lax(flux, t, fd_cfg, g_fn=g_fn, gprime_fn=gp_fn,
                                        gprime_bound=bound, central_fraction=central)
            rows = [("l1_error", res.dx_values[k], res.l1_errors[k], "")
                    for k in range(len(res.dx_values))]
            rows.append(("order", "", res.order, ""))
            return ("record", "abscissa", "value", "error"), rows

        plot = dict(filter='r["record"] == "l1_error"', x_expr='float(r["abscissa"])',
                    ycol="value", xlabel="dx", title="L1 error vs dx")
    else:
        t_values = need(cfg, "grid", "t_values")
        seeds = get(cfg, "mc", "seeds", 200)
        if seeds < 2:
            raise ConfigError(f"[mc] seeds must be >= 2, got {seeds}")

        def compute():
            res = compare_with_hopf_lax(flux, 0.0, fd_cfg, process=proc,
                                        t_values=t_values, seeds=seeds,
                                        master_seed=seed, central_fraction=central,
                                        threads=threads)
            rows = []
            for k in range(len(res.t_values)):
                rows.append(("tv_mean", res.t_values[k], res.tv_mean[k], res.tv_se[k]))
            for k in range(len(res.t_values)):
                rows.append(("center_var", res.t_values[k], res.center_var[k],
                             res.center_var_se[k]))
            for k in range(len(res.t_values)):
                rows.append(("center_mean", res.t_values[k], res.center_mean[k], ""))
            return ("record", "abscissa", "value", "error"), rows

        plot = dict(filter='r["record"] == "tv_mean"', x_expr='float(r["abscissa"])',
                    ycol="value", xlabel="t", title="ensemble total variation vs t")
    return _Prepared(compute, plot, seed, trials, threads)


_PREPARE = {
    "sample-path": _prep_sample_path,
    "solve": _prep_solve,
    "scan": _prep_scan,
    "segment-probs": _prep_segment_probs,
    "cdf": _prep_cdf,
    "shock-density": _prep_shock_density,
    "spectrum": _prep_spectrum,
    "variance-law": _prep_variance_law,
    "converge": _prep_converge,
    "fd-compare": _prep_fd_compare,
}


def _build_parser() -> _Parser:
    parser = _Parser(prog="randflux",
                     description="Conservation-law minimization experiments")
    sub = parser.add_subparsers(dest="subcommand", required=True,
                                parser_class=_Parser)
    for name in _PREPARE:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="TOML run configuration")
        sp.add_argument("--seed", type=int, help="override [mc] seed")
        sp.add_argument("--trials", type=int, help="override [mc] trials")
        sp.add_argument("--threads", type=int, help="override [mc] threads")
        sp.add_argument("--outdir", help="override [output] outdir")
    return parser


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
        cfg = load_config(args.config)
        prepared = _PREPARE[args.subcommand](cfg, args)
    except ConfigError as exc:
        print(f"EFLUX:2:{exc}", file=sys.stderr)
        return 2
    started = time.perf_counter()
    try:
        header, rows = prepared.compute()
        outdir = Path(args.outdir if args.outdir else get(cfg, "output", "outdir", "runs"))
        outdir.mkdir(parents=True, exist_ok=True)
        csv_name = f"{args.subcommand}.csv"
        _write_csv(outdir / csv_name, header, rows)
        if prepared.plot is not None:
            _write_plot_script(
                outdir / f"plot_{args.subcommand.replace('-', '_')}.py",
                csv_name, prepared.plot)
        manifest = {
            "schema_version": SCHEMA_VERSION,
            "subcommand": args.subcommand,
            "config": cfg,
            "seed": prepared.seed,
            "trials": prepared.trials,
            "threads": prepared.threads,
            "package_version": __version__,
            "csv": csv_name,
            "wall_time_s": round(time.perf_counter() - started, 6),
        }
        with open(outdir / "manifest.json", "w", encoding="utf-8", newline="") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except Exception as exc:  # compute-phase failures map to exit 3
        print(f"EFLUX:3:{exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
