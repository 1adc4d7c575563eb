"""Command-line interface: run, sweep, and budget verbs."""

from __future__ import annotations

import argparse
import math
import sys
import traceback

import numpy as np

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _add_overrides(parser):
    parser.add_argument("--seed", type=int, default=None, help="override master seed")
    parser.add_argument("--photons", type=int, default=None, help="override photon budget")
    parser.add_argument("--workers", type=int, default=None, help="override worker count")
    parser.add_argument("--out", type=str, default=None, help="override output prefix")


def _apply_overrides(config, args):
    changes = {}
    for key in ("seed", "photons", "workers", "out"):
        val = getattr(args, key)
        if val is not None:
            changes[key] = val
    return config.replace(**changes) if changes else config


def _budget_for(config):
    from . import analytics, optics

    if config.kv_over_gamma <= 0.0:
        return None
    ell = optics.mean_free_path(
        config.build_geometry().rho, config.delta, config.build_velocity()
    )
    return analytics.coherence_scales(config.kv_over_gamma, ell)


def _cmd_run(args):
    from . import io, transport
    from .config import load_config

    config = _apply_overrides(load_config(args.config), args)
    estimate = transport.contrast_per_order(config)
    paths = io.emit_results(estimate, _budget_for(config), config.out)
    for p in paths:
        print(p)
    print(f"enhancement = {estimate.enhancement:.6f} "
          f"+- {estimate.enhancement_stderr:.6f}")
    return EXIT_OK


def _cmd_sweep(args):
    from . import io, transport
    from .config import ConfigError, SweepSpec, load_config

    config = _apply_overrides(load_config(args.config), args)
    try:
        values = [float(v) for v in args.values.split(",") if v.strip() != ""]
    except ValueError as exc:
        raise ConfigError(f"bad sweep values: {exc}")
    spec = SweepSpec(axis=args.axis, values=tuple(values), base=config)
    rows, summaries = run_sweep(spec)
    paths = io.emit_sweep(rows, summaries, config.out)
    for p in paths:
        print(p)
    return EXIT_OK


def run_sweep(spec):
    """Run every sweep point; per-point failures are recorded, not fatal.

    Point i uses the derived stream (master seed, point index i), so the
    sweep is reproducible regardless of which points run or fail.
    """
    from . import transport

    rows, summaries = [], []
    for i, value in enumerate(spec.values):
        point = spec.point_config(i)
        try:
            engine = transport._engine_from_config(point)
            est = engine.run(point.photons, seed=point.seed, workers=point.workers,
                             point_index=i)
            est.config = point.to_dict()
            c2 = est.contrast[1] if est.present[1] else math.nan
            c2_se = est.stderr[1] if est.present[1] else math.nan
            rows.append((value, est.enhancement, est.enhancement_stderr, c2, c2_se))
            summaries.append({
                "axis_value": value,
                "enhancement": est.enhancement,
                "enhancement_stderr": est.enhancement_stderr,
                "c2": None if math.isnan(float(c2)) else float(c2),
                "truncation_weight": est.truncation_fraction,
                "config": point.to_dict(),
            })
        except Exception as exc:  # keep sweeping, record the failure
            rows.append((value, math.nan, math.nan, math.nan, math.nan))
            summaries.append({"axis_value": value, "failed": True, "error": str(exc)})
    return rows, summaries


def _cmd_budget(args):
    import json

    from . import analytics

    if args.kv is not None:
        kv = args.kv
    elif args.v_si is not None and args.gamma_over_k is not None:
        kv = args.v_si / args.gamma_over_k
    else:
        from .config import ConfigError

        raise ConfigError("budget needs --kv or both --v-si and --gamma-over-k")
    budget = analytics.coherence_scales(kv, args.ell)
    out = {
        "kv_over_gamma": budget.kv_over_gamma,
        "n_phi": budget.n_phi,
        "tau_phi_gamma": budget.tau_phi,
        "l_phi_over_ell": budget.l_phi_over_ell,
        "b_max": budget.b_max,
        "b_max_floor": budget.b_max_floor,
    }
    print(json.dumps(out, indent=2, sort_keys=True))
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="cbsmc",
        description="Monte-Carlo coherent backscattering with Doppler decoherence",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="single configuration run")
    p_run.add_argument("--config", required=True)
    _add_overrides(p_run)
    p_run.set_defaults(func=_cmd_run)

    p_sweep = sub.add_parser("sweep", help="axis sweep over a base configuration")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--axis", required=True,
                         choices=("velocity", "detuning", "optical_thickness"))
    p_sweep.add_argument("--values", required=True,
                         help="comma-separated axis values")
    _add_overrides(p_sweep)
    p_sweep.set_defaults(func=_cmd_sweep)

    p_budget = sub.add_parser("budget", help="analytic coherence budget, no MC")
    p_budget.add_argument("--kv", type=float, default=None, help="kv/Gamma")
    p_budget.add_argument("--v-si", type=float, default=None, help="1D rms velocity, m/s")
    p_budget.add_argument("--gamma-over-k", type=float, default=None,
                          help="velocity scale Gamma/k, m/s")
    p_budget.add_argument("--ell", type=float, default=1.0,
                          help="mean free path unit for the budget")
    p_budget.set_defaults(func=_cmd_budget)
    return parser


def main(argv=None):
    from .config import ConfigError

    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        traceback.print_exc()
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
