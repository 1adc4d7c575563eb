"""Result emission: plot-ready CSV tables and a JSON run summary."""

from __future__ import annotations

import json
import os

from . import __version__

ORDER_HEADER = "order,weight,contrast,stderr"
ANGULAR_HEADER = "theta,interference,stderr"
SWEEP_HEADER = "axis_value,enhancement,enhancement_stderr,c2,c2_stderr"


def _fmt(x):
    return repr(float(x))


def emit_results(estimate, budget, out_prefix):
    """Write the per-order CSV, optional angular CSV, and the JSON summary.

    Returns the list of written paths.  Output is byte-identical across
    reruns with the same estimate contents.
    """
    os.makedirs(os.path.dirname(out_prefix) or ".", exist_ok=True)
    written = []

    orders_path = out_prefix + "_orders.csv"
    lines = [ORDER_HEADER]
    for order, weight, contrast, stderr in estimate.order_table():
        lines.append(f"{order},{_fmt(weight)},{_fmt(contrast)},{_fmt(stderr)}")
    _write_text(orders_path, lines)
    written.append(orders_path)

    if estimate.theta is not None and estimate.interference is not None:
        angular_path = out_prefix + "_angular.csv"
        lines = [ANGULAR_HEADER]
        err = estimate.interference_stderr
        for i, theta in enumerate(estimate.theta):
            e = err[i] if err is not None else float("nan")
            lines.append(f"{_fmt(theta)},{_fmt(estimate.interference[i])},{_fmt(e)}")
        _write_text(angular_path, lines)
        written.append(angular_path)

    summary_path = out_prefix + "_summary.json"
    summary = {
        "version": __version__,
        "config": estimate.config,
        "n_photons": estimate.n_photons,
        "enhancement": estimate.enhancement,
        "enhancement_stderr": estimate.enhancement_stderr,
        "orders": [
            {"order": o, "weight": w, "contrast": c, "stderr": s}
            for o, w, c, s in estimate.order_table()
        ],
        "truncation_weight": estimate.truncation_fraction,
        "truncation_warning": estimate.truncation_warning,
        "wall_time_s": estimate.wall_time,
        "budget": _budget_dict(budget),
    }
    _write_text(summary_path, [json.dumps(summary, indent=2, sort_keys=True)])
    written.append(summary_path)
    return written


def _budget_dict(budget):
    if budget is None:
        return None
    return {
        "kv_over_gamma": budget.kv_over_gamma,
        "n_phi": budget.n_phi,
        "tau_phi_gamma": budget.tau_phi,
        "l_phi_over_ell": budget.l_phi_over_ell,
        "diffusion": budget.diffusion,
        "b_max": budget.b_max,
        "b_max_floor": budget.b_max_floor,
    }


def emit_sweep(rows, summaries, out_prefix):
    """Write the sweep CSV and its aggregate JSON summary."""
    os.makedirs(os.path.dirname(out_prefix) or ".", exist_ok=True)
    sweep_path = out_prefix + "_sweep.csv"
    lines = [SWEEP_HEADER]
    for value, enh, enh_se, c2, c2_se in rows:
        lines.append(f"{_fmt(value)},{_fmt(enh)},{_fmt(enh_se)},{_fmt(c2)},{_fmt(c2_se)}")
    _write_text(sweep_path, lines)
    summary_path = out_prefix + "_sweep_summary.json"
    _write_text(summary_path, [json.dumps({"version": __version__, "points": summaries},
                                          indent=2, sort_keys=True)])
    return [sweep_path, summary_path]


def _write_text(path, lines):
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"failed writing {path}: {exc}") from exc
