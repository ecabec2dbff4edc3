"""Markdown summary of surrogate quality, sensitivity weights and coordination runs."""

import numpy as np


def _table(header, rows):
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    for row in rows:
        lines.append("| " + " | ".join(_fmt(v) for v in row) + " |")
    return lines


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return "nan" if not np.isfinite(v) else f"{v:.4g}"
    return str(v)


def render_report(traces, metrics=None, cv=None, dx_metrics=None, title="TSO-DSO voltage stability study"):
    """
    Arguments:
      traces: dict weight mode -> CoordinationTrace
      metrics: held-out Metrics of the transmission surrogate
      cv: CvResult of the cross-validation, if run
      dx_metrics: dict feeder id -> validation metrics dict of its surrogate
    """
    out = [f"# {title}", ""]

    if metrics is not None or cv is not None or dx_metrics:
        out += ["## Surrogate accuracy", ""]
        rows = []
        if metrics is not None:
            rows.append(["VSM (held-out)", metrics.r2, metrics.mae_pct, metrics.mse])
        if cv is not None:
            rows.append([f"VSM ({len(cv.folds)}-fold mean)", cv.mean.r2, cv.mean.mae_pct, cv.mean.mse])
        for feeder, m in sorted((dx_metrics or {}).items()):
            rows.append([f"Q_L feeder {feeder}", m.get("r2"), m.get("mae_pct"), m.get("mse")])
        out += _table(["model", "R2", "MAE %", "MSE"], rows) + [""]

    sens = traces.get("sensitivity")
    if sens is not None and sens.records:
        first = sens.records[0]
        if first.a_v:
            out += ["## Voltage set-point weights (ascending)", ""]
            out += _table(["bus", "a_V"], sorted(first.a_v.items(), key=lambda kv: (kv[1], kv[0]))) + [""]
        if first.a_q:
            out += ["## Boundary reactive weights (ascending)", ""]
            out += _table(["bus", "a_Q"], sorted(first.a_q.items(), key=lambda kv: (kv[1], kv[0]))) + [""]

    for mode, trace in sorted(traces.items()):
        if not trace.records:
            continue
        first = trace.records[0]
        out += [f"## First-iteration dispatch ({mode} weights)", ""]
        rows = [["V", b, v] for b, v in sorted(first.delta_v.items())]
        rows += [["Q", b, v] for b, v in sorted(first.requested.items())]
        out += _table(["control", "bus", "delta"], rows) + [""]

    if traces:
        out += ["## Coordination summary", ""]
        rows = []
        for mode, trace in sorted(traces.items()):
            first = trace.records[0].verified_vsm if trace.records else trace.vsm_initial
            rows.append(
                [
                    mode,
                    trace.target,
                    trace.vsm_initial,
                    first,
                    trace.final_vsm,
                    trace.iterations,
                    trace.requested_mvar,
                    trace.active_controllers,
                    "yes" if trace.converged else "no",
                ]
            )
        out += _table(
            [
                "weights",
                "target MW",
                "initial VSM MW",
                "VSM after 1 iteration MW",
                "final VSM MW",
                "iterations",
                "requested MVAr",
                "active controls",
                "converged",
            ],
            rows,
        )
        out.append("")
    return "\n".join(out)
