"""Result and trace CSV emission: RFC-4180, UTF-8, deterministic bytes.

Floats are written with ``repr`` (shortest round-trip form), so identical
runs produce byte-identical files.
"""

from __future__ import annotations

import csv
import io
import math
import os
from collections import defaultdict

RESULT_COLUMNS = ("experiment", "config_hash", "seed", "p", "n", "L",
                  "step", "metric", "value", "stderr")
TRACE_COLUMNS = ("predictor", "seed", "t", "prediction", "truth",
                 "sq_error", "cmse")
SUMMARY_COLUMNS = ("experiment", "p", "n", "L", "step", "metric",
                   "mean", "sem", "n_seeds", "flag")


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        if math.isnan(value):
            return ""
        return repr(value)
    return str(value)


def _write_csv(path: str, columns, rows) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n", quoting=csv.QUOTE_MINIMAL)
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row.get(c)) for c in columns])
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


def write_results(path: str, rows: list[dict], config_hash: str) -> None:
    for row in rows:
        row.setdefault("config_hash", config_hash)
    _write_csv(path, RESULT_COLUMNS, rows)


def write_traces(path: str, rows: list[dict]) -> None:
    _write_csv(path, TRACE_COLUMNS, rows)


def read_csv(path: str) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def aggregate_rows(rows: list[dict]) -> list[dict]:
    """Per-(config point, metric) mean and standard error of the mean.

    SEM uses the sample standard deviation over seeds divided by sqrt of
    the seed count; a single seed reports SEM = 0 with a flag.
    """
    groups: dict[tuple, list[float]] = defaultdict(list)
    for row in rows:
        if row.get("value", "") == "":
            continue
        key = (row.get("experiment", ""), row.get("p", ""), row.get("n", ""),
               row.get("L", ""), row.get("step", ""), row.get("metric", ""))
        groups[key].append(float(row["value"]))

    def sort_key(key):
        exp, p, n, l, step, metric = key
        return (exp, _num(p), _num(n), _num(l), _num(step), metric)

    out = []
    for key in sorted(groups, key=sort_key):
        values = groups[key]
        k = len(values)
        mean = sum(values) / k
        if k > 1:
            var = sum((v - mean) ** 2 for v in values) / (k - 1)
            sem = math.sqrt(var / k)
            flag = ""
        else:
            sem = 0.0
            flag = "single-seed"
        exp, p, n, l, step, metric = key
        out.append({"experiment": exp, "p": p, "n": n, "L": l, "step": step,
                    "metric": metric, "mean": mean, "sem": sem,
                    "n_seeds": k, "flag": flag})
    return out


def _num(text):
    try:
        return (0, float(text))
    except (TypeError, ValueError):
        return (1, 0.0)


def write_summary(path: str, rows: list[dict]) -> None:
    _write_csv(path, SUMMARY_COLUMNS, rows)


def process_to_json(proc) -> str:
    import json
    return json.dumps({"coeffs": [repr(c) for c in proc.coeffs.tolist()],
                       "noise_std": repr(proc.noise_std),
                       "innovation_law": proc.innovation_law}, sort_keys=True)


def process_from_json(text: str):
    import json
    from ..stochastic import ArProcess
    payload = json.loads(text)
    return ArProcess(coeffs=[float(c) for c in payload["coeffs"]],
                     noise_std=float(payload["noise_std"]),
                     innovation_law=payload["innovation_law"])


def write_series_csv(path: str, series) -> None:
    rows = [{"t": t + 1, "value": float(v)} for t, v in enumerate(series.values)]
    for row in rows:
        row["seed"] = series.seed
        row["burn_in"] = series.burn_in
    _write_csv(path, ("t", "value", "seed", "burn_in"), rows)
