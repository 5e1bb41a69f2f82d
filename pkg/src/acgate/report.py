"""Report serialization: one JSON document per suite plus CSV tables.

The JSON is byte-reproducible for identical runs (sorted keys, no
timestamps, exact shortest-repr floats) and round-trips bit-exactly.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

from .errors import DataError


def _jsonable(obj):
    """Convert numpy scalars/arrays to plain Python recursively."""
    import numpy as np
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def write_report_json(report: dict, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(_jsonable(report), sort_keys=True, indent=2,
                      allow_nan=False)
    path.write_text(text + "\n", encoding="utf-8")


def load_report(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot load report {path}: {exc}") from exc


def _write_csv(path, header: list[str], rows: list[list]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(["" if v is None else repr(v) if
                             isinstance(v, float) else v for v in row])


def emit_report(report: dict, out_dir) -> list[Path]:
    """Write report.json plus the CSV tables; returns written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    json_path = out / "report.json"
    write_report_json(report, json_path)
    written.append(json_path)

    # per-seed metrics
    seed_rows = []
    for model in sorted(report["models"]):
        blob = report["models"][model]
        for rec in blob["records"]:
            seed_rows.append([
                model, rec["seed"], rec.get("test_mse"), rec.get("test_mae"),
                rec.get("test_r2"), rec.get("task_loss"),
                rec.get("recon_loss"), rec.get("kstar_sd"),
                rec.get("degenerate"), rec.get("entropy_mean"),
                rec.get("gate_sensitivity"), rec.get("kstar_mae"),
                rec.get("kstar_spearman"), rec.get("structural_lag"),
            ])
    path = out / "seed_metrics.csv"
    _write_csv(path, ["model", "seed", "test_mse", "test_mae", "test_r2",
                      "task_loss", "recon_loss", "kstar_sd", "degenerate",
                      "entropy_mean", "gate_sensitivity", "kstar_mae",
                      "kstar_spearman", "structural_lag"], seed_rows)
    written.append(path)

    # L2 per-seed and summary (headers always written, rows only for
    # valid seeds: all-degenerate models leave header-only tables)
    per_seed_rows, summary_rows = [], []
    for model in sorted(report["models"]):
        for strat, entry in sorted(report["models"][model]["l2"].items()):
            for d in entry["per_seed"]:
                per_seed_rows.append([model, strat, d["seed"], d["rho"],
                                      d["p_value"]])
            s = entry["summary"]
            if s is not None:
                summary_rows.append([model, strat, s["n_seeds"],
                                     s["mean_abs_rho"], s["median_rho"],
                                     s["reject_share"], s["fisher_p"]])
    path = out / "l2_per_seed.csv"
    _write_csv(path, ["model", "stratifier", "seed", "rho", "p_value"],
               per_seed_rows)
    written.append(path)
    path = out / "l2_summary.csv"
    _write_csv(path, ["model", "stratifier", "n_valid_seeds", "mean_abs_rho",
                      "median_rho", "reject_share", "fisher_p"], summary_rows)
    written.append(path)

    # Wilcoxon table
    wil_rows = [[r["metric"], r["reference"], r["method"], r["n"],
                 r.get("mean_diff"), r.get("median_diff"), r.get("w"),
                 r.get("p_value"), r.get("note", "")]
                for r in report["wilcoxon"]]
    path = out / "wilcoxon.csv"
    _write_csv(path, ["metric", "reference", "method", "n", "mean_diff",
                      "median_diff", "w", "p_value", "note"], wil_rows)
    written.append(path)

    # verdict matrix row
    v = report["verdict"]
    path = out / "verdict.csv"
    _write_csv(path, ["domain", "l0", "l1", "l2", "l3"],
               [[v["domain"], v["l0"], v["l1"], v["l2"], v["l3"]]])
    written.append(path)

    # plot-ready k*-vs-stratifier scatter (k* averaged over seeds)
    scatter_rows = []
    entities = report["entities"]
    for model in sorted(report["kstar_vectors"]):
        vectors = [v for v in report["kstar_vectors"][model].values()
                   if v is not None]
        if not vectors:
            continue
        import numpy as np
        mean_k = np.mean(np.asarray(vectors), axis=0)
        for strat in sorted(report["stratifiers"]):
            values = report["stratifiers"][strat]
            for ent, xi, ks in zip(entities, values, mean_k):
                scatter_rows.append([model, ent, strat, xi, float(ks)])
    path = out / "kstar_scatter.csv"
    _write_csv(path, ["model", "entity_id", "stratifier", "stratifier_value",
                      "kstar_mean"], scatter_rows)
    written.append(path)
    return written


def emit_shuffle_report(control: dict, out_dir) -> list[Path]:
    """Negative-control outputs: drop table plus both full reports."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    path = out / "shuffle_control.json"
    write_report_json(control, path)
    written.append(path)
    d = control["drop"]
    path = out / "shuffle_drop.csv"
    _write_csv(path, ["quantity", "base", "shuffled", "drop"],
               [["mean_abs_rho", d["mean_abs_rho_base"],
                 d["mean_abs_rho_shuffled"], d["mean_abs_rho_drop"]],
                ["reject_share", d["reject_share_base"],
                 d["reject_share_shuffled"], d["reject_share_drop"]],
                ["task_loss", d["task_loss_base"], d["task_loss_shuffled"],
                 d["task_loss_rel_change"]],
                ["test_r2", d["test_r2_base"], d["test_r2_shuffled"], None]])
    written.append(path)
    written.extend(emit_report(control["base"], out / "base"))
    written.extend(emit_report(control["shuffled"], out / "shuffled"))
    return written
