"""Layered audit orchestration: multi-seed training, L0 forecast metrics,
L1 degeneracy gating, L2 stratifier alignment with permutation tests,
L3 truth recovery, paired seed-level comparisons, and the proxy-shuffle
negative control.

Audit layers for one trained seed:
  L0  test MSE / MAE / R^2 (reported, never certified)
  L1  cross-entity sd of the effective lag; sd <= epsilon marks the seed
      degenerate and bars it from L2
  L2  |Spearman| of the effective lag against each pre-specified
      stratifier, tested against an entity-label permutation null
  L3  MAE / Spearman against the true lag centers when truth exists
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .ardl import ardl_predict, fit_grouped_ardl
from .config import RunConfig
from .errors import ConfigError, DataError, ProtocolError
from .panel import (Panel, SegmentView, chronological_split, fit_normalizer,
                    load_panel, stratifier_values)
from .stats import (UndefinedStatisticError, forecast_metrics, permutation_p,
                    spearman, summarize_l2, wilcoxon_paired)
from .synth import generate
from .training import PERM_STREAM, SHUFFLE_STREAM, derived_rng, train_model

SCHEMA_VERSION = 1
LAG_METRICS = ("kstar_mae", "kstar_spearman")
FORECAST_METRICS = ("task_loss", "test_mse", "test_mae", "test_r2")


@dataclass
class DatasetBundle:
    """Prepared data for one suite: raw panel plus entity-level columns."""

    panel: Panel
    truth: dict[str, np.ndarray]          # may be empty
    segments: tuple[SegmentView, SegmentView, SegmentView]


def prepare_dataset(config: RunConfig) -> DatasetBundle:
    ds = config.dataset
    truth: dict[str, np.ndarray] = {}
    if ds.kind == "synthetic":
        sp = generate(ds.dgp)
        panel = sp.panel
        truth = {"z": sp.z, "k_center": sp.k_center.astype(np.float64)}
    else:
        panel = load_panel(ds.panel_csv, ds.schema)
        if ds.truth_csv:
            frame = pd.read_csv(ds.truth_csv).set_index("entity_id")
            frame = frame.reindex(panel.entities)
            if frame.isna().any().any():
                raise DataError("truth CSV does not cover every entity")
            for col in frame.columns:
                truth[col] = frame[col].to_numpy(dtype=np.float64)
    segments = chronological_split(panel, config.split)
    return DatasetBundle(panel=panel, truth=truth, segments=segments)


def resolve_stratifiers(config: RunConfig, bundle: DatasetBundle
                        ) -> dict[str, np.ndarray]:
    """Entity-level stratifier vectors, by name.

    Names resolve against the truth table first, then against schema
    stratifier columns (as train-window means: pre-test information only).
    """
    out: dict[str, np.ndarray] = {}
    from_panel = stratifier_values(bundle.panel, bundle.segments[0])
    for name in config.audit.stratifiers:
        if name in bundle.truth:
            out[name] = bundle.truth[name]
        elif name in from_panel:
            out[name] = from_panel[name]
        else:
            raise ConfigError(f"stratifier {name!r} not found in truth or "
                              "schema stratifier columns")
    return out


# ----------------------------------------------------------------------
# one (model, seed) evaluation
# ----------------------------------------------------------------------

def _proxy_shuffled_panel(panel: Panel, seed: int) -> Panel:
    """Permute proxy vectors across entities with a seeded non-identity
    permutation (redrawn until non-identity)."""
    if panel.n_entities < 2:
        raise DataError("cannot permute proxies with fewer than 2 entities")
    rng = derived_rng(seed, SHUFFLE_STREAM)
    identity = np.arange(panel.n_entities)
    perm = rng.permutation(panel.n_entities)
    while np.array_equal(perm, identity):
        perm = rng.permutation(panel.n_entities)
    return panel.replace(proxies=panel.proxies[perm])


def run_one_seed(config: RunConfig, model_name: str, seed: int,
                 shuffle_proxies: bool = False,
                 checkpoint_dir: str | None = None) -> dict:
    """Train and audit a single (model, seed) cell; returns a plain dict
    ready for aggregation/serialization.

    With ``checkpoint_dir``, a fitted model found there is reloaded
    instead of retraining, and a freshly trained one is saved there.
    """
    bundle = prepare_dataset(config)
    panel = bundle.panel
    if shuffle_proxies:
        panel = _proxy_shuffled_panel(panel, seed)
    train_seg, val_seg, test_seg = bundle.segments
    norm = fit_normalizer(panel, train_seg)
    panel_n = norm.apply(panel)

    rec: dict = {"model": model_name, "seed": seed}
    if model_name == "grouped_ardl":
        fitted = fit_grouped_ardl(panel_n, train_seg, config.model.k_max,
                                  config.audit.ardl_groups)
        preds = ardl_predict(fitted, panel_n, test_seg)
        rec["ridge_fallback"] = fitted.ridge_fallback
        rec["recon_loss"] = None
        lag = None
        structural = False
    else:
        model = _load_or_train(config, model_name, seed, panel_n, train_seg,
                               val_seg, checkpoint_dir, rec)
        out = model.evaluate(panel_n, test_seg)
        preds = out.predictions
        rec["recon_loss"] = out.recon_loss
        if model_name == "plain_lstm":
            lag = model.diagnostic_lag_profile(panel_n, test_seg)
            structural = False
        else:
            lag = out.lag
            structural = True
        rec["gate_sensitivity"] = model.gate_sensitivity(panel_n)

    y_true = panel_n.target[:, test_seg.first_valid:test_seg.end + 1]
    m = forecast_metrics(y_true.reshape(-1), preds.reshape(-1))
    rec["test_mse"] = m.mse
    rec["test_mae"] = m.mae
    rec["test_r2"] = m.r2
    rec["task_loss"] = m.mse

    rec["structural_lag"] = structural
    if lag is not None:
        rec["kstar"] = lag.k_star.tolist()
        rec["kstar_sd"] = lag.k_star_sd
        rec["entropy_mean"] = float(np.mean(lag.entropy))
        if structural:
            rec["degenerate"] = bool(lag.k_star_sd <= config.audit.epsilon)
    else:
        rec["kstar"] = None
        rec["kstar_sd"] = None
        rec["entropy_mean"] = None

    # L3 against truth, for any model exposing a lag summary
    truth_k = bundle.truth.get("k_center")
    if truth_k is not None and lag is not None:
        rec["kstar_mae"] = float(np.mean(np.abs(lag.k_star - truth_k)))
        try:
            rec["kstar_spearman"] = spearman(lag.k_star, truth_k)
        except UndefinedStatisticError:
            rec["kstar_spearman"] = None
    return rec


def _load_or_train(config: RunConfig, model_name: str, seed: int, panel_n,
                   train_seg, val_seg, checkpoint_dir: str | None,
                   rec: dict):
    from dataclasses import asdict
    from pathlib import Path

    from .checkpoint import load_checkpoint, save_checkpoint
    from .training import build_model

    hyper = {"model": asdict(config.model), "seed": seed}
    path = None
    if checkpoint_dir is not None:
        path = Path(checkpoint_dir) / f"{model_name}_seed{seed}.ckpt"
        if path.exists():
            variant, stored_hyper, state = load_checkpoint(path)
            if variant != model_name or stored_hyper != hyper:
                raise DataError(f"checkpoint {path} does not match the "
                                "requested model/hyperparameters")
            model = build_model(model_name, panel_n, config.model, seed,
                                config.train.init_scale)
            model.load_state_dict(state)
            rec["loaded_from_checkpoint"] = True
            return model
    model, history = train_model(model_name, panel_n, train_seg, val_seg,
                                 config.model, config.train, seed)
    rec["best_epoch"] = history.best_epoch
    rec["epochs_run"] = history.epochs_run
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        save_checkpoint(path, model_name, hyper, model.state_dict())
    return model


def _worker(args):
    config, model_name, seed, shuffle, ckpt_dir = args
    return run_one_seed(config, model_name, seed, shuffle_proxies=shuffle,
                        checkpoint_dir=ckpt_dir)


# ----------------------------------------------------------------------
# suite
# ----------------------------------------------------------------------

def _mean_sd(values) -> tuple[float | None, float | None]:
    vals = [v for v in values if v is not None]
    if not vals:
        return None, None
    return float(np.mean(vals)), float(np.std(vals))


def _aggregate_model(config: RunConfig, records: list[dict],
                     stratifiers: dict[str, np.ndarray]) -> dict:
    """Cross-seed aggregation for one model's seed records."""
    agg: dict = {"n_seeds": len(records)}
    l0 = {}
    for key in ("test_mse", "test_mae", "test_r2", "task_loss"):
        mean, sd = _mean_sd([r[key] for r in records])
        l0[f"{key}_mean"] = mean
        l0[f"{key}_sd"] = sd
    agg["l0"] = l0

    structural = all(r["structural_lag"] for r in records)
    agg["structural_lag"] = structural
    sd_mean, _ = _mean_sd([r["kstar_sd"] for r in records])
    ent_mean, _ = _mean_sd([r["entropy_mean"] for r in records])
    sens_mean, _ = _mean_sd([r.get("gate_sensitivity") for r in records])
    agg["l1"] = {
        "epsilon": config.audit.epsilon,
        "kstar_sd_mean": sd_mean,
        "n_degenerate": sum(1 for r in records if r.get("degenerate")),
        "applicable": structural,
    }
    agg["gate"] = {"entropy_mean": ent_mean, "sensitivity_mean": sens_mean}

    # L2: structural, non-degenerate seeds only
    l2: dict = {}
    if structural and stratifiers:
        floor = 1.0 / (config.audit.permutations + 1)
        for j, (name, xi) in enumerate(sorted(stratifiers.items())):
            per_seed = []
            for r in records:
                if r.get("degenerate"):
                    continue
                seed = r["seed"]
                try:
                    test = permutation_p(
                        np.asarray(r["kstar"]), xi,
                        b=config.audit.permutations,
                        seed=int(derived_rng(seed, PERM_STREAM, j)
                                 .integers(0, 2 ** 63)))
                except UndefinedStatisticError:
                    continue
                per_seed.append({"seed": seed, "rho": test.observed_rho,
                                 "p_value": test.p_value})
            entry: dict = {"per_seed": per_seed}
            if per_seed:
                summary = summarize_l2([d["rho"] for d in per_seed],
                                       [d["p_value"] for d in per_seed],
                                       alpha=config.audit.alpha,
                                       zero_floor=floor)
                entry["summary"] = {
                    "mean_abs_rho": summary.mean_abs_rho,
                    "median_rho": summary.median_rho,
                    "reject_share": summary.reject_share,
                    "fisher_p": summary.fisher_p,
                    "n_seeds": summary.n_seeds,
                }
            else:
                entry["summary"] = None
            l2[name] = entry
    agg["l2"] = l2

    l3 = None
    if any("kstar_mae" in r for r in records):
        mae_mean, mae_sd = _mean_sd([r.get("kstar_mae") for r in records])
        sp_mean, sp_sd = _mean_sd([r.get("kstar_spearman") for r in records])
        l3 = {"kstar_mae_mean": mae_mean, "kstar_mae_sd": mae_sd,
              "kstar_spearman_mean": sp_mean, "kstar_spearman_sd": sp_sd}
    agg["l3"] = l3
    return agg


def _verdict_row(config: RunConfig, agg: dict, has_truth: bool) -> dict:
    """Verdict for the reference model.

    Decision rules (repo conventions, documented in README): L0 is never
    certified; L1 'yes' needs a majority of non-degenerate seeds; L2
    'yes' needs >= 1 valid seed plus some stratifier with Fisher p <
    alpha and reject share >= 0.5; L3 'yes' needs mean Spearman vs truth
    >= 0.5.
    """
    n_seeds = agg["n_seeds"]
    n_deg = agg["l1"]["n_degenerate"]
    l1 = "yes" if (n_seeds - n_deg) > n_seeds / 2.0 else "no"

    if not config.audit.stratifiers:
        l2 = "n/a"
    elif all(entry["summary"] is None for entry in agg["l2"].values()) \
            or not agg["l2"]:
        l2 = "degenerate"
    else:
        l2 = "no"
        for entry in agg["l2"].values():
            s = entry["summary"]
            if s and s["fisher_p"] < config.audit.alpha \
                    and s["reject_share"] >= 0.5:
                l2 = "yes"
                break

    if not has_truth:
        l3 = "n/a"
    elif agg["l3"] is None or agg["l3"]["kstar_spearman_mean"] is None:
        l3 = "degenerate"
    else:
        l3 = "yes" if agg["l3"]["kstar_spearman_mean"] >= 0.5 else "no"
    return {"domain": config.dataset.domain, "l0": "n/c", "l1": l1,
            "l2": l2, "l3": l3}


def _suite_wilcoxon(config: RunConfig, by_model: dict[str, list[dict]]
                    ) -> list[dict]:
    """Reference-vs-others paired tests on the admitted metrics."""
    ref = config.audit.reference
    rows: list[dict] = []
    metrics = list(FORECAST_METRICS)
    if config.dataset.domain == "synthetic":
        metrics += list(LAG_METRICS)
    for other in config.audit.roster:
        if other == ref:
            continue
        for metric in metrics:
            row = paired_rows(by_model[other], by_model[ref], other, ref,
                              metric)
            if row is not None:
                rows.append(row)
    return rows


def paired_rows(records_a: list[dict], records_b: list[dict], name_a: str,
                name_b: str, metric: str) -> dict | None:
    """One Wilcoxon row for metric of (method - reference), seed-paired."""
    a_by_seed = {r["seed"]: r.get(metric) for r in records_a}
    b_by_seed = {r["seed"]: r.get(metric) for r in records_b}
    if set(a_by_seed) != set(b_by_seed):
        raise ProtocolError("paired comparison needs identical seed sets")
    seeds = sorted(a_by_seed)
    a = [a_by_seed[s] for s in seeds]
    b = [b_by_seed[s] for s in seeds]
    if any(v is None for v in a + b):
        return None
    row = {"metric": metric, "reference": name_b, "method": name_a,
           "n": len(seeds)}
    try:
        res = wilcoxon_paired(np.asarray(a), np.asarray(b))
        row.update(mean_diff=res.mean_diff, median_diff=res.median_diff,
                   w=res.w, p_value=res.p_value, note="")
    except UndefinedStatisticError as exc:
        diffs = np.asarray(a) - np.asarray(b)
        row.update(mean_diff=float(np.mean(diffs)),
                   median_diff=float(np.median(diffs)),
                   w=None, p_value=None, note=f"no-test: {exc}")
    return row


def run_suite(config: RunConfig, jobs: int = 1,
              shuffle_proxies: bool = False,
              checkpoint_dir: str | None = None) -> dict:
    """Execute the full audit for every roster model and assemble the
    versioned report document."""
    config.validate()
    bundle = prepare_dataset(config)
    stratifiers = resolve_stratifiers(config, bundle)

    tasks = [(config, model, seed, shuffle_proxies, checkpoint_dir)
             for model in config.audit.roster for seed in config.audit.seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_worker, tasks))
    else:
        results = [_worker(t) for t in tasks]

    by_model: dict[str, list[dict]] = {m: [] for m in config.audit.roster}
    for rec in results:
        by_model[rec["model"]].append(rec)
    for recs in by_model.values():
        recs.sort(key=lambda r: r["seed"])

    models: dict[str, dict] = {}
    kstar_vectors: dict[str, dict[str, list[float] | None]] = {}
    for name, recs in by_model.items():
        agg = _aggregate_model(config, recs, stratifiers)
        agg["records"] = [{k: v for k, v in r.items() if k != "kstar"}
                          for r in recs]
        models[name] = agg
        kstar_vectors[name] = {str(r["seed"]): r["kstar"] for r in recs}

    has_truth = "k_center" in bundle.truth
    report = {
        "schema_version": SCHEMA_VERSION,
        "domain": config.dataset.domain,
        "kind": config.dataset.kind,
        "proxies_shuffled": shuffle_proxies,
        "reference": config.audit.reference,
        "config": config.to_dict(),
        "entities": list(bundle.panel.entities),
        "stratifiers": {k: v.tolist() for k, v in stratifiers.items()},
        "models": models,
        "kstar_vectors": kstar_vectors,
        "wilcoxon": _suite_wilcoxon(config, by_model),
        "verdict": _verdict_row(config, models[config.audit.reference],
                                has_truth),
    }
    return report


# ----------------------------------------------------------------------
# cross-report / external comparison
# ----------------------------------------------------------------------

def _records_from_external_csv(path, metric: str) -> dict[str, list[dict]]:
    """External baseline metrics: method, domain, seed, metric, value."""
    frame = pd.read_csv(path)
    needed = {"method", "domain", "seed", "metric", "value"}
    if not needed.issubset(frame.columns):
        raise DataError(f"external metrics CSV needs columns {sorted(needed)}")
    out: dict[str, list[dict]] = {}
    rows = frame[frame["metric"] == metric]
    for method, grp in rows.groupby("method"):
        out[str(method)] = [{"seed": int(r.seed), metric: float(r.value)}
                            for r in grp.itertuples()]
    return out


def check_metric_admissible(metric: str, domain: str) -> None:
    if metric in LAG_METRICS and domain != "synthetic":
        raise ProtocolError(
            f"lag-summary metric {metric!r} is not admitted for paired "
            f"tests on the {domain!r} domain; only forecast-layer metrics "
            "are compared on real data")


def compare(report_a: dict, other: dict | str, metric: str) -> list[dict]:
    """Wilcoxon rows of (other - reference of report_a) on one metric.

    ``other`` is a second report document or a path to an external
    metrics CSV (columns method, domain, seed, metric, value).
    """
    domain = report_a.get("domain", "real")
    check_metric_admissible(metric, domain)
    ref_name = report_a["reference"]
    ref_records = report_a["models"][ref_name]["records"]
    rows = []
    if isinstance(other, str):
        for method, records in sorted(
                _records_from_external_csv(other, metric).items()):
            row = paired_rows(records, ref_records, method, ref_name, metric)
            if row is not None:
                rows.append(row)
    else:
        if other.get("domain") != domain:
            raise ProtocolError("cannot pair reports from different domains")
        for method, blob in sorted(other["models"].items()):
            row = paired_rows(blob["records"], ref_records,
                              f"{method}", ref_name, metric)
            if row is not None:
                rows.append(row)
    return rows


# ----------------------------------------------------------------------
# proxy-shuffle negative control
# ----------------------------------------------------------------------

def proxy_shuffle_control(config: RunConfig, jobs: int = 1) -> dict:
    """Retrain the reference model with per-seed shuffled proxies and
    report the collapse (or survival) of stratifier alignment."""
    ref = config.audit.reference
    if ref == "grouped_ardl":
        raise ConfigError("the negative control needs a proxy-conditioned "
                          "reference model")
    base_cfg = _reference_only(config)
    base = run_suite(base_cfg, jobs=jobs)
    shuffled = run_suite(base_cfg, jobs=jobs, shuffle_proxies=True)

    def l2_stats(report):
        blobs = report["models"][ref]["l2"]
        abs_rhos, rejects = [], []
        for entry in blobs.values():
            s = entry["summary"]
            if s is not None:
                abs_rhos.append(s["mean_abs_rho"])
                rejects.append(s["reject_share"])
        return (float(np.mean(abs_rhos)) if abs_rhos else None,
                float(np.mean(rejects)) if rejects else None)

    base_rho, base_rej = l2_stats(base)
    shuf_rho, shuf_rej = l2_stats(shuffled)
    base_task = base["models"][ref]["l0"]["task_loss_mean"]
    shuf_task = shuffled["models"][ref]["l0"]["task_loss_mean"]
    base_r2 = base["models"][ref]["l0"]["test_r2_mean"]
    shuf_r2 = shuffled["models"][ref]["l0"]["test_r2_mean"]
    return {
        "schema_version": SCHEMA_VERSION,
        "reference": ref,
        "base": base,
        "shuffled": shuffled,
        "drop": {
            "mean_abs_rho_base": base_rho,
            "mean_abs_rho_shuffled": shuf_rho,
            "mean_abs_rho_drop": (None if base_rho is None or shuf_rho is None
                                  else base_rho - shuf_rho),
            "reject_share_base": base_rej,
            "reject_share_shuffled": shuf_rej,
            "reject_share_drop": (None if base_rej is None or shuf_rej is None
                                  else base_rej - shuf_rej),
            "task_loss_base": base_task,
            "task_loss_shuffled": shuf_task,
            "task_loss_rel_change": (None if not base_task
                                     else (shuf_task - base_task) / base_task),
            "test_r2_base": base_r2,
            "test_r2_shuffled": shuf_r2,
        },
    }


def _reference_only(config: RunConfig) -> RunConfig:
    import copy
    cfg = copy.deepcopy(config)
    cfg.audit.roster = [config.audit.reference]
    return cfg
