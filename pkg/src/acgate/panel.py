"""Balanced panel container, CSV ingestion with the locked cleaning rules,
chronological splitting, and train-only normalization.

Cleaning rules: entities with more than 15% missing values on any required
column are dropped; surviving interior gaps are filled by within-entity
linear interpolation, leading/trailing gaps by the nearest valid value;
values violating declared positivity constraints count as missing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import DataError

MISSING_LIMIT = 0.15


@dataclass
class PanelSchema:
    """Column-role mapping for a panel CSV (entity_id / time are fixed)."""

    target: str
    features: list[str]
    proxies: list[str]
    statics: list[str] = field(default_factory=list)
    stratifiers: list[str] = field(default_factory=list)
    macro: list[str] = field(default_factory=list)
    positive: list[str] = field(default_factory=list)

    @property
    def required(self) -> list[str]:
        cols = [self.target] + self.features + self.proxies + self.statics
        seen: list[str] = []
        for c in cols:
            if c not in seen:
                seen.append(c)
        return seen


class Panel:
    """Immutable balanced panel: N entities x T uniform time steps.

    dynamic: (N, T, F); target: (N, T); proxies: (N, M);
    statics: (N, d_s) or (N, 0); macro: (T, F_m) or (T, 0);
    stratifier_frame: per-entity/time values kept for train-window
    stratifier construction.
    """

    def __init__(self, entities, times, dynamic, target, proxies,
                 statics=None, macro=None, stratifier_frame=None):
        self.entities = list(entities)
        self.times = np.asarray(times)
        self.dynamic = np.asarray(dynamic, dtype=np.float64)
        self.target = np.asarray(target, dtype=np.float64)
        self.proxies = np.asarray(proxies, dtype=np.float64)
        n = len(self.entities)
        t = self.times.size
        if statics is None:
            statics = np.zeros((n, 0))
        if macro is None:
            macro = np.zeros((t, 0))
        self.statics = np.asarray(statics, dtype=np.float64)
        self.macro = np.asarray(macro, dtype=np.float64)
        self.stratifier_frame = stratifier_frame
        self._check()
        for arr in (self.dynamic, self.target, self.proxies, self.statics,
                    self.macro):
            arr.flags.writeable = False

    def _check(self) -> None:
        n, t = len(self.entities), self.times.size
        if self.dynamic.shape[:2] != (n, t) or self.target.shape != (n, t):
            raise DataError("panel arrays disagree with entity/time sizes")
        if self.proxies.shape[0] != n or self.statics.shape[0] != n:
            raise DataError("entity-level arrays disagree with entity count")
        if self.macro.shape[0] != t:
            raise DataError("macro series disagrees with time length")
        steps = np.diff(self.times.astype(np.float64))
        if steps.size and (np.any(steps <= 0) or np.any(steps != steps[0])):
            raise DataError("times must be strictly increasing with uniform step")
        for name, arr in (("dynamic", self.dynamic), ("target", self.target),
                          ("proxies", self.proxies), ("statics", self.statics),
                          ("macro", self.macro)):
            if not np.all(np.isfinite(arr)):
                raise DataError(f"panel has missing/non-finite {name} values "
                                "after cleaning")

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_steps(self) -> int:
        return self.times.size

    @property
    def n_features(self) -> int:
        return self.dynamic.shape[2]

    def replace(self, **overrides) -> "Panel":
        """Copy with some arrays swapped (used by probes and controls)."""
        kw = dict(entities=self.entities, times=self.times,
                  dynamic=self.dynamic, target=self.target,
                  proxies=self.proxies, statics=self.statics,
                  macro=self.macro, stratifier_frame=self.stratifier_frame)
        kw.update(overrides)
        return Panel(**kw)


def _interpolate_series(values: np.ndarray) -> np.ndarray:
    """Linear interpolation of interior NaN runs; endpoints take the
    nearest valid value."""
    out = values.astype(np.float64).copy()
    mask = np.isfinite(out)
    if mask.all():
        return out
    idx = np.arange(out.size)
    out[~mask] = np.interp(idx[~mask], idx[mask], out[mask])
    return out


def load_panel(path, schema: PanelSchema) -> Panel:
    """Read a panel CSV and apply the cleaning contract.

    The CSV must have `entity_id` and `time` columns plus every column the
    schema names.  Proxy/static columns must be constant per entity (the
    first time row is used).
    """
    try:
        df = pd.read_csv(path)
    except Exception as exc:
        raise DataError(f"cannot parse panel CSV {path}: {exc}") from exc
    for col in ["entity_id", "time"] + schema.required + schema.macro \
            + schema.stratifiers:
        if col not in df.columns:
            raise DataError(f"panel CSV missing column {col!r}")

    times = np.sort(df["time"].unique())
    if times.size < 2:
        raise DataError("panel needs at least two time steps")
    step = np.diff(times.astype(np.float64))
    if np.any(step != step[0]):
        raise DataError("panel time index is not uniformly spaced")

    value_cols = sorted(set(schema.required + schema.macro + schema.stratifiers))
    df = df[["entity_id", "time"] + value_cols].copy()
    for col in schema.positive:
        if col in df.columns:
            bad = df[col] <= 0
            df.loc[bad, col] = np.nan

    # full entity x time grid so absent rows count as missing
    grid = df.set_index(["entity_id", "time"]).sort_index()
    entities_all = sorted(df["entity_id"].unique())
    full_index = pd.MultiIndex.from_product([entities_all, times],
                                            names=["entity_id", "time"])
    grid = grid.reindex(full_index)

    kept, dyn_rows, tgt_rows, prox_rows, stat_rows = [], [], [], [], []
    strat_rows = []
    t = times.size
    for ent in entities_all:
        block = grid.loc[ent]
        missing_frac = block[schema.required].isna().mean()
        if (missing_frac > MISSING_LIMIT).any():
            continue
        filled = {col: _interpolate_series(block[col].to_numpy())
                  for col in value_cols}
        kept.append(ent)
        dyn_rows.append(np.stack([filled[c] for c in schema.features], axis=1)
                        if schema.features else np.zeros((t, 0)))
        tgt_rows.append(filled[schema.target])
        prox_rows.append([filled[c][0] for c in schema.proxies])
        stat_rows.append([filled[c][0] for c in schema.statics])
        strat_rows.append(np.stack([filled[c] for c in schema.stratifiers],
                                   axis=1) if schema.stratifiers
                          else np.zeros((t, 0)))

    if not kept:
        raise DataError("no entity survived the missing-value limit")

    macro_arr = np.zeros((t, len(schema.macro)))
    if schema.macro:
        # macro controls are shared: average over entities then fill gaps
        for j, col in enumerate(schema.macro):
            series = grid[col].groupby(level="time").mean().reindex(times)
            macro_arr[:, j] = _interpolate_series(series.to_numpy())

    strat_frame = None
    if schema.stratifiers:
        strat_frame = {
            "columns": list(schema.stratifiers),
            "values": np.stack(strat_rows, axis=0),  # (N, T, n_strat)
        }

    return Panel(entities=kept, times=times,
                 dynamic=np.stack(dyn_rows, axis=0),
                 target=np.stack(tgt_rows, axis=0),
                 proxies=np.asarray(prox_rows, dtype=np.float64),
                 statics=np.asarray(stat_rows, dtype=np.float64),
                 macro=macro_arr, stratifier_frame=strat_frame)


# ----------------------------------------------------------------------
# chronological splitting
# ----------------------------------------------------------------------

@dataclass
class SplitSpec:
    """Inclusive segment boundaries on the time axis.

    train = times[0..train_end], val = (train_end..val_end],
    test = (val_end..T-1]; ``warmup`` lags are consumed before the first
    valid prediction of a segment without carried history.
    """

    train_end: int
    val_end: int
    warmup: int

    def validate(self, n_steps: int) -> None:
        if not (0 <= self.train_end < self.val_end < n_steps - 1):
            raise DataError(
                f"split boundaries train_end={self.train_end} "
                f"val_end={self.val_end} invalid for T={n_steps}")
        if self.train_end + 1 < self.warmup + 1:
            raise DataError(
                f"train segment has {self.train_end + 1} steps; needs at "
                f"least warmup+1 = {self.warmup + 1}")


@dataclass
class SegmentView:
    """Target range [start, end] (absolute indices) of one split segment.

    ``first_valid`` is the first index with a usable prediction: segments
    whose lag window can draw on preceding observed data (val/test) start
    immediately; the opening segment pays the warmup.
    """

    name: str
    start: int
    end: int
    first_valid: int

    @property
    def valid_range(self) -> tuple[int, int]:
        return self.first_valid, self.end

    @property
    def n_valid(self) -> int:
        return self.end - self.first_valid + 1


def chronological_split(panel: Panel, spec: SplitSpec
                        ) -> tuple[SegmentView, SegmentView, SegmentView]:
    """Non-overlapping contiguous train/val/test segments.

    Lagged inputs for val/test are drawn from the immediately preceding
    chronological data (observed covariates, not predictions), so those
    segments keep every target; only the train segment loses its first
    ``warmup`` steps.
    """
    spec.validate(panel.n_steps)
    k = spec.warmup
    train = SegmentView("train", 0, spec.train_end, first_valid=k)
    if train.first_valid > train.end:
        raise DataError("train segment shorter than warmup+1")
    val = SegmentView("val", spec.train_end + 1, spec.val_end,
                      first_valid=spec.train_end + 1)
    test = SegmentView("test", spec.val_end + 1, panel.n_steps - 1,
                       first_valid=spec.val_end + 1)
    return train, val, test


# ----------------------------------------------------------------------
# normalization
# ----------------------------------------------------------------------

def _fit_stats(rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = rows.mean(axis=0)
    sd = rows.std(axis=0)
    # constant column: center only (ptp is exact where np.std picks up
    # accumulation noise)
    constant = np.ptp(rows, axis=0) == 0.0
    sd = np.where(constant, 1.0, sd)
    return mean, sd


@dataclass
class Normalizer:
    """Per-column z-scoring statistics fitted on the training window only."""

    feature_mean: np.ndarray
    feature_sd: np.ndarray
    target_mean: float
    target_sd: float
    proxy_mean: np.ndarray
    proxy_sd: np.ndarray
    static_mean: np.ndarray
    static_sd: np.ndarray
    macro_mean: np.ndarray
    macro_sd: np.ndarray

    def apply(self, panel: Panel) -> Panel:
        """Return a panel with every block z-scored by the train statistics."""
        dyn = (panel.dynamic - self.feature_mean) / self.feature_sd
        tgt = (panel.target - self.target_mean) / self.target_sd
        prox = (panel.proxies - self.proxy_mean) / self.proxy_sd
        stat = panel.statics
        if stat.shape[1]:
            stat = (stat - self.static_mean) / self.static_sd
        macro = panel.macro
        if macro.shape[1]:
            macro = (macro - self.macro_mean) / self.macro_sd
        return panel.replace(dynamic=dyn, target=tgt, proxies=prox,
                             statics=stat, macro=macro)


def fit_normalizer(panel: Panel, train: SegmentView) -> Normalizer:
    """Fit z-scoring statistics from training-window rows only."""
    sl = slice(train.start, train.end + 1)
    fmean, fsd = _fit_stats(panel.dynamic[:, sl, :].reshape(-1, panel.n_features))
    tmean, tsd = _fit_stats(panel.target[:, sl].reshape(-1, 1))
    pmean, psd = _fit_stats(panel.proxies)
    if panel.statics.shape[1]:
        smean, ssd = _fit_stats(panel.statics)
    else:
        smean = ssd = np.zeros(0)
    if panel.macro.shape[1]:
        mmean, msd = _fit_stats(panel.macro[sl, :])
    else:
        mmean = msd = np.zeros(0)
    return Normalizer(feature_mean=fmean, feature_sd=fsd,
                      target_mean=float(tmean[0]), target_sd=float(tsd[0]),
                      proxy_mean=pmean, proxy_sd=psd,
                      static_mean=smean, static_sd=ssd,
                      macro_mean=mmean, macro_sd=msd)


def stratifier_values(panel: Panel, train: SegmentView) -> dict[str, np.ndarray]:
    """Per-entity stratifier values as train-window means (pre-test
    historical information only)."""
    out: dict[str, np.ndarray] = {}
    if panel.stratifier_frame is None:
        return out
    sl = slice(train.start, train.end + 1)
    values = panel.stratifier_frame["values"]
    for j, name in enumerate(panel.stratifier_frame["columns"]):
        out[name] = values[:, sl, j].mean(axis=1)
    return out
