"""Grouped ordinary-least-squares distributed-lag baseline.

Entities are grouped by train-window mean target (quantile bins computed
from training rows only); each group gets one OLS fit of Y_t on the K
lagged feature blocks plus an intercept.  Fully deterministic: repeated
runs give bit-identical coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .panel import Panel, SegmentView


@dataclass
class GroupedArdl:
    k_max: int
    group_of: np.ndarray            # (N,) group index per entity
    coefs: np.ndarray               # (G, K*F + 1), intercept last
    ridge_fallback: bool            # True if any group needed the ridge


def _design_rows(panel: Panel, entity: int, t_first: int, t_last: int,
                 k_max: int) -> tuple[np.ndarray, np.ndarray]:
    x = panel.dynamic[entity]       # (T, F)
    rows = []
    for t in range(t_first, t_last + 1):
        lagged = [x[t - lag] for lag in range(1, k_max + 1)]
        rows.append(np.concatenate(lagged + [np.ones(1)]))
    return np.asarray(rows), panel.target[entity, t_first:t_last + 1]


def assign_groups(panel: Panel, train: SegmentView, n_groups: int
                  ) -> np.ndarray:
    """Quantile bins of the train-window mean target (train rows only)."""
    means = panel.target[:, train.start:train.end + 1].mean(axis=1)
    if n_groups <= 1 or np.unique(means).size < n_groups:
        return np.zeros(panel.n_entities, dtype=np.int64)
    qs = np.quantile(means, np.linspace(0.0, 1.0, n_groups + 1)[1:-1])
    return np.searchsorted(qs, means, side="right").astype(np.int64)


def fit_grouped_ardl(panel: Panel, train: SegmentView, k_max: int,
                     n_groups: int = 3) -> GroupedArdl:
    if train.n_valid < 1:
        raise DataError("train segment has no post-warmup target")
    groups = assign_groups(panel, train, n_groups)
    n_coefs = k_max * panel.n_features + 1
    n_actual = int(groups.max()) + 1
    coefs = np.zeros((n_actual, n_coefs))
    ridge_used = False
    for g in range(n_actual):
        members = np.where(groups == g)[0]
        design, ys = [], []
        for i in members:
            d, y = _design_rows(panel, i, train.first_valid, train.end, k_max)
            design.append(d)
            ys.append(y)
        dm = np.concatenate(design, axis=0)
        yv = np.concatenate(ys)
        beta, _, rank, _ = np.linalg.lstsq(dm, yv, rcond=None)
        if rank < n_coefs:
            # rank-deficient design: tiny ridge keeps it deterministic
            ridge_used = True
            gram = dm.T @ dm + 1e-8 * np.eye(n_coefs)
            beta = np.linalg.solve(gram, dm.T @ yv)
        coefs[g] = beta
    return GroupedArdl(k_max=k_max, group_of=groups, coefs=coefs,
                       ridge_fallback=ridge_used)


def ardl_predict(model: GroupedArdl, panel: Panel, segment: SegmentView
                 ) -> np.ndarray:
    """(N, n_valid) predictions on a segment's valid steps."""
    preds = np.empty((panel.n_entities, segment.n_valid))
    for i in range(panel.n_entities):
        d, _ = _design_rows(panel, i, segment.first_valid, segment.end,
                            model.k_max)
        preds[i] = d @ model.coefs[model.group_of[i]]
    return preds
