"""Full-batch Adam training with validation early stopping.

Each run owns derived RNG streams (init / dropout) so seeds stay
independent across concurrent runs, and validation evaluation never
touches the dropout stream: perturbing val data cannot change the
training-side trajectory of any epoch that runs.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .autodiff import backward, no_grad
from .config import ModelParams, TrainParams
from .models import GatedForecaster
from .optim import Adam, clip_global_norm, clip_per_group
from .panel import Panel, SegmentView

INIT_STREAM = 0
DROPOUT_STREAM = 1
PERM_STREAM = 2
SHUFFLE_STREAM = 3


def derived_rng(seed: int, stream: int, *extra: int) -> np.random.Generator:
    """Independent generator for (seed, stream[, extra...])."""
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence((seed, stream) + extra)))


@dataclass
class TrainHistory:
    train_losses: list[float] = field(default_factory=list)
    val_losses: list[float] = field(default_factory=list)
    best_epoch: int = -1
    epochs_run: int = 0
    param_digests: list[str] = field(default_factory=list)


def _digest(model: GatedForecaster) -> str:
    h = hashlib.sha256()
    for name in sorted(model.params):
        h.update(name.encode())
        h.update(model.params[name].data.tobytes())
    return h.hexdigest()


def build_model(variant: str, panel: Panel, mp: ModelParams, seed: int,
                init_scale: float = 0.1,
                restart: int | None = None) -> GatedForecaster:
    if restart is None:
        rng = derived_rng(seed, INIT_STREAM)
    else:
        rng = derived_rng(seed, INIT_STREAM, restart)
    return GatedForecaster(
        variant=variant, n_entities=panel.n_entities,
        n_features=panel.n_features, n_proxies=panel.proxies.shape[1],
        n_statics=panel.statics.shape[1], n_macro=panel.macro.shape[1],
        mp=mp, rng=rng, init_scale=init_scale)


class _Run:
    """One training trajectory: model, optimizer state, RNG, history."""

    def __init__(self, variant: str, panel: Panel, mp: ModelParams,
                 tp: TrainParams, seed: int, restart: int | None):
        self.model = build_model(variant, panel, mp, seed, tp.init_scale,
                                 restart=restart)
        self.opt = Adam(self.model.trainable_params(), lr=tp.lr)
        if restart is None:
            self.dropout_rng = derived_rng(seed, DROPOUT_STREAM)
        else:
            self.dropout_rng = derived_rng(seed, DROPOUT_STREAM, restart)
        self.groups = self.model.param_groups()
        self.history = TrainHistory(best_epoch=0)
        self.best_val = np.inf
        self.best_state = self.model.state_dict()
        self.stopped = False
        self.restart = restart or 0

    def run_epochs(self, panel: Panel, train_seg: SegmentView,
                   val_seg: SegmentView, tp: TrainParams, n_epochs: int,
                   track_digests: bool) -> None:
        for _ in range(n_epochs):
            if self.stopped:
                return
            epoch = self.history.epochs_run
            self.opt.zero_grad()
            fr = self.model.forward(panel, train_seg, training=True,
                                    rng=self.dropout_rng,
                                    dropout_p=tp.dropout)
            backward(fr.total)
            if tp.clip == "global":
                clip_global_norm(self.model.trainable_params(), tp.clip_norm)
            else:
                clip_per_group(self.groups, tp.clip_norm)
            self.opt.step()
            self.history.train_losses.append(fr.total.item())
            if track_digests:
                self.history.param_digests.append(_digest(self.model))

            with no_grad():
                val_fr = self.model.forward(panel, val_seg)
            val_loss = val_fr.task.item()
            self.history.val_losses.append(val_loss)
            self.history.epochs_run = epoch + 1

            if val_loss < self.best_val:
                self.best_val = val_loss
                self.best_state = self.model.state_dict()
                self.history.best_epoch = epoch
            elif epoch - self.history.best_epoch >= tp.patience:
                self.stopped = True


def train_model(variant: str, panel: Panel, train_seg: SegmentView,
                val_seg: SegmentView, mp: ModelParams, tp: TrainParams,
                seed: int, track_digests: bool = False
                ) -> tuple[GatedForecaster, TrainHistory]:
    """Train one variant on the (already normalized) panel.

    Checkpoint = parameters of the best validation-task-loss epoch;
    training stops once ``patience`` epochs pass without improvement.
    With ``restarts > 1`` several seeded inits race for ``race_epochs``
    and only the best-validation candidate trains to completion.
    """
    tp.validate()
    if tp.restarts == 1:
        run = _Run(variant, panel, mp, tp, seed, restart=None)
        run.run_epochs(panel, train_seg, val_seg, tp, tp.epochs,
                       track_digests)
    else:
        race = min(tp.race_epochs, tp.epochs)
        runs = [_Run(variant, panel, mp, tp, seed, restart=r)
                for r in range(tp.restarts)]
        for cand in runs:
            cand.run_epochs(panel, train_seg, val_seg, tp, race,
                            track_digests)
        run = min(runs, key=lambda c: (c.best_val, c.restart))
        run.run_epochs(panel, train_seg, val_seg, tp, tp.epochs - race,
                       track_digests)
    run.model.load_state_dict(run.best_state)
    return run.model, run.history
