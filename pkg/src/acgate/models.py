"""Gated panel forecaster family under one interface.

Pipeline: per-entity proxy vector -> scalar conditioning score -> lag
weight simplex over lags 1..K -> lag-weighted context stream -> stacked
LSTM -> next-step prediction.  Variants:

  acgate         full model (conditioning encoder + lag gate + recon head)
  no_ac_encoder  conditioning score frozen to 0 for every entity
  uniform_lag    lag gate bypassed, weights fixed at 1/K
  no_recon       reconstruction weight forced to 0, architecture unchanged
  plain_lstm     matched backbone fed the projected previous observation,
                 no encoder / gate / recon

Information-flow rule: the backbone input at step t is built from lags
1..K only; the contemporaneous observation X[:, t] never reaches it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import LstmWeights, Tensor, concat, dropout, lag_context, \
    lstm_cell, matmul, no_grad, softmax
from .config import ModelParams
from .errors import ConfigError, DataError
from .panel import Panel, SegmentView

VARIANTS = ("acgate", "no_ac_encoder", "uniform_lag", "no_recon", "plain_lstm")
SENSITIVITY_DELTA = 1e-4


@dataclass
class LagDistribution:
    """Per-entity lag weights and their scalar summaries."""

    omega: np.ndarray          # (N, K) simplex rows
    k_star: np.ndarray         # (N,) expected lag, in [1, K]
    entropy: np.ndarray        # (N,) Shannon entropy of omega rows
    structural: bool = True    # False for attribution-based diagnostics

    @classmethod
    def from_omega(cls, omega: np.ndarray, structural: bool = True
                   ) -> "LagDistribution":
        omega = np.asarray(omega, dtype=np.float64)
        k = omega.shape[1]
        lags = np.arange(1, k + 1, dtype=np.float64)
        with np.errstate(divide="ignore", invalid="ignore"):
            logs = np.where(omega > 0.0, np.log(omega), 0.0)
        return cls(omega=omega, k_star=omega @ lags,
                   entropy=-np.sum(omega * logs, axis=1),
                   structural=structural)

    @property
    def k_star_sd(self) -> float:
        return float(np.std(self.k_star))


@dataclass
class ModelOutput:
    predictions: np.ndarray    # (N, n_valid)
    first_valid: int
    task_loss: float
    recon_loss: float
    total_loss: float
    lag: LagDistribution | None


@dataclass
class ForwardResult:
    """Graph handles from one forward pass (training consumption)."""

    total: Tensor
    task: Tensor
    recon: Tensor
    predictions: np.ndarray
    first_valid: int
    inputs: np.ndarray | None = None    # (N, n, D) backbone input stream
    last_pred_sum: Tensor | None = None  # sum_i of the final step's prediction


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class GatedForecaster:
    """One trainable model instance bound to a panel's dimensions."""

    def __init__(self, variant: str, n_entities: int, n_features: int,
                 n_proxies: int, n_statics: int, n_macro: int,
                 mp: ModelParams, rng: np.random.Generator,
                 init_scale: float = 0.1):
        if variant not in VARIANTS:
            raise ConfigError(f"unknown model variant {variant!r}")
        mp.validate()
        self.variant = variant
        self.mp = mp
        self.n_entities = n_entities
        self.n_features = n_features
        self.n_proxies = n_proxies
        self.n_statics = n_statics
        self.n_macro = n_macro
        self.params: dict[str, Tensor] = {}
        self._init_params(rng, init_scale)

    # -- construction ----------------------------------------------------
    def _add(self, name: str, data: np.ndarray) -> Tensor:
        t = Tensor(data, requires_grad=True)
        self.params[name] = t
        return t

    def _init_params(self, rng: np.random.Generator, scale: float) -> None:
        mp = self.mp
        f, m, ds = self.n_features, self.n_proxies, self.n_statics
        h, k, e = mp.hidden, mp.k_max, mp.embed_dim
        gated = self.variant != "plain_lstm"

        self._add("proj.w", _glorot(rng, f, f))
        self._add("embed", rng.normal(0.0, scale, size=(self.n_entities, e)))

        if gated:
            w = mp.encoder_width
            self._add("enc.w1", _glorot(rng, m, w))
            self._add("enc.b1", np.zeros(w))
            self._add("enc.w2", _glorot(rng, w, 1))
            self._add("enc.b2", np.zeros(1))
            w = mp.decoder_width
            self._add("dec.w1", _glorot(rng, 1, w))
            self._add("dec.b1", np.zeros(w))
            self._add("dec.w2", _glorot(rng, w, m))
            self._add("dec.b2", np.zeros(m))
            w = mp.gate_width
            self._add("gate.w1", _glorot(rng, 1, w))
            self._add("gate.b1", np.zeros(w))
            self._add("gate.w2", _glorot(rng, w, k))
            self._add("gate.b2", np.zeros(k))
            for layer in range(mp.layers):
                self._add(f"state.h0.{layer}.w", _glorot(rng, 1, h))
                self._add(f"state.h0.{layer}.b", np.zeros(h))
                self._add(f"state.c0.{layer}.w", _glorot(rng, 1, h))
                self._add(f"state.c0.{layer}.b", np.zeros(h))

        d_in = f + e + ds + self.n_macro
        for layer in range(mp.layers):
            fan_in = d_in if layer == 0 else h
            self._add(f"lstm.{layer}.w_x", _glorot(rng, fan_in, 4 * h))
            self._add(f"lstm.{layer}.w_h", _glorot(rng, h, 4 * h))
            b = np.zeros(4 * h)
            b[h:2 * h] = 1.0  # forget-gate bias
            self._add(f"lstm.{layer}.b", b)
        self._add("head.w", _glorot(rng, h, 1))
        self._add("head.b", np.zeros(1))

    # -- parameter bookkeeping --------------------------------------------
    def trainable_params(self) -> list[Tensor]:
        return [self.params[name] for name in sorted(self.params)]

    def param_groups(self) -> dict[str, list[Tensor]]:
        """Named groups for per-group gradient clipping."""
        groups: dict[str, list[Tensor]] = {"backbone": [], "encoder": [],
                                           "decoder": [], "gate": []}
        for name in sorted(self.params):
            if name.startswith("enc."):
                groups["encoder"].append(self.params[name])
            elif name.startswith("dec."):
                groups["decoder"].append(self.params[name])
            elif name.startswith("gate."):
                groups["gate"].append(self.params[name])
            else:
                groups["backbone"].append(self.params[name])
        return {k: v for k, v in groups.items() if v}

    def backbone_param_count(self) -> int:
        """LSTM + head parameters (the capacity-matching contract)."""
        return sum(self.params[n].size for n in self.params
                   if n.startswith(("lstm.", "head.")))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        if set(state) != set(self.params):
            raise DataError("parameter names do not match this model")
        for name, arr in state.items():
            if arr.shape != self.params[name].data.shape:
                raise DataError(f"shape mismatch for {name}")
            self.params[name].data = np.array(arr, dtype=np.float64)

    # -- submodules --------------------------------------------------------
    def _mlp2(self, x: Tensor, prefix: str) -> Tensor:
        p = self.params
        hidden = ad.tanh(matmul(x, p[f"{prefix}.w1"]) + p[f"{prefix}.b1"])
        return matmul(hidden, p[f"{prefix}.w2"]) + p[f"{prefix}.b2"]

    def encode(self, proxies: Tensor) -> Tensor:
        """Entity-conditioning score (N, 1).  Frozen to 0 for the
        no_ac_encoder ablation."""
        if self.variant == "no_ac_encoder":
            return Tensor(np.zeros((self.n_entities, 1)))
        return self._mlp2(proxies, "enc")

    def reconstruct(self, z: Tensor) -> Tensor:
        """Decode the conditioning score back to proxy space (N, M)."""
        src = z.detach() if self.mp.detach_recon else z
        return self._mlp2(src, "dec")

    def lag_weights(self, z: Tensor) -> Tensor:
        """Simplex over lags 1..K with the normalized position penalty.

        Logits: gate(z)_k - lag_penalty * k / K, scaled by 1/temperature.
        The penalty depends on k/K only, so doubling K leaves the penalty
        gap between lags at equal normalized positions unchanged.
        """
        mp = self.mp
        if self.variant == "uniform_lag":
            return Tensor(np.full((self.n_entities, mp.k_max), 1.0 / mp.k_max))
        logits = self._mlp2(z, "gate")
        positions = np.arange(1, mp.k_max + 1, dtype=np.float64) / mp.k_max
        penalized = logits - Tensor(mp.lag_penalty * positions)
        return softmax(penalized, temperature=mp.temperature, axis=-1)

    def recon_weight(self) -> float:
        return 0.0 if self.variant == "no_recon" else self.mp.recon_weight

    # -- forward -----------------------------------------------------------
    def forward(self, panel: Panel, segment: SegmentView,
                training: bool = False, rng: np.random.Generator | None = None,
                dropout_p: float = 0.0, x_leaf: Tensor | None = None,
                collect_inputs: bool = False,
                collect_last_pred_sum: bool = False) -> ForwardResult:
        """Run the model over one segment's valid steps.

        ``x_leaf`` lets callers supply the dynamic block as a gradient
        leaf (input-attribution diagnostics); otherwise it is constant.
        """
        mp = self.mp
        n, t, f = panel.n_entities, panel.n_steps, panel.n_features
        if n != self.n_entities or f != self.n_features:
            raise DataError("panel dimensions do not match the model")
        t0, t1 = segment.first_valid, segment.end
        if t1 < t0:
            raise DataError(f"segment {segment.name} has no valid step")
        steps = t1 - t0 + 1

        x_flat = x_leaf if x_leaf is not None else \
            Tensor(panel.dynamic.reshape(n * t, f))
        xproj = matmul(x_flat, self.params["proj.w"]).reshape(n, t, f)

        proxies = Tensor(panel.proxies)
        gated = self.variant != "plain_lstm"
        if gated:
            z = self.encode(proxies)
            omega = self.lag_weights(z)
            ctx = lag_context(xproj, omega, t0, t1)
        else:
            z = None
            # previous observation stream: lag-1 slice of the projection
            ctx = xproj[:, t0 - 1:t1, :]

        statics = Tensor(panel.statics) if panel.statics.shape[1] else None
        embed = self.params["embed"]

        h_state, c_state = [], []
        for layer in range(mp.layers):
            if gated:
                h_state.append(matmul(z, self.params[f"state.h0.{layer}.w"])
                               + self.params[f"state.h0.{layer}.b"])
                c_state.append(matmul(z, self.params[f"state.c0.{layer}.w"])
                               + self.params[f"state.c0.{layer}.b"])
            else:
                h_state.append(Tensor(np.zeros((n, mp.hidden))))
                c_state.append(Tensor(np.zeros((n, mp.hidden))))

        weights = [LstmWeights(self.params[f"lstm.{layer}.w_x"],
                               self.params[f"lstm.{layer}.w_h"],
                               self.params[f"lstm.{layer}.b"])
                   for layer in range(mp.layers)]

        d_in = f + embed.shape[1] + (statics.shape[1] if statics is not None
                                     else 0) + panel.macro.shape[1]
        preds = np.empty((n, steps))
        collected = np.empty((n, steps, d_in)) if collect_inputs else None
        sq_sum: Tensor | None = None
        last_pred_sum: Tensor | None = None
        for j in range(steps):
            parts = [ctx[:, j, :], embed]
            if statics is not None:
                parts.append(statics)
            if panel.macro.shape[1]:
                parts.append(Tensor(np.repeat(panel.macro[t0 + j][None, :],
                                              n, axis=0)))
            inp = concat(parts, axis=1)
            if collect_inputs:
                collected[:, j, :] = inp.data
            inp = dropout(inp, dropout_p, rng, training)
            x = inp
            for layer in range(mp.layers):
                h_state[layer], c_state[layer] = lstm_cell(
                    x, h_state[layer], c_state[layer], weights[layer])
                x = h_state[layer]
            pred = matmul(x, self.params["head.w"]) + self.params["head.b"]
            preds[:, j] = pred.data[:, 0]
            if collect_last_pred_sum and j == steps - 1:
                last_pred_sum = pred.sum()
            target = Tensor(panel.target[:, t0 + j][:, None])
            step_sq = (pred - target).square().sum()
            sq_sum = step_sq if sq_sum is None else sq_sum + step_sq

        task = sq_sum * (1.0 / (n * steps))

        lam_r = self.recon_weight()
        if gated and lam_r != 0.0:
            recon = (self.reconstruct(z) - proxies).square().mean()
            total = task + lam_r * recon
        else:
            recon = Tensor(0.0)
            total = task
        return ForwardResult(total=total, task=task, recon=recon,
                             predictions=preds, first_valid=t0,
                             inputs=collected, last_pred_sum=last_pred_sum)

    # -- structural outputs --------------------------------------------------
    def lag_distribution(self, panel: Panel) -> LagDistribution | None:
        """Structural lag weights; None for the plain backbone (its
        summary, if any, comes from input attribution)."""
        if self.variant == "plain_lstm":
            return None
        with no_grad():
            z = self.encode(Tensor(panel.proxies))
            omega = self.lag_weights(z)
        return LagDistribution.from_omega(omega.data)

    def gate_sensitivity(self, panel: Panel,
                         delta: float = SENSITIVITY_DELTA) -> float | None:
        """Mean |d k*/d z| by central differences of the gate map.

        Structurally zero where the used lag map cannot respond to the
        conditioning score (frozen score or bypassed gate); None for the
        plain backbone, which has no conditioning score at all.
        """
        if self.variant == "plain_lstm":
            return None
        if self.variant in ("no_ac_encoder", "uniform_lag"):
            return 0.0
        lags = np.arange(1, self.mp.k_max + 1, dtype=np.float64)
        with no_grad():
            z = self.encode(Tensor(panel.proxies)).data
            up = self.lag_weights(Tensor(z + delta)).data @ lags
            down = self.lag_weights(Tensor(z - delta)).data @ lags
        return float(np.mean(np.abs(up - down) / (2.0 * delta)))

    def diagnostic_lag_profile(self, panel: Panel, segment: SegmentView,
                               n_probe_steps: int = 8) -> LagDistribution:
        """Attribution-based lag summary for the plain backbone.

        Backpropagates the prediction at a few probe steps to the raw
        inputs and normalizes the absolute gradient mass over the
        trailing K lags.  Per-entity gradients stay separable because
        entities never interact in the forward pass.  Labeled
        non-structural: it is a diagnostic, not a gate output.
        """
        n, t, f = panel.n_entities, panel.n_steps, panel.n_features
        k = self.mp.k_max
        t0, t1 = segment.first_valid, segment.end
        probes = np.unique(np.linspace(t0, t1,
                                       num=min(n_probe_steps, t1 - t0 + 1),
                                       dtype=int))
        mass = np.zeros((n, k))
        for t_star in probes:
            x_leaf = Tensor(panel.dynamic.reshape(n * t, f),
                            requires_grad=True)
            probe_seg = SegmentView(segment.name, segment.start, int(t_star),
                                    first_valid=t0)
            fr = self.forward(panel, probe_seg, x_leaf=x_leaf,
                              collect_last_pred_sum=True)
            ad.backward(fr.last_pred_sum)
            grads = np.abs(x_leaf.grad.reshape(n, t, f))
            for lag in range(1, k + 1):
                mass[:, lag - 1] += grads[:, t_star - lag, :].sum(axis=1)
        totals = mass.sum(axis=1, keepdims=True)
        totals[totals == 0.0] = 1.0
        return LagDistribution.from_omega(mass / totals, structural=False)

    def evaluate(self, panel: Panel, segment: SegmentView) -> ModelOutput:
        with no_grad():
            fr = self.forward(panel, segment)
        lag = self.lag_distribution(panel)
        return ModelOutput(predictions=fr.predictions,
                           first_valid=fr.first_valid,
                           task_loss=fr.task.item(),
                           recon_loss=fr.recon.item(),
                           total_loss=fr.total.item(), lag=lag)
