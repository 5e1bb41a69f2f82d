"""Synthetic heterogeneous-lag panel generator with known ground truth.

Each entity draws a latent moderator z in (0,1) that fixes its true lag
center (linear: clip(round(3+7(1-z)),1,K); nonlinear:
clip(round(10(1-z)^2),1,K)).  Targets are built from lag-weighted history
under a smooth unimodal weight profile centered there, plus a small
contemporaneous term, an entity effect, and Gaussian noise.  Proxies are
noisy transformations of z; one static dimension correlates with z.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import ConfigError
from .panel import Panel


@dataclass
class DgpConfig:
    n_entities: int = 120
    n_steps: int = 60
    k_max: int = 10
    scenario: str = "linear"
    seed: int = 0
    # noise / scale knobs (defaults frozen after the least-squares
    # calibration run; see tests/test_synth.py)
    lag_coef: float = 1.5
    ar_coef: float = 0.5
    ar_shift_scale: float = 0.5
    ar_noise_sd: float = 0.5
    proxy_noise_sd: float = 0.1
    static_noise_sd: float = 0.2
    contemporaneous_coef: float = 0.05
    target_noise_sd: float = 0.1
    entity_effect_sd: float = 0.2
    kernel_half_width: int = 2

    def validate(self) -> None:
        if self.n_entities < 2:
            raise ConfigError("need at least 2 entities")
        if self.n_steps <= 2 * self.k_max:
            raise ConfigError("need n_steps > 2 * k_max")
        if self.k_max < 1:
            raise ConfigError("k_max must be >= 1")
        if self.scenario not in ("linear", "nonlinear"):
            raise ConfigError(f"unknown scenario {self.scenario!r}")


@dataclass
class SyntheticPanel:
    panel: Panel
    z: np.ndarray
    k_center: np.ndarray
    w_dgp: np.ndarray = field(repr=False)


def lag_center(z: float, scenario: str, k_max: int) -> int:
    """True lag center for moderator z in [0, 1]."""
    if not 0.0 <= z <= 1.0:
        raise ValueError("z must lie in [0, 1]")
    if scenario == "linear":
        raw = 3.0 + 7.0 * (1.0 - z)
    elif scenario == "nonlinear":
        raw = 10.0 * (1.0 - z) ** 2
    else:
        raise ConfigError(f"unknown scenario {scenario!r}")
    return int(np.clip(np.rint(raw), 1, k_max))


def smooth_lag_weights(k_center: int, k_max: int, half_width: int) -> np.ndarray:
    """Triangular weights over lags 1..k_max centered at k_center,
    truncated and renormalized; half_width 0 degenerates to one-hot."""
    lags = np.arange(1, k_max + 1, dtype=np.float64)
    w = np.maximum(0.0, 1.0 - np.abs(lags - k_center) / (half_width + 1.0))
    return w / w.sum()


def generate(config: DgpConfig) -> SyntheticPanel:
    """Balanced synthetic panel plus its generating truth."""
    config.validate()
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(config.seed)))
    n, t, k = config.n_entities, config.n_steps, config.k_max

    z = rng.uniform(0.0, 1.0, size=n)
    k_center = np.array([lag_center(zi, config.scenario, k) for zi in z],
                        dtype=np.int64)
    w_dgp = np.stack([smooth_lag_weights(kc, k, config.kernel_half_width)
                      for kc in k_center])

    proxies = np.stack([z, z ** 2, np.sin(np.pi * z)], axis=1)
    proxies = proxies + rng.normal(0.0, config.proxy_noise_sd, size=proxies.shape)

    statics = np.stack(
        [z + rng.normal(0.0, config.static_noise_sd, size=n),
         rng.normal(0.0, 1.0, size=n)], axis=1)

    # AR(1) inputs with an entity shift proportional to z - 0.5; the
    # extra k burn-in steps make every target step fully lag-covered
    shift = config.ar_shift_scale * (z - 0.5)
    phi = config.ar_coef
    burn = k
    x = np.zeros((n, t + burn))
    if abs(phi) < 1.0:
        stat_sd = config.ar_noise_sd / np.sqrt(1.0 - phi * phi) \
            if config.ar_noise_sd > 0 else 0.0
        mean = shift / (1.0 - phi)
    else:
        stat_sd, mean = config.ar_noise_sd, shift
    x[:, 0] = mean + stat_sd * rng.normal(size=n)
    for step in range(1, t + burn):
        x[:, step] = (phi * x[:, step - 1] + shift
                      + config.ar_noise_sd * rng.normal(size=n))

    entity_effect = rng.normal(0.0, config.entity_effect_sd, size=n)
    noise = rng.normal(0.0, config.target_noise_sd, size=(n, t))

    y = np.zeros((n, t))
    for j in range(t):
        tt = j + burn  # position in the burned series
        lagged = np.zeros(n)
        for lag in range(1, k + 1):
            lagged += w_dgp[:, lag - 1] * x[:, tt - lag]
        y[:, j] = (config.lag_coef * lagged
                   + config.contemporaneous_coef * x[:, tt]
                   + entity_effect + noise[:, j])

    dynamic = x[:, burn:, None]
    entities = [f"E{i:03d}" for i in range(n)]
    panel = Panel(entities=entities, times=np.arange(t), dynamic=dynamic,
                  target=y, proxies=proxies, statics=statics)
    return SyntheticPanel(panel=panel, z=z, k_center=k_center, w_dgp=w_dgp)


def write_csv(synth: SyntheticPanel, panel_path, truth_path) -> None:
    """Write the panel and the entity-level truth table."""
    p = synth.panel
    rows = []
    for i, ent in enumerate(p.entities):
        for j, tm in enumerate(p.times):
            row = {"entity_id": ent, "time": int(tm), "y": p.target[i, j]}
            for f in range(p.n_features):
                row[f"x{f + 1}"] = p.dynamic[i, j, f]
            for m in range(p.proxies.shape[1]):
                row[f"p{m + 1}"] = p.proxies[i, m]
            for s in range(p.statics.shape[1]):
                row[f"s{s + 1}"] = p.statics[i, s]
            rows.append(row)
    pd.DataFrame(rows).to_csv(panel_path, index=False)
    truth = pd.DataFrame({"entity_id": p.entities, "z": synth.z,
                          "k_center": synth.k_center})
    truth.to_csv(truth_path, index=False)
