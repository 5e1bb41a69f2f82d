"""Run configuration: INI-style key/value files parsed into dataclasses.

Grammar (configparser): sections [dataset], [schema], [split], [model],
[train], [audit]; values are scalars, comma lists, or `a..b` seed ranges.
See README for the documented key set.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, asdict
from pathlib import Path

from .errors import ConfigError
from .panel import PanelSchema, SplitSpec
from .synth import DgpConfig

KNOWN_VARIANTS = ("acgate", "no_ac_encoder", "uniform_lag", "no_recon",
                  "plain_lstm", "grouped_ardl")


@dataclass
class ModelParams:
    """Architecture knobs shared by the gated forecaster family."""

    k_max: int = 10
    hidden: int = 64
    layers: int = 2
    embed_dim: int = 8
    encoder_width: int = 32
    gate_width: int = 32
    decoder_width: int = 32
    lag_penalty: float = 0.1      # position bias on normalized lag k/K
    temperature: float = 1.0
    recon_weight: float = 1.0
    detach_recon: bool = True

    def validate(self) -> None:
        if self.k_max < 1:
            raise ConfigError("k_max must be >= 1")
        if self.temperature <= 0:
            raise ConfigError("temperature must be > 0")
        if self.lag_penalty < 0 or self.recon_weight < 0:
            raise ConfigError("lag_penalty and recon_weight must be >= 0")
        if self.hidden < 1 or self.layers < 1:
            raise ConfigError("hidden size and layer count must be >= 1")


@dataclass
class TrainParams:
    lr: float = 1e-3
    epochs: int = 200
    patience: int = 20
    dropout: float = 0.05
    clip: str = "global"          # "global" or "split" (per parameter group)
    clip_norm: float = 1.0
    init_scale: float = 0.1
    # seeded racing restarts: train `restarts` inits for `race_epochs`,
    # continue only the best-validation candidate (guards against the
    # mirrored-lag local optimum)
    restarts: int = 1
    race_epochs: int = 60

    def validate(self) -> None:
        if self.clip not in ("global", "split"):
            raise ConfigError("clip must be 'global' or 'split'")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.restarts < 1 or self.race_epochs < 1:
            raise ConfigError("restarts and race_epochs must be >= 1")


@dataclass
class DatasetSpec:
    kind: str = "synthetic"       # "synthetic" or "csv"
    domain: str = "synthetic"     # verdict-row label; "synthetic" enables
                                  # lag-summary significance tests
    dgp: DgpConfig | None = None
    panel_csv: str | None = None
    truth_csv: str | None = None
    schema: PanelSchema | None = None

    def validate(self) -> None:
        if self.kind == "synthetic":
            if self.dgp is None:
                raise ConfigError("synthetic dataset needs DGP settings")
            self.dgp.validate()
        elif self.kind == "csv":
            if not self.panel_csv or self.schema is None:
                raise ConfigError("csv dataset needs panel_csv and [schema]")
        else:
            raise ConfigError(f"unknown dataset kind {self.kind!r}")


@dataclass
class AuditParams:
    seeds: list[int] = field(default_factory=lambda: list(range(20)))
    roster: list[str] = field(default_factory=lambda: ["acgate"])
    reference: str = "acgate"
    stratifiers: list[str] = field(default_factory=list)
    epsilon: float = 1e-3
    permutations: int = 999
    alpha: float = 0.05
    ardl_groups: int = 3

    def validate(self) -> None:
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if not self.seeds:
            raise ConfigError("need at least one seed")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be > 0")
        if self.permutations < 1:
            raise ConfigError("permutations must be >= 1")
        for name in self.roster:
            if name not in KNOWN_VARIANTS:
                raise ConfigError(f"unknown roster entry {name!r}")
        if self.reference not in self.roster:
            raise ConfigError("reference model must be in the roster")


@dataclass
class RunConfig:
    dataset: DatasetSpec
    split: SplitSpec
    model: ModelParams
    train: TrainParams
    audit: AuditParams

    def validate(self) -> None:
        self.dataset.validate()
        self.model.validate()
        self.train.validate()
        self.audit.validate()

    def to_dict(self) -> dict:
        d = {
            "dataset": {k: v for k, v in asdict(self.dataset).items()
                        if k != "schema"},
            "split": asdict(self.split),
            "model": asdict(self.model),
            "train": asdict(self.train),
            "audit": asdict(self.audit),
        }
        if self.dataset.schema is not None:
            d["dataset"]["schema"] = asdict(self.dataset.schema)
        return d


def synthetic_default(scenario: str = "linear", seeds=None,
                      roster=None) -> RunConfig:
    """The locked default synthetic suite: N=120, T=60, K=10, 60/20/20
    chronological split, Adam lr 1e-3 for 200 epochs (patience 20, two
    racing restarts), truth moderator z as the pre-specified stratifier."""
    cfg = RunConfig(
        dataset=DatasetSpec(kind="synthetic", domain="synthetic",
                            dgp=DgpConfig(scenario=scenario)),
        split=SplitSpec(train_end=35, val_end=47, warmup=10),
        model=ModelParams(),
        train=TrainParams(restarts=2, race_epochs=60),
        audit=AuditParams(
            seeds=list(seeds) if seeds is not None else list(range(5)),
            roster=list(roster) if roster is not None else ["acgate"],
            reference="acgate", stratifiers=["z"]),
    )
    cfg.validate()
    return cfg


# ----------------------------------------------------------------------
# parsing
# ----------------------------------------------------------------------

def parse_seed_range(text: str) -> list[int]:
    """Parse '0..4' or '0,3,7' into a seed list."""
    text = text.strip()
    if ".." in text:
        lo, hi = text.split("..", 1)
        try:
            lo_i, hi_i = int(lo), int(hi)
        except ValueError as exc:
            raise ConfigError(f"bad seed range {text!r}") from exc
        if hi_i < lo_i:
            raise ConfigError(f"empty seed range {text!r}")
        return list(range(lo_i, hi_i + 1))
    try:
        return [int(s) for s in text.split(",") if s.strip() != ""]
    except ValueError as exc:
        raise ConfigError(f"bad seed list {text!r}") from exc


def _csv_list(text: str) -> list[str]:
    return [s.strip() for s in text.split(",") if s.strip()]


def _get(section, key, cast, default):
    if section is None or key not in section:
        return default
    raw = section[key]
    try:
        if cast is bool:
            return raw.strip().lower() in ("1", "true", "yes", "on")
        return cast(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc


def load_config(path) -> RunConfig:
    """Parse an INI run configuration; raises ConfigError on any problem."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        cp.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc

    ds_sec = cp["dataset"] if cp.has_section("dataset") else None
    kind = _get(ds_sec, "kind", str, "synthetic").strip()
    domain = _get(ds_sec, "domain", str,
                  "synthetic" if kind == "synthetic" else "real").strip()

    dgp = None
    schema = None
    panel_csv = truth_csv = None
    if kind == "synthetic":
        dgp = DgpConfig(
            n_entities=_get(ds_sec, "n_entities", int, 120),
            n_steps=_get(ds_sec, "n_steps", int, 60),
            k_max=_get(ds_sec, "k_max", int, 10),
            scenario=_get(ds_sec, "scenario", str, "linear").strip(),
            seed=_get(ds_sec, "seed", int, 0),
            lag_coef=_get(ds_sec, "lag_coef", float, DgpConfig.lag_coef),
            ar_coef=_get(ds_sec, "ar_coef", float, DgpConfig.ar_coef),
            ar_shift_scale=_get(ds_sec, "ar_shift_scale", float,
                                DgpConfig.ar_shift_scale),
            ar_noise_sd=_get(ds_sec, "ar_noise_sd", float,
                             DgpConfig.ar_noise_sd),
            proxy_noise_sd=_get(ds_sec, "proxy_noise_sd", float,
                                DgpConfig.proxy_noise_sd),
            static_noise_sd=_get(ds_sec, "static_noise_sd", float,
                                 DgpConfig.static_noise_sd),
            contemporaneous_coef=_get(ds_sec, "contemporaneous_coef", float,
                                      DgpConfig.contemporaneous_coef),
            target_noise_sd=_get(ds_sec, "target_noise_sd", float,
                                 DgpConfig.target_noise_sd),
            entity_effect_sd=_get(ds_sec, "entity_effect_sd", float,
                                  DgpConfig.entity_effect_sd),
            kernel_half_width=_get(ds_sec, "kernel_half_width", int,
                                   DgpConfig.kernel_half_width),
        )
    else:
        panel_csv = _get(ds_sec, "panel_csv", str, None)
        truth_csv = _get(ds_sec, "truth_csv", str, None)
        sc = cp["schema"] if cp.has_section("schema") else None
        if sc is None:
            raise ConfigError("csv dataset needs a [schema] section")
        schema = PanelSchema(
            target=_get(sc, "target", str, None),
            features=_csv_list(_get(sc, "features", str, "")),
            proxies=_csv_list(_get(sc, "proxies", str, "")),
            statics=_csv_list(_get(sc, "statics", str, "")),
            stratifiers=_csv_list(_get(sc, "stratifiers", str, "")),
            macro=_csv_list(_get(sc, "macro", str, "")),
            positive=_csv_list(_get(sc, "positive", str, "")),
        )
        if schema.target is None:
            raise ConfigError("[schema] must name a target column")

    model = ModelParams(
        k_max=_get(cp["model"] if cp.has_section("model") else None,
                   "k_max", int, 10),
    )
    msec = cp["model"] if cp.has_section("model") else None
    model.hidden = _get(msec, "hidden", int, model.hidden)
    model.layers = _get(msec, "layers", int, model.layers)
    model.embed_dim = _get(msec, "embed_dim", int, model.embed_dim)
    model.encoder_width = _get(msec, "encoder_width", int, model.encoder_width)
    model.gate_width = _get(msec, "gate_width", int, model.gate_width)
    model.decoder_width = _get(msec, "decoder_width", int, model.decoder_width)
    model.lag_penalty = _get(msec, "lag_penalty", float, model.lag_penalty)
    model.temperature = _get(msec, "temperature", float, model.temperature)
    model.recon_weight = _get(msec, "recon_weight", float, model.recon_weight)
    model.detach_recon = _get(msec, "detach_recon", bool, model.detach_recon)

    tsec = cp["train"] if cp.has_section("train") else None
    train = TrainParams(
        lr=_get(tsec, "lr", float, 1e-3),
        epochs=_get(tsec, "epochs", int, 200),
        patience=_get(tsec, "patience", int, 20),
        dropout=_get(tsec, "dropout", float, 0.05),
        clip=_get(tsec, "clip", str, "global").strip(),
        clip_norm=_get(tsec, "clip_norm", float, 1.0),
        init_scale=_get(tsec, "init_scale", float, 0.1),
        restarts=_get(tsec, "restarts", int, 1),
        race_epochs=_get(tsec, "race_epochs", int, 60),
    )

    ssec = cp["split"] if cp.has_section("split") else None
    if ssec is not None and "train_end" in ssec:
        split = SplitSpec(train_end=_get(ssec, "train_end", int, None),
                          val_end=_get(ssec, "val_end", int, None),
                          warmup=model.k_max)
    else:
        # fractional split over the configured/loaded time axis length
        if kind != "synthetic":
            raise ConfigError("[split] with train_end/val_end is required "
                              "for csv datasets")
        t = dgp.n_steps
        train_frac = _get(ssec, "train_frac", float, 0.6)
        val_frac = _get(ssec, "val_frac", float, 0.2)
        train_end = int(round(train_frac * t)) - 1
        val_end = train_end + int(round(val_frac * t))
        split = SplitSpec(train_end=train_end, val_end=val_end,
                          warmup=model.k_max)

    asec = cp["audit"] if cp.has_section("audit") else None
    audit = AuditParams(
        seeds=parse_seed_range(_get(asec, "seeds", str, "0..19")),
        roster=_csv_list(_get(asec, "roster", str, "acgate")),
        reference=_get(asec, "reference", str, "acgate").strip(),
        stratifiers=_csv_list(_get(asec, "stratifiers", str, "")),
        epsilon=_get(asec, "epsilon", float, 1e-3),
        permutations=_get(asec, "permutations", int, 999),
        alpha=_get(asec, "alpha", float, 0.05),
        ardl_groups=_get(asec, "ardl_groups", int, 3),
    )

    cfg = RunConfig(
        dataset=DatasetSpec(kind=kind, domain=domain, dgp=dgp,
                            panel_csv=panel_csv, truth_csv=truth_csv,
                            schema=schema),
        split=split, model=model, train=train, audit=audit)
    cfg.validate()
    return cfg
