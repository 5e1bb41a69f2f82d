"""Entity-conditioned lag-gated panel forecasting with a layered lag audit.

Core pieces: a small reverse-mode autodiff engine (`autodiff`), balanced
panel handling (`panel`), a ground-truth synthetic generator (`synth`),
the gated forecaster family and linear baseline (`models`, `ardl`),
exact audit statistics (`stats`), and the multi-seed audit runner
(`audit`) behind the `acgate` CLI.
"""

from .audit import (compare, prepare_dataset, proxy_shuffle_control,
                    run_one_seed, run_suite)
from .config import (AuditParams, DatasetSpec, ModelParams, RunConfig,
                     TrainParams, load_config, synthetic_default)
from .models import GatedForecaster, LagDistribution, ModelOutput
from .panel import (Normalizer, Panel, PanelSchema, SegmentView, SplitSpec,
                    chronological_split, fit_normalizer, load_panel)
from .report import emit_report, load_report, write_report_json
from .stats import (fisher_combine, forecast_metrics, permutation_p,
                    spearman, wilcoxon_paired)
from .synth import DgpConfig, SyntheticPanel, generate, lag_center
from .training import train_model

__version__ = "0.1.0"

__all__ = [
    "AuditParams", "DatasetSpec", "DgpConfig", "GatedForecaster",
    "LagDistribution", "ModelOutput", "ModelParams", "Normalizer", "Panel",
    "PanelSchema", "RunConfig", "SegmentView", "SplitSpec",
    "SyntheticPanel", "TrainParams", "chronological_split", "compare",
    "emit_report", "fisher_combine", "fit_normalizer", "forecast_metrics",
    "generate", "lag_center", "load_config", "load_panel", "load_report",
    "permutation_p", "prepare_dataset", "proxy_shuffle_control",
    "run_one_seed", "run_suite", "spearman", "synthetic_default",
    "train_model", "wilcoxon_paired", "write_report_json",
]
