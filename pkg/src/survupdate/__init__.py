"""Dynamic updating of survival prediction models under simulated drift."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    BayesPHModel, CovariateSpec, CoxModel, Dataset, StepFunction, SubjectRecord,
    SurvivalPrediction, load_model, save_model,
)
from .cox import FitOptions, fit_cox  # noqa: E402
from .metrics import MetricReport, evaluate  # noqa: E402
from .simulate import ScenarioConfig, scenario_config, simulate_world  # noqa: E402
from .updating import ModelState, UpdateStrategy, apply_update  # noqa: E402
from .study import StudyPlan, StudyResult, emit_reports, run_replicate, run_study, wilcoxon_signed_rank  # noqa: E402

__all__ = [
    "BayesPHModel", "CovariateSpec", "CoxModel", "Dataset", "StepFunction", "SubjectRecord",
    "SurvivalPrediction", "load_model", "save_model", "FitOptions", "fit_cox", "MetricReport",
    "evaluate", "ScenarioConfig", "scenario_config", "simulate_world", "ModelState",
    "UpdateStrategy", "apply_update", "StudyPlan", "StudyResult", "emit_reports",
    "run_replicate", "run_study", "wilcoxon_signed_rank",
]
