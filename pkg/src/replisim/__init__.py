"""Replay between-subjects media-effects experiments with synthetic personas and assess replication."""
from ._version import __version__
from .analysis import AnalysisReport, FindingAnalysis, analyze_finding, analyze_study
from .assess import (
    AuditReport,
    SignificancePolicy,
    ReplicationOutcome,
    aggregate_outcomes,
    audit_against_recorded,
    benchmark_report,
    bin_by_effect_size,
    bin_by_original_p,
    classify_finding,
)
from .gateway import Gateway, ProviderConfig, SimulatedRespondentModel, make_gateway
from .orchestrator import (
    AnalysisDataset,
    JsonlStore,
    MemoryStore,
    apply_manipulation_check,
    build_dataset,
    execute_run,
    parse_answers,
)
from .personas import assign_conditions, build_prompt, sample_personas
from .pipeline import RunManifest, data_path, run_study
from .study import PValue, StudySpec, load_findings_table, load_study, parse_study_spec, validate_study_spec

__all__ = [
    "AnalysisDataset",
    "AnalysisReport",
    "AuditReport",
    "FindingAnalysis",
    "Gateway",
    "JsonlStore",
    "MemoryStore",
    "PValue",
    "ProviderConfig",
    "ReplicationOutcome",
    "RunManifest",
    "SignificancePolicy",
    "SimulatedRespondentModel",
    "StudySpec",
    "__version__",
    "aggregate_outcomes",
    "analyze_finding",
    "analyze_study",
    "apply_manipulation_check",
    "assign_conditions",
    "audit_against_recorded",
    "benchmark_report",
    "bin_by_effect_size",
    "bin_by_original_p",
    "build_dataset",
    "build_prompt",
    "classify_finding",
    "data_path",
    "execute_run",
    "load_findings_table",
    "load_study",
    "make_gateway",
    "parse_answers",
    "parse_study_spec",
    "run_study",
    "sample_personas",
    "validate_study_spec",
]
