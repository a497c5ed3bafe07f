"""End-to-end run of one study: sample, assign, collect, parse and export."""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path
from typing import Any

from ._version import __version__
from .gateway import Gateway, ProviderConfig, RetryPolicy, SimulatedRespondentModel, make_gateway
from .orchestrator import AnalysisDataset, JsonlStore, RunLedger, build_dataset, execute_run
from .personas import assign_conditions, sample_personas
from .study import StudySpec, load_study, validate_study_spec

log = logging.getLogger(__name__)

FIXTURE_NAME = "fixture"


def data_path(name: str) -> Path:
    """Path of a file bundled under ``replisim/data``."""
    return Path(str(resources.files("replisim") / "data" / name))


def resolve_study_path(arg: str) -> Path:
    """``fixture`` names the bundled packaging study; anything else is a file path."""
    return data_path("packaging_study1a.json") if arg == FIXTURE_NAME else Path(arg)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class StudyInvalid(ValueError):
    def __init__(self, violations):
        self.violations = violations
        super().__init__("; ".join(str(v) for v in violations))


@dataclass
class RunManifest:
    """Everything needed to repeat a simulated run byte for byte."""

    study_file: str
    study_sha256: str
    seed_personas: int
    seed_assign: int
    seed_provider: int
    provider: dict[str, Any]
    sim_model_file: str | None
    sim_model_sha256: str | None
    run_id: str
    exclusion: str
    out_dir: str
    tool_version: str = __version__
    started_at: str | None = None
    finished_at: str | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def load(cls, path: str | Path) -> RunManifest:
        return cls(**json.loads(Path(path).read_text(encoding="utf-8")))

    def provider_config(self) -> ProviderConfig:
        p = dict(self.provider)
        retry = RetryPolicy(**p.pop("retry", {}))
        return ProviderConfig(retry=retry, **p)


def provider_dict(config: ProviderConfig) -> dict[str, Any]:
    return asdict(config)


def _result_settings(provider: dict[str, Any]) -> dict[str, Any]:
    """Provider settings that can change responses; parallelism and retry timing cannot."""
    return {k: v for k, v in provider.items() if k not in ("max_parallel", "retry", "timeout")}


@dataclass
class RunOutput:
    manifest: RunManifest
    ledger: RunLedger
    dataset: AnalysisDataset
    files: dict[str, Path] = field(default_factory=dict)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def run_study(
    study_path: str | Path,
    out_dir: str | Path,
    *,
    config: ProviderConfig = ProviderConfig(),
    seed_personas: int = 0,
    seed_assign: int = 0,
    seed_provider: int = 0,
    sim_model_path: str | Path | None = None,
    run_id: str = "run",
    exclusion: str = "study",
    resume: bool = False,
    gateway: Gateway | None = None,
) -> RunOutput:
    """Run the whole pipeline and write ledger, dataset, exclusions and manifest to ``out_dir``.

    ``gateway`` overrides the one built from ``config`` (tests inject
    failing providers this way).

    Raises:
        StudyInvalid: the study has validation violations.
        FileExistsError: a ledger exists in ``out_dir`` and ``resume`` is false.
    """
    study_path = Path(study_path)
    out = Path(out_dir)
    study: StudySpec = load_study(study_path)
    violations = validate_study_spec(study, study_path.parent)
    if violations:
        raise StudyInvalid(violations)
    ledger_path = out / "ledger.jsonl"
    if ledger_path.exists() and not resume:
        raise FileExistsError(f"{ledger_path} exists; pass resume to continue that run")

    model = None
    if config.provider_kind == "simulated":
        if sim_model_path is None:
            log.warning("no simulated-respondent model given; using a null model with no condition effects")
            model = SimulatedRespondentModel.null_model(list(study.measures))
        else:
            model = SimulatedRespondentModel.load(sim_model_path)
    if gateway is None:
        gateway = make_gateway(config, model, seed_provider, attachment_root=study_path.parent)

    manifest = RunManifest(
        study_file=str(study_path),
        study_sha256=_sha256(study_path),
        seed_personas=seed_personas,
        seed_assign=seed_assign,
        seed_provider=seed_provider,
        provider=provider_dict(config),
        sim_model_file=str(sim_model_path) if sim_model_path is not None else None,
        sim_model_sha256=_sha256(Path(sim_model_path)) if sim_model_path is not None else None,
        run_id=run_id,
        exclusion=exclusion,
        out_dir=str(out),
        started_at=_now(),
    )
    manifest_path = out / "manifest.json"
    if resume and manifest_path.exists():
        previous = RunManifest.load(manifest_path)
        for key in ("study_sha256", "seed_personas", "seed_assign", "seed_provider", "sim_model_sha256", "run_id"):
            if getattr(previous, key) != getattr(manifest, key):
                raise ValueError(f"cannot resume: {key} differs from the interrupted run's manifest")
        if _result_settings(previous.provider) != _result_settings(manifest.provider):
            raise ValueError("cannot resume: provider settings differ from the interrupted run's manifest")
        manifest.started_at = previous.started_at
    out.mkdir(parents=True, exist_ok=True)
    manifest_path.write_text(manifest.to_json(), encoding="utf-8")
    personas = assign_conditions(sample_personas(study.sample, study.n, seed_personas), study.conditions, seed_assign)
    ledger = execute_run(study, personas, gateway, JsonlStore(ledger_path), run_id)
    dataset = build_dataset(ledger, study, exclusion)
    manifest.finished_at = _now()

    files = {
        "ledger": ledger_path,
        "dataset": out / "dataset.csv",
        "exclusions": out / "exclusions.json",
        "manifest": manifest_path,
    }
    files["dataset"].write_text(dataset.to_csv(), encoding="utf-8")
    files["exclusions"].write_text(json.dumps(dataset.exclusion_report(), indent=2) + "\n", encoding="utf-8")
    files["manifest"].write_text(manifest.to_json(), encoding="utf-8")
    return RunOutput(manifest, ledger, dataset, files)


def contamination_probe(gateway: Gateway, study: StudySpec) -> list[str]:
    """Ask the model whether it knows the source publication, once per identifying term.

    This is deliberately the only place where blinded terms reach a model.
    The raw replies are returned for a human to judge; no pass/fail rule is
    applied.
    """
    from .gateway import CompletionRequest
    from .personas import PromptBundle, blind_list

    replies = []
    for i, term in enumerate(sorted(blind_list(study))):
        bundle = PromptBundle(
            "Answer briefly and honestly.",
            (),
            (f"Q1. Are you aware of any published research associated with \"{term}\"? "
             "Answer yes or no, then describe what you know in one sentence.",),
        )
        req = CompletionRequest(f"probe:{study.study_id}:{i}", bundle, (), gateway.config.snapshot())
        replies.append(gateway.submit_completion(req).text)
    return replies
