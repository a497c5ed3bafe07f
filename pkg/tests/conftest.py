import copy
import json
from pathlib import Path

import pytest

from replisim import SimulatedRespondentModel, data_path, load_study, parse_study_spec

ORACLES = Path(__file__).parent / "oracles" / "values.json"


@pytest.fixture(scope="session")
def oracle():
    return json.loads(ORACLES.read_text())


@pytest.fixture(scope="session")
def fixture_study():
    return load_study(data_path("packaging_study1a.json"))


@pytest.fixture(scope="session")
def fixture_model():
    return SimulatedRespondentModel.load(data_path("packaging_study1a_model.json"))


MINIMAL = {
    "study_id": "minimal",
    "factors": [{"name": "frame", "levels": ["gain", "loss"]}],
    "conditions": [
        {"condition_id": "gain", "levels": {"frame": "gain"},
         "stimuli": [{"kind": "text", "payload": "Save 20% when you switch today."}]},
        {"condition_id": "loss", "levels": {"frame": "loss"},
         "stimuli": [{"kind": "text", "payload": "Stop losing 20% by not switching."}]},
    ],
    "measures": [
        {"measure_id": "intent", "prompt_text": "How likely are you to switch?",
         "response": {"type": "likert", "min": 1, "max": 7, "low_anchor": "very unlikely", "high_anchor": "very likely"}},
    ],
    "sample": {
        "attributes": [{"name": "gender", "distribution": {"type": "categorical", "weights": {"woman": 0.5, "man": 0.5}}}],
        "description_template": "a {gender} from Ohio",
    },
    "n": 2,
    "analysis_plan": [
        {"finding_id": "intent_frame", "dv": "intent", "effect": {"kind": "main", "factor": "frame"}, "test": "welch_t",
         "direction": {"factor": "frame", "higher": "loss", "lower": "gain"},
         "original": {"human_p": "<.001", "direction_sign": 1, "recorded_outcome": "yes"}},
    ],
}


@pytest.fixture
def minimal_doc():
    return copy.deepcopy(MINIMAL)


def two_by_two_doc(n=80):
    """A 2x2 study with a likert DV, a choice DV and a manipulation-check measure."""
    conds = []
    for a in ("low", "high"):
        for b in ("human", "ai"):
            conds.append({"condition_id": f"{a}_{b}", "levels": {"price": a, "agent": b},
                          "stimuli": [{"kind": "text", "payload": f"A {a} offer presented by a {b} agent."}]})
    return {
        "study_id": "offer_2x2",
        "factors": [{"name": "price", "levels": ["low", "high"]}, {"name": "agent", "levels": ["human", "ai"]}],
        "conditions": conds,
        "measures": [
            {"measure_id": "accept", "prompt_text": "How likely are you to accept the offer?",
             "response": {"type": "likert", "min": 1, "max": 7}},
            {"measure_id": "choice", "prompt_text": "Which would you do?",
             "response": {"type": "choice", "options": ["accept", "reject"]}},
            {"measure_id": "fairness", "prompt_text": "How fair is the price?",
             "response": {"type": "likert", "min": 1, "max": 7}},
        ],
        "sample": {"attributes": [{"name": "age", "distribution": {"type": "numeric_uniform", "lo": 20, "hi": 60,
                                                                  "integer_valued": True}}],
                   "description_template": "a {age}-year-old adult"},
        "n": n,
        "analysis_plan": [
            {"finding_id": "price_main", "dv": "accept", "effect": {"kind": "main", "factor": "price"}, "test": "anova2",
             "direction": {"factor": "price", "higher": "low", "lower": "high"},
             "original": {"human_p": "<.001", "direction_sign": 1}},
            {"finding_id": "price_x_agent", "dv": "accept", "effect": {"kind": "interaction", "factors": ["price", "agent"]},
             "test": "anova2",
             "direction": {"factor": "price", "higher": "low", "lower": "high",
                           "moderator": {"factor": "agent", "higher": "human", "lower": "ai"}},
             "original": {"human_p": 0.3}},
            {"finding_id": "choice_price", "dv": "choice", "effect": {"kind": "main", "factor": "price"}, "test": "chi2",
             "direction": {"factor": "price", "higher": "low", "lower": "high", "option": "accept"},
             "original": {"human_p": 0.01, "direction_sign": 1}},
            {"finding_id": "price_ols", "dv": "accept", "effect": {"kind": "main", "factor": "price"}, "test": "ols",
             "direction": {"factor": "price", "higher": "low", "lower": "high"},
             "original": {"human_p": "<.001", "direction_sign": 1}},
        ],
        "manipulation_check": {"measure_id": "fairness",
                               "expected_direction": {"factor": "price", "higher": "low", "lower": "high"}},
    }


def two_by_two_model(price_effect=1.5, fairness_effect=1.0, agent_effect=0.0):
    return SimulatedRespondentModel.from_dict({
        "persona_sd": 0.3, "residual_sd": 1.0,
        "measures": {
            "accept": {"base_mean": 3.5, "level_offsets": {"price": {"low": price_effect}, "agent": {"human": agent_effect}}},
            "choice": {"base_mean": 1.5, "level_offsets": {"price": {"low": -0.6, "high": 0.4}}},
            "fairness": {"base_mean": 3.5, "level_offsets": {"price": {"low": fairness_effect}}},
        },
    })


@pytest.fixture
def study_2x2():
    return parse_study_spec(two_by_two_doc())


# ---------------------------------------------------------------- acceptance summary

ACCEPTANCE = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = {}


@pytest.fixture
def acceptance(request):
    """Record the pass/fail line for one acceptance criterion."""
    lines = request.config.stash[ACCEPTANCE]

    def record(number, checks, detail=""):
        failed = [name for name, ok in checks.items() if not ok]
        status = "PASS" if not failed else "FAIL"
        line = f"criterion {number}: {status}  {detail}"
        if failed:
            line += f"  [failed: {', '.join(failed)}]"
        lines[number] = line
        print(line)
        return failed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for number in sorted(lines):
            terminalreporter.write_line(lines[number])
