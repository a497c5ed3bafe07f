import logging
import math
import random
import threading
import time
from statistics import NormalDist

import pytest

from replisim import assign_conditions, build_prompt, data_path, parse_study_spec, sample_personas
from replisim.gateway import (
    AuthError,
    CompletionRequest,
    Gateway,
    ImageUnsupported,
    LiveProvider,
    ModelCoverageError,
    ProviderConfig,
    ProviderRefusal,
    RetryableError,
    RetryPolicy,
    SimulatedRespondentModel,
    TransportError,
    make_gateway,
    simulate_completion,
)
from replisim.orchestrator import parse_answers
from replisim.stats import welch_t_test


def _request(study, idx=0, run_id="r"):
    ps = assign_conditions(sample_personas(study.sample, study.n, 0), study.conditions, 0)
    p = ps[idx]
    cond = study.condition(p.condition_id)
    return CompletionRequest(
        request_id=f"{run_id}:{p.persona_id}",
        prompt=build_prompt(p, cond, study.measures, study),
        measures=study.measures,
        context={"attributes": dict(p.attributes), "levels": dict(cond.level_assignment)},
    )


class Scripted:
    """Provider that replays a list of outcomes: strings are returned, exceptions raised."""

    def __init__(self, script):
        self.script = list(script)
        self.calls = 0

    def complete(self, request):
        self.calls += 1
        out = self.script.pop(0)
        if isinstance(out, Exception):
            raise out
        return out


def _gateway(provider, attempts=5, parallel=8):
    sleeps = []
    cfg = ProviderConfig(max_parallel=parallel, retry=RetryPolicy(max_attempts=attempts, base_backoff=0.5, jitter=0.2))
    return Gateway(provider, cfg, sleep=sleeps.append), sleeps


def test_fail_twice_then_succeed(fixture_study, caplog):
    provider = Scripted([RetryableError("HTTP 503"), RetryableError("HTTP 429"), "Q1: 3"])
    gw, sleeps = _gateway(provider)
    with caplog.at_level(logging.INFO, logger="replisim.gateway"):
        out = gw.submit_completion(_request(fixture_study))
    assert out.text == "Q1: 3"
    assert out.attempts == 3
    assert provider.calls == 3
    assert gw.requests_issued == 3
    assert len(sleeps) == 2
    assert 0.4 <= sleeps[0] <= 0.6 and 0.8 <= sleeps[1] <= 1.2
    assert sum("attempt" in r.getMessage() for r in caplog.records) == 2


def test_retries_exhausted(fixture_study):
    provider = Scripted([RetryableError("timeout")] * 3)
    gw, sleeps = _gateway(provider, attempts=3)
    with pytest.raises(TransportError):
        gw.submit_completion(_request(fixture_study))
    assert provider.calls == 3 and len(sleeps) == 2


@pytest.mark.parametrize("exc", [AuthError("bad key"), ProviderRefusal("declined")])
def test_fatal_errors_are_not_retried(fixture_study, exc):
    provider = Scripted([exc, "never"])
    gw, sleeps = _gateway(provider)
    with pytest.raises(type(exc)):
        gw.submit_completion(_request(fixture_study))
    assert provider.calls == 1 and sleeps == []


def test_backoff_is_capped():
    policy = RetryPolicy(base_backoff=1.0, jitter=0.0, max_backoff=5.0)
    assert [policy.delay(k, random.Random(0)) for k in range(1, 6)] == [1.0, 2.0, 4.0, 5.0, 5.0]


def test_bounded_concurrency(fixture_study):
    state = {"now": 0, "peak": 0}
    lock = threading.Lock()

    class Slow:
        def complete(self, request):
            with lock:
                state["now"] += 1
                state["peak"] = max(state["peak"], state["now"])
            time.sleep(0.01)
            with lock:
                state["now"] -= 1
            return "ok"

    gw, _ = _gateway(Slow(), parallel=3)
    req = _request(fixture_study)
    threads = [threading.Thread(target=gw.submit_completion, args=(req,)) for _ in range(24)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert state["peak"] == 3


def test_config_invariants():
    with pytest.raises(ValueError):
        ProviderConfig(temperature=2.5)
    with pytest.raises(ValueError):
        ProviderConfig(max_parallel=0)
    with pytest.raises(ValueError):
        ProviderConfig(provider_kind="remote")
    assert ProviderConfig().temperature == 0.7
    assert ProviderConfig().model_name == "claude-3-5-sonnet-20240620"


# ---------------------------------------------------------------- live adapter


class FakeResponse:
    def __init__(self, status, body=None):
        self.status_code = status
        self._body = body or {}
        self.text = str(body)

    def json(self):
        return self._body


class FakeClient:
    def __init__(self, responses):
        self.responses = list(responses)
        self.posts = []

    def post(self, url, headers, json):
        self.posts.append((url, headers, json))
        return self.responses.pop(0)


def test_live_provider_needs_key():
    with pytest.raises(AuthError):
        LiveProvider(ProviderConfig(provider_kind="live"), client=FakeClient([]), environ={})


def test_live_anthropic_round_trip(minimal_doc, caplog):
    study = parse_study_spec(minimal_doc)
    cfg = ProviderConfig(provider_kind="live", retry=RetryPolicy(base_backoff=0.0))
    client = FakeClient([
        FakeResponse(429),
        FakeResponse(200, {"content": [{"type": "text", "text": "Q1: 12\nQ2: 5"}], "stop_reason": "end_turn"}),
    ])
    provider = LiveProvider(cfg, client=client, environ={"ANTHROPIC_API_KEY": "sk-secret-123"})
    gw = Gateway(provider, cfg, sleep=lambda s: None)
    with caplog.at_level(logging.DEBUG):
        out = gw.submit_completion(_request(study))
    assert out.text.startswith("Q1: 12") and out.attempts == 2
    url, headers, body = client.posts[-1]
    assert url.endswith("/v1/messages")
    assert headers["x-api-key"] == "sk-secret-123"
    assert body["model"] == "claude-3-5-sonnet-20240620"
    assert body["temperature"] == 0.7
    assert "following person" in body["system"]
    assert body["messages"][-1]["role"] == "user"
    assert len(body["messages"]) == 1
    assert "sk-secret-123" not in caplog.text


def test_live_auth_failure_and_refusal(minimal_doc):
    study = parse_study_spec(minimal_doc)
    cfg = ProviderConfig(provider_kind="live")
    env = {"ANTHROPIC_API_KEY": "k"}
    provider = LiveProvider(cfg, client=FakeClient([FakeResponse(401)]), environ=env)
    with pytest.raises(AuthError):
        provider.complete(_request(study))
    provider = LiveProvider(cfg, client=FakeClient([FakeResponse(200, {"content": [], "stop_reason": "refusal"})]), environ=env)
    with pytest.raises(ProviderRefusal):
        provider.complete(_request(study))


def test_openai_style(minimal_doc):
    study = parse_study_spec(minimal_doc)
    cfg = ProviderConfig(provider_kind="live", api_style="openai", api_key_env="OPENAI_API_KEY", model_name="gpt-x")
    client = FakeClient([FakeResponse(200, {"choices": [{"message": {"content": "Q1: 7"}}]})])
    provider = LiveProvider(cfg, client=client, environ={"OPENAI_API_KEY": "k"})
    assert provider.complete(_request(study)) == "Q1: 7"
    _, headers, body = client.posts[0]
    assert headers["authorization"] == "Bearer k"
    assert [m["role"] for m in body["messages"]] == ["system", "user"]


def test_image_attachment_payload(fixture_study, tmp_path):
    req = _request(fixture_study)
    assert req.prompt.attachments, "fixture stimuli should be images"
    cfg = ProviderConfig(provider_kind="live")
    client = FakeClient([FakeResponse(200, {"content": [{"type": "text", "text": "ok"}]})])
    provider = LiveProvider(cfg, client=client, environ={"ANTHROPIC_API_KEY": "k"}, attachment_root=data_path("."))
    provider.complete(req)
    content = client.posts[0][2]["messages"][0]["content"]
    images = [c for c in content if c["type"] == "image"]
    assert len(images) == len(req.prompt.attachments)
    assert images[0]["source"]["media_type"] == "image/png"


def test_video_attachment_unsupported(minimal_doc, tmp_path):
    clip = tmp_path / "clip.mp4"
    clip.write_bytes(b"\0")
    minimal_doc["conditions"][0]["stimuli"].append({"kind": "video", "payload": str(clip)})
    study = parse_study_spec(minimal_doc)
    cfg = ProviderConfig(provider_kind="live")
    provider = LiveProvider(cfg, client=FakeClient([]), environ={"ANTHROPIC_API_KEY": "k"})
    reqs = [_request(study, i) for i in range(2)]
    req = next(r for r in reqs if r.prompt.attachments)
    with pytest.raises(ImageUnsupported):
        provider.complete(req)


# ---------------------------------------------------------------- simulated respondent


def test_simulated_is_deterministic(fixture_study, fixture_model):
    req = _request(fixture_study)
    a = simulate_completion(req, fixture_model, seed=11)
    assert a == simulate_completion(req, fixture_model, seed=11)
    assert a != simulate_completion(req, fixture_model, seed=12)
    answers = parse_answers(a, fixture_study.measures)
    assert all(x.valid for x in answers)


def test_noiseless_likert(minimal_doc):
    study = parse_study_spec(minimal_doc)
    model = SimulatedRespondentModel.from_dict({"persona_sd": 0, "residual_sd": 0, "measures": {"intent": {"base_mean": 4}}})
    for i in range(2):
        assert simulate_completion(_request(study, i), model, seed=i) == "Q1: 4"


def test_likert_is_clamped(minimal_doc):
    study = parse_study_spec(minimal_doc)
    hi = SimulatedRespondentModel.from_dict({"persona_sd": 0, "residual_sd": 0, "measures": {"intent": {"base_mean": 40}}})
    lo = SimulatedRespondentModel.from_dict({"persona_sd": 0, "residual_sd": 0, "measures": {"intent": {"base_mean": -3}}})
    assert simulate_completion(_request(study), hi, 0) == "Q1: 7"
    assert simulate_completion(_request(study), lo, 0) == "Q1: 1"


def test_condition_offsets_apply(minimal_doc):
    study = parse_study_spec(minimal_doc)
    model = SimulatedRespondentModel.from_dict({
        "persona_sd": 0, "residual_sd": 0,
        "measures": {"intent": {"base_mean": 3, "level_offsets": {"frame": {"loss": 2}}}},
    })
    out = {}
    for i in range(2):
        req = _request(study, i)
        out[req.context["levels"]["frame"]] = simulate_completion(req, model, 0)
    assert out == {"gain": "Q1: 3", "loss": "Q1: 5"}


def test_attribute_offsets_apply(minimal_doc):
    study = parse_study_spec(minimal_doc)
    model = SimulatedRespondentModel.from_dict({
        "persona_sd": 0, "residual_sd": 0,
        "measures": {"intent": {"base_mean": 3, "attribute_offsets": {"gender": {"woman": 1}}}},
    })
    for i in range(2):
        req = _request(study, i)
        expected = 4 if req.context["attributes"]["gender"] == "woman" else 3
        assert simulate_completion(req, model, 0) == f"Q1: {expected}"


def test_model_coverage(fixture_study):
    partial = SimulatedRespondentModel.from_dict({"measures": {"wtp": {"base_mean": 5}}})
    with pytest.raises(ModelCoverageError):
        simulate_completion(_request(fixture_study), partial, 0)


def test_model_round_trip(fixture_model):
    assert SimulatedRespondentModel.from_dict(fixture_model.to_dict()) == fixture_model
    with pytest.raises(ValueError):
        SimulatedRespondentModel.from_dict({"measures": {}, "persona_sd": -1})
    with pytest.raises(ValueError):
        SimulatedRespondentModel.from_dict({"measures": {}, "noise": 1})


def test_make_gateway_needs_model():
    with pytest.raises(ValueError):
        make_gateway(ProviderConfig())


def _power_study(n):
    return parse_study_spec({
        "study_id": "power",
        "factors": [{"name": "arm", "levels": ["a", "b"]}],
        "conditions": [
            {"condition_id": "a", "levels": {"arm": "a"}, "stimuli": [{"kind": "text", "payload": "Version A."}]},
            {"condition_id": "b", "levels": {"arm": "b"}, "stimuli": [{"kind": "text", "payload": "Version B."}]},
        ],
        "measures": [{"measure_id": "y", "prompt_text": "How much?", "response": {"type": "numeric_open"}}],
        "sample": {"attributes": [], "description_template": "an adult"},
        "n": n,
        "analysis_plan": [],
    })


def test_power_matches_closed_form():
    # d = 0.3 with 181 per arm: power = Phi(d * sqrt(n/2) - z_.975) for the normal approximation
    study = _power_study(362)
    d = 0.3
    model = SimulatedRespondentModel.from_dict({
        "persona_sd": 0.6, "residual_sd": 0.8,
        "measures": {"y": {"base_mean": 100.0, "level_offsets": {"arm": {"b": d * 1.0}}}},
    })
    personas = assign_conditions(sample_personas(study.sample, study.n, 0), study.conditions, 0)
    reqs = []
    for p in personas:
        cond = study.condition(p.condition_id)
        reqs.append((p.condition_id, CompletionRequest(f"x:{p.persona_id}", build_prompt(p, cond, study.measures, study),
                                                       study.measures, {}, {"levels": dict(cond.level_assignment)})))
    nd = NormalDist()
    expected = nd.cdf(d * math.sqrt(181 / 2) - nd.inv_cdf(0.975))
    seeds = 150
    hits = 0
    for seed in range(seeds):
        groups = {"a": [], "b": []}
        for cid, req in reqs:
            groups[cid].append(float(simulate_completion(req, model, seed).split(": ")[1]))
        r = welch_t_test(groups["b"], groups["a"])
        hits += r.p < 0.05 and r.direction_sign == 1
    sd = math.sqrt(expected * (1 - expected) / seeds)
    assert abs(hits / seeds - expected) < 4 * sd
