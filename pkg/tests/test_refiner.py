import json
from pathlib import Path

import httpx
import numpy as np
import pytest

from eegrefine.exceptions import ConfigError, JudgeError, RefinementError
from eegrefine.features import StatFeatures, TextualDescription
from eegrefine.graph import Graph
from eegrefine.refiner import (
    QUESTION,
    ConstantJudge,
    Decision,
    EdgePrompt,
    EdgeRefiner,
    FunctionJudge,
    JudgeConfig,
    MockJudge,
    RemoteJudge,
    VerdictCache,
    build_prompt,
    edge_prompt,
    parse_verdict,
    refine,
    refine_window,
)

from conftest import make_window

GOLDEN = (Path(__file__).parent / "data" / "golden_f3_t4_prompt.txt").read_text(encoding="utf-8")

F3_DESC = TextualDescription("F3", "frontal lobe", "moderate", "intermittent sharp spikes",
                             "an increasing trend in amplitude")
F3_STATS = StatFeatures(12.3, 4.5, 8.5, -6.2, 22.7, 10.1, 7.8, 14.5, 0.32, 2.1, 1532.6, 42)
T4_DESC = TextualDescription.from_text(
    "T4",
    "Channel T4, located in the temporal lobe, shows high amplitude with pronounced rhythmic slowing. "
    "The EEG signal displays a stable pattern with occasional bursts throughout the observed time window.",
)
T4_STATS = StatFeatures(18.2, 5.1, 4.2, -3.1, 25.8, 17.4, 15.0, 20.2, -0.15, 2.7, 2018.3, 33)


def golden_prompt():
    return build_prompt(F3_DESC, F3_STATS, T4_DESC, T4_STATS)


def test_golden_prompt_bytes():
    p = golden_prompt()
    assert p.rendered.encode("utf-8") == GOLDEN.encode("utf-8")
    assert p.rendered.endswith("based on the context above.")
    assert p.question == QUESTION


def test_identical_nodes_not_deduplicated():
    p = build_prompt(F3_DESC, F3_STATS, F3_DESC, F3_STATS)
    assert p.node_i_text[len("Node i"):] == p.node_j_text[len("Node j"):]


@pytest.mark.parametrize(
    "raw, decision",
    [("Yes.", Decision.KEEP), ("no, these channels are unrelated", Decision.REMOVE),
     ("It depends on context", Decision.AMBIGUOUS), ("  YES", Decision.KEEP), ("", Decision.AMBIGUOUS),
     ("**No**", Decision.REMOVE), ("nope", Decision.AMBIGUOUS)],
)
def test_parse_verdict(raw, decision):
    assert parse_verdict(raw) is decision


def test_mock_rule_on_golden_values():
    assert MockJudge().judge(golden_prompt()).decision is Decision.REMOVE  # 8.5 vs 4.2 Hz
    f4 = TextualDescription("F4", "frontal lobe", "moderate", "a regular background", "a stable pattern")
    f4_stats = StatFeatures(1, 1, 9.0, 0, 2, 1, 1, 1, 0, 3, 10, 5)
    assert MockJudge().judge(build_prompt(F3_DESC, F3_STATS, f4, f4_stats)).decision is Decision.KEEP


FREQS = {"F3": 8.0, "F4": 9.0, "T4": 4.0, "O1": 8.0, "C3": 10.0, "P3": 12.0,
         "T3": 6.0, "Fz": 8.5, "O2": 20.0, "Pz": 10.0}
SIX = [("F3", "F4", True), ("F3", "T4", False), ("F3", "O1", False),
       ("C3", "P3", True), ("T3", "Fz", True), ("O2", "Pz", False)]


@pytest.fixture
def crafted(montage):
    t = np.arange(1000) / 250.0
    data = np.array([10 * np.sin(2 * np.pi * FREQS.get(lab, 30.0) * t) for lab in montage.labels])
    window = make_window(data, montage)
    w = np.zeros((19, 19))
    for a, b, _ in SIX:
        i, j = montage.index(a), montage.index(b)
        w[i, j] = w[j, i] = 0.8
    return Graph(w, 0, tuple(montage.labels), 0.5), window


def test_mock_keeps_exactly_the_rule_pairs(crafted, montage):
    g, window = crafted
    out = refine(g, window, MockJudge())
    kept = {tuple(sorted((montage.index(a), montage.index(b)))) for a, b, ok in SIX if ok}
    assert out.edge_set() == kept
    for i, j in kept:
        assert out.weights[i, j] == 0.8


def test_constant_judges(crafted):
    g, window = crafted
    assert refine(g, window, ConstantJudge("yes")).to_json() == g.to_json()
    assert refine(g, window, ConstantJudge("no")).n_edges == 0


def test_idempotent_and_parallel_equals_serial(crafted):
    g, window = crafted
    once = refine(g, window, MockJudge())
    assert refine(once, window, MockJudge()).to_json() == once.to_json()
    assert refine(g, window, MockJudge(), max_parallel=4).to_json() == once.to_json()


def test_ambiguous_retried_then_kept(crafted):
    g, window = crafted
    calls = []

    def fn(prompt):
        calls.append(prompt)
        return "perhaps"

    res = refine_window(g, window, FunctionJudge(fn))
    assert res.graph.to_json() == g.to_json()
    assert len(calls) == 2 * g.n_edges
    assert len(res.warnings) == g.n_edges and all(v.retried for v in res.verdicts)


def test_second_answer_used_after_ambiguity(crafted):
    g, window = crafted
    answers = iter(["hmm", "no"] * 10)
    res = refine_window(g, window, FunctionJudge(lambda p: next(answers)))
    assert res.graph.n_edges == 0 and not res.warnings


def test_hard_failure_reports_partial_progress(crafted):
    g, window = crafted
    seen = []

    def fn(prompt):
        if len(seen) == 3:
            raise JudgeError("boom")
        seen.append(prompt)
        return "yes"

    with pytest.raises(RefinementError) as info:
        refine_window(g, window, FunctionJudge(fn))
    assert len(info.value.completed) == 3
    assert info.value.edge == g.edges()[3]


def test_edge_prompt_rejects_self_loop(crafted):
    with pytest.raises(ValueError):
        edge_prompt(crafted[1], 2, 2)


def test_cache_layout(tmp_path):
    cache = VerdictCache(tmp_path)
    p = golden_prompt()
    cache.put(p, "m1", "No.", Decision.REMOVE)
    files = list(tmp_path.glob("*.json"))
    assert len(files) == 1 and files[0].stem == VerdictCache.key(p, "m1")
    body = cache.get(p, "m1")
    assert set(body) == {"prompt_hash", "judge_id", "raw_response", "decision", "timestamp"}
    assert cache.get(p, "m2") is None


def test_estimator_wrapper(crafted):
    g, window = crafted
    r = EdgeRefiner(MockJudge())
    out = r.fit().transform([g], [window])
    assert len(r.verdicts_) == g.n_edges and out[0].n_edges == 3


# remote judge ---------------------------------------------------------------

def remote_cfg(tmp_path=None, **kw):
    base = dict(kind="remote", judge_id="r1", endpoint="http://judge.test/v1/chat", model="m",
                api_key="secret", max_retries=2, backoff=0.0, rate_limit=0.0,
                cache_dir=str(tmp_path) if tmp_path else None)
    base.update(kw)
    return JudgeConfig(**base)


def chat(text, status=200):
    return httpx.Response(status, json={"choices": [{"message": {"role": "assistant", "content": text}}]})


def test_remote_request_and_cache(tmp_path):
    seen = []

    def handler(request):
        seen.append(request)
        return chat("Yes, they are linked.")

    judge = RemoteJudge(remote_cfg(tmp_path), transport=httpx.MockTransport(handler))
    v = judge.judge(golden_prompt())
    assert v.decision is Decision.KEEP and not v.cached
    body = seen[0].read().decode()
    payload = json.loads(body)
    assert payload["temperature"] == 0 and payload["model"] == "m"
    assert payload["messages"] == [{"role": "user", "content": GOLDEN}]
    assert seen[0].headers["authorization"] == "Bearer secret"

    # a fresh judge with the same cache never touches the network
    warm = RemoteJudge(remote_cfg(tmp_path), transport=httpx.MockTransport(handler))
    v2 = warm.judge(golden_prompt())
    assert v2.cached and v2.decision is Decision.KEEP
    assert warm.network_calls == 0 and len(seen) == 1


def test_remote_retries_server_errors():
    replies = iter([httpx.Response(503), httpx.Response(429), chat("no")])
    judge = RemoteJudge(remote_cfg(), transport=httpx.MockTransport(lambda r: next(replies)))
    assert judge.judge(golden_prompt()).decision is Decision.REMOVE
    assert judge.network_calls == 3


def test_remote_client_error_is_not_retried():
    judge = RemoteJudge(remote_cfg(), transport=httpx.MockTransport(lambda r: httpx.Response(401, text="nope")))
    with pytest.raises(JudgeError) as info:
        judge.judge(golden_prompt())
    assert info.value.status == 401 and judge.network_calls == 1


def test_remote_timeout_exhausts_retries():
    def handler(request):
        raise httpx.ReadTimeout("slow", request=request)

    judge = RemoteJudge(remote_cfg(), transport=httpx.MockTransport(handler))
    with pytest.raises(JudgeError):
        judge.judge(golden_prompt())
    assert judge.network_calls == 3


def test_remote_failure_carries_edge(crafted):
    g, window = crafted
    judge = RemoteJudge(remote_cfg(), transport=httpx.MockTransport(lambda r: httpx.Response(500)))
    with pytest.raises(RefinementError) as info:
        refine_window(g, window, judge)
    assert info.value.edge == g.edges()[0]


def test_remote_config_from_env(monkeypatch):
    monkeypatch.setenv("EEGREFINE_API_KEY", "k-env")
    monkeypatch.setenv("EEGREFINE_JUDGE_URL", "http://env.test/chat")
    cfg = JudgeConfig(kind="remote", model="m").resolved()
    assert cfg.api_key == "k-env" and cfg.endpoint == "http://env.test/chat"
    assert "api_key" not in cfg.public_dict()
    assert "k-env" not in repr(cfg)
    monkeypatch.delenv("EEGREFINE_API_KEY")
    with pytest.raises(ConfigError):
        JudgeConfig(kind="remote", model="m").resolved()


def test_config_validation():
    with pytest.raises(ConfigError):
        JudgeConfig(temperature=0.7)
    with pytest.raises(ConfigError):
        JudgeConfig(max_parallel=0)
    with pytest.raises(ConfigError):
        JudgeConfig(kind="oracle")
    assert JudgeConfig().judge_id == "mock"


def test_prompt_hash_is_stable():
    assert golden_prompt().sha256 == EdgePrompt(golden_prompt().node_i_text, golden_prompt().node_j_text).sha256
