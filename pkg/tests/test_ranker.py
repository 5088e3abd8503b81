import itertools
import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest
import requests
from hypothesis import given, settings
from hypothesis import strategies as st

from rankfit.errors import ConfigError, MalformedAnswer
from rankfit.ranker import (
    EndpointConfig,
    IdentityRanker,
    LlmRanker,
    NoisyOracleRanker,
    OracleRanker,
    RankRequest,
    build_prompt,
    format_answer,
    parse_answer,
    parse_judge_answer,
)

from conftest import make_job, make_resume


def make_request(k=4, job_id="j1", hint=None, request_id="req"):
    return RankRequest(
        job=make_job(job_id),
        candidates=tuple((i + 1, make_resume(f"{job_id}-r{i}")) for i in range(k)),
        request_id=request_id,
        hint=hint,
    )


class TestBuildPrompt:
    def test_contains_all_resume_blocks_and_steps(self):
        system, user = build_prompt(make_request(k=4))
        for slot in range(1, 5):
            assert f"Resume [{slot}]:" in user
        assert "Follow these steps exactly:" in user
        assert "1. First, think" in user
        assert "2. Then, think" in user
        assert "3. Finally, within <answer> tags" in user
        assert "meets ALL of the following mandatory criteria" in user

    def test_answer_format_sentence_verbatim(self):
        system, _ = build_prompt(make_request(k=4))
        assert "<answer> [X] > [Y] > [Z] > [T] </answer>" in system
        assert "<answer> [] > [] > [] > [] </answer>" in system

    def test_hint_appears_exactly_once(self):
        _, user = build_prompt(make_request(hint="The accepted candidate is [2]"))
        assert user.count("Hint: The accepted candidate is [2]") == 1

    def test_no_hint_line_without_hint(self):
        _, user = build_prompt(make_request())
        assert "Hint:" not in user

    def test_deterministic(self):
        req = make_request()
        assert build_prompt(req) == build_prompt(req)

    def test_slot_indices_validated(self):
        with pytest.raises(ConfigError):
            RankRequest(job=make_job("j"), candidates=((2, make_resume("r")),))


class TestParseAnswer:
    def test_clean_answer(self):
        ordering, repaired = parse_answer("<answer> [2] > [3] > [1] > [4] </answer>", 4)
        assert ordering == [2, 3, 1, 4]
        assert repaired is False

    def test_duplicate_repair(self):
        ordering, repaired = parse_answer("<answer> [2] > [2] > [1] > [3] </answer>", 4)
        assert ordering == [2, 1, 3, 4]
        assert repaired is True

    def test_out_of_range_dropped(self):
        ordering, repaired = parse_answer("<answer> [9] > [2] > [1] </answer>", 3)
        assert ordering == [2, 1, 3]
        assert repaired is True

    def test_no_tags(self):
        with pytest.raises(MalformedAnswer):
            parse_answer("no tags here", 4)

    def test_empty_block(self):
        with pytest.raises(MalformedAnswer):
            parse_answer("<answer>  </answer>", 4)

    def test_all_out_of_range(self):
        with pytest.raises(MalformedAnswer):
            parse_answer("<answer> [7] > [8] </answer>", 4)

    def test_takes_last_block(self):
        raw = (
            "the format is <answer> [1] > [2] > [3] > [4] </answer> as shown..."
            "<answer> [4] > [3] > [2] > [1] </answer>"
        )
        ordering, repaired = parse_answer(raw, 4)
        assert ordering == [4, 3, 2, 1]
        assert repaired is False

    def test_reasoning_prefix_ignored(self):
        raw = "<think>Resume [2] looks strongest because...</think>\n<answer> [2] > [1] > [4] > [3] </answer>"
        ordering, _ = parse_answer(raw, 4)
        assert ordering == [2, 1, 4, 3]

    def test_round_trip_exhaustive_small_k(self):
        for k in range(1, 6):
            for perm in itertools.permutations(range(1, k + 1)):
                ordering, repaired = parse_answer(format_answer(list(perm)), k)
                assert ordering == list(perm)
                assert repaired is False

    @settings(max_examples=500)
    @given(raw=st.text(alphabet="<answer]/>[0123456789 \n", max_size=80), k=st.integers(1, 6))
    def test_fuzz_never_nonpermutation(self, raw, k):
        try:
            ordering, _ = parse_answer(raw, k)
        except MalformedAnswer:
            return
        assert sorted(ordering) == list(range(1, k + 1))


class TestJudgeParse:
    def test_yes(self):
        assert parse_judge_answer("<answer> yes </answer>") is True

    def test_no(self):
        assert parse_judge_answer("thinking...<answer>no</answer>") is False

    def test_garbage(self):
        with pytest.raises(MalformedAnswer):
            parse_judge_answer("<answer> maybe </answer>")


class TestReferenceRankers:
    def test_identity(self):
        resp = IdentityRanker()(make_request(k=4))
        assert resp.ordering == [1, 2, 3, 4]
        assert resp.degraded is False

    def test_oracle_gold_at_slot_three(self):
        req = make_request(k=4)
        accepted = {"j1": frozenset({"j1-r2"})}  # slot 3 holds j1-r2
        resp = OracleRanker(accepted)(req)
        assert resp.ordering == [3, 1, 2, 4]

    def test_oracle_no_positive_is_identity(self):
        resp = OracleRanker({})(make_request(k=4))
        assert resp.ordering == [1, 2, 3, 4]

    def test_oracle_two_positives_stable(self):
        req = make_request(k=4)
        accepted = {"j1": frozenset({"j1-r1", "j1-r3"})}  # slots 2 and 4
        resp = OracleRanker(accepted)(req)
        assert resp.ordering == [2, 4, 1, 3]

    def test_oracle_raw_text_parses_back(self):
        req = make_request(k=4)
        resp = OracleRanker({"j1": frozenset({"j1-r2"})})(req)
        assert parse_answer(resp.raw_text, 4)[0] == resp.ordering

    def test_noisy_p_zero_equals_oracle(self):
        accepted = {"j1": frozenset({"j1-r2"})}
        for i in range(20):
            req = make_request(request_id=f"req{i}")
            assert (
                NoisyOracleRanker(accepted, p_flip=0.0, seed=1)(req).ordering
                == OracleRanker(accepted)(req).ordering
            )

    def test_noisy_p_one_gold_never_first(self):
        accepted = {"j1": frozenset({"j1-r2"})}
        ranker = NoisyOracleRanker(accepted, p_flip=1.0, seed=1)
        for i in range(50):
            resp = ranker(make_request(request_id=f"req{i}"))
            assert resp.ordering[0] != 3
            assert sorted(resp.ordering) == [1, 2, 3, 4]

    def test_noisy_rate_monte_carlo(self):
        accepted = {"j1": frozenset({"j1-r0"})}
        ranker = NoisyOracleRanker(accepted, p_flip=0.4, seed=7)
        hits = sum(
            1
            for i in range(10_000)
            if ranker(make_request(request_id=f"mc{i}")).ordering[0] == 1
        )
        assert hits / 10_000 == pytest.approx(0.6, abs=0.02)

    def test_noisy_deterministic_per_request_id(self):
        accepted = {"j1": frozenset({"j1-r0"})}
        a = NoisyOracleRanker(accepted, p_flip=0.5, seed=3)
        b = NoisyOracleRanker(accepted, p_flip=0.5, seed=3)
        for i in range(20):
            req = make_request(request_id=f"req{i}")
            assert a(req).ordering == b(req).ordering

    def test_noisy_bad_p_flip(self):
        with pytest.raises(ConfigError):
            NoisyOracleRanker({}, p_flip=1.5)


class FakeResponse:
    def __init__(self, status_code=200, content="", body=None):
        self.status_code = status_code
        self._body = body if body is not None else {
            "choices": [{"message": {"content": content}}]
        }

    def json(self):
        return self._body


def endpoint_cfg(**overrides):
    defaults = dict(
        base_url="http://localhost:9", model="test-model", retry_backoff_s=0.0
    )
    defaults.update(overrides)
    return EndpointConfig(**defaults)


class TestLlmRanker:
    def test_happy_path(self):
        posts = []

        def post(url, json=None, headers=None, timeout=None):
            posts.append((url, json))
            return FakeResponse(content="<answer> [2] > [3] > [1] > [4] </answer>")

        ranker = LlmRanker(endpoint_cfg(), post=post)
        resp = ranker(make_request(k=4))
        assert resp.ordering == [2, 3, 1, 4]
        assert resp.repaired is False
        assert resp.retry_count == 0
        url, payload = posts[0]
        assert url.endswith("/v1/chat/completions")
        assert payload["model"] == "test-model"
        assert [m["role"] for m in payload["messages"]] == ["system", "user"]
        assert {"temperature", "top_p", "max_tokens"} <= set(payload)

    def test_two_timeouts_then_success(self):
        calls = {"n": 0}

        def post(url, json=None, headers=None, timeout=None):
            calls["n"] += 1
            if calls["n"] <= 2:
                raise requests.Timeout("slow")
            return FakeResponse(content="<answer> [1] > [2] > [3] > [4] </answer>")

        resp = LlmRanker(endpoint_cfg(), post=post)(make_request(k=4))
        assert resp.retry_count == 2
        assert resp.degraded is False
        assert resp.ordering == [1, 2, 3, 4]

    def test_persistent_500_degrades_to_identity(self):
        def post(url, json=None, headers=None, timeout=None):
            return FakeResponse(status_code=500)

        resp = LlmRanker(endpoint_cfg(), post=post)(make_request(k=4))
        assert resp.degraded is True
        assert resp.repaired is True
        assert resp.ordering == [1, 2, 3, 4]

    def test_malformed_answer_retried_then_degraded(self):
        calls = {"n": 0}

        def post(url, json=None, headers=None, timeout=None):
            calls["n"] += 1
            return FakeResponse(content="I refuse to answer in the format")

        resp = LlmRanker(endpoint_cfg(max_retries=3), post=post)(make_request(k=4))
        assert calls["n"] == 3
        assert resp.degraded is True

    def test_auth_failure_is_fatal(self):
        def post(url, json=None, headers=None, timeout=None):
            return FakeResponse(status_code=401)

        with pytest.raises(ConfigError):
            LlmRanker(endpoint_cfg(), post=post)(make_request(k=4))

    def test_missing_api_key_env(self, monkeypatch):
        monkeypatch.delenv("RANKFIT_TEST_KEY", raising=False)
        with pytest.raises(ConfigError):
            LlmRanker(endpoint_cfg(api_key_env="RANKFIT_TEST_KEY"))

    def test_api_key_header_sent(self, monkeypatch):
        monkeypatch.setenv("RANKFIT_TEST_KEY", "sk-123")
        seen = {}

        def post(url, json=None, headers=None, timeout=None):
            seen.update(headers)
            return FakeResponse(content="<answer> [1] > [2] </answer>")

        LlmRanker(endpoint_cfg(api_key_env="RANKFIT_TEST_KEY"), post=post)(make_request(k=2))
        assert seen["Authorization"] == "Bearer sk-123"

    def test_repaired_answer_flagged(self):
        def post(url, json=None, headers=None, timeout=None):
            return FakeResponse(content="<answer> [2] > [2] > [1] </answer>")

        resp = LlmRanker(endpoint_cfg(), post=post)(make_request(k=4))
        assert resp.repaired is True
        assert sorted(resp.ordering) == [1, 2, 3, 4]


class _Handler(BaseHTTPRequestHandler):
    behavior = "ok"
    hits = 0

    def do_POST(self):
        type(self).hits += 1
        length = int(self.headers["Content-Length"])
        body = json.loads(self.rfile.read(length))
        assert body["messages"][0]["role"] == "system"
        if type(self).behavior == "error":
            self.send_response(500)
            self.end_headers()
            return
        reply = {
            "choices": [
                {"message": {"content": "<answer> [2] > [3] > [1] > [4] </answer>"}}
            ]
        }
        payload = json.dumps(reply).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


@pytest.fixture
def http_server():
    server = HTTPServer(("127.0.0.1", 0), _Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_port}"
    server.shutdown()


class TestLlmRankerOverHttp:
    def test_real_transport_happy_path(self, http_server):
        _Handler.behavior = "ok"
        ranker = LlmRanker(endpoint_cfg(base_url=http_server, timeout_s=5))
        resp = ranker(make_request(k=4))
        assert resp.ordering == [2, 3, 1, 4]
        assert resp.latency_ms > 0

    def test_real_transport_500_degrades(self, http_server):
        _Handler.behavior = "error"
        ranker = LlmRanker(endpoint_cfg(base_url=http_server, timeout_s=5))
        resp = ranker(make_request(k=4))
        _Handler.behavior = "ok"
        assert resp.degraded is True
        assert resp.ordering == [1, 2, 3, 4]
