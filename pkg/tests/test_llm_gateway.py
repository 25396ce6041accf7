from __future__ import annotations

import json
import math
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from sqlrobust.errors import (
    GatewayError,
    GatewayHTTPError,
    GatewayProtocolError,
    GatewayTimeoutError,
)
from sqlrobust.llm_gateway import (
    DEFAULT_STOP,
    CompletionRequest,
    Gateway,
    GatewayConfig,
    LlmParaphraser,
)

from mock_llm import MockLLMServer


class ScriptedServer:
    """Serves a fixed script of (status, body, delay) responses, records requests."""

    def __init__(self, script):
        self.script = list(script)
        self.requests = []
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                outer.requests.append(
                    {"path": self.path, "body": json.loads(self.rfile.read(length) or b"{}")}
                )
                status, body, delay = (
                    outer.script.pop(0) if outer.script else (200, b"{}", 0)
                )
                if delay:
                    time.sleep(delay)
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        self.thread.start()

    @property
    def base_url(self):
        host, port = self.server.server_address
        return f"http://{host}:{port}/v1"

    def stop(self):
        self.server.shutdown()
        self.server.server_close()


def completion_body(text, logprobs=None):
    choice = {"text": text}
    if logprobs is not None:
        choice["logprobs"] = logprobs
    return json.dumps({"choices": [choice]}).encode()


def make_gateway(base_url, tmp_path=None, **overrides):
    cfg = GatewayConfig(
        base_url=base_url,
        model="test-model",
        cache_dir=str(tmp_path / "cache") if tmp_path else None,
        backoff_base_s=0.0,
        timeout_s=overrides.pop("timeout_s", 5.0),
        **overrides,
    )
    return Gateway(cfg)


@pytest.fixture()
def mock_server():
    server = MockLLMServer().start()
    yield server
    server.stop()


class TestCompletionRequest:
    def test_defaults_match_decoding_config(self):
        req = CompletionRequest(prompt="x")
        assert req.max_tokens == 200
        assert req.temperature == 0.0
        assert req.stop == ("--", "\n\n", ";", "#")

    def test_invariants(self):
        with pytest.raises(GatewayError):
            CompletionRequest(prompt="x", max_tokens=0)
        with pytest.raises(GatewayError):
            CompletionRequest(prompt="x", temperature=-1)


class TestComplete:
    def test_stop_token_stripped(self, tmp_path):
        server = ScriptedServer([(200, completion_body("SELECT 1;"), 0)])
        try:
            gateway = make_gateway(server.base_url, tmp_path)
            response = gateway.complete(CompletionRequest(prompt="q", stop=(";",)))
            assert response.text == "SELECT 1"
        finally:
            server.stop()

    def test_default_wire_body(self, tmp_path):
        server = ScriptedServer([(200, completion_body(" ok"), 0)])
        try:
            gateway = make_gateway(server.base_url, tmp_path)
            gateway.complete(CompletionRequest(prompt="hello"))
            body = server.requests[0]["body"]
            assert body["max_tokens"] == 200
            assert body["temperature"] == 0.0
            assert body["stop"] == ["--", "\n\n", ";", "#"]
            assert body["model"] == "test-model"
            assert body["prompt"] == "hello"
        finally:
            server.stop()

    def test_repeat_request_served_from_cache(self, tmp_path):
        server = ScriptedServer([(200, completion_body(" cached"), 0)])
        try:
            gateway = make_gateway(server.base_url, tmp_path)
            first = gateway.complete(CompletionRequest(prompt="q"))
            second = gateway.complete(CompletionRequest(prompt="q"))
            assert first == second
            assert len(server.requests) == 1
            assert gateway.stats.cache_hits == 1
        finally:
            server.stop()

    def test_nonzero_temperature_not_cached(self, tmp_path):
        server = ScriptedServer(
            [(200, completion_body(" a"), 0), (200, completion_body(" b"), 0)]
        )
        try:
            gateway = make_gateway(server.base_url, tmp_path)
            first = gateway.complete(CompletionRequest(prompt="q", temperature=0.7))
            second = gateway.complete(CompletionRequest(prompt="q", temperature=0.7))
            assert (first.text, second.text) == (" a", " b")
            assert len(server.requests) == 2
        finally:
            server.stop()

    def test_retry_on_500_then_success(self, tmp_path):
        server = ScriptedServer(
            [(500, b"boom", 0), (200, completion_body(" fine"), 0)]
        )
        try:
            gateway = make_gateway(server.base_url, tmp_path, max_retries=2)
            response = gateway.complete(CompletionRequest(prompt="q"))
            assert response.text == " fine"
            assert gateway.stats.retries == 1
        finally:
            server.stop()

    def test_persistent_500_exhausts_retries(self, tmp_path):
        server = ScriptedServer([(500, b"boom", 0)] * 5)
        try:
            gateway = make_gateway(server.base_url, tmp_path, max_retries=2)
            with pytest.raises(GatewayHTTPError):
                gateway.complete(CompletionRequest(prompt="q"))
            assert len(server.requests) == 3  # initial + 2 retries
        finally:
            server.stop()

    def test_client_error_fails_fast(self, tmp_path):
        server = ScriptedServer([(403, b"denied", 0)])
        try:
            gateway = make_gateway(server.base_url, tmp_path, max_retries=3)
            with pytest.raises(GatewayHTTPError) as excinfo:
                gateway.complete(CompletionRequest(prompt="q"))
            assert excinfo.value.status_code == 403
            assert len(server.requests) == 1
        finally:
            server.stop()

    def test_malformed_payload_distinguished(self, tmp_path):
        server = ScriptedServer([(200, b'{"nope": true}', 0)])
        try:
            gateway = make_gateway(server.base_url, tmp_path)
            with pytest.raises(GatewayProtocolError):
                gateway.complete(CompletionRequest(prompt="q"))
        finally:
            server.stop()

    def test_timeout_distinguished(self, tmp_path):
        server = ScriptedServer([(200, completion_body(" late"), 2.0)] * 2)
        try:
            gateway = make_gateway(
                server.base_url, tmp_path, timeout_s=0.2, max_retries=1
            )
            with pytest.raises(GatewayTimeoutError):
                gateway.complete(CompletionRequest(prompt="q"))
        finally:
            server.stop()


class TestEmbed:
    def test_unit_norm(self, mock_server, tmp_path):
        gateway = make_gateway(mock_server.base_url, tmp_path)
        (vec,) = gateway.embed(["a"])
        assert math.sqrt(sum(x * x for x in vec)) == pytest.approx(1.0, abs=1e-6)

    def test_batch_order_matches_singletons(self, mock_server, tmp_path):
        gateway = make_gateway(mock_server.base_url, tmp_path)
        batch = gateway.embed(["x text", "y text"])
        assert batch[0] == gateway.embed(["x text"])[0]
        assert batch[1] == gateway.embed(["y text"])[0]

    def test_empty_list_rejected(self, mock_server, tmp_path):
        gateway = make_gateway(mock_server.base_url, tmp_path)
        with pytest.raises(GatewayError):
            gateway.embed([])

    def test_dimension_mismatch_rejected(self, tmp_path):
        payload = json.dumps(
            {"data": [
                {"index": 0, "embedding": [1.0, 0.0]},
                {"index": 1, "embedding": [1.0, 0.0, 0.0]},
            ]}
        ).encode()
        server = ScriptedServer([(200, payload, 0)])
        try:
            gateway = make_gateway(server.base_url, tmp_path)
            with pytest.raises(GatewayProtocolError, match="dimension"):
                gateway.embed(["a", "b"])
        finally:
            server.stop()

    def test_identical_text_identical_vector(self, mock_server, tmp_path):
        gateway = make_gateway(mock_server.base_url, tmp_path)
        a, b = gateway.embed(["same text", "same text"])
        assert a == b


class TestMaskFill:
    def _gateway(self, mock_server, tmp_path):
        return Gateway(
            GatewayConfig(
                base_url=mock_server.base_url,
                mask_model_url=mock_server.mask_url,
                cache_dir=str(tmp_path / "cache"),
                backoff_base_s=0.0,
            )
        )

    def test_fills_sorted_descending(self, mock_server, tmp_path):
        gateway = self._gateway(mock_server, tmp_path)
        fills = gateway.mask_fill("the [MASK] of missouri", k=5)
        assert len(fills) == 5
        probs = [p for _, p in fills]
        assert probs == sorted(probs, reverse=True)
        assert all(0 < p <= 1 for p in probs)

    def test_no_mask_rejected(self, mock_server, tmp_path):
        gateway = self._gateway(mock_server, tmp_path)
        with pytest.raises(GatewayError, match="exactly one"):
            gateway.mask_fill("no mask here", k=5)

    def test_two_masks_rejected(self, mock_server, tmp_path):
        gateway = self._gateway(mock_server, tmp_path)
        with pytest.raises(GatewayError, match="exactly one"):
            gateway.mask_fill("[MASK] and [MASK]", k=5)

    def test_mock_order_preserved(self, tmp_path):
        payload = json.dumps(
            [
                {"token_str": "population", "score": 0.7},
                {"token_str": "capital", "score": 0.2},
            ]
        ).encode()
        server = ScriptedServer([(200, payload, 0)])
        try:
            gateway = Gateway(
                GatewayConfig(
                    base_url=server.base_url,
                    mask_model_url=f"{server.base_url}/fill-mask",
                    cache_dir=str(tmp_path / "cache"),
                    backoff_base_s=0.0,
                )
            )
            fills = gateway.mask_fill("the [MASK] of missouri", k=5)
            assert fills == [("population", 0.7), ("capital", 0.2)]
        finally:
            server.stop()


class TestSequencePerplexity:
    def _scripted(self, logprobs):
        tokens = [f"t{i}" for i in range(len(logprobs))]
        return ScriptedServer(
            [
                (
                    200,
                    json.dumps(
                        {
                            "choices": [
                                {
                                    "text": "",
                                    "logprobs": {
                                        "tokens": tokens,
                                        "token_logprobs": logprobs,
                                    },
                                }
                            ]
                        }
                    ).encode(),
                    0,
                )
            ]
        )

    def test_uniform_half_prob_gives_ppl_two(self, tmp_path):
        server = self._scripted([None, -math.log(2), -math.log(2), -math.log(2)])
        try:
            gateway = make_gateway(server.base_url, tmp_path)
            assert gateway.sequence_perplexity("a b c d") == pytest.approx(2.0, abs=1e-9)
        finally:
            server.stop()

    def test_hand_applied_formula(self, tmp_path):
        # exp(-mean(-1, -3)) = exp(2)
        server = self._scripted([-1.0, -3.0])
        try:
            gateway = make_gateway(server.base_url, tmp_path)
            assert gateway.sequence_perplexity("a b") == pytest.approx(
                math.exp(2), rel=1e-9
            )
        finally:
            server.stop()

    def test_empty_text_rejected(self, tmp_path):
        gateway = make_gateway("http://127.0.0.1:9", tmp_path)
        with pytest.raises(GatewayError):
            gateway.sequence_perplexity("")

    def test_endpoint_without_logprobs_rejected(self, tmp_path):
        server = ScriptedServer([(200, completion_body("x"), 0)])
        try:
            gateway = make_gateway(server.base_url, tmp_path)
            with pytest.raises(GatewayProtocolError):
                gateway.sequence_perplexity("a b")
        finally:
            server.stop()

    def test_cached_and_fresh_agree_exactly(self, mock_server, tmp_path):
        gateway = make_gateway(mock_server.base_url, tmp_path)
        fresh = gateway.sequence_perplexity("what rivers run through texas")
        cached = gateway.sequence_perplexity("what rivers run through texas")
        assert fresh == cached
        assert gateway.stats.cache_hits == 1


class TestParaphraser:
    def test_prompt_shape_and_trim(self, mock_server, tmp_path):
        gateway = make_gateway(mock_server.base_url, tmp_path)
        paraphraser = LlmParaphraser(gateway)
        out = paraphraser.paraphrase("what is the capital of iowa")
        assert out == "Could you tell me what is the capital of iowa?"


class TestRateLimiter:
    def test_rate_limit_spaces_requests(self, tmp_path):
        server = ScriptedServer([(200, completion_body(" a"), 0)] * 3)
        try:
            gateway = make_gateway(server.base_url, None, rate_limit_rps=50.0)
            start = time.monotonic()
            for i in range(3):
                gateway.complete(CompletionRequest(prompt=f"q{i}"))
            elapsed = time.monotonic() - start
            assert elapsed >= 0.02  # 3 requests at 50 rps needs 2 refills
        finally:
            server.stop()
