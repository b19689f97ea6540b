import base64
import json
import threading
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor

import pytest

from cropclinic.pipeline import Engine
from cropclinic.core import with_overrides
from cropclinic.service import TraceRing, make_server


@pytest.fixture(scope="module")
def server(engine):
    srv = make_server(engine, "127.0.0.1", 0)
    thread = threading.Thread(target=srv.serve_forever, daemon=True)
    thread.start()
    yield srv
    srv.shutdown()


@pytest.fixture(scope="module")
def base_url(server):
    host, port = server.server_address[:2]
    return f"http://{host}:{port}"


def _request(url, payload=None, headers=None, method=None, raw=None):
    data = raw
    all_headers = dict(headers or {})
    if payload is not None:
        data = json.dumps(payload).encode()
        all_headers.setdefault("Content-Type", "application/json")
    req = urllib.request.Request(url, data=data, headers=all_headers,
                                 method=method or ("POST" if data is not None else "GET"))
    try:
        with urllib.request.urlopen(req, timeout=30) as resp:
            return resp.status, json.loads(resp.read())
    except urllib.error.HTTPError as exc:
        return exc.code, json.loads(exc.read())


class TestQueryEndpoint:
    def test_knowledge_query(self, base_url):
        status, body = _request(f"{base_url}/api/query",
                                {"text": "How does rice blast spread?"})
        assert status == 200
        assert body["routing"]["intent"] == "knowledge_retrieval"
        assert body["routing"]["language"] == "en"
        assert body["tool_output"]["kind"] == "retrieve"
        assert body["answer"]
        assert body["trace_id"]

    def test_detection_query_reports_pixel_corners(self, base_url):
        status, body = _request(f"{base_url}/api/query", {
            "text": "Please highlight the diseased area",
            "image_ref": "img001", "image_width": 640, "image_height": 480,
        })
        assert status == 200
        assert body["routing"]["intent"] == "disease_detection"
        assert body["detections"]
        for det in body["detections"]:
            x0, y0, x1, y1 = det["corners"]
            assert 0 <= x0 <= x1 <= 640
            assert 0 <= y0 <= y1 <= 480
            assert det["name"]

    def test_classification_via_base64_image(self, base_url):
        # raw image bytes can't be featurized by the reference backend, but
        # the request is well-formed so the answer must still be a 200
        encoded = base64.b64encode(b"\x89PNG fake bytes").decode()
        status, body = _request(f"{base_url}/api/query", {
            "text": "What disease is this?",
            "image_base64": encoded, "image_width": 32, "image_height": 32,
        })
        assert status == 200
        assert body["answer"]

    def test_missing_image_clarification(self, base_url):
        status, body = _request(f"{base_url}/api/query",
                                {"text": "What disease is this?"})
        assert status == 200
        assert body["routing"]["missing_image"] is True
        assert body["tool_output"] is None
        assert "attach an image" in body["answer"]

    def test_malformed_json_400(self, base_url):
        status, body = _request(f"{base_url}/api/query", raw=b"{not json",
                                headers={"Content-Type": "application/json"},
                                method="POST")
        assert status == 400

    def test_non_string_text_400(self, base_url):
        status, _ = _request(f"{base_url}/api/query", {"text": 42})
        assert status == 400

    def test_invalid_base64_400(self, base_url):
        status, _ = _request(f"{base_url}/api/query", {
            "text": "x", "image_base64": "!!!", "image_width": 4, "image_height": 4,
        })
        assert status == 400

    def test_image_without_dimensions_400(self, base_url):
        status, _ = _request(f"{base_url}/api/query", {
            "text": "x", "image_ref": "img001",
        })
        assert status == 400

    def test_empty_body_400(self, base_url):
        status, _ = _request(f"{base_url}/api/query", {})
        assert status == 400

    def test_multipart_query(self, base_url):
        boundary = "XBOUNDARYX"
        parts = [
            ("text", "Please highlight the diseased area"),
            ("image_width", "640"),
            ("image_height", "480"),
            ("image_ref", "img002"),
        ]
        chunks = []
        for name, value in parts:
            chunks.append(
                f'--{boundary}\r\nContent-Disposition: form-data; name="{name}"'
                f"\r\n\r\n{value}\r\n".encode()
            )
        chunks.append(
            f'--{boundary}\r\nContent-Disposition: form-data; name="image"; '
            f'filename="leaf.png"\r\nContent-Type: application/octet-stream'
            f"\r\n\r\n".encode() + b"rawbytes\r\n"
        )
        chunks.append(f"--{boundary}--\r\n".encode())
        body = b"".join(chunks)
        status, payload = _request(
            f"{base_url}/api/query", raw=body, method="POST",
            headers={"Content-Type": f"multipart/form-data; boundary={boundary}"},
        )
        assert status == 200
        assert payload["routing"]["intent"] == "disease_detection"
        assert payload["detections"]


class TestOversizedImage:
    def test_413(self, engine):
        small_cap = Engine(
            config=with_overrides(engine.config, max_image_bytes=64),
            routers=engine.routers, head=engine.head,
            feature_store=engine.feature_store, detector=engine.detector,
            kb=engine.kb, templates=engine.templates,
        )
        srv = make_server(small_cap, "127.0.0.1", 0)
        threading.Thread(target=srv.serve_forever, daemon=True).start()
        try:
            host, port = srv.server_address[:2]
            encoded = base64.b64encode(b"z" * 100).decode()
            status, _ = _request(f"http://{host}:{port}/api/query", {
                "text": "x", "image_base64": encoded,
                "image_width": 4, "image_height": 4,
            })
            assert status == 413
        finally:
            srv.shutdown()


class TestOtherEndpoints:
    def test_kb_lookup(self, base_url):
        status, body = _request(f"{base_url}/api/kb/1")
        assert status == 200
        assert body["id"] == 1
        assert {s["title"] for s in body["sections"]} == {
            "Introduction", "Symptoms", "Transmission", "Impact",
            "Control Measures",
        }

    def test_kb_unknown_404(self, base_url):
        assert _request(f"{base_url}/api/kb/999")[0] == 404
        assert _request(f"{base_url}/api/kb/abc")[0] == 404

    def test_trace_round_trip(self, base_url):
        _, body = _request(f"{base_url}/api/query", {"text": "tell me about corn smut"})
        status, trace = _request(f"{base_url}/api/trace/{body['trace_id']}")
        assert status == 200
        assert [e["stage"] for e in trace["events"]] == ["route", "tool", "fusion"]

    def test_trace_unknown_404(self, base_url):
        assert _request(f"{base_url}/api/trace/nope")[0] == 404

    def test_trace_line_delimited_format(self, base_url):
        _, body = _request(f"{base_url}/api/query", {"text": "rice blast impact"})
        with urllib.request.urlopen(
            f"{base_url}/api/trace/{body['trace_id']}?format=ldjson"
        ) as resp:
            assert resp.headers["Content-Type"].startswith("text/plain")
            lines = resp.read().decode("utf-8").splitlines()
        records = [json.loads(line) for line in lines]
        assert [r["stage"] for r in records] == ["route", "tool", "fusion"]

    def test_health(self, base_url):
        status, body = _request(f"{base_url}/api/health")
        assert status == 200
        assert body["tools"] == {
            "router_en": True, "router_zh": True, "classifier": True,
            "detector": True, "retriever": True,
        }
        assert body["kernel_backend"] in ("native", "pure")

    def test_unknown_path_404(self, base_url):
        assert _request(f"{base_url}/api/nothing")[0] == 404


class TestReindex:
    def test_requires_token(self, base_url, monkeypatch):
        monkeypatch.setenv("CROPCLINIC_ADMIN_TOKEN", "hunter2")
        status, _ = _request(f"{base_url}/api/admin/reindex", raw=b"", method="POST")
        assert status == 401
        status, _ = _request(f"{base_url}/api/admin/reindex", raw=b"",
                             headers={"X-Admin-Token": "wrong"}, method="POST")
        assert status == 401
        status, body = _request(f"{base_url}/api/admin/reindex", raw=b"",
                                headers={"X-Admin-Token": "hunter2"}, method="POST")
        assert status == 200
        assert body == {"old_count": 20, "new_count": 20}

    def test_no_token_configured_rejects(self, base_url, monkeypatch):
        monkeypatch.delenv("CROPCLINIC_ADMIN_TOKEN", raising=False)
        status, _ = _request(f"{base_url}/api/admin/reindex", raw=b"",
                             headers={"X-Admin-Token": ""}, method="POST")
        assert status == 401

    def test_queries_consistent_during_reindex(self, base_url, monkeypatch):
        monkeypatch.setenv("CROPCLINIC_ADMIN_TOKEN", "hunter2")

        def query(_):
            return _request(f"{base_url}/api/query",
                            {"text": "symptoms of apple scab"})

        def reindex(_):
            return _request(f"{base_url}/api/admin/reindex", raw=b"",
                            headers={"X-Admin-Token": "hunter2"}, method="POST")

        with ThreadPoolExecutor(max_workers=8) as pool:
            queries = pool.map(query, range(12))
            swaps = pool.map(reindex, range(3))
        for status, body in queries:
            assert status == 200
            assert body["tool_output"]["hits"]
        for status, _ in swaps:
            assert status == 200


class TestTraceRing:
    def test_bounded(self):
        ring = TraceRing(capacity=3)
        for i in range(5):
            ring.put(f"t{i}", {"id": f"t{i}"})
        assert len(ring) == 3
        assert ring.get("t0") is None
        assert ring.get("t4") == {"id": "t4"}
