import http.server
import json
import threading

import numpy as np
import pytest

from flowquery.corpus import segment_from_points
from flowquery.errors import BadParam, BadResponse, ServiceUnavailable
from flowquery.llmbridge import (ChatClientConfig, ChatTurn, extract_tags,
                                 chat, gen_instruction_data, merge_tags,
                                 render_views, review_sample, trim_history)


class _MockChat(http.server.BaseHTTPRequestHandler):
    behavior = "echo"

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        if self.behavior == "echo":
            text = body["messages"][-1]["content"]
            payload = {"choices": [{"message": {"role": "assistant",
                                                "content": text}}]}
            self.send_response(200)
        elif self.behavior == "malformed":
            payload = {"unexpected": True}
            self.send_response(200)
        else:
            payload = {}
            self.send_response(500)
        blob = json.dumps(payload).encode()
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(blob)))
        self.end_headers()
        self.wfile.write(blob)

    def log_message(self, *args):
        pass


@pytest.fixture()
def mock_endpoint():
    server = http.server.ThreadingHTTPServer(("127.0.0.1", 0), _MockChat)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_port}/v1/chat"
    server.shutdown()


# chat -------------------------------------------------------------------------

def test_chat_requires_endpoint():
    with pytest.raises(ServiceUnavailable):
        chat([ChatTurn("user", "hi")], ChatClientConfig(endpoint=""))


def test_chat_echo_roundtrip(mock_endpoint):
    _MockChat.behavior = "echo"
    history = [ChatTurn("system", "be brief"), ChatTurn("user", "hello flow")]
    reply = chat(history, ChatClientConfig(endpoint=mock_endpoint))
    assert reply.role == "assistant"
    assert reply.text == "hello flow"
    assert len(history) == 2  # input history untouched


def test_chat_malformed_payload(mock_endpoint):
    _MockChat.behavior = "malformed"
    with pytest.raises(BadResponse):
        chat([ChatTurn("user", "hi")], ChatClientConfig(endpoint=mock_endpoint))
    _MockChat.behavior = "echo"


def test_history_trimming_keeps_system_turns():
    history = [ChatTurn("system", "S" * 10)]
    for i in range(9):
        history.append(ChatTurn("user" if i % 2 == 0 else "assistant",
                                f"turn{i}" + "x" * 94))  # 100 chars each
    # budget fits the system turn plus the last 4 conversation turns
    kept = trim_history(history, budget=10 + 4 * 100)
    assert kept[0].role == "system"
    assert [t.text[:5] for t in kept[1:]] == ["turn5", "turn6", "turn7", "turn8"]
    assert len(history) == 10


# tags -------------------------------------------------------------------------

def test_lexicon_extraction_on_response_fragment():
    turn = ChatTurn("assistant", "Small disturbances in laminar flow, "
                                 "particularly under high Reynolds number "
                                 "conditions, can trigger vortex formation.")
    tags = extract_tags(turn, mode="lexicon")
    assert {t.name for t in tags} == {"laminar flow", "vortex"}
    assert all(t.query_text == t.name for t in tags)


def test_lexicon_no_hits():
    turn = ChatTurn("assistant", "The weather is nice today.")
    assert extract_tags(turn, mode="lexicon") == []


def test_extract_requires_assistant_turn():
    with pytest.raises(BadParam):
        extract_tags(ChatTurn("user", "vortex"), mode="lexicon")


def test_llm_mode_requires_endpoint():
    with pytest.raises(ServiceUnavailable):
        extract_tags(ChatTurn("assistant", "vortex"), mode="llm",
                     config=ChatClientConfig(endpoint=""))


def test_llm_mode_parses_list(mock_endpoint):
    _MockChat.behavior = "echo"
    turn = ChatTurn("assistant", "vortex street, jet stream\nshear layer")
    tags = extract_tags(turn, mode="llm",
                        config=ChatClientConfig(endpoint=mock_endpoint))
    assert [t.name for t in tags] == ["vortex street", "jet stream", "shear layer"]


def test_merge_idempotent_and_case_insensitive():
    turn = ChatTurn("assistant", "Vortex meets turbulence near the eddy.")
    first = extract_tags(turn, mode="lexicon")
    merged = merge_tags([], first)
    again = merge_tags(merged, extract_tags(turn, mode="lexicon"))
    assert [t.name for t in again] == [t.name for t in merged]
    upper = [ChatTurn("assistant", "VORTEX!")]
    more = extract_tags(upper[0], mode="lexicon")
    assert [t.name for t in merge_tags(merged, more)] == [t.name for t in merged]


def test_merge_commutative_as_sets():
    a = extract_tags(ChatTurn("assistant", "vortex and shear"), "lexicon")
    b = extract_tags(ChatTurn("assistant", "eddy and vortex"), "lexicon")
    ab = {t.name for t in merge_tags(merge_tags([], a), b)}
    ba = {t.name for t in merge_tags(merge_tags([], b), a)}
    assert ab == ba == {"vortex", "shear", "eddy"}


# rendering ---------------------------------------------------------------------

def test_render_views_count_and_determinism(tmp_path):
    th = np.linspace(0, 2 * np.pi, 50)
    pts = np.stack([np.cos(th), np.sin(th), 0.2 * th], axis=1)
    a = render_views(pts, n_views=3, size=64)
    b = render_views(pts, n_views=3, size=64)
    assert len(a) == 3
    for img_a, img_b in zip(a, b):
        assert img_a.tobytes() == img_b.tobytes()
    p1, p2 = tmp_path / "x.png", tmp_path / "y.png"
    a[0].save(p1)
    b[0].save(p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_render_translation_invariant():
    rng = np.random.default_rng(0)
    pts = np.cumsum(rng.standard_normal((40, 3)), axis=0)
    a = render_views(pts, n_views=2, size=64)
    b = render_views(pts + np.array([17.0, -4.0, 9.5]), n_views=2, size=64)
    for img_a, img_b in zip(a, b):
        assert img_a.tobytes() == img_b.tobytes()


def test_render_straight_segment_is_a_line():
    # a straight segment along y spans the front (azimuth 0) view
    pts = np.stack([np.zeros(20), np.linspace(0, 1, 20), np.linspace(0, 0.5, 20)],
                   axis=1)
    img = render_views(pts, n_views=1, size=128)[0]
    arr = 255.0 - np.asarray(img, dtype=np.float64)  # ink intensity
    ys, xs = np.nonzero(arr > 16)
    w = arr[ys, xs]
    # intensity-weighted least-squares line fit; rms residual under a pixel
    A = np.stack([xs, np.ones_like(xs)], axis=1).astype(float)
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(A * sw[:, None], ys * sw, rcond=None)
    rms = np.sqrt(np.average((A @ coef - ys) ** 2, weights=w))
    assert rms < 1.0


# instruction data -----------------------------------------------------------------

def make_segments(n=4):
    rng = np.random.default_rng(1)
    return [segment_from_points(np.cumsum(rng.standard_normal((30, 3)), axis=0))
            for _ in range(n)]


def test_dry_run_deterministic_templates(tmp_path):
    segs = make_segments(10)
    a, fail_a = gen_instruction_data(segs, dry_run=True, seed=5, n_views=2)
    b, fail_b = gen_instruction_data(segs, dry_run=True, seed=5, n_views=2)
    assert fail_a == fail_b == 0
    assert [s.template_id for s in a] == [s.template_id for s in b]
    assert len(a) == 10
    assert all(s.instruction for s in a)


def test_mock_endpoint_full_batch(mock_endpoint, tmp_path):
    _MockChat.behavior = "echo"
    segs = make_segments(5)
    out = tmp_path / "data.jsonl"
    samples, failures = gen_instruction_data(
        segs, config=ChatClientConfig(endpoint=mock_endpoint), seed=0,
        n_views=2, out_dir=tmp_path / "views", jsonl_path=out)
    assert failures == 0
    assert len(samples) == 5
    assert all(s.response for s in samples)
    lines = out.read_text().splitlines()
    assert len(lines) == 5
    rec = json.loads(lines[0])
    assert set(rec) == {"template_id", "views", "instruction", "response",
                        "segment_refs"}
    assert len(rec["views"]) == 2


def test_gen_data_requires_endpoint_outside_dry_run():
    with pytest.raises(ServiceUnavailable):
        gen_instruction_data(make_segments(1), config=None, dry_run=False)


def test_review_sample_deterministic():
    samples, _ = gen_instruction_data(make_segments(10), dry_run=True, seed=1)
    a = review_sample(samples, 0.2, seed=3)
    b = review_sample(samples, 0.2, seed=3)
    assert len(a) == 2
    assert [s.template_id for s in a] == [s.template_id for s in b]
