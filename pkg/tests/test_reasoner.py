import json
import socket
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from conceptkit.concepts import builtin_registry, concepts_in_group
from conceptkit.reasoner import (BackendUnreachable, DefaultMock, HttpBackend, InvalidChoice, MissingPlaceholder,
                                 PromptTemplate, ReasonerConfig, ReasonerQuery, Timeout, Transcript, ask,
                                 extract_choice, load_template, make_backend, mock_backend, parse_config,
                                 render_prompt)

HANDLES = tuple(concepts_in_group(builtin_registry(), "handle"))
GRASPS = (("grasp_above", "from above"), ("grasp_front", "from the front"))


class Scripted:
    """Backend replaying canned replies."""

    def __init__(self, *replies):
        self.replies = list(replies)
        self.calls = 0

    def complete(self, prompt, query, timeout=None):
        self.calls += 1
        return self.replies[min(self.calls, len(self.replies)) - 1]


# -- prompts --------------------------------------------------------------------

def test_part_identify_prompt():
    q = ReasonerQuery("PartIdentify", "open the door", (("handle", "handles"),))
    text = render_prompt(load_template("PartIdentify"), q)
    assert "open the door" in text
    assert "part" in text.lower() and "category" in text.lower()


def test_concept_select_prompt_numbers_options():
    q = ReasonerQuery("ConceptSelect", "open the door", HANDLES)
    text = render_prompt(load_template("ConceptSelect"), q)
    for k, (cid, syn) in enumerate(HANDLES, 1):
        assert f"{k}. {cid}: {syn}" in text


def test_missing_task_placeholder():
    q = ReasonerQuery("ConceptSelect", "x", HANDLES)
    with pytest.raises(MissingPlaceholder):
        render_prompt(PromptTemplate("ConceptSelect", "Pick one of {options}"), q)
    with pytest.raises(MissingPlaceholder):
        render_prompt(PromptTemplate("ConceptSelect", "{task} {options} {colour}"), q)


def test_template_kind_must_match():
    with pytest.raises(ValueError):
        render_prompt(load_template("GraspSelect"), ReasonerQuery("ConceptSelect", "x", HANDLES))


@pytest.mark.parametrize("kind", ["PartIdentify", "ConceptSelect", "GraspSelect", "ForceSelect"])
def test_shipped_templates_render(kind):
    q = ReasonerQuery(kind, "lift the lid", GRASPS)
    assert render_prompt(load_template(kind), q) == render_prompt(load_template(kind), q)


def test_select_query_needs_options():
    with pytest.raises(ValueError):
        ReasonerQuery("GraspSelect", "lift")
    with pytest.raises(ValueError):
        ReasonerQuery("Guess", "lift")


# -- mock -----------------------------------------------------------------------

def test_mock_lift_kettle_lid():
    q = ReasonerQuery("GraspSelect", "lift the lid of the kettle", GRASPS)
    assert ask(DefaultMock(), q).chosen == "grasp_above"


def test_mock_rule_examples():
    b = mock_backend({"clockwise": "push_clockwise"}, fallback="pull_out")
    opts = (("push_clockwise", "a"), ("pull_out", "b"))
    assert ask(b, ReasonerQuery("ForceSelect", "turn the faucet clockwise", opts)).chosen == "push_clockwise"
    assert ask(b, ReasonerQuery("ForceSelect", "open the fridge", opts)).chosen == "pull_out"


def test_mock_longest_pattern_wins():
    opts = (("L_Handle", "a"), ("U_Handle", "b"))
    for rules in ([("handle", "L_Handle"), ("bar handle", "U_Handle")],
                  [("bar handle", "U_Handle"), ("handle", "L_Handle")]):
        q = ReasonerQuery("ConceptSelect", "pull the bar handle", opts)
        assert ask(mock_backend(rules), q).chosen == "U_Handle"


def test_mock_declaration_order_breaks_ties():
    opts = (("a", ""), ("b", ""))
    b = mock_backend([("red", "a"), ("blue", "b")])
    assert ask(b, ReasonerQuery("GraspSelect", "blue red", opts)).chosen == "a"


def test_mock_is_pure():
    q = ReasonerQuery("ConceptSelect", "turn the lever", HANDLES)
    b = DefaultMock()
    assert [ask(b, q) for _ in range(3)] == [ask(DefaultMock(), q)] * 3


def test_mock_rejects_empty_pattern():
    with pytest.raises(ValueError):
        mock_backend({"  ": "x"})


# -- ask contract ------------------------------------------------------------------

def test_single_option_skips_backend():
    b = Scripted("ANSWER: nonsense")
    q = ReasonerQuery("ConceptSelect", "open", (("L_Handle", "lever"),))
    assert ask(b, q).chosen == "L_Handle"
    assert b.calls == 0


def test_invalid_choice_after_three_attempts():
    b = Scripted("I would use the Z_Handle here.")
    with pytest.raises(InvalidChoice) as ei:
        ask(b, ReasonerQuery("ConceptSelect", "open", HANDLES))
    assert b.calls == 3 and len(ei.value.raw) == 3


def test_retry_then_valid():
    b = Scripted("hmm", "ANSWER: U_Handle\nbecause it is a bar")
    a = ask(b, ReasonerQuery("ConceptSelect", "open", HANDLES))
    assert a.chosen == "U_Handle" and "bar" in a.rationale and b.calls == 2


def test_free_text_single_mention_accepted():
    q = ReasonerQuery("GraspSelect", "lift", GRASPS)
    assert extract_choice("Use grasp_front for this.", q) == "grasp_front"
    assert extract_choice("grasp_front or grasp_above", q) is None


def test_transcript(tmp_path):
    path = tmp_path / "t.jsonl"
    t = Transcript(str(path))
    ask(Scripted("no", "ANSWER: grasp_above"), ReasonerQuery("GraspSelect", "lift", GRASPS), transcript=t)
    lines = [json.loads(s) for s in path.read_text().splitlines()]
    assert [r["attempt"] for r in lines] == [1, 2]
    assert lines[1]["chosen"] == "grasp_above" and "prompt" in lines[0]


# -- config and http -----------------------------------------------------------------

def test_config_parsing():
    cfg = parse_config('backend = live\nendpoint = "http://x/v1"  # comment\nmodel = m\ntimeout = 5\n')
    assert cfg == ReasonerConfig("live", "http://x/v1", "m", timeout=5.0)
    assert isinstance(make_backend(ReasonerConfig()), DefaultMock)
    assert isinstance(make_backend(cfg), HttpBackend)


@pytest.mark.parametrize("text", ["token = abc", "api_key = abc", "colour = red", "backend = cloud",
                                  "backend = live", "timeout = 0", "just words"])
def test_config_rejections(text):
    with pytest.raises(ValueError):
        parse_config(text)


def _free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def test_http_unreachable():
    b = HttpBackend(f"http://127.0.0.1:{_free_port()}/v1/chat", "m", timeout=2)
    with pytest.raises(BackendUnreachable):
        ask(b, ReasonerQuery("GraspSelect", "lift", GRASPS))


def test_http_timeout():
    srv = socket.socket()
    srv.bind(("127.0.0.1", 0))
    srv.listen(1)
    try:
        b = HttpBackend(f"http://127.0.0.1:{srv.getsockname()[1]}/", "m", timeout=0.3)
        with pytest.raises(Timeout):
            ask(b, ReasonerQuery("GraspSelect", "lift", GRASPS), timeout=0.3)
    finally:
        srv.close()


def test_http_round_trip_on_loopback(monkeypatch):
    seen = {}

    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):
            seen["body"] = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
            seen["auth"] = self.headers.get("Authorization")
            out = json.dumps({"choices": [{"message": {"content": "ANSWER: grasp_front\nside"}}]}).encode()
            self.send_response(200)
            self.send_header("Content-Length", str(len(out)))
            self.end_headers()
            self.wfile.write(out)

        def log_message(self, *a):
            pass

    httpd = HTTPServer(("127.0.0.1", 0), Handler)
    th = threading.Thread(target=httpd.serve_forever, daemon=True)
    th.start()
    try:
        monkeypatch.setenv("CK_TEST_TOKEN", "sekrit")
        b = HttpBackend(f"http://127.0.0.1:{httpd.server_port}/v1", "tiny", "CK_TEST_TOKEN", timeout=5)
        a = ask(b, ReasonerQuery("GraspSelect", "turn it", GRASPS))
    finally:
        httpd.shutdown()
    assert a.chosen == "grasp_front"
    assert seen["auth"] == "Bearer sekrit"
    assert seen["body"]["model"] == "tiny"
