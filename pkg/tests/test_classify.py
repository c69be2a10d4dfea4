from __future__ import annotations

import itertools
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest
from hypothesis import given
from hypothesis import strategies as st

from memkeeper.classify import (
    ConstantClassifier,
    CountingClassifier,
    LabeledPair,
    LexicalHeuristic,
    NliClassifier,
    NliLabel,
    NliVerdict,
    NoisyClassifier,
    RemoteClassifier,
    RemoteNli,
    classify_batch,
    format_pair_input,
    lexical_heuristic,
    nli_to_op,
    remote_classify,
    table_oracle,
)
from memkeeper.errors import (
    ClassifierFailure,
    ClassifierTimeout,
    DuplicateKey,
    EmptyText,
    MalformedResponse,
    TransportError,
    UnknownLabel,
)
from memkeeper.memory import MemOp

E, N, C = NliLabel.ENTAILMENT, NliLabel.NEUTRAL, NliLabel.CONTRADICTION

EXAMPLE_PAIRS = [
    ("Lost appetite and doesn't eat much", "Lost appetite", "PASS"),
    ("Not sick", "Doesn't have any particular health issues", "PASS"),
    ("Goes hiking every weekend", "Goes hiking", "PASS"),
    ("Doesn't have any particular health issues", "Had back surgery", "REPLACE"),
    ("Couldn't sleep well", "Sleeping well after taking sleeping tablets", "REPLACE"),
    ("Living alone", "Being with daughter for a while", "REPLACE"),
    ("Goes to the gym", "Body is sore from exercise", "APPEND"),
    ("Has a dog", "The dog likes carrots", "APPEND"),
    ("Had sore throat", "Throat is fully recovered", "DELETE"),
    ("Takes pain relievers for a migraine", "Migraine is gone", "DELETE"),
]


class TestLabeledPair:
    def test_upper_cases(self):
        assert LabeledPair("a", "b", "pass").gold == "PASS"

    def test_unknown_label(self):
        with pytest.raises(UnknownLabel):
            LabeledPair("a", "b", "MERGE")

    def test_fusion_not_an_op(self):
        p = LabeledPair("a", "b", "FUSION")
        assert p.is_fusion
        with pytest.raises(ValueError):
            p.op


class TestTableOracle:
    @pytest.fixture
    def oracle(self):
        return table_oracle([LabeledPair(m, s, g) for m, s, g in EXAMPLE_PAIRS])

    def test_appetite_pass(self, oracle):
        assert oracle.classify("Lost appetite and doesn't eat much", "Lost appetite") is MemOp.PASS

    def test_sore_throat_delete(self, oracle):
        assert oracle.classify("Had sore throat", "Throat is fully recovered") is MemOp.DELETE

    def test_lookup_normalizes(self, oracle):
        assert oracle.classify("  Had  sore throat", "Throat is fully recovered ") is MemOp.DELETE

    def test_miss_uses_default(self, oracle):
        assert oracle.classify("unknown", "pair") is MemOp.APPEND
        assert oracle.miss_count == 1

    def test_configured_default(self):
        oracle = table_oracle([], default=MemOp.PASS)
        assert oracle.classify("a", "b") is MemOp.PASS

    def test_duplicate_key(self):
        with pytest.raises(DuplicateKey):
            table_oracle([LabeledPair("a", "b", "PASS"), LabeledPair("a ", "b", "APPEND")])

    def test_every_example_row(self, oracle):
        for m, s, g in EXAMPLE_PAIRS:
            assert oracle.classify(m, s) is MemOp(g)


class TestNliMapping:
    @pytest.mark.parametrize("forward, reverse, expected", [
        (E, N, MemOp.PASS),
        (C, E, MemOp.REPLACE),
        (C, N, MemOp.REPLACE),
        (C, C, MemOp.REPLACE),
        (N, N, MemOp.APPEND),
        (N, E, MemOp.REPLACE),
        (N, C, MemOp.APPEND),
    ])
    def test_rows(self, forward, reverse, expected):
        assert nli_to_op(NliVerdict(forward), NliVerdict(reverse)) is expected

    def test_never_delete_over_grid(self):
        ops = {nli_to_op(NliVerdict(f), NliVerdict(r)) for f, r in itertools.product(NliLabel, NliLabel)}
        assert MemOp.DELETE not in ops
        assert ops == {MemOp.PASS, MemOp.REPLACE, MemOp.APPEND}

    def test_reverse_needed_only_when_neutral(self):
        assert nli_to_op(NliVerdict(E)) is MemOp.PASS
        with pytest.raises(ValueError):
            nli_to_op(NliVerdict(N))

    def test_confidence_range(self):
        with pytest.raises(ValueError):
            NliVerdict(E, 1.5)

    def test_adapter_makes_reverse_call_only_on_neutral(self):
        calls = []

        def nli(p, h):
            calls.append((p, h))
            return NliVerdict(N if p == "m" else E)

        assert NliClassifier(nli).classify("m", "s") is MemOp.REPLACE
        assert calls == [("m", "s"), ("s", "m")]
        calls.clear()
        assert NliClassifier(lambda p, h: NliVerdict(C)).classify("m", "s") is MemOp.REPLACE


class TestLexicalHeuristic:
    def test_hiking_pass(self):
        assert lexical_heuristic("Goes hiking every weekend", "Goes hiking") is MemOp.PASS

    def test_identity(self):
        assert lexical_heuristic("x", "x") is MemOp.PASS

    def test_dog_append(self):
        # {Has, a, dog} vs {The, dog, likes, carrots}: Jaccard 1/6
        assert lexical_heuristic("Has a dog", "The dog likes carrots") is MemOp.APPEND

    def test_superset_replaces(self):
        assert lexical_heuristic("Goes hiking", "Goes hiking with a friend") is MemOp.REPLACE

    def test_negation_asymmetry(self):
        # shared {to, church, on, Sundays} over 8 distinct tokens: Jaccard 0.5
        assert lexical_heuristic("Goes to church on Sundays", "No longer goes to church on Sundays") is MemOp.REPLACE

    def test_negation_needs_overlap(self):
        assert lexical_heuristic("Likes tea", "Never goes swimming") is MemOp.APPEND

    def test_empty(self):
        with pytest.raises(EmptyText):
            lexical_heuristic("", "x")

    @given(st.text(min_size=1).filter(lambda t: t.strip()))
    def test_identity_property(self, text):
        assert LexicalHeuristic().classify(text, text) is MemOp.PASS

    @given(st.text(min_size=1).filter(lambda t: t.strip()), st.text(min_size=1).filter(lambda t: t.strip()))
    def test_never_delete(self, a, b):
        assert LexicalHeuristic().classify(a, b) is not MemOp.DELETE


class _Handler(BaseHTTPRequestHandler):
    bodies: list = []
    reply = staticmethod(lambda body: {"label": "0"})

    def do_POST(self):
        n = int(self.headers["Content-Length"])
        body = json.loads(self.rfile.read(n))
        type(self).bodies.append(body)
        payload = type(self).reply(body)
        if isinstance(payload, int):
            self.send_response(payload)
            self.end_headers()
            return
        data = payload if isinstance(payload, bytes) else json.dumps(payload).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture
def server():
    handler = type("H", (_Handler,), {"bodies": []})
    httpd = ThreadingHTTPServer(("127.0.0.1", 0), handler)
    t = threading.Thread(target=httpd.serve_forever, daemon=True)
    t.start()
    handler.url = f"http://127.0.0.1:{httpd.server_address[1]}/classify"
    yield handler
    httpd.shutdown()
    httpd.server_close()


class TestRemote:
    def test_input_template(self):
        assert format_pair_input("a b", "c") == "sentence 1: a b sentence 2: c"

    @pytest.mark.parametrize("token, op", [("0", MemOp.PASS), ("1", MemOp.APPEND),
                                           ("2", MemOp.REPLACE), ("3", MemOp.DELETE)])
    def test_tokens(self, server, token, op):
        server.reply = staticmethod(lambda body: {"label": token})
        assert remote_classify(server.url, "m", "s") is op
        assert server.bodies[-1] == {"input": "sentence 1: m sentence 2: s", "sentence1": "m", "sentence2": "s"}

    def test_out_of_alphabet(self, server):
        server.reply = staticmethod(lambda body: {"label": "7"})
        with pytest.raises(MalformedResponse) as info:
            remote_classify(server.url, "m", "s")
        assert info.value.pair == ("m", "s")

    def test_non_json(self, server):
        server.reply = staticmethod(lambda body: b"not json")
        with pytest.raises(MalformedResponse):
            remote_classify(server.url, "m", "s")

    def test_http_error_is_transport(self, server):
        server.reply = staticmethod(lambda body: 500)
        with pytest.raises(TransportError):
            RemoteClassifier(server.url, retries=1).classify("m", "s")
        assert len(server.bodies) == 2

    def test_unreachable(self):
        with pytest.raises(ClassifierFailure):
            remote_classify("http://127.0.0.1:9/none", "m", "s", timeout=0.5)

    def test_timeout(self, server):
        def slow(body):
            threading.Event().wait(0.5)
            return {"label": "0"}

        server.reply = staticmethod(slow)
        with pytest.raises(ClassifierTimeout):
            remote_classify(server.url, "m", "s", timeout=0.1)

    def test_cached_per_pair(self, server):
        server.reply = staticmethod(lambda body: {"label": "1"})
        clf = RemoteClassifier(server.url)
        for _ in range(3):
            clf.classify("m", "s")
        clf.classify("m ", " s")
        assert clf.requests_sent == 1

    def test_remote_nli(self, server):
        server.reply = staticmethod(lambda body: {"label": "1" if body["sentence1"] == "m" else "0"})
        assert NliClassifier(RemoteNli(server.url)).classify("m", "s") is MemOp.REPLACE

    def test_remote_nli_bad_token(self, server):
        server.reply = staticmethod(lambda body: {"label": "3"})
        with pytest.raises(MalformedResponse):
            RemoteNli(server.url)("a", "b")


class TestBatch:
    def test_empty(self):
        assert classify_batch(ConstantClassifier(), []) == []

    def test_dedupes(self):
        clf = CountingClassifier(ConstantClassifier(MemOp.PASS))
        assert classify_batch(clf, [("a", "b"), ("a", "b")]) == [MemOp.PASS, MemOp.PASS]
        assert clf.calls == 1

    def test_gold_order(self):
        oracle = table_oracle([LabeledPair(m, s, g) for m, s, g in EXAMPLE_PAIRS])
        pairs = [(m, s) for m, s, _ in reversed(EXAMPLE_PAIRS)]
        assert classify_batch(oracle, pairs) == [MemOp(g) for _, _, g in reversed(EXAMPLE_PAIRS)]

    def test_failure_index(self):
        class FailOn:
            concurrent_safe = True

            def classify(self, m, s):
                if m == "bad":
                    raise ClassifierFailure("boom")
                return MemOp.APPEND

        with pytest.raises(ClassifierFailure) as info:
            classify_batch(FailOn(), [("a", "b"), ("bad", "c"), ("bad", "d")])
        assert info.value.index == 1
        assert info.value.pair == ("bad", "c")
        assert "index 1" in str(info.value) or "1" in str(info.value)


class TestNoise:
    def test_zero_noise_is_identity(self):
        clf = NoisyClassifier(ConstantClassifier(MemOp.APPEND), 0.0, seed=3)
        assert all(clf.classify(f"m{i}", "s") is MemOp.APPEND for i in range(200))

    def test_full_noise_always_differs(self):
        clf = NoisyClassifier(ConstantClassifier(MemOp.APPEND), 1.0, seed=3)
        assert all(clf.classify(f"m{i}", "s") is not MemOp.APPEND for i in range(200))

    def test_deterministic_per_pair(self):
        a = NoisyClassifier(ConstantClassifier(), 0.5, seed=1)
        b = NoisyClassifier(ConstantClassifier(), 0.5, seed=1)
        assert [a.classify(str(i), "x") for i in range(100)] == [b.classify(str(i), "x") for i in range(100)]

    def test_rate_close_to_epsilon(self):
        clf = NoisyClassifier(ConstantClassifier(), 0.2, seed=5)
        flipped = sum(clf.classify(f"m{i}", "s") is not MemOp.APPEND for i in range(5000))
        assert abs(flipped / 5000 - 0.2) < 0.03

    def test_bad_epsilon(self):
        with pytest.raises(ValueError):
            NoisyClassifier(ConstantClassifier(), 1.5)
