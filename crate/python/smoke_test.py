"""Smoke test for the qgen Python module.

Build first with `pip install -e crates/python --no-build-isolation`, then run
`python python/smoke_test.py`.
"""

import http.server
import json
import math
import pathlib
import re
import tempfile
import threading

import qgen

DOC = """# Archive

Rivers carry sediment toward distant deltas. The archive lists marker7 beside its entry.

# Ledger

Clerks balance the accounts each evening. The ledger records marker8 in red ink.
"""


class MockLlm(http.server.BaseHTTPRequestHandler):
    """Chat-completions stand-in answering two pairs about the chunk's marker token."""

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        prompt = body["messages"][-1]["content"]
        marker = (re.findall(r"marker\d+", prompt) or ["nothing"])[0]
        pairs = [
            {"question": f"What is {marker}?", "answer": marker},
            {"question": f"Where is {marker} listed?", "answer": f"Beside {marker}."},
        ]
        reply = {"choices": [{"message": {"role": "assistant", "content": json.dumps(pairs)}}]}
        data = json.dumps(reply).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


def check_metrics():
    # Brevity penalty exp(1 - 6/3) with perfect unigram precision.
    assert math.isclose(qgen.bleu("the cat sat", "the cat sat on the mat", 1), math.exp(-1), abs_tol=1e-12)
    assert qgen.rouge("the cat sat", "the cat sat")["rouge1_f"] == 1.0
    assert math.isclose(qgen.meteor("the cat sat", "the cat sat"), 1 - 0.5 * (1 / 3) ** 3)
    assert qgen.count_cosine("a b", "a b") == 1.0
    assert 0.0 <= qgen.tfidf_cosine("cat ran", "cat sat", ["cat sat", "dog ran"]) <= 1.0
    assert qgen.tokenize("The Cat's, sat!") == ["the", "cat's", "sat"]
    try:
        qgen.bleu("", "x", 1)
    except qgen.QgenError:
        pass
    else:
        raise AssertionError("empty candidate must raise")


def check_attribution():
    sentences = qgen.split_sentences("Dr. Smith left. Then he ran!")
    assert [s["text"] for s in sentences] == ["Dr. Smith left.", "Then he ran!"]
    assert sentences[1]["span"] == [16, 28]
    chunk = "Paris is the capital of France. Berlin is the capital of Germany."
    best = qgen.best_sentence(chunk, "What is the capital of France?", "Paris")
    assert (best["sentence_index"], best["score"], best["runner_up_score"]) == (0, 4.0, 1.0)
    assert qgen.highlight_spans("Paris is big", "", "Paris") == [{"char_span": [0, 5], "source": "answer"}]
    parsed = qgen.parse_response('[{"question": "Q?", "answer": "A"}, {"question": "", "answer": "x"}]')
    assert parsed == {"pairs": [{"question": "Q?", "answer": "A"}], "dropped": 1}


def check_workspace():
    server = http.server.ThreadingHTTPServer(("127.0.0.1", 0), MockLlm)
    threading.Thread(target=server.serve_forever, daemon=True).start()
    try:
        with tempfile.TemporaryDirectory() as tmp:
            ws = qgen.Workspace(tmp)
            ws.add_provider({
                "provider_id": "mock",
                "base_url": f"http://127.0.0.1:{server.server_port}/v1",
                "model_name": "mock",
            })
            group = ws.create_group("archive")
            doc = ws.ingest(group["group_id"], "archive", DOC)
            assert ws.document_text(doc["doc_id"]).startswith("Archive\n\nRivers")
            chunks = ws.chunks(doc["doc_id"])
            assert len(chunks) == 2

            dataset = ws.generate(group["group_id"], {"provider_id": "mock", "questions_per_chunk": 2})
            assert len(dataset["pairs"]) == 2 * len(chunks)
            assert [d["dataset_id"] for d in ws.datasets()] == [dataset["dataset_id"]]
            for pair in dataset["pairs"]:
                chunk = next(c for c in dataset["chunk_snapshot"] if c["chunk_id"] == pair["chunk_id"])
                start, end = pair["attribution"]["sentence_span"]
                assert pair["answer"].split()[-1].strip(".") in chunk["text"][start:end]

            exact = ws.pairs(dataset["dataset_id"], filter="answer.bleu1 > 0", sort="answer.meteor:desc")
            assert exact and all(p["metric_report"]["answer"]["bleu1"] > 0 for p in exact)

            export = ws.export(dataset["dataset_id"], test_fraction=0.25, valid_fraction=0.25, shuffle=True, seed=1)
            assert export["manifest"]["counts"] == {"train": 2, "valid": 1, "test": 1}
            lines = (pathlib.Path(export["export_dir"]) / "train.jsonl").read_text().splitlines()
            assert len(lines) == 2 and all("text" in json.loads(line) for line in lines)
    finally:
        server.shutdown()


if __name__ == "__main__":
    check_metrics()
    check_attribution()
    check_workspace()
    print("qgen smoke test passed")
