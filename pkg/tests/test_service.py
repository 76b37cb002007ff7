"""Annotation service: hidden-field hygiene, one-shot answers, report
gating, append-only persistence with replay, and the agreement endpoint
against the offline kappa computation.
"""

import json

import pytest
from fastapi.testclient import TestClient

from commgame import game
from commgame.errors import DataFormatError
from commgame.service import (
    Session,
    create_app,
    replay_report,
    session_from_dump,
    session_report,
)

LABELS = ["neg", "pos"]


def make_records(n=8, with_hypothesis=False):
    records = []
    for i in range(n):
        rec = {
            "example_id": f"ex{i}",
            "explainer": "topk_attention",
            "k": 3,
            "message_tokens": [f"w{i}a", f"w{i}b", f"w{i}c"],
            "y_hat": i % 2,
            "y": (i // 2) % 2,
        }
        if with_hypothesis:
            rec["hypothesis"] = ["it", "moves"]
        records.append(rec)
    return records


def fresh_sessions(ids=("s1",), n=8, seed=0):
    return [
        session_from_dump(make_records(n), sid, LABELS, seed=seed, size=200)
        for sid in ids
    ]


def scan_for_hidden(obj, path=""):
    """Recursively assert no response payload carries hidden fields."""
    if isinstance(obj, dict):
        for key, value in obj.items():
            assert key not in ("y_hat", "y"), f"hidden field {key!r} leaked at {path}"
            scan_for_hidden(value, f"{path}.{key}")
    elif isinstance(obj, list):
        for i, value in enumerate(obj):
            scan_for_hidden(value, f"{path}[{i}]")


class TestSessionConstruction:
    def test_items_shuffled_deterministically(self):
        a = session_from_dump(make_records(12), "s", LABELS, seed=5)
        b = session_from_dump(make_records(12), "s", LABELS, seed=5)
        assert [it.item_id for it in a.items] == [it.item_id for it in b.items]
        assert [it.tokens for it in a.items] == [it.tokens for it in b.items]

    def test_distinct_sessions_get_distinct_orders(self):
        a = session_from_dump(make_records(12), "annotator-a", LABELS, seed=5)
        b = session_from_dump(make_records(12), "annotator-b", LABELS, seed=5)
        assert {it.item_id for it in a.items} == {it.item_id for it in b.items}
        assert [it.item_id for it in a.items] != [it.item_id for it in b.items]

    def test_size_cap(self):
        s = session_from_dump(make_records(30), "s", LABELS, seed=0, size=10)
        assert len(s.items) == 10

    def test_token_shuffle_keeps_the_multiset(self):
        s = session_from_dump(make_records(12), "s", LABELS, seed=3)
        by_id = {it.item_id: it for it in s.items}
        for rec in make_records(12):
            assert sorted(by_id[rec["example_id"]].tokens) == sorted(
                rec["message_tokens"]
            )

    def test_hypothesis_carried_as_text(self):
        s = session_from_dump(
            make_records(4, with_hypothesis=True), "s", LABELS, seed=0, task="nli"
        )
        assert all(it.hypothesis == "it moves" for it in s.items)

    def test_empty_dump_rejected(self):
        with pytest.raises(DataFormatError):
            session_from_dump([], "s", LABELS)


@pytest.fixture()
def client(tmp_path):
    sessions = fresh_sessions(("s1", "s2"))
    app = create_app(sessions, tmp_path / "answers.jsonl")
    return TestClient(app), sessions, tmp_path / "answers.jsonl"


def answer_all(client, session_id, label_fn, unsure_fn=lambda i: False):
    """Submit one answer per item in presentation order; returns labels by
    sorted item id for offline recomputation."""
    view = client.get(f"/session/{session_id}").json()
    for i, item in enumerate(view["items"]):
        resp = client.post(
            f"/session/{session_id}/answer",
            json={
                "item_id": item["item_id"],
                "label": label_fn(item, i),
                "unsure": unsure_fn(i),
            },
        )
        assert resp.status_code == 200, resp.text
    return view


class TestEndpoints:
    def test_session_listing(self, client):
        tc, _, _ = client
        listing = tc.get("/sessions").json()
        assert {s["session_id"] for s in listing["sessions"]} == {"s1", "s2"}
        assert all(not s["complete"] for s in listing["sessions"])

    def test_open_session_hides_labels_everywhere(self, client):
        tc, _, _ = client
        scan_for_hidden(tc.get("/sessions").json())
        view = tc.get("/session/s1").json()
        scan_for_hidden(view)
        assert {"item_id", "tokens", "hypothesis"} == set(view["items"][0])
        first = view["items"][0]["item_id"]
        resp = tc.post(
            "/session/s1/answer", json={"item_id": first, "label": 0, "unsure": False}
        )
        scan_for_hidden(resp.json())
        refused = tc.get("/session/s1/report")
        assert refused.status_code == 409
        scan_for_hidden(refused.json())

    def test_unknown_session_404(self, client):
        tc, _, _ = client
        assert tc.get("/session/nope").status_code == 404

    def test_unknown_item_404(self, client):
        tc, _, _ = client
        resp = tc.post("/session/s1/answer", json={"item_id": "ghost", "label": 0})
        assert resp.status_code == 404

    def test_label_out_of_range_422(self, client):
        tc, sessions, _ = client
        item = sessions[0].items[0].item_id
        resp = tc.post("/session/s1/answer", json={"item_id": item, "label": 7})
        assert resp.status_code == 422
        assert resp.json()["detail"]["error"] == "unknown_label"

    def test_answers_are_one_shot(self, client):
        tc, sessions, _ = client
        item = sessions[0].items[0].item_id
        assert (
            tc.post("/session/s1/answer", json={"item_id": item, "label": 0}).status_code
            == 200
        )
        again = tc.post("/session/s1/answer", json={"item_id": item, "label": 1})
        assert again.status_code == 409
        assert again.json()["detail"]["error"] == "already_answered"

    def test_report_refused_until_complete_then_served(self, client):
        tc, sessions, _ = client
        hidden = {it.item_id: it.y_hat for it in sessions[0].items}
        assert tc.get("/session/s1/report").status_code == 409
        answer_all(tc, "s1", lambda item, i: hidden[item["item_id"]])
        report = tc.get("/session/s1/report").json()
        assert report["csr_h"] == 1.0
        assert report["n_items"] == 8
        assert report["unsure_fraction"] == 0.0
        # gold differs from the prediction on half the items by construction
        assert report["acc_h"] == 0.5

    def test_closed_session_rejects_answers(self, client):
        tc, sessions, _ = client
        hidden = {it.item_id: it.y_hat for it in sessions[0].items}
        answer_all(tc, "s1", lambda item, i: hidden[item["item_id"]])
        resp = tc.post(
            "/session/s1/answer",
            json={"item_id": sessions[0].items[0].item_id, "label": 0},
        )
        assert resp.status_code == 409
        assert resp.json()["detail"]["error"] == "session_closed"

    def test_unsure_fraction_and_sure_only_rates(self, client):
        tc, sessions, _ = client
        hidden = {it.item_id: it.y_hat for it in sessions[0].items}
        answer_all(
            tc,
            "s1",
            lambda item, i: hidden[item["item_id"]] if i >= 2 else 1 - hidden[item["item_id"]],
            unsure_fn=lambda i: i < 2,
        )
        report = tc.get("/session/s1/report").json()
        assert report["unsure_fraction"] == pytest.approx(0.25)
        assert report["csr_h"] == pytest.approx(0.75)
        assert report["csr_h_sure_only"] == 1.0


class TestPersistence:
    def test_answer_log_is_append_only_jsonl(self, client):
        tc, sessions, log_path = client
        hidden = {it.item_id: it.y_hat for it in sessions[0].items}
        answer_all(tc, "s1", lambda item, i: hidden[item["item_id"]])
        lines = log_path.read_text().strip().split("\n")
        assert len(lines) == 8
        for line in lines:
            rec = json.loads(line)
            assert set(rec) == {"session", "item", "label", "unsure", "ts"}

    def test_replay_reconstructs_identical_report(self, client):
        tc, sessions, log_path = client
        hidden = {it.item_id: it.y_hat for it in sessions[0].items}
        answer_all(
            tc, "s1", lambda item, i: hidden[item["item_id"]], unsure_fn=lambda i: i == 0
        )
        live = tc.get("/session/s1/report").json()
        replayed = replay_report(log_path, sessions)
        assert replayed["s1"] == live
        assert "s2" not in replayed  # incomplete sessions yield no report

    def test_restart_resumes_from_log(self, client, tmp_path):
        tc, sessions, log_path = client
        view = tc.get("/session/s1").json()
        for item in view["items"][:3]:
            tc.post("/session/s1/answer", json={"item_id": item["item_id"], "label": 1})
        # simulate a crash: new process = fresh session objects, same log
        revived = fresh_sessions(("s1", "s2"))
        tc2 = TestClient(create_app(revived, log_path))
        resumed = tc2.get("/session/s1").json()
        assert len(resumed["answered"]) == 3
        assert set(resumed["answered"]) == {
            item["item_id"] for item in view["items"][:3]
        }
        for item in view["items"][3:]:
            tc2.post("/session/s1/answer", json={"item_id": item["item_id"], "label": 1})
        assert tc2.get("/session/s1/report").status_code == 200


class TestAgreementEndpoint:
    def test_matches_offline_kappa_exactly(self, tmp_path):
        sessions = fresh_sessions(("anno-a", "anno-b"), n=12, seed=9)
        tc = TestClient(create_app(sessions, tmp_path / "log.jsonl"))
        # annotator A follows the prediction; B flips every third item
        hidden = {it.item_id: it.y_hat for it in sessions[0].items}
        answer_all(tc, "anno-a", lambda item, i: hidden[item["item_id"]])
        flipped = {
            iid: (1 - label if j % 3 == 0 else label)
            for j, (iid, label) in enumerate(sorted(hidden.items()))
        }
        answer_all(tc, "anno-b", lambda item, i: flipped[item["item_id"]])
        resp = tc.get("/agreement", params={"a": "anno-a", "b": "anno-b"})
        assert resp.status_code == 200
        payload = resp.json()
        ids = sorted(hidden)
        offline = game.agreement([hidden[i] for i in ids], [flipped[i] for i in ids])
        assert payload["p_o"] == offline.p_o
        assert payload["p_e"] == offline.p_e
        assert payload["kappa"] == offline.kappa

    def test_requires_completion_and_matching_items(self, tmp_path):
        sessions = fresh_sessions(("a", "b"), n=4)
        other = [session_from_dump(make_records(6), "c", LABELS, seed=1)]
        tc = TestClient(create_app(sessions + other, tmp_path / "log.jsonl"))
        assert tc.get("/agreement", params={"a": "a", "b": "b"}).status_code == 409
        for sid in ("a", "b", "c"):
            view = tc.get(f"/session/{sid}").json()
            for item in view["items"]:
                tc.post(f"/session/{sid}/answer", json={"item_id": item["item_id"], "label": 0})
        assert tc.get("/agreement", params={"a": "a", "b": "b"}).status_code == 200
        mismatch = tc.get("/agreement", params={"a": "a", "b": "c"})
        assert mismatch.status_code == 409
        assert mismatch.json()["detail"]["error"] == "item_mismatch"


class TestReportArithmetic:
    def test_session_report_counts_by_hand(self):
        session = fresh_sessions(("s",), n=4)[0]
        by_id = {it.item_id: it for it in session.items}
        answers = {}
        for i, it in enumerate(session.items):
            answers[it.item_id] = {"label": it.y_hat if i < 3 else 1 - it.y_hat,
                                   "unsure": i == 0, "ts": 0.0}
        session.answers = answers
        report = session_report(session)
        assert report["csr_h"] == 0.75
        assert report["unsure_fraction"] == 0.25
        sure_hits = sum(
            answers[it.item_id]["label"] == it.y_hat
            for i, it in enumerate(session.items) if i != 0
        )
        assert report["csr_h_sure_only"] == pytest.approx(sure_hits / 3)

    def test_all_unsure_yields_null_sure_only(self):
        session = fresh_sessions(("s",), n=2)[0]
        session.answers = {
            it.item_id: {"label": 0, "unsure": True, "ts": 0.0} for it in session.items
        }
        report = session_report(session)
        assert report["csr_h_sure_only"] is None
        assert report["unsure_fraction"] == 1.0
