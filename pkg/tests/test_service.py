import json

import pytest
from fastapi.testclient import TestClient

from parley.service import SessionStore, create_app

from fakes import ALICE_SCRIPT_STEPS, alice_brain, alice_config_dict


@pytest.fixture()
def store(tmp_path):
    return SessionStore(tmp_path / "data", gateway_factory=lambda config: alice_brain(), model_id="scripted-1")


@pytest.fixture()
def client(store):
    app = create_app(store=store, sse_keepalive_s=0.2)
    with TestClient(app) as c:
        yield c


def create_alice(client):
    response = client.post("/sessions", json={"config": alice_config_dict()})
    assert response.status_code == 200, response.text
    return response.json()


def drive_full_session(client, session_id):
    """Run the scripted Alice session over the HTTP API."""
    baseline_types: list[dict] = []
    for step in ALICE_SCRIPT_STEPS:
        for _ in range(50):
            state = client.get(f"/sessions/{session_id}/state").json()["snapshot"]
            window_ok = _condition(step["await"], baseline_types, state)
            if state["awaiting_user"] and window_ok:
                ack = client.post(f"/sessions/{session_id}/utterance", json={"text": step["reply"]})
                assert ack.status_code == 200, ack.text
                baseline_types = []
                break
            produced = client.post(f"/sessions/{session_id}/advance").json()
            baseline_types.extend(produced["events"])
        else:
            raise AssertionError(f"step never satisfied: {step}")
    while True:
        produced = client.post(f"/sessions/{session_id}/advance").json()
        if produced["awaiting_user"] or not produced["events"]:
            break


def _condition(condition, window, state):
    if condition == "user_turn":
        return True
    if condition.startswith("agent:"):
        name = condition.split(":", 1)[1]
        return any(
            e["type"] == "agent_utterance" and e["payload"]["speaker"] == f"agent:{name}" for e in window
        )
    if condition.startswith("phase:"):
        return state["phase"] == condition.split(":", 1)[1]
    return any(e["type"] == condition for e in window)


class TestSessionEndpoints:
    def test_create_returns_warmup_snapshot(self, client):
        body = create_alice(client)
        assert body["snapshot"]["phase"] == "GettingToKnowYou"
        assert body["snapshot"]["history"] == []
        assert not body["snapshot"]["awaiting_user"]

    def test_unknown_session_404(self, client):
        assert client.get("/sessions/nope/state").status_code == 404
        assert client.post("/sessions/nope/advance").status_code == 404

    def test_post_before_assessor_turn_409(self, client):
        body = create_alice(client)
        response = client.post(f"/sessions/{body['session_id']}/utterance", json={"text": "hi"})
        assert response.status_code == 409

    def test_advance_drives_one_assessor_turn(self, client):
        body = create_alice(client)
        produced = client.post(f"/sessions/{body['session_id']}/advance").json()
        assert [e["type"] for e in produced["events"]] == ["prompt_rendered", "model_call", "agent_utterance"]
        assert produced["awaiting_user"]

    def test_bad_config_422(self, client):
        response = client.post("/sessions", json={"config": {"object_trigger_interval": 1}})
        assert response.status_code == 422

    def test_full_replayed_session_generates_speaker(self, client):
        body = create_alice(client)
        drive_full_session(client, body["session_id"])
        transcript = client.get(f"/sessions/{body['session_id']}/transcript")
        events = [json.loads(l) for l in transcript.text.splitlines()]
        generated = [e for e in events if e["type"] == "object_generated"]
        assert [e["payload"]["noun"] for e in generated] == ["speaker"]
        snap = client.get(f"/sessions/{body['session_id']}/state").json()["snapshot"]
        assert snap["phase"] == "MultiParty"
        assert snap["registry"]["used"] == ["speaker"]

    def test_scene_endpoint_advances_phase(self, client, store):
        config = alice_config_dict()
        config.pop("scene")
        body = client.post("/sessions", json={"config": config}).json()
        sid = body["session_id"]
        # drive assessment to its end
        for reply in ("Hello! I am Alice.", "I like music, I listen rock every day."):
            client.post(f"/sessions/{sid}/advance")
            client.post(f"/sessions/{sid}/utterance", json={"text": reply})
        client.post(f"/sessions/{sid}/advance")
        state = client.get(f"/sessions/{sid}/state").json()["snapshot"]
        assert state["phase"] == "SceneCapture"
        response = client.post(
            f"/sessions/{sid}/scene",
            json={"objects": ["Plant", "plant", "headphones"], "description": "an office desk"},
        )
        assert response.status_code == 200
        assert response.json()["phase"] == "MultiParty"
        second = client.post(f"/sessions/{sid}/scene", json={"objects": [], "description": "again"})
        assert second.status_code == 409


class TestEventStream:
    def test_stream_bytes_equal_persisted_jsonl(self, client, store):
        body = create_alice(client)
        sid = body["session_id"]
        client.post(f"/sessions/{sid}/advance")
        with client.stream("GET", f"/sessions/{sid}/events?follow=false") as response:
            lines = [l for l in response.iter_lines() if l.startswith("data: ")]
        streamed = [l[len("data: "):] for l in lines]
        persisted = (store.data_dir / f"{sid}.jsonl").read_text(encoding="utf-8").splitlines()
        assert streamed == persisted

    def test_stream_resumes_from_seq(self, client):
        body = create_alice(client)
        sid = body["session_id"]
        client.post(f"/sessions/{sid}/advance")
        with client.stream("GET", f"/sessions/{sid}/events?follow=false&from_seq=2") as response:
            seqs = [json.loads(l[6:])["seq"] for l in response.iter_lines() if l.startswith("data: ")]
        assert seqs and seqs[0] == 3 and seqs == sorted(seqs)

    def test_last_event_id_header_resumes(self, client):
        body = create_alice(client)
        sid = body["session_id"]
        client.post(f"/sessions/{sid}/advance")
        with client.stream(
            "GET", f"/sessions/{sid}/events?follow=false", headers={"Last-Event-ID": "3"}
        ) as response:
            seqs = [json.loads(l[6:])["seq"] for l in response.iter_lines() if l.startswith("data: ")]
        assert seqs[0] == 4

    def test_live_follow_delivers_new_events(self, client):
        body = create_alice(client)
        sid = body["session_id"]
        client.post(f"/sessions/{sid}/advance")
        expected_total = 5  # session_created, phase_changed, prompt, call, utterance
        got = []
        with client.stream("GET", f"/sessions/{sid}/events?max_events={expected_total}") as response:
            for line in response.iter_lines():
                if line.startswith("data: "):
                    got.append(json.loads(line[6:]))
        assert [e["seq"] for e in got] == list(range(1, expected_total + 1))

    def test_follow_mode_includes_sse_ids_for_resume(self, client):
        body = create_alice(client)
        sid = body["session_id"]
        with client.stream("GET", f"/sessions/{sid}/events?max_events=2") as response:
            ids = [l[4:] for l in response.iter_lines() if l.startswith("id: ")]
        assert ids == ["1", "2"]


class TestCrashRecovery:
    def test_new_store_restores_from_jsonl(self, client, store, tmp_path):
        body = create_alice(client)
        sid = body["session_id"]
        drive_full_session(client, sid)
        snapshot_before = client.get(f"/sessions/{sid}/state").json()["snapshot"]

        # simulate a process restart: fresh store over the same data dir
        reborn = SessionStore(
            store.data_dir, gateway_factory=lambda config: alice_brain(), model_id="scripted-1"
        )
        app2 = create_app(store=reborn, sse_keepalive_s=0.2)
        with TestClient(app2) as client2:
            snapshot_after = client2.get(f"/sessions/{sid}/state").json()["snapshot"]
        assert snapshot_after == snapshot_before
