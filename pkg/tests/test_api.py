import datetime as dt
import hashlib
import hmac
import random

import pytest
from fastapi.testclient import TestClient

from cotrace import psi, tcn
from cotrace.api import create_app
from cotrace.backend import ServerConfig, TracingServer

CRED = "clinic-demo-credential"


@pytest.fixture()
def client():
    server = TracingServer(ServerConfig(min_query=8), rng=random.Random(1))
    app = create_app(server)
    with TestClient(app) as c:
        c.server = server
        yield c


def issue_tan(client):
    resp = client.post("/v1/tan", json={"kind": "MEDICAL", "credential": CRED})
    assert resp.status_code == 200
    return resp.json()["tan"]


def upload_report(client, n_days=1, seed=3):
    rng = random.Random(seed)
    today = dt.date(2020, 4, 20)
    keys = [
        {
            "date": (today - dt.timedelta(days=i)).isoformat(),
            "key_hex": rng.randbytes(32).hex(),
        }
        for i in range(n_days)
    ]
    tan = issue_tan(client)
    resp = client.post("/v1/report", json={"tan": tan, "keys": keys})
    assert resp.status_code == 200
    return resp.json()


class TestHealth:
    def test_ok(self, client):
        assert client.get("/v1/health").json() == {"status": "ok"}


class TestTanEndpoint:
    def test_valid_credential(self, client):
        resp = client.post("/v1/tan", json={"kind": "MEDICAL", "credential": CRED})
        assert resp.status_code == 200
        body = resp.json()
        assert len(body["tan"]) == 12
        assert body["kind"] == "MEDICAL"

    def test_bad_credential(self, client):
        resp = client.post("/v1/tan", json={"kind": "MEDICAL", "credential": "nope"})
        assert resp.status_code == 401
        body = resp.json()
        assert body["code"] == "unauthorized"
        assert "message" in body

    def test_second_order_not_mintable_here(self, client):
        resp = client.post("/v1/tan", json={"kind": "SECOND_ORDER", "credential": CRED})
        assert resp.status_code == 401


class TestReportEndpoint:
    def test_accepts_keys(self, client):
        body = upload_report(client, n_days=14)
        assert body["verified_ce_tcns"] == 2016

    def test_rejects_raw_tcn_payload(self, client):
        tan = issue_tan(client)
        resp = client.post(
            "/v1/report",
            json={"tan": tan, "ce_tcns": ["ab" * 32, "cd" * 32]},
        )
        assert resp.status_code == 400
        assert resp.json()["code"] == "invalid_request"

    def test_rejects_extra_tcns_next_to_keys(self, client):
        tan = issue_tan(client)
        resp = client.post(
            "/v1/report",
            json={
                "tan": tan,
                "keys": [{"date": "2020-04-20", "key_hex": "00" * 32}],
                "tcns": ["ab" * 16],
            },
        )
        assert resp.status_code == 400

    def test_rejects_bad_hex(self, client):
        tan = issue_tan(client)
        resp = client.post(
            "/v1/report",
            json={"tan": tan, "keys": [{"date": "2020-04-20", "key_hex": "zz" * 32}]},
        )
        assert resp.status_code == 400
        assert resp.json()["code"] == "report_rejected"

    def test_rejects_reused_tan(self, client):
        tan = issue_tan(client)
        keys = [{"date": "2020-04-20", "key_hex": "11" * 32}]
        assert client.post("/v1/report", json={"tan": tan, "keys": keys}).status_code == 200
        resp = client.post("/v1/report", json={"tan": tan, "keys": keys})
        assert resp.status_code == 401


class TestBatchesEndpoint:
    def test_direct_mode_sorted(self, client):
        upload_report(client)
        client.server.seal_batch(force=True)
        resp = client.get("/v1/batches", params={"since": 0, "mode": "direct"})
        assert resp.status_code == 200
        batches = resp.json()["batches"]
        assert len(batches) == 1
        entries = batches[0]["entries"]
        assert len(entries) == 144
        hexes = [e["ce_tcn"] for e in entries]
        assert hexes == sorted(hexes)
        assert all(h == h.lower() and len(h) == 64 for h in hexes)
        assert {e["order"] for e in entries} == {"FIRST_ORDER"}

    def test_psi_mode_filters_only(self, client):
        upload_report(client)
        client.server.seal_batch(force=True)
        resp = client.get("/v1/batches", params={"since": 0, "mode": "psi"})
        batch = resp.json()["batches"][0]
        assert "entries" not in batch
        assert set(batch) == {"batch_id", "sealed_at", "filter", "filter_second_order"}
        from cotrace.bloom import BloomFilter

        f = BloomFilter.decode(bytes.fromhex(batch["filter"]))
        assert f.n_capacity == 144

    def test_since(self, client):
        client.server.seal_batch(force=True)
        client.server.seal_batch(force=True)
        resp = client.get("/v1/batches", params={"since": 1})
        assert [b["batch_id"] for b in resp.json()["batches"]] == [2]

    def test_bad_mode(self, client):
        assert client.get("/v1/batches", params={"mode": "carrier-pigeon"}).status_code == 400


class TestPsiEndpoints:
    def _sealed_batch(self, client):
        upload_report(client)
        return client.server.seal_batch(force=True)

    def test_round1_and_refine_flow(self, client):
        batch = self._sealed_batch(client)
        rng = random.Random(9)
        observed = [ce for ce, _ in batch.entries[:5]] + [rng.randbytes(32) for _ in range(3)]

        session = psi.PsiClientSession(rng)
        blob = psi.client_round1(session, observed, min_query=8)
        resp = client.post(
            "/v1/psi/round1",
            json={"client_token": "tok", "batch_id": batch.batch_id,
                  "elements": [e.hex() for e in blob]},
        )
        assert resp.status_code == 200
        body = resp.json()
        from cotrace.bloom import BloomFilter

        published = BloomFilter.decode(bytes.fromhex(body["filter"]))
        echo = [bytes.fromhex(e) for e in body["elements"]]
        assert psi.client_finish(session, echo, published) == 5

        refine_session = psi.PsiClientSession(rng)
        blocks = psi.refine_blocks(
            refine_session, [observed[:2], observed[2:4], observed[4:]], pad_to=len(blob)
        )
        resp = client.post(
            "/v1/psi/refine",
            json={"session_id": body["session_id"],
                  "blocks": [[e.hex() for e in b] for b in blocks]},
        )
        assert resp.status_code == 200
        echo_blocks = [[bytes.fromhex(e) for e in b] for b in resp.json()["blocks"]]
        assert refine_session.finish(echo_blocks, published) == [2, 2, 1]

    def test_rate_limit_shape(self, client):
        batch = self._sealed_batch(client)
        rng = random.Random(10)

        def query():
            session = psi.PsiClientSession(rng)
            blob = psi.client_round1(session, [rng.randbytes(32)], min_query=8)
            return client.post(
                "/v1/psi/round1",
                json={"client_token": "tok", "batch_id": batch.batch_id,
                      "elements": [e.hex() for e in blob]},
            )

        for _ in range(12):
            assert query().status_code == 200
        resp = query()
        assert resp.status_code == 429
        body = resp.json()
        assert body["code"] == "rate_limited"
        assert body["retry_after"] > 0

    def test_undersized_query(self, client):
        batch = self._sealed_batch(client)
        rng = random.Random(11)
        session = psi.PsiClientSession(rng)
        blob = psi.client_round1(session, [rng.randbytes(32)], min_query=2)
        resp = client.post(
            "/v1/psi/round1",
            json={"client_token": "tok", "batch_id": batch.batch_id,
                  "elements": [e.hex() for e in blob]},
        )
        assert resp.status_code == 400
        assert resp.json()["code"] == "query_too_small"

    def test_unknown_batch_404(self, client):
        rng = random.Random(12)
        session = psi.PsiClientSession(rng)
        blob = psi.client_round1(session, [rng.randbytes(32)], min_query=8)
        resp = client.post(
            "/v1/psi/round1",
            json={"client_token": "tok", "batch_id": 42,
                  "elements": [e.hex() for e in blob]},
        )
        assert resp.status_code == 404
        assert resp.json()["code"] == "not_found"

    def test_malformed_element_hex(self, client):
        self._sealed_batch(client)
        resp = client.post(
            "/v1/psi/round1",
            json={"client_token": "tok", "batch_id": 1, "elements": ["zz" * 256] * 8},
        )
        assert resp.status_code == 400
        assert resp.json()["code"] == "protocol_error"


class TestProofEndpoints:
    def test_challenge_response_flow(self, client):
        upload_report(client)
        batch = client.server.seal_batch(force=True)
        infected = batch.entries[0][0]

        resp = client.post("/v1/proof/challenge")
        assert resp.status_code == 200
        challenge = resp.json()
        nonce = bytes.fromhex(challenge["nonce"])
        mac = hmac.new(infected, nonce, hashlib.sha256).hexdigest()
        resp = client.post(
            "/v1/proof/response",
            json={"challenge_id": challenge["challenge_id"], "macs": [mac]},
        )
        assert resp.status_code == 200
        body = resp.json()
        assert body["kind"] == "SECOND_ORDER"

        # The earned TAN authorizes an upload whose entries are tagged.
        rng = random.Random(13)
        resp = client.post(
            "/v1/report",
            json={"tan": body["tan"],
                  "keys": [{"date": "2020-04-20", "key_hex": rng.randbytes(32).hex()}]},
        )
        assert resp.status_code == 200
        tagged = client.server.seal_batch(force=True)
        assert {order for _, order in tagged.entries} == {"SECOND_ORDER"}

    def test_wrong_mac_rejected(self, client):
        upload_report(client)
        client.server.seal_batch(force=True)
        challenge = client.post("/v1/proof/challenge").json()
        resp = client.post(
            "/v1/proof/response",
            json={"challenge_id": challenge["challenge_id"], "macs": ["00" * 32]},
        )
        assert resp.status_code == 401

    def test_replayed_challenge_rejected(self, client):
        upload_report(client)
        batch = client.server.seal_batch(force=True)
        infected = batch.entries[0][0]
        challenge = client.post("/v1/proof/challenge").json()
        nonce = bytes.fromhex(challenge["nonce"])
        mac = hmac.new(infected, nonce, hashlib.sha256).hexdigest()
        first = client.post(
            "/v1/proof/response",
            json={"challenge_id": challenge["challenge_id"], "macs": [mac]},
        )
        assert first.status_code == 200
        replay = client.post(
            "/v1/proof/response",
            json={"challenge_id": challenge["challenge_id"], "macs": [mac]},
        )
        assert replay.status_code == 401
