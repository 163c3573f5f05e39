import threading

import pytest

from src.hefuzz.config import HefuzzConfig
from src.hefuzz.errors import RemoteError
from src.hefuzz.models import SessionStatus
from src.hefuzz.protocol import Querier, probe, query_session
from src.hefuzz.server import ResponderServer
from src.hefuzz.service import get_state
from src.hefuzz.transport import ChannelConfig, connect


@pytest.fixture
def server(model, tmp_path):
    config = HefuzzConfig.from_dict({"he": {"ring_degree": 1024}, "channel": {"port": 0, "timeout": 10.0}})
    server = ResponderServer(model, config, transcript_dir=tmp_path / "transcripts")
    server.bind()
    yield server
    server.close()


def run_client(server, action):
    host, port = server.address
    result = {}

    def target():
        try:
            with connect(ChannelConfig(host=host, port=port, timeout=10.0)) as channel:
                result["value"] = action(channel)
        except Exception as e:
            result["error"] = e

    thread = threading.Thread(target=target)
    thread.start()
    assert server.serve_one()
    thread.join(10.0)
    return result


def test_probe_session(server, model, encoding):
    querier = Querier.oracle(server.config.he, server.config.encoding)
    result = run_client(server, lambda channel: probe(channel, querier))
    assert result["value"]["k"] == model.k
    record = server.registry.recent(1)[0]
    assert record.status is SessionStatus.PROBE
    assert not (server.transcript_dir / f"session_{record.session_id}.csv").exists()


def test_oracle_backend_refused(server, encoding):
    querier = Querier.oracle(server.config.he, server.config.encoding)
    result = run_client(server, lambda channel: query_session(channel, querier, ["mary jones"]))
    assert isinstance(result["error"], RemoteError)
    record = server.registry.recent(1)[0]
    assert record.status is SessionStatus.FAILED
    assert record.error_code == "invalid_params"
    assert (server.transcript_dir / f"session_{record.session_id}.csv").exists()
    assert server.registry.failed_sessions == 1


def test_state_is_bound_while_open(server, model):
    state = get_state()
    assert state.model_summary["k"] == model.k
    assert state.listen_address.endswith(str(server.address[1]))


def test_idle_accept(server):
    assert server.serve_one() is False


def test_serve_forever_stops(server):
    thread = threading.Thread(target=server.serve_forever)
    thread.start()
    server.stop()
    thread.join(5.0)
    assert not thread.is_alive()
    assert server.ready.is_set()
