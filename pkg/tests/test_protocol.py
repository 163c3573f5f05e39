import threading

import numpy as np
import pytest

from src.hefuzz.ckks import HeParams
from src.hefuzz.encoding import EncodingParams, encode_names, standardize
from src.hefuzz.errors import (
    BatchTooLarge,
    InvalidParams,
    ModelMissing,
    ProtocolPhaseViolation,
    RemoteError,
)
from src.hefuzz.matcher import PlaintextMatcher
from src.hefuzz.protocol import (
    MatchVerdict,
    ProtocolConfig,
    Querier,
    Responder,
    VerdictAccumulator,
    probe,
    query_session,
    run_protocol,
    select_cluster,
    serve_session,
)
from src.hefuzz.transcript import Direction, TranscriptLog
from src.hefuzz.transport import ChannelConfig, TcpListener, connect, memory_pair
from src.hefuzz.wire import MessageType


def oracle_pair(params, model, encoding, **config):
    cfg = ProtocolConfig(**config)
    return Querier.oracle(params, encoding, cfg), Responder(model, encoding, cfg, allow_oracle=True)


def serve_in_thread(responder):
    querier_end, responder_end = memory_pair(timeout=30.0)
    holder = {}

    def target():
        holder["outcome"] = serve_session(responder_end, responder)
        responder_end.close()

    thread = threading.Thread(target=target, daemon=True)
    thread.start()
    return querier_end, thread, holder


class TestConfig:
    @pytest.mark.parametrize("kwargs", [
        {"tau": 1.5},
        {"mask_low": 0.0},
        {"mask_low": 5.0, "mask_high": 2.0},
        {"threads": 0},
        {"max_batch": 0},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(InvalidParams):
            ProtocolConfig(**kwargs)

    def test_dict(self):
        assert ProtocolConfig(tau=0.8).to_dict()["tau"] == 0.8


class TestQuerierSide:
    def test_select_cluster_ties_go_low(self):
        scores = np.array([[0.5, 0.1], [0.5, 0.7], [0.2, 0.7]])
        indicators = select_cluster(scores)
        assert [ind.index for ind in indicators] == [0, 1]
        assert indicators[1].bits.tolist() == [0.0, 1.0, 0.0]

    def test_accumulator_early_exit(self):
        acc = VerdictAccumulator(3, columns=4, early_exit=True)
        acc.observe(0, np.array([-1.0, 2.0, -3.0]))
        assert not acc.finished
        acc.observe(1, np.array([5.0, 9.0, -1.0]))
        acc.observe(2, np.array([-1.0, -1.0, 0.5]))
        assert acc.finished
        verdicts = acc.verdicts()
        assert [v.matched for v in verdicts] == [True, True, True]
        assert [v.columns_consumed for v in verdicts] == [2, 1, 3]
        assert verdicts[1].positive_columns == [0]

    def test_accumulator_without_early_exit(self):
        acc = VerdictAccumulator(2, columns=3, early_exit=False)
        for j, values in enumerate([[1.0, -1.0], [1.0, -1.0], [-1.0, -1.0]]):
            acc.observe(j, np.array(values))
        assert not acc.finished
        first, second = acc.verdicts()
        assert first.positive_columns == [0, 1]
        assert first.columns_consumed == 3
        assert not second.matched

    def test_accumulator_rejects_out_of_order(self):
        acc = VerdictAccumulator(1, columns=3, early_exit=True)
        with pytest.raises(ProtocolPhaseViolation):
            acc.observe(1, np.array([1.0]))

    def test_verdict_dict(self):
        verdict = MatchVerdict(query_id=4, matched=True, columns_consumed=2, positive_columns=[1], cluster=3)
        assert verdict.to_dict()["name_id"] == 4
        assert verdict.to_dict()["positive_columns"] == [1]

    def test_batch_limits(self, small_params, model, encoding):
        querier = Querier.oracle(small_params, encoding, ProtocolConfig(max_batch=2))
        assert querier.max_batch == 2
        channel, _ = memory_pair(timeout=1.0)
        with pytest.raises(BatchTooLarge):
            query_session(channel, querier, ["john smith"] * 3)
        with pytest.raises(BatchTooLarge):
            query_session(channel, querier, [])
        assert channel.transcript.entries == []

    def test_max_batch_defaults_to_slots(self, small_params, encoding):
        assert Querier.oracle(small_params, encoding).max_batch == small_params.slot_count

    def test_centroid_query_is_standardized_not_renormalized(self, small_params, model, dataset, encoding):
        querier, responder = oracle_pair(small_params, model, encoding)
        reply, _ = responder.handle_setup(querier.setup_payload())
        querier.accept_setup(reply)
        names = dataset.query_names[:5]
        prepared = querier.prepare_query(names)
        expected = standardize(encode_names(names, encoding).centroid_normalized, model.scaler)
        assert np.allclose(prepared.centroid_vectors, expected)
        assert np.allclose(prepared.match_vectors, encode_names(names, encoding, match_length=50).match_normalized)
        # centroid phase scores are dot products against unit centroid directions
        scores = querier.decrypt_scores(responder.compare_to_centroids(prepared.centroid_cts), len(names))
        assert np.allclose(scores, model.unit_centroids @ expected.T, atol=1e-6)


class TestResponderSide:
    def test_model_missing(self, encoding):
        with pytest.raises(ModelMissing):
            Responder(None, encoding).setup_document()

    def test_probe(self, small_params, model, encoding):
        querier, responder = oracle_pair(small_params, model, encoding)
        channel, thread, holder = serve_in_thread(responder)
        document = probe(channel, querier)
        thread.join(5.0)
        assert document["k"] == model.k
        assert document["max_cluster_size"] == model.max_cluster_size
        assert document["fingerprint"] == encoding.fingerprint
        assert document["tau"] == 0.9
        assert holder["outcome"].probe
        assert holder["outcome"].error is None

    @pytest.mark.parametrize("make_responder, code", [
        (lambda model, enc: Responder(model, enc), "invalid_params"),
        (lambda model, enc: Responder(None, enc, allow_oracle=True), "model_missing"),
    ])
    def test_errors_reach_the_querier(self, small_params, model, encoding, make_responder, code):
        querier = Querier.oracle(small_params, encoding)
        channel, thread, holder = serve_in_thread(make_responder(model, encoding))
        with pytest.raises(RemoteError) as info:
            query_session(channel, querier, ["john smith"])
        thread.join(5.0)
        assert info.value.remote_code == code
        assert holder["outcome"].error == code

    def test_encoding_mismatch(self, small_params, model, encoding):
        querier = Querier.oracle(small_params, EncodingParams(seed=encoding.seed + 1))
        channel, thread, holder = serve_in_thread(Responder(model, encoding, allow_oracle=True))
        with pytest.raises(RemoteError):
            query_session(channel, querier, ["john smith"])
        thread.join(5.0)
        assert holder["outcome"].error == "invalid_params"

    def test_shallow_chain_rejected(self, model, encoding):
        params = HeParams(ring_degree=1024)
        querier = Querier.oracle(params, encoding)
        channel, thread, holder = serve_in_thread(Responder(model, encoding, allow_oracle=True))
        with pytest.raises(RemoteError) as info:
            query_session(channel, querier, ["john smith"])
        thread.join(5.0)
        assert info.value.remote_code == "level_exhausted"


class TestSessions:
    def test_oracle_equals_plaintext(self, small_params, model, dataset, encoding):
        querier, responder = oracle_pair(small_params, model, encoding, early_exit=False)
        run = run_protocol(querier, responder, dataset.query_names, query_ids=[q.query_id for q in dataset.queries])
        expected = PlaintextMatcher(model, encoding, tau=0.9).match(dataset.query_names)
        band = PlaintextMatcher(model, encoding, tau=0.9).uncertain(dataset.query_names)
        for got, want, fuzzy in zip(run.verdicts, expected, band):
            if fuzzy:
                continue
            assert got.matched == want.matched
            assert got.positive_columns == want.positive_columns
            assert got.cluster == want.cluster
        assert [v.query_id for v in run.verdicts] == [q.query_id for q in dataset.queries]
        outcome = run.responder_outcome
        assert outcome.columns_sent == model.max_cluster_size
        assert not outcome.stopped_early
        assert outcome.batch_size == len(dataset.queries)

    def test_exact_names_match_with_early_exit(self, small_params, model, dataset, encoding):
        querier, responder = oracle_pair(small_params, model, encoding)
        matcher = PlaintextMatcher(model, encoding)
        candidates = dataset.responder_names[:40]
        rows = model.assignment()[:40, 0]
        selected = matcher.select(matcher.prepare(candidates))
        names = [n for n, row, pick in zip(candidates, rows, selected) if row == pick][:6]
        assert len(names) == 6
        run = run_protocol(querier, responder, names)
        assert all(v.matched for v in run.verdicts)
        for v in run.verdicts:
            assert v.columns_consumed == v.positive_columns[0] + 1
            assert len(v.positive_columns) == 1
        sent_done = run.transcript.select(MessageType.DONE, direction=Direction.QUERIER_TO_RESPONDER)
        assert len(sent_done) == 1

    def test_column_frames_have_constant_size(self, small_params, model, dataset, encoding):
        querier, responder = oracle_pair(small_params, model, encoding, early_exit=False)
        run = run_protocol(querier, responder, dataset.query_names[:5])
        sizes = {e.bytes for e in run.transcript.select(MessageType.COLUMN_SCORE)}
        assert len(sizes) == 1

    def test_tcp_session_matches_in_memory(self, small_params, model, dataset, encoding):
        names = dataset.query_names[:6]
        memory = run_protocol(*oracle_pair(small_params, model, encoding, early_exit=False, seed=3), names)

        querier, responder = oracle_pair(small_params, model, encoding, early_exit=False, seed=3)
        listener = TcpListener("127.0.0.1", 0, timeout=30.0)
        host, port = listener.address
        holder = {}

        def serve():
            for _ in range(30):
                channel = listener.accept()
                if channel is not None:
                    with channel:
                        holder["outcome"] = serve_session(channel, responder)
                    return

        thread = threading.Thread(target=serve, daemon=True)
        thread.start()
        transcript = TranscriptLog()
        try:
            with connect(ChannelConfig(host=host, port=port, timeout=30.0), transcript) as channel:
                verdicts = query_session(channel, querier, names)
        finally:
            thread.join(30.0)
            listener.close()

        assert transcript.shape() == memory.transcript.shape()
        assert [v.to_dict() for v in verdicts] == [v.to_dict() for v in memory.verdicts]
        assert holder["outcome"].error is None
        assert holder["outcome"].columns_sent == memory.responder_outcome.columns_sent

    def test_threads_do_not_change_verdicts(self, small_params, model, dataset, encoding):
        names = dataset.query_names[:12]
        single = run_protocol(*oracle_pair(small_params, model, encoding, early_exit=False), names)
        multi = run_protocol(*oracle_pair(small_params, model, encoding, early_exit=False, threads=3), names)
        assert [v.matched for v in single.verdicts] == [v.matched for v in multi.verdicts]
        assert [v.positive_columns for v in single.verdicts] == [v.positive_columns for v in multi.verdicts]

    def test_querier_reuse_needs_reset(self, small_params, model, dataset, encoding):
        querier, responder = oracle_pair(small_params, model, encoding)
        run_protocol(querier, responder, dataset.query_names[:2])
        channel, _ = memory_pair(timeout=1.0)
        with pytest.raises(ProtocolPhaseViolation):
            query_session(channel, querier, dataset.query_names[:2])
        querier.reset()
        _, fresh = oracle_pair(small_params, model, encoding)
        assert len(run_protocol(querier, fresh, dataset.query_names[:2]).verdicts) == 2

    def test_ckks_agrees_with_plaintext(self, small_keys, model, dataset, encoding):
        config = ProtocolConfig(early_exit=False, seed=5)
        querier = Querier.with_keys(small_keys, encoding, config, seed=9)
        responder = Responder(model, encoding, config)
        positives = [q.name for q in dataset.queries if q.is_positive][:4]
        negatives = [q.name for q in dataset.queries if not q.is_positive][:4]
        names = positives + negatives
        run = run_protocol(querier, responder, names)
        matcher = PlaintextMatcher(model, encoding, tau=0.9)
        expected = matcher.match(names)
        for got, want, fuzzy in zip(run.verdicts, expected, matcher.uncertain(names)):
            if not fuzzy:
                assert got.matched == want.matched
                assert got.positive_columns == want.positive_columns
        assert run.responder_outcome.error is None
