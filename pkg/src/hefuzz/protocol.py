"""
Two-party matching protocol.

The querier holds the key set. It encrypts its queries, picks a cluster
from the decrypted centroid similarities and reads only the sign of each
masked column score. The responder holds the cluster model and public
key material, so it can evaluate but never decrypt.

Session (one batch of up to N/2 queries, slot b = query b):

    querier                                   responder
    Setup {he params, keys}         ->
                                    <-        Setup {encoding, scaler, tau, k, M}
    CentroidQuery (200 cts)         ->
                                    <-        CentroidScores (k cts)
    ColumnQuery (k indicator + 50 query cts) ->
                                    <-        ColumnScore (j, ct)  j = 0..M-1
    Done                            <->       Done
"""
import logging
import threading
import uuid
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .ckks import CkksDecryptor, CkksEvaluator, HeDecryptor, HeEvaluator, HeParams, KeySet
from .clustering import ClusterModel, column
from .encoding import (
    CENTROID_LENGTH,
    MATCH_LENGTH,
    EncodingParams,
    ScalerParams,
    canonicalize_name,
    encode_names,
    standardize,
)
from .errors import (
    BatchTooLarge,
    FrameCorrupt,
    HefuzzError,
    InvalidParams,
    LevelExhausted,
    ModelMissing,
    ProtocolPhaseViolation,
    RemoteError,
    TransportFailure,
)
from .oracle import OracleDecryptor, OracleEvaluator
from .transcript import Phase, TranscriptLog
from .transport import Channel, memory_pair
from .wire import (
    Frame,
    MessageType,
    done_frame,
    error_frame,
    pack_blobs,
    pack_column_score,
    pack_json,
    parse_error,
    unpack_blobs,
    unpack_column_score,
    unpack_json,
)
from .worker_pool import ColumnWorkerPool

logger = logging.getLogger(__name__)

# multiplicative depth of one column: selection, similarity, mask
COLUMN_DEPTH = 3

BACKEND_CKKS = "ckks"
BACKEND_ORACLE = "oracle"


@dataclass(frozen=True)
class ProtocolConfig:
    tau: float = 0.9
    early_exit: bool = True
    mask_low: float = 1.0
    mask_high: float = 100.0
    threads: int = 1
    max_batch: Optional[int] = None
    compress: bool = False
    seed: Optional[int] = None

    def __post_init__(self) -> None:
        if not -1.0 <= self.tau <= 1.0:
            raise InvalidParams(f"tau must be a cosine in [-1, 1], got {self.tau}")
        if not 0 < self.mask_low <= self.mask_high:
            raise InvalidParams(f"mask range must satisfy 0 < low <= high, got [{self.mask_low}, {self.mask_high}]")
        if self.threads < 1:
            raise InvalidParams(f"threads must be >= 1, got {self.threads}")
        if self.max_batch is not None and self.max_batch < 1:
            raise InvalidParams(f"max_batch must be >= 1, got {self.max_batch}")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "tau": self.tau,
            "early_exit": self.early_exit,
            "mask_low": self.mask_low,
            "mask_high": self.mask_high,
            "threads": self.threads,
            "max_batch": self.max_batch,
            "compress": self.compress,
            "seed": self.seed,
        }


class QuerierPhase(str, Enum):
    INIT = "init"
    AWAIT_CENTROID_SCORES = "await_centroid_scores"
    AWAIT_COLUMN_SCORES = "await_column_scores"
    DONE = "done"


class ResponderPhase(str, Enum):
    IDLE = "idle"
    SERVED_CENTROIDS = "served_centroids"
    STREAMING_COLUMNS = "streaming_columns"


@dataclass(frozen=True)
class IndicatorVector:
    bits: np.ndarray

    @classmethod
    def create(cls, index: int, k: int) -> "IndicatorVector":
        bits = np.zeros(k, dtype=np.float64)
        bits[index] = 1.0
        bits.setflags(write=False)
        return cls(bits=bits)

    @property
    def index(self) -> int:
        return int(np.argmax(self.bits))


@dataclass
class MatchVerdict:
    query_id: int
    matched: bool
    columns_consumed: int
    positive_columns: List[int] = field(default_factory=list)
    cluster: int = -1
    name: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name_id": self.query_id,
            "name": self.name,
            "matched": self.matched,
            "columns_consumed": self.columns_consumed,
            "cluster": self.cluster,
            "positive_columns": list(self.positive_columns),
        }


@dataclass
class PreparedQuery:
    """Encrypted query batch plus the querier's own plaintext view of it."""
    names: List[str]
    match_cts: List[Any]
    centroid_cts: List[Any]
    match_vectors: np.ndarray = field(repr=False)
    centroid_vectors: np.ndarray = field(repr=False)

    @property
    def batch_size(self) -> int:
        return len(self.names)


def select_cluster(scores: np.ndarray) -> List[IndicatorVector]:
    """One-hot argmax per query; ``scores`` is (k, batch). Ties go to the lowest index."""
    matrix = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    if matrix.shape[0] < 1:
        raise InvalidParams("need at least one centroid score")
    k = matrix.shape[0]
    return [IndicatorVector.create(int(i), k) for i in np.argmax(matrix, axis=0)]


class VerdictAccumulator:
    """Turns the ordered stream of decrypted column scores into per-query verdicts."""

    def __init__(self, batch_size: int, columns: int, early_exit: bool,
                 clusters: Optional[Sequence[int]] = None, names: Optional[Sequence[str]] = None,
                 query_ids: Optional[Sequence[int]] = None):
        self.batch_size = batch_size
        self.columns = columns
        self.early_exit = early_exit
        self.clusters = list(clusters) if clusters is not None else [-1] * batch_size
        self.names = list(names) if names is not None else [""] * batch_size
        self.query_ids = list(query_ids) if query_ids is not None else list(range(batch_size))
        self.matched = np.zeros(batch_size, dtype=bool)
        self.consumed = np.zeros(batch_size, dtype=np.int64)
        self.positives: List[List[int]] = [[] for _ in range(batch_size)]
        self.next_column = 0

    @property
    def finished(self) -> bool:
        """Early exit is on and every query already matched."""
        return self.early_exit and bool(self.matched.all())

    def observe(self, column_index: int, values: np.ndarray) -> None:
        if column_index != self.next_column:
            raise ProtocolPhaseViolation(f"column {column_index} arrived, expected {self.next_column}")
        self.next_column += 1
        active = ~self.matched if self.early_exit else np.ones(self.batch_size, dtype=bool)
        positive = np.asarray(values[:self.batch_size]) > 0
        self.consumed[active] = column_index + 1
        for b in np.nonzero(active & positive)[0]:
            self.positives[b].append(column_index)
        self.matched |= active & positive

    def verdicts(self) -> List[MatchVerdict]:
        return [
            MatchVerdict(
                query_id=self.query_ids[b],
                matched=bool(self.matched[b]),
                columns_consumed=int(self.consumed[b]),
                positive_columns=list(self.positives[b]),
                cluster=self.clusters[b],
                name=self.names[b],
            )
            for b in range(self.batch_size)
        ]


# ============== querier ==============

class Querier:
    """Party A: owns the keys, encrypts queries, reads verdicts."""

    def __init__(self, evaluator: HeEvaluator, decryptor: HeDecryptor, params: HeParams,
                 encoding: Optional[EncodingParams] = None, config: Optional[ProtocolConfig] = None,
                 keys: Optional[KeySet] = None, backend: str = BACKEND_CKKS):
        self.evaluator = evaluator
        self.decryptor = decryptor
        self.params = params
        self.encoding = encoding or EncodingParams()
        self.config = config or ProtocolConfig()
        self.backend = backend
        self._keys = keys
        self.phase = QuerierPhase.INIT
        self.scaler: Optional[ScalerParams] = None
        self.tau: float = self.config.tau
        self.k = 0
        self.max_cluster_size = 0

    @classmethod
    def with_keys(cls, keys: KeySet, encoding: Optional[EncodingParams] = None,
                  config: Optional[ProtocolConfig] = None, seed: Optional[int] = None) -> "Querier":
        evaluator = CkksEvaluator.from_keys(keys, seed=seed)
        return cls(evaluator, CkksDecryptor.from_keys(keys), keys.params, encoding, config, keys=keys)

    @classmethod
    def oracle(cls, params: HeParams, encoding: Optional[EncodingParams] = None,
               config: Optional[ProtocolConfig] = None) -> "Querier":
        return cls(OracleEvaluator(params), OracleDecryptor(params), params, encoding, config, backend=BACKEND_ORACLE)

    @property
    def max_batch(self) -> int:
        cap = self.params.slot_count
        return min(cap, self.config.max_batch) if self.config.max_batch else cap

    def reset(self) -> None:
        """Ready the querier for another session with the same keys."""
        self.phase = QuerierPhase.INIT

    def setup_payload(self, probe: bool = False) -> bytes:
        document = {
            "probe": probe,
            "backend": self.backend,
            "he_params": self.params.to_dict(),
            "encoding_fingerprint": self.encoding.fingerprint,
            "compress": self.config.compress,
        }
        if probe or self._keys is None:
            return pack_json(document)
        from .serialize import serialize_public_key, serialize_relin_key
        return pack_json(
            document,
            serialize_public_key(self._keys.public, self.params, compress=self.config.compress),
            serialize_relin_key(self._keys.relin, self.params, compress=self.config.compress),
        )

    def accept_setup(self, payload: bytes) -> Dict[str, Any]:
        document, blobs = unpack_json(payload)
        if document.get("fingerprint") != self.encoding.fingerprint:
            raise InvalidParams(
                f"responder encoding fingerprint {document.get('fingerprint')} != ours {self.encoding.fingerprint}"
            )
        if len(blobs) != 2:
            raise FrameCorrupt("setup reply must carry scaler means and stds")
        self.scaler = ScalerParams(
            means=np.frombuffer(blobs[0], dtype="<f8"), stds=np.frombuffer(blobs[1], dtype="<f8"),
        )
        self.tau = float(document["tau"])
        if self.tau != self.config.tau:
            logger.warning(f"[QUERIER] responder applies tau={self.tau}, local config says {self.config.tau}")
        self.k = int(document["k"])
        self.max_cluster_size = int(document["max_cluster_size"])
        return document

    def prepare_query(self, names: Sequence[str]) -> PreparedQuery:
        """
        Encode and encrypt a batch coordinate-wise: ciphertext i holds coordinate i
        of every query, query b in slot b.
        """
        if self.scaler is None:
            raise ProtocolPhaseViolation("prepare_query needs the responder's scaler from setup")
        if not 1 <= len(names) <= self.max_batch:
            raise BatchTooLarge(f"batch of {len(names)} names, allowed 1..{self.max_batch}")
        encoded = encode_names(names, self.encoding, match_length=MATCH_LENGTH)
        std = standardize(encoded.centroid_normalized, self.scaler)
        match = encoded.match_normalized
        return PreparedQuery(
            names=list(encoded.names),
            match_cts=self.evaluator.encrypt_many(match.T),
            centroid_cts=self.evaluator.encrypt_many(std.T),
            match_vectors=match,
            centroid_vectors=std,
        )

    def decrypt_scores(self, cts: Sequence[Any], batch_size: int) -> np.ndarray:
        return np.asarray(self.decryptor.decrypt_many(cts))[:, :batch_size]

    def encrypt_indicators(self, indicators: Sequence[IndicatorVector]) -> List[Any]:
        """k ciphertexts; slot b of ciphertext row is query b's indicator bit."""
        matrix = np.stack([ind.bits for ind in indicators], axis=1)
        return self.evaluator.encrypt_many(matrix)

    def judge(self, stream: Iterable[Tuple[int, Any]], prepared: PreparedQuery,
              indicators: Sequence[IndicatorVector], columns: int) -> List[MatchVerdict]:
        """Consume (column, masked score ciphertext) pairs until done or early exit."""
        acc = VerdictAccumulator(prepared.batch_size, columns, self.config.early_exit,
                                 clusters=[ind.index for ind in indicators], names=prepared.names)
        for j, ct in stream:
            acc.observe(j, self.decryptor.decrypt(ct))
            if acc.finished:
                break
        return acc.verdicts()


# ============== responder ==============

class Responder:
    """Party B: evaluates on ciphertexts with public keys only."""

    def __init__(self, model: Optional[ClusterModel], encoding: Optional[EncodingParams] = None,
                 config: Optional[ProtocolConfig] = None, allow_oracle: bool = False):
        self.model = model
        self.encoding = encoding or EncodingParams()
        self.config = config or ProtocolConfig()
        self.allow_oracle = allow_oracle
        self.evaluator: Optional[HeEvaluator] = None
        self.compress = self.config.compress
        self.phase = ResponderPhase.IDLE
        self._rng = np.random.default_rng(self.config.seed)
        self._rng_lock = threading.Lock()
        self._session_entropy: Optional[int] = None

    def _require_model(self) -> ClusterModel:
        if self.model is None:
            raise ModelMissing("responder has no cluster model loaded")
        return self.model

    def _require_evaluator(self) -> HeEvaluator:
        if self.evaluator is None:
            raise ProtocolPhaseViolation("no evaluation keys received yet")
        return self.evaluator

    def _advance(self, expected: ResponderPhase, new: ResponderPhase) -> None:
        if self.phase != expected:
            raise ProtocolPhaseViolation(f"responder in phase {self.phase.value}, expected {expected.value}")
        self.phase = new

    def setup_document(self) -> Tuple[Dict[str, Any], bytes, bytes]:
        model = self._require_model()
        document = {
            "encoding": self.encoding.to_dict(),
            "fingerprint": self.encoding.fingerprint,
            "tau": self.config.tau,
            "k": model.k,
            "max_cluster_size": model.max_cluster_size,
            "match_length": model.match_length,
            "centroid_length": model.centroid_length,
        }
        means = np.ascontiguousarray(model.scaler.means, dtype="<f8").tobytes()
        stds = np.ascontiguousarray(model.scaler.stds, dtype="<f8").tobytes()
        return document, means, stds

    def handle_setup(self, payload: bytes) -> Tuple[bytes, bool]:
        """Install the querier's evaluation keys. Returns (reply payload, probe flag)."""
        document, blobs = unpack_json(payload)
        model = self._require_model()
        reply = pack_json(*self.setup_document())
        if document.get("probe"):
            return reply, True

        if document.get("encoding_fingerprint") != self.encoding.fingerprint:
            raise InvalidParams("querier uses different encoding parameters")
        if model.fingerprint and model.fingerprint != self.encoding.fingerprint:
            raise InvalidParams("cluster model was built with different encoding parameters")
        params = HeParams.from_dict(document["he_params"])
        if params.top_level < COLUMN_DEPTH:
            raise LevelExhausted(f"modulus chain offers {params.top_level} levels, columns need {COLUMN_DEPTH}")
        self.compress = bool(document.get("compress", False))

        backend = document.get("backend", BACKEND_CKKS)
        if backend == BACKEND_ORACLE:
            if not self.allow_oracle:
                raise InvalidParams("plaintext oracle backend is disabled on this responder")
            self.evaluator = OracleEvaluator(params)
        elif backend == BACKEND_CKKS:
            if len(blobs) != 2:
                raise FrameCorrupt("setup must carry a public key and a relinearization key")
            from .ckks import CkksContext
            from .serialize import deserialize_public_key, deserialize_relin_key
            self.evaluator = CkksEvaluator(
                CkksContext(params),
                deserialize_public_key(blobs[0], params),
                deserialize_relin_key(blobs[1], params),
            )
        else:
            raise InvalidParams(f"unknown backend {backend!r}")
        return reply, False

    def compare_to_centroids(self, enc_query_std: Sequence[Any]) -> List[Any]:
        """One encrypted similarity per centroid; no masking in this phase."""
        model = self._require_model()
        evaluator = self._require_evaluator()
        if len(enc_query_std) != model.centroid_length:
            raise FrameCorrupt(f"{len(enc_query_std)} query ciphertexts, expected {model.centroid_length}")
        return evaluator.dot_ct_pt_many(enc_query_std, model.unit_centroids)

    def select_column(self, enc_indicator: Sequence[Any], j: int) -> List[Any]:
        """Encrypted cell of the chosen row in column j, coordinate by coordinate."""
        model = self._require_model()
        evaluator = self._require_evaluator()
        cells = column(model, j)
        if len(enc_indicator) != model.k:
            raise FrameCorrupt(f"{len(enc_indicator)} indicator ciphertexts, expected {model.k}")
        return evaluator.dot_ct_pt_many(enc_indicator, cells.T)

    def _mask_rng(self, j: int) -> np.random.Generator:
        if self._session_entropy is None:
            with self._rng_lock:
                return np.random.default_rng(self._rng.integers(1 << 62))
        return np.random.default_rng((self._session_entropy, j))

    def column_wise_matching(self, enc_indicator: Sequence[Any], enc_query_el50: Sequence[Any], j: int,
                             rng: Optional[np.random.Generator] = None) -> Any:
        """(cos(selected cell, query) - tau) * r, r uniform in the mask range, fresh per slot."""
        evaluator = self._require_evaluator()
        level = enc_indicator[0].level
        if level < COLUMN_DEPTH:
            raise LevelExhausted(f"indicator at level {level}, a column needs {COLUMN_DEPTH}")
        selected = self.select_column(enc_indicator, j)
        query = [evaluator.drop_level(ct, level - 1) for ct in enc_query_el50]
        score = evaluator.dot_ct_ct(selected, query)
        shifted = evaluator.add_plain(score, -self.config.tau)
        rng = rng if rng is not None else self._mask_rng(j)
        mask = rng.uniform(self.config.mask_low, self.config.mask_high, size=max(shifted.slots, 1))
        return evaluator.mul_plain(shifted, mask)

    def begin_columns(self, enc_indicator: Sequence[Any], enc_query_el50: Sequence[Any]) -> List[Any]:
        """Validate the column query and pre-drop the query to the post-selection level."""
        model = self._require_model()
        evaluator = self._require_evaluator()
        if len(enc_indicator) != model.k or len(enc_query_el50) != model.match_length:
            raise FrameCorrupt(
                f"column query carries {len(enc_indicator)}+{len(enc_query_el50)} ciphertexts, "
                f"expected {model.k}+{model.match_length}"
            )
        with self._rng_lock:
            self._session_entropy = int(self._rng.integers(1 << 62))
        level = enc_indicator[0].level
        return [evaluator.drop_level(ct, max(level - 1, 0)) for ct in enc_query_el50]


# ============== sessions ==============

@dataclass
class SessionOutcome:
    """Responder-side record of one session."""
    session_id: str
    probe: bool = False
    batch_size: int = 0
    columns_sent: int = 0
    stopped_early: bool = False
    error: Optional[str] = None
    transcript: Optional[TranscriptLog] = field(default=None, repr=False)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "session_id": self.session_id,
            "probe": self.probe,
            "batch_size": self.batch_size,
            "columns_sent": self.columns_sent,
            "stopped_early": self.stopped_early,
            "error": self.error,
            "transcript": self.transcript.summary() if self.transcript is not None else None,
        }


@dataclass
class ProtocolRun:
    verdicts: List[MatchVerdict]
    transcript: TranscriptLog
    responder_outcome: Optional[SessionOutcome] = None


def _expect(channel: Channel, *types: MessageType) -> Frame:
    frame = channel.recv()
    if frame.msg_type == MessageType.ERROR:
        code, message = parse_error(frame.payload)
        raise RemoteError(code, message)
    if frame.msg_type not in types:
        wanted = "/".join(t.name for t in types)
        raise ProtocolPhaseViolation(f"expected {wanted}, received {frame.msg_type.name}")
    return frame


def _decode_cts(evaluator: HeEvaluator, payload: bytes) -> List[Any]:
    return [evaluator.deserialize(blob) for blob in unpack_blobs(payload)]


def _encode_cts(evaluator: HeEvaluator, cts: Sequence[Any], compress: bool) -> bytes:
    return pack_blobs([evaluator.serialize(ct, compress=compress) for ct in cts])


def probe(channel: Channel, querier: Querier) -> Dict[str, Any]:
    """Health probe: send a probe Setup and return the responder's echo."""
    channel.send(Frame(MessageType.SETUP, querier.setup_payload(probe=True)))
    document, _ = unpack_json(_expect(channel, MessageType.SETUP).payload)
    return document


def query_session(channel: Channel, querier: Querier, names: Sequence[str],
                  query_ids: Optional[Sequence[int]] = None) -> List[MatchVerdict]:
    """Drive one querier session over ``channel`` and return a verdict per name."""
    transcript = channel.transcript
    compress = querier.config.compress
    if querier.phase != QuerierPhase.INIT:
        raise ProtocolPhaseViolation(f"querier session already in phase {querier.phase.value}")
    if not 1 <= len(names) <= querier.max_batch:
        raise BatchTooLarge(f"batch of {len(names)} names, allowed 1..{querier.max_batch}")

    transcript.set_phase(Phase.SETUP)
    channel.send(Frame(MessageType.SETUP, querier.setup_payload()))
    querier.accept_setup(_expect(channel, MessageType.SETUP).payload)

    transcript.set_phase(Phase.CENTROID)
    prepared = querier.prepare_query([canonicalize_name(n) for n in names])
    batch = prepared.batch_size
    channel.send(Frame(MessageType.CENTROID_QUERY, _encode_cts(querier.evaluator, prepared.centroid_cts, compress)))
    querier.phase = QuerierPhase.AWAIT_CENTROID_SCORES

    score_cts = _decode_cts(querier.evaluator, _expect(channel, MessageType.CENTROID_SCORES).payload)
    if len(score_cts) != querier.k:
        raise FrameCorrupt(f"{len(score_cts)} centroid scores, expected {querier.k}")
    indicators = select_cluster(querier.decrypt_scores(score_cts, batch))
    logger.debug(f"[QUERIER] clusters selected for {batch} queries")

    transcript.set_phase(Phase.COLUMN)
    enc_indicator = querier.encrypt_indicators(indicators)
    channel.send(Frame(MessageType.COLUMN_QUERY,
                       _encode_cts(querier.evaluator, list(enc_indicator) + list(prepared.match_cts), compress)))
    querier.phase = QuerierPhase.AWAIT_COLUMN_SCORES

    acc = VerdictAccumulator(batch, querier.max_cluster_size, querier.config.early_exit,
                             clusters=[ind.index for ind in indicators], names=prepared.names, query_ids=query_ids)
    sent_done = False
    while True:
        frame = _expect(channel, MessageType.COLUMN_SCORE, MessageType.DONE)
        if frame.msg_type == MessageType.DONE:
            break
        j, blob = unpack_column_score(frame.payload)
        if acc.finished:
            continue
        acc.observe(j, querier.decryptor.decrypt(querier.evaluator.deserialize(blob)))
        if acc.finished and not sent_done:
            transcript.set_phase(Phase.CLOSE)
            channel.send(done_frame())
            sent_done = True

    transcript.set_phase(Phase.CLOSE)
    if not sent_done:
        channel.send(done_frame())
    querier.phase = QuerierPhase.DONE
    verdicts = acc.verdicts()
    logger.info(f"[QUERIER] {sum(v.matched for v in verdicts)}/{batch} matched, "
                f"{acc.next_column}/{querier.max_cluster_size} columns read, totals={transcript.totals()}")
    return verdicts


def serve_session(channel: Channel, responder: Responder, threads: Optional[int] = None) -> SessionOutcome:
    """
    Serve one querier session. Protocol errors are reported to the peer as an
    Error frame and recorded in the outcome; they never propagate.
    """
    outcome = SessionOutcome(session_id=uuid.uuid4().hex[:12], transcript=channel.transcript)
    threads = threads or responder.config.threads
    try:
        _serve(channel, responder, outcome, threads)
    except HefuzzError as e:
        outcome.error = e.code
        logger.warning(f"[RESPONDER] session {outcome.session_id} failed: {e}")
        if not isinstance(e, (TransportFailure, RemoteError)):
            try:
                channel.send(error_frame(e.code, str(e)))
            except TransportFailure:
                pass
    return outcome


def _serve(channel: Channel, responder: Responder, outcome: SessionOutcome, threads: int) -> None:
    transcript = channel.transcript
    transcript.set_phase(Phase.SETUP)
    reply, is_probe = responder.handle_setup(_expect(channel, MessageType.SETUP).payload)
    channel.send(Frame(MessageType.SETUP, reply))
    if is_probe:
        outcome.probe = True
        logger.info(f"[RESPONDER] session {outcome.session_id}: health probe answered")
        return
    evaluator = responder._require_evaluator()

    transcript.set_phase(Phase.CENTROID)
    query_std = _decode_cts(evaluator, _expect(channel, MessageType.CENTROID_QUERY).payload)
    responder._advance(ResponderPhase.IDLE, ResponderPhase.SERVED_CENTROIDS)
    scores = responder.compare_to_centroids(query_std)
    outcome.batch_size = max(ct.slots for ct in query_std) if query_std else 0
    channel.send(Frame(MessageType.CENTROID_SCORES, _encode_cts(evaluator, scores, responder.compress)))

    transcript.set_phase(Phase.COLUMN)
    cts = _decode_cts(evaluator, _expect(channel, MessageType.COLUMN_QUERY).payload)
    responder._advance(ResponderPhase.SERVED_CENTROIDS, ResponderPhase.STREAMING_COLUMNS)
    model = responder._require_model()
    enc_indicator, enc_query = cts[:model.k], cts[model.k:]
    enc_query = responder.begin_columns(enc_indicator, enc_query)

    def evaluate(j: int) -> bytes:
        return evaluator.serialize(responder.column_wise_matching(enc_indicator, enc_query, j),
                                   compress=responder.compress)

    with ColumnWorkerPool(threads) as pool:
        results = pool.imap(evaluate, model.max_cluster_size)
        try:
            for j, blob in results:
                if channel.poll():
                    _expect(channel, MessageType.DONE)
                    outcome.stopped_early = True
                    break
                channel.send(Frame(MessageType.COLUMN_SCORE, pack_column_score(j, blob)))
                outcome.columns_sent += 1
        finally:
            results.close()

    transcript.set_phase(Phase.CLOSE)
    channel.send(done_frame())
    if not outcome.stopped_early:
        _expect(channel, MessageType.DONE)
    logger.info(f"[RESPONDER] session {outcome.session_id}: {outcome.columns_sent}/{model.max_cluster_size} "
                f"columns, early_stop={outcome.stopped_early}, totals={transcript.totals()}")


def run_protocol(querier: Querier, responder: Responder, names: Sequence[str],
                 query_ids: Optional[Sequence[int]] = None, timeout: float = 600.0) -> ProtocolRun:
    """Run one session in-process: the responder on a thread, the querier on the caller's."""
    querier_end, responder_end = memory_pair(timeout=timeout)
    holder: Dict[str, SessionOutcome] = {}

    def _responder() -> None:
        holder["outcome"] = serve_session(responder_end, responder)
        responder_end.close()

    thread = threading.Thread(target=_responder, name="responder-session", daemon=True)
    thread.start()
    try:
        verdicts = query_session(querier_end, querier, names, query_ids=query_ids)
    finally:
        querier_end.close()
        thread.join(timeout)
    return ProtocolRun(verdicts=verdicts, transcript=querier_end.transcript,
                       responder_outcome=holder.get("outcome"))
