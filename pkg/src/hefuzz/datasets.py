"""
Synthetic name datasets with ground truth.

Responder records are unique "given family" pairs drawn from frequency-style
name pools. Positive queries are perturbed copies of responder records at an
exact Levenshtein distance (or an NCVR-like mix of distances); negative
queries are fresh pairs, length-matched to the positives and checked to stay
below the similarity threshold against every responder record.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Set, Tuple, Union

import numpy as np

from .config import default_data_dir
from .encoding import EncodedNames, EncodingParams, canonicalize_name, encode_names
from .errors import InvalidParams, PoolExhausted

logger = logging.getLogger(__name__)

ALPHABET = "abcdefghijklmnopqrstuvwxyz"
GIVEN_NAMES_FILE = "given_names.txt"
FAMILY_NAMES_FILE = "family_names.txt"

# distance -> probability of a snapshot-to-snapshot change
NCVR_MIX: Dict[int, float] = {0: 0.5, 1: 0.3, 2: 0.2}
NCVR = "ncvr"

MAX_PERTURB_ATTEMPTS = 50
MAX_SOURCE_ATTEMPTS = 20
NEGATIVE_CANDIDATE_FACTOR = 50


@dataclass(frozen=True)
class SyntheticDatasetSpec:
    """``perturbation`` is an exact distance 0..5 or "ncvr" for the mixed profile."""
    n_names: int = 1000
    n_positives: int = 100
    n_negatives: Optional[int] = None
    seed: int = 7
    perturbation: Union[int, str] = NCVR
    tau: float = 0.9
    given_names: Optional[str] = None
    family_names: Optional[str] = None
    encoding: EncodingParams = field(default_factory=EncodingParams)

    def __post_init__(self) -> None:
        if self.n_names < 1:
            raise InvalidParams(f"n_names must be >= 1, got {self.n_names}")
        if self.n_positives < 0 or (self.n_negatives is not None and self.n_negatives < 0):
            raise InvalidParams("query counts must be >= 0")
        if self.perturbation != NCVR and not (isinstance(self.perturbation, int) and 0 <= self.perturbation <= 5):
            raise InvalidParams(f"perturbation must be 0..5 or {NCVR!r}, got {self.perturbation!r}")

    @property
    def negatives(self) -> int:
        return self.n_positives if self.n_negatives is None else self.n_negatives

    def to_dict(self) -> dict:
        return {
            "n_names": self.n_names,
            "n_positives": self.n_positives,
            "n_negatives": self.negatives,
            "seed": self.seed,
            "perturbation": self.perturbation,
            "tau": self.tau,
            "given_names": self.given_names,
            "family_names": self.family_names,
        }


@dataclass(frozen=True)
class QueryRecord:
    query_id: int
    name: str
    source: int = -1      # responder index, -1 for negatives
    distance: int = -1    # applied edit distance, -1 for negatives

    @property
    def is_positive(self) -> bool:
        return self.source >= 0


@dataclass
class SyntheticDataset:
    spec: SyntheticDatasetSpec
    responder_names: List[str]
    queries: List[QueryRecord]
    responder_encoded: Optional[EncodedNames] = field(default=None, repr=False)

    @property
    def query_names(self) -> List[str]:
        return [q.name for q in self.queries]

    @property
    def labels(self) -> np.ndarray:
        return np.array([q.is_positive for q in self.queries], dtype=bool)

    @property
    def sources(self) -> np.ndarray:
        return np.array([q.source for q in self.queries], dtype=np.int64)

    def encoded(self) -> EncodedNames:
        if self.responder_encoded is None:
            self.responder_encoded = encode_names(self.responder_names, self.spec.encoding)
        return self.responder_encoded


# ============== name pools ==============

def load_name_pool(path: Union[str, Path]) -> List[str]:
    """Canonicalized, de-duplicated names in file order; blank lines and #-comments skipped."""
    seen: Set[str] = set()
    pool: List[str] = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            name = canonicalize_name(line.split("#", 1)[0])
            if name and name not in seen:
                seen.add(name)
                pool.append(name)
    return pool


def default_pools() -> Tuple[List[str], List[str]]:
    data = default_data_dir()
    return load_name_pool(data / GIVEN_NAMES_FILE), load_name_pool(data / FAMILY_NAMES_FILE)


# ============== edit distance ==============

def levenshtein(a: str, b: str) -> int:
    """Unit-cost insert/delete/substitute distance (two-row dynamic program)."""
    if len(a) < len(b):
        a, b = b, a
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        current = [i]
        for j, cb in enumerate(b, start=1):
            current.append(min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + (ca != cb)))
        previous = current
    return previous[-1]


def _edit_once(chars: List[str], rng: np.random.Generator, min_length: int) -> None:
    letters = [i for i, c in enumerate(chars) if c != " "]
    op = int(rng.integers(3))
    if op == 2 and len(chars) > min_length and len(letters) > 1:
        del chars[letters[int(rng.integers(len(letters)))]]
    elif op == 1:
        # inserting next to a letter keeps spaces single and interior
        pos = letters[int(rng.integers(len(letters)))] + int(rng.integers(2))
        chars.insert(pos, ALPHABET[int(rng.integers(len(ALPHABET)))])
    else:
        pos = letters[int(rng.integers(len(letters)))]
        choices = [c for c in ALPHABET if c != chars[pos]]
        chars[pos] = choices[int(rng.integers(len(choices)))]


def perturb(name: str, distance: int, rng: np.random.Generator, min_length: int = 3) -> Optional[str]:
    """A variant of ``name`` at exactly ``distance`` edits, or None if none was found."""
    if distance == 0:
        return name
    for _ in range(MAX_PERTURB_ATTEMPTS):
        chars = list(name)
        for _ in range(distance):
            _edit_once(chars, rng, min_length)
        candidate = "".join(chars)
        if len(candidate) >= min_length and levenshtein(name, candidate) == distance:
            return candidate
    return None


# ============== generation ==============

class _PairSampler:
    """Draws unused (given, family) pairs without materializing the full product."""

    def __init__(self, given: Sequence[str], family: Sequence[str], rng: np.random.Generator):
        self.given = given
        self.family = family
        self.rng = rng
        self.used: Set[int] = set()
        self.capacity = len(given) * len(family)

    def _name(self, flat: int) -> str:
        return f"{self.given[flat // len(self.family)]} {self.family[flat % len(self.family)]}"

    def draw(self, count: int) -> List[str]:
        if len(self.used) + count > self.capacity:
            raise PoolExhausted(f"{count} more names requested, {self.capacity - len(self.used)} pairs left")
        out: List[str] = []
        while len(out) < count:
            flat = int(self.rng.integers(self.capacity))
            if flat not in self.used:
                self.used.add(flat)
                out.append(self._name(flat))
        return out

    def draw_length(self, length: int, attempts: int) -> Optional[str]:
        """An unused pair whose full name is ``length`` characters, if one turns up."""
        for _ in range(attempts):
            if len(self.used) >= self.capacity:
                break
            flat = int(self.rng.integers(self.capacity))
            if flat in self.used:
                continue
            name = self._name(flat)
            if len(name) == length:
                self.used.add(flat)
                return name
        return None


def _draw_distance(spec: SyntheticDatasetSpec, rng: np.random.Generator) -> int:
    if spec.perturbation == NCVR:
        levels = list(NCVR_MIX)
        return int(rng.choice(levels, p=[NCVR_MIX[d] for d in levels]))
    return int(spec.perturbation)


def generate_dataset(spec: SyntheticDatasetSpec) -> SyntheticDataset:
    """Responder names plus labeled positive and negative queries, deterministic under ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    if spec.given_names or spec.family_names:
        given_default, family_default = default_pools()
        given = load_name_pool(spec.given_names) if spec.given_names else given_default
        family = load_name_pool(spec.family_names) if spec.family_names else family_default
    else:
        given, family = default_pools()

    sampler = _PairSampler(given, family, rng)
    responder = sampler.draw(spec.n_names)
    responder_set = set(responder)
    min_length = spec.encoding.shingle_size

    positives: List[QueryRecord] = []
    for qid in range(spec.n_positives):
        record = None
        for _ in range(MAX_SOURCE_ATTEMPTS):
            source = int(rng.integers(spec.n_names))
            distance = _draw_distance(spec, rng)
            variant = perturb(responder[source], distance, rng, min_length)
            if variant is None or (distance > 0 and variant in responder_set):
                continue
            record = QueryRecord(query_id=qid, name=variant, source=source, distance=distance)
            break
        if record is None:
            raise PoolExhausted(f"no valid perturbation found for positive query {qid}")
        positives.append(record)

    encoded = encode_names(responder, spec.encoding)
    negatives = _negatives(spec, sampler, positives, encoded, rng)

    queries = positives + [
        QueryRecord(query_id=len(positives) + i, name=name) for i, name in enumerate(negatives)
    ]
    order = rng.permutation(len(queries))
    queries = [QueryRecord(query_id=i, name=queries[j].name, source=queries[j].source,
                           distance=queries[j].distance) for i, j in enumerate(order)]
    logger.info(f"Generated dataset: {len(responder)} names, {len(positives)} positives, "
                f"{len(negatives)} negatives (perturbation={spec.perturbation})")
    return SyntheticDataset(spec=spec, responder_names=responder, queries=queries, responder_encoded=encoded)


def _negatives(spec: SyntheticDatasetSpec, sampler: _PairSampler, positives: Sequence[QueryRecord],
               encoded: EncodedNames, rng: np.random.Generator) -> List[str]:
    """Fresh names, length-matched to positives, whose best match stays below tau."""
    count = spec.negatives
    if count == 0:
        return []
    if positives:
        lengths = [len(positives[int(rng.integers(len(positives)))].name) for _ in range(count)]
    else:
        lengths = [len(encoded.names[int(rng.integers(len(encoded)))]) for _ in range(count)]

    reference = encoded.match_normalized
    out: List[str] = []
    rejected = 0
    for length in lengths:
        accepted = None
        for _ in range(MAX_SOURCE_ATTEMPTS):
            name = None
            for delta in (0, 1, -1, 2, -2):
                name = sampler.draw_length(length + delta, NEGATIVE_CANDIDATE_FACTOR)
                if name is not None:
                    break
            if name is None:
                raise PoolExhausted(f"no unused name near length {length}")
            candidate = encode_names([name], spec.encoding).match_normalized[0]
            if float(np.max(reference @ candidate)) < spec.tau:
                accepted = name
                break
            rejected += 1
        if accepted is None:
            raise PoolExhausted("could not find a negative query below the threshold")
        out.append(accepted)
    if rejected:
        logger.debug(f"Rejected {rejected} negative candidates at or above tau={spec.tau}")
    return out
