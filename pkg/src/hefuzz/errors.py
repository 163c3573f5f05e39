"""
Error types for hefuzz.

Every error carries a stable ``code`` used in protocol Error frames and for
mapping to CLI exit codes.
"""
import socket
from typing import Dict, Type


class HefuzzError(Exception):
    """Base class for all hefuzz errors."""

    code = "internal"


# ============== encoding / clustering ==============

class NameTooShort(HefuzzError, ValueError):
    code = "name_too_short"


class ZeroVector(HefuzzError, ValueError):
    code = "zero_vector"


class EmptyDataset(HefuzzError, ValueError):
    code = "empty_dataset"


class DimensionMismatch(HefuzzError, ValueError):
    code = "dimension_mismatch"


class TooFewPoints(HefuzzError, ValueError):
    code = "too_few_points"


class IndexOutOfRange(HefuzzError, IndexError):
    code = "index_out_of_range"


# ============== ckks engine ==============

class InvalidParams(HefuzzError, ValueError):
    code = "invalid_params"


class TooManySlots(HefuzzError, ValueError):
    code = "too_many_slots"


class LevelExhausted(HefuzzError):
    code = "level_exhausted"


class LevelMismatch(HefuzzError, ValueError):
    code = "level_mismatch"


class ScaleMismatch(HefuzzError, ValueError):
    code = "scale_mismatch"


class ScaleOverflow(HefuzzError, ValueError):
    code = "scale_overflow"


# ============== protocol / transport ==============

class ModelMissing(HefuzzError):
    code = "model_missing"


class BatchTooLarge(HefuzzError, ValueError):
    code = "batch_too_large"


class TransportFailure(HefuzzError, OSError):
    code = "transport_failure"


class FrameCorrupt(HefuzzError, ValueError):
    code = "frame_corrupt"


class ProtocolPhaseViolation(HefuzzError):
    code = "phase_violation"


class RemoteError(HefuzzError):
    """The peer sent an Error frame."""

    code = "remote_error"

    def __init__(self, remote_code: str, message: str):
        super().__init__(f"{remote_code}: {message}")
        self.remote_code = remote_code


# ============== harness / cli ==============

class PoolExhausted(HefuzzError):
    code = "pool_exhausted"


class LengthMismatch(HefuzzError, ValueError):
    code = "length_mismatch"


class ConfigError(HefuzzError):
    code = "config_error"


class BindFailure(HefuzzError, OSError):
    code = "bind_failure"


# CLI exit codes
EXIT_OK = 0
EXIT_USAGE = 1
EXIT_PARTIAL = 2
EXIT_PROTOCOL = 3
EXIT_CONFIG = 4

_EXIT_CODES: Dict[Type[BaseException], int] = {
    ConfigError: EXIT_CONFIG,
    InvalidParams: EXIT_CONFIG,
    BatchTooLarge: EXIT_CONFIG,
    TooFewPoints: EXIT_CONFIG,
    EmptyDataset: EXIT_CONFIG,
    DimensionMismatch: EXIT_CONFIG,
    LengthMismatch: EXIT_CONFIG,
    NameTooShort: EXIT_CONFIG,
    TransportFailure: EXIT_PROTOCOL,
    FrameCorrupt: EXIT_PROTOCOL,
    ProtocolPhaseViolation: EXIT_PROTOCOL,
    RemoteError: EXIT_PROTOCOL,
    BindFailure: EXIT_PROTOCOL,
    ModelMissing: EXIT_PROTOCOL,
    ConnectionError: EXIT_PROTOCOL,
    TimeoutError: EXIT_PROTOCOL,
    socket.gaierror: EXIT_PROTOCOL,
    # unreadable or unwritable paths
    OSError: EXIT_CONFIG,
    HefuzzError: EXIT_PROTOCOL,
}


def exit_code_for(exc: BaseException) -> int:
    """
    Map an exception to a CLI exit code.

    Input and configuration problems (bad paths, k > n, malformed signature
    files) give 4; network, frame and HE-engine failures give 3. Anything
    outside hefuzz and the OS layer gives 1.
    """
    for cls in type(exc).__mro__:
        if cls in _EXIT_CODES:
            return _EXIT_CODES[cls]
    return EXIT_USAGE
