"""
Configuration management for hefuzz.

Loads from a TOML file, environment variables (.env supported) or defaults.
Priority: explicit path > HEFUZZ_CONFIG > ./hefuzz.toml > env vars > defaults.
CLI flags are applied on top with ``HefuzzConfig.with_overrides``.
"""
import os
import sys

if sys.version_info >= (3, 11):
    import tomllib
else:  # Python 3.10: API-identical backport
    import tomli as tomllib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .ckks import PROTOCOL_MODULUS_BITS, HeParams
from .clustering import ClusterConfig
from .encoding import EncodingParams
from .errors import ConfigError, HefuzzError
from .protocol import ProtocolConfig
from .transport import ChannelConfig, ChannelMode

CONFIG_ENV_VAR = "HEFUZZ_CONFIG"
DEFAULT_CONFIG_NAME = "hefuzz.toml"


def get_hefuzz_home() -> Path:
    """Resolve the runtime home directory."""
    env_home = os.getenv("HEFUZZ_HOME", "").strip()
    if env_home:
        return Path(env_home)

    if getattr(sys, "frozen", False):
        # Packaged exe runtime
        return Path(sys.executable).resolve().parent

    # Source runtime: repository root
    return Path(__file__).resolve().parents[2]


def default_out_dir() -> str:
    return str(Path.cwd() / "out")


def default_data_dir() -> Path:
    return Path(__file__).resolve().parent / "data"


# ============== validation schema ==============

class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class EncodingSection(_Section):
    shingle_size: int = Field(3, ge=1)
    num_permutations: int = Field(200, ge=1, le=0xFFFF)
    max_hash: int = Field(1 << 20, ge=2, le=1 << 32)
    seed: int = 20240917


class HeSection(_Section):
    ring_degree: int = Field(8192, ge=8)
    scale: float = Field(2.0 ** 40, gt=1.0)
    modulus_bits: List[int] = Field(default_factory=lambda: list(PROTOCOL_MODULUS_BITS), min_length=3)
    error_stddev: float = Field(3.2, gt=0.0)
    secret_hamming_weight: int = Field(64, ge=1)

    @field_validator("ring_degree")
    @classmethod
    def _power_of_two(cls, v: int) -> int:
        if v & (v - 1):
            raise ValueError("ring_degree must be a power of two")
        return v

    @field_validator("modulus_bits")
    @classmethod
    def _bit_sizes(cls, v: List[int]) -> List[int]:
        if any(not 20 <= b <= 60 for b in v):
            raise ValueError("every modulus must be 20..60 bits")
        return v


class ClusterSection(_Section):
    k: Optional[int] = Field(None, ge=1)
    iterations: int = Field(20, ge=1)
    seed: int = 7


class ProtocolSection(_Section):
    tau: float = Field(0.9, ge=-1.0, le=1.0)
    early_exit: bool = True
    mask_low: float = Field(1.0, gt=0.0)
    mask_high: float = Field(100.0, gt=0.0)
    threads: int = Field(1, ge=1)
    max_batch: Optional[int] = Field(None, ge=1)
    seed: Optional[int] = None

    @model_validator(mode="after")
    def _mask_range(self) -> "ProtocolSection":
        if self.mask_low > self.mask_high:
            raise ValueError("mask_low must not exceed mask_high")
        return self


class ChannelSection(_Section):
    mode: Literal["memory", "tcp"] = "tcp"
    host: str = "127.0.0.1"
    port: int = Field(9460, ge=0, le=65535)
    compress: bool = False
    timeout: float = Field(600.0, gt=0.0)


class StatusSection(_Section):
    host: str = "127.0.0.1"
    port: Optional[int] = Field(None, ge=0, le=65535)


class PathsSection(_Section):
    out_dir: Optional[str] = None
    model: Optional[str] = None
    keys_dir: Optional[str] = None
    given_names: Optional[str] = None
    family_names: Optional[str] = None


class ConfigDocument(_Section):
    seed: int = 7
    encoding: EncodingSection = Field(default_factory=EncodingSection)
    he: HeSection = Field(default_factory=HeSection)
    cluster: ClusterSection = Field(default_factory=ClusterSection)
    protocol: ProtocolSection = Field(default_factory=ProtocolSection)
    channel: ChannelSection = Field(default_factory=ChannelSection)
    status: StatusSection = Field(default_factory=StatusSection)
    paths: PathsSection = Field(default_factory=PathsSection)


# ============== resolved config ==============

@dataclass
class StatusConfig:
    """Responder status sidecar; disabled when port is None."""
    host: str = "127.0.0.1"
    port: Optional[int] = None


@dataclass
class PathsConfig:
    out_dir: str = field(default_factory=default_out_dir)
    model: Optional[str] = None
    keys_dir: Optional[str] = None
    given_names: Optional[str] = None
    family_names: Optional[str] = None


@dataclass
class HefuzzConfig:
    """Fully resolved configuration; every command starts from one of these."""
    seed: int = 7
    encoding: EncodingParams = field(default_factory=EncodingParams)
    he: HeParams = field(default_factory=HeParams.for_protocol)
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    status: StatusConfig = field(default_factory=StatusConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "HefuzzConfig":
        """Validate a config document and build the resolved config."""
        try:
            doc = ConfigDocument.model_validate(data)
        except ValidationError as e:
            raise ConfigError(f"invalid configuration: {e}") from e
        try:
            return cls(
                seed=doc.seed,
                encoding=EncodingParams(**doc.encoding.model_dump()),
                he=HeParams(
                    ring_degree=doc.he.ring_degree,
                    scale=doc.he.scale,
                    modulus_bits=tuple(doc.he.modulus_bits),
                    error_stddev=doc.he.error_stddev,
                    secret_hamming_weight=doc.he.secret_hamming_weight,
                ),
                cluster=ClusterConfig(**doc.cluster.model_dump()),
                protocol=ProtocolConfig(**doc.protocol.model_dump(), compress=doc.channel.compress),
                channel=ChannelConfig(
                    mode=ChannelMode(doc.channel.mode),
                    host=doc.channel.host,
                    port=doc.channel.port,
                    compress=doc.channel.compress,
                    timeout=doc.channel.timeout,
                ),
                status=StatusConfig(**doc.status.model_dump()),
                paths=PathsConfig(**{k: v for k, v in doc.paths.model_dump().items() if v is not None}),
            )
        except HefuzzError as e:
            raise ConfigError(f"invalid configuration: {e}") from e

    @classmethod
    def from_toml(cls, path: str) -> "HefuzzConfig":
        """Load config from a TOML file"""
        try:
            with open(path, "rb") as f:
                data = tomllib.load(f)
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"{path}: {e}") from e
        return cls.from_dict(data)

    @classmethod
    def from_env(cls, env_file: Optional[str] = None) -> "HefuzzConfig":
        """Load config from environment variables"""
        if env_file:
            load_dotenv(env_file)
        else:
            # Try to find .env in common locations
            for path in [".env", "config/.env"]:
                if Path(path).exists():
                    load_dotenv(path)
                    break

        data: Dict[str, Any] = {}

        def put(section: Optional[str], key: str, env: str) -> None:
            value = os.getenv(env, "").strip()
            if not value:
                return
            target = data if section is None else data.setdefault(section, {})
            target[key] = value

        put(None, "seed", "HEFUZZ_SEED")
        put("protocol", "tau", "HEFUZZ_TAU")
        put("protocol", "threads", "HEFUZZ_THREADS")
        put("protocol", "early_exit", "HEFUZZ_EARLY_EXIT")
        put("he", "ring_degree", "HEFUZZ_RING_DEGREE")
        put("cluster", "k", "HEFUZZ_CLUSTERS")
        put("channel", "host", "HEFUZZ_HOST")
        put("channel", "port", "HEFUZZ_PORT")
        put("channel", "compress", "HEFUZZ_COMPRESS")
        put("status", "port", "HEFUZZ_STATUS_PORT")
        put("paths", "out_dir", "HEFUZZ_OUT_DIR")
        put("paths", "model", "HEFUZZ_MODEL")
        put("paths", "keys_dir", "HEFUZZ_KEYS_DIR")
        return cls.from_dict(data)

    @classmethod
    def load(cls, config_path: Optional[str] = None) -> "HefuzzConfig":
        """
        Load configuration from file or environment.
        Priority: config_path > HEFUZZ_CONFIG > ./hefuzz.toml > env vars > defaults
        """
        if config_path:
            return cls.from_toml(config_path)

        env_path = os.getenv(CONFIG_ENV_VAR, "").strip()
        if env_path:
            return cls.from_toml(env_path)

        if Path(DEFAULT_CONFIG_NAME).exists():
            return cls.from_toml(DEFAULT_CONFIG_NAME)

        # Fall back to environment variables
        return cls.from_env()

    def to_dict(self) -> Dict[str, Any]:
        """The resolved config as a document that ``from_dict`` accepts."""
        encoding = self.encoding.to_dict()
        encoding.pop("hash_offset", None)
        protocol = self.protocol.to_dict()
        protocol.pop("compress", None)
        return {
            "seed": self.seed,
            "encoding": encoding,
            "he": self.he.to_dict(),
            "cluster": self.cluster.to_dict(),
            "protocol": protocol,
            "channel": self.channel.to_dict(),
            "status": {"host": self.status.host, "port": self.status.port},
            "paths": {
                "out_dir": self.paths.out_dir,
                "model": self.paths.model,
                "keys_dir": self.paths.keys_dir,
                "given_names": self.paths.given_names,
                "family_names": self.paths.family_names,
            },
        }

    def with_overrides(self, overrides: Dict[str, Any]) -> "HefuzzConfig":
        """
        Apply dotted-key overrides (``"protocol.tau": 0.85``); None values are
        skipped. The result is re-validated.
        """
        data = self.to_dict()
        for dotted, value in overrides.items():
            if value is None:
                continue
            target = data
            *parents, leaf = dotted.split(".")
            for key in parents:
                target = target.setdefault(key, {})
            target[leaf] = value
        return type(self).from_dict(data)

    @property
    def out_dir(self) -> Path:
        return Path(self.paths.out_dir)


# Global config instance (lazy loaded)
_config: Optional[HefuzzConfig] = None


def get_config(config_path: Optional[str] = None) -> HefuzzConfig:
    """Get or create the global config instance"""
    global _config
    if _config is None:
        _config = HefuzzConfig.load(config_path)
    return _config


def set_config(config: Optional[HefuzzConfig]) -> None:
    global _config
    _config = config
