#!/usr/bin/env python3
"""
CLI for hefuzz.

Stable entrypoint that can be packaged as an exe (`hefuzz.exe`) while still
being runnable in dev via:

  python -m src.hefuzz <command> [args...]

Exit codes: 0 success, 1 usage error, 2 partial input errors, 3 protocol,
transport or HE failure, 4 configuration or input error (see errors.exit_code_for).
"""

from __future__ import annotations

import argparse
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, NoReturn, Optional

logger = logging.getLogger(__name__)

KEY_FILES = {"public": "public.ckpk", "relin": "relin.ckrk", "secret": "secret.cksk", "params": "params.json"}


def _setup_logging(out_dir: Path, command: str, verbose: bool = False) -> None:
    log_root = out_dir / "logs"
    log_root.mkdir(parents=True, exist_ok=True)
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        handlers=[
            logging.StreamHandler(),
            logging.FileHandler(log_root / f"{command}.log", encoding="utf-8"),
        ],
        force=True,
    )


def _load_config(args: argparse.Namespace, overrides: Optional[Dict[str, Any]] = None):
    from .config import HefuzzConfig, set_config

    config = HefuzzConfig.load(args.config)
    # --seed drives every seeded stage; a stage-specific flag still wins
    merged = {"paths.out_dir": args.out_dir, "seed": args.seed, "cluster.seed": args.seed, "protocol.seed": args.seed}
    merged.update({key: value for key, value in (overrides or {}).items() if value is not None})
    config = config.with_overrides(merged)
    set_config(config)
    _setup_logging(config.out_dir, args.command, args.verbose)
    return config


def _write_json(path: Path, document: Dict[str, Any]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(document, indent=2, default=str), encoding="utf-8")


def _write_run_record(artifact: Path, command: str, config, **extra: Any) -> Path:
    """Echo the resolved config beside an artifact: ``<artifact>.run.json``, or ``run.json`` inside a directory."""
    record = artifact / "run.json" if artifact.is_dir() else artifact.with_name(artifact.name + ".run.json")
    _write_json(record, {"command": command, "artifact": str(artifact), "config": config.to_dict(), **extra})
    return record


# ============== keys ==============

def _cmd_keygen(args: argparse.Namespace) -> int:
    from .ckks import keygen
    from .serialize import serialize_public_key, serialize_relin_key, serialize_secret_key, write_private_file

    config = _load_config(args, {"he.ring_degree": args.ring_degree})
    out = Path(args.out) if args.out else Path(config.paths.keys_dir or config.out_dir / "keys")
    out.mkdir(parents=True, exist_ok=True)

    params = config.he
    keys = keygen(params, seed=args.key_seed)
    (out / KEY_FILES["public"]).write_bytes(serialize_public_key(keys.public, params))
    (out / KEY_FILES["relin"]).write_bytes(serialize_relin_key(keys.relin, params))
    _write_json(out / KEY_FILES["params"], params.to_dict())
    if args.include_secret:
        write_private_file(out / KEY_FILES["secret"], serialize_secret_key(keys.secret, params))
        logger.info(f"Secret key written to {out / KEY_FILES['secret']} (mode 0600)")
    _write_run_record(out, "keygen", config, include_secret=bool(args.include_secret))
    logger.info(f"Keys for N={params.ring_degree}, chain={list(params.modulus_bits)} written to {out}")
    return 0


def load_keys(keys_dir: Path):
    """Rebuild a KeySet from a keygen --include-secret directory."""
    from .ckks import HeParams, KeySet
    from .errors import ConfigError
    from .serialize import deserialize_public_key, deserialize_relin_key, deserialize_secret_key

    paths = {name: keys_dir / file for name, file in KEY_FILES.items()}
    missing = [str(p) for p in paths.values() if not p.exists()]
    if missing:
        raise ConfigError(f"incomplete key directory, missing: {', '.join(missing)} "
                          f"(run keygen --include-secret)")
    params = HeParams.from_dict(json.loads(paths["params"].read_text(encoding="utf-8")))
    return KeySet(
        params=params,
        secret=deserialize_secret_key(paths["secret"].read_bytes(), params),
        public=deserialize_public_key(paths["public"].read_bytes(), params),
        relin=deserialize_relin_key(paths["relin"].read_bytes(), params),
    )


# ============== offline preparation ==============

def _cmd_encode(args: argparse.Namespace) -> int:
    from .encoding import encode_names, load_names, split_valid_names, write_signature_file
    from .errors import EXIT_PARTIAL

    config = _load_config(args)
    entries = load_names(args.input)
    good, bad = split_valid_names(entries, config.encoding)
    for lineno, name in bad:
        logger.error(f"{args.input}:{lineno}: name {name!r} is shorter than {config.encoding.shingle_size} characters")

    output = Path(args.output) if args.output else config.out_dir / "signatures.mhsg"
    output.parent.mkdir(parents=True, exist_ok=True)
    encoded = encode_names([name for _, name in good], config.encoding)
    records = write_signature_file(output, encoded, config.encoding)
    _write_run_record(output, "encode", config, names=len(good), rejected=len(bad))
    logger.info(f"Encoded {len(good)} names ({records} signature records) to {output}")
    return EXIT_PARTIAL if bad else 0


def _encoded_from_input(path: str, config):
    """Signature file (from encode) or a plain names file."""
    from .encoding import (
        CENTROID_LENGTH,
        MATCH_LENGTH,
        EncodedNames,
        encode_names,
        is_signature_file,
        load_names,
        read_signature_file,
        split_valid_names,
    )
    from .errors import DimensionMismatch

    if is_signature_file(path):
        groups = read_signature_file(path)
        centroid = groups.get(config.encoding.num_permutations, groups.get(CENTROID_LENGTH))
        match = groups.get(MATCH_LENGTH)
        if centroid is None or match is None:
            raise DimensionMismatch(f"{path} lacks centroid-length or match-length signatures")
        return EncodedNames(names=[str(i) for i in range(len(centroid))],
                            centroid_signatures=centroid, match_signatures=match)
    good, _ = split_valid_names(load_names(path), config.encoding)
    return encode_names([name for _, name in good], config.encoding)


def _cmd_cluster(args: argparse.Namespace) -> int:
    from .clustering import build_model, save_model
    from .errors import ConfigError

    config = _load_config(args, {"cluster.k": args.k, "cluster.iterations": args.iterations,
                                 "cluster.seed": args.cluster_seed})
    source = args.input_path or args.input
    if not source:
        raise ConfigError("cluster needs an input file (positional or --in)")
    encoded = _encoded_from_input(source, config)
    model = build_model(encoded, config.cluster, fingerprint=config.encoding.fingerprint)
    output = Path(args.output) if args.output else Path(config.paths.model or config.out_dir / "model.clmd")
    output.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, output)
    _write_run_record(output, "cluster", config, input=str(source), summary=model.summary())

    summary = model.summary()
    print(f"k={model.k} M={model.max_cluster_size} records={model.num_records} "
          f"columns for 50%={summary['columns_for_half']} for 90%={summary['columns_for_90pct']}")
    logger.info(f"Cluster model written to {output}")
    return 0


# ============== online roles ==============

def _cmd_serve(args: argparse.Namespace) -> int:
    from .clustering import load_model
    from .errors import ConfigError
    from .server import ResponderServer

    config = _load_config(args, {
        "channel.host": args.host, "channel.port": args.port, "status.port": args.status_port,
        "protocol.threads": args.threads, "protocol.tau": args.tau,
    })
    model_path = args.model or config.paths.model
    if not model_path:
        raise ConfigError("serve needs --model or paths.model")
    model = load_model(model_path)
    server = ResponderServer(model, config, transcript_dir=config.out_dir / "transcripts")
    return server.serve_forever()


def _cmd_query(args: argparse.Namespace) -> int:
    from .ckks import keygen
    from .encoding import load_names
    from .protocol import Querier, probe, query_session
    from .transcript import TranscriptLog, report, write_summary
    from .transport import connect

    config = _load_config(args, {
        "channel.host": args.host, "channel.port": args.port, "protocol.tau": args.tau,
        "protocol.early_exit": False if args.no_early_exit else None, "protocol.max_batch": args.batch,
    })
    keys_dir = args.keys or config.paths.keys_dir
    keys = load_keys(Path(keys_dir)) if keys_dir else keygen(config.he, seed=config.protocol.seed)
    querier = Querier.with_keys(keys, config.encoding, config.protocol)

    if args.probe:
        with connect(config.channel) as channel:
            print(json.dumps(probe(channel, querier), indent=2))
        return 0

    names = [name for _, name in load_names(args.input)]
    out = config.out_dir
    verdict_path = Path(args.output) if args.output else out / "verdicts.jsonl"
    verdict_path.parent.mkdir(parents=True, exist_ok=True)
    sessions: List[Dict[str, Any]] = []
    matched = 0

    with open(verdict_path, "w", encoding="utf-8") as f:
        step = querier.max_batch
        for number, offset in enumerate(range(0, len(names), step)):
            batch = names[offset:offset + step]
            transcript = TranscriptLog()
            querier.reset()
            with connect(config.channel, transcript) as channel:
                verdicts = query_session(channel, querier, batch, query_ids=range(offset, offset + len(batch)))
            for v in verdicts:
                f.write(json.dumps({"name_id": v.query_id, "matched": v.matched,
                                    "columns_consumed": v.columns_consumed}) + "\n")
                matched += v.matched
            transcript.to_csv(out / f"query_transcript_{number}.csv")
            sessions.append({"batch": number, "size": len(batch), **report(transcript).to_dict()})
            if number == 0:
                write_summary(out / "transcript.json", transcript, report(transcript), config.to_dict())

    _write_json(out / "run.json", {"command": "query", "config": config.to_dict(), "sessions": sessions})
    print(f"{matched}/{len(names)} names matched; verdicts in {verdict_path}")
    return 0


def _cmd_status(args: argparse.Namespace) -> int:
    from .status_client import StatusClient

    client = StatusClient(args.url, timeout=args.timeout)
    document = client.list_sessions(limit=args.limit) if args.sessions else client.get_status()
    print(json.dumps(document, indent=2))
    return 0


def _cmd_bench(args: argparse.Namespace) -> int:
    from .bench import BenchScenario, run_bench

    config = _load_config(args, {"protocol.tau": args.tau, "protocol.threads": args.threads})
    scenario = BenchScenario(
        name=args.scenario,
        n_names=args.names,
        n_queries=args.queries,
        runner=args.runner,
        given_names=args.given_names,
        family_names=args.family_names,
        measure_baseline=not args.analytic_baseline,
    )
    result = run_bench(scenario, config, Path(args.bundle) if args.bundle else None)
    for name, ok in result.checks.items():
        print(f"{name}: {'pass' if ok else 'FAIL'}")
    print(f"report: {result.artifacts['report']}")
    return 0


# ============== entrypoint ==============

class _Parser(argparse.ArgumentParser):
    """Usage errors exit with EXIT_USAGE rather than argparse's 2."""

    def error(self, message: str) -> NoReturn:
        from .errors import EXIT_USAGE

        self.print_usage()
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="TOML config (default: $HEFUZZ_CONFIG or ./hefuzz.toml)")
    common.add_argument("--out-dir", default=None, help="Directory for every output artifact")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--verbose", "-v", action="store_true")
    return common


def main(argv: Optional[List[str]] = None) -> int:
    from .errors import EXIT_USAGE, HefuzzError, exit_code_for

    parser = _Parser(
        prog="hefuzz",
        description="Privacy-preserving fuzzy name matching with MinHash, clustering and CKKS",
    )
    common = _common_parser()
    subparsers = parser.add_subparsers(dest="command")

    keygen_parser = subparsers.add_parser("keygen", parents=[common], help="Generate querier key material")
    keygen_parser.add_argument("--out", default=None, help="Key directory (default: <out-dir>/keys)")
    keygen_parser.add_argument("--include-secret", action="store_true",
                               help="Also write secret.cksk (mode 0600); needed by query --keys")
    keygen_parser.add_argument("--ring-degree", type=int, default=None)
    keygen_parser.add_argument("--key-seed", type=int, default=None, help="Deterministic keys (tests only)")
    keygen_parser.set_defaults(func=_cmd_keygen)

    encode_parser = subparsers.add_parser("encode", parents=[common], help="Encode a names file into MinHash signatures")
    encode_parser.add_argument("input", help="Newline-delimited UTF-8 names")
    encode_parser.add_argument("--out", "--output", "-o", dest="output", default=None)
    encode_parser.set_defaults(func=_cmd_encode)

    cluster_parser = subparsers.add_parser("cluster", parents=[common], help="Cluster signatures into a model file")
    cluster_parser.add_argument("input", nargs="?", default=None, help="Signature file from encode, or a names file")
    cluster_parser.add_argument("--in", dest="input_path", default=None, help="Same as the positional input")
    cluster_parser.add_argument("--k", type=int, default=None, help="Clusters (default: round(sqrt(n)))")
    cluster_parser.add_argument("--iters", "--iterations", dest="iterations", type=int, default=None)
    cluster_parser.add_argument("--cluster-seed", type=int, default=None, help="Overrides --seed for k-means only")
    cluster_parser.add_argument("--out", "--output", "-o", dest="output", default=None)
    cluster_parser.set_defaults(func=_cmd_cluster)

    serve_parser = subparsers.add_parser("serve", parents=[common], help="Run the responder")
    serve_parser.add_argument("--model", default=None)
    serve_parser.add_argument("--host", default=None)
    serve_parser.add_argument("--port", type=int, default=None)
    serve_parser.add_argument("--status-port", type=int, default=None, help="Enable the HTTP status sidecar")
    serve_parser.add_argument("--threads", type=int, default=None, help="Column worker threads")
    serve_parser.add_argument("--tau", type=float, default=None)
    serve_parser.set_defaults(func=_cmd_serve)

    query_parser = subparsers.add_parser("query", parents=[common], help="Query a responder with a names file")
    query_parser.add_argument("input", nargs="?", default=None, help="Newline-delimited UTF-8 names")
    query_parser.add_argument("--host", default=None)
    query_parser.add_argument("--port", type=int, default=None)
    query_parser.add_argument("--keys", default=None, help="Key directory from keygen --include-secret")
    query_parser.add_argument("--tau", type=float, default=None)
    query_parser.add_argument("--batch", type=int, default=None, help="Names per session (default: N/2)")
    query_parser.add_argument("--no-early-exit", action="store_true")
    query_parser.add_argument("--probe", action="store_true", help="Only send a health probe")
    query_parser.add_argument("--output", "-o", default=None, help="Verdicts file (JSON lines)")
    query_parser.set_defaults(func=_cmd_query)

    status_parser = subparsers.add_parser("status", help="Read the responder status sidecar")
    status_parser.add_argument("--url", default="http://127.0.0.1:9461/")
    status_parser.add_argument("--sessions", action="store_true", help="List recent sessions instead")
    status_parser.add_argument("--limit", type=int, default=20)
    status_parser.add_argument("--timeout", type=float, default=10.0)
    status_parser.set_defaults(func=_cmd_status)

    bench_parser = subparsers.add_parser("bench", parents=[common], help="Run an evaluation scenario")
    bench_parser.add_argument("--scenario", required=True, choices=["threshold", "clusters", "ld", "batching", "table"])
    bench_parser.add_argument("--names", type=int, default=None, help="Responder names")
    bench_parser.add_argument("--queries", type=int, default=None)
    bench_parser.add_argument("--runner", default=None, choices=["plaintext", "oracle", "ckks"])
    bench_parser.add_argument("--tau", type=float, default=None)
    bench_parser.add_argument("--threads", type=int, default=None)
    bench_parser.add_argument("--given-names", default=None, help="Given-name pool file")
    bench_parser.add_argument("--family-names", default=None, help="Family-name pool file")
    bench_parser.add_argument("--bundle", default=None, help="Bundle directory (default: <out-dir>/bench/<scenario>)")
    bench_parser.add_argument("--analytic-baseline", action="store_true",
                              help="Estimate linear-mode bytes instead of running a linear session")
    bench_parser.set_defaults(func=_cmd_bench)

    args = parser.parse_args(argv)
    if not getattr(args, "command", None):
        parser.print_help()
        return EXIT_USAGE

    if args.command == "query" and not args.probe and not args.input:
        parser.error("query needs a names file unless --probe is given")

    try:
        return args.func(args)
    except HefuzzError as e:
        logger.error(f"{args.command} failed: {e}")
        return exit_code_for(e)
    except OSError as e:
        logger.error(f"{args.command} failed: {e}")
        return exit_code_for(e)


if __name__ == "__main__":
    raise SystemExit(main())
