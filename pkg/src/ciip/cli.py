"""Command-line entry point: ``ciip <subcommand>``.

Exit status: 0 success, 1 protocol error, 2 configuration or usage error.
"""

from __future__ import annotations

import argparse
import asyncio
import configparser
import json
import logging
import signal
import sys
from pathlib import Path

from .daemons import (
    AdapterDaemon,
    RegistryDaemon,
    RegistryDaemonConfig,
    _parse_hostport,
    emulate,
    load_adapter_config,
    stats_json,
)
from .errors import BindError, CiipError, ConfigError
from .scenario import format_report, load_scenario, report_json, run_scenario
from .tools import dissect, format_dissection, overhead, parse_hex

EXIT_OK, EXIT_PROTOCOL, EXIT_CONFIG = 0, 1, 2


def _cid(text: str) -> int:
    try:
        value = int(text, 16)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a hex cid: {text!r}") from None
    if not 0 < value <= 0xFFFFFFFF:
        raise argparse.ArgumentTypeError("cid must be a non-zero 32-bit value")
    return value


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit value")
    return value


def cmd_dissect(args) -> int:
    text = " ".join(args.hex) if args.hex else sys.stdin.read()
    try:
        data = parse_hex(text)
    except ValueError as exc:
        print(f"error: invalid hex input: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    d = dissect(data)
    if args.json:
        print(json.dumps(d.as_dict(), indent=2))
    else:
        sys.stdout.write(format_dissection(d))
    return EXIT_OK if d.ok else EXIT_PROTOCOL


def cmd_overhead(args) -> int:
    reports = []
    for n in args.payload_len:
        try:
            reports.append(overhead(n))
        except CiipError as exc:
            print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
            return EXIT_PROTOCOL
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
    if args.json:
        print(json.dumps([r.as_dict() for r in reports], indent=2))
    else:
        print(f"{'payload':>7} {'ciip':>6} {'tcp/ipv4':>8} {'savings':>8}")
        for r in reports:
            print(f"{r.payload_len:>7} {r.ciip_frame_bytes:>6} {r.tcpip_segment_bytes:>8} {r.savings_fraction:>8.3f}")
    return EXIT_OK


def cmd_run(args) -> int:
    scenario = load_scenario(_need_config(args))
    result = run_scenario(scenario, seed=args.seed, duration=args.duration_ms)
    report = result.report()
    sys.stdout.write(report_json(report) if args.json else format_report(report))
    if args.log:
        Path(args.log).write_text(result.event_log)
    return EXIT_OK


def _need_config(args) -> str:
    if not args.config:
        raise ConfigError("--config <path> is required")
    return args.config


def _run_until_signal(daemon) -> None:
    async def main():
        stop = asyncio.Event()
        loop = asyncio.get_running_loop()
        for sig in (signal.SIGINT, signal.SIGTERM):
            loop.add_signal_handler(sig, stop.set)
        await daemon.run(stop)

    asyncio.run(main())


def cmd_adapter(args) -> int:
    daemon = AdapterDaemon(load_adapter_config(_need_config(args)))
    _run_until_signal(daemon)
    print(stats_json(daemon.stats()))
    return EXIT_OK


def load_registry_config(path: str | None, listen: str | None) -> RegistryDaemonConfig:
    cfg = RegistryDaemonConfig()
    if path:
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
        try:
            if not parser.read(path):
                raise ConfigError(f"cannot read config {path}")
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if not parser.has_section("registry"):
            raise ConfigError(f"{path}: missing [registry] section")
        s = parser["registry"]
        extra = set(s) - {"listen", "eviction_timeout_ms", "sweep_period_ms"}
        if extra:
            raise ConfigError(f"{path}: [registry] unknown key {sorted(extra)[0]!r}")
        try:
            if "listen" in s:
                cfg.listen = _parse_hostport(s["listen"], "listen")
            cfg.eviction_timeout = s.getint("eviction_timeout_ms", cfg.eviction_timeout)
            cfg.sweep_period = s.getint("sweep_period_ms", cfg.sweep_period)
        except ValueError as exc:
            raise ConfigError(f"{path}: [registry] {exc}") from None
    if listen:
        cfg.listen = _parse_hostport(listen, "--listen")
    return cfg


def cmd_registry(args) -> int:
    daemon = RegistryDaemon(load_registry_config(args.config, args.listen))
    _run_until_signal(daemon)
    print(stats_json(daemon.stats()))
    return EXIT_OK


def cmd_emulate(args) -> int:
    payloads = [p.encode() for p in args.send]
    payloads += [f"{args.cid:08x}:{i:06d}".encode() for i in range(args.count)]
    result = asyncio.run(emulate(
        _parse_hostport(args.adapter, "--adapter"),
        args.cid,
        payloads,
        interval=args.interval_ms,
        heartbeat_interval=args.heartbeat_interval_ms,
        duration=args.duration_ms,
        expect=args.expect,
        on_receive=None if args.json else lambda p: print(f"rx {p!r}", flush=True),
    ))
    if args.json:
        result["received"] = [p.hex() for p in result["received"]]
        print(json.dumps(result, indent=2))
    return EXIT_OK if result["failed"] == 0 else EXIT_PROTOCOL


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port, log_level="info")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ciip", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help):
        p = sub.add_parser(name, help=help)
        p.set_defaults(func=func)
        p.add_argument("--json", action="store_true", help="machine-readable output")
        return p

    p = add("dissect", cmd_dissect, "decode a hex frame and show every field")
    p.add_argument("hex", nargs="*", help="frame bytes in hex; whitespace is ignored (stdin if omitted)")

    p = add("overhead", cmd_overhead, "compare CIIP and TCP/IPv4 per-packet size")
    p.add_argument("payload_len", type=int, nargs="+")

    p = add("run", cmd_run, "run a scenario file over the simulator")
    p.add_argument("--config", required=False)
    p.add_argument("--seed", type=_u64)
    p.add_argument("--duration-ms", type=int)
    p.add_argument("--log", help="write the event log to this file")

    p = add("adapter", cmd_adapter, "run the adapter daemon")
    p.add_argument("--config")

    p = add("registry", cmd_registry, "run the registration server daemon")
    p.add_argument("--config")
    p.add_argument("--listen", help="HOST:PORT (overrides config)")

    p = add("emulate", cmd_emulate, "emulate a sensor endpoint against a running adapter")
    p.add_argument("--adapter", default="127.0.0.1:7100", help="adapter link address HOST:PORT")
    p.add_argument("--cid", type=_cid, required=True)
    p.add_argument("--send", action="append", default=[], help="payload text (repeatable)")
    p.add_argument("--count", type=int, default=0, help="extra generated payloads")
    p.add_argument("--interval-ms", type=int, default=100)
    p.add_argument("--heartbeat-interval-ms", type=int, default=1000)
    p.add_argument("--duration-ms", type=int)
    p.add_argument("--expect", type=int, help="stop after reading this many payloads")

    p = add("serve", cmd_serve, "serve the HTTP management API")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except (ConfigError, BindError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CiipError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL


if __name__ == "__main__":
    sys.exit(main())
