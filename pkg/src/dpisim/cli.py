"""Command-line entry point.

Subcommands:

* ``run``      simulate a scenario, write the CSV trace and a metrics report,
               optionally stream decimated telemetry
* ``serve``    run the local telemetry ingest service
* ``compare``  run a scenario in both modes and print the comparison table
* ``report``   recompute metrics from an existing run CSV

Exit codes: 0 success, 1 configuration problem, 2 I/O failure. The telemetry
endpoint and write key can come from DPISIM_TELEMETRY_URL and
DPISIM_TELEMETRY_KEY; the serve bind address from DPISIM_BIND.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import threading

from . import engine, metrics, telemetry
from .scenario import ParseError, Scenario, ValidationError, load_scenario_file

DEFICIT_BAND_W = 0.5


def _spg_only(scenario: Scenario) -> Scenario:
    battery = dataclasses.replace(scenario.battery, p_charge_max=0.0, p_discharge_max=0.0)
    return dataclasses.replace(scenario, battery=battery)


def _load(path: str) -> Scenario:
    if not os.path.exists(path):
        raise FileNotFoundError(f"scenario file not found: {path}")
    return load_scenario_file(path)


def _stream_telemetry(relay, url: str, key: str, min_interval: float) -> threading.Thread:
    client = telemetry.TelemetryClient(url, key, min_interval=min_interval)

    def pump():
        client.stream(iter(relay))

    thread = threading.Thread(target=pump, daemon=True)
    thread.start()
    return thread


def cmd_run(args) -> int:
    scenario = _load(args.scenario)
    if args.mode == "spg-only":
        scenario = _spg_only(scenario)
    relay = None
    pump = None
    if args.telemetry:
        if not args.write_key:
            print("error: telemetry target set but no write key "
                  "(--write-key or DPISIM_TELEMETRY_KEY)", file=sys.stderr)
            return 1
        relay = engine.SampleRelay()
        pump = _stream_telemetry(relay, args.telemetry, args.write_key, args.min_interval)
    result = engine.run(scenario, relay=relay)
    balance = engine.energy_balance(result, scenario)
    rep = metrics.report(result, scenario)
    with open(args.out, "w", encoding="utf-8") as fh:
        engine.write_csv(result, fh)
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            if args.format == "json":
                doc = rep.to_dict()
                doc["energy_balance"] = dataclasses.asdict(balance)
                json.dump(doc, fh, indent=2)
                fh.write("\n")
            else:
                fh.write(rep.format_table() + "\n")
                fh.write(f"curtailed energy    {balance.e_curtailed:10.3f} Wh\n")
                fh.write(f"battery losses      {balance.e_loss:10.3f} Wh\n")
    if pump is not None:
        pump.join(timeout=60.0)
    print(f"wrote {args.out}" + (f" and {args.report}" if args.report else ""))
    return 0


def cmd_serve(args) -> int:
    host, _, port_text = args.bind.partition(":")
    try:
        port = int(port_text) if port_text else 8100
    except ValueError:
        print(f"error: bad bind address {args.bind!r}", file=sys.stderr)
        return 1
    service = telemetry.TelemetryService(args.data_dir, min_interval=args.min_interval)
    try:
        server = telemetry.TelemetryServer((host or "127.0.0.1", port), service)
    except OSError as exc:
        print(f"error: cannot bind {args.bind}: {exc}", file=sys.stderr)
        return 1
    for ch in service.channels.values():
        print(f"channel {ch.id}: write_key={ch.write_key}")
    print(f"listening on http://{server.server_address[0]}:{server.server_address[1]}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown()
        server.server_close()
    return 0


def _compare_row(scenario: Scenario) -> dict:
    result = engine.run(scenario)
    balance = engine.energy_balance(result, scenario)
    rep = metrics.report(result, scenario)
    p_set = scenario.controller.p_set
    deficit_s = sum(
        scenario.dt_s for s in result.samples if s.p_load < p_set - DEFICIT_BAND_W
    )
    return {
        "error_pct": rep.error_pct,
        "e_delivered_wh": rep.e_stabilized_wh,
        "e_curtailed_wh": balance.e_curtailed,
        "deficit_s": deficit_s,
    }


def cmd_compare(args) -> int:
    scenario = _load(args.scenario)
    rows = {
        "dpi": _compare_row(scenario),
        "spg-only": _compare_row(_spg_only(scenario)),
    }
    header = f"{'metric':<22}{'dpi':>14}{'spg-only':>14}"
    print(header)
    print("-" * len(header))
    fmt = [
        ("error_pct", "stabilization error %", "{:.3f}"),
        ("e_delivered_wh", "energy delivered Wh", "{:.3f}"),
        ("e_curtailed_wh", "energy curtailed Wh", "{:.3f}"),
        ("deficit_s", "deficit duration s", "{:.1f}"),
    ]
    for key, label, pattern in fmt:
        a = pattern.format(rows["dpi"][key])
        b = pattern.format(rows["spg-only"][key])
        print(f"{label:<22}{a:>14}{b:>14}")
    return 0


def cmd_report(args) -> int:
    if not os.path.exists(args.csv):
        raise FileNotFoundError(f"csv file not found: {args.csv}")
    with open(args.csv, "r", encoding="utf-8") as fh:
        result = engine.read_csv(fh)
    rep = metrics.report(result)
    if args.format == "json":
        print(json.dumps(rep.to_dict(), indent=2))
    else:
        print(rep.format_table())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dpisim",
                                     description="Battery-backed PV output stabilization simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="simulate a scenario and write CSV + report")
    p_run.add_argument("--scenario", required=True, help="scenario JSON path")
    p_run.add_argument("--out", required=True, help="output CSV path")
    p_run.add_argument("--report", help="metrics report output path")
    p_run.add_argument("--format", choices=("text", "json"), default="text",
                       help="report format (default text)")
    p_run.add_argument("--mode", choices=("dpi", "spg-only"), default="dpi",
                       help="dpi = battery active, spg-only = curtailment only")
    p_run.add_argument("--telemetry", default=os.environ.get("DPISIM_TELEMETRY_URL"),
                       help="telemetry endpoint, e.g. http://127.0.0.1:8100")
    p_run.add_argument("--write-key", default=os.environ.get("DPISIM_TELEMETRY_KEY"),
                       help="channel write key for --telemetry")
    p_run.add_argument("--min-interval", type=float, default=telemetry.MIN_UPDATE_INTERVAL_S,
                       help="telemetry decimation interval in simulated seconds")
    p_run.set_defaults(func=cmd_run)

    p_serve = sub.add_parser("serve", help="run the telemetry ingest service")
    p_serve.add_argument("--bind", default=os.environ.get("DPISIM_BIND", "127.0.0.1:8100"),
                         help="host:port to listen on (env DPISIM_BIND)")
    p_serve.add_argument("--data-dir", default="telemetry-data",
                         help="directory for channel logs")
    p_serve.add_argument("--min-interval", type=float, default=telemetry.MIN_UPDATE_INTERVAL_S,
                         help="minimum seconds between stored updates per channel")
    p_serve.set_defaults(func=cmd_serve)

    p_cmp = sub.add_parser("compare", help="run dpi and spg-only and compare")
    p_cmp.add_argument("--scenario", required=True, help="scenario JSON path")
    p_cmp.set_defaults(func=cmd_compare)

    p_rep = sub.add_parser("report", help="recompute metrics from a run CSV")
    p_rep.add_argument("--csv", required=True, help="CSV produced by run")
    p_rep.add_argument("--format", choices=("text", "json"), default="text")
    p_rep.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ParseError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
