"""Operator command line wrapping the service, the verifier, the workload
driver, and the cost calculators.

Exit codes: 0 success, 1 integrity failure (or operational error), 2
anchoring gap (sealed chain without a receipt), 64 usage error. Every
command takes --json for one machine-readable document on stdout.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import bench as bench_mod
from . import costmodel
from .config import ConfigError, load_config
from .ledger import Ledger, audit
from .store import RECEIPTS_FILE, BlockStore, ReceiptLog, StoreError

EXIT_OK = 0
EXIT_INTEGRITY = 1
EXIT_ANCHOR_GAP = 2
EXIT_USAGE = 64


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2, which we reserve
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_int(value: str) -> int:
    try:
        number = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{value!r} is not an integer")
    if number < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return number


def _range(value: str) -> tuple[int, int]:
    try:
        start, stop = value.split(":")
        return int(start), int(stop)
    except ValueError:
        raise argparse.ArgumentTypeError("range must look like START:STOP")


def build_parser() -> _Parser:
    parser = _Parser(prog="logchain")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    serve = sub.add_parser("serve", help="run the HTTP service in the foreground")
    serve.add_argument("--config", help="JSON config file (or $LOGCHAIN_CONFIG)")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, help="override the configured port")

    verify = sub.add_parser("verify", help="audit a ledger store end to end")
    verify.add_argument("--store", required=True, help="store directory")
    verify.add_argument("--range", type=_range, dest="index_range", metavar="START:STOP")
    verify.add_argument("--json", action="store_true")

    bench = sub.add_parser("bench", help="drive a running service")
    bench_sub = bench.add_subparsers(dest="bench_command", required=True, parser_class=_Parser)
    run = bench_sub.add_parser("run", help="run one scenario")
    run.add_argument("--url", required=True)
    run.add_argument("--key", required=True, help="API key")
    run.add_argument("--tps", type=float, required=True)
    run.add_argument("--n", type=_positive_int, required=True, help="circled-chain capacity in effect")
    run.add_argument("--gas-tier", type=int)
    run.add_argument("--count", type=_positive_int, help="override the scenario file count")
    run.add_argument("--seed", type=int, default=1)
    run.add_argument("--out", help="write timings.csv here")
    run.add_argument("--summary", help="write summary.csv here")
    run.add_argument("--json", action="store_true")
    grid = bench_sub.add_parser("grid", help="run the full scenario grid")
    grid.add_argument("--url", required=True)
    grid.add_argument("--key", required=True)
    grid.add_argument("--backend", choices=("public", "private"), required=True)
    grid.add_argument("--out", required=True, help="write grid.csv here")
    grid.add_argument("--count", type=_positive_int, help="override every scenario's file count")
    grid.add_argument("--seed", type=int, default=1)
    grid.add_argument("--json", action="store_true")

    cost = sub.add_parser("cost", help="daily anchoring cost calculators")
    cost_sub = cost.add_subparsers(dest="cost_command", required=True, parser_class=_Parser)
    private = cost_sub.add_parser("private", help="fixed-infrastructure daily cost")
    private.add_argument("--s", type=_positive_int, required=True, help="submissions per day")
    private.add_argument("--json", action="store_true")
    public = cost_sub.add_parser("public", help="gas-priced daily cost from a price series")
    public.add_argument("--s", type=_positive_int, required=True)
    public.add_argument("--scenario", choices=costmodel.SCENARIOS, required=True)
    public.add_argument("--series", help="gas price CSV (default: bundled fixture)")
    public.add_argument("--json", action="store_true")
    breakeven = cost_sub.add_parser("breakeven", help="smallest s where private beats public")
    breakeven.add_argument("--scenario", choices=costmodel.SCENARIOS, help="default: all four")
    breakeven.add_argument("--series", help="gas price CSV (default: bundled fixture)")
    breakeven.add_argument("--json", action="store_true")
    curve = cost_sub.add_parser("curve", help="cost-vs-intensity CSV for plotting")
    curve.add_argument("--series", help="gas price CSV (default: bundled fixture)")
    curve.add_argument("--out", required=True)
    curve.add_argument("--json", action="store_true")

    return parser


# ---------------------------------------------------------------------------

def _cmd_serve(args) -> int:
    from .service import Engine, serve

    try:
        config = load_config(args.config)
        engine = Engine(config)
    except (ConfigError, StoreError, ValueError) as exc:
        print(f"logchain serve: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        serve(engine, host=args.host, port=args.port)
    finally:
        engine.close()
    return EXIT_OK


def _cmd_verify(args) -> int:
    from .service import read_store_meta

    store_dir = Path(args.store)
    try:
        difficulty, capacity = read_store_meta(store_dir)
    except (OSError, ValueError, KeyError) as exc:
        print(f"logchain verify: {store_dir} is not a ledger store: {exc}", file=sys.stderr)
        return EXIT_USAGE

    try:
        store = BlockStore(store_dir)
    except StoreError as exc:
        result = {"integrity_ok": False, "anchoring_ok": False, "error": str(exc)}
        _emit_verify(args, result)
        return EXIT_INTEGRITY
    try:
        receipts = ReceiptLog(store_dir / RECEIPTS_FILE)
        anchored = {record["content_hash"] for record in receipts.all()}
        ledger = Ledger(store, difficulty, capacity, repair=False)
        start, stop = args.index_range if args.index_range else (0, None)
        report = audit(ledger, anchored_content_hashes=anchored, start=start, stop=stop)
    except Exception as exc:
        result = {"integrity_ok": False, "anchoring_ok": False, "error": str(exc)}
        _emit_verify(args, result)
        return EXIT_INTEGRITY
    finally:
        store.close()

    result = {
        "blocks": store.count,
        "super_blocks": store.super_count,
        "sealed_chains": ledger.sealed_count,
        "integrity_ok": report.integrity_ok,
        "anchoring_ok": report.anchoring_ok,
        "first_bad_index": report.first_bad_index,
        "unanchored_supers": report.unanchored_supers,
        "failures": [
            {
                "index": entry.index,
                "pow_ok": entry.pow_ok,
                "binding_ok": entry.binding_ok,
                "kind_ok": entry.kind_ok,
                "error": entry.error,
            }
            for entry in report.chain.entries + report.supers.entries
            if not entry.ok
        ],
    }
    _emit_verify(args, result)
    if not report.integrity_ok:
        return EXIT_INTEGRITY
    if not report.anchoring_ok:
        return EXIT_ANCHOR_GAP
    return EXIT_OK


def _emit_verify(args, result: dict) -> None:
    if args.json:
        print(json.dumps(result, indent=2))
        return
    if "error" in result:
        print(f"verify: FAILED ({result['error']})")
        return
    print(
        f"verify: {result['blocks']} blocks, {result['super_blocks']} super blocks, "
        f"{result['sealed_chains']} sealed chains"
    )
    if result["integrity_ok"]:
        print("integrity: ok")
    else:
        print(f"integrity: FAILED at index {result['first_bad_index']}")
        for failure in result["failures"][:10]:
            print(f"  bad block {failure}")
    if result["anchoring_ok"]:
        print("anchoring: ok")
    else:
        print(f"anchoring: {len(result['unanchored_supers'])} super blocks without receipts "
              f"{result['unanchored_supers'][:10]}")


def _cmd_bench_run(args) -> int:
    scenario = bench_mod.Scenario(tps=args.tps, n=args.n, gas_tier=args.gas_tier, file_count=args.count)
    try:
        result = bench_mod.run_scenario(
            scenario, args.url, args.key, seed=args.seed, count=args.count
        )
    except (bench_mod.ServiceUnreachable, TimeoutError) as exc:
        print(f"logchain bench: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    summaries = bench_mod.summarize(result.records)
    if args.out:
        bench_mod.write_timings_csv(args.out, result.records)
    if args.summary:
        bench_mod.write_summary_csv(args.summary, summaries)
    if args.json:
        print(json.dumps({
            "accepted": result.accepted,
            "rejected": result.rejected,
            "wall_seconds": result.wall_seconds,
            "summary": {kind: vars(stats) for kind, stats in summaries.items()},
        }, indent=2))
    else:
        print(f"accepted {result.accepted}/{result.accepted + result.rejected} "
              f"in {result.wall_seconds:.1f}s")
        for kind, stats in summaries.items():
            print(f"  {kind}: median {stats.median:.4f}s mean {stats.mean:.4f}s "
                  f"max {stats.maximum:.4f}s over {stats.count}")
    return EXIT_OK


def _cmd_bench_grid(args) -> int:
    scenarios = bench_mod.default_grid(args.backend)
    try:
        rows = bench_mod.run_grid(
            scenarios, args.url, args.key, args.out, count=args.count, seed=args.seed
        )
    except (bench_mod.ServiceUnreachable, TimeoutError) as exc:
        print(f"logchain bench: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    if args.json:
        print(json.dumps({"rows": rows}, indent=2))
    else:
        print(f"wrote {len(rows)} scenario rows to {args.out}")
    return EXIT_OK


def _load_series(path: str | None) -> costmodel.GasPriceSeries:
    if path is None:
        return costmodel.load_fixture_series()
    return costmodel.GasPriceSeries.from_csv(path)


def _emit_cost(args, scenario: str, s: int | None, daily_usd: float | None, extra: dict | None = None) -> None:
    if args.json:
        doc = {"scenario": scenario, "s": s, "daily_usd": daily_usd}
        if extra:
            doc.update(extra)
        print(json.dumps(doc))
    elif daily_usd is not None:
        print(f"{daily_usd:.2f}")


def _cmd_cost(args) -> int:
    try:
        if args.cost_command == "private":
            _emit_cost(args, "private", args.s, costmodel.private_daily_cost(args.s))
        elif args.cost_command == "public":
            series = _load_series(args.series)
            _emit_cost(
                args, args.scenario, args.s,
                costmodel.public_daily_cost(args.s, args.scenario, series),
            )
        elif args.cost_command == "breakeven":
            series = _load_series(args.series)
            scenarios = (args.scenario,) if args.scenario else costmodel.SCENARIOS
            results = {sc: costmodel.breakeven(sc, series) for sc in scenarios}
            if args.json:
                print(json.dumps({"breakeven": results}))
            else:
                for sc, value in results.items():
                    print(f"{sc}: {'none' if value is None else value}")
        else:  # curve
            series = _load_series(args.series)
            costmodel.write_cost_curve(args.out, series)
            if args.json:
                print(json.dumps({"out": args.out}))
            else:
                print(f"wrote cost curve to {args.out}")
    except costmodel.InvalidCount as exc:
        print(f"logchain cost: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (costmodel.CostModelError, OSError) as exc:
        print(f"logchain cost: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "serve":
        return _cmd_serve(args)
    if args.command == "verify":
        return _cmd_verify(args)
    if args.command == "bench":
        return _cmd_bench_run(args) if args.bench_command == "run" else _cmd_bench_grid(args)
    return _cmd_cost(args)


if __name__ == "__main__":
    sys.exit(main())
