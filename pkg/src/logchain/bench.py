"""Workload driver and timing harness for a running logchain service.

Drives /submit_digest at a fixed offered rate using absolute per-request
deadlines (start + i/tps) rather than sleep-after-response, so the offered
rate stays honest under response-latency jitter. After the run it waits for
the ingestion and anchoring queues to drain, then pulls the service's timing
records: mining durations for the internal block kinds and anchoring
latencies for super blocks.
"""

from __future__ import annotations

import csv
import queue
import random
import statistics
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import httpx

DEFAULT_TPS_VALUES = (0.1, 1.0, 10.0, 100.0)
DEFAULT_N_VALUES = (1, 10, 100)
DEFAULT_GAS_TIERS = (6, 9, 20)

# service block kinds -> report labels
KIND_LABELS = {"AGB": "AGB", "RGB": "RGB", "DATA": "DB", "TERMINAL": "TB", "SUPER": "SB"}
INTERNAL_KINDS = ("AGB", "DB", "RGB", "TB")


class ServiceUnreachable(Exception):
    pass


@dataclass(frozen=True)
class Scenario:
    """One cell of the experiment grid."""

    tps: float
    n: int
    gas_tier: int | None = None
    file_count: int | None = None  # None -> 200, or 1000 once n reaches 100
    payload_bytes: int = 64
    difficulty: str = "000"

    def __post_init__(self) -> None:
        if self.tps <= 0:
            raise ValueError("tps must be positive")
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.payload_bytes != 64:
            raise ValueError("digest payloads are 64 bytes")

    @property
    def resolved_file_count(self) -> int:
        if self.file_count is not None:
            return self.file_count
        return 1000 if self.n >= 100 else 200


@dataclass(frozen=True)
class TimingRecord:
    kind: str
    seconds: float


@dataclass
class BenchResult:
    scenario: Scenario
    records: list[TimingRecord]
    accepted: int
    rejected: int
    wall_seconds: float
    status_counts: dict[int, int] = field(default_factory=dict)


@dataclass(frozen=True)
class SummaryStats:
    count: int
    minimum: float
    first_quartile: float
    median: float
    mean: float
    third_quartile: float
    maximum: float


def summarize(records: list[TimingRecord]) -> dict[str, SummaryStats]:
    """Six-number summary per block kind (linear-interpolation quartiles)."""
    by_kind: dict[str, list[float]] = {}
    for record in records:
        by_kind.setdefault(record.kind, []).append(record.seconds)
    result = {}
    for kind, values in sorted(by_kind.items()):
        if len(values) >= 2:
            q1, median, q3 = statistics.quantiles(values, n=4, method="inclusive")
        else:
            q1 = median = q3 = values[0]
        result[kind] = SummaryStats(
            count=len(values),
            minimum=min(values),
            first_quartile=q1,
            median=median,
            mean=statistics.fmean(values),
            third_quartile=q3,
            maximum=max(values),
        )
    return result


def default_grid(backend_kind: str) -> list[Scenario]:
    """The full experiment grid: tps x n x gas tier for the gas-priced backend
    (36 scenarios), tps x n for the private one (12)."""
    tiers = DEFAULT_GAS_TIERS if backend_kind == "public" else (None,)
    return [
        Scenario(tps=tps, n=n, gas_tier=tier)
        for tps in DEFAULT_TPS_VALUES
        for n in DEFAULT_N_VALUES
        for tier in tiers
    ]


def _sleep_until(deadline: float) -> None:
    remaining = deadline - time.monotonic()
    if remaining > 0:
        time.sleep(remaining)


def run_scenario(
    scenario: Scenario,
    base_url: str,
    api_key: str,
    *,
    seed: int = 1,
    workers: int = 32,
    request_timeout: float = 120.0,
    drain_timeout: float = 120.0,
    count: int | None = None,
) -> BenchResult:
    """Submit `count` (default: the scenario's file count) digests at scenario.tps.

    The service must already be running with a matching configuration
    (difficulty, chain capacity, backend gas price); this driver only offers
    load and collects timings.
    """
    total = scenario.resolved_file_count if count is None else count
    rng = random.Random(seed)
    digests = [f"{rng.getrandbits(256):064x}" for _ in range(total)]

    client = httpx.Client(
        base_url=base_url,
        headers={"X-API-Key": api_key},
        timeout=httpx.Timeout(request_timeout),
    )
    try:
        try:
            response = client.get("/healthz")
            response.raise_for_status()
        except httpx.HTTPError as exc:
            raise ServiceUnreachable(f"{base_url}: {exc}") from exc
        client.delete("/timings")

        pending: queue.Queue[int] = queue.Queue()
        for i in range(total):
            pending.put(i)
        status_counts: dict[int, int] = {}
        counts_lock = threading.Lock()
        start = time.monotonic()

        def worker() -> None:
            while True:
                try:
                    i = pending.get_nowait()
                except queue.Empty:
                    return
                _sleep_until(start + i / scenario.tps)
                try:
                    status = client.post("/submit_digest", json={"digest": digests[i]}).status_code
                except httpx.HTTPError:
                    status = -1
                with counts_lock:
                    status_counts[status] = status_counts.get(status, 0) + 1

        threads = [threading.Thread(target=worker, daemon=True) for _ in range(min(workers, total))]
        for thread in threads:
            thread.start()
        for thread in threads:
            thread.join()
        wall = time.monotonic() - start

        _wait_for_drain(client, deadline=time.monotonic() + drain_timeout)
        payload = client.get("/timings").json()
        records = [
            TimingRecord(kind=KIND_LABELS.get(r["kind"], r["kind"]), seconds=r["seconds"])
            for r in payload.get("records", ())
        ]
    finally:
        client.close()

    accepted = status_counts.get(200, 0)
    rejected = total - accepted
    return BenchResult(
        scenario=scenario,
        records=records,
        accepted=accepted,
        rejected=rejected,
        wall_seconds=wall,
        status_counts=status_counts,
    )


def _wait_for_drain(client: httpx.Client, deadline: float) -> None:
    while time.monotonic() < deadline:
        stats = client.get("/stats").json()
        if (
            stats.get("ingestion_backlog", 1) == 0
            and stats.get("pending_anchors", 1) == 0
            and stats.get("receipts", 0) >= stats.get("super_blocks", 0)
        ):
            return
        time.sleep(0.05)
    raise TimeoutError("service did not drain its queues in time")


def write_timings_csv(path: str | Path, records: list[TimingRecord]) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["kind", "seconds"])
        for record in records:
            writer.writerow([record.kind, f"{record.seconds:.6f}"])


def write_summary_csv(path: str | Path, summaries: dict[str, SummaryStats]) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["kind", "count", "min", "q1", "median", "mean", "q3", "max"])
        for kind, stats in summaries.items():
            writer.writerow(
                [
                    kind,
                    stats.count,
                    f"{stats.minimum:.6f}",
                    f"{stats.first_quartile:.6f}",
                    f"{stats.median:.6f}",
                    f"{stats.mean:.6f}",
                    f"{stats.third_quartile:.6f}",
                    f"{stats.maximum:.6f}",
                ]
            )


GRID_COLUMNS = [
    "tps", "n", "gas_tier", "file_count", "accepted", "rejected",
    "internal_median_s", "sb_min", "sb_q1", "sb_median", "sb_mean", "sb_q3", "sb_max",
]


def grid_row(result: BenchResult) -> dict:
    summaries = summarize(result.records)
    internal = [r.seconds for r in result.records if r.kind in INTERNAL_KINDS]
    sb = summaries.get("SB")
    row: dict = {
        "tps": result.scenario.tps,
        "n": result.scenario.n,
        "gas_tier": "" if result.scenario.gas_tier is None else result.scenario.gas_tier,
        "file_count": result.scenario.resolved_file_count,
        "accepted": result.accepted,
        "rejected": result.rejected,
        "internal_median_s": f"{statistics.median(internal):.6f}" if internal else "",
    }
    for name in ("min", "q1", "median", "mean", "q3", "max"):
        row[f"sb_{name}"] = ""
    if sb is not None:
        row.update(
            sb_min=f"{sb.minimum:.6f}",
            sb_q1=f"{sb.first_quartile:.6f}",
            sb_median=f"{sb.median:.6f}",
            sb_mean=f"{sb.mean:.6f}",
            sb_q3=f"{sb.third_quartile:.6f}",
            sb_max=f"{sb.maximum:.6f}",
        )
    return row


def run_grid(
    scenarios: list[Scenario],
    base_url: str,
    api_key: str,
    out_path: str | Path,
    *,
    count: int | None = None,
    seed: int = 1,
) -> list[dict]:
    """One summary row per scenario, written as grid.csv."""
    rows = []
    for scenario in scenarios:
        result = run_scenario(scenario, base_url, api_key, seed=seed, count=count)
        rows.append(grid_row(result))
    with open(out_path, "w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=GRID_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
    return rows
