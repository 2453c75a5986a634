"""Ring-schedule execution over simulated devices, with work accounting.

Runs the N-round rotation: every device keeps its query block resident,
contracts it against the key/value block it currently holds, then forwards
that block to its ring successor and receives from its predecessor. The
contiguous and striped layouts share the identical schedule; they differ
only in which mask a (query block, key block) pair produces.

Two executors produce bit-identical results: a single-threaded round-robin
and one worker thread per device connected by ordered point-to-point
queues. Each device's floating-point accumulation order is fixed (rounds
in order, tiles row-major within a round), so thread interleaving cannot
perturb outputs or counters.
"""

from __future__ import annotations

import enum
import math
import queue
import threading
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .attention import (
    SoftmaxAccumulator,
    TileClass,
    accumulate_tile,
    classify_tiles,
    finalize,
    get_mask_ring,
    get_mask_striped,
    oracle_causal_attention,
    tile_census,
)
from .layout import Layout, PermutedBatch, Scheme

_CHANNEL_TIMEOUT_S = 30.0


class Algo(enum.Enum):
    RING = "ring"
    STRIPED = "striped"


@dataclass
class SimConfig:
    algo: Algo
    n_devices: int
    n_seq: int
    d_head: int
    tile_q: int
    tile_k: int
    seed: int = 0
    precision: str = "double"  # "double" | "single"
    scale: bool = False        # apply 1/sqrt(d_head) to scores
    check_oracle: bool = False
    executor: str = "serial"   # "serial" | "threads"

    def __post_init__(self):
        if isinstance(self.algo, str):
            self.algo = Algo(self.algo)
        if self.n_devices < 2:
            raise ValueError(f"need at least 2 devices, got {self.n_devices}")
        if self.n_seq < self.n_devices or self.n_seq % self.n_devices != 0:
            raise ValueError(
                f"{self.n_devices} devices must evenly divide sequence length {self.n_seq}"
            )
        if self.d_head < 1:
            raise ValueError(f"d_head must be positive, got {self.d_head}")
        c = self.block_size
        if self.tile_q < 1 or c % self.tile_q != 0:
            raise ValueError(f"tile_q={self.tile_q} must divide the block size {c}")
        if self.tile_k < 1 or c % self.tile_k != 0:
            raise ValueError(f"tile_k={self.tile_k} must divide the block size {c}")
        if self.precision not in ("double", "single"):
            raise ValueError(f"precision must be 'double' or 'single', got {self.precision!r}")
        if self.executor not in ("serial", "threads"):
            raise ValueError(f"executor must be 'serial' or 'threads', got {self.executor!r}")

    @property
    def block_size(self) -> int:
        return self.n_seq // self.n_devices

    @property
    def dtype(self):
        return np.float64 if self.precision == "double" else np.float32


@dataclass(frozen=True)
class RoundStats:
    """Work counters for one device in one round."""

    round: int
    block_index: int
    tiles_total: int
    tiles_skipped: int
    tiles_partial: int
    tiles_full: int
    interactions_computed: int  # pairs inside tiles that were actually computed
    interactions_required: int  # pairs the causal structure actually needs


@dataclass
class WorkStats:
    device: int
    rounds: list[RoundStats] = field(default_factory=list)


@dataclass
class DeviceState:
    """One simulated device: resident queries plus the K/V block in hand.

    At the start of round i the held block index is (device - i) mod N.
    """

    device: int
    q_block: np.ndarray
    held_index: int
    held_k: np.ndarray
    held_v: np.ndarray
    acc: SoftmaxAccumulator
    stats: WorkStats


def make_layout(config: SimConfig) -> Layout:
    scheme = Scheme.CONTIGUOUS if config.algo is Algo.RING else Scheme.STRIPED
    return Layout(scheme, config.n_seq, config.n_devices)


def random_qkv(n_seq: int, d_head: int, seed: int, dtype=np.float64):
    rng = np.random.default_rng(seed)
    return tuple(rng.standard_normal((n_seq, d_head), dtype=dtype) for _ in range(3))


def _block_mask(algo: Algo, j: int, k: int, c: int, n_devices: int):
    if algo is Algo.RING:
        return get_mask_ring(j, k, c, n_devices=n_devices)
    return get_mask_striped(j, k, c, n_devices=n_devices)


def _process_round(config: SimConfig, dev: DeviceState, round_i: int) -> None:
    c = config.block_size
    mask = _block_mask(config.algo, dev.device, dev.held_index, c, config.n_devices)
    grid = classify_tiles(mask, config.tile_q, config.tile_k)
    area = config.tile_q * config.tile_k
    n_full = n_partial = n_skip = 0
    computed = required = 0
    for ti, grid_row in enumerate(grid):
        r0 = ti * config.tile_q
        r1 = r0 + config.tile_q
        for tj, cls in enumerate(grid_row):
            if cls is TileClass.SKIP:
                n_skip += 1
                continue
            c0 = tj * config.tile_k
            c1 = c0 + config.tile_k
            required += mask.count_allowed(r0, r1, c0, c1)
            computed += area  # partial tiles are charged the whole tile
            if cls is TileClass.PARTIAL:
                n_partial += 1
                allowed = mask.allowed_block(r0, r1, c0, c1)
            else:
                n_full += 1
                allowed = None
            accumulate_tile(
                dev.acc.rows(r0, r1),
                dev.q_block[r0:r1],
                dev.held_k[c0:c1],
                dev.held_v[c0:c1],
                allowed,
            )
    dev.stats.rounds.append(
        RoundStats(
            round=round_i,
            block_index=dev.held_index,
            tiles_total=len(grid) * len(grid[0]),
            tiles_skipped=n_skip,
            tiles_partial=n_partial,
            tiles_full=n_full,
            interactions_computed=computed,
            interactions_required=required,
        )
    )


def _run_serial(config: SimConfig, devices: list[DeviceState]) -> list[np.ndarray]:
    n = config.n_devices
    for i in range(n):
        for dev in devices:
            _process_round(config, dev, i)
        # simultaneous rotation: block held by j moves to j+1
        held = [(d.held_index, d.held_k, d.held_v) for d in devices]
        for j, dev in enumerate(devices):
            dev.held_index, dev.held_k, dev.held_v = held[(j - 1) % n]
    return [finalize(dev.acc) for dev in devices]


def _run_threads(config: SimConfig, devices: list[DeviceState]) -> list[np.ndarray]:
    n = config.n_devices
    inboxes = [queue.Queue() for _ in range(n)]  # inboxes[j]: written only by j-1
    outputs: list[np.ndarray | None] = [None] * n
    errors: list[BaseException] = []

    def worker(dev: DeviceState) -> None:
        try:
            for i in range(n):
                _process_round(config, dev, i)
                inboxes[(dev.device + 1) % n].put((dev.held_index, dev.held_k, dev.held_v))
                try:
                    dev.held_index, dev.held_k, dev.held_v = inboxes[dev.device].get(
                        timeout=_CHANNEL_TIMEOUT_S
                    )
                except queue.Empty:
                    raise RuntimeError(
                        f"ring channel stalled: device {dev.device} got nothing in round {i}"
                    ) from None
            outputs[dev.device] = finalize(dev.acc)
        except BaseException as exc:  # propagate to the caller after join
            errors.append(exc)

    threads = [
        threading.Thread(target=worker, args=(dev,), name=f"device-{dev.device}", daemon=True)
        for dev in devices
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        raise errors[0]
    return outputs


def run_schedule(config: SimConfig, batch: PermutedBatch):
    """Execute the N-round rotation.

    Returns (per-device outputs, per-device WorkStats), outputs still in
    the layout's local order.
    """
    n, c = config.n_devices, config.block_size
    expected_scheme = Scheme.CONTIGUOUS if config.algo is Algo.RING else Scheme.STRIPED
    if batch.layout.scheme is not expected_scheme:
        raise ValueError(
            f"batch is partitioned {batch.layout.scheme.value}, "
            f"but algo {config.algo.value} needs {expected_scheme.value}"
        )
    if batch.layout.n_seq != config.n_seq or batch.layout.n_devices != n:
        raise ValueError("batch layout does not match the simulation config")
    if len(batch.shards) != n:
        raise ValueError(f"batch has {len(batch.shards)} shards, config wants {n}")
    for d, sh in enumerate(batch.shards):
        if sh.q.shape != (c, config.d_head) or sh.k.shape != (c, config.d_head):
            raise ValueError(
                f"device {d} Q/K shard shape mismatch (want block {c} x d_head {config.d_head})"
            )
        if sh.v.shape[0] != c:
            raise ValueError(f"device {d} V shard must have {c} rows, got {sh.v.shape[0]}")
    devices = [
        DeviceState(
            device=j,
            q_block=sh.q,
            held_index=j,
            held_k=sh.k,
            held_v=sh.v,
            acc=SoftmaxAccumulator.fresh(c, sh.v.shape[1], config.dtype),
            stats=WorkStats(device=j),
        )
        for j, sh in enumerate(batch.shards)
    ]
    if config.executor == "threads":
        outputs = _run_threads(config, devices)
    else:
        outputs = _run_serial(config, devices)
    return outputs, [dev.stats for dev in devices]


def schedule_work_stats(
    algo: Algo, n_devices: int, block_size: int, tile_q: int, tile_k: int
) -> list[WorkStats]:
    """Closed-form per-round work counters, no numerics.

    Produces exactly what ``run_schedule`` records, via ``tile_census``
    instead of per-tile enumeration, so huge blocks (e.g. 4096 with 1x1
    tiles) are accounted in milliseconds.
    """
    algo = Algo(algo) if isinstance(algo, str) else algo
    if n_devices < 2:
        raise ValueError(f"need at least 2 devices, got {n_devices}")
    if tile_q < 1 or block_size % tile_q or tile_k < 1 or block_size % tile_k:
        raise ValueError(f"tiles {tile_q}x{tile_k} must divide the block size {block_size}")
    area = tile_q * tile_k
    out = []
    for j in range(n_devices):
        ws = WorkStats(device=j)
        for i in range(n_devices):
            k = (j - i) % n_devices
            mask = _block_mask(algo, j, k, block_size, n_devices)
            census = tile_census(mask, tile_q, tile_k)
            ws.rounds.append(
                RoundStats(
                    round=i,
                    block_index=k,
                    tiles_total=census.n_total,
                    tiles_skipped=census.n_skip,
                    tiles_partial=census.n_partial,
                    tiles_full=census.n_full,
                    interactions_computed=(census.n_full + census.n_partial) * area,
                    interactions_required=mask.count_allowed(),
                )
            )
        out.append(ws)
    return out


def round_critical_path(stats: Sequence[WorkStats], round_i: int) -> int:
    """Max interactions computed by any device in a round (its latency proxy)."""
    if not stats:
        raise ValueError("no per-device stats")
    if not 0 <= round_i < len(stats[0].rounds):
        raise ValueError(f"round {round_i} out of range")
    return max(ws.rounds[round_i].interactions_computed for ws in stats)


def simulated_speedup(ring_stats: Sequence[WorkStats], striped_stats: Sequence[WorkStats]) -> float:
    """Critical-path sum of the contiguous run over the striped run."""
    for name, stats in (("ring", ring_stats), ("striped", striped_stats)):
        if not stats or any(len(ws.rounds) != len(stats) for ws in stats):
            raise ValueError(f"{name} stats are incomplete")
    if len(ring_stats) != len(striped_stats):
        raise ValueError(
            f"device counts differ: {len(ring_stats)} vs {len(striped_stats)}"
        )
    if ring_stats[0].rounds[0].tiles_total != striped_stats[0].rounds[0].tiles_total:
        raise ValueError("tiling mismatch between the two runs")
    rounds = len(ring_stats)
    ring_total = sum(round_critical_path(ring_stats, i) for i in range(rounds))
    striped_total = sum(round_critical_path(striped_stats, i) for i in range(rounds))
    return ring_total / striped_total


@dataclass
class SimRun:
    """One end-to-end simulation: inputs, per-device results, reassembled output."""

    config: SimConfig
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    layout: Layout
    outputs: list[np.ndarray]
    stats: list[WorkStats]
    output: np.ndarray  # rows back in original token order


def simulate(config: SimConfig, inputs=None) -> SimRun:
    """Generate (or take) Q/K/V, partition, run the schedule, reassemble."""
    if inputs is None:
        q, k, v = random_qkv(config.n_seq, config.d_head, config.seed, config.dtype)
    else:
        q, k, v = (np.asarray(x) for x in inputs)
    layout = make_layout(config)
    q_in = q * q.dtype.type(1.0 / math.sqrt(config.d_head)) if config.scale else q
    batch = layout.partition(q_in, k, v)
    outputs, stats = run_schedule(config, batch)
    return SimRun(config, q, k, v, layout, outputs, stats, layout.gather(outputs))


def oracle_error(run: SimRun) -> float:
    """Max abs difference between the reassembled output and the dense reference."""
    ref = oracle_causal_attention(run.q, run.k, run.v, scale=run.config.scale)
    return float(np.max(np.abs(run.output.astype(np.float64) - ref.astype(np.float64))))
