"""Distributed x-decomposition with a blocked, pipelined x-sweep.

The domain is split along x into P contiguous slabs, one per rank.  The
(y, z, s) lane plane is cut into ``nb`` contiguous blocks.  During forward
elimination rank r waits for block b's frontier from rank r-1, sweeps its
slab for that block, posts the block's last plane to rank r+1 and moves on
to block b+1 at once; backward substitution runs the same way from rank
P-1 down to rank 0.  With nb > 1, downstream ranks start working long
before upstream ranks have finished their slabs.

Ranks talk only through one-directional FIFO channels.  Two transports are
provided: in-memory queues between threads, and stream sockets carrying the
binary frame format of :func:`encode_frame`, usable between threads or
between forked processes.
"""

from __future__ import annotations

import multiprocessing as mp
import queue
import socket
import struct
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .coeffs import AxisCoefficients
from .errors import ConfigurationError, PipelineProtocolError
from .grid import DensityField, DirichletConditions, GridSpec, SubstrateParams, apply_dirichlet
from .solver import (
    BACKWARD,
    FORWARD,
    LaneRange,
    StepCoefficients,
    check_coefficients,
    split_range,
    sweep_x,
    sweep_y,
    sweep_z,
)

DEFAULT_FACTOR = 2
PHASE_CODES = {FORWARD: 0, BACKWARD: 1}
PHASE_NAMES = {v: k for k, v in PHASE_CODES.items()}
_FRAME_HEADER = struct.Struct("<BII")


@dataclass(frozen=True)
class Partition:
    rank: int
    x_start: int
    x_end: int
    P: int

    @property
    def size(self) -> int:
        return self.x_end - self.x_start

    @property
    def is_first(self) -> bool:
        return self.rank == 0

    @property
    def is_last(self) -> bool:
        return self.rank == self.P - 1


def partition_x(nx: int, P: int) -> list[Partition]:
    if not 1 <= P <= nx:
        raise ConfigurationError(f"cannot split {nx} x-planes over {P} ranks")
    return [Partition(r, lo, hi, P) for r, (lo, hi) in enumerate(split_range(nx, P))]


@dataclass(frozen=True)
class BlockPlan:
    nb: int
    lane_ranges: tuple[LaneRange, ...]
    factor: int

    @property
    def lane_count(self) -> int:
        return self.lane_ranges[-1].end


def plan_blocks(lane_count: int, P: int, factor: int = DEFAULT_FACTOR) -> BlockPlan:
    """``factor * P`` lane blocks, clamped to one lane per block."""
    if lane_count < 1 or P < 1 or factor < 1:
        raise ConfigurationError(f"invalid block plan lane_count={lane_count} P={P} factor={factor}")
    nb = min(factor * P, lane_count)
    ranges = tuple(LaneRange(lo, hi) for lo, hi in split_range(lane_count, nb))
    return BlockPlan(nb, ranges, factor)


def plan_with_blocks(lane_count: int, nb: int) -> BlockPlan:
    """Plan with an explicit block count (clamped to ``lane_count``)."""
    return plan_blocks(lane_count, 1, nb)


@dataclass(frozen=True)
class FrontierMessage:
    phase: str
    block_id: int
    values: np.ndarray

    def __post_init__(self):
        if self.phase not in PHASE_CODES:
            raise ValueError(f"unknown phase {self.phase!r}")


def encode_frame(msg: FrontierMessage) -> bytes:
    """u8 phase, u32 block id, u32 value count, then little-endian f64 values."""
    values = np.ascontiguousarray(msg.values, dtype="<f8")
    return _FRAME_HEADER.pack(PHASE_CODES[msg.phase], msg.block_id, values.size) + values.tobytes()


def decode_frame(buf: bytes) -> FrontierMessage:
    phase, block_id, count = _FRAME_HEADER.unpack_from(buf)
    body = memoryview(buf)[_FRAME_HEADER.size :]
    if len(body) != 8 * count:
        raise PipelineProtocolError(f"frame announces {count} values but carries {len(body)} bytes")
    if phase not in PHASE_NAMES:
        raise PipelineProtocolError(f"unknown phase code {phase}")
    return FrontierMessage(PHASE_NAMES[phase], block_id, np.frombuffer(body, dtype="<f8").astype(np.float64))


# --------------------------------------------------------------------------
# transports

class QueueChannel:
    """In-memory one-way FIFO link; ``send`` never blocks."""

    def __init__(self):
        self._q: queue.Queue = queue.Queue()
        self.sent = 0

    def send(self, msg: FrontierMessage) -> None:
        self.sent += 1
        self._q.put(msg)

    def recv(self, timeout: float | None = None) -> FrontierMessage:
        try:
            return self._q.get(timeout=timeout)
        except queue.Empty:
            raise TimeoutError from None

    def close(self) -> None:
        pass


class SocketChannel:
    """One-way link over a connected stream socket using the binary frame format.

    Frames are handed to a writer thread so ``send`` returns immediately,
    like a non-blocking send.  A channel end is either the sending or the
    receiving side of its socket.
    """

    def __init__(self, sock: socket.socket):
        self.sock = sock
        self.sent = 0
        self._outbox: queue.Queue | None = None
        self._writer: threading.Thread | None = None
        self._rbuf = bytearray()

    def send(self, msg: FrontierMessage) -> None:
        if self._writer is None:
            self._outbox = queue.Queue()
            self._writer = threading.Thread(target=self._drain, daemon=True)
            self._writer.start()
        self.sent += 1
        self._outbox.put(encode_frame(msg))

    def _drain(self) -> None:
        while True:
            frame = self._outbox.get()
            if frame is None:
                return
            try:
                self.sock.sendall(frame)
            except OSError:
                return

    def _fill(self, n: int, deadline: float | None) -> None:
        # buffer without consuming, so a timeout never splits a frame
        while len(self._rbuf) < n:
            if deadline is not None:
                left = deadline - time.monotonic()
                if left <= 0:
                    raise TimeoutError
                self.sock.settimeout(left)
            try:
                chunk = self.sock.recv(max(65536, n - len(self._rbuf)))
            except socket.timeout:
                raise TimeoutError from None
            if not chunk:
                raise PipelineProtocolError("peer closed the link mid-step")
            self._rbuf += chunk

    def recv(self, timeout: float | None = None) -> FrontierMessage:
        deadline = None if timeout is None else time.monotonic() + timeout
        self._fill(_FRAME_HEADER.size, deadline)
        size = _FRAME_HEADER.size + 8 * _FRAME_HEADER.unpack_from(self._rbuf)[2]
        self._fill(size, deadline)
        frame = bytes(self._rbuf[:size])
        del self._rbuf[:size]
        return decode_frame(frame)

    def close(self) -> None:
        if self._writer is not None:
            self._outbox.put(None)
            self._writer.join(timeout=5)
        self.sock.close()


@dataclass
class RankLinks:
    """Channels of one rank: receive-from and send-to each neighbor (None at the ends)."""

    from_prev: object = None
    to_prev: object = None
    from_next: object = None
    to_next: object = None

    def channels(self):
        return [c for c in (self.from_prev, self.to_prev, self.from_next, self.to_next) if c is not None]


def make_links(P: int, transport: str = "thread") -> list[RankLinks]:
    """Wire P ranks in a chain: rank r gets a FIFO link in each direction with r+1."""
    links = [RankLinks() for _ in range(P)]
    for r in range(P - 1):
        if transport == "thread":
            fwd, bwd = QueueChannel(), QueueChannel()
            links[r].to_next = links[r + 1].from_prev = fwd
            links[r + 1].to_prev = links[r].from_next = bwd
        elif transport == "socket":
            a, b = socket.socketpair()
            c, d = socket.socketpair()
            links[r].to_next, links[r + 1].from_prev = SocketChannel(a), SocketChannel(b)
            links[r + 1].to_prev, links[r].from_next = SocketChannel(c), SocketChannel(d)
        else:
            raise ConfigurationError(f"unknown transport {transport!r}")
    return links


class DropFrontier:
    """Channel wrapper that silently loses one (phase, block) message. Test hook."""

    def __init__(self, inner, phase: str = FORWARD, block_id: int = 0):
        self.inner = inner
        self.phase = phase
        self.block_id = block_id

    @property
    def sent(self):
        return self.inner.sent

    def send(self, msg: FrontierMessage) -> None:
        if (msg.phase, msg.block_id) == (self.phase, self.block_id):
            return
        self.inner.send(msg)

    def recv(self, timeout=None):
        return self.inner.recv(timeout)

    def close(self):
        self.inner.close()


# --------------------------------------------------------------------------
# per-rank step

@dataclass
class RankStats:
    """Per-rank instrumentation of the pipelined x-sweep."""

    rank: int
    sent: dict = field(default_factory=lambda: {FORWARD: 0, BACKWARD: 0})
    scalars_sent: dict = field(default_factory=lambda: {FORWARD: 0, BACKWARD: 0})
    wait_s: float = 0.0
    busy_s: float = 0.0
    # (phase, block_id, start, end) on the monotonic clock
    events: list = field(default_factory=list)

    def first_start(self, phase: str) -> float:
        return min(e[2] for e in self.events if e[0] == phase)

    def last_end(self, phase: str) -> float:
        return max(e[3] for e in self.events if e[0] == phase)


def _receive(chan, phase: str, block_id: int, size: int, timeout: float, abort: threading.Event | None):
    deadline = time.monotonic() + timeout
    while True:
        if abort is not None and abort.is_set():
            raise PipelineProtocolError("step aborted by another rank")
        left = deadline - time.monotonic()
        if left <= 0:
            raise PipelineProtocolError(f"timed out waiting for {phase} frontier of block {block_id}")
        try:
            msg = chan.recv(timeout=min(left, 0.05))
            break
        except TimeoutError:
            continue
    if (msg.phase, msg.block_id) != (phase, block_id):
        raise PipelineProtocolError(
            f"expected {phase} frontier of block {block_id}, got {msg.phase} block {msg.block_id}"
        )
    if msg.values.shape[0] != size:
        raise PipelineProtocolError(
            f"block {block_id} frontier holds {msg.values.shape[0]} values, local plan expects {size} "
            "(block plans differ between ranks?)"
        )
    return msg.values


def pipelined_x_solve(
    local_field: DensityField,
    coeffs_x: AxisCoefficients,
    partition: Partition,
    plan: BlockPlan,
    links: RankLinks,
    *,
    workers: int = 1,
    backend=None,
    stats: RankStats | None = None,
    recv_timeout: float = 60.0,
    abort: threading.Event | None = None,
) -> None:
    """This rank's share of the blocked forward/backward x-sweep."""
    if local_field.spec.nx != partition.size:
        raise ConfigurationError(f"local field has {local_field.spec.nx} planes, partition {partition.size}")
    if plan.lane_count != local_field.spec.plane_size:
        raise ConfigurationError("block plan does not cover the local lane plane")
    if coeffs_x.n < partition.x_end or (partition.is_last and coeffs_x.n != partition.x_end):
        raise ConfigurationError(f"x coefficients for {coeffs_x.n} planes do not match slab {partition}")
    last = partition.size - 1
    st = stats if stats is not None else RankStats(partition.rank)

    def compute(phase, lanes, incoming):
        # fan a block's lanes out over workers; the frontier is gathered after the join
        chunks = split_range(len(lanes), workers)
        if len(chunks) == 1:
            return sweep_x(local_field, coeffs_x, lanes, 0, last, incoming, phase,
                           x_offset=partition.x_start, backend=backend)
        parts = [None] * len(chunks)

        def run(i, lo, hi):
            sub = LaneRange(lanes.start + lo, lanes.start + hi)
            seed = None if incoming is None else incoming[lo:hi]
            parts[i] = sweep_x(local_field, coeffs_x, sub, 0, last, seed, phase,
                               x_offset=partition.x_start, backend=backend)

        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            for fut in [pool.submit(run, i, lo, hi) for i, (lo, hi) in enumerate(chunks)]:
                fut.result()
        return np.concatenate(parts)

    for phase, src, dst in (
        (FORWARD, links.from_prev, links.to_next),
        (BACKWARD, links.from_next, links.to_prev),
    ):
        for b, lanes in enumerate(plan.lane_ranges):
            incoming = None
            if src is not None:
                t0 = time.monotonic()
                incoming = _receive(src, phase, b, len(lanes), recv_timeout, abort)
                st.wait_s += time.monotonic() - t0
            t0 = time.monotonic()
            frontier = compute(phase, lanes, incoming)
            t1 = time.monotonic()
            st.busy_s += t1 - t0
            st.events.append((phase, b, t0, t1))
            if dst is not None:
                dst.send(FrontierMessage(phase, b, frontier))
                st.sent[phase] += 1
                st.scalars_sent[phase] += frontier.shape[0]


def pipelined_step(
    local_field: DensityField,
    coeffs: Sequence[AxisCoefficients],
    conds: DirichletConditions | None,
    partition: Partition,
    plan: BlockPlan,
    links: RankLinks,
    *,
    workers: int = 1,
    backend=None,
    stats: RankStats | None = None,
    recv_timeout: float = 60.0,
    abort: threading.Event | None = None,
) -> None:
    """One time step of a single rank. ``conds`` are in local voxel indices."""
    cx, cy, cz = coeffs
    check_coefficients(local_field.spec, coeffs, global_nx=cx.n)
    if conds is None:
        conds = DirichletConditions.empty(local_field.spec)
    apply_dirichlet(local_field, conds)
    pipelined_x_solve(local_field, cx, partition, plan, links, workers=workers, backend=backend,
                      stats=stats, recv_timeout=recv_timeout, abort=abort)
    apply_dirichlet(local_field, conds)
    sweep_y(local_field, cy, workers=workers, backend=backend)
    apply_dirichlet(local_field, conds)
    sweep_z(local_field, cz, workers=workers, backend=backend)
    apply_dirichlet(local_field, conds)


# --------------------------------------------------------------------------
# simulated multi-rank driver

class RankGroup:
    """P simulated ranks, each a thread holding its own x-slab.

    Each rank replicates the global x coefficients and its own y/z
    coefficients; slabs persist across steps so a run scatters once and
    gathers once.
    """

    def __init__(
        self,
        spec: GridSpec,
        substrates: SubstrateParams,
        P: int = 1,
        factor: int = DEFAULT_FACTOR,
        conds: DirichletConditions | None = None,
        *,
        nb: int | None = None,
        workers: int = 1,
        backend=None,
        transport: str = "thread",
        recv_timeout: float = 60.0,
    ):
        self.spec = spec
        self.partitions = partition_x(spec.nx, P)
        self.plan = plan_with_blocks(spec.plane_size, nb) if nb is not None else plan_blocks(spec.plane_size, P, factor)
        self.coeffs = [StepCoefficients.build(spec, substrates) for _ in range(P)]
        conds = conds if conds is not None else DirichletConditions.empty(spec)
        self.conds = [conds.restrict(p.x_start, p.x_end) for p in self.partitions]
        self.fields = [DensityField(spec.slab(p.x_start, p.x_end)) for p in self.partitions]
        self.links = make_links(P, transport)
        self.stats = [RankStats(p.rank) for p in self.partitions]
        self.workers = workers
        self.backend = backend
        self.recv_timeout = recv_timeout
        self._pool = ThreadPoolExecutor(max_workers=P, thread_name_prefix="rank")

    @property
    def P(self) -> int:
        return len(self.partitions)

    def scatter(self, field: DensityField) -> None:
        if field.spec.shape != self.spec.shape:
            raise ConfigurationError(f"field shape {field.spec.shape} does not match {self.spec.shape}")
        L = self.spec.plane_size
        for p, local in zip(self.partitions, self.fields):
            local.data[:] = field.data[p.x_start * L : p.x_end * L]

    def gather(self) -> DensityField:
        return DensityField(self.spec, np.concatenate([f.data for f in self.fields]))

    def reset_stats(self) -> None:
        self.stats = [RankStats(p.rank) for p in self.partitions]

    def step(self) -> None:
        abort = threading.Event()

        def run(r):
            try:
                pipelined_step(
                    self.fields[r], self.coeffs[r], self.conds[r], self.partitions[r], self.plan,
                    self.links[r], workers=self.workers, backend=self.backend, stats=self.stats[r],
                    recv_timeout=self.recv_timeout, abort=abort,
                )
            except BaseException:
                abort.set()
                raise

        futures = [self._pool.submit(run, r) for r in range(self.P)]
        errors = []
        for fut in futures:
            try:
                fut.result()
            except BaseException as exc:
                errors.append(exc)
        if errors:
            # the root cause is the first error that is not a secondary abort
            primary = [e for e in errors if "aborted by another rank" not in str(e)]
            raise (primary or errors)[0]

    def close(self) -> None:
        self._pool.shutdown(wait=True)
        for lk in self.links:
            for ch in lk.channels():
                ch.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def run_pipelined(
    field: DensityField,
    substrates: SubstrateParams,
    P: int,
    *,
    nb: int | None = None,
    factor: int = DEFAULT_FACTOR,
    conds: DirichletConditions | None = None,
    steps: int = 1,
    **kwargs,
) -> tuple[DensityField, list[RankStats]]:
    """Scatter ``field`` over P thread ranks, run ``steps`` steps, gather."""
    with RankGroup(field.spec, substrates, P, factor, conds, nb=nb, **kwargs) as group:
        group.scatter(field)
        for _ in range(steps):
            group.step()
        return group.gather(), group.stats


def _process_rank(r, slab, coeffs, conds, part, plan, links, recv_timeout, conn):
    try:
        local = DensityField(slab[0], slab[1])
        pipelined_step(local, coeffs, conds, part, plan, links, recv_timeout=recv_timeout)
        conn.send(("ok", local.data))
    except BaseException as exc:  # report to the parent instead of dying silently
        conn.send(("error", repr(exc)))
    finally:
        for ch in links.channels():
            ch.close()
        conn.close()


def run_multiprocess_step(
    field: DensityField,
    substrates: SubstrateParams,
    P: int,
    *,
    nb: int | None = None,
    factor: int = DEFAULT_FACTOR,
    conds: DirichletConditions | None = None,
    recv_timeout: float = 60.0,
) -> DensityField:
    """One pipelined step with every rank in its own forked OS process.

    Ranks exchange frontiers over socket pairs in the binary frame format;
    rank ids follow launch order.  POSIX only.
    """
    spec = field.spec
    parts = partition_x(spec.nx, P)
    plan = plan_with_blocks(spec.plane_size, nb) if nb is not None else plan_blocks(spec.plane_size, P, factor)
    conds = conds if conds is not None else DirichletConditions.empty(spec)
    links = make_links(P, "socket")
    ctx = mp.get_context("fork")
    L = spec.plane_size
    procs, pipes = [], []
    for r, p in enumerate(parts):
        parent, child = ctx.Pipe(duplex=False)
        slab = (spec.slab(p.x_start, p.x_end), field.data[p.x_start * L : p.x_end * L].copy())
        proc = ctx.Process(
            target=_process_rank,
            args=(r, slab, StepCoefficients.build(spec, substrates), conds.restrict(p.x_start, p.x_end),
                  p, plan, links[r], recv_timeout, child),
        )
        proc.start()
        child.close()
        procs.append(proc)
        pipes.append(parent)
    for lk in links:
        for ch in lk.channels():
            ch.sock.close()
    results = []
    for r, (proc, pipe) in enumerate(zip(procs, pipes)):
        status, payload = pipe.recv()
        proc.join()
        if status != "ok":
            raise PipelineProtocolError(f"rank {r} failed: {payload}")
        results.append(payload)
    return DensityField(spec, np.concatenate(results))
