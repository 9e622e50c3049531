import struct
import sys
import threading
import time

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lodfvm import kernels
from lodfvm.errors import ConfigurationError, PipelineProtocolError
from lodfvm.grid import DensityField, DirichletConditions, GridSpec, SubstrateParams
from lodfvm.pipeline import (
    DropFrontier,
    FrontierMessage,
    QueueChannel,
    RankGroup,
    decode_frame,
    encode_frame,
    make_links,
    partition_x,
    plan_blocks,
    plan_with_blocks,
    run_multiprocess_step,
    run_pipelined,
)
from lodfvm.solver import BACKWARD, FORWARD, StepCoefficients, step

SUBS2 = SubstrateParams([1e5, 2e3], [0.1, 0.0])


def serial(field, subs, steps=1, conds=None, backend=None):
    ref = field.copy()
    c = StepCoefficients.build(field.spec, subs)
    for _ in range(steps):
        step(ref, c, conds, backend=backend)
    return ref


@pytest.mark.parametrize(
    "nx, P, expected",
    [(8, 2, [(0, 4), (4, 8)]), (10, 3, [(0, 4), (4, 7), (7, 10)]), (5, 5, [(i, i + 1) for i in range(5)])],
)
def test_partition_examples(nx, P, expected):
    parts = partition_x(nx, P)
    assert [(p.x_start, p.x_end) for p in parts] == expected
    assert parts[0].is_first and parts[-1].is_last


@pytest.mark.parametrize("nx, P", [(4, 5), (4, 0)])
def test_partition_rejects(nx, P):
    with pytest.raises(ConfigurationError):
        partition_x(nx, P)


@given(st.integers(1, 200), st.integers(1, 200))
def test_partition_covers(nx, P):
    if P > nx:
        return
    parts = partition_x(nx, P)
    sizes = [p.size for p in parts]
    assert parts[0].x_start == 0 and parts[-1].x_end == nx
    assert all(a.x_end == b.x_start for a, b in zip(parts, parts[1:]))
    assert max(sizes) - min(sizes) <= 1


@pytest.mark.parametrize(
    "lanes, P, factor, nb, first",
    [(2500, 2, 2, 4, (0, 625)), (3, 4, 2, 3, (0, 1)), (10, 1, 1, 1, (0, 10)), (7, 2, 2, 4, (0, 2))],
)
def test_plan_examples(lanes, P, factor, nb, first):
    plan = plan_blocks(lanes, P, factor)
    assert plan.nb == nb
    r = plan.lane_ranges[0]
    assert (r.start, r.end) == first
    assert plan.lane_count == lanes


def test_plan_with_blocks():
    assert plan_with_blocks(100, 16).nb == 16
    assert plan_with_blocks(5, 16).nb == 5
    with pytest.raises(ConfigurationError):
        plan_blocks(10, 2, 0)


def test_frame_bytes():
    msg = FrontierMessage(BACKWARD, 7, np.array([1.5, -2.0]))
    raw = encode_frame(msg)
    assert raw[:9] == struct.pack("<BII", 1, 7, 2)
    assert raw[9:] == struct.pack("<2d", 1.5, -2.0)
    back = decode_frame(raw)
    assert (back.phase, back.block_id) == (BACKWARD, 7)
    np.testing.assert_array_equal(back.values, msg.values)


def test_frame_errors():
    raw = encode_frame(FrontierMessage(FORWARD, 0, np.zeros(3)))
    with pytest.raises(PipelineProtocolError):
        decode_frame(raw[:-1])
    with pytest.raises(PipelineProtocolError):
        decode_frame(b"\x05" + raw[1:])
    with pytest.raises(ValueError):
        FrontierMessage("sideways", 0, np.zeros(1))


@pytest.mark.parametrize("transport", ["thread", "socket"])
def test_channel_roundtrip(transport):
    links = make_links(2, transport)
    try:
        vals = np.arange(1000, dtype=float)
        links[0].to_next.send(FrontierMessage(FORWARD, 3, vals))
        got = links[1].from_prev.recv(timeout=5.0)
        assert got.block_id == 3
        np.testing.assert_array_equal(got.values, vals)
        with pytest.raises(TimeoutError):
            links[1].from_prev.recv(timeout=0.01)
    finally:
        for lk in links:
            for ch in lk.channels():
                ch.close()


@pytest.mark.parametrize("P", [1, 2, 3, 4, 8])
@pytest.mark.parametrize("nb", [1, 2, 4, 16])
def test_pipeline_equals_serial(P, nb, backend, rng):
    spec = GridSpec.from_counts(16, 8, 8, 2, dt=0.01)
    field = DensityField(spec, rng.random(spec.n_values))
    ref = serial(field, SUBS2, steps=3, backend=backend)
    out, _ = run_pipelined(field, SUBS2, P, nb=nb, steps=3, backend=backend)
    np.testing.assert_array_equal(out.data, ref.data)


def test_pipeline_socket_transport(rng):
    spec = GridSpec.from_counts(9, 5, 4, 2, dt=0.01)
    field = DensityField(spec, rng.random(spec.n_values))
    out, _ = run_pipelined(field, SUBS2, 3, nb=5, steps=2, transport="socket")
    np.testing.assert_array_equal(out.data, serial(field, SUBS2, 2).data)


@pytest.mark.skipif(sys.platform == "win32", reason="needs fork")
def test_pipeline_processes(rng):
    spec = GridSpec.from_counts(8, 6, 4, 2, dt=0.01)
    field = DensityField(spec, rng.random(spec.n_values))
    out = run_multiprocess_step(field, SUBS2, 4, nb=3, recv_timeout=20.0)
    np.testing.assert_array_equal(out.data, serial(field, SUBS2).data)


def test_pipeline_with_workers(rng):
    spec = GridSpec.from_counts(8, 6, 5, 2, dt=0.01)
    field = DensityField(spec, rng.random(spec.n_values))
    out, _ = run_pipelined(field, SUBS2, 2, nb=3, steps=2, workers=3)
    np.testing.assert_array_equal(out.data, serial(field, SUBS2, 2).data)


def test_pipeline_dirichlet(rng):
    spec = GridSpec.from_counts(10, 4, 4, 2, dt=0.01)
    conds = DirichletConditions.from_entries(
        spec, {5 * 16 + 5: ((38.0, 1.0), (True, False)), 3: ((0.0, 2.0), (False, True))}
    )
    field = DensityField(spec, rng.random(spec.n_values))
    out, _ = run_pipelined(field, SUBS2, 4, nb=6, steps=4, conds=conds)
    np.testing.assert_array_equal(out.data, serial(field, SUBS2, 4, conds).data)


@pytest.mark.parametrize("P, nb", [(2, 4), (4, 8), (3, 1)])
def test_message_economy(P, nb):
    spec = GridSpec.from_counts(12, 4, 4, 2, dt=0.01)
    _, stats = run_pipelined(DensityField.filled(spec, 1.0), SUBS2, P, nb=nb)
    L = spec.plane_size
    for r, st_ in enumerate(stats):
        fwd = nb if r < P - 1 else 0
        bwd = nb if r > 0 else 0
        assert st_.sent == {FORWARD: fwd, BACKWARD: bwd}
        assert st_.scalars_sent[FORWARD] == (L if fwd else 0)
        assert st_.scalars_sent[BACKWARD] == (L if bwd else 0)


class SleepyKernels:
    """Real kernels plus a GIL-free sleep per lane, so ranks behave as if on separate cores."""

    BACKEND = "sleepy"

    def __init__(self, per_lane):
        self.per_lane = per_lane
        self.inner = kernels.get_backend()

    def forward_sweep(self, data, n, stride, lo, hi, *rest):
        time.sleep(self.per_lane * (hi - lo))
        return self.inner.forward_sweep(data, n, stride, lo, hi, *rest)

    def backward_sweep(self, data, n, stride, lo, hi, *rest):
        time.sleep(self.per_lane * (hi - lo))
        return self.inner.backward_sweep(data, n, stride, lo, hi, *rest)

    def solve_batch(self, *args):
        return self.inner.solve_batch(*args)


def _forward_span(stats):
    return max(s.last_end(FORWARD) for s in stats) - min(s.first_start(FORWARD) for s in stats)


def test_unblocked_serializes_blocked_overlaps():
    spec = GridSpec.from_counts(16, 8, 8, 2, dt=0.01)
    field = DensityField.filled(spec, 1.0)
    slow = SleepyKernels(0.02 / spec.plane_size)
    out1, stats1 = run_pipelined(field, SUBS2, 4, nb=1, backend=slow)
    for prev, cur in zip(stats1, stats1[1:]):
        assert cur.first_start(FORWARD) >= prev.last_end(FORWARD)
    out8, stats8 = run_pipelined(field, SUBS2, 4, nb=8, backend=slow)
    for prev, cur in zip(stats8, stats8[1:]):
        assert cur.first_start(FORWARD) < prev.last_end(FORWARD)
    # critical path: P blocks of size L versus nb + P - 1 blocks of size L/nb
    assert _forward_span(stats8) < 0.6 * _forward_span(stats1)
    np.testing.assert_array_equal(out1.data, out8.data)


def test_deadlock_freedom_grid():
    """Every P <= 8 and nb <= 32 finishes within the watchdog and matches serial."""
    spec = GridSpec.from_counts(8, 4, 4, 2, dt=0.01)
    field = DensityField(spec, np.random.default_rng(3).random(spec.n_values))
    ref = serial(field, SUBS2)
    failures = []

    def work():
        for P in range(1, 9):
            for nb in (1, 2, 3, 5, 7, 8, 16, 31, 32):
                out, _ = run_pipelined(field, SUBS2, P, nb=nb, recv_timeout=10.0)
                if not np.array_equal(out.data, ref.data):
                    failures.append((P, nb))

    t = threading.Thread(target=work, daemon=True)
    t.start()
    t.join(timeout=120.0)
    assert not t.is_alive(), "pipeline did not finish within the watchdog"
    assert failures == []


def test_dropped_frontier_is_detected(rng):
    spec = GridSpec.from_counts(8, 4, 4, 1, dt=0.01)
    with RankGroup(spec, SubstrateParams([1e3], [0.0]), 2, nb=4, recv_timeout=0.5) as g:
        g.links[0].to_next = DropFrontier(g.links[0].to_next, FORWARD, 3)
        g.scatter(DensityField(spec, rng.random(spec.n_values)))
        with pytest.raises(PipelineProtocolError, match="timed out"):
            g.step()


def test_mismatched_plan_is_detected():
    spec = GridSpec.from_counts(8, 4, 4, 1, dt=0.01)
    with RankGroup(spec, SubstrateParams([1e3], [0.0]), 2, nb=4, recv_timeout=5.0) as g:
        # rank 1 expects a different split of lanes than rank 0 sends
        inner = g.links[0].to_next

        class Reshaper:
            def send(self, msg):
                inner.send(FrontierMessage(msg.phase, msg.block_id, msg.values[:-1]))

            def close(self):
                inner.close()

        g.links[0].to_next = Reshaper()
        with pytest.raises(PipelineProtocolError, match="values"):
            g.step()


def test_out_of_order_tag_is_detected():
    chan = QueueChannel()
    chan.send(FrontierMessage(FORWARD, 1, np.zeros(2)))
    from lodfvm.pipeline import _receive

    with pytest.raises(PipelineProtocolError, match="expected forward frontier of block 0"):
        _receive(chan, FORWARD, 0, 2, 1.0, None)


def test_scatter_shape_check():
    spec = GridSpec.from_counts(4, 2, 2, 1)
    with RankGroup(spec, SubstrateParams([1.0], [0.0]), 2) as g:
        with pytest.raises(ConfigurationError):
            g.scatter(DensityField(GridSpec.from_counts(5, 2, 2, 1)))
