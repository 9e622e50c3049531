import csv

import pytest

from lodfvm.errors import ConfigurationError
from lodfvm.grid import GridSpec
from lodfvm.metrics import (
    CSV_FIELDS,
    PRESETS,
    OpWeights,
    count_systems,
    field_bytes,
    get_preset,
    measured_flop,
    ops_per_system,
    run_bench,
    total_flop,
    write_bench_csv,
)


@pytest.mark.parametrize(
    "dims, systems",
    [((2, 2, 2, 1), 12), ((500, 500, 500, 2), 1_500_000), ((1, 1, 1, 1), 3), ((3, 4, 5, 2), 2 * (20 + 15 + 12))],
)
def test_count_systems(dims, systems):
    assert count_systems(GridSpec.from_counts(*dims)) == systems


@pytest.mark.parametrize("n, ops", [(1, 1), (2, 6), (500, 2496)])
def test_ops_per_system(n, ops):
    assert ops_per_system(n) == ops


def test_totals_for_liver_preset():
    spec = get_preset("liver4pct").spec()
    assert spec.shape == (500, 500, 500, 2)
    assert total_flop(spec) == 3_744_000_000
    assert field_bytes(spec) == 2_000_000_000


@pytest.mark.parametrize("dims", [(1, 1, 1, 1), (2, 3, 4, 5), (16, 16, 16, 2), (7, 5, 3, 3)])
@pytest.mark.parametrize("w", [OpWeights(), OpWeights(3, 1, 5)])
def test_measured_matches_closed_form(dims, w):
    spec = GridSpec.from_counts(*dims)
    assert measured_flop(spec, w) == total_flop(spec, w)


def test_weights_validation():
    with pytest.raises(ConfigurationError):
        OpWeights(0, 1, 1)


def test_presets():
    assert get_preset("liver100pct").spec().nx == 12000
    assert PRESETS["liver100pct"].full_scale
    assert not PRESETS["liver4pct-desk"].full_scale
    with pytest.raises(ConfigurationError, match="unknown preset"):
        get_preset("kidney")


def test_full_preset_needs_opt_in():
    with pytest.raises(ConfigurationError, match="allow"):
        run_bench("liver21pct", steps=1)


def test_full_preset_memory_guard():
    with pytest.raises(MemoryError, match="GB"):
        run_bench("liver100pct", steps=1, allow_full=True)


def test_bench_report_and_csv(tmp_path):
    r = run_bench("liver4pct-desk", P=2, factor=3, steps=2)
    assert (r.nx, r.S, r.nb) == (64, 2, 6)
    assert r.systems == count_systems(GridSpec.from_counts(64, 64, 64, 2))
    assert r.mean_ms > 0 and r.eq_per_s > 0
    path = write_bench_csv(tmp_path / "b.csv", [r])
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == CSV_FIELDS
    assert rows[0]["preset"] == "liver4pct-desk"
