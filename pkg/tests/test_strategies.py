"""Experiments I-V over campaign slices."""

import asyncio
import json

import numpy as np
import pytest

from conftest import random_scored, scored_dataset
from rtbconfig.exceptions import InvalidArgument, SpecificationError
from rtbconfig.search import Configuration
from rtbconfig.strategies import (
    DEFAULT_LIMITS,
    SEQUENTIAL_LIMITS,
    ExperimentSpec,
    arun_experiment,
    run_experiment,
    run_experiment_1,
    run_experiment_2,
    run_experiment_3,
    run_experiment_4,
    run_experiment_5,
    threshold_mask,
)
from rtbconfig.synthetic import PlantedSegment, SyntheticSpec, generate_synthetic


def _niches(n_rows, niches, seed, n_attributes=4, cost_shape=2.0, cardinality=10):
    """Slice with ``niches`` = {value of cat1: rows}; niche rows convert at 0.5, the rest at 0.02."""
    segments = tuple(
        PlantedSegment(
            Configuration((0,), (value,)),
            conversion_rate=0.5,
            cost_shape=cost_shape,
            cost_scale=1.0 / cost_shape,
            share=rows / n_rows,
        )
        for value, rows in niches.items()
    )
    spec = SyntheticSpec(
        n_rows=n_rows,
        n_attributes=n_attributes,
        cardinality=cardinality,
        segments=segments,
        background_cost_shape=cost_shape,
        background_cost_scale=1.0 / cost_shape,
        seed=seed,
        fill_cvr=True,
    )
    return generate_synthetic(spec)


def _by(cells, *keys):
    return {tuple(cell[k] for k in keys): cell for cell in cells}


def test_spec_defaults_and_validation():
    assert ExperimentSpec("i").limits == DEFAULT_LIMITS
    assert ExperimentSpec("II").limits == SEQUENTIAL_LIMITS
    with pytest.raises(SpecificationError):
        ExperimentSpec("VI")
    with pytest.raises(SpecificationError):
        ExperimentSpec("I", limits=(20, 10))
    with pytest.raises(SpecificationError):
        ExperimentSpec("III", prefix_fractions=(0.0,))
    with pytest.raises(SpecificationError):
        ExperimentSpec("IV", threshold_kinds=("median",))
    with pytest.raises(SpecificationError):
        run_experiment("I", [], ExperimentSpec("II"))


def test_experiment_1_is_non_increasing():
    slices = [random_scored(seed, rows=2000, n_attributes=4, cardinality=4) for seed in range(3)]
    report = run_experiment_1(slices, ExperimentSpec("I", limits=(25, 50, 100, 200, 400)))
    for d in slices:
        series = [cell["avg_profitability"] for cell in report.cells if cell["slice"] == d.name]
        assert len(series) == 5
        assert all(a >= b for a, b in zip(series, series[1:]))
    aggregate = report.aggregate
    assert aggregate["limit"].tolist() == [25, 50, 100, 200, 400]
    assert aggregate["avg_profitability_count"].tolist() == [3] * 5


def test_flat_curve_when_one_configuration_dominates():
    d = scored_dataset(np.zeros((500, 3), dtype=np.int64), np.ones(500))
    report = run_experiment_1([d], ExperimentSpec("I", limits=(10, 100, 500)))
    assert {cell["avg_profitability"] for cell in report.cells} == {1.0}


def test_degenerate_settings_reproduce_experiment_1():
    d = random_scored(7, rows=3000, n_attributes=4, cardinality=5, excluded=0.02)
    limits = (30, 60, 120)
    first = _by(run_experiment_1([d], ExperimentSpec("I", limits=limits)).cells, "limit")
    for limit in limits:
        second = run_experiment_2([d], ExperimentSpec("II", limits=(limit,), slice_sizes=(limit,))).cells[0]
        assert second["rounds_planned"] == 1
        assert second["avg_profitability"] == first[(limit,)]["avg_profitability"]
        assert second["baseline_avg_profitability"] == first[(limit,)]["avg_profitability"]
    third = _by(run_experiment_3([d], ExperimentSpec("III", limits=limits, prefix_fractions=(1.0,))).cells, "limit")
    fourth = _by(run_experiment_4([d], ExperimentSpec("IV", limits=limits, threshold_kinds=("none",))).cells, "limit")
    for limit in limits:
        assert third[(limit,)]["avg_profitability"] == first[(limit,)]["avg_profitability"]
        assert third[(limit,)]["ratio"] == 1.0
        assert fourth[(limit,)]["avg_profitability"] == first[(limit,)]["avg_profitability"]


def test_experiment_2_round_counts():
    d = random_scored(3, rows=2000, n_attributes=3, cardinality=3)
    cells = _by(run_experiment_2([d], ExperimentSpec("II", limits=(50,), slice_sizes=(25, 10))).cells, "slice_size")
    assert cells[(25,)]["rounds_planned"] == 2
    assert cells[(10,)]["rounds_planned"] == 5
    rounds = cells[(10,)]["rounds"]
    assert [r["round"] for r in rounds] == list(range(1, len(rounds) + 1))
    remaining = [r["remaining_rows"] for r in rounds]
    assert remaining == sorted(remaining, reverse=True)


def test_sequential_niches_beat_single_configuration():
    niches = {90 + k: 1000 for k in range(5)}
    d = _niches(60_000, niches, seed=5)
    cell = run_experiment_2([d], ExperimentSpec("II", limits=(5000,), slice_sizes=(1000,))).cells[0]
    assert cell["rounds_completed"] == 5
    assert {r["values"][0] for r in cell["rounds"]} == set(niches)
    assert cell["avg_profitability"] >= cell["baseline_avg_profitability"]


def test_prefix_selection_extrapolates():
    slices = [_niches(50_000, {99: 5000}, seed=seed, cost_shape=5.0) for seed in (1, 2)]
    report = run_experiment_3(slices, ExperimentSpec("III", limits=(2000,), prefix_fractions=(0.1, 1.0)))
    for cell in report.cells:
        assert cell["ratio"] >= 0.85
        if cell["fraction"] == 0.1:
            assert cell["prefix_rows"] == 5000
            assert cell["prefix_limit"] == 200


def test_prefix_selection_only_sees_prefix_rows():
    attributes = np.zeros((200, 2), dtype=np.int64)
    attributes[150:, 0] = 1
    profitability = np.concatenate([np.full(150, 1.0), np.full(50, 9.0)])
    d = scored_dataset(attributes, profitability)
    cell = run_experiment_3([d], ExperimentSpec("III", limits=(40,), prefix_fractions=(0.5,))).cells[0]
    assert cell["values"] == [0]
    assert cell["optimum_avg_profitability"] == 9.0


def test_threshold_mask_keeps_ties():
    d = scored_dataset(np.zeros((4, 1), dtype=np.int64), [1.0, 2.0, 3.0, np.nan], costs=np.full(4, 2.0))
    mask, threshold = threshold_mask(d, "cost")
    assert threshold == 2.0 and mask.all()
    mask, threshold = threshold_mask(d, "profitability")
    assert threshold == 2.0
    assert mask.tolist() == [False, True, True, False]
    mask, _ = threshold_mask(d, "profitability", "unfavourable")
    assert mask.tolist() == [True, True, False, False]
    with pytest.raises(InvalidArgument):
        threshold_mask(d, "median")


def test_equal_costs_keep_everything():
    d = random_scored(9, rows=800, n_attributes=3, cardinality=3)
    cells = run_experiment_4([d], ExperimentSpec("IV", limits=(40,), threshold_kinds=("cost",))).cells
    assert cells[0]["kept_rows"] == 800
    assert cells[0]["avg_profitability"] == cells[0]["baseline_avg_profitability"]


def test_dropping_expensive_junk_helps():
    rng = np.random.default_rng(4)
    rows = 4000
    junk = rng.permutation(rows) < rows // 2
    costs = np.where(junk, 10.0, 1.0)
    d = scored_dataset(rng.integers(0, 4, size=(rows, 3)), 0.1 / costs, costs=costs)
    cells = _by(run_experiment_4([d], ExperimentSpec("IV", limits=(200, 400))).cells, "limit", "threshold_kind")
    for limit in (200, 400):
        cell = cells[(limit, "cost")]
        assert cell["kept_rows"] == 2000
        assert cell["avg_profitability"] > cell["baseline_avg_profitability"]


def test_limit_above_kept_half_is_absent():
    d = scored_dataset(np.zeros((100, 2), dtype=np.int64), np.ones(100), costs=np.arange(1.0, 101.0))
    cell = run_experiment_4([d], ExperimentSpec("IV", limits=(80,), threshold_kinds=("cost",))).cells[0]
    assert cell["avg_profitability"] is None


def test_relaxed_mode_finds_the_smaller_niche():
    # cat2 has two values, so strict mode still finds configurations of 15k rows
    d = _niches(50_000, {99: 13_000}, seed=3, cardinality=(10, 2, 10, 10))
    cell = run_experiment_5([d], ExperimentSpec("V", limits=(15_000,))).cells[0]
    assert cell["relaxed_selected_columns"] == [0]
    assert cell["relaxed_values"] == [99]
    assert cell["relaxed_matched_rows"] == 13_000
    assert cell["strict_values"] != [99]
    assert cell["strict_matched_rows"] >= 15_000
    assert cell["delta"] > 0


def test_relaxed_never_scores_below_strict():
    slices = [random_scored(seed, rows=1000, n_attributes=3, cardinality=4) for seed in range(2)]
    report = run_experiment_5(slices, ExperimentSpec("V", limits=(10, 50, 100, 2000)))
    for cell in report.cells:
        if cell["strict_quality_score"] is not None:
            assert cell["relaxed_quality_score"] >= cell["strict_quality_score"]
            assert cell["delta"] >= 0
        else:
            assert cell["limit"] == 2000


def test_identical_modes_when_optimum_is_large():
    d = scored_dataset(np.zeros((300, 2), dtype=np.int64), np.linspace(1.0, 2.0, 300))
    cell = run_experiment_5([d], ExperimentSpec("V", limits=(100,))).cells[0]
    assert cell["strict_values"] == cell["relaxed_values"]
    assert cell["delta"] == 0.0


def test_slices_need_profitability():
    d = random_scored(1, rows=10, n_attributes=2, cardinality=2)
    with pytest.raises(InvalidArgument):
        run_experiment("I", [d.with_cvr(np.full(10, 0.5))])


def test_async_runner_matches_sync():
    slices = [random_scored(seed, rows=500, n_attributes=3, cardinality=3) for seed in range(4)]
    spec = ExperimentSpec("I", limits=(20, 40))
    sync = run_experiment("I", slices, spec, workers=2)
    concurrent = asyncio.run(arun_experiment("I", slices, spec, workers=3))
    assert concurrent.to_dict() == sync.to_dict()


def test_report_is_reproducible(tmp_path):
    slices = [random_scored(seed, rows=400, n_attributes=2, cardinality=3) for seed in range(2)]
    spec = ExperimentSpec("V", limits=(10, 1000))
    first = run_experiment("V", slices, spec).write(tmp_path / "a")
    second = run_experiment("V", slices, spec).write(tmp_path / "b")
    assert [p.name for p in first] == ["report.json", "figure_V.csv"]
    for a, b in zip(first, second):
        assert a.read_bytes() == b.read_bytes()
    document = json.loads(first[0].read_text())
    assert document["experiment_id"] == "V"
    assert all(cell["elapsed_seconds"] is None for cell in document["cells"])
    assert "elapsed_seconds_mean" not in first[1].read_text()
