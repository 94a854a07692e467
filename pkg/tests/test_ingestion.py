from decimal import ROUND_HALF_UP, Decimal

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from privmarket.errors import FormatError, ParameterError
from privmarket.fixtures import cluster_dataset, wisdm_lines
from privmarket.ingestion import SplitSpec, parse_raw, split, windowize

from conftest import toy_dataset


def test_parse_single_documented_line():
    series = parse_raw(["33,Jogging,49105962326000,-0.69,12.68,0.50;"])
    run = series.runs[(33, "Jogging")]
    assert len(run) == 1
    assert run.timestamps[0] == 49105962326000
    assert run.xyz[0].tolist() == [-0.69, 12.68, 0.50]


def test_trailing_blank_lines_are_ignored():
    lines = wisdm_lines({1: {"Walking": 30}})
    a = parse_raw(lines)
    b = parse_raw(lines + ["", "   "])
    assert a.runs.keys() == b.runs.keys()
    assert np.array_equal(a.runs[(1, "Walking")].xyz, b.runs[(1, "Walking")].xyz)


def test_line_without_semicolon_and_several_records_per_line():
    series = parse_raw(["1,Walking,1,0.1,0.2,0.3", "1,Walking,2,0.1,0.2,0.3;1,Walking,3,0.4,0.5,0.6;"])
    assert len(series.runs[(1, "Walking")]) == 3


def test_empty_input_gives_empty_series():
    series = parse_raw([])
    assert series.runs == {} and series.sample_count == 0
    assert len(windowize(series)) == 0


def test_few_malformed_lines_are_counted_not_fatal():
    lines = wisdm_lines({1: {"Walking": 95}}) + ["1,Walking,,0.1,0.2;"] * 5
    series = parse_raw(lines)
    assert series.malformed == 5 and series.parsed == 95


def test_too_many_malformed_lines_fail():
    lines = wisdm_lines({1: {"Walking": 8}}) + ["garbage"] * 2
    with pytest.raises(FormatError, match="garbage"):
        parse_raw(lines)


def test_distinct_users_counted():
    users = {u: {"Walking": 10} for u in range(1, 37)}
    assert len(parse_raw(wisdm_lines(users)).users) == 36


def test_windowize_thousand_samples():
    data = windowize(parse_raw(wisdm_lines({7: {"Jogging": 1000}})))
    assert len(data) == 5
    assert data.m == 120
    assert set(data.labels.tolist()) == {1}  # Jogging


def test_defaults_give_120_features():
    assert windowize(parse_raw(wisdm_lines({1: {"Walking": 200}}))).m == 3 * 200 // 5 == 120


def test_constant_signal_gives_constant_features():
    lines = [f"2,Sitting,{t},1.5,1.5,1.5;" for t in range(400)]
    data = windowize(parse_raw(lines))
    assert np.all(data.features == 1.5)


def test_feature_layout_is_axis_blocks():
    lines = [f"2,Sitting,{t},{t},{100 + t},{200 + t};" for t in range(10)]
    data = windowize(parse_raw(lines), window_len=10, downsample=5)
    assert data.features[0].tolist() == [2.0, 7.0, 102.0, 107.0, 202.0, 207.0]


def test_windows_do_not_straddle_runs():
    lines = wisdm_lines({1: {"Walking": 350, "Jogging": 250}, 2: {"Walking": 199}})
    data = windowize(parse_raw(lines))
    assert len(data) == 350 // 200 + 250 // 200 + 0


@settings(max_examples=25, deadline=None)
@given(st.dictionaries(st.sampled_from(["Walking", "Jogging", "Sitting"]), st.integers(0, 700), min_size=1))
def test_window_count_is_length_exact(runs):
    data = windowize(parse_raw(wisdm_lines({4: runs})))
    assert len(data) == sum(n // 200 for n in runs.values())


def test_windowize_parameter_errors():
    series = parse_raw(wisdm_lines({1: {"Walking": 10}}))
    with pytest.raises(ParameterError):
        windowize(series, window_len=0)
    with pytest.raises(ParameterError):
        windowize(series, window_len=200, downsample=3)


def test_split_half_of_single_stratum():
    data = toy_dataset({1: 10}, n_labels=1)
    train, test = split(data, SplitSpec(0.5, seed=1))
    assert (len(train), len(test)) == (5, 5)


def test_split_is_deterministic():
    data = cluster_dataset()
    a = split(data, SplitSpec(0.3, seed=9))
    b = split(data, SplitSpec(0.3, seed=9))
    assert a[0] == b[0] and a[1] == b[1]


def test_split_counts_per_stratum():
    data = toy_dataset({u: 7 + 3 * u for u in range(1, 7)}, n_labels=3)
    _, test = split(data, SplitSpec(0.3, seed=4))
    for owner in range(1, 7):
        for label in range(3):
            size = int(np.sum((data.owners == owner) & (data.labels == label)))
            expected = int((Decimal(size) * Decimal("0.3")).quantize(Decimal(1), rounding=ROUND_HALF_UP))
            got = int(np.sum((test.owners == owner) & (test.labels == label)))
            assert got == expected, (owner, label, size)


def test_singleton_stratum_goes_to_train(caplog):
    data = toy_dataset({1: 1}, n_labels=1)
    train, test = split(data, SplitSpec(0.5))
    assert len(train) == 1 and len(test) == 0
    assert "one record" in caplog.text


def test_split_fraction_bounds():
    with pytest.raises(ParameterError):
        SplitSpec(1.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**63 - 1), st.floats(0.05, 0.95))
def test_split_disjoint_and_covering(seed, fraction):
    data = toy_dataset({1: 9, 2: 4, 3: 6}, n_labels=2)
    train, test = split(data, SplitSpec(fraction, seed))
    keys = lambda d: {(int(o), int(i)) for o, i in zip(d.owners, d.index)}
    assert keys(train).isdisjoint(keys(test))
    assert keys(train) | keys(test) == keys(data)
