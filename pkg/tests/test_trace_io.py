import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coupled360.trace_io import (BandwidthTrace, TraceFormat, TraceParseError, TraceValidationError,
                                 gop_average, parse_trace, trace_table, write_trace)


def _write(tmp_path, text, name="t.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_parse_kbps(tmp_path):
    tr = parse_trace(_write(tmp_path, "0,2000\n1,4000\n"), TraceFormat(value_unit="kbps"))
    assert tr.times.tolist() == [0.0, 1.0] and tr.mbps.tolist() == [2.0, 4.0]


def test_parse_bytes_per_interval(tmp_path):
    fmt = TraceFormat(value_unit="bytes", interval_s=1.0)
    tr = parse_trace(_write(tmp_path, "0,125000\n1,125000\n"), fmt)
    assert tr.mbps.tolist() == [1.0, 1.0]


def test_parse_units(tmp_path):
    tr = parse_trace(_write(tmp_path, "0,3000000\n500,1000000\n"), TraceFormat(time_unit="ms", value_unit="bps"))
    assert tr.times.tolist() == [0.0, 0.5] and tr.mbps.tolist() == [3.0, 1.0]


def test_lte_log_preset(tmp_path):
    text = "1000 3.7 51.0 250000 1000\n2000 3.7 51.0 125000 500\n"
    tr = parse_trace(_write(tmp_path, text, "x.log"), TraceFormat.from_dict({"preset": "lte_log"}))
    assert tr.times.tolist() == [0.0, 1.0]
    assert tr.mbps.tolist() == [2.0, 2.0]


def test_header_and_comments_skipped(tmp_path):
    tr = parse_trace(_write(tmp_path, "t_seconds,mbps\n# note\n0,1.5\n\n2,2.5\n"))
    assert tr.mbps.tolist() == [1.5, 2.5]


def test_empty_file(tmp_path):
    with pytest.raises(TraceValidationError):
        parse_trace(_write(tmp_path, ""))


def test_malformed_row_reports_line(tmp_path):
    with pytest.raises(TraceParseError, match=":3:"):
        parse_trace(_write(tmp_path, "0,1\n1,2\n2,abc\n"))


def test_non_monotone_timestamps(tmp_path):
    with pytest.raises(TraceValidationError):
        parse_trace(_write(tmp_path, "0,1\n2,2\n1,2\n"))


def test_negative_throughput(tmp_path):
    with pytest.raises((TraceValidationError, TraceParseError)):
        parse_trace(_write(tmp_path, "0,1\n1,-2\n"))


def test_bad_format_spec():
    with pytest.raises(ValueError):
        TraceFormat(time_unit="h")
    with pytest.raises(ValueError):
        TraceFormat(value_unit="bytes")


def test_gop_average_two_samples():
    tr = BandwidthTrace(np.array([0.0, 0.5]), np.array([2.0, 4.0]))
    res = gop_average(tr, 1.0, 1)
    assert res.values.tolist() == [3.0]
    assert not res.extended


def test_gop_average_constant():
    tr = BandwidthTrace(np.arange(10.0), np.full(10, 7.5))
    assert np.allclose(gop_average(tr, 0.7, 12).values, 7.5)


def test_gop_average_past_end_holds_last_value():
    tr = BandwidthTrace(np.array([0.0, 1.0]), np.array([1.0, 5.0]))
    res = gop_average(tr, 1.0, 1, start=10.0)
    assert res.values.tolist() == [5.0] and res.extended


def test_gop_average_domain_errors():
    tr = BandwidthTrace(np.array([0.0]), np.array([1.0]))
    with pytest.raises(ValueError):
        gop_average(tr, 1.0, 0)
    with pytest.raises(ValueError):
        gop_average(tr, 0.0, 1)


def test_linear_interpolation_flag():
    tr = BandwidthTrace(np.array([0.0, 1.0]), np.array([0.0, 2.0]))
    assert gop_average(tr, 1.0, 1, interpolation="linear").values[0] == pytest.approx(1.0)


traces = st.lists(st.tuples(st.floats(0.01, 2.0), st.floats(0.0, 50.0)), min_size=1, max_size=30)


def _trace(pairs):
    steps, vals = zip(*pairs)
    return BandwidthTrace(np.cumsum([0.0, *steps[1:]]), np.array(vals))


@settings(max_examples=80, deadline=None)
@given(traces, st.integers(0, 29), st.floats(0.05, 1.0))
def test_redundant_samples_change_nothing(pairs, where, frac):
    tr = _trace(pairs)
    i = where % tr.times.size
    nxt = tr.times[i + 1] if i + 1 < tr.times.size else tr.times[i] + 1.0
    t_new = tr.times[i] + frac * 0.999 * (nxt - tr.times[i])
    if t_new <= tr.times[i]:
        return
    times = np.insert(tr.times, i + 1, t_new)
    vals = np.insert(tr.mbps, i + 1, tr.mbps[i])
    dense = BandwidthTrace(times, vals)
    gop, k = 0.3, max(1, int(tr.duration // 0.3))
    assert np.allclose(gop_average(tr, gop, k).values, gop_average(dense, gop, k).values, atol=1e-9)


@settings(max_examples=80, deadline=None)
@given(traces, st.floats(0.05, 2.0))
def test_averages_within_sample_range(pairs, gop):
    tr = _trace(pairs)
    k = max(1, int(tr.duration // gop))
    vals = gop_average(tr, gop, k).values
    assert np.all(vals >= tr.mbps.min() - 1e-9) and np.all(vals <= tr.mbps.max() + 1e-9)


@settings(max_examples=40, deadline=None)
@given(traces)
def test_serialize_roundtrip(tmp_path_factory, pairs):
    tr = _trace(pairs)
    path = tmp_path_factory.mktemp("rt") / "t.csv"
    write_trace(tr, path)
    again = parse_trace(path)
    assert np.array_equal(again.times, tr.times) and np.array_equal(again.mbps, tr.mbps)


def test_trace_table_layout():
    assert trace_table([1.0, 2.5], 0.5) == "gop,start_s,mbps\n0,0.0,1.0\n1,0.5,2.5\n"
