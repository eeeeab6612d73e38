from itertools import product

import numpy as np
import pytest

from app.errors import InvalidParameterError, SearchGuardError
from app.search import _Leaves, _rank, exhaustive_best, greedy_baseline, report_frame_rows
from app.sequence import MeasurementSequence, run_sequence


def _brute_force(initial, n_rounds, params):
    out = {}
    for bits in product("01", repeat=n_rounds):
        text = "".join(bits)
        out[text] = run_sequence(initial, MeasurementSequence.parse(text), params)
    return out


def test_two_rounds_rank_all_four(thermal, params):
    report = exhaustive_best(thermal, 2, params)
    assert report.evaluations == 4
    assert report.excluded == 0
    assert len(report.ranked) == 4
    assert sorted(r.sequence for r in report.ranked) == ["00", "01", "10", "11"]
    scores = [r.C for r in report.ranked]
    assert scores == sorted(scores, reverse=True)


def test_leaf_values_equal_sequential_runs(thermal, params):
    traces = _brute_force(thermal, 6, params)
    report = exhaustive_best(thermal, 6, params, top_k=64)
    assert len(report.ranked) == 64
    for entry in report.ranked:
        trace = traces[entry.sequence]
        assert entry.C == trace.final.C
        assert entry.summed_C == trace.summed_C
        assert entry.final_nbar == trace.final.nbar
    best = max(traces, key=lambda s: (traces[s].final.C, [-int(c) for c in s]))
    assert report.best_sequence.to_string() == best


def test_summed_metric(thermal, params):
    traces = _brute_force(thermal, 5, params)
    report = exhaustive_best(thermal, 5, params, metric="summed")
    assert report.best_C == max(t.summed_C for t in traces.values())


def test_parallel_enumeration_matches_serial(thermal, params):
    serial = exhaustive_best(thermal, 7, params, top_k=10, threads=1)
    parallel = exhaustive_best(thermal, 7, params, top_k=10, threads=2)
    assert parallel.model_dump() == serial.model_dump()


def test_repeat_runs_are_identical(thermal, params):
    assert exhaustive_best(thermal, 4, params).model_dump_json() == exhaustive_best(thermal, 4, params).model_dump_json()


def test_guard(thermal, params):
    with pytest.raises(SearchGuardError):
        exhaustive_best(thermal, 25, params)
    with pytest.raises(SearchGuardError):
        exhaustive_best(thermal, 4, params, guard=3)
    assert exhaustive_best(thermal, 4, params, guard=3, override_guard=True).evaluations == 16


def test_rejects_bad_arguments(thermal, params):
    with pytest.raises(InvalidParameterError):
        exhaustive_best(thermal, 0, params)
    with pytest.raises(InvalidParameterError):
        exhaustive_best(thermal, 3, params, metric="mean")


def test_ties_break_toward_smaller_binary_string():
    leaves = _Leaves(4)
    leaves.final_C[:] = 1.0
    leaves.summed_C[:] = 2.0
    leaves.final_C[2] = -np.inf
    ranked, excluded = _rank(leaves, 2, "final", 10)
    assert [r.sequence for r in ranked] == ["00", "01", "11"]
    assert excluded == 1


def test_greedy_baseline_is_consistent(thermal, params):
    report = greedy_baseline(thermal, 8, params)
    trace = run_sequence(thermal, report.best_sequence, params)
    assert report.mode == "greedy"
    assert len(report.best_sequence) == 8
    assert report.best_C == trace.final.C
    assert report.evaluations == 16
    assert report_frame_rows(report)[0]["rank"] == 1


def test_greedy_never_beats_exhaustive(thermal, params):
    greedy = greedy_baseline(thermal, 8, params)
    exhaustive = exhaustive_best(thermal, 8, params)
    assert exhaustive.best_C >= greedy.best_C


def test_best_final_C_grows_with_round_count(thermal, params):
    best = [exhaustive_best(thermal, n, params).best_C for n in range(1, 9)]
    assert all(b >= a for a, b in zip(best, best[1:]))
    assert best[0] > 0


# golden value of the 2^16 enumeration with log10 in C
REFERENCE_BEST_C = 1.5875176492832217
REFERENCE_BEST_SEQUENCE = "0000001000111111"


@pytest.mark.slow
def test_full_enumeration_at_reference_parameters(thermal, params):
    report = exhaustive_best(thermal, 16, params)
    assert report.evaluations == 65536
    assert report.best_sequence.to_string() == REFERENCE_BEST_SEQUENCE
    assert report.best_C == pytest.approx(REFERENCE_BEST_C, rel=1e-9)
    assert report.best_C == run_sequence(thermal, report.best_sequence, params).final.C
