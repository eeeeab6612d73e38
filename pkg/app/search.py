"""Ground-truth sequence optimizers: exhaustive 2^N enumeration and a greedy per-round baseline."""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict
from tqdm import tqdm

from app.errors import CoolingError, InvalidParameterError, MeasurementAnnihilationError, SearchGuardError
from app.measurement import Strategy, apply_measurement, optimal_interval
from app.physics import ModelParams, PopulationState, avg_population
from app.sequence import MeasurementSequence, observe, run_sequence

logger = logging.getLogger(__name__)

DEFAULT_GUARD = 24
Metric = Literal["final", "summed"]


class RankedSequence(BaseModel):
    model_config = ConfigDict(frozen=True)

    sequence: str
    C: float
    summed_C: float
    final_nbar: float
    F: float
    Pg: float


class SearchReport(BaseModel):
    """
    Outcome of a sequence search.

    Attributes:
        mode: "exhaustive" or "greedy"
        metric: Ranking objective, final-round C or C summed over rounds
        best_sequence: Winner (ties go to the lexicographically smallest 0/1 string)
        best_C: Winner's value of the ranking metric
        ranked: Top-k entries, best first
        evaluations: Sequences (exhaustive) or candidate rounds (greedy) evaluated
        excluded: Sequences dropped because a CM round annihilated the state
    """

    model_config = ConfigDict(frozen=True)

    mode: Literal["exhaustive", "greedy"]
    metric: Metric
    n_rounds: int
    best_sequence: MeasurementSequence
    best_C: float
    ranked: List[RankedSequence]
    evaluations: int
    excluded: int = 0


class _Leaves:
    """Per-sequence results of one subtree, indexed by the suffix bits."""

    def __init__(self, size: int):
        self.final_C = np.full(size, -np.inf)
        self.summed_C = np.full(size, -np.inf)
        self.nbar = np.full(size, np.nan)
        self.F = np.full(size, np.nan)
        self.Pg = np.full(size, np.nan)


def _walk(state, depth, remaining, index, summed, nbar_th, params, leaves):
    # depth-first over the suffix tree; each prefix state is computed once
    for action in (Strategy.UM, Strategy.CM):
        child_index = (index << 1) | int(action)
        try:
            tau = optimal_interval(action, state, params).tau
            child = apply_measurement(action, state, tau, params)
        except MeasurementAnnihilationError:
            continue
        except CoolingError as exc:
            raise exc.with_step(depth + 1)
        nbar, fidelity, survival, perf, _ = observe(child, nbar_th)
        total = summed + perf
        if remaining == 1:
            leaves.final_C[child_index] = perf
            leaves.summed_C[child_index] = total
            leaves.nbar[child_index] = nbar
            leaves.F[child_index] = fidelity
            leaves.Pg[child_index] = survival
        else:
            _walk(child, depth + 1, remaining - 1, child_index, total, nbar_th, params, leaves)


def _enumerate_subtree(task: Tuple[PopulationState, ModelParams, Tuple[int, ...], int]) -> _Leaves:
    """Replay a fixed prefix, then enumerate every suffix below it."""
    initial, params, prefix, n_rounds = task
    nbar_th = avg_population(initial)
    suffix_len = n_rounds - len(prefix)
    leaves = _Leaves(1 << suffix_len)

    state, summed = initial, 0.0
    for depth, bit in enumerate(prefix):
        action = Strategy(bit)
        try:
            tau = optimal_interval(action, state, params).tau
            state = apply_measurement(action, state, tau, params)
        except MeasurementAnnihilationError:
            return leaves
        except CoolingError as exc:
            raise exc.with_step(depth + 1)
        nbar, fidelity, survival, perf, _ = observe(state, nbar_th)
        summed += perf
        if depth == n_rounds - 1:
            leaves.final_C[0], leaves.summed_C[0] = perf, summed
            leaves.nbar[0], leaves.F[0], leaves.Pg[0] = nbar, fidelity, survival

    if suffix_len > 0:
        _walk(state, len(prefix), suffix_len, 0, summed, nbar_th, params, leaves)
    return leaves


def _prefix_depth(n_rounds: int, threads: int) -> int:
    if threads <= 1:
        return 0
    return min(n_rounds, int(math.ceil(math.log2(threads))) + 2)


def _rank(leaves: _Leaves, n_rounds: int, metric: Metric, top_k: int) -> Tuple[List[RankedSequence], int]:
    score = leaves.final_C if metric == "final" else leaves.summed_C
    valid = np.flatnonzero(np.isfinite(score))
    # primary: metric descending; secondary: index ascending == lexicographic 0/1 string
    order = valid[np.lexsort((valid, -score[valid]))]
    ranked = [
        RankedSequence(
            sequence=format(int(i), f"0{n_rounds}b"),
            C=float(leaves.final_C[i]),
            summed_C=float(leaves.summed_C[i]),
            final_nbar=float(leaves.nbar[i]),
            F=float(leaves.F[i]),
            Pg=float(leaves.Pg[i]),
        )
        for i in order[:top_k]
    ]
    return ranked, int(score.size - valid.size)


def exhaustive_best(
    initial: PopulationState,
    n_rounds: int,
    params: ModelParams,
    metric: Metric = "final",
    top_k: int = 20,
    guard: int = DEFAULT_GUARD,
    override_guard: bool = False,
    threads: int = 1,
    show_progress: bool = False,
) -> SearchReport:
    """
    Evaluate every sequence in {0,1}^N and rank by the chosen metric.

    Args:
        initial: Starting populations
        n_rounds: Sequence length N
        params: Model parameters
        metric: "final" (last-round C) or "summed" (C summed over rounds)
        top_k: Number of ranked entries kept in the report
        guard: Largest N allowed without override_guard
        override_guard: Permit N above guard
        threads: Worker processes; the result does not depend on this
        show_progress: Display a progress bar over subtrees

    Returns:
        SearchReport with evaluations == 2^N
    """
    if n_rounds < 1:
        raise InvalidParameterError(f"sequence length must be at least 1, got {n_rounds}")
    if n_rounds > guard and not override_guard:
        raise SearchGuardError(
            f"exhaustive search over 2^{n_rounds} sequences exceeds the guard N <= {guard}; "
            "set override_guard to run it anyway"
        )
    if metric not in ("final", "summed"):
        raise InvalidParameterError(f"unknown metric {metric!r}")

    depth = _prefix_depth(n_rounds, threads)
    prefixes = [tuple(int(b) for b in format(i, f"0{depth}b")) if depth else () for i in range(1 << depth)]
    tasks = [(initial, params, prefix, n_rounds) for prefix in prefixes]
    logger.info("exhaustive search: N=%d, %d subtree(s), %d worker(s)", n_rounds, len(tasks), max(threads, 1))

    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            parts = list(tqdm(pool.map(_enumerate_subtree, tasks), total=len(tasks), desc="subtrees", disable=not show_progress))
    else:
        parts = [_enumerate_subtree(t) for t in tqdm(tasks, desc="subtrees", disable=not show_progress)]

    # prefixes are in index order, so concatenation restores the global sequence index
    merged = _Leaves(0)
    for field in ("final_C", "summed_C", "nbar", "F", "Pg"):
        setattr(merged, field, np.concatenate([getattr(p, field) for p in parts]))

    ranked, excluded = _rank(merged, n_rounds, metric, top_k)
    if not ranked:
        raise CoolingError("every enumerated sequence annihilated the state in a CM round")
    best = ranked[0]
    return SearchReport(
        mode="exhaustive",
        metric=metric,
        n_rounds=n_rounds,
        best_sequence=MeasurementSequence.parse(best.sequence),
        best_C=best.C if metric == "final" else best.summed_C,
        ranked=ranked,
        evaluations=1 << n_rounds,
        excluded=excluded,
    )


def greedy_baseline(initial: PopulationState, n_rounds: int, params: ModelParams, metric: Metric = "final") -> SearchReport:
    """
    Pick, round by round, the strategy with the larger immediate post-round C (ties: UM).

    Returns:
        SearchReport holding the single greedy sequence
    """
    if n_rounds < 1:
        raise InvalidParameterError(f"sequence length must be at least 1, got {n_rounds}")

    nbar_th = avg_population(initial)
    state = initial
    steps: List[Strategy] = []
    evaluations = 0
    for i in range(1, n_rounds + 1):
        best: Optional[Tuple[float, Strategy, PopulationState]] = None
        for action in (Strategy.UM, Strategy.CM):
            try:
                tau = optimal_interval(action, state, params).tau
                child = apply_measurement(action, state, tau, params)
            except MeasurementAnnihilationError:
                continue
            except CoolingError as exc:
                raise exc.with_step(i)
            evaluations += 1
            perf = observe(child, nbar_th)[3]
            if best is None or perf > best[0]:
                best = (perf, action, child)
        steps.append(best[1])
        state = best[2]

    sequence = MeasurementSequence(steps=tuple(steps))
    trace = run_sequence(initial, sequence, params)
    last = trace.final
    entry = RankedSequence(
        sequence=sequence.to_string(),
        C=last.C,
        summed_C=trace.summed_C,
        final_nbar=last.nbar,
        F=last.F,
        Pg=last.Pg,
    )
    return SearchReport(
        mode="greedy",
        metric=metric,
        n_rounds=n_rounds,
        best_sequence=sequence,
        best_C=entry.C if metric == "final" else entry.summed_C,
        ranked=[entry],
        evaluations=evaluations,
    )


def report_frame_rows(report: SearchReport) -> List[Dict]:
    """Top-k rows with a 1-based rank column, for CSV export."""
    return [{"rank": r, **entry.model_dump()} for r, entry in enumerate(report.ranked, start=1)]
