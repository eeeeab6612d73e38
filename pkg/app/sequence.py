"""Hybrid UM/CM measurement sequences: execution, traces, and the cooperative performance C."""

import logging
import math
import re
from typing import Dict, List, Optional, Sequence, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator

from app.errors import CoolingError, InvalidParameterError, SequenceParseError
from app.measurement import Strategy, apply_measurement, optimal_interval
from app.physics import ModelParams, PopulationState, avg_population, ground_fidelity

logger = logging.getLogger(__name__)

NBAR_FLOOR = 1e-300


class MeasurementSequence(BaseModel):
    """Ordered strategy choices M_1..M_N."""

    model_config = ConfigDict(frozen=True)

    steps: Tuple[Strategy, ...]

    @field_validator("steps")
    @classmethod
    def _non_empty(cls, steps):
        if len(steps) < 1:
            raise InvalidParameterError("a measurement sequence needs at least one round")
        return steps

    @classmethod
    def parse(cls, text: str) -> "MeasurementSequence":
        """
        Parse a 0/1 string such as "1101" or "1,1,0,1".

        Raises:
            SequenceParseError: at the first character that is not 0, 1, a comma or whitespace
        """
        steps = []
        for position, char in enumerate(text):
            if char in "01":
                steps.append(Strategy(int(char)))
            elif not (char.isspace() or char == ","):
                raise SequenceParseError(text, position)
        if not steps:
            raise InvalidParameterError(f"sequence {text!r} contains no measurements")
        return cls(steps=tuple(steps))

    @classmethod
    def from_index(cls, index: int, n_rounds: int) -> "MeasurementSequence":
        """Sequence whose 0/1 string is the n_rounds-bit binary form of index (first round = MSB)."""
        return cls.parse(format(index, f"0{n_rounds}b"))

    def to_string(self) -> str:
        return "".join(str(int(s)) for s in self.steps)

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def um_fraction(self) -> float:
        return sum(1 for s in self.steps if s is Strategy.UM) / len(self.steps)


class StepRecord(BaseModel):
    """Observables right after round `step`; t is the start time of that round."""

    model_config = ConfigDict(frozen=True)

    step: int
    strategy: Strategy
    tau: float
    t: float
    nbar: float
    F: float
    Pg: float
    C: float


class CoolingTrace(BaseModel):
    """Per-round record of a sequence run."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    sequence: MeasurementSequence
    nbar_th: float
    records: List[StepRecord]
    clamped: bool = False
    final_state: Optional[PopulationState] = Field(default=None, exclude=True, repr=False)

    @property
    def intervals(self) -> List[float]:
        return [r.tau for r in self.records]

    @property
    def final(self) -> StepRecord:
        return self.records[-1]

    @property
    def summed_C(self) -> float:
        total = 0.0
        for r in self.records:
            total += r.C
        return total

    def summary(self) -> Dict:
        last = self.final
        return {
            "sequence": self.sequence.to_string(),
            "final_nbar": last.nbar,
            "final_F": last.F,
            "final_Pg": last.Pg,
            "final_C": last.C,
            "nbar_th": self.nbar_th,
            "summed_C": self.summed_C,
            "um_fraction": self.sequence.um_fraction,
            "total_time": last.t + last.tau,
            "clamped": self.clamped,
        }


def clamp_nbar(nbar: float) -> Tuple[float, bool]:
    """Floor nbar at 1e-300 before taking its logarithm; second item flags a clamp."""
    if nbar <= NBAR_FLOOR:
        return NBAR_FLOOR, True
    return nbar, False


def cooperative_performance(nbar_th: float, nbar: float, F: float, Pg: float) -> float:
    """
    Cooperative cooling performance C = F * P_g * log10(nbar_th / nbar).

    Args:
        nbar_th: Average population of the initial thermal state
        nbar: Current average population
        F: Ground-state fidelity p_0
        Pg: Cumulative success probability

    Returns:
        C, negative when the resonator was heated
    """
    if not nbar_th > 0:
        raise InvalidParameterError(f"initial average population must be positive, got {nbar_th}")
    nbar, clamped = clamp_nbar(nbar)
    if clamped:
        logger.warning("average population clamped to %.0e before the logarithm", NBAR_FLOOR)
    return F * Pg * math.log10(nbar_th / nbar)


def observe(state: PopulationState, nbar_th: float) -> Tuple[float, float, float, float, bool]:
    nbar = avg_population(state)
    fidelity = ground_fidelity(state)
    clamped = nbar <= NBAR_FLOOR
    return nbar, fidelity, state.survival, cooperative_performance(nbar_th, nbar, fidelity, state.survival), clamped


def run_sequence(
    initial: PopulationState,
    seq: MeasurementSequence,
    params: ModelParams,
    intervals: Optional[Sequence[float]] = None,
) -> CoolingTrace:
    """
    Run a measurement sequence from an initial state.

    Args:
        initial: Starting populations (usually thermal)
        seq: Strategies per round
        params: Model parameters
        intervals: Replay these tau values instead of the per-round optimal ones

    Returns:
        CoolingTrace with one record per round

    Raises:
        CoolingError: physics errors, with the failing round attached as `step`
    """
    if intervals is not None and len(intervals) != len(seq):
        raise InvalidParameterError(f"{len(intervals)} intervals supplied for {len(seq)} rounds")

    nbar_th = avg_population(initial)
    state = initial
    elapsed = 0.0
    clamped_any = False
    records = []

    for i, strategy in enumerate(seq.steps, start=1):
        try:
            tau = intervals[i - 1] if intervals is not None else optimal_interval(strategy, state, params).tau
            state = apply_measurement(strategy, state, tau, params)
            nbar, fidelity, survival, perf, clamped = observe(state, nbar_th)
        except CoolingError as exc:
            raise exc.with_step(i)
        clamped_any = clamped_any or clamped
        records.append(
            StepRecord(step=i, strategy=strategy, tau=tau, t=elapsed, nbar=nbar, F=fidelity, Pg=survival, C=perf)
        )
        logger.debug("round %d %s tau=%.6g nbar=%.6g F=%.6g Pg=%.6g C=%.6g", i, strategy.name, tau, nbar, fidelity, survival, perf)
        elapsed += tau

    return CoolingTrace(sequence=seq, nbar_th=nbar_th, records=records, clamped=clamped_any, final_state=state)


def plan_intervals(initial: PopulationState, seq: MeasurementSequence, params: ModelParams) -> List[float]:
    """Interval schedule tau_1..tau_N from population dynamics alone, ahead of any replay."""
    state = initial
    schedule = []
    for i, strategy in enumerate(seq.steps, start=1):
        try:
            tau = optimal_interval(strategy, state, params).tau
            state = apply_measurement(strategy, state, tau, params)
        except CoolingError as exc:
            raise exc.with_step(i)
        schedule.append(tau)
    return schedule


_PATTERN_RE = re.compile(r"^S_(u|c|\d+)$")


def make_pattern(kind: str, n_rounds: int, k: Optional[int] = None, um_run: int = 1) -> MeasurementSequence:
    """
    Named sequence families.

    Args:
        kind: "S_u" (all UM), "S_c" (all CM), "S_k" with k given, or "S_<k>" such as "S_2"
        n_rounds: Sequence length N
        k: CM block length for "S_k"
        um_run: UM rounds between CM blocks

    Returns:
        S_k repeats k ones then um_run zeros, truncated to N (partial trailing blocks kept)
    """
    if n_rounds < 1:
        raise InvalidParameterError(f"sequence length must be at least 1, got {n_rounds}")
    match = _PATTERN_RE.match(kind)
    if kind == "S_k":
        if k is None:
            raise InvalidParameterError("pattern S_k needs k")
    elif match is None:
        raise InvalidParameterError(f"unknown pattern {kind!r}; expected S_u, S_c, S_k or S_<k>")
    elif match.group(1) == "u":
        return MeasurementSequence(steps=(Strategy.UM,) * n_rounds)
    elif match.group(1) == "c":
        return MeasurementSequence(steps=(Strategy.CM,) * n_rounds)
    else:
        k = int(match.group(1))

    if k < 1:
        raise InvalidParameterError(f"CM block length k must be at least 1, got {k}")
    if um_run < 1:
        raise InvalidParameterError(f"UM run length must be at least 1, got {um_run}")
    block = (Strategy.CM,) * k + (Strategy.UM,) * um_run
    steps = tuple(block[i % len(block)] for i in range(n_rounds))
    return MeasurementSequence(steps=steps)
