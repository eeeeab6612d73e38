"""Experiment runner behind the CLI: tau scans, sequence runs, searches, training and figure data."""

import logging
import math
import time
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
from tqdm import tqdm

from app.config import RunConfig
from app.errors import CheckpointError, ConfigError
from app.export import ResultWriter
from app.measurement import apply_um, approx_nbar_um, default_tau_grid, numeric_tau_opt_um, scan_um_tau, tau_opt_um
from app.physics import avg_population
from app.ppo import TrainingResult, generate_sequence, load_policy, save_policy, train
from app.search import exhaustive_best, greedy_baseline, report_frame_rows
from app.sequence import CoolingTrace, MeasurementSequence, make_pattern, run_sequence

logger = logging.getLogger(__name__)

FIG3_PATTERNS = ("S_u", "S_c", "S_1", "S_2", "S_4")


def _t_label(temperature: float) -> str:
    return f"T{temperature:g}K"


class ExperimentRunner:
    """Runs one command per method and writes its artifacts below `out_dir`."""

    def __init__(self, config: RunConfig, out_dir: Optional[Path] = None):
        self.config = config
        self.out_dir = Path(out_dir or config.out_dir)
        self.writer = ResultWriter(self.out_dir, config.resolved())
        self.params = config.model_params()

    def _sub(self, name: str) -> "ExperimentRunner":
        return ExperimentRunner(self.config, self.out_dir / name)

    def scan_tau(self) -> Dict:
        """
        Exact single-UM population over a tau grid for every configured temperature.

        Returns:
            {
                'status': 'success',
                'files': [...],
                'markers': {T: {...}}
            }
        """
        cfg = self.config
        grid = default_tau_grid(cfg.tau_max, cfg.grid_points)
        files: List[str] = []
        markers: Dict[str, Dict] = {}

        for temperature in tqdm(cfg.temperatures, desc="scan-tau", disable=not cfg.show_progress):
            state = cfg.initial_state(temperature, scan=True)
            logger.info("scanning T=%g K (cutoff %d)", temperature, state.n_cutoff)
            nbar = scan_um_tau(state, self.params, grid)
            frame = pd.DataFrame({"tau": grid, "nbar": nbar})
            if self.params.delta == 0.0:
                frame["nbar_approx"] = approx_nbar_um(state, grid, self.params)
            files.append(str(self.writer.write_csv(f"scan_tau_{_t_label(temperature)}.csv", frame)))

            analytic = tau_opt_um(state, self.params).tau
            nbar_analytic = avg_population(apply_um(state, analytic, self.params))
            numeric = numeric_tau_opt_um(state, self.params, grid)
            markers[f"{temperature:g}"] = {
                "temperature": temperature,
                "nbar_th": avg_population(state),
                "tau_opt_analytic": analytic,
                "nbar_at_analytic": nbar_analytic,
                "tau_opt_numeric": numeric.tau,
                "nbar_at_numeric": numeric.nbar_after,
                "relative_gap": (nbar_analytic - numeric.nbar_after) / numeric.nbar_after,
                "cutoff": state.n_cutoff,
            }

        files.append(str(self.writer.write_json("scan_tau_markers.json", {"markers": markers})))
        return {"status": "success", "files": files, "markers": markers}

    def _resolve_sequence(
        self,
        pattern: Optional[str],
        sequence: Optional[str],
        policy_path: Optional[str],
    ):
        chosen = [s for s in (pattern, sequence, policy_path) if s is not None]
        if len(chosen) != 1:
            raise ConfigError("give exactly one of pattern, sequence or policy_path")
        if pattern is not None:
            return make_pattern(pattern, self.config.n_rounds, k=self.config.k), pattern
        if sequence is not None:
            return MeasurementSequence.parse(sequence), "sequence"
        return None, "policy"

    def simulate(
        self,
        pattern: Optional[str] = None,
        sequence: Optional[str] = None,
        policy_path: Optional[str] = None,
    ) -> Dict:
        """Run one sequence from the thermal state and write its trace and summary."""
        cfg = self.config
        initial = cfg.initial_state()
        seq, label = self._resolve_sequence(pattern, sequence, policy_path)
        if seq is None:
            policy, _ = load_policy(Path(policy_path))
            trace = generate_sequence(policy, initial, self.params, cfg.n_rounds).trace
        else:
            trace = run_sequence(initial, seq, self.params)
        files = self.writer.write_trace(trace, f"trace_{label}")
        logger.info("%s: final C %.4f, nbar %.4g", label, trace.final.C, trace.final.nbar)
        return {"status": "success", "summary": trace.summary(), "files": files}

    def exhaustive(self) -> Dict:
        cfg = self.config
        initial = cfg.initial_state()
        started = time.perf_counter()
        report = exhaustive_best(
            initial,
            cfg.n_rounds,
            self.params,
            metric=cfg.metric,
            top_k=cfg.top_k,
            guard=cfg.search_guard,
            override_guard=cfg.override_guard,
            threads=cfg.threads,
            show_progress=cfg.show_progress,
        )
        wall_time = time.perf_counter() - started
        # wall time stays out of the files so reruns are byte-identical
        logger.info("exhaustive N=%d finished in %.2f s, best %s C=%.6f", cfg.n_rounds, wall_time, report.best_sequence.to_string(), report.best_C)

        json_path = self.writer.write_json("exhaustive_report.json", report.model_dump(mode="json"))
        csv_path = self.writer.write_csv("exhaustive_top.csv", pd.DataFrame(report_frame_rows(report)))
        return {
            "status": "success",
            "best_sequence": report.best_sequence.to_string(),
            "best_C": report.best_C,
            "evaluations": report.evaluations,
            "excluded": report.excluded,
            "wall_time_s": wall_time,
            "files": [str(json_path), str(csv_path)],
        }

    def greedy(self) -> Dict:
        cfg = self.config
        report = greedy_baseline(cfg.initial_state(), cfg.n_rounds, self.params, metric=cfg.metric)
        path = self.writer.write_json("greedy_report.json", report.model_dump(mode="json"))
        return {
            "status": "success",
            "best_sequence": report.best_sequence.to_string(),
            "best_C": report.best_C,
            "files": [str(path)],
        }

    def _train_one(self, temperature: Optional[float], stem: str) -> Dict:
        cfg = self.config
        initial = cfg.initial_state(temperature)
        result: TrainingResult = train(cfg.env_config(initial), cfg.ppo, seed=cfg.seed, show_progress=cfg.show_progress)

        curve = pd.DataFrame([point.model_dump() for point in result.curve])
        curve_path = self.writer.write_csv(f"learning_curve_{stem}.csv", curve)
        policy_path = save_policy(
            self.out_dir / f"policy_{stem}.json",
            result.policy,
            cfg.ppo,
            metadata={
                "seed": cfg.seed,
                "temperature": temperature if temperature is not None else cfg.temperature,
                "x": initial.thermal_x,
                "n_rounds": cfg.n_rounds,
                "iterations": result.iterations,
                "converged": result.converged,
                "best_C": result.best_C,
                "best_sequence": result.best_sequence,
            },
        )
        return {
            "status": "success",
            "converged": result.converged,
            "iterations": result.iterations,
            "best_C": result.best_C,
            "best_sequence": result.best_sequence,
            "policy_path": str(policy_path),
            "files": [str(curve_path), str(policy_path)],
        }

    def train(self) -> Dict:
        """Train one policy at the configured temperature (or x)."""
        label = _t_label(self.config.temperature) if self.config.temperature is not None else f"x{self.config.x:g}"
        return self._train_one(None, label)

    def generate(self, policy_path: Optional[str] = None) -> Dict:
        """Greedy sequence from a saved policy, replayed and exported as trace_opt."""
        path = policy_path or self.config.policy_path
        if path is None:
            raise CheckpointError("generate needs a policy checkpoint (--policy or policy_path)")
        policy, _ = load_policy(Path(path))
        generated = generate_sequence(policy, self.config.initial_state(), self.params, self.config.n_rounds)
        files = self.writer.write_trace(generated.trace, "trace_opt")
        return {
            "status": "success",
            "sequence": generated.sequence.to_string(),
            "intervals": generated.intervals,
            "summary": generated.trace.summary(),
            "files": files,
        }

    def reproduce(self, figure: str) -> Dict:
        """Every data file behind one figure, in out_dir/<figure>/."""
        handlers = {"fig1": self._fig1, "fig3": self._fig3, "fig4": self._fig4}
        if figure not in handlers:
            raise ConfigError(f"unknown figure {figure!r}; expected one of {sorted(handlers)}")
        logger.info("reproducing %s into %s", figure, self.out_dir / figure)
        return handlers[figure](self._sub(figure))

    @staticmethod
    def _fig1(runner: "ExperimentRunner") -> Dict:
        return runner.scan_tau()

    def _optimal_trace(self, runner: "ExperimentRunner", temperature: Optional[float], stem: str, policy_file: Optional[Path]) -> CoolingTrace:
        cfg = self.config
        if policy_file is None:
            trained = runner._train_one(temperature, stem)
            policy_file = Path(trained["policy_path"])
        elif not policy_file.exists():
            raise CheckpointError(f"policy checkpoint not found: {policy_file}")
        policy, _ = load_policy(policy_file)
        return generate_sequence(policy, cfg.initial_state(temperature), self.params, cfg.n_rounds).trace

    def _fig3(self, runner: "ExperimentRunner") -> Dict:
        cfg = self.config
        initial = cfg.initial_state()
        summaries = {}
        files = []
        for name in FIG3_PATTERNS:
            trace = run_sequence(initial, make_pattern(name, cfg.n_rounds), self.params)
            files.append(runner.writer.write_trace(trace, f"trace_{name}"))
            summaries[name] = trace.summary()

        policy_file = Path(cfg.policy_path) if cfg.policy_path else None
        trace = self._optimal_trace(runner, None, "S_opt", policy_file)
        files.append(runner.writer.write_trace(trace, "trace_S_opt"))
        summaries["S_opt"] = trace.summary()

        files.append(str(runner.writer.write_json("fig3_summary.json", {"sequences": summaries})))
        return {"status": "success", "summaries": summaries, "files": files}

    def _fig4(self, runner: "ExperimentRunner") -> Dict:
        cfg = self.config
        rows = []
        files = []
        for temperature in cfg.fig4_temperatures:
            label = _t_label(temperature)
            policy_file = Path(cfg.policy_path) / f"policy_{label}.json" if cfg.policy_path else None
            trace = self._optimal_trace(runner, temperature, label, policy_file)
            files.append(runner.writer.write_trace(trace, f"trace_{label}"))
            last = trace.final
            rows.append(
                {
                    "temperature": temperature,
                    "sequence": trace.sequence.to_string(),
                    "final_C": last.C,
                    "nbar_th": trace.nbar_th,
                    "final_nbar": last.nbar,
                    "nbar_reduction_decades": math.log10(trace.nbar_th / max(last.nbar, 1e-300)),
                    "final_Pg": last.Pg,
                    "um_fraction": trace.sequence.um_fraction,
                    "first_action": int(trace.sequence.steps[0]),
                }
            )

        final_C = np.array([r["final_C"] for r in rows])
        um_fraction = np.array([r["um_fraction"] for r in rows])
        summary = {
            "temperatures": rows,
            "final_C_monotone_decreasing": bool(np.all(np.diff(final_C) < 0)),
            "um_fraction_non_decreasing": bool(np.all(np.diff(um_fraction) >= 0)),
        }
        if not summary["final_C_monotone_decreasing"]:
            logger.warning("final C is not monotonically decreasing with temperature: %s", final_C.tolist())
        files.append(str(runner.writer.write_json("fig4_summary.json", summary)))
        files.append(str(runner.writer.write_csv("fig4_summary.csv", pd.DataFrame(rows))))
        return {"status": "success", **summary, "files": files}
