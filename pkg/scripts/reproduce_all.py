#!/usr/bin/env python3
"""Regenerate the data behind every figure (interval scan, pattern comparison, temperature trend)."""

import sys
import json
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent.parent))

from app.config import load_config
from app.errors import CoolingError
from app.experiments import ExperimentRunner
from app.log import configure_logging

if __name__ == "__main__":
    config_path = Path(sys.argv[1]) if len(sys.argv) > 1 else None
    config = load_config(config_path)
    configure_logging(config.log_level, Path(config.out_dir) / "run.log")
    runner = ExperimentRunner(config)

    print(f"🚀 Reproducing all figures into {config.out_dir}/ (seed {config.seed})\n")
    results = {}
    for figure in ("fig1", "fig3", "fig4"):
        try:
            results[figure] = runner.reproduce(figure)
            print(f"✅ {figure} done")
        except CoolingError as e:
            print(f"❌ {figure} failed: {e}")
            sys.exit(e.exit_code)

    fig4 = results["fig4"]
    print("\nTemperature trend:")
    print(f"  final C decreasing with T: {fig4['final_C_monotone_decreasing']}")
    print(f"  UM fraction non-decreasing with T: {fig4['um_fraction_non_decreasing']}")
    print(json.dumps(results["fig3"]["summaries"], indent=2))
