"""CSV and JSON result files with the resolved run config embedded."""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional

import pandas as pd

from app import __version__
from app.sequence import CoolingTrace

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ["step", "strategy", "tau", "t", "nbar", "F", "Pg", "C"]


def trace_frame(trace: CoolingTrace) -> pd.DataFrame:
    """Trace records as a table with the fixed column order step,strategy,tau,t,nbar,F,Pg,C."""
    rows = [record.model_dump(mode="json") for record in trace.records]
    return pd.DataFrame(rows, columns=TRACE_COLUMNS)


class ResultWriter:
    """Write run artifacts into one output directory."""

    def __init__(self, out_dir: Path, config: Optional[Dict[str, Any]] = None):
        """
        Initialize the writer.

        Args:
            out_dir: Directory receiving every file of the run (created if missing)
            config: Resolved run config, embedded in every file
        """
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.config = config or {}

    def _path(self, name: str) -> Path:
        path = self.out_dir / name
        path.parent.mkdir(parents=True, exist_ok=True)
        return path

    def write_json(self, name: str, payload: Dict[str, Any]) -> Path:
        """
        Write a JSON document with "version" and "config" keys added.

        Returns:
            Path of the written file
        """
        document = {"version": __version__, "config": self.config, **payload}
        path = self._path(name)
        path.write_text(json.dumps(document, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        logger.info("wrote %s", path)
        return path

    def write_csv(self, name: str, frame: pd.DataFrame) -> Path:
        """Write a table preceded by '# '-comment lines carrying the version and config."""
        path = self._path(name)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(f"# coolopt {__version__}\n")
            fh.write(f"# config: {json.dumps(self.config, sort_keys=True)}\n")
            frame.to_csv(fh, index=False, lineterminator="\n")
        logger.info("wrote %s", path)
        return path

    def write_trace(self, trace: CoolingTrace, stem: str) -> Dict[str, str]:
        """
        Export a trace as <stem>.csv plus a <stem>_summary.json.

        Returns:
            {'csv': path, 'summary': path}
        """
        csv_path = self.write_csv(f"{stem}.csv", trace_frame(trace))
        json_path = self.write_json(f"{stem}_summary.json", trace.summary())
        return {"csv": str(csv_path), "summary": str(json_path)}
