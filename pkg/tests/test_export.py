import json

import pandas as pd

from app import __version__
from app.export import TRACE_COLUMNS, ResultWriter, trace_frame
from app.sequence import MeasurementSequence, run_sequence


def test_trace_frame_columns(thermal, params):
    trace = run_sequence(thermal, MeasurementSequence.parse("0110"), params)
    frame = trace_frame(trace)
    assert list(frame.columns) == TRACE_COLUMNS
    assert frame["step"].tolist() == [1, 2, 3, 4]
    assert frame["strategy"].tolist() == [0, 1, 1, 0]
    assert frame["C"].tolist() == [r.C for r in trace.records]


def test_writer_embeds_version_and_config(tmp_path):
    writer = ResultWriter(tmp_path / "out", {"seed": 3})
    json_path = writer.write_json("nested/report.json", {"value": 1.5})
    document = json.loads(json_path.read_text(encoding="utf-8"))
    assert document == {"version": __version__, "config": {"seed": 3}, "value": 1.5}

    csv_path = writer.write_csv("table.csv", pd.DataFrame({"a": [1, 2], "b": [0.5, 0.25]}))
    lines = csv_path.read_text(encoding="utf-8").splitlines()
    assert lines == [f"# coolopt {__version__}", '# config: {"seed": 3}', "a,b", "1,0.5", "2,0.25"]


def test_write_trace_returns_both_paths(tmp_path, thermal, params):
    trace = run_sequence(thermal, MeasurementSequence.parse("11"), params)
    files = ResultWriter(tmp_path).write_trace(trace, "trace_x")
    assert files["csv"].endswith("trace_x.csv")
    summary = json.loads(open(files["summary"], encoding="utf-8").read())
    assert summary["sequence"] == "11"
    assert summary["config"] == {}
