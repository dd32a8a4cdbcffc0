"""Check reports and their JSON/CSV serialization.

Every verification routine returns a :class:`CheckReport`; the CLI
aggregates them into a master JSON report (schema version 1) plus
plot-ready CSV series.  Serialization is deterministic: keys are sorted
and floats use repr, so identical runs produce identical bytes apart
from the timestamp field.
"""

import csv
import json
from dataclasses import dataclass, field


@dataclass
class CheckReport:
    """Outcome of one named inequality/identity check.

    ``slices`` holds per-slice rows with keys slice_time, max_violation,
    tolerance and pass.  ``status`` is "ok", "refused" (a stated
    hypothesis failed and the check declined to run) or "flagged"
    (ran, but with a caveat recorded in notes).
    """

    check: str
    passed: bool
    tolerance: float
    max_violation: float
    slices: list = field(default_factory=list)
    refinement_order: float = None
    status: str = "ok"
    notes: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "check": self.check,
            "pass": bool(self.passed),
            "tolerance": _jsonable(self.tolerance),
            "max_violation": _jsonable(self.max_violation),
            "refinement_order": _jsonable(self.refinement_order),
            "status": self.status,
            "slices": [
                {k: _jsonable(v) for k, v in row.items()} for row in self.slices
            ],
            "notes": {k: _jsonable(v) for k, v in sorted(self.notes.items())},
        }


def _jsonable(value):
    import numpy as np

    if value is None:
        return None
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if v != v:
            return "nan"
        if v == float("inf"):
            return "inf"
        if v == float("-inf"):
            return "-inf"
        return v
    if isinstance(value, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in sorted(value.items())}
    return str(value)


def slice_row(slice_time, max_violation, tolerance):
    return {
        "slice_time": float(slice_time),
        "max_violation": float(max_violation),
        "tolerance": float(tolerance),
        "pass": bool(max_violation <= tolerance),
    }


def write_master_report(path, scenario_name, reports, timestamp, extra=None):
    doc = {
        "schema": 1,
        "scenario": scenario_name,
        "timestamp": timestamp,
        "all_passed": all(r.passed for r in reports),
        "checks": [r.to_dict() for r in reports],
    }
    if extra:
        doc.update({k: _jsonable(v) for k, v in extra.items()})
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def write_series_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])
