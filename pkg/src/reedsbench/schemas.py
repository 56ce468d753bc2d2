"""Versioned JSON schemas for every document the tool emits or accepts."""

from __future__ import annotations

import jsonschema

_INT = {"type": "integer", "minimum": 0}
_NUM = {"type": "number"}
_NULLABLE_STR = {"type": ["string", "null"]}

TIMING = {
    "type": "object",
    "required": ["count", "mean_ns", "std_ns", "min_ns", "max_ns", "p99_ns",
                 "frame_budget_ns", "feasible"],
    "properties": {
        "count": _INT, "mean_ns": _NUM, "std_ns": _NUM, "min_ns": _INT, "max_ns": _INT,
        "p99_ns": _INT, "frame_budget_ns": _NUM, "feasible": {"type": "boolean"},
    },
}

ACCURACY = {
    "type": "object",
    "required": ["task", "metric", "f1", "precision", "recall", "tp", "fp", "fn",
                 "frames_scored", "scoring_schema"],
    "properties": {
        "task": {"type": "string"},
        "metric": {"type": "string"},
        "f1": {"type": "number", "minimum": 0, "maximum": 1},
        "precision": {"type": "number", "minimum": 0, "maximum": 1},
        "recall": {"type": "number", "minimum": 0, "maximum": 1},
        "tp": _INT, "fp": _INT, "fn": _INT, "frames_scored": _INT,
        "unknown_frames": {"type": "array", "items": _INT},
        "per_class": {"type": "object"},
        "scoring_schema": {"const": 1},
    },
}

ENTRY = {
    "type": "object",
    "required": ["algorithm", "task", "preset_id", "status", "failure", "frames_expected",
                 "frames_delivered", "accuracy", "timing"],
    "properties": {
        "algorithm": {"type": "string", "minLength": 1},
        "task": {"type": "string"},
        "preset_id": _INT,
        "status": {"enum": ["ok", "failed"]},
        "failure": _NULLABLE_STR,
        "frames_expected": _INT,
        "frames_delivered": _INT,
        "duplicate_deliveries": _INT,
        "accuracy": {"oneOf": [{"type": "null"}, ACCURACY]},
        "timing": {"oneOf": [
            {"type": "null"},
            {"type": "object", "required": ["harness", "plugin", "source"],
             "properties": {"harness": TIMING, "plugin": TIMING,
                            "source": {"enum": ["harness", "plugin"]}}},
        ]},
    },
}

COUNTERS = {
    "type": "object",
    "required": ["frames_read", "decode_count", "bytes_decoded", "publishes", "results",
                 "failures"],
    "properties": {
        "frames_read": _INT, "decode_count": _INT, "bytes_decoded": _INT,
        "publishes": _INT, "results": _INT, "records_fetched": _INT,
        "failures": {"type": "array", "items": {"type": "string"}},
    },
}

RUN_REPORT = {
    "$id": "reedsbench.run_report/1",
    "type": "object",
    "required": ["schema", "run_id", "complete", "config", "stream", "presets", "entries",
                 "counters"],
    "properties": {
        "schema": {"const": "reedsbench.run_report/1"},
        "run_id": {"type": "string", "minLength": 1},
        "created_at": {"type": "string"},
        "complete": {"type": "boolean"},
        "config": {"type": "object", "required": ["log", "plugins", "presets", "mode"]},
        "stream": {"type": "object"},
        "presets": {"type": "array", "items": {
            "type": "object", "required": ["preset_id", "width", "height", "rate"]}},
        "entries": {"type": "array", "items": ENTRY},
        "counters": COUNTERS,
        "wall_clock_s": _NUM,
    },
}

MODE_SUMMARY = {
    "type": "object",
    "required": ["run_id", "complete", "counters"],
    "properties": {"run_id": {"type": "string"}, "complete": {"type": "boolean"},
                   "counters": COUNTERS, "wall_clock_s": _NUM},
}

COMPARISON = {
    "$id": "reedsbench.comparison/1",
    "type": "object",
    "required": ["schema", "n", "m", "p", "partial", "parallel", "naive", "decode_ratio",
                 "parallel_decode_fraction", "bytes_ratio", "model", "model_agrees"],
    "properties": {
        "schema": {"const": "reedsbench.comparison/1"},
        "n": _INT, "m": _INT, "p": _INT,
        "partial": {"type": "boolean"},
        "parallel": MODE_SUMMARY,
        "naive": MODE_SUMMARY,
        "decode_ratio": {"type": ["number", "null"]},
        "parallel_decode_fraction": _NULLABLE_STR,
        "bytes_ratio": {"type": ["number", "null"]},
        "wall_clock_ratio": {"type": ["number", "null"]},
        "model": {"type": "object"},
        "model_agrees": {"type": "boolean"},
        "reports": {"type": "object"},
    },
}

LEADERBOARD_ENTRY = {
    "$id": "reedsbench.leaderboard_entry/1",
    "type": "object",
    "required": ["algorithm", "run_id", "task", "preset_id", "metric", "accuracy",
                 "mean_ns", "std_ns", "feasible", "submitted_at"],
    "properties": {
        "algorithm": {"type": "string", "minLength": 1},
        "run_id": {"type": "string", "minLength": 1},
        "task": {"type": "string"},
        "preset_id": _INT,
        "metric": {"type": "string"},
        "accuracy": {"type": ["number", "null"]},
        "mean_ns": {"type": ["number", "null"]},
        "std_ns": {"type": ["number", "null"]},
        "feasible": {"type": "boolean"},
        "submitted_at": {"type": "string"},
        "status": {"enum": ["ok", "failed"]},
    },
}

LEADERBOARD = {
    "$id": "reedsbench.leaderboard/1",
    "type": "object",
    "required": ["task", "preset_id", "entries"],
    "properties": {"task": {"type": "string"}, "preset_id": _INT,
                   "entries": {"type": "array", "items": LEADERBOARD_ENTRY}},
}

ERROR = {
    "$id": "reedsbench.error/1",
    "type": "object",
    "required": ["error", "command"],
    "properties": {"error": {"type": "string"}, "command": {"type": "string"}},
}

PLAN = {
    "$id": "reedsbench.plan/1",
    "type": "object",
    "required": ["plan"],
    "properties": {"plan": {"enum": ["savings", "camera", "budget", "dump"]}},
}

LOG_SUMMARY = {
    "$id": "reedsbench.log_summary/1",
    "type": "object",
    "required": ["path", "streams", "record_counts", "size_bytes", "sha256"],
}

VALIDATION = {
    "$id": "reedsbench.validation/1",
    "type": "object",
    "required": ["ok", "violations"],
    "properties": {"ok": {"type": "boolean"},
                   "violations": {"type": "array", "items": {"type": "string"}}},
}

SCHEMAS = {
    "run_report": RUN_REPORT,
    "comparison": COMPARISON,
    "leaderboard_entry": LEADERBOARD_ENTRY,
    "leaderboard": LEADERBOARD,
    "error": ERROR,
    "plan": PLAN,
    "log_summary": LOG_SUMMARY,
    "validation": VALIDATION,
}


class SchemaError(ValueError):
    pass


def validate(doc, schema_name: str) -> None:
    try:
        jsonschema.validate(doc, SCHEMAS[schema_name])
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise SchemaError(f"schema violation at {where}: {exc.message}") from None
