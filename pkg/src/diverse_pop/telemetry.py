"""JSONL snapshot telemetry and its schema."""

from __future__ import annotations

import json
from typing import IO

import jsonschema

from .metrics import REGION_NAMES, PotentialSnapshot, RegionParams
from .protocol import Configuration, Observer, WeightTable

SNAPSHOT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "diverse_pop snapshot",
    "type": "object",
    "required": ["t", "parallel_t", "phi", "psi", "sigma_sq", "colours", "err", "regions"],
    "additionalProperties": False,
    "properties": {
        "t": {"type": "integer", "minimum": 0, "description": "interactions (ticks) so far"},
        "parallel_t": {"type": "number", "minimum": 0, "description": "t / n, in rounds"},
        "phi": {"type": "number", "minimum": 0},
        "psi": {"type": "number", "minimum": 0},
        "sigma_sq": {"type": "number", "minimum": 0},
        "colours": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "err": {"type": "array", "items": {"type": "number", "minimum": 0}},
        "regions": {
            "type": "object",
            "required": list(REGION_NAMES),
            "additionalProperties": False,
            "properties": {name: {"type": "boolean"} for name in REGION_NAMES},
            "description": "region membership; logarithms (E_hat included) are natural",
        },
    },
}

_validator = jsonschema.Draft202012Validator(SNAPSHOT_SCHEMA)


def validate_record(record: dict):
    _validator.validate(record)
    if len(record["colours"]) != len(record["err"]):
        raise jsonschema.ValidationError("colours and err differ in length")


def dumps(record: dict) -> str:
    return json.dumps(record, separators=(",", ":"))


class TelemetryWriter(Observer):
    """Takes a :class:`PotentialSnapshot` every ``every`` ticks, optionally streaming JSONL."""

    def __init__(self, every: int, weights: WeightTable, params: RegionParams = RegionParams(),
                 stream: IO[str] | None = None):
        self.every = every
        self.weights = weights
        self.params = params
        self.stream = stream
        self.snapshots: list[PotentialSnapshot] = []

    def weights_changed(self, weights: WeightTable):
        self.weights = weights

    def __call__(self, config: Configuration):
        snap = PotentialSnapshot.take(config, self.weights, self.params)
        self.snapshots.append(snap)
        if self.stream is not None:
            self.stream.write(dumps(snap.to_record()) + "\n")
