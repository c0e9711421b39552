"""Trajectory and estimation logs: the JSON Lines interchange format.

TrajectoryLog rows carry exactly the fields
    t, x, y, v, theta, delta, accel, xddot, yddot, z1, z2, z3
and EstimationLog rows carry
    t, est_mean, weights, lat_err, comp_means.
Floats survive a save/load round trip bit-exactly (shortest-repr JSON).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

TRAJECTORY_FIELDS = (
    "t", "x", "y", "v", "theta", "delta", "accel",
    "xddot", "yddot", "z1", "z2", "z3",
)


@dataclass
class TrajectoryLog:
    """Column-oriented time-stamped record of truth, commands, inputs, and sensors."""

    columns: dict[str, list[float]] = field(
        default_factory=lambda: {name: [] for name in TRAJECTORY_FIELDS}
    )

    def __len__(self) -> int:
        return len(self.columns["t"])

    def append(self, **row: float) -> None:
        if set(row) != set(TRAJECTORY_FIELDS):
            missing = set(TRAJECTORY_FIELDS) - set(row)
            extra = set(row) - set(TRAJECTORY_FIELDS)
            raise ValueError(f"bad row fields: missing={missing} extra={extra}")
        for key, value in row.items():
            value = float(value)
            if not math.isfinite(value):
                raise ValueError(f"non-finite value for {key!r}")
            self.columns[key].append(value)

    def __getitem__(self, name: str) -> np.ndarray:
        return np.asarray(self.columns[name])

    def row(self, k: int) -> dict[str, float]:
        return {name: self.columns[name][k] for name in TRAJECTORY_FIELDS}

    def save(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            for k in range(len(self)):
                fh.write(json.dumps(self.row(k)) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "TrajectoryLog":
        log = cls()
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if line:
                    log.append(**json.loads(line))
        return log


@dataclass
class EstimationRecord:
    t: float
    est_mean: list[float]
    weights: list[float]
    lat_err: float
    comp_means: list[list[float]]

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "est_mean": self.est_mean,
            "weights": self.weights,
            "lat_err": self.lat_err,
            "comp_means": self.comp_means,
        }


@dataclass
class EstimationLog:
    records: list[EstimationRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def append(self, record: EstimationRecord) -> None:
        self.records.append(record)

    @property
    def t(self) -> np.ndarray:
        return np.array([r.t for r in self.records])

    @property
    def lat_err(self) -> np.ndarray:
        return np.array([r.lat_err for r in self.records])

    @property
    def weights(self) -> np.ndarray:
        return np.array([r.weights for r in self.records])

    @property
    def est_means(self) -> np.ndarray:
        return np.array([r.est_mean for r in self.records])

    def save(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            for record in self.records:
                fh.write(json.dumps(record.to_dict()) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "EstimationLog":
        log = cls()
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if line:
                    d = json.loads(line)
                    log.append(
                        EstimationRecord(
                            t=d["t"],
                            est_mean=d["est_mean"],
                            weights=d["weights"],
                            lat_err=d["lat_err"],
                            comp_means=d["comp_means"],
                        )
                    )
        return log
