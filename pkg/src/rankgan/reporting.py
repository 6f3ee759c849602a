"""Run-directory layout and CSV writers.

Every CSV is written under a ``.partial`` name and renamed once complete, so
a crashed run leaves clearly marked partial files next to ``config.resolved``.
Floats are written with ``repr`` which round-trips exactly and keeps reruns
byte-identical.
"""

from __future__ import annotations

import csv
import os
from pathlib import Path

import numpy as np

from . import checkpoint
from .config import ExperimentConfig, dumps
from .data import Dataset, save_dataset

PARTIAL = ".partial"


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


class CsvLog:
    """Header-first CSV appended row by row; ``close()`` finalizes the name."""

    def __init__(self, path, columns):
        self.path = Path(path)
        self.tmp = self.path.with_name(self.path.name + PARTIAL)
        self.columns = tuple(columns)
        self._fh = open(self.tmp, "w", newline="", encoding="utf-8")
        self._w = csv.writer(self._fh, lineterminator="\n")
        self._w.writerow(self.columns)
        self._fh.flush()

    def write(self, row) -> None:
        row = tuple(row)
        if len(row) != len(self.columns):
            raise ValueError(f"{self.path.name}: row has {len(row)} fields, expected {len(self.columns)}")
        self._w.writerow([_cell(v) for v in row])
        self._fh.flush()

    def close(self) -> Path:
        self._fh.close()
        os.replace(self.tmp, self.path)
        return self.path

    def abandon(self) -> None:
        """Close without finalizing (the ``.partial`` file stays)."""
        if not self._fh.closed:
            self._fh.close()


def write_csv(path, columns, rows) -> Path:
    log = CsvLog(path, columns)
    try:
        for row in rows:
            log.write(row)
    except BaseException:
        log.abandon()
        raise
    return log.close()


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def _atomic_bytes(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + PARTIAL)
    tmp.write_bytes(data)
    os.replace(tmp, path)


class RunDir:
    """Paths for one run's artifacts."""

    def __init__(self, root):
        self.root = Path(root)

    def prepare(self, cfg: ExperimentConfig) -> "RunDir":
        self.root.mkdir(parents=True, exist_ok=True)
        _atomic_bytes(self.config, dumps(cfg).encode())
        return self

    @property
    def config(self) -> Path:
        return self.root / "config.resolved"

    @property
    def figures(self) -> Path:
        p = self.root / "figures"
        p.mkdir(exist_ok=True)
        return p

    def history(self, stage: int) -> Path:
        return self.root / f"history_stage_{stage}.csv"

    def model(self, stage: int, which: str) -> Path:
        return self.root / f"stage_{stage}_{which}.ckpt"

    def completion(self, stage: int, mask: str) -> Path:
        return self.root / f"completion_stage_{stage}_{mask}.csv"

    def __truediv__(self, name: str) -> Path:
        return self.root / name

    def save_model(self, path: Path, params, spec) -> None:
        header = {"spec": spec.to_dict(), "frozen": params.frozen}
        _atomic_bytes(path, checkpoint.encode("model", header, params.items()))

    def save_dataset(self, ds: Dataset) -> None:
        tmp = self.root / ("dataset.ckpt" + PARTIAL)
        save_dataset(tmp, ds)
        os.replace(tmp, self.root / "dataset.ckpt")

    def partial_files(self) -> list[Path]:
        return sorted(self.root.rglob("*" + PARTIAL))
