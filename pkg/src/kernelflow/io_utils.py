"""CSV/JSON emission with stable schemas and byte-deterministic output.

One row per (time, layer, component, estimator): columns
``t, ell, a, b, c, d, estimator, value, se``.  Kernel-valued estimators
leave c and d empty; pair-operator estimators fill all four point indices.
Floats are written with shortest round-trip repr, so identical runs produce
identical bytes.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .errors import DataError

CSV_COLUMNS = ("t", "ell", "a", "b", "c", "d", "estimator", "value", "se")


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


@dataclass
class EstimateRow:
    t: float
    ell: int
    comp: tuple[int, ...]
    estimator: str
    value: float
    se: float | None = None

    def as_record(self) -> dict:
        a, b = self.comp[0], self.comp[1]
        c = self.comp[2] if len(self.comp) > 2 else None
        d = self.comp[3] if len(self.comp) > 3 else None
        return {
            "t": _fmt(self.t),
            "ell": str(self.ell),
            "a": str(a),
            "b": str(b),
            "c": "" if c is None else str(c),
            "d": "" if d is None else str(d),
            "estimator": self.estimator,
            "value": _fmt(self.value),
            "se": _fmt(self.se),
        }


def write_rows(path: str | Path, rows: list[EstimateRow]) -> None:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row.as_record())
    Path(path).write_text(buf.getvalue())


def read_rows(path: str | Path) -> list[EstimateRow]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing estimates file {path}")
    out = []
    with path.open() as fh:
        for rec in csv.DictReader(fh):
            comp = (int(rec["a"]), int(rec["b"]))
            if rec["c"] != "":
                comp += (int(rec["c"]), int(rec["d"]))
            out.append(
                EstimateRow(
                    t=float(rec["t"]),
                    ell=int(rec["ell"]),
                    comp=comp,
                    estimator=rec["estimator"],
                    value=float(rec["value"]),
                    se=None if rec["se"] == "" else float(rec["se"]),
                )
            )
    return out


class RowTable:
    """Lookup helper over parsed estimate rows."""

    def __init__(self, rows: list[EstimateRow]):
        self.rows = rows
        self._by_est: dict[str, dict[tuple, EstimateRow]] = {}
        for r in rows:
            self._by_est.setdefault(r.estimator, {})[(r.ell, r.comp)] = r

    def estimators(self) -> set[str]:
        return set(self._by_est)

    def get(self, estimator: str, ell: int, comp: tuple) -> EstimateRow:
        try:
            return self._by_est[estimator][(ell, tuple(comp))]
        except KeyError:
            raise DataError(
                f"estimator {estimator!r} at layer {ell}, component {comp} "
                "not present in the run outputs"
            ) from None

    def has(self, estimator: str) -> bool:
        return estimator in self._by_est

    def layers(self, estimator: str) -> list[int]:
        return sorted({ell for (ell, _c) in self._by_est.get(estimator, {})})

    def components(self, estimator: str, ell: int) -> list[tuple]:
        return sorted(c for (l, c) in self._by_est.get(estimator, {}) if l == ell)


def write_manifest(path: str | Path, config_dict: dict, command: str,
                   outputs: list[str]) -> None:
    payload = {
        "code_version": __version__,
        "command": command,
        "config": config_dict,
        "outputs": sorted(outputs),
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def read_manifest(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing manifest {path}")
    return json.loads(path.read_text())
