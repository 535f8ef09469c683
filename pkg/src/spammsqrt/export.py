"""Run histories, volume logs and product representations on disk."""
from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import qtree
from .mmio import read_matrix_market, write_matrix_market
from .precond import ProductRepresentation, Slice
from .spamm import PERFORMED, VolumeLog

HISTORY_COLUMNS = ("k", "t_k", "alpha", "eps", "vol_y", "vol_z", "vol_x")
VOLUME_FORMATS = ("csv", "legacy_vtk_points")


@dataclass
class RunManifest:
    """Config echo, one history row per iteration step, and output paths.

    ``rows`` holds ``(k, t_k, alpha, eps, vol_y, vol_z, vol_x)`` for
    ``k = 1 .. iterations``; the initial state is not a row.
    """

    config: dict = field(default_factory=dict)
    rows: list[tuple] = field(default_factory=list)
    outputs: dict = field(default_factory=dict)

    @classmethod
    def from_history(cls, history, config=None) -> "RunManifest":
        rows = [(h.k, h.t, h.alpha, h.eps, h.volume_fraction("y"),
                 h.volume_fraction("z"), h.volume_fraction("x"))
                for h in history if h.k > 0]
        return cls(dict(config or {}), rows)

    @property
    def iterations(self) -> int:
        return len(self.rows)


def export_history(manifest: RunManifest, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HISTORY_COLUMNS)
        for row in manifest.rows:
            w.writerow([int(row[0])] + [repr(float(v)) for v in row[1:]])


def read_history(path) -> list[tuple]:
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        if tuple(header) != HISTORY_COLUMNS:
            raise ValueError(f"unexpected history header {header}")
        return [(int(r[0]),) + tuple(float(v) for v in r[1:]) for r in rd]


def export_volumes(log: VolumeLog, path, format: str = "csv") -> None:
    if format not in VOLUME_FORMATS:
        raise ValueError(f"format must be one of {VOLUME_FORMATS}")
    if not len(log):
        raise ValueError("empty volume log")
    if format == "csv":
        log.to_csv(path)
        return
    perf = log.boxes(PERFORMED)
    cull = log.boxes("culled")
    boxes = np.concatenate([perf, cull])
    status = np.r_[np.ones(len(perf), int), np.zeros(len(cull), int)]
    # one point per box, at its centre
    centres = boxes[:, :3] + 0.5 * boxes[:, 3:4]
    m = len(boxes)
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\nSpAMM product volumes\nASCII\n")
        fh.write(f"DATASET POLYDATA\nPOINTS {m} double\n")
        np.savetxt(fh, centres, fmt="%.17g")
        fh.write(f"VERTICES {m} {2 * m}\n")
        np.savetxt(fh, np.c_[np.ones(m, int), np.arange(m)], fmt="%d")
        fh.write(f"POINT_DATA {m}\nSCALARS performed int 1\nLOOKUP_TABLE default\n")
        np.savetxt(fh, status, fmt="%d")
        fh.write("SCALARS side int 1\nLOOKUP_TABLE default\n")
        np.savetxt(fh, boxes[:, 3], fmt="%d")


# -- product representations ----------------------------------------------

_MANIFEST = "manifest.json"


def save_representation(rep: ProductRepresentation, directory) -> Path:
    """One Matrix Market file per slice plus an ordered JSON manifest."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, (sl, tau) in enumerate(zip(rep.slices, rep.taus)):
        name = f"slice_{i:02d}.mtx"
        write_matrix_market(d / name, qtree.to_dense(sl.z_factor))
        entries.append({"file": name, "mu": sl.mu, "tau0": sl.tau0, "tau_apply": tau,
                        "iterations": sl.iterations, "converged": sl.converged,
                        "final_t": sl.final_t, "block_size": sl.z_factor.block_size})
    with open(d / _MANIFEST, "w") as fh:
        json.dump({"target": rep.target, "slices": entries}, fh, indent=2)
    return d / _MANIFEST


def load_representation(directory) -> ProductRepresentation:
    d = Path(directory)
    with open(d / _MANIFEST) as fh:
        meta = json.load(fh)
    slices, taus = [], []
    for e in meta["slices"]:
        z = qtree.build(read_matrix_market(d / e["file"]), e["block_size"])
        slices.append(Slice(z, e["tau0"], e["mu"], e["iterations"], e["converged"],
                            e["final_t"]))
        taus.append(e["tau_apply"])
    return ProductRepresentation(slices, taus, meta.get("target", ""))


def write_manifest(manifest: RunManifest, path) -> None:
    with open(path, "w") as fh:
        json.dump(asdict(manifest), fh, indent=2, default=float)


def worker_count() -> int:
    """Worker cap from ``SPAMM_THREADS`` (default 1)."""
    raw = os.environ.get("SPAMM_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"SPAMM_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ValueError("SPAMM_THREADS must be >= 1")
    return n
