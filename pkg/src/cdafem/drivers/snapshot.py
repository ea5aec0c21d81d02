"""
Binary trajectory files.

Layout: an ASCII line ``cda-snap v1``, one fixed-width key=value line
(space fingerprint, time step, step count), then one record of ``n_dofs``
little-endian float64 values per stored state. Record 0 is the initial
state, so a file with ``steps = N`` holds ``N + 1`` records.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

MAGIC = "cda-snap v1"
_FIELDS = "n_dofs={n_dofs:d} degree={degree:d} components={components:d} mesh={mesh} dt={dt:.17e} t0={t0:.17e} steps={steps:012d}\n"


class SnapshotError(ValueError):
    pass


def space_fingerprint(space) -> dict:
    return {
        "n_dofs": space.n_dofs,
        "degree": space.degree,
        "components": space.components,
        "mesh": space.mesh.fingerprint,
    }


class SnapshotWriter:
    """Append states to a trajectory file; the step count is patched on close."""

    def __init__(self, path, space, dt: float, t0: float = 0.0):
        self.path = os.fspath(path)
        self.fp = space_fingerprint(space)
        self.dt = float(dt)
        self.t0 = float(t0)
        self.records = 0
        self._fh = open(self.path, "wb")
        self._fh.write(self._header(0))

    def _header(self, steps: int) -> bytes:
        line = _FIELDS.format(dt=self.dt, t0=self.t0, steps=steps, **self.fp)
        return (MAGIC + "\n" + line).encode("ascii")

    def write(self, w: np.ndarray) -> None:
        w = np.asarray(w, dtype="<f8")
        if w.shape != (self.fp["n_dofs"],):
            raise SnapshotError(f"state has shape {w.shape}, expected ({self.fp['n_dofs']},)")
        self._fh.write(w.tobytes())
        self.records += 1

    def close(self) -> None:
        if self._fh is None:
            return
        self._fh.seek(0)
        self._fh.write(self._header(max(self.records - 1, 0)))
        self._fh.close()
        self._fh = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


@dataclass(frozen=True)
class Trajectory:
    path: str
    n_dofs: int
    degree: int
    components: int
    mesh: str
    dt: float
    t0: float
    steps: int
    states: np.ndarray  # (steps + 1, n_dofs), memory-mapped

    def state(self, n: int) -> np.ndarray:
        if n < 0 or n > self.steps:
            raise SnapshotError(f"trajectory exhausted: step {n} requested, {self.steps} stored")
        return np.asarray(self.states[n])

    def time(self, n: int) -> float:
        return self.t0 + n * self.dt


def read_snapshot(path, space=None) -> Trajectory:
    """Open a trajectory, checking it against ``space`` when given."""
    path = os.fspath(path)
    with open(path, "rb") as fh:
        magic = fh.readline().decode("ascii").strip()
        if magic != MAGIC:
            raise SnapshotError(f"{path}: not a snapshot file (header {magic!r})")
        fields = dict(kv.split("=", 1) for kv in fh.readline().decode("ascii").split())
        offset = fh.tell()
    meta = {
        "n_dofs": int(fields["n_dofs"]),
        "degree": int(fields["degree"]),
        "components": int(fields["components"]),
        "mesh": fields["mesh"],
    }
    if space is not None:
        want = space_fingerprint(space)
        if want != meta:
            raise SnapshotError(f"{path}: space fingerprint {meta} does not match {want}")
    steps = int(fields["steps"])
    states = np.memmap(path, dtype="<f8", mode="r", offset=offset, shape=(steps + 1, meta["n_dofs"]))
    return Trajectory(path=path, dt=float(fields["dt"]), t0=float(fields["t0"]), steps=steps,
                      states=states, **meta)
